"""Calculus of the exponential map on skew-hermitean matrices.

Everything is evaluated in the eigenbasis of the generator: for
``A = V (i diag(lam)) V*`` the operator ``ad_A`` acts on the matrix units
``V E_jk V*`` with eigenvalue ``i (lam_j - lam_k)``, so any analytic function
of ``ad_A`` becomes an entrywise multiplier. Power series appear only in the
tests, as oracles.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .errors import AmbiguousClustering, DimensionError, SingularDerivative
from .matrix import (
    TOL_STRUCT,
    as_square,
    dagger,
    eigh,
    mat_exp,
    require_hermitean,
    require_skew_hermitean,
    require_unitary,
)

CLUSTER_TOL = 1e-7
SING_TOL = 1e-6
TWO_PI = 2.0 * math.pi


def _pair(a, b):
    a = as_square(a, "A")
    b = as_square(b, "B")
    if a.shape != b.shape:
        raise DimensionError(f"dimension mismatch: {a.shape} vs {b.shape}")
    return a, b


def ad(a, b):
    a, b = _pair(a, b)
    return a @ b - b @ a


def Ad(u, a, tol=TOL_STRUCT):
    """Conjugation ``U A U^-1`` with ``U^-1 = U*``."""
    u, a = _pair(u, a)
    require_unitary(u, tol, "U")
    return u @ a @ dagger(u)


def phi(z):
    """``(1 - exp(-z)) / z`` with ``phi(0) = 1``; vectorised over complex ``z``."""
    z = np.asarray(z, dtype=np.complex128)
    small = np.abs(z) < 1e-4
    safe = np.where(small, 1.0, z)
    direct = -np.expm1(-safe) / safe
    # 1 - z/2 + z^2/6 - z^3/24 is accurate to |z|^4/120 < 1e-18 here
    series = 1.0 - z / 2.0 + z * z / 6.0 - z**3 / 24.0
    return np.where(small, series, direct)


def _spectral(a, tol):
    a = require_skew_hermitean(a, tol, "A")
    dec = eigh(-1j * a, tol=max(tol, 1e-12))
    lam = dec.eigenvalues
    return lam, dec.eigenvectors, lam[:, None] - lam[None, :]


def phi_ad(a, b, tol=TOL_STRUCT):
    a, b = _pair(a, b)
    lam, v, gaps = _spectral(a, tol)
    bt = dagger(v) @ b @ v
    return v @ (bt * phi(1j * gaps)) @ dagger(v)


def dexp(a, b, tol=TOL_STRUCT):
    """Derivative of ``exp`` at ``A`` applied to ``B``: ``e^A phi(ad_A) B``."""
    a, b = _pair(a, b)
    require_skew_hermitean(b, tol, "B")
    return mat_exp(a, tol) @ phi_ad(a, b, tol)


def dexp_invert(a, c, sing_tol=SING_TOL, tol=TOL_STRUCT):
    """Solve ``dexp(A, B) = C`` for ``B``.

    Raises
    ------
    SingularDerivative
        If some eigenvalue gap ``g`` of ``-iA`` has ``|phi(i g)| <= sing_tol``,
        i.e. ``g`` is (numerically) a nonzero multiple of ``2 pi``.
    """
    a, c = _pair(a, c)
    lam, v, gaps = _spectral(a, tol)
    mult = phi(1j * gaps)
    mag = np.abs(mult)
    bad = np.argmin(mag)
    if mag.flat[bad] <= sing_tol:
        raise SingularDerivative(gaps.flat[bad], mag.flat[bad])
    ct = dagger(v) @ (dagger(mat_exp(a, tol)) @ c) @ v
    return v @ (ct / mult) @ dagger(v)


def ad_decompose(a, x, tol=TOL_STRUCT):
    """Split ``X = B + [A, D]`` with ``[A, B] = 0``.

    ``B`` keeps the blocks of ``X`` (in the eigenbasis of ``A``) belonging to
    equal eigenvalues, within ``tol``; ``D`` inverts ``ad_A`` on the rest.
    """
    a, x = _pair(a, x)
    lam, v, gaps = _spectral(a, TOL_STRUCT)
    xt = dagger(v) @ x @ v
    same = np.abs(gaps) <= max(tol, 1e-12)
    bt = np.where(same, xt, 0.0)
    denom = np.where(same, 1.0, 1j * gaps)
    dt = np.where(same, 0.0, xt / denom)
    return v @ bt @ dagger(v), v @ dt @ dagger(v)


@dataclass(frozen=True)
class PeriodicSpectralData:
    representatives: np.ndarray
    projectors: tuple
    cluster_tol: float

    def __len__(self):
        return len(self.representatives)

    def exp_i(self):
        """``exp(iA)`` rebuilt from the periodic eigenspaces."""
        out = 0
        for lam, p in zip(self.representatives, self.projectors):
            out = out + np.exp(1j * lam) * p
        return out


def _circular_gap(x, y):
    d = abs(x - y) % TWO_PI
    return min(d, TWO_PI - d)


def periodic_eigenspaces(a, cluster_tol=CLUSTER_TOL, tol=TOL_STRUCT):
    """Group the eigenvalues of hermitean ``A`` modulo ``2 pi``.

    Each cluster gets a representative in ``[0, 2 pi)`` and the orthogonal
    projector onto the sum of its eigenspaces (summed over ``2 pi`` shifts).

    Raises
    ------
    AmbiguousClustering
        When two reduced eigenvalues are closer than ``3 * cluster_tol`` but
        farther apart than ``cluster_tol``: merging or splitting them would be
        a guess.
    """
    a = require_hermitean(a, tol, "A")
    dec = eigh(a, tol)
    n = a.shape[0]
    reduced = np.mod(dec.eigenvalues, TWO_PI)
    order = np.argsort(reduced)
    r = reduced[order]
    gaps = np.diff(np.append(r, r[0] + TWO_PI))
    for g in gaps:
        if cluster_tol < g < 3.0 * cluster_tol:
            raise AmbiguousClustering(f"reduced eigenvalues {g:.3e} apart with cluster_tol {cluster_tol:.1e}")
    split = gaps > cluster_tol
    if not split.any():
        groups = [list(range(n))]
    else:
        # start right after a split point so no cluster straddles the wrap
        start = (int(np.nonzero(split)[0][0]) + 1) % n
        groups, current = [], []
        for step in range(n):
            i = (start + step) % n
            current.append(i)
            if split[i]:
                groups.append(current)
                current = []
        if current:
            groups.append(current)
    reps, projs = [], []
    for g in groups:
        vals = r[g]
        unwrapped = vals[0] + np.array([((x - vals[0] + math.pi) % TWO_PI) - math.pi for x in vals])
        reps.append(float(np.mod(np.mean(unwrapped), TWO_PI)))
        vecs = dec.eigenvectors[:, order[g]]
        projs.append(vecs @ dagger(vecs))
    idx = np.argsort(reps)
    return PeriodicSpectralData(np.array(reps)[idx], tuple(projs[i] for i in idx), cluster_tol)


def same_exponential(a, b, tol=1e-6, cluster_tol=CLUSTER_TOL):
    """Decide ``exp(iA) == exp(iB)`` by comparing periodic eigenspaces."""
    a, b = _pair(a, b)
    pa = periodic_eigenspaces(a, cluster_tol)
    pb = periodic_eigenspaces(b, cluster_tol)
    if len(pa) != len(pb):
        return False
    used = set()
    for lam, p in zip(pa.representatives, pa.projectors):
        dists = [_circular_gap(lam, mu) for mu in pb.representatives]
        j = int(np.argmin(dists))
        if dists[j] > tol or j in used:
            return False
        used.add(j)
        if np.linalg.norm(p - pb.projectors[j]) > tol:
            return False
    return True


@dataclass(frozen=True)
class SingularLengthSet:
    lengths: np.ndarray

    def __len__(self):
        return len(self.lengths)

    def __iter__(self):
        return iter(self.lengths)

    def near(self, t, margin):
        """True when ``t`` lies within ``margin`` of some singular length."""
        if not len(self.lengths):
            return False
        return bool(np.min(np.abs(self.lengths - t)) < margin)


def singular_lengths(a, t_max, distinct_tol=1e-12, tol=TOL_STRUCT):
    """Lengths ``t`` in ``(0, t_max]`` where ``dexp_{tA}`` is not bijective.

    These are ``2 pi z / (lam - mu)`` over distinct eigenvalues of ``iA`` and
    nonzero integers ``z``.
    """
    if t_max <= 0:
        raise ValueError("t_max must be positive")
    a = require_skew_hermitean(a, tol, "A")
    lam = eigh(1j * a, tol=max(tol, 1e-12)).eigenvalues
    diffs = sorted({float(d) for d in (lam[:, None] - lam[None, :]).ravel() if d > distinct_tol})
    out = []
    for d in diffs:
        zmax = int(math.floor(t_max * d / TWO_PI * (1 + 1e-14)))
        out.extend(TWO_PI * z / d for z in range(1, zmax + 1))
    out.sort()
    dedup = []
    for t in out:
        if t <= t_max * (1 + 1e-14) and (not dedup or t - dedup[-1] > 1e-12 * max(1.0, t)):
            dedup.append(t)
    return SingularLengthSet(np.array(dedup))


def dexp_invert_scaled(a, ts, cs, sing_tol=SING_TOL, tol=TOL_STRUCT):
    """Batched :func:`dexp_invert` at ``t_m A`` for many ``t_m`` and right-hand sides ``C_m``.

    All generators share the eigenbasis of ``A``, so one decomposition serves
    every ray. Returns ``(B, ok)`` where ``ok[m]`` is false (and ``B[m]``
    zero) whenever ``t_m A`` fails the bijectivity test.
    """
    lam, v, gaps = _spectral(a, tol)
    ts = np.asarray(ts, dtype=float)
    cs = np.asarray(cs, dtype=np.complex128)
    mult = phi(1j * ts[:, None, None] * gaps)
    ok = np.min(np.abs(mult), axis=(1, 2)) > sing_tol
    vh = dagger(v)
    expneg = (v * np.exp(-1j * ts[:, None] * lam)[:, None, :]) @ vh
    ct = vh @ (expneg @ cs) @ v
    bt = np.where(ok[:, None, None], ct / np.where(ok[:, None, None], mult, 1.0), 0.0)
    return v @ bt @ vh, ok
