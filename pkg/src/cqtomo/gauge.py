"""Phaseless measurements, ideal-data recovery and gauge questions.

A measurement of a ray returns ``|a* U b|`` for final states ``a`` and
initial states ``b``. With enough probes this determines ``U`` up to a
global phase; for a traceless field the phase is pinned down to an N-th
root of unity by ``det U = 1`` and the remaining choice is made by
continuity along a family of shrinking chords.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass, field

import numpy as np

from .errors import (
    BranchJump,
    DegenerateColumn,
    DimensionError,
    InconsistentOracle,
    NonGeneric,
    StructureError,
)
from .matrix import TOL_STRUCT, as_square, dagger, frobenius, require_unitary
from .propagator import DEFAULT_H, evolve_family, unitarity_residual, unordered_evolve_family

log = logging.getLogger(__name__)

BRANCH_TOL = 0.5
SQRT_HALF = np.sqrt(0.5)


@dataclass(frozen=True)
class StateSets:
    """Initial states (``b``) and final states (``a``), one per row."""

    initial: np.ndarray
    final: np.ndarray

    def __post_init__(self):
        ini = np.atleast_2d(np.asarray(self.initial, dtype=np.complex128))
        fin = np.atleast_2d(np.asarray(self.final, dtype=np.complex128))
        if ini.size == 0 or fin.size == 0:
            raise StructureError("state sets must be nonempty")
        if ini.shape[1] != fin.shape[1]:
            raise DimensionError("initial and final states live in different dimensions")
        for name, s in (("initial", ini), ("final", fin)):
            norms = np.linalg.norm(s, axis=1)
            if np.max(np.abs(norms - 1.0)) > 1e-12:
                raise StructureError(f"{name} states must have unit norm")
        object.__setattr__(self, "initial", ini)
        object.__setattr__(self, "final", fin)

    @property
    def n(self):
        return self.initial.shape[1]

    @classmethod
    def basis(cls, n):
        e = np.eye(n, dtype=np.complex128)
        return cls(e, e)

    def to_dict(self):
        enc = lambda s: [[[float(z.real), float(z.imag)] for z in row] for row in s]  # noqa: E731
        return {"initial": enc(self.initial), "final": enc(self.final)}

    @classmethod
    def from_dict(cls, d):
        dec = lambda s: np.array([[complex(re, im) for re, im in row] for row in s])  # noqa: E731
        return cls(dec(d["initial"]), dec(d["final"]))


@dataclass
class MeasurementSet:
    """Per-ray data: amplitudes ``(M, |F|, |I|)`` or unitaries ``(M, N, N)``."""

    mode: str
    values: np.ndarray
    family_header: dict
    states: StateSets | None = None
    meta: dict = field(default_factory=dict)

    def __len__(self):
        return len(self.values)


def amplitudes(u, states):
    """``|a* U b|`` for every final ``a`` (rows) and initial ``b`` (columns)."""
    u = np.asarray(u)
    return np.abs(np.conj(states.final) @ u @ states.initial.T)


def _phase_free(u, seed=0):
    """Strip the global phase: ``U`` times a seeded random unit scalar.

    Models the fact that phaseless data never fixes it.
    """
    rng = np.random.default_rng(seed)
    return u * np.exp(2j * np.pi * rng.random(len(u)))[:, None, None]


def measure(field_, rays, states=None, mode="amplitudes", h=DEFAULT_H, ordered=True, seed=0, recover=True):
    """Simulate data for every ray of a family.

    ``mode="amplitudes"`` records ``|a* U b|``. ``mode="ideal_unitary"``
    runs the ideal-data chain: amplitudes of the probing states,
    reconstruction of ``U`` up to phase, and det/continuity calibration of
    the phase (the field's trace part is invisible and is lost, as it should
    be). ``recover=False`` skips the amplitude stage and only strips the
    phase, which is the same result at a fraction of the cost.
    ``ordered=False`` uses ``exp(-i int H)`` instead of the time-ordered
    exponential.
    """
    evo = evolve_family if ordered else unordered_evolve_family
    u = evo(field_, rays, h)
    res = float(unitarity_residual(u).max()) if len(u) else 0.0
    log.info("simulated %d rays, max unitarity residual %.2e", len(u), res)
    header = dict(rays.header)
    if mode == "amplitudes":
        states = states if states is not None else StateSets.basis(field_.n)
        amps = amplitudes(u, states)
        return MeasurementSet("amplitudes", amps, header, states, {"unitarity_residual": res})
    if mode != "ideal_unitary":
        raise ValueError(f"unknown measurement mode {mode!r}")
    if recover:
        raw = recover_unitary_batch(amplitude_oracle(u), field_.n, len(u))
    else:
        raw = _phase_free(u, seed)
    cal = calibrate_family(raw, rays)
    return MeasurementSet("ideal_unitary", cal, header, None, {"unitarity_residual": res})


# ---------------------------------------------------------------- ideal data


def amplitude_oracle(u):
    """Oracle ``(a, b) -> |a* U b|`` for a unitary or a stack of unitaries.

    For a stack, ``a`` and ``b`` may be per-ray arrays of shape ``(M, N)``.
    """
    u = np.asarray(u, dtype=np.complex128)

    def oracle(a, b):
        a = np.asarray(a, dtype=np.complex128)
        b = np.asarray(b, dtype=np.complex128)
        if u.ndim == 2:
            return np.abs(np.conj(a) @ u @ b)
        return np.abs(np.einsum("mi,mij,mj->m", np.conj(np.broadcast_to(a, u.shape[:2])), u, np.broadcast_to(b, u.shape[:2])))

    return oracle


def recover_unitary_batch(oracle, n, count):
    """Rebuild unitaries up to a global phase from amplitude probes.

    Every probe is a pair ``(a, b)`` of per-ray unit vectors and the oracle
    returns ``|a* U b|``. The probes, all with well-conditioned answers:

    * basis pairs give the magnitudes ``|u_jk|``;
    * in column ``k`` with pivot row ``p`` (its largest entry), final states
      ``(e_p + e_j)/sqrt 2`` and ``(e_p + i e_j)/sqrt 2`` give
      ``conj(u_pk) u_jk`` by polarization, hence the column up to a phase;
    * with the normalised columns ``w_k`` known, ``a = (w_0 + w_k)/sqrt 2``
      against ``b = (e_0 + e_k)/sqrt 2`` and ``(e_0 + i e_k)/sqrt 2`` give the
      cosine and sine of the phase between columns ``0`` and ``k``.

    Finally the first entry of column 0 above 1e-9 in modulus is made real
    positive.
    """
    eye = np.eye(n, dtype=np.complex128)
    rows = np.arange(count)
    mag = np.empty((count, n, n))
    for j in range(n):
        for k in range(n):
            mag[:, j, k] = oracle(np.broadcast_to(eye[j], (count, n)), np.broadcast_to(eye[k], (count, n)))
    w = np.zeros((count, n, n), dtype=np.complex128)
    for k in range(n):
        p = np.argmax(mag[:, :, k], axis=1)
        mp = mag[rows, p, k]
        if np.any(mp < 1e-9):
            raise DegenerateColumn(f"column {k} has no entry above 1e-9")
        w[rows, p, k] = mp
        bk = np.broadcast_to(eye[k], (count, n))
        for j in range(n):
            sel = p != j
            if not sel.any():
                continue
            a_re = SQRT_HALF * (eye[p] + eye[j])
            a_im = SQRT_HALF * (eye[p] + 1j * eye[j])
            q_re = oracle(a_re, bk) ** 2
            q_im = oracle(a_im, bk) ** 2
            base = mp**2 + mag[:, j, k] ** 2
            z = (q_re - 0.5 * base) + 1j * (q_im - 0.5 * base)
            w[sel, j, k] = (z / mp)[sel]
    v = w.copy()
    for k in range(1, n):
        a = SQRT_HALF * (w[:, :, 0] + w[:, :, k])
        c = 2.0 * oracle(a, np.broadcast_to(SQRT_HALF * (eye[0] + eye[k]), (count, n))) ** 2 - 1.0
        s = 2.0 * oracle(a, np.broadcast_to(SQRT_HALF * (eye[0] + 1j * eye[k]), (count, n))) ** 2 - 1.0
        # c, s are cos and sin of (phase of column 0) - (phase of column k)
        v[:, :, k] = w[:, :, k] * np.exp(-1j * np.arctan2(s, c))[:, None]
    first = np.argmax(np.abs(v[:, :, 0]) > 1e-9, axis=1)
    lead = v[rows, first, 0]
    v = v * (np.abs(lead) / lead)[:, None, None]
    err = unitarity_residual(v)
    if np.any(err > 1e-6):
        raise InconsistentOracle(f"recovered matrix violates unitarity by {err.max():.2e}")
    return v


def recover_unitary_up_to_phase(oracle, n):
    """Single-matrix version of :func:`recover_unitary_batch`.

    ``oracle(a, b)`` takes two vectors of length ``n``.
    """

    def batch(a, b):
        return np.array([oracle(a[0], b[0])])

    return recover_unitary_batch(batch, n, 1)[0]


def phase_distance(u, v):
    """``min_phi |V - e^{i phi} U|_F``, attained at the phase of ``tr(U* V)``."""
    t = np.trace(dagger(u) @ v)
    ph = t / abs(t) if abs(t) > 0 else 1.0
    return frobenius(v - ph * u)


# ---------------------------------------------------------------- phase calibration


def su_candidates(raw):
    """The ``N`` special unitaries ``raw * e^{-i arg det / N} * omega^k``."""
    raw = np.asarray(raw, dtype=np.complex128)
    n = raw.shape[-1]
    det = np.linalg.det(raw)
    base = raw * np.exp(-1j * np.angle(det) / n)[..., None, None]
    roots = np.exp(2j * np.pi * np.arange(n) / n)
    return base[..., None, :, :] * roots[:, None, None]


def calibrate_su_phase(raw, reference=None):
    """Special unitary ``e^{i c} raw`` closest to ``reference`` (default ``I``)."""
    raw = as_square(raw, "raw")
    cands = su_candidates(raw)
    ref = np.eye(raw.shape[0]) if reference is None else reference
    d = np.sqrt(np.sum(np.abs(cands - ref) ** 2, axis=(-2, -1)))
    return cands[int(np.argmin(d))]


def calibrate_family(raws, rays, branch_tol=BRANCH_TOL):
    """Calibrate phases along each offset-ordered group of parallel chords.

    Each group starts at its first offset (the chord nearest the tangent and
    shortest) with reference ``I``, and every later chord is matched to its
    predecessor.

    Raises
    ------
    BranchJump
        When a chosen branch is farther than ``branch_tol`` from the previous
        one, i.e. the family is too coarse to follow continuously.
    """
    raws = np.asarray(raws)
    n = raws.shape[-1]
    cands = su_candidates(raws)
    out = np.empty_like(raws)
    for group in rays.groups():
        ref = np.eye(n)
        first = True
        for i in group:
            d = np.sqrt(np.sum(np.abs(cands[i] - ref) ** 2, axis=(-2, -1)))
            k = int(np.argmin(d))
            if not first and d[k] > branch_tol:
                raise BranchJump(f"ray {i}: branch distance {d[k]:.3f} exceeds {branch_tol}")
            out[i] = ref = cands[i, k]
            first = False
    return out


# ---------------------------------------------------------------- gauge in 2D


def _diag_phase(a):
    return np.diag([np.exp(1j * a), np.exp(-1j * a)])


def gauge_apply(u, alpha, beta, theta):
    """``e^{i theta} diag(e^{i a}, e^{-i a}) U diag(e^{i b}, e^{-i b})``."""
    return np.exp(1j * theta) * _diag_phase(alpha) @ u @ _diag_phase(beta)


def gauge_equivalent_2d(u, v, tol=1e-9):
    """Angles ``(alpha, beta, theta)`` with ``V = gauge_apply(U, ...)``, or ``None``.

    The test uses only first-column amplitudes, as measured with initial
    state ``e_1`` and final states ``e_1, e_2``; matching angles are then
    read off the entry ratios and verified.
    """
    u = require_unitary(u, TOL_STRUCT, "U")
    v = require_unitary(v, TOL_STRUCT, "V")
    if u.shape != (2, 2) or v.shape != (2, 2):
        raise DimensionError("gauge_equivalent_2d works on 2 x 2 matrices")
    if abs(abs(v[0, 0]) - abs(u[0, 0])) > tol or abs(abs(v[1, 0]) - abs(u[1, 0])) > tol:
        return None
    small = 1e-8
    if abs(u[0, 0]) > small and abs(u[1, 0]) > small:
        ak = np.angle(v[0, 0] / u[0, 0])
        al = np.angle(v[0, 1] / u[0, 1])
        am = np.angle(v[1, 0] / u[1, 0])
        beta = 0.5 * (ak - al)
        alpha = 0.5 * (ak - am)
        theta = ak - alpha - beta
    elif abs(u[0, 0]) <= small:
        # anti-diagonal U: only alpha - beta is fixed
        al = np.angle(v[0, 1] / u[0, 1])
        am = np.angle(v[1, 0] / u[1, 0])
        beta, alpha, theta = 0.0, 0.5 * (al - am), 0.5 * (al + am)
    else:
        # diagonal U: only alpha + beta is fixed
        ak = np.angle(v[0, 0] / u[0, 0])
        an = np.angle(v[1, 1] / u[1, 1])
        beta, alpha, theta = 0.0, 0.5 * (ak - an), 0.5 * (ak + an)
    if frobenius(gauge_apply(u, alpha, beta, theta) - v) > max(tol, 1e-9) * 10:
        return None
    return float(alpha), float(beta), float(theta)


# ---------------------------------------------------------------- N >= 3


def symmetry_dimension(u, rel_tol=1e-8):
    """Dimension of the set of unitaries with the same entry moduli as ``U``, at ``U``.

    Tangent vectors are ``U o (i Phi)`` for real ``Phi`` (entrywise phases)
    which stay tangent to the unitary group, i.e. lie in the null space of
    ``Phi -> (U o i Phi) U* + U (U o i Phi)*``.
    """
    u = require_unitary(u, TOL_STRUCT, "U")
    n = u.shape[0]
    if np.min(np.abs(u)) <= 1e-6:
        raise NonGeneric(f"entry of modulus {np.min(np.abs(u)):.2e} is not above 1e-6")
    cols = []
    for j in range(n):
        for k in range(n):
            phi = np.zeros((n, n))
            phi[j, k] = 1.0
            du = u * (1j * phi)
            m = du @ dagger(u) + u @ dagger(du)
            cols.append(np.concatenate([m.real.ravel(), m.imag.ravel()]))
    s = np.linalg.svd(np.array(cols).T, compute_uv=False)
    return int(np.sum(s < rel_tol * s[0]))
