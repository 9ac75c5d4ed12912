"""Dense small-N complex linear algebra.

All structure predicates live here so that tolerances are set in one place.
The eigensolver is a cyclic complex Jacobi method which operates on whole
stacks of matrices at once: the propagator needs millions of 2x2 and 3x3
exponentials and a per-matrix Python loop would dominate the runtime.
"""

from __future__ import annotations

import struct
from dataclasses import dataclass

import numpy as np

from .errors import DimensionError, StructureError

TOL_STRUCT = 1e-9
EPS = np.finfo(np.float64).eps


def as_square(m, name="matrix"):
    a = np.asarray(m, dtype=np.complex128)
    if a.ndim != 2 or a.shape[0] != a.shape[1]:
        raise DimensionError(f"{name} must be a square matrix, got shape {a.shape}")
    return a


def dagger(m):
    return np.conj(np.swapaxes(m, -1, -2))


def frobenius(m):
    return float(np.sqrt(np.sum(np.abs(m) ** 2)))


def is_hermitean(m, tol=TOL_STRUCT):
    m = np.asarray(m)
    return frobenius(m - dagger(m)) <= tol


def is_skew_hermitean(m, tol=TOL_STRUCT):
    m = np.asarray(m)
    return frobenius(m + dagger(m)) <= tol


def is_unitary(m, tol=TOL_STRUCT):
    m = as_square(m)
    return frobenius(dagger(m) @ m - np.eye(m.shape[0])) <= tol


def is_traceless(m, tol=TOL_STRUCT):
    return abs(np.trace(np.asarray(m))) <= tol


def require_hermitean(m, tol=TOL_STRUCT, name="matrix"):
    a = as_square(m, name)
    if not is_hermitean(a, tol):
        raise StructureError(f"{name} is not hermitean (|M - M*| = {frobenius(a - dagger(a)):.3e})")
    return a


def require_skew_hermitean(m, tol=TOL_STRUCT, name="matrix"):
    a = as_square(m, name)
    if not is_skew_hermitean(a, tol):
        raise StructureError(f"{name} is not skew-hermitean (|M + M*| = {frobenius(a + dagger(a)):.3e})")
    return a


def require_unitary(m, tol=TOL_STRUCT, name="matrix"):
    a = as_square(m, name)
    if not is_unitary(a, tol):
        raise StructureError(f"{name} is not unitary")
    return a


@dataclass(frozen=True)
class EigenDecomposition:
    eigenvalues: np.ndarray
    eigenvectors: np.ndarray

    def reconstruct(self):
        v = self.eigenvectors
        return (v * self.eigenvalues) @ dagger(v)


def _rotate(a, v, p, q, floor):
    # a, v have layout (n, n, count): every a[i, j] is a contiguous vector.
    apq = a[p, q]
    r = np.abs(apq)
    nz = r > floor
    safe_r = np.where(nz, r, 1.0)
    phase = np.where(nz, apq / safe_r, 1.0)
    alpha = a[p, p].real
    beta = a[q, q].real
    tau = (beta - alpha) / (2.0 * safe_r)
    t = np.where(tau >= 0, 1.0, -1.0) / (np.abs(tau) + np.hypot(1.0, tau))
    t = np.where(nz, t, 0.0)
    c = 1.0 / np.sqrt(1.0 + t * t)
    s = t * c
    # G = diag(phase, 1) @ [[c, s], [-s, c]] on the (p, q) plane
    gpp = phase * c
    gpq = phase * s
    for m in (a, v):
        cp = m[:, p].copy()
        cq = m[:, q]
        m[:, p] = cp * gpp - cq * s
        m[:, q] = cp * gpq + cq * c
    rp = a[p].copy()
    rq = a[q]
    a[p] = np.conj(gpp) * rp - s * rq
    a[q] = np.conj(gpq) * rp + c * rq
    a[p, q] = 0.0
    a[q, p] = 0.0


def jacobi_eigh(stack, max_sweeps=30):
    """Eigen-decompose a stack of hermitean matrices by cyclic Jacobi rotations.

    Parameters
    ----------
    stack : array_like, shape (..., n, n)
        Hermitean matrices. Hermiticity is assumed, not checked.
    max_sweeps : int
        Upper bound on full sweeps over the off-diagonal pairs.

    Returns
    -------
    w : ndarray, shape (..., n)
        Eigenvalues in ascending order.
    v : ndarray, shape (..., n, n)
        Unitary matrices whose columns are the eigenvectors.
    """
    h = np.asarray(stack, dtype=np.complex128)
    shape = h.shape
    n = shape[-1]
    h = h.reshape(-1, n, n)
    count = h.shape[0]
    a = np.ascontiguousarray(np.moveaxis(0.5 * (h + dagger(h)), 0, -1))
    v = np.zeros((n, n, count), dtype=np.complex128)
    for i in range(n):
        v[i, i] = 1.0
    if n > 1 and count:
        scale = np.sqrt(np.sum(np.abs(a) ** 2, axis=(0, 1)))
        offdiag = [(p, q) for p in range(n) for q in range(n) if p != q]
        active = np.arange(count)
        sub_a, sub_v = a, v
        for _ in range(max_sweeps):
            off = np.sqrt(sum(np.abs(sub_a[p, q]) ** 2 for p, q in offdiag))
            keep = off > EPS * 1e-2 * scale[active]
            if not keep.all():
                if sub_a is not a:
                    a[:, :, active] = sub_a
                    v[:, :, active] = sub_v
                if not keep.any():
                    sub_a = a
                    break
                active = active[keep]
                sub_a = a[:, :, active]
                sub_v = v[:, :, active]
            floor = EPS * 1e-3 * scale[active] + 1e-300
            for p in range(n - 1):
                for q in range(p + 1, n):
                    _rotate(sub_a, sub_v, p, q, floor)
        if sub_a is not a:
            a[:, :, active] = sub_a
            v[:, :, active] = sub_v
    w = np.real(np.array([a[i, i] for i in range(n)])).T
    v = np.moveaxis(v, -1, 0)
    order = np.argsort(w, axis=1, kind="stable")
    w = np.take_along_axis(w, order, axis=1)
    v = np.take_along_axis(v, order[:, None, :], axis=2)
    return w.reshape(shape[:-1]), v.reshape(shape)


def eigh(m, tol=TOL_STRUCT):
    """Hermitean eigendecomposition with ascending eigenvalues."""
    a = require_hermitean(m, tol)
    w, v = jacobi_eigh(a)
    return EigenDecomposition(w, v)


def expm_hermitean(h, scale=1.0):
    """Return ``exp(-1j * scale * h)`` for a stack of hermitean matrices.

    ``scale`` broadcasts against the leading (stack) dimensions, which is how
    the propagator passes per-step widths.
    """
    h = np.asarray(h, dtype=np.complex128)
    w, v = jacobi_eigh(h)
    phases = np.exp(-1j * np.asarray(scale, dtype=np.float64)[..., None] * w)
    return (v * phases[..., None, :]) @ dagger(v)


def mat_exp(a, tol=TOL_STRUCT):
    """Exponential of a skew-hermitean matrix, computed spectrally.

    ``a = V (i diag(lam)) V*`` with ``lam`` the eigenvalues of ``-i a``, so
    ``exp(a) = V diag(exp(i lam)) V*`` is unitary to rounding.
    """
    a = require_skew_hermitean(a, tol)
    return expm_hermitean(1j * a)


def traceless_split(h):
    """Split ``h = a + f I`` with ``tr a = 0``; returns ``(a, f)``."""
    h = as_square(h)
    n = h.shape[0]
    f = float(np.real(np.trace(h))) / n
    return h - f * np.eye(n), f


def traceless_basis(n):
    """Orthonormal basis of traceless hermitean n x n matrices.

    Generalised Gell-Mann matrices scaled so that ``tr(E_a E_b) = delta_ab``.
    """
    basis = []
    for j in range(n):
        for k in range(j + 1, n):
            e = np.zeros((n, n), dtype=np.complex128)
            e[j, k] = e[k, j] = 1.0
            basis.append(e / np.sqrt(2.0))
            e = np.zeros((n, n), dtype=np.complex128)
            e[j, k] = -1j
            e[k, j] = 1j
            basis.append(e / np.sqrt(2.0))
    for l in range(1, n):
        d = np.zeros(n)
        d[:l] = 1.0
        d[l] = -l
        basis.append(np.diag(d / np.sqrt(l * (l + 1))).astype(np.complex128))
    if not basis:
        return np.zeros((0, n, n), dtype=np.complex128)
    return np.array(basis)


PAULI = {
    "sigma1": np.array([[0, 1], [1, 0]], dtype=np.complex128),
    "sigma2": np.array([[0, -1j], [1j, 0]], dtype=np.complex128),
    "sigma3": np.array([[1, 0], [0, -1]], dtype=np.complex128),
}


def _rng(seed):
    return np.random.default_rng(seed)


def complex_gaussian(shape, rng):
    return (rng.standard_normal(shape) + 1j * rng.standard_normal(shape)) / np.sqrt(2.0)


def random_hermitean(n, seed=None, rng=None):
    """(G + G*)/2 for a standard complex Gaussian G."""
    rng = rng if rng is not None else _rng(seed)
    g = complex_gaussian((n, n), rng)
    return 0.5 * (g + g.conj().T)


def random_unitary(n, seed=None, rng=None):
    """Haar-distributed unitary from QR of a complex Gaussian with phase-fixed R."""
    rng = rng if rng is not None else _rng(seed)
    g = complex_gaussian((n, n), rng)
    q, r = np.linalg.qr(g)
    d = np.diagonal(r)
    ph = np.where(np.abs(d) > 0, d / np.abs(d), 1.0)
    return q * ph


def serialize_matrix(m):
    """4-byte little-endian dimension, then row-major (re, im) float64 pairs."""
    m = as_square(m)
    n = m.shape[0]
    body = np.empty((n, n, 2), dtype="<f8")
    body[..., 0] = m.real
    body[..., 1] = m.imag
    return struct.pack("<I", n) + body.tobytes()


def deserialize_matrix(buf, offset=0):
    (n,) = struct.unpack_from("<I", buf, offset)
    offset += 4
    count = 2 * n * n
    body = np.frombuffer(buf, dtype="<f8", count=count, offset=offset).reshape(n, n, 2)
    return body[..., 0] + 1j * body[..., 1], offset + 8 * count
