"""X-ray transforms: scalar, matrix-weighted, back-projection, Riesz potentials, FBP.

Back-projection and Riesz potentials are normalised so that back-projecting
the X-ray transform of ``f`` gives exactly the Riesz potential ``I_1 f``
with kernel ``|y|^{-1} / (2 pi)``. Since every line through a point is met
once per angle in ``[0, pi)``, this fixes

    P g(x) = (1 / 2 pi) * int_0^pi g(x, theta) d theta,

i.e. half the angular average of the line data through ``x``.
"""

from __future__ import annotations

import logging
import math
import warnings
from dataclasses import dataclass

import numpy as np
import scipy.sparse as sp
from scipy import integrate, special

from .errors import AliasWarning, InsufficientAngles, NonInvertibleWeight
from .fields import interp_weights
from .geometry import FamilyNodes, family_nodes
from .propagator import DEFAULT_H, integrate_family

log = logging.getLogger(__name__)

MIN_ANGLES = 8


@dataclass
class Sinogram:
    """Per-ray values (scalar, vector or matrix) and the family header."""

    values: np.ndarray
    header: dict

    def __len__(self):
        return len(self.values)

    def __add__(self, other):
        return Sinogram(self.values + other.values, self.header)


# ---------------------------------------------------------------- forward transforms


def xray_scalar(f, rays, h=DEFAULT_H):
    """Midpoint-rule line integrals of a scalar field."""
    return Sinogram(np.asarray(integrate_family(f, rays, h)), dict(rays.header))


class WeightField:
    """Matrix weight ``W(x, v)`` evaluated on arrays of points and directions."""

    def eval(self, x, v):
        raise NotImplementedError

    def check_invertible(self, x, v, inv_tol=1e-8):
        s = np.linalg.svd(self.eval(x, v), compute_uv=False)
        smin = float(s[..., -1].min())
        if smin < inv_tol:
            raise NonInvertibleWeight(f"smallest singular value {smin:.2e} below {inv_tol:.1e}")
        return smin


@dataclass(frozen=True)
class ConstantWeight(WeightField):
    matrix: np.ndarray

    def eval(self, x, v):
        x = np.asarray(x)
        return np.broadcast_to(np.asarray(self.matrix, dtype=np.complex128), x.shape[:-1] + np.shape(self.matrix))


@dataclass(frozen=True)
class FunctionWeight(WeightField):
    """Weight given by a vectorised callable ``fn(x, v) -> (..., N, N)``."""

    fn: object

    def eval(self, x, v):
        return np.asarray(self.fn(x, v), dtype=np.complex128)


@dataclass(frozen=True)
class LeftMultipliedWeight(WeightField):
    q: np.ndarray
    inner: WeightField

    def eval(self, x, v):
        return np.asarray(self.q) @ self.inner.eval(x, v)


def xray_weighted(weight, f, rays, h=DEFAULT_H):
    """``int W(gamma, gamma') f(gamma) dt`` for a vector field ``f(x) -> (..., N)``."""
    nodes = family_nodes(rays, h)
    dirs = rays.directions[nodes.ray_index]
    w = weight.eval(nodes.points, dirs)
    vals = np.asarray(f(nodes.points), dtype=np.complex128)
    integrand = np.einsum("kij,kj->ki", w, vals) * nodes.widths[:, None]
    return Sinogram(np.add.reduceat(integrand, nodes.ptr[:-1], axis=0), dict(rays.header))


def conjugation_transform(left, right, z, widths, ptr):
    """``sum_k w_k A_k Z_k B_k`` per ray: the transform with weight ``Z -> A Z B``.

    ``left``/``right`` hold ``A_k``/``B_k`` at the nodes, ``z`` the matrix
    integrand there.
    """
    integrand = left @ z @ right
    integrand *= widths[:, None, None]
    return np.add.reduceat(integrand, ptr[:-1], axis=0)


# ---------------------------------------------------------------- discrete operators


def interpolation_matrix(grid, points):
    """Sparse ``(points, cells)`` matrix of multilinear interpolation weights."""
    idx, w = interp_weights(grid, points)
    m = idx.shape[0]
    rows = np.repeat(np.arange(m), idx.shape[1])
    return sp.csr_matrix((w.ravel(), (rows, idx.ravel())), shape=(m, grid.size))


def ray_sum_matrix(nodes: FamilyNodes):
    """Sparse ``(rays, nodes)`` matrix of quadrature widths."""
    return sp.csr_matrix(
        (nodes.widths, (nodes.ray_index, np.arange(nodes.count))), shape=(len(nodes.steps), nodes.count)
    )


def xray_matrix(rays, grid, h):
    """Discrete scalar X-ray transform acting on grid-node values."""
    nodes = family_nodes(rays, h)
    return (ray_sum_matrix(nodes) @ interpolation_matrix(grid, nodes.points)).tocsr()


def weighted_system_matrix(weight, rays, grid, h):
    """Dense complex matrix of the weighted transform on ``C^N``-valued grid functions.

    Rows are ``(ray, component)``, columns ``(cell, component)``, both with
    the component index fastest.
    """
    nodes = family_nodes(rays, h)
    dirs = rays.directions[nodes.ray_index]
    w = weight.eval(nodes.points, dirs) * nodes.widths[:, None, None]
    n = w.shape[-1]
    interp = interpolation_matrix(grid, nodes.points).tocoo()
    out = np.zeros((len(rays) * n, grid.size * n), dtype=np.complex128)
    rays_of = nodes.ray_index[interp.row]
    for i in range(n):
        for j in range(n):
            np.add.at(out, (rays_of * n + i, interp.col * n + j), interp.data * w[interp.row, i, j])
    return out


def normal_operator_min_eig(weight, rays, grid, h):
    """Smallest eigenvalue of ``A* A`` for the discrete weighted transform ``A``."""
    a = weighted_system_matrix(weight, rays, grid, h)
    s = np.linalg.svd(a, compute_uv=False)
    return float(s[-1] ** 2), float(s[0] ** 2)


# ---------------------------------------------------------------- parallel-beam layout


@dataclass(frozen=True)
class BeamLayout:
    """Angle/offset table of a 2D parallel-beam family."""

    thetas: np.ndarray
    offsets: np.ndarray  # (n_angles, n_offsets) signed offsets along the normal
    ray_of: np.ndarray  # (n_angles, n_offsets) ray index or -1 for dropped lines

    @property
    def n_angles(self):
        return len(self.thetas)


def beam_layout(rays):
    hdr = rays.header
    if hdr.get("kind") != "parallel_beam":
        raise ValueError("a 2D parallel-beam family is required")
    na, no = int(hdr["n_angles"]), int(hdr["n_offsets"])
    thetas = np.pi * np.arange(na) / na
    offsets = np.empty((na, no))
    for a, th in enumerate(thetas):
        nrm = np.array([-math.sin(th), math.cos(th)])
        half, centre = rays.domain.half_width(nrm)
        offsets[a] = centre - half + (np.arange(no) + 0.5) * (2.0 * half / no)
    ray_of = np.full((na, no), -1, dtype=np.int64)
    ray_of[rays.labels["angle"], rays.labels["offset"]] = np.arange(len(rays))
    return BeamLayout(thetas, offsets, ray_of)


def _table(values, layout):
    tab = np.zeros(layout.ray_of.shape + np.shape(values)[1:], dtype=np.asarray(values).dtype)
    ok = layout.ray_of >= 0
    tab[ok] = np.asarray(values)[layout.ray_of[ok]]
    return tab


def _check_angles(layout):
    if layout.n_angles < MIN_ANGLES:
        raise InsufficientAngles(f"{layout.n_angles} angles given, at least {MIN_ANGLES} needed")
    if layout.n_angles < 64:
        log.warning("only %d angles; back-projection accuracy will suffer", layout.n_angles)


def _angular_sum(table, layout, grid):
    """``sum_a g_a(x . n_a)`` with linear interpolation in the offset."""
    pts = grid.nodes().reshape(-1, 2)
    out = np.zeros(pts.shape[0], dtype=table.dtype)
    for a, th in enumerate(layout.thetas):
        s = pts @ np.array([-math.sin(th), math.cos(th)])
        off = layout.offsets[a]
        ds = off[1] - off[0] if len(off) > 1 else 1.0
        u = (s - off[0]) / ds
        i0 = np.floor(u).astype(np.int64)
        frac = u - i0
        row = table[a]
        lo = np.where((i0 >= 0) & (i0 < len(off)), row[np.clip(i0, 0, len(off) - 1)], 0.0)
        hi = np.where((i0 + 1 >= 0) & (i0 + 1 < len(off)), row[np.clip(i0 + 1, 0, len(off) - 1)], 0.0)
        out += (1.0 - frac) * lo + frac * hi
    return out.reshape(grid.dims)


def back_project(sino, rays, grid):
    """``P g`` on the grid nodes for scalar line data ``g`` of a parallel-beam family.

    Lines missing the domain contribute zero, as for functions supported in
    the domain.
    """
    layout = beam_layout(rays)
    _check_angles(layout)
    values = sino.values if isinstance(sino, Sinogram) else np.asarray(sino)
    return _angular_sum(_table(values, layout), layout, grid) / (2.0 * layout.n_angles)


# ---------------------------------------------------------------- filtered back-projection


def ramp_filter(profiles, spacing):
    """Ram-Lak filter with a raised-cosine window, applied along the last axis.

    Convolution with the band-limited ramp kernel (``1/(4 tau^2)`` at zero,
    ``-1/(n pi tau)^2`` at odd ``n``) through zero-padded FFTs, the spectrum
    tapered by ``(1 + cos(pi nu / nu_Nyquist)) / 2``.
    """
    profiles = np.asarray(profiles)
    n = profiles.shape[-1]
    size = 1 << int(math.ceil(math.log2(max(2 * n, 64))))
    k = np.arange(size)
    k = np.where(k > size // 2, k - size, k)
    kern = np.zeros(size)
    kern[0] = 1.0 / (4.0 * spacing**2)
    odd = (k % 2) != 0
    kern[odd] = -1.0 / (np.pi * k[odd] * spacing) ** 2
    window = 0.5 * (1.0 + np.cos(2.0 * np.pi * np.fft.fftfreq(size)))
    resp = np.fft.fft(kern).real * window * spacing
    spec = np.fft.fft(profiles, n=size, axis=-1) * resp
    out = np.fft.ifft(spec, axis=-1)[..., :n]
    return out.real if np.isrealobj(profiles) else out


def fbp_invert(sino, rays, grid):
    """Invert the 2D scalar X-ray transform by filtered back-projection.

    ``f(x) = (pi / n_angles) sum_a q_a(x . n_a)`` with ``q_a`` the
    ramp-filtered profile at angle ``a``.
    """
    layout = beam_layout(rays)
    _check_angles(layout)
    values = sino.values if isinstance(sino, Sinogram) else np.asarray(sino)
    table = _table(values, layout)
    q = np.empty_like(table)
    for a in range(layout.n_angles):
        ds = layout.offsets[a, 1] - layout.offsets[a, 0]
        q[a] = ramp_filter(table[a], ds)
    return _angular_sum(q, layout, grid) * (np.pi / layout.n_angles)


# ---------------------------------------------------------------- Riesz potentials


def riesz_constant(alpha):
    """``c_alpha`` making ``I_alpha`` the Fourier multiplier ``|xi|^{-alpha}`` in 2D."""
    return special.gamma(1.0 - alpha / 2.0) / (np.pi * 2.0**alpha * special.gamma(alpha / 2.0))


def _cell_average(alpha, h, i, j, order=8):
    # Gauss-Legendre over the cell centred at (i h, j h); the kernel is smooth there
    x, w = np.polynomial.legendre.leggauss(order)
    px = (i + 0.5 * x) * h
    py = (j + 0.5 * x) * h
    r = np.hypot(px[:, None], py[None, :])
    return 0.25 * np.sum(w[:, None] * w[None, :] * r ** (alpha - 2.0))


def _singular_cell(alpha, h):
    """Mean of ``|y|^{alpha-2}`` over the square of side ``h`` centred at 0."""
    ang, _ = integrate.quad(lambda t: np.cos(t) ** (-alpha), 0.0, np.pi / 4.0)
    total = (8.0 / alpha) * (h / 2.0) ** alpha * ang
    return total / h**2


def riesz_kernel(alpha, n, h, near=3):
    """Cell-averaged kernel ``c_alpha |y|^{alpha-2}`` on a periodic ``(n, n)`` displacement lattice."""
    k = np.arange(n)
    k = np.where(k >= n // 2, k - n, k)
    ii, jj = np.meshgrid(k, k, indexing="ij")
    r = np.hypot(ii, jj) * h
    with np.errstate(divide="ignore"):
        kern = r ** (alpha - 2.0)
    for i in range(-near, near + 1):
        for j in range(-near, near + 1):
            if i == 0 and j == 0:
                kern[0, 0] = _singular_cell(alpha, h)
            else:
                kern[i % n, j % n] = _cell_average(alpha, h, i, j)
    return riesz_constant(alpha) * kern


def riesz(f, grid, alpha=1.0, alias_tol=0.01):
    """Riesz potential ``I_alpha f`` of grid values by zero-padded FFT convolution.

    The grid function is padded to four times its size so that the circular
    convolution with the truncated kernel equals the linear one on the grid.
    """
    if not 0.0 < alpha < 2.0:
        raise ValueError("alpha must lie in (0, 2)")
    f = np.asarray(f, dtype=float)
    if f.ndim != 2 or f.shape[0] != f.shape[1] or grid.spacing[0] != grid.spacing[1]:
        raise ValueError("riesz needs a square grid")
    n = f.shape[0]
    h = grid.spacing[0]
    size = 4 * n
    fs = np.fft.fft2(f, s=(size, size))
    power = np.abs(fs) ** 2
    nu = np.abs(np.fft.fftfreq(size))
    band = (nu[:, None] > 0.4) | (nu[None, :] > 0.4)
    total = power.sum()
    if total > 0 and power[band].sum() / total > alias_tol:
        warnings.warn(
            f"{power[band].sum() / total:.1%} of the spectrum lies near the Nyquist band", AliasWarning, stacklevel=2
        )
    ks = np.fft.fft2(riesz_kernel(alpha, size, h))
    out = np.fft.ifft2(fs * ks)[:n, :n] * h**2
    scale = max(np.abs(out).max(), 1e-300)
    if np.abs(out.imag).max() > 1e-10 * max(scale, 1.0):
        raise ArithmeticError("Riesz potential has a non-negligible imaginary part")
    return out.real


def riesz_direct(f, grid, alpha=1.0, sub=4):
    """Brute-force ``O(n^4)`` sum of ``c_alpha |x - y|^{alpha-2} f(y)``.

    Each source cell is split into ``sub x sub`` sub-cells, with the singular
    self-cell integrated in closed form. Only meant as a reference on small grids.
    """
    f = np.asarray(f, dtype=float)
    n = f.shape[0]
    h = grid.spacing[0]
    c = riesz_constant(alpha)
    offs = (np.arange(sub) + 0.5) / sub - 0.5
    out = np.zeros_like(f)
    idx = np.arange(n)
    for i in range(n):
        for j in range(n):
            dx = (idx[:, None] - i) + offs[None, :]
            dy = (idx[:, None] - j) + offs[None, :]
            r = np.hypot(dx[:, None, :, None], dy[None, :, None, :]) * h
            with np.errstate(divide="ignore"):
                k = r ** (alpha - 2.0)
            cell = k.mean(axis=(2, 3))
            cell[i, j] = _singular_cell(alpha, h)
            out[i, j] = c * h**2 * np.sum(cell * f)
    return out
