"""Evolution operators along rays.

The integrator replaces ``H(gamma(t))`` on each of the ``K`` equal
subintervals of a ray by its value at the midpoint and multiplies the exact
exponentials of these constant pieces, later times on the left. This is the
second-order midpoint rule for the time-ordered exponential, and every step
is unitary by construction.

Because the piecewise-constant Hamiltonian lives on the ray's own grid,
sub-interval operators are exact evolutions of the same surrogate, so
``U(T, s) U(s, 0) = U(T, 0)`` holds to rounding for every ``s``.

All family-level routines are vectorised over rays: nodes of many rays are
evaluated and exponentiated together, and the ordered products run as one
loop over the step index with stacked matrix products.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass

import numpy as np

from .errors import InvalidInterval
from .geometry import FamilyNodes, Ray, nodes_for, step_count
from .matrix import dagger, jacobi_eigh

log = logging.getLogger(__name__)

DEFAULT_H = 1.0 / 256.0
# complex N x N entries held per chunk of padded step factors
CHUNK_ENTRIES = 1 << 22


def _ray_arrays(rays):
    if isinstance(rays, Ray):
        return rays.entry[None], rays.direction[None], np.array([rays.length])
    return rays.entries, rays.directions, rays.lengths


def _exp_steps(hmat, widths, half=False):
    """``exp(-i w H)`` per node, and optionally the half steps ``exp(-i w H / 2)``."""
    lam, v = jacobi_eigh(hmat)
    vh = dagger(v)
    ph = np.exp(-1j * widths[:, None] * lam)
    full = (v * ph[:, None, :]) @ vh
    if not half:
        return full
    ph2 = np.exp(-0.5j * widths[:, None] * lam)
    return full, (v * ph2[:, None, :]) @ vh


def _chunks(steps, n):
    """Split ray indices into runs whose padded factor arrays stay bounded."""
    budget = max(CHUNK_ENTRIES // (n * n), 1)
    start, kmax = 0, 0
    for i, k in enumerate(steps):
        kmax_new = max(kmax, int(k))
        if i > start and kmax_new * (i + 1 - start) > budget:
            yield start, i
            start, kmax_new = i, int(k)
        kmax = kmax_new
    if start < len(steps):
        yield start, len(steps)


def _padded(values, nodes, n):
    """Scatter per-node matrices into a ``(rays, K_max, N, N)`` identity-padded array."""
    m = len(nodes.steps)
    out = np.zeros((m, int(nodes.steps.max()), n, n), dtype=np.complex128)
    out[..., np.arange(n), np.arange(n)] = 1.0
    local = np.arange(nodes.count) - nodes.ptr[nodes.ray_index]
    out[nodes.ray_index, local] = values
    return out


def _ordered_product(pad, steps):
    # rays sorted by decreasing length shrink the active set step by step
    order = np.argsort(-steps, kind="stable")
    pad = pad[order]
    srt = steps[order]
    u = pad[:, 0].copy()
    for k in range(1, pad.shape[1]):
        # rays [0, m) have more than k steps
        m = int(np.count_nonzero(srt > k))
        u[:m] = pad[:m, k] @ u[:m]
    out = np.empty_like(u)
    out[order] = u
    return out


def _field_on_nodes(field, nodes):
    return np.asarray(field.eval(nodes.points), dtype=np.complex128)


def evolve_family(field, rays, h=DEFAULT_H):
    """``U^gamma_H`` for every ray of a family (or a single :class:`Ray`)."""
    entries, dirs, lengths = _ray_arrays(rays)
    n = field.n
    steps = step_count(lengths, h)
    out = np.empty((len(lengths), n, n), dtype=np.complex128)
    for a, b in _chunks(steps, n):
        nodes = nodes_for(entries[a:b], dirs[a:b], lengths[a:b], h)
        f = _exp_steps(_field_on_nodes(field, nodes), nodes.widths)
        out[a:b] = _ordered_product(_padded(f, nodes, n), nodes.steps)
    return out


def evolve(field, ray, h=DEFAULT_H):
    """Time-ordered exponential of ``-i H`` along ``ray``."""
    return evolve_family(field, ray, h)[0]


def evolve_interval(field, ray, t1, t2, h=DEFAULT_H):
    """``U_H(t2, t1)``: the state at ``t1`` carried to ``t2``.

    Uses the same piecewise-constant surrogate as :func:`evolve`, with the
    partial subintervals at either end evolved for their actual length.
    """
    if t1 > t2:
        raise InvalidInterval(f"t1 = {t1} exceeds t2 = {t2}")
    slack = 1e-12 * max(1.0, ray.length)
    if t1 < -slack or t2 > ray.length + slack:
        raise InvalidInterval(f"[{t1}, {t2}] is not inside [0, {ray.length}]")
    n = field.n
    if t2 == t1:
        return np.eye(n, dtype=np.complex128)
    k = int(step_count(ray.length, h))
    w = ray.length / k
    j0 = min(int(np.floor(t1 / w)), k - 1)
    j1 = max(min(int(np.ceil(t2 / w)), k), j0 + 1)
    j = np.arange(j0, j1)
    lo = np.maximum(j * w, t1)
    hi = np.minimum((j + 1) * w, t2)
    # whole subintervals get exactly the width evolve uses
    full = (lo <= j * w) & (hi >= (j + 1) * w)
    widths = np.where(full, w, hi - lo)
    keep = widths > 0
    if not keep.any():
        return np.eye(n, dtype=np.complex128)
    mids = (j[keep] + 0.5) * w
    hmat = field.eval(ray.point(mids))
    f = _exp_steps(np.asarray(hmat, dtype=np.complex128), widths[keep])
    u = f[0]
    for m in f[1:]:
        u = m @ u
    return u


def integrate_family(field, rays, h=DEFAULT_H):
    """Midpoint quadrature of ``H`` (matrix or scalar field) along each ray."""
    entries, dirs, lengths = _ray_arrays(rays)
    nodes = nodes_for(entries, dirs, lengths, h)
    vals = np.asarray(field.eval(nodes.points))
    weighted = vals * nodes.widths.reshape((-1,) + (1,) * (vals.ndim - 1))
    return np.add.reduceat(weighted, nodes.ptr[:-1], axis=0) if nodes.count else weighted


def unordered_evolve_family(field, rays, h=DEFAULT_H):
    """``exp(-i int H)`` per ray, the integral by the same midpoint rule."""
    total = integrate_family(field, rays, h)
    lam, v = jacobi_eigh(total)
    return (v * np.exp(-1j * lam)[:, None, :]) @ dagger(v)


def unordered_evolve(field, ray, h=DEFAULT_H):
    return unordered_evolve_family(field, ray, h)[0]


@dataclass(frozen=True)
class Sweep:
    """Per-node partial products along a ray family.

    ``left[k] = U(T, t_k)`` and ``right[k] = U(t_k, 0)`` at node ``k`` (the
    midpoint of its subinterval), so ``left[k] @ right[k] = U(T, 0)``.
    """

    nodes: FamilyNodes
    left: np.ndarray
    right: np.ndarray
    total: np.ndarray


def sweep(field, rays, h=DEFAULT_H):
    """Partial products ``U(T, t_k)`` and ``U(t_k, 0)`` in one forward and one backward pass."""
    entries, dirs, lengths = _ray_arrays(rays)
    n = field.n
    nodes = nodes_for(entries, dirs, lengths, h)
    left = np.empty((nodes.count, n, n), dtype=np.complex128)
    right = np.empty_like(left)
    total = np.empty((len(lengths), n, n), dtype=np.complex128)
    steps = nodes.steps
    for a, b in _chunks(steps, n):
        sub = nodes_for(entries[a:b], dirs[a:b], lengths[a:b], h)
        f, g = _exp_steps(_field_on_nodes(field, sub), sub.widths, half=True)
        fp, gp = _padded(f, sub, n), _padded(g, sub, n)
        m, kmax = fp.shape[:2]
        lp = np.empty_like(fp)
        rp = np.empty_like(fp)
        p = np.broadcast_to(np.eye(n, dtype=np.complex128), (m, n, n)).copy()
        for k in range(kmax):
            rp[:, k] = gp[:, k] @ p
            p = fp[:, k] @ p
        total[a:b] = p
        s = np.broadcast_to(np.eye(n, dtype=np.complex128), (m, n, n)).copy()
        for k in range(kmax - 1, -1, -1):
            lp[:, k] = s @ gp[:, k]
            s = s @ fp[:, k]
        local = np.arange(sub.count) - sub.ptr[sub.ray_index]
        base = nodes.ptr[a]
        left[base : base + sub.count] = lp[sub.ray_index, local]
        right[base : base + sub.count] = rp[sub.ray_index, local]
    return Sweep(nodes, left, right, total)


def weighted_node_sum(sw, values):
    """``sum_k w_k left_k V_k right_k`` per ray for per-node matrices ``V_k``."""
    integrand = sw.left @ values @ sw.right
    integrand *= sw.nodes.widths[:, None, None]
    return np.add.reduceat(integrand, sw.nodes.ptr[:-1], axis=0)


def linearized_response_family(h0, h1, rays, h=DEFAULT_H):
    """Derivative of ``U_{H0 + s H1}`` at ``s = 0`` for each ray.

    Equals ``-i int U_{H0}(T, t) H1(gamma(t)) U_{H0}(t, 0) dt``, evaluated by
    the midpoint rule on cached partial products.
    """
    sw = sweep(h0, rays, h)
    vals = np.asarray(h1.eval(sw.nodes.points), dtype=np.complex128)
    return -1j * weighted_node_sum(sw, vals)


def linearized_response(h0, h1, ray, h=DEFAULT_H):
    return linearized_response_family(h0, h1, ray, h)[0]


def pseudolinear_integral(h_a, h_b, rays, h=DEFAULT_H):
    """``i int U_A(T, t) (A - B)(gamma(t)) U_B(t, 0) dt`` per ray.

    For exact evolutions this equals ``U_B - U_A``; the midpoint rule with
    half-step partial products reproduces it to second order in ``h``.
    """
    sa = sweep(h_a, rays, h)
    sb = sweep(h_b, rays, h)
    diff = np.asarray(h_a.eval(sa.nodes.points), dtype=np.complex128) - np.asarray(
        h_b.eval(sa.nodes.points), dtype=np.complex128
    )
    integrand = sa.left @ diff @ sb.right * sa.nodes.widths[:, None, None]
    return 1j * np.add.reduceat(integrand, sa.nodes.ptr[:-1], axis=0)


def unitarity_residual(u):
    u = np.asarray(u)
    n = u.shape[-1]
    d = dagger(u) @ u - np.eye(n)
    return np.sqrt(np.sum(np.abs(d) ** 2, axis=(-2, -1)))
