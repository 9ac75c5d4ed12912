"""Inverse solvers for the traceless Hamiltonian.

Three routes, all on a 2D cell-centred grid:

* ``reconstruct_linearized``: constant background ``H0``, data from
  ``exp(-i int H)``. The inverse derivative of the exponential turns each
  datum into the line integral of the perturbation, and FBP inverts each
  traceless component.
* ``reconstruct_pseudolinear``: Gauss-Newton iteration where each update
  solves the matrix-weighted transform with weights ``Z -> A Z B`` built
  from the current iterate's partial evolutions.
* ``reconstruct_scalar_coefficient``: the same iteration for ``H0 + f G``
  with ``H0`` and ``G`` known and scalar ``f`` unknown.
"""

from __future__ import annotations

import logging
import time
from dataclasses import asdict, dataclass, field

import numpy as np

from .errors import Diverged, TooManySkipped, WeightDegenerate
from .expcalc import dexp_invert_scaled, singular_lengths
from .fields import GridField, GridScalar, sample_on_grid, traceless_field
from .matrix import dagger, eigh, traceless_basis, traceless_split
from .propagator import sweep
from .xray import fbp_invert, interpolation_matrix

log = logging.getLogger(__name__)

SING_MARGIN = 0.05
SKIP_LIMIT = 0.2
STALL = 0.01


@dataclass
class ReconstructionReport:
    mode: str
    iterations: int = 0
    residuals: list = field(default_factory=list)
    field_error: float | None = None
    skipped_rays: list = field(default_factory=list)
    inner_iterations: int = 0
    stop_reason: str = ""
    seconds: float = 0.0
    extra: dict = field(default_factory=dict)

    def to_dict(self):
        return asdict(self)


REPORT_SCHEMA = {
    "type": "object",
    "required": ["mode", "iterations", "residuals", "field_error", "skipped_rays", "stop_reason"],
    "properties": {
        "mode": {"enum": ["linearized", "pseudolinear", "scalar"]},
        "iterations": {"type": "integer", "minimum": 0},
        "residuals": {"type": "array", "items": {"type": "number"}},
        "field_error": {"type": ["number", "null"]},
        "skipped_rays": {
            "type": "array",
            "items": {
                "type": "object",
                "required": ["ray", "reason"],
                "properties": {"ray": {"type": "integer"}, "reason": {"type": "string"}},
            },
        },
        "inner_iterations": {"type": "integer", "minimum": 0},
        "stop_reason": {"type": "string"},
        "seconds": {"type": "number"},
        "extra": {"type": "object"},
    },
}


def relative_error(estimate, truth, mask=None):
    d = np.asarray(estimate) - np.asarray(truth)
    t = np.asarray(truth)
    if mask is not None:
        d, t = d[mask], t[mask]
    den = np.sqrt(np.sum(np.abs(t) ** 2))
    return float(np.sqrt(np.sum(np.abs(d) ** 2)) / den) if den > 0 else float(np.sqrt(np.sum(np.abs(d) ** 2)))


def disk_mask(grid, radius=1.0, center=(0.0, 0.0)):
    return np.linalg.norm(grid.nodes() - np.asarray(center), axis=-1) <= radius


def basis_coefficients(m, basis):
    """Real coordinates ``tr(E_a M)`` of hermitean matrices in an orthonormal basis."""
    return np.real(np.einsum("aij,...ji->...a", basis, m))


def from_coefficients(c, basis):
    return np.einsum("...a,aij->...ij", c, basis)


# ---------------------------------------------------------------- linearized


def _fill_along_offsets(values, ok, rays):
    """Replace skipped rays by linear interpolation along their offset group."""
    out = values.copy()
    for g in rays.groups():
        good = ok[g]
        if good.all():
            continue
        if not good.any():
            out[g] = 0.0
            continue
        x = rays.labels["offset"][g]
        for comp in range(values.shape[1]):
            out[g[~good], comp] = np.interp(x[~good], x[good], values[g[good], comp])
    return out


def reconstruct_linearized(data, h0, rays, grid, truth=None, sing_margin=SING_MARGIN, skip_limit=SKIP_LIMIT):
    """Recover the traceless field from ``exp(-i int H)`` data near a constant ``H0``.

    Per ray, ``B = dexp_invert(-i T A0, U - exp(-i T A0))`` with ``A0`` the
    traceless part of ``H0`` gives ``int (H - H0) = i B`` to first order;
    its hermitean traceless part is expanded in an orthonormal basis and each
    coefficient sinogram is inverted by FBP. Rays within ``sing_margin`` of a
    singular chord length are skipped and filled from their neighbours.
    """
    t0 = time.perf_counter()
    a0, _ = traceless_split(h0)
    n = a0.shape[0]
    basis = traceless_basis(n)
    report = ReconstructionReport("linearized")
    lengths = rays.lengths
    sing = singular_lengths(-1j * a0, float(lengths.max())) if len(lengths) else None
    ok = np.ones(len(rays), dtype=bool)
    if sing is not None and len(sing):
        near = np.min(np.abs(lengths[:, None] - sing.lengths[None, :]), axis=1) < sing_margin
        for i in np.nonzero(near)[0]:
            report.skipped_rays.append({"ray": int(i), "reason": "near singular length"})
        ok &= ~near
    dec = eigh(a0)
    lam, v = dec.eigenvalues, dec.eigenvectors
    base = (v * np.exp(-1j * lengths[:, None] * lam)[:, None, :]) @ dagger(v)
    b, good = dexp_invert_scaled(-1j * a0, lengths, data.values - base)
    for i in np.nonzero(ok & ~good)[0]:
        report.skipped_rays.append({"ray": int(i), "reason": "SingularDerivative"})
    ok &= good
    if (~ok).mean() > skip_limit:
        raise TooManySkipped(f"{(~ok).sum()} of {len(ok)} rays skipped (limit {skip_limit:.0%})")
    line = 1j * b
    line = 0.5 * (line + dagger(line))
    coeffs = _fill_along_offsets(basis_coefficients(line, basis), ok, rays)
    recovered = np.stack([fbp_invert(coeffs[:, a], rays, grid) for a in range(len(basis))], axis=-1)
    values = a0 + from_coefficients(recovered, basis)
    # misfit of the background alone; the linear model has no iterate to refit
    report.residuals.append(float(np.sqrt(np.sum(np.abs(data.values - base) ** 2))))
    if truth is not None:
        mask = disk_mask(grid, 0.9)
        true_vals = sample_on_grid(traceless_field(truth)[0], grid)
        report.field_error = relative_error(values - a0, true_vals - a0, mask)
    report.iterations = 1
    report.stop_reason = "direct"
    report.seconds = time.perf_counter() - t0
    return GridField(grid, values), report


# ---------------------------------------------------------------- iterative solvers


class ConjugationOperator:
    """Real-linear map from grid coefficients to per-ray matrices.

    ``x`` holds ``n_b`` real coefficients per grid cell. At quadrature node
    ``k`` the interpolated coefficients multiply precomputed matrices
    ``M_{k,a} = w_k A_k E_{k,a} B_k`` and the products sum along each ray.
    The adjoint is taken with respect to ``<X, Y> = Re tr(X* Y)``.
    """

    def __init__(self, interp, mats, ptr, ray_index):
        self.interp = interp
        self.interp_t = interp.T.tocsr()
        self.mats = mats  # (nodes, n_b, N, N)
        self.ptr = ptr
        self.ray_index = ray_index
        self.n_cells = interp.shape[1]
        self.n_b = mats.shape[1]

    def forward(self, x):
        z = self.interp @ x.reshape(self.n_cells, self.n_b)
        per_node = np.einsum("ka,kaij->kij", z, self.mats)
        return np.add.reduceat(per_node, self.ptr[:-1], axis=0)

    def adjoint(self, r):
        g = np.real(np.einsum("kaij,kij->ka", np.conj(self.mats), r[self.ray_index]))
        return np.asarray(self.interp_t @ g).reshape(-1)

    def norm_estimate(self, iters=10, seed=0):
        """Largest eigenvalue of ``A* A`` by power iteration."""
        x = np.random.default_rng(seed).standard_normal(self.n_cells * self.n_b)
        lam = 0.0
        for _ in range(iters):
            x /= np.linalg.norm(x)
            y = self.adjoint(self.forward(x))
            lam = float(np.dot(x, y))
            x = y
        return lam


def landweber(op, rhs, iters, step=None):
    """``x <- x + step * A*(b - A x)`` from ``x = 0``, step ``1 / lambda_max``."""
    if step is None:
        step = 1.0 / (1.01 * op.norm_estimate())
    x = np.zeros(op.n_cells * op.n_b)
    r = rhs.copy()
    for _ in range(iters):
        x += step * op.adjoint(r)
        r = rhs - op.forward(x)
    return x


def cgls(op, rhs, iters):
    """Conjugate gradients on the normal equations, from ``x = 0``."""
    x = np.zeros(op.n_cells * op.n_b)
    r = rhs.copy()
    s = op.adjoint(r)
    p = s.copy()
    gamma = float(np.dot(s, s))
    for _ in range(iters):
        if gamma == 0.0:
            break
        q = op.forward(p)
        alpha = gamma / float(np.sum(np.abs(q) ** 2))
        x += alpha * p
        r -= alpha * q
        s = op.adjoint(r)
        gamma_new = float(np.dot(s, s))
        p = s + (gamma_new / gamma) * p
        gamma = gamma_new
    return x


INNER_SOLVERS = {"landweber": landweber, "cgls": cgls}


def _conjugation_mats(sw, per_node_basis):
    """``w_k A_k E_{k,a} B_k`` for node-wise (or shared) basis matrices."""
    left = sw.left[:, None]
    right = sw.right[:, None]
    e = per_node_basis if per_node_basis.ndim == 4 else per_node_basis[None]
    return (left @ e @ right) * sw.nodes.widths[:, None, None, None]


def _outer_loop(data, rays, grid, h, make_field, make_basis, x0, n_b, max_iters, inner_iters, solver, report):
    """Shared Gauss-Newton loop for the matrix and scalar unknowns."""
    inner = INNER_SOLVERS[solver]
    x = x0.copy()
    interp = None
    increases = 0
    prev = None
    for it in range(max_iters + 1):
        current = make_field(x)
        sw = sweep(current, rays, h)
        r = data.values - sw.total
        res = float(np.sqrt(np.sum(np.abs(r) ** 2)))
        report.residuals.append(res)
        log.info("outer iteration %d: residual %.4e", it, res)
        if prev is not None:
            if res > prev:
                increases += 1
                if increases >= 2:
                    raise Diverged(f"residual grew twice in a row ({report.residuals[-3:]})")
            else:
                increases = 0
            if prev > 0 and (prev - res) / prev < STALL:
                report.stop_reason = "stalled"
                break
        if res == 0.0:
            report.stop_reason = "exact"
            break
        if it == max_iters:
            report.stop_reason = "max_iters"
            break
        if interp is None:
            interp = interpolation_matrix(grid, sw.nodes.points)
        op = ConjugationOperator(interp, _conjugation_mats(sw, make_basis(sw.nodes)), sw.nodes.ptr, sw.nodes.ray_index)
        # U_true - U_k = -i * (weighted transform of the update)
        dx = inner(op, 1j * r, inner_iters)
        x = x + dx
        report.iterations = it + 1
        report.inner_iterations += inner_iters
        prev = res
    return x


def reconstruct_pseudolinear(
    data, initial_guess, rays, grid, max_iters=8, inner_iters=20, h=None, truth=None, solver="landweber"
):
    """Pseudolinearization iteration for a traceless matrix field.

    Each outer step solves ``(weighted transform)[delta] = i (U_data - U_k)``
    with weight ``Z -> U_k(T, t) Z U_k(t, 0)`` for ``inner_iters`` steps of
    the inner solver, then adds ``delta``. Stops when the residual falls by
    less than 1% in an iteration.
    """
    t0 = time.perf_counter()
    h = grid.spacing[0] if h is None else h
    n = initial_guess.n
    basis = traceless_basis(n)
    guess = sample_on_grid(traceless_field(initial_guess)[0], grid)
    x0 = basis_coefficients(guess, basis).reshape(-1)
    report = ReconstructionReport("pseudolinear")

    def make_field(x):
        return GridField(grid, from_coefficients(x.reshape(grid.dims + (len(basis),)), basis))

    x = _outer_loop(data, rays, grid, h, make_field, lambda nodes: basis, x0, len(basis), max_iters, inner_iters, solver, report)
    result = make_field(x)
    if truth is not None:
        mask = disk_mask(grid, 1.0)
        report.field_error = relative_error(result.values, sample_on_grid(traceless_field(truth)[0], grid), mask)
    report.seconds = time.perf_counter() - t0
    report.extra["solver"] = solver
    report.extra["h"] = h
    return result, report


def reconstruct_scalar_coefficient(
    data, h0, g, rays, grid, max_iters=10, inner_iters=20, h=None, truth=None, g_min=1e-3, solver="landweber", f0=None
):
    """Recover scalar ``f`` in ``H = H0 + f G`` from calibrated ideal data.

    Identity parts of ``H0`` and ``G`` only change the global phase, which
    the calibrated data no longer carries, so both enter through their
    traceless parts. ``G`` must stay at least ``g_min`` away from multiples
    of the identity at every grid and quadrature node.
    """
    t0 = time.perf_counter()
    h = grid.spacing[0] if h is None else h
    a0 = traceless_field(h0)[0]
    gt = traceless_field(g)[0]
    norms = np.sqrt(np.sum(np.abs(sample_on_grid(gt, grid)) ** 2, axis=(-2, -1)))
    if norms.min() < g_min:
        raise WeightDegenerate(f"traceless part of G drops to {norms.min():.2e} (g_min {g_min:.1e})")
    report = ReconstructionReport("scalar")
    x0 = np.zeros(grid.size) if f0 is None else sample_on_grid(f0, grid).reshape(-1)

    def make_field(x):
        gv = sample_on_grid(gt, grid)
        return _ScalarSum(a0, GridField(grid, x.reshape(grid.dims)[..., None, None] * gv))

    def make_basis(nodes):
        gn = gt.eval(nodes.points)
        nn = np.sqrt(np.sum(np.abs(gn) ** 2, axis=(-2, -1)))
        if nn.min() < g_min:
            raise WeightDegenerate(f"traceless part of G drops to {nn.min():.2e} on a ray")
        return gn[:, None]

    x = _outer_loop(data, rays, grid, h, make_field, make_basis, x0, 1, max_iters, inner_iters, solver, report)
    result = GridScalar(grid, x.reshape(grid.dims))
    if truth is not None:
        mask = disk_mask(grid, 1.0)
        report.field_error = relative_error(result.values, sample_on_grid(truth, grid), mask)
    report.seconds = time.perf_counter() - t0
    report.extra["solver"] = solver
    report.extra["h"] = h
    return result, report


@dataclass(frozen=True)
class _ScalarSum:
    """``A0(x) + (f G)(x)`` as a field, the second part grid-backed."""

    a0: object
    fg: GridField

    @property
    def n(self):
        return self.fg.n

    def eval(self, x):
        return self.a0.eval(x) + self.fg.eval(x)
