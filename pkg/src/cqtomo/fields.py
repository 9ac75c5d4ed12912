"""Scalar and hermitean-matrix fields on 2D/3D domains.

Fields evaluate on arrays of points with shape ``(..., d)``. Closed-form
fields are affine in a few scalar profiles, ``H(x) = H_b + sum_k f_k(x) D_k``,
which keeps evaluation vectorised and makes the trace split exact. Grid
fields interpolate multilinearly between cell-centred nodes.
"""

from __future__ import annotations

import logging
import math
from dataclasses import dataclass

import numpy as np

from .errors import ConfigError, DimensionError, OutOfDomain, UnknownPhantom
from .matrix import PAULI, TOL_STRUCT, as_square, dagger, is_unitary, require_hermitean

log = logging.getLogger(__name__)


def _points(x):
    x = np.asarray(x, dtype=float)
    return x[None] if x.ndim == 1 else x


# ---------------------------------------------------------------- scalars


class ScalarField:
    dim: int | None = None

    def __call__(self, x):
        return self.eval(x)

    def eval(self, x):
        raise NotImplementedError

    def __add__(self, other):
        return SumScalar((self, other))

    def scaled(self, c):
        return ScaledScalar(self, float(c))


@dataclass(frozen=True)
class ConstantScalar(ScalarField):
    value: float = 0.0

    def eval(self, x):
        x = np.asarray(x, dtype=float)
        return np.full(x.shape[:-1], self.value)


@dataclass(frozen=True)
class GaussianScalar(ScalarField):
    """``a * exp(-|x - c|^2 / (2 s^2))``."""

    amplitude: float
    center: tuple
    width: float

    def eval(self, x):
        x = np.asarray(x, dtype=float)
        r2 = np.sum((x - np.asarray(self.center)) ** 2, axis=-1)
        return self.amplitude * np.exp(-r2 / (2.0 * self.width**2))


@dataclass(frozen=True)
class ScaledScalar(ScalarField):
    inner: ScalarField
    factor: float

    def eval(self, x):
        return self.factor * self.inner.eval(x)


@dataclass(frozen=True)
class SumScalar(ScalarField):
    terms: tuple

    def eval(self, x):
        x = np.asarray(x, dtype=float)
        out = np.zeros(x.shape[:-1])
        for t in self.terms:
            out = out + t.eval(x)
        return out


@dataclass(frozen=True)
class LayeredSphere(ScalarField):
    """Radial shells with smoothed steps, an Earth-like density profile.

    ``radii`` are decreasing shell radii and ``values`` the level inside each
    shell; the value outside the largest radius is ``outside``. Each step is a
    ``tanh`` ramp of width ``smoothing``.
    """

    center: tuple
    radii: tuple
    values: tuple
    smoothing: float = 0.02
    outside: float = 0.0

    def eval(self, x):
        x = np.asarray(x, dtype=float)
        r = np.linalg.norm(x - np.asarray(self.center), axis=-1)
        out = np.full(r.shape, self.outside)
        prev = self.outside
        for rad, val in zip(self.radii, self.values):
            step = 0.5 * (1.0 - np.tanh((r - rad) / self.smoothing))
            out = out + (val - prev) * step
            prev = val
        return out


# ---------------------------------------------------------------- grids


@dataclass(frozen=True)
class GridSpec:
    """Cell-centred grid: node ``i`` sits at ``origin + (i + 1/2) * spacing``."""

    origin: tuple
    spacing: tuple
    dims: tuple

    def __post_init__(self):
        object.__setattr__(self, "origin", tuple(float(v) for v in self.origin))
        object.__setattr__(self, "spacing", tuple(float(v) for v in self.spacing))
        object.__setattr__(self, "dims", tuple(int(v) for v in self.dims))
        if not (len(self.origin) == len(self.spacing) == len(self.dims)):
            raise DimensionError("grid origin, spacing and dims disagree in length")

    @classmethod
    def square(cls, n, lo=-1.0, hi=1.0, dim=2):
        h = (hi - lo) / n
        return cls((lo,) * dim, (h,) * dim, (n,) * dim)

    @property
    def ndim(self):
        return len(self.dims)

    @property
    def size(self):
        return int(np.prod(self.dims))

    def axes(self):
        return [o + (np.arange(n) + 0.5) * h for o, h, n in zip(self.origin, self.spacing, self.dims)]

    def nodes(self):
        """Node coordinates, shape ``dims + (d,)`` with C ordering."""
        mesh = np.meshgrid(*self.axes(), indexing="ij")
        return np.stack(mesh, axis=-1)

    def to_dict(self):
        return {"origin": list(self.origin), "spacing": list(self.spacing), "dims": list(self.dims)}


def interp_weights(grid, x):
    """Multilinear interpolation stencils on a cell-centred grid.

    Returns flat node indices and weights, both of shape ``(M, 2**d)``.
    Points up to half a cell beyond the outermost nodes' cells clamp to the
    boundary; anything farther out raises :class:`OutOfDomain`.
    """
    x = _points(x).reshape(-1, grid.ndim)
    idx = np.zeros((x.shape[0], 1), dtype=np.int64)
    wts = np.ones((x.shape[0], 1))
    stride = 1
    for axis in reversed(range(grid.ndim)):
        n, h, o = grid.dims[axis], grid.spacing[axis], grid.origin[axis]
        u = (x[:, axis] - o) / h - 0.5
        if np.any(u < -1.0 - 1e-9) or np.any(u > n + 1e-9):
            bad = x[(u < -1.0 - 1e-9) | (u > n + 1e-9)][0]
            raise OutOfDomain(f"point {bad.tolist()} lies outside the grid margin")
        u = np.clip(u, 0.0, n - 1.0)
        i0 = np.minimum(np.floor(u).astype(np.int64), max(n - 2, 0))
        frac = u - i0 if n > 1 else np.zeros_like(u)
        i1 = np.minimum(i0 + 1, n - 1)
        idx = np.concatenate([idx + i0[:, None] * stride, idx + i1[:, None] * stride], axis=1)
        wts = np.concatenate([wts * (1.0 - frac)[:, None], wts * frac[:, None]], axis=1)
        stride *= n
    return idx, wts


@dataclass(frozen=True)
class GridScalar(ScalarField):
    grid: GridSpec
    values: np.ndarray

    def eval(self, x):
        x = np.asarray(x, dtype=float)
        idx, w = interp_weights(self.grid, x)
        out = np.sum(self.values.reshape(-1)[idx] * w, axis=1)
        return out.reshape(x.shape[:-1])


# ---------------------------------------------------------------- matrix fields


class HamiltonianField:
    n: int

    def __call__(self, x):
        return self.eval(x)

    def eval(self, x):
        """Hermitean values at points ``x`` of shape ``(..., d)``; returns ``(..., N, N)``."""
        raise NotImplementedError


@dataclass(frozen=True)
class AffineField(HamiltonianField):
    """``H(x) = base + sum_k f_k(x) D_k`` with hermitean ``base`` and ``D_k``."""

    base: np.ndarray
    terms: tuple = ()

    def __post_init__(self):
        base = require_hermitean(self.base, TOL_STRUCT, "base")
        terms = tuple((f, require_hermitean(d, TOL_STRUCT, "D")) for f, d in self.terms)
        for _, d in terms:
            if d.shape != base.shape:
                raise DimensionError("field terms must match the base dimension")
        object.__setattr__(self, "base", base)
        object.__setattr__(self, "terms", terms)

    @property
    def n(self):
        return self.base.shape[0]

    def eval(self, x):
        x = np.asarray(x, dtype=float)
        out = np.broadcast_to(self.base, x.shape[:-1] + self.base.shape).copy()
        for f, d in self.terms:
            out += f.eval(x)[..., None, None] * d
        return out

    def __add__(self, other):
        if isinstance(other, AffineField):
            return AffineField(self.base + other.base, self.terms + other.terms)
        return NotImplemented


def constant_field(m):
    return AffineField(np.asarray(m, dtype=np.complex128))


def zero_field(n):
    return constant_field(np.zeros((n, n)))


@dataclass(frozen=True)
class GridField(HamiltonianField):
    grid: GridSpec
    values: np.ndarray  # shape dims + (N, N)

    def __post_init__(self):
        v = np.asarray(self.values, dtype=np.complex128)
        if v.shape[: self.grid.ndim] != self.grid.dims or v.shape[-1] != v.shape[-2]:
            raise DimensionError(f"grid values of shape {v.shape} do not fit dims {self.grid.dims}")
        object.__setattr__(self, "values", v)

    @property
    def n(self):
        return self.values.shape[-1]

    def eval(self, x):
        x = np.asarray(x, dtype=float)
        idx, w = interp_weights(self.grid, x)
        flat = self.values.reshape(-1, self.n, self.n)
        out = np.einsum("mk,mkij->mij", w, flat[idx])
        return out.reshape(x.shape[:-1] + (self.n, self.n))


@dataclass(frozen=True)
class SumField(HamiltonianField):
    parts: tuple

    @property
    def n(self):
        return self.parts[0].n

    def eval(self, x):
        out = self.parts[0].eval(x)
        for p in self.parts[1:]:
            out = out + p.eval(x)
        return out


def sample_on_grid(field, grid):
    """Evaluate a matrix or scalar field at the grid nodes."""
    return field.eval(grid.nodes())


def traceless_field(field):
    """Split a field pointwise as ``A(x) + f(x) I`` with ``tr A = 0``."""
    if isinstance(field, AffineField):
        n = field.n
        eye = np.eye(n)
        f0 = float(np.real(np.trace(field.base))) / n
        scal = [ConstantScalar(f0)]
        terms = []
        for f, d in field.terms:
            c = float(np.real(np.trace(d))) / n
            if abs(c) > 0:
                scal.append(f.scaled(c))
            terms.append((f, d - c * eye))
        trace = scal[0] if len(scal) == 1 else SumScalar(tuple(scal))
        return AffineField(field.base - f0 * eye, tuple(terms)), trace
    if isinstance(field, GridField):
        n = field.n
        f = np.real(np.trace(field.values, axis1=-2, axis2=-1)) / n
        a = field.values - f[..., None, None] * np.eye(n)
        return GridField(field.grid, a), GridScalar(field.grid, f)
    if isinstance(field, SumField):
        split = [traceless_field(p) for p in field.parts]
        return SumField(tuple(s[0] for s in split)), SumScalar(tuple(s[1] for s in split))
    raise TypeError(f"cannot split field of type {type(field).__name__}")


def with_trace(field, f):
    """``H + f I`` for a scalar field ``f``."""
    if isinstance(field, AffineField):
        return AffineField(field.base, field.terms + ((f, np.eye(field.n)),))
    return SumField((field, AffineField(np.zeros((field.n, field.n)), ((f, np.eye(field.n)),))))


# ---------------------------------------------------------------- neutrinos


@dataclass(frozen=True)
class NeutrinoParameters:
    pmns: np.ndarray
    mass_squares: tuple
    energy: float
    fermi_constant: float = 1.0
    antineutrino: bool = False

    def __post_init__(self):
        u = as_square(self.pmns, "pmns")
        if u.shape != (3, 3):
            raise DimensionError("the mixing matrix must be 3 x 3")
        if not is_unitary(u, TOL_STRUCT):
            raise ConfigError("the mixing matrix is not unitary")
        if not self.energy > 0:
            raise ConfigError("neutrino energy must be positive")
        if not self.fermi_constant > 0:
            raise ConfigError("fermi_constant must be positive")
        if len(self.mass_squares) != 3:
            raise ConfigError("three mass squares are required")
        object.__setattr__(self, "pmns", u)
        object.__setattr__(self, "mass_squares", tuple(float(m) for m in self.mass_squares))

    def vacuum(self):
        u = self.pmns
        return (u * np.asarray(self.mass_squares)) @ dagger(u) / (2.0 * self.energy)


def pmns_matrix(theta12, theta23, theta13, delta=0.0):
    """Mixing matrix in the standard ``R23 * U13(delta) * R12`` parametrization."""
    s12, c12 = math.sin(theta12), math.cos(theta12)
    s23, c23 = math.sin(theta23), math.cos(theta23)
    s13, c13 = math.sin(theta13), math.cos(theta13)
    e = complex(math.cos(delta), -math.sin(delta))
    r23 = np.array([[1, 0, 0], [0, c23, s23], [0, -s23, c23]], dtype=np.complex128)
    u13 = np.array([[c13, 0, s13 * e], [0, 1, 0], [-s13 / e, 0, c13]], dtype=np.complex128)
    r12 = np.array([[c12, s12, 0], [-s12, c12, 0], [0, 0, 1]], dtype=np.complex128)
    return r23 @ u13 @ r12


ELECTRON_PROJECTOR = np.diag([1.0, 0.0, 0.0]).astype(np.complex128)


def neutrino_hamiltonian(params, density, electron_density=False):
    """Vacuum mixing term plus the charged-current matter term.

    ``density`` is the scaled density ``f``; with ``electron_density=True`` it
    is read as ``N_e`` and scaled by ``2 sqrt(2) G_F``.
    """
    f = density.scaled(2.0 * math.sqrt(2.0) * params.fermi_constant) if electron_density else density
    sign = -1.0 if params.antineutrino else 1.0
    return AffineField(params.vacuum(), ((f, sign * params.energy * ELECTRON_PROJECTOR),))


# ---------------------------------------------------------------- config parsing


def parse_matrix(spec, n=None):
    """Matrix from a config value.

    Accepts a name (``sigma1``..``sigma3``, ``identity``, ``zero``, ``e11``),
    ``{"diag": [...]}``, or nested rows whose entries are reals or
    ``[re, im]`` pairs.
    """
    if isinstance(spec, str):
        if spec in PAULI:
            return PAULI[spec].copy()
        if n is None:
            raise ConfigError(f"matrix name {spec!r} needs a dimension")
        if spec == "identity":
            return np.eye(n, dtype=np.complex128)
        if spec == "zero":
            return np.zeros((n, n), dtype=np.complex128)
        if spec == "e11":
            m = np.zeros((n, n), dtype=np.complex128)
            m[0, 0] = 1.0
            return m
        raise ConfigError(f"unknown matrix name {spec!r}")
    if isinstance(spec, dict) and "diag" in spec:
        return np.diag(np.asarray(spec["diag"], dtype=float)).astype(np.complex128)
    try:
        rows = [[complex(e[0], e[1]) if isinstance(e, (list, tuple)) else complex(e) for e in row] for row in spec]
        return as_square(np.array(rows, dtype=np.complex128))
    except (TypeError, ValueError, IndexError, DimensionError) as exc:
        raise ConfigError(f"cannot parse matrix {spec!r}: {exc}") from None


def _bump(p, n, default_d):
    return GaussianScalar(
        float(p.get("amplitude", 1.0)),
        tuple(p.get("center", (0.0, 0.0))),
        float(p.get("width", 0.25)),
    ), parse_matrix(p.get("D", default_d), n)


PHANTOMS = ("constant", "gaussian_bump", "two_bumps", "layered_sphere")


def phantom(name, params=None):
    """Build a named test field from a parameter dict.

    ``constant``: ``a * D`` (``D`` defaults to the identity).
    ``gaussian_bump``: ``base + a exp(-|x-c|^2/2s^2) D``.
    ``two_bumps``: ``base`` plus two such bumps (``sigma1`` and ``sigma3``
    by default when ``N = 2``), all scaled by ``scale``.
    ``layered_sphere``: a :class:`LayeredSphere` scalar field.
    """
    p = dict(params or {})
    if name == "layered_sphere":
        return LayeredSphere(
            tuple(p.get("center", (0.0, 0.0))),
            tuple(p.get("radii", (1.0, 0.55, 0.2))),
            tuple(p.get("values", (1.0, 2.0, 3.0))),
            float(p.get("smoothing", 0.02)),
            float(p.get("outside", 0.0)),
        )
    if name not in PHANTOMS:
        raise UnknownPhantom(f"unknown phantom {name!r}; expected one of {', '.join(PHANTOMS)}")
    n = int(p.get("N", 2))
    base = parse_matrix(p.get("base", "zero"), n)
    if name == "constant":
        return constant_field(float(p.get("a", 1.0)) * parse_matrix(p.get("D", "identity"), n))
    if name == "gaussian_bump":
        return AffineField(base, (_bump(p, n, "sigma3" if n == 2 else "e11"),))
    scale = float(p.get("scale", 1.0))
    defaults = [
        {"amplitude": 1.0, "center": (-0.35, 0.2), "width": 0.22, "D": "sigma1" if n == 2 else "e11"},
        {"amplitude": 1.0, "center": (0.3, -0.25), "width": 0.18, "D": "sigma3" if n == 2 else "e11"},
    ]
    bumps = p.get("bumps", defaults)
    if len(bumps) != 2:
        raise ConfigError("two_bumps takes exactly two bumps")
    terms = []
    for b, d in zip(bumps, defaults):
        f, m = _bump({**d, **b}, n, d["D"])
        terms.append((f.scaled(scale), m))
    return AffineField(base, tuple(terms))
