"""Convex domains, chords and ray families.

Rays are stored as arrays (entry points, unit directions, lengths) so that the
propagator and the transforms can work on whole families at once. A family is
fully determined by its JSON header; the arrays are regenerated from it.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .errors import ConfigError, NoIntersection

LEN_TOL = 1e-9


class ConvexDomain:
    dim: int

    def chord_params(self, points, directions):
        """Entry and exit parameters for lines ``x + t v``; NaN where missed."""
        raise NotImplementedError

    def contains(self, x, tol=1e-9):
        raise NotImplementedError

    def boundary_residual(self, x):
        raise NotImplementedError

    def half_width(self, normal):
        """Half the extent of the domain along ``normal`` and the projected centre."""
        raise NotImplementedError

    def to_dict(self):
        raise NotImplementedError


@dataclass(frozen=True)
class Ball(ConvexDomain):
    center: tuple
    radius: float

    def __post_init__(self):
        c = tuple(float(v) for v in self.center)
        if len(c) not in (2, 3):
            raise ValueError("ball center must have 2 or 3 coordinates")
        if not self.radius > 0:
            raise ValueError("ball radius must be positive")
        object.__setattr__(self, "center", c)
        object.__setattr__(self, "radius", float(self.radius))

    @property
    def dim(self):
        return len(self.center)

    def chord_params(self, points, directions):
        p = np.atleast_2d(points) - np.asarray(self.center)
        v = np.atleast_2d(directions)
        b = np.sum(p * v, axis=1)
        c = np.sum(p * p, axis=1) - self.radius**2
        disc = b * b - c
        root = np.sqrt(np.where(disc > 0, disc, np.nan))
        return -b - root, -b + root

    def contains(self, x, tol=1e-9):
        d = np.linalg.norm(np.atleast_2d(x) - np.asarray(self.center), axis=1)
        return d <= self.radius + tol

    def boundary_residual(self, x):
        return np.abs(np.linalg.norm(np.atleast_2d(x) - np.asarray(self.center), axis=1) - self.radius)

    def half_width(self, normal):
        return self.radius, float(np.dot(self.center, normal))

    @property
    def bounds(self):
        c = np.asarray(self.center)
        return c - self.radius, c + self.radius

    def to_dict(self):
        return {"kind": "ball", "center": list(self.center), "radius": self.radius}


@dataclass(frozen=True)
class Box(ConvexDomain):
    lo: tuple
    hi: tuple

    def __post_init__(self):
        lo = tuple(float(v) for v in self.lo)
        hi = tuple(float(v) for v in self.hi)
        if len(lo) != len(hi) or len(lo) not in (2, 3):
            raise ValueError("box corners must both have 2 or 3 coordinates")
        if not all(a < b for a, b in zip(lo, hi)):
            raise ValueError("box requires min < max componentwise")
        object.__setattr__(self, "lo", lo)
        object.__setattr__(self, "hi", hi)

    @property
    def dim(self):
        return len(self.lo)

    def chord_params(self, points, directions):
        p = np.atleast_2d(points)
        v = np.atleast_2d(directions)
        lo, hi = np.asarray(self.lo), np.asarray(self.hi)
        t_in = np.full(p.shape[0], -np.inf)
        t_out = np.full(p.shape[0], np.inf)
        miss = np.zeros(p.shape[0], dtype=bool)
        with np.errstate(divide="ignore", invalid="ignore"):
            for i in range(p.shape[1]):
                par = np.abs(v[:, i]) < 1e-15
                t1 = (lo[i] - p[:, i]) / v[:, i]
                t2 = (hi[i] - p[:, i]) / v[:, i]
                # a line parallel to a slab misses unless it lies inside it
                miss |= par & ((p[:, i] < lo[i]) | (p[:, i] > hi[i]))
                t_in = np.where(par, t_in, np.maximum(t_in, np.minimum(t1, t2)))
                t_out = np.where(par, t_out, np.minimum(t_out, np.maximum(t1, t2)))
        bad = miss | ~(t_out > t_in)
        return np.where(bad, np.nan, t_in), np.where(bad, np.nan, t_out)

    def contains(self, x, tol=1e-9):
        x = np.atleast_2d(x)
        return np.all((x >= np.asarray(self.lo) - tol) & (x <= np.asarray(self.hi) + tol), axis=1)

    def boundary_residual(self, x):
        x = np.atleast_2d(x)
        lo, hi = np.asarray(self.lo), np.asarray(self.hi)
        # distance to the nearest face for points inside, to the box for outside
        inside_gap = np.min(np.minimum(x - lo, hi - x), axis=1)
        outside = np.linalg.norm(np.maximum(0, np.maximum(lo - x, x - hi)), axis=1)
        return np.where(outside > 0, outside, np.abs(inside_gap))

    def half_width(self, normal):
        lo, hi = np.asarray(self.lo), np.asarray(self.hi)
        half = 0.5 * (hi - lo)
        return float(np.sum(np.abs(normal) * half)), float(np.dot(0.5 * (lo + hi), normal))

    @property
    def bounds(self):
        return np.asarray(self.lo), np.asarray(self.hi)

    def to_dict(self):
        return {"kind": "box", "min": list(self.lo), "max": list(self.hi)}


def domain_from_dict(d):
    kind = d.get("kind")
    try:
        if kind == "ball":
            return Ball(tuple(d["center"]), float(d["radius"]))
        if kind == "box":
            return Box(tuple(d["min"]), tuple(d["max"]))
    except KeyError as exc:
        raise ConfigError(f"domain is missing key {exc.args[0]!r}") from None
    raise ConfigError(f"unknown domain kind {kind!r}")


def unit_disk():
    return Ball((0.0, 0.0), 1.0)


@dataclass(frozen=True)
class Ray:
    entry: np.ndarray
    direction: np.ndarray
    length: float

    def point(self, t):
        t = np.asarray(t, dtype=float)
        return self.entry + t[..., None] * self.direction

    @property
    def exit(self):
        return self.entry + self.length * self.direction


def _unit(v):
    v = np.asarray(v, dtype=float)
    n = np.linalg.norm(v)
    if abs(n - 1.0) > 1e-12:
        raise ValueError(f"direction must be a unit vector (|v| = {n!r})")
    return v


def chord(domain, point, direction):
    """Maximal chord of ``domain`` along the line through ``point``."""
    p = np.asarray(point, dtype=float)
    v = _unit(direction)
    t_in, t_out = domain.chord_params(p[None], v[None])
    t_in, t_out = float(t_in[0]), float(t_out[0])
    if not np.isfinite(t_in) or not np.isfinite(t_out) or t_out - t_in < LEN_TOL:
        raise NoIntersection(f"line through {p.tolist()} along {v.tolist()} misses the domain")
    return Ray(p + t_in * v, v, t_out - t_in)


@dataclass
class RayFamily:
    """Ordered rays plus their index labels.

    ``labels`` maps a label name (``angle``, ``offset``, ``plane``,
    ``orientation``) to an integer array aligned with the rays. ``dropped``
    records the label tuples of lines that missed or grazed the domain.
    """

    domain: ConvexDomain
    entries: np.ndarray
    directions: np.ndarray
    lengths: np.ndarray
    labels: dict
    header: dict
    dropped: list = field(default_factory=list)

    def __len__(self):
        return len(self.lengths)

    def __getitem__(self, i):
        return Ray(self.entries[i], self.directions[i], float(self.lengths[i]))

    def __iter__(self):
        for i in range(len(self)):
            yield self[i]

    def subset(self, idx):
        idx = np.asarray(idx)
        return RayFamily(
            self.domain,
            self.entries[idx],
            self.directions[idx],
            self.lengths[idx],
            {k: v[idx] for k, v in self.labels.items()},
            dict(self.header, subset=True),
        )

    def groups(self):
        """Index arrays of rays sharing everything but the offset label."""
        keys = [k for k in ("orientation", "plane", "angle") if k in self.labels]
        if not keys:
            return [np.arange(len(self))]
        stacked = np.stack([self.labels[k] for k in keys], axis=1)
        _, inverse = np.unique(stacked, axis=0, return_inverse=True)
        inverse = np.ravel(inverse)
        out = []
        for g in range(inverse.max() + 1 if len(inverse) else 0):
            idx = np.nonzero(inverse == g)[0]
            out.append(idx[np.argsort(self.labels["offset"][idx], kind="stable")])
        return out


def _offsets(n, half):
    # cell-centred so that an odd count puts the middle line through the centre
    return -half + (np.arange(n) + 0.5) * (2.0 * half / n)


def _clip(domain, points, dirs, labels):
    t_in, t_out = domain.chord_params(points, dirs)
    ok = np.isfinite(t_in) & np.isfinite(t_out) & (t_out - t_in >= LEN_TOL)
    dropped = [tuple(int(labels[k][i]) for k in labels) for i in np.nonzero(~ok)[0]]
    entries = points[ok] + t_in[ok, None] * dirs[ok]
    return entries, dirs[ok], (t_out - t_in)[ok], {k: v[ok] for k, v in labels.items()}, dropped


def parallel_beam(domain, n_angles, n_offsets):
    """Parallel-beam family: angles ``a pi / n_angles``, offsets across the width."""
    if domain.dim != 2:
        raise ValueError("parallel_beam needs a 2D domain")
    if n_angles < 1 or n_offsets < 1:
        raise ValueError("n_angles and n_offsets must be at least 1")
    pts, dirs, ang, off = [], [], [], []
    for a in range(n_angles):
        th = math.pi * a / n_angles
        v = np.array([math.cos(th), math.sin(th)])
        nrm = np.array([-math.sin(th), math.cos(th)])
        half, centre = domain.half_width(nrm)
        s = centre + _offsets(n_offsets, half)
        pts.append(s[:, None] * nrm)
        dirs.append(np.broadcast_to(v, (n_offsets, 2)))
        ang.append(np.full(n_offsets, a))
        off.append(np.arange(n_offsets))
    labels = {"angle": np.concatenate(ang), "offset": np.concatenate(off)}
    entries, d, lengths, labels, dropped = _clip(domain, np.concatenate(pts), np.concatenate(dirs), labels)
    header = {"kind": "parallel_beam", "domain": domain.to_dict(), "n_angles": n_angles, "n_offsets": n_offsets}
    return RayFamily(domain, entries, d, lengths, labels, header, dropped)


def beam_3d(domain, n_planes, n_angles, n_offsets, orientations=(0, 1, 2)):
    """Parallel beams on axis-aligned slices, for each slice-normal axis."""
    if domain.dim != 3:
        raise ValueError("beam_3d needs a 3D domain")
    if min(n_planes, n_angles, n_offsets) < 1:
        raise ValueError("counts must be at least 1")
    lo, hi = domain.bounds
    pts, dirs, labels = [], [], {"orientation": [], "plane": [], "angle": [], "offset": []}
    for o in orientations:
        u, w = [k for k in range(3) if k != o]
        levels = lo[o] + (np.arange(n_planes) + 0.5) * (hi[o] - lo[o]) / n_planes
        for p, z in enumerate(levels):
            for a in range(n_angles):
                th = math.pi * a / n_angles
                v = np.zeros(3)
                v[u], v[w] = math.cos(th), math.sin(th)
                nrm = np.zeros(3)
                nrm[u], nrm[w] = -math.sin(th), math.cos(th)
                if isinstance(domain, Ball):
                    c = np.asarray(domain.center)
                    half = math.sqrt(max(domain.radius**2 - (z - c[o]) ** 2, 0.0))
                    centre = float(np.dot(c, nrm))
                else:
                    half, centre = domain.half_width(nrm)
                base = np.zeros(3)
                base[o] = z
                s = centre + _offsets(n_offsets, half)
                pts.append(base + s[:, None] * nrm)
                dirs.append(np.broadcast_to(v, (n_offsets, 3)))
                labels["orientation"].append(np.full(n_offsets, o))
                labels["plane"].append(np.full(n_offsets, p))
                labels["angle"].append(np.full(n_offsets, a))
                labels["offset"].append(np.arange(n_offsets))
    labels = {k: np.concatenate(v) for k, v in labels.items()}
    entries, d, lengths, labels, dropped = _clip(domain, np.concatenate(pts), np.concatenate(dirs), labels)
    header = {
        "kind": "beam_3d",
        "domain": domain.to_dict(),
        "n_planes": n_planes,
        "n_angles": n_angles,
        "n_offsets": n_offsets,
        "orientations": list(orientations),
    }
    return RayFamily(domain, entries, d, lengths, labels, header, dropped)


def family_from_header(header):
    """Regenerate a ray family from its JSON header."""
    try:
        domain = domain_from_dict(header["domain"])
        if header["kind"] == "parallel_beam":
            return parallel_beam(domain, int(header["n_angles"]), int(header["n_offsets"]))
        if header["kind"] == "beam_3d":
            return beam_3d(
                domain,
                int(header["n_planes"]),
                int(header["n_angles"]),
                int(header["n_offsets"]),
                tuple(header.get("orientations", (0, 1, 2))),
            )
    except KeyError as exc:
        raise ConfigError(f"ray family header is missing key {exc.args[0]!r}") from None
    raise ConfigError(f"unknown ray family kind {header.get('kind')!r}")


def step_count(length, h):
    if not h > 0:
        raise ValueError("step size h must be positive")
    # the small relative slack keeps T/h = 2.0000000000000004 at two steps
    return np.maximum(1, np.ceil(np.asarray(length) / h * (1.0 - 1e-12)).astype(np.int64))


@dataclass(frozen=True)
class Samples:
    t: np.ndarray
    points: np.ndarray
    widths: np.ndarray

    def __len__(self):
        return len(self.t)

    def __iter__(self):
        return iter(zip(self.t, self.points))


def sample(ray, h):
    """Midpoints of ``K = ceil(T/h)`` equal subintervals of ``[0, T]``."""
    k = int(step_count(ray.length, h))
    w = ray.length / k
    t = (np.arange(k) + 0.5) * w
    return Samples(t, ray.point(t), np.full(k, w))


@dataclass(frozen=True)
class FamilyNodes:
    """Quadrature nodes of a whole family, flattened ray after ray.

    Nodes of ray ``r`` occupy ``ptr[r]:ptr[r+1]``.
    """

    ptr: np.ndarray
    ray_index: np.ndarray
    t: np.ndarray
    points: np.ndarray
    widths: np.ndarray
    steps: np.ndarray

    @property
    def count(self):
        return len(self.t)


def nodes_for(entries, directions, lengths, h):
    """Quadrature nodes for rays given as arrays."""
    lengths = np.asarray(lengths, dtype=float)
    k = step_count(lengths, h)
    ptr = np.concatenate([[0], np.cumsum(k)])
    owner = np.repeat(np.arange(len(lengths)), k)
    local = np.arange(ptr[-1]) - ptr[owner]
    w = lengths / k
    t = (local + 0.5) * w[owner]
    pts = np.asarray(entries)[owner] + t[:, None] * np.asarray(directions)[owner]
    return FamilyNodes(ptr, owner, t, pts, w[owner], k)


def family_nodes(family, h, rays=None):
    idx = np.arange(len(family)) if rays is None else np.asarray(rays)
    return nodes_for(family.entries[idx], family.directions[idx], family.lengths[idx], h)
