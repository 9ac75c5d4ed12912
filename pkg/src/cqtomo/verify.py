"""Fixed-seed property suites behind ``cqtomo verify``.

Each check computes a nonnegative residual and compares it with a tolerance.
``tol_scale`` multiplies every tolerance; ``tol_scale=0`` is the injected
fault used to confirm that a suite can actually fail, and names the
invariants that did.
"""

from __future__ import annotations

import logging
import time
from dataclasses import asdict, dataclass

import numpy as np

from . import expcalc, gauge, matrix, propagator, xray
from .fields import AffineField, GaussianScalar, GridSpec, constant_field, phantom, zero_field
from .geometry import parallel_beam, unit_disk
from .matrix import PAULI, random_hermitean, random_unitary

log = logging.getLogger(__name__)

SUITES = ("matrix", "expcalc", "propagator", "gauge", "xray", "reconstruction")


@dataclass
class Check:
    name: str
    value: float
    tol: float
    passed: bool


def _rel(a, b):
    return float(np.linalg.norm(a - b) / max(np.linalg.norm(b), 1e-300))


# ---------------------------------------------------------------- suites


def _matrix(rng):
    hs = [random_hermitean(int(n), rng=rng) for n in rng.integers(2, 5, 20)]
    recon = orth = 0.0
    for h in hs:
        d = matrix.eigh(h)
        recon = max(recon, float(np.linalg.norm(d.reconstruct() - h)))
        v = d.eigenvectors
        orth = max(orth, float(np.linalg.norm(matrix.dagger(v) @ v - np.eye(len(v)))))
    us = [matrix.expm_hermitean(h, 2.7) for h in hs]
    unit = max(float(np.linalg.norm(matrix.dagger(u) @ u - np.eye(len(u)))) for u in us)
    buf = b"".join(matrix.serialize_matrix(u) for u in us)
    off, worst = 0, 0.0
    for u in us:
        m, off = matrix.deserialize_matrix(buf, off)
        worst = max(worst, float(np.abs(m - u).max()))
    basis = matrix.traceless_basis(3)
    gram = np.real(np.einsum("aij,bji->ab", basis, basis))
    return [
        ("eigh reconstruction", recon, 1e-11),
        ("eigenvector orthonormality", orth, 1e-11),
        ("exp of hermitean is unitary", unit, 1e-11),
        ("serialization round trip", worst, 0.0),
        ("traceless basis orthonormal", float(np.abs(gram - np.eye(8)).max()), 1e-12),
    ]


def _expcalc(rng):
    ad_err = fd_ratio = inv = 0.0
    for _ in range(10):
        a = 1j * random_hermitean(3, rng=rng)
        b = 1j * random_hermitean(3, rng=rng)
        # Ad_{exp A} B against sum of ad_A^k B / k!
        series, term = b.copy(), b.copy()
        for k in range(1, 40):
            term = expcalc.ad(a, term) / k
            series = series + term
        ad_err = max(ad_err, _rel(expcalc.Ad(matrix.mat_exp(a), b), series))
        d = expcalc.dexp(a, b)
        errs = [np.linalg.norm((matrix.mat_exp(a + s * b) - matrix.mat_exp(a)) / s - d) for s in (1e-3, 1e-4)]
        fd_ratio = max(fd_ratio, abs(errs[0] / errs[1] - 10.0))
        inv = max(inv, _rel(expcalc.dexp(a, expcalc.dexp_invert(a, d)), d))
    v = random_unitary(3, rng=rng)
    lam = rng.normal(size=3)
    a = v @ np.diag(lam) @ matrix.dagger(v)
    b = v @ np.diag(lam + 2 * np.pi * np.array([1, -2, 0])) @ matrix.dagger(v)
    agree = 0.0 if expcalc.same_exponential(a, b) else 1.0
    return [
        ("Ad exp equals exp ad", ad_err, 1e-12),
        ("dexp finite-difference decay", fd_ratio, 2.0),
        ("dexp_invert round trip", inv, 1e-10),
        ("periodic eigenspaces detect 2 pi shifts", agree, 0.5),
    ]


def _smooth_field(rng, n):
    terms = []
    for _ in range(3):
        c = rng.uniform(-0.5, 0.5, 2)
        terms.append((GaussianScalar(float(rng.uniform(0.5, 2.0)), tuple(c), float(rng.uniform(0.2, 0.5))), random_hermitean(n, rng=rng)))
    return AffineField(random_hermitean(n, rng=rng), tuple(terms))


def _propagator(rng):
    fam = parallel_beam(unit_disk(), 6, 5)
    unit = comp = 0.0
    for n in (2, 3):
        fld = _smooth_field(rng, n)
        u = propagator.evolve_family(fld, fam)
        unit = max(unit, float(propagator.unitarity_residual(u).max()))
        ray = fam[len(fam) // 2]
        s = 0.37 * ray.length
        left = propagator.evolve_interval(fld, ray, s, ray.length)
        right = propagator.evolve_interval(fld, ray, 0.0, s)
        comp = max(comp, float(np.linalg.norm(left @ right - propagator.evolve(fld, ray))))
    fld = phantom("two_bumps", {"scale": 3.0})
    ray = fam[len(fam) // 2]
    hs = [ray.length / k for k in (16, 32, 64)]
    us = [propagator.evolve(fld, ray, h) for h in hs]
    ratio = np.linalg.norm(us[0] - us[1]) / np.linalg.norm(us[1] - us[2])
    c = random_hermitean(2, rng=rng)
    const = _rel(propagator.evolve(constant_field(c), ray), matrix.expm_hermitean(c, ray.length))
    return [
        ("unitarity", unit, 1e-10),
        ("composition", comp, 1e-12),
        ("second-order Richardson ratio", float(abs(ratio - 4.0)), 0.5),
        ("constant field equals matrix exponential", const, 1e-12),
    ]


def _gauge(rng):
    rec = 0.0
    for n in (2, 3, 4):
        for _ in range(5):
            u = random_unitary(n, rng=rng)
            v = gauge.recover_unitary_up_to_phase(gauge.amplitude_oracle(u), n)
            rec = max(rec, gauge.phase_distance(u, v))
    fam = parallel_beam(unit_disk(), 4, 3)
    fld = _smooth_field(rng, 2)
    shifted = AffineField(fld.base, fld.terms + ((GaussianScalar(1.3, (0.1, 0.0), 0.4), np.eye(2)),))
    blind = float(np.abs(gauge.measure(fld, fam).values - gauge.measure(shifted, fam).values).max())
    u = random_unitary(2, rng=rng)
    alpha, beta, theta = rng.uniform(0, 2 * np.pi, 3)
    found = gauge.gauge_equivalent_2d(u, gauge.gauge_apply(u, alpha, beta, theta))
    ok = 0.0 if found is not None else 1.0
    dim2 = abs(gauge.symmetry_dimension(random_unitary(2, rng=rng)) - 3)
    return [
        ("recovery up to phase", rec, 1e-9),
        ("amplitudes blind to f I", blind, 1e-9),
        ("2x2 gauge pair recovered", ok, 0.5),
        ("2x2 symmetry dimension is 3", float(dim2), 0.5),
    ]


def _xray(rng):
    g = GridSpec.square(64)
    fam = parallel_beam(unit_disk(), 90, 93)
    f = GaussianScalar(1.0, (0.1, -0.05), 0.18)
    s = xray.xray_scalar(f, fam, 1.0 / 128)
    mask = np.linalg.norm(g.nodes(), axis=-1) <= 1.0
    fv = f.eval(g.nodes())
    pi = xray.back_project(s, fam, g)
    i1 = xray.riesz(fv, g, 1.0)
    rec = xray.fbp_invert(s, fam, g)
    g16 = GridSpec.square(16)
    f16 = GaussianScalar(1.0, (0.1, 0.0), 0.35).eval(g16.nodes())
    direct = _rel(xray.riesz(f16, g16, 1.0), xray.riesz_direct(f16, g16, 1.0, sub=2))
    return [
        ("back-projection of X-ray equals I_1", _rel(pi[mask], i1[mask]), 0.05),
        ("FBP inverts the X-ray transform", _rel(rec[mask], fv[mask]), 0.02),
        ("Riesz FFT matches direct sum", direct, 0.01),
    ]


def _reconstruction(rng):
    from .reconstruction import reconstruct_linearized, reconstruct_pseudolinear

    h0 = np.diag([0.0, 1.0]).astype(complex)
    truth = AffineField(h0, ((GaussianScalar(1e-3, (0.15, -0.1), 0.3), PAULI["sigma3"]),))
    fam = parallel_beam(unit_disk(), 90, 49)
    data = gauge.measure(truth, fam, mode="ideal_unitary", ordered=False)
    _, rep = reconstruct_linearized(data, h0, fam, GridSpec.square(32), truth=truth)
    small = parallel_beam(unit_disk(), 48, 25)
    truth2 = phantom("two_bumps", {"scale": 0.3})
    data2 = gauge.measure(truth2, small, mode="ideal_unitary", h=1.0 / 64, recover=False)
    _, rep2 = reconstruct_pseudolinear(data2, zero_field(2), small, GridSpec.square(16), max_iters=3, inner_iters=10)
    drop = rep2.residuals[-1] / rep2.residuals[0]
    return [
        ("linearized round trip error", float(rep.field_error), 0.1),
        ("pseudolinear residual decreases", float(drop), 0.5),
    ]


_RUNNERS = {
    "matrix": _matrix,
    "expcalc": _expcalc,
    "propagator": _propagator,
    "gauge": _gauge,
    "xray": _xray,
    "reconstruction": _reconstruction,
}


def run_suite(name, seed=0, tol_scale=1.0):
    """Run one suite (or ``all``) and return a JSON-ready summary."""
    if name == "all":
        parts = [run_suite(s, seed, tol_scale) for s in SUITES]
        return {
            "suite": "all",
            "passed": all(p["passed"] for p in parts),
            "checks": [dict(c, suite=p["suite"]) for p in parts for c in p["checks"]],
        }
    if name not in _RUNNERS:
        raise KeyError(name)
    t0 = time.perf_counter()
    rng = np.random.default_rng(seed)
    checks = []
    for cname, value, tol in _RUNNERS[name](rng):
        limit = tol * tol_scale
        checks.append(Check(cname, float(value), limit, bool(value <= limit)))
    for c in checks:
        if not c.passed:
            log.warning("suite %s: invariant %r failed (%.3e > %.3e)", name, c.name, c.value, c.tol)
    log.info("suite %s finished in %.1f s", name, time.perf_counter() - t0)
    return {"suite": name, "passed": all(c.passed for c in checks), "checks": [asdict(c) for c in checks]}


def failed_invariants(summary):
    return [c["name"] for c in summary["checks"] if not c["passed"]]
