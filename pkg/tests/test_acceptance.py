"""Acceptance criteria, one test each; every test prints a single PASS/FAIL line."""

import math
import time

import numpy as np
import pytest
from scipy.linalg import expm

from cqtomo import expcalc, gauge, xray
from cqtomo.errors import AmbiguousClustering, SingularDerivative
from cqtomo.fields import (
    ELECTRON_PROJECTOR,
    AffineField,
    GaussianScalar,
    GridSpec,
    NeutrinoParameters,
    constant_field,
    neutrino_hamiltonian,
    phantom,
    zero_field,
)
from cqtomo.geometry import parallel_beam, unit_disk
from cqtomo.matrix import PAULI, random_hermitean, random_unitary
from cqtomo.propagator import evolve, evolve_family, evolve_interval, unitarity_residual
from cqtomo.reconstruction import reconstruct_linearized, reconstruct_pseudolinear, reconstruct_scalar_coefficient


def verdict(number, ok, detail):
    print(f"{'PASS' if ok else 'FAIL'} criterion {number}: {detail}")
    assert ok, detail


def smooth_field(rng, n):
    terms = tuple(
        (GaussianScalar(float(rng.uniform(0.5, 2.0)), tuple(rng.uniform(-0.5, 0.5, 2)), float(rng.uniform(0.2, 0.5))), random_hermitean(n, rng=rng))
        for _ in range(3)
    )
    return AffineField(random_hermitean(n, rng=rng), terms)


def test_01_unitarity_and_composition():
    t0 = time.perf_counter()
    fam = parallel_beam(unit_disk(), 4, 3)
    unit = comp = 0.0
    for seed in range(100):
        rng = np.random.default_rng(seed)
        fld = smooth_field(rng, 2 + seed % 2)
        unit = max(unit, float(unitarity_residual(evolve_family(fld, fam)).max()))
        ray = fam[int(rng.integers(len(fam)))]
        s = float(rng.uniform(0.1, 0.9)) * ray.length
        u = evolve_interval(fld, ray, s, ray.length) @ evolve_interval(fld, ray, 0.0, s)
        comp = max(comp, float(np.linalg.norm(u - evolve(fld, ray))))
    dt = time.perf_counter() - t0
    ok = unit <= 1e-9 and comp <= 1e-9 and dt < 60
    verdict(1, ok, f"max unitarity {unit:.1e}, max composition {comp:.1e}, {dt:.1f} s")


def test_02_phase_gauge_blindness():
    fam = parallel_beam(unit_disk(), 6, 5)
    worst = 0.0
    for seed in range(20):
        rng = np.random.default_rng(1000 + seed)
        n = 2 + seed % 2
        fld = smooth_field(rng, n)
        f = GaussianScalar(float(rng.uniform(-3, 3)), tuple(rng.uniform(-0.4, 0.4, 2)), float(rng.uniform(0.2, 0.6)))
        shifted = AffineField(fld.base, fld.terms + ((f, np.eye(n)),))
        a = gauge.measure(fld, fam).values
        b = gauge.measure(shifted, fam).values
        worst = max(worst, float(np.abs(a - b).max()))
    verdict(2, worst <= 1e-9, f"max amplitude change under H + f I: {worst:.1e} over 20 pairs")


def test_03_integrator_order():
    fld = phantom("two_bumps", {"scale": 3.0})
    ray = parallel_beam(unit_disk(), 4, 5)[7]
    h = ray.length / 16
    us = [evolve(fld, ray, h / k) for k in (1, 2, 4)]
    ratio = float(np.linalg.norm(us[0] - us[1]) / np.linalg.norm(us[1] - us[2]))
    verdict(3, 3.5 <= ratio <= 4.5, f"Richardson ratio {ratio:.3f}")


def test_04_same_exponential_oracle():
    disagree = aborts = 0
    for trial in range(1000):
        rng = np.random.default_rng(5000 + trial)
        n = int(rng.integers(2, 5))
        a = random_hermitean(n, rng=rng)
        if trial < 500:
            lam, v = np.linalg.eigh(a)
            shift = 2 * np.pi * rng.integers(-3, 4, n)
            b = v @ np.diag(lam + shift) @ v.conj().T
        else:
            b = random_hermitean(n, rng=rng)
        direct = np.linalg.norm(expm(1j * a) - expm(1j * b)) <= 1e-8
        try:
            ans = expcalc.same_exponential(a, b)
        except AmbiguousClustering:
            aborts += 1
            continue
        disagree += ans != direct
    ok = disagree == 0 and aborts < 10
    verdict(4, ok, f"{disagree} disagreements, {aborts} ambiguous aborts in 1000 trials")


def test_05_dexp():
    ratios, inv = [], 0.0
    for seed in range(100):
        rng = np.random.default_rng(7000 + seed)
        n = 2 + seed % 3
        a = 1j * random_hermitean(n, rng=rng)
        b = 1j * random_hermitean(n, rng=rng)
        d = expcalc.dexp(a, b)
        errs = [np.linalg.norm((expm(a + s * b) - expm(a)) / s - d) for s in (1e-3, 1e-4)]
        ratios.append(errs[0] / errs[1])
        try:
            inv = max(inv, float(np.linalg.norm(expcalc.dexp_invert(a, d) - b) / np.linalg.norm(b)))
        except SingularDerivative:
            pass
    hits = misses = 0
    for seed in range(20):
        rng = np.random.default_rng(8000 + seed)
        v = random_unitary(3, rng=rng)
        lam = np.array([0.0, 2 * np.pi * int(rng.integers(1, 3)), float(rng.uniform(0.3, 1.0))])
        lam = lam + float(rng.normal())
        c = 1j * random_hermitean(3, rng=rng)
        try:
            expcalc.dexp_invert(1j * v @ np.diag(lam) @ v.conj().T, c)
        except SingularDerivative:
            hits += 1
        off = lam + np.array([0.0, 0.05, 0.0])
        try:
            expcalc.dexp_invert(1j * v @ np.diag(off) @ v.conj().T, c)
        except SingularDerivative:
            misses += 1
    lo, hi = min(ratios), max(ratios)
    ok = 8 <= lo and hi <= 12 and inv <= 1e-8 and hits == 20 and misses == 0
    verdict(5, ok, f"FD decade factor in [{lo:.2f}, {hi:.2f}], round trip {inv:.1e}, singular hits {hits}/20, false {misses}/20")


@pytest.mark.slow
def test_06_linearized_round_trip():
    t0 = time.perf_counter()
    h0 = np.diag([0.0, 1.0]).astype(complex)
    truth = AffineField(h0, ((GaussianScalar(1e-3, (0.15, -0.1), 0.3), PAULI["sigma3"]),))
    fam = parallel_beam(unit_disk(), 180, 97)
    data = gauge.measure(truth, fam, mode="ideal_unitary", ordered=False)
    _, rep = reconstruct_linearized(data, h0, fam, GridSpec.square(64), truth=truth)
    dt = time.perf_counter() - t0
    ok = rep.field_error <= 0.05 and dt <= 300
    verdict(6, ok, f"relative error {rep.field_error:.4f} on r <= 0.9, {dt:.1f} s")


@pytest.mark.slow
def test_07_pseudolinear_round_trip():
    t0 = time.perf_counter()
    truth = phantom("two_bumps", {"scale": 0.3})
    fam = parallel_beam(unit_disk(), 120, 73)
    data = gauge.measure(truth, fam, mode="ideal_unitary")
    _, rep = reconstruct_pseudolinear(data, zero_field(2), fam, GridSpec.square(48), max_iters=8, inner_iters=20, truth=truth)
    dt = time.perf_counter() - t0
    drop = rep.residuals[0] / rep.residuals[-1]
    ok = drop >= 10 and rep.field_error <= 0.10 and dt <= 600
    verdict(7, ok, f"residual drop {drop:.0f}x, relative error {rep.field_error:.4f}, {dt:.1f} s")


@pytest.mark.slow
def test_08_scalar_coefficient_round_trip():
    t0 = time.perf_counter()
    params = NeutrinoParameters(random_unitary(3, seed=7), (0.0, 0.06, 2.0), 1.0)
    f_true = GaussianScalar(0.5, (0.1, -0.15), 0.25)
    fam = parallel_beam(unit_disk(), 120, 73)
    data = gauge.measure(neutrino_hamiltonian(params, f_true), fam, mode="ideal_unitary")
    g = constant_field(ELECTRON_PROJECTOR - np.eye(3) / 3)
    _, rep = reconstruct_scalar_coefficient(
        data, constant_field(params.vacuum()), g, fam, GridSpec.square(48), max_iters=10, inner_iters=20, truth=f_true
    )
    dt = time.perf_counter() - t0
    ok = rep.field_error <= 0.10 and dt <= 600
    verdict(8, ok, f"relative error of f {rep.field_error:.4f}, {dt:.1f} s")


def test_09_symmetry_dimension():
    d3 = [gauge.symmetry_dimension(random_unitary(3, seed=s)) for s in range(20)]
    d2 = [gauge.symmetry_dimension(random_unitary(2, seed=s)) for s in range(20)]
    n3, n2 = sum(d == 6 for d in d3), sum(d == 3 for d in d2)
    verdict(9, n3 == 20 and n2 == 20, f"3x3 dimension 6 on {n3}/20 (observed {sorted(set(d3))}), 2x2 dimension 3 on {n2}/20")


def test_10_gauge_checker():
    recovered = false_pos = 0
    for seed in range(500):
        rng = np.random.default_rng(9000 + seed)
        u = random_unitary(2, rng=rng)
        v = gauge.gauge_apply(u, *rng.uniform(-np.pi, np.pi, 3))
        found = gauge.gauge_equivalent_2d(u, v)
        recovered += found is not None and np.linalg.norm(gauge.gauge_apply(u, *found) - v) <= 1e-9
        false_pos += gauge.gauge_equivalent_2d(u, random_unitary(2, rng=rng)) is not None
    verdict(10, recovered == 500 and false_pos == 0, f"recovered {recovered}/500, false positives {false_pos}/500")


@pytest.mark.slow
def test_11_back_projection_is_riesz():
    grid = GridSpec.square(128)
    fam = parallel_beam(unit_disk(), 180, 185)
    f = GaussianScalar(1.0, (0.1, -0.05), 0.15)
    pi = xray.back_project(xray.xray_scalar(f, fam, 1 / 256), fam, grid)
    i1 = xray.riesz(f.eval(grid.nodes()), grid, 1.0)
    m = np.linalg.norm(grid.nodes(), axis=-1) <= 1.0
    err = float(np.linalg.norm(pi[m] - i1[m]) / np.linalg.norm(i1[m]))
    c1 = xray.riesz_constant(1.0)
    ok = err <= 0.05 and math.isclose(c1, 1 / (2 * math.pi), rel_tol=1e-12)
    verdict(11, ok, f"relative discrepancy {err:.2e}, c_1 = {c1:.6f}")


def test_12_ideal_data_recovery():
    worst = 0.0
    for seed in range(200):
        n = 2 + seed % 3
        u = random_unitary(n, seed=seed)
        v = gauge.recover_unitary_up_to_phase(gauge.amplitude_oracle(u), n)
        worst = max(worst, gauge.phase_distance(u, v))
    verdict(12, worst <= 1e-7, f"max phase distance {worst:.1e} over 200 Haar unitaries")
