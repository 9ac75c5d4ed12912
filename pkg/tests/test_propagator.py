import math

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from cqtomo import propagator as pg
from cqtomo.errors import InvalidInterval
from cqtomo.fields import AffineField, GaussianScalar, constant_field, phantom, zero_field
from cqtomo.geometry import chord, parallel_beam, unit_disk
from cqtomo.matrix import PAULI, dagger, expm_hermitean, random_hermitean

from conftest import seeds

DIAM = chord(unit_disk(), (0.0, 0.0), (1.0, 0.0))
OFF = chord(unit_disk(), (0.0, 0.3), (np.cos(0.4), np.sin(0.4)))


def smooth_field(seed, n=2, traceless=False):
    rng = np.random.default_rng(seed)
    terms = []
    for _ in range(3):
        d = random_hermitean(n, rng=rng)
        if traceless:
            d -= np.trace(d) / n * np.eye(n)
        terms.append((GaussianScalar(float(rng.uniform(0.5, 2)), tuple(rng.uniform(-0.5, 0.5, 2)), float(rng.uniform(0.2, 0.5))), d))
    base = random_hermitean(n, rng=rng)
    if traceless:
        base -= np.trace(base) / n * np.eye(n)
    return AffineField(base, tuple(terms))


def test_constant_field_is_matrix_exponential():
    h = random_hermitean(3, seed=3)
    assert np.linalg.norm(pg.evolve(constant_field(h), OFF) - expm_hermitean(h, OFF.length)) <= 1e-12
    assert np.allclose(pg.evolve(zero_field(2), DIAM), np.eye(2))


def test_step_halving_order_two():
    f = phantom("two_bumps", {"scale": 3.0})
    us = [pg.evolve(f, DIAM, DIAM.length / k) for k in (16, 32, 64)]
    ratio = np.linalg.norm(us[0] - us[1]) / np.linalg.norm(us[1] - us[2])
    assert 3.5 <= ratio <= 4.5


def test_family_matches_single_rays():
    fam = parallel_beam(unit_disk(), 5, 4)
    f = smooth_field(1, 3)
    us = pg.evolve_family(f, fam)
    for i in (0, 7, len(fam) - 1):
        assert np.allclose(us[i], pg.evolve(f, fam[i]), atol=1e-14)


def test_chunking_is_invisible(monkeypatch):
    fam = parallel_beam(unit_disk(), 6, 5)
    f = smooth_field(2)
    whole = pg.evolve_family(f, fam, 0.05)
    monkeypatch.setattr(pg, "CHUNK_ENTRIES", 64)
    assert np.array_equal(pg.evolve_family(f, fam, 0.05), whole)


@given(seeds, st.sampled_from([2, 3]))
def test_unitarity_and_special_unitarity(seed, n):
    u = pg.evolve(smooth_field(seed, n, traceless=True), OFF)
    assert pg.unitarity_residual(u) <= 1e-9
    assert abs(np.linalg.det(u) - 1) <= 1e-9


def test_evolve_interval_examples():
    f = smooth_field(4)
    t = OFF.length
    assert np.allclose(pg.evolve_interval(f, OFF, 0.3, 0.3), np.eye(2))
    assert np.linalg.norm(pg.evolve_interval(f, OFF, 0, t) - pg.evolve(f, OFF)) <= 1e-12
    s = t / 3
    left, right = pg.evolve_interval(f, OFF, s, t), pg.evolve_interval(f, OFF, 0, s)
    assert np.linalg.norm(left @ right - pg.evolve(f, OFF)) <= 1e-10
    mid = pg.evolve_interval(f, OFF, 0.2, 0.9)
    assert np.linalg.norm(mid @ dagger(mid) - np.eye(2)) <= 1e-10
    with pytest.raises(InvalidInterval):
        pg.evolve_interval(f, OFF, 0.5, 0.4)
    with pytest.raises(InvalidInterval):
        pg.evolve_interval(f, OFF, 0.0, t + 0.1)


@given(seeds, st.floats(0.01, 0.99), st.floats(0.01, 0.99))
def test_three_piece_composition(seed, a, b):
    f = smooth_field(seed)
    t = DIAM.length
    s1, s2 = sorted((a * t, b * t))
    u = pg.evolve_interval(f, DIAM, s2, t) @ pg.evolve_interval(f, DIAM, s1, s2) @ pg.evolve_interval(f, DIAM, 0, s1)
    assert np.linalg.norm(u - pg.evolve(f, DIAM)) <= 1e-10


@given(seeds)
def test_phase_gauge(seed):
    f = smooth_field(seed)
    g = GaussianScalar(1.3, (0.1, -0.2), 0.35)
    shifted = AffineField(f.base, f.terms + ((g, np.eye(2)),))
    phase = np.exp(-1j * pg.integrate_family(g, OFF)[0])
    assert np.linalg.norm(pg.evolve(shifted, OFF) - phase * pg.evolve(f, OFF)) <= 1e-9


def test_unordered_examples():
    h = random_hermitean(2, seed=6)
    c = constant_field(h)
    assert np.linalg.norm(pg.unordered_evolve(c, OFF) - pg.evolve(c, OFF)) <= 1e-12
    diag = AffineField(np.diag([0.3, -0.1]), ((GaussianScalar(1.0, (0.1, 0.0), 0.3), PAULI["sigma3"]),))
    assert np.linalg.norm(pg.unordered_evolve(diag, DIAM) - pg.evolve(diag, DIAM)) <= 1e-8
    bumps = phantom("two_bumps", {"scale": 3.0})
    ray = chord(unit_disk(), (-0.35, 0.2), np.array([0.65, -0.45]) / np.hypot(0.65, 0.45))
    assert np.linalg.norm(pg.unordered_evolve(bumps, ray) - pg.evolve(bumps, ray)) > 1e-3


def test_linearized_response_zero_and_identity():
    h0 = random_hermitean(2, seed=7)
    assert np.allclose(pg.linearized_response(constant_field(h0), zero_field(2), OFF), 0)
    c = 0.8
    resp = pg.linearized_response(constant_field(h0), constant_field(c * np.eye(2)), OFF)
    t = OFF.length
    # d/ds exp(-i T (H0 + s c I)) = -i c T exp(-i T H0)
    assert np.linalg.norm(resp - (-1j) * c * t * expm_hermitean(h0, t)) <= 1e-12


@given(seeds)
def test_linearized_response_finite_difference(seed):
    h0, h1 = smooth_field(seed), smooth_field(seed + 1)
    u0 = pg.evolve(h0, OFF)
    resp = pg.linearized_response(h0, h1, OFF)
    errs = []
    for s in (1e-3, 1e-4):
        hs = AffineField(h0.base + s * h1.base, h0.terms + tuple((f.scaled(s), d) for f, d in h1.terms))
        errs.append(np.linalg.norm((pg.evolve(hs, OFF) - u0) / s - resp))
    assert errs[0] < 1e-2 * np.linalg.norm(resp) and 5 <= errs[0] / errs[1] <= 15


def test_sweep_partial_products():
    f = smooth_field(8, 3)
    fam = parallel_beam(unit_disk(), 3, 3)
    sw = pg.sweep(f, fam, 0.05)
    assert np.allclose(sw.total, pg.evolve_family(f, fam, 0.05), atol=1e-13)
    prod = sw.left @ sw.right
    assert np.abs(prod - sw.total[sw.nodes.ray_index]).max() < 1e-13
    # right[k] is the evolution to the node's midpoint
    k = sw.nodes.ptr[4] + 5
    ray = fam[4]
    assert np.allclose(sw.right[k], pg.evolve_interval(f, ray, 0.0, sw.nodes.t[k], 0.05), atol=1e-13)


def test_pseudolinear_identity_second_order():
    a, b = smooth_field(9), smooth_field(10)
    errs = []
    for h in (1 / 16, 1 / 32, 1 / 64):
        pl = pg.pseudolinear_integral(a, b, OFF, h)[0]
        diff = pg.evolve(b, OFF, h) - pg.evolve(a, OFF, h)
        errs.append(np.linalg.norm(diff - pl))
    assert errs[-1] < 2e-3
    assert 3.0 <= errs[0] / errs[1] <= 5.0 and 3.0 <= errs[1] / errs[2] <= 5.0


def test_integrate_family_scalar_and_matrix():
    g = GaussianScalar(1.0, (0.0, 0.0), 0.3)
    val = pg.integrate_family(g, DIAM, 1e-3)[0]
    # Gaussian cut at |x| = 1
    assert val == pytest.approx(0.3 * np.sqrt(2 * np.pi) * math.erf(1 / (0.3 * math.sqrt(2))), rel=1e-6)
    m = pg.integrate_family(constant_field(PAULI["sigma2"]), DIAM)[0]
    assert np.allclose(m, 2 * PAULI["sigma2"])
