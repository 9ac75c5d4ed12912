import math

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from cqtomo import expcalc as ec
from cqtomo.errors import AmbiguousClustering, SingularDerivative
from cqtomo.matrix import PAULI, mat_exp, random_hermitean, random_unitary

from conftest import seeds

TWO_PI = 2 * np.pi
E12 = np.array([[0, 1], [0, 0]], dtype=complex)


def skew(seed, n=3, norm=None):
    h = random_hermitean(n, seed=seed)
    if norm is not None:
        h = norm * h / np.linalg.norm(h, 2)
    return 1j * h


def ad_series(a, b, terms, coeff):
    out, t = coeff(0) * b, b
    for k in range(1, terms + 1):
        t = ec.ad(a, t)
        out = out + coeff(k) * t
    return out


def test_ad_examples():
    a = random_hermitean(3, seed=1)
    assert np.allclose(ec.ad(a, a), 0)
    assert np.allclose(ec.ad(np.eye(3), a), 0)
    assert np.allclose(ec.ad(np.diag([2.0, -0.5]), E12), 2.5 * E12)


def test_ad_dimension_mismatch():
    with pytest.raises(ValueError):
        ec.ad(np.eye(2), np.eye(3))


def test_Ad_examples():
    a = random_hermitean(3, seed=2)
    assert np.allclose(ec.Ad(np.eye(3), a), a)
    assert np.allclose(ec.Ad(random_unitary(3, seed=3), np.eye(3)), np.eye(3))
    with pytest.raises(ValueError):
        ec.Ad(2 * np.eye(3), a)


@given(seeds)
def test_Ad_exp_is_exp_ad(seed):
    a = skew(seed, norm=1.0)
    b = random_hermitean(3, seed=seed + 1)
    b /= np.linalg.norm(b, 2)
    series = ad_series(a, b, 15, lambda k: 1 / math.factorial(k))
    assert np.linalg.norm(ec.Ad(mat_exp(a), b) - series) <= 1e-8


def test_phi_values():
    assert ec.phi(0) == 1
    assert ec.phi(1e-9) == pytest.approx(1 - 5e-10, rel=1e-14)
    z = 0.7 + 0.2j
    assert ec.phi(z) == pytest.approx((1 - np.exp(-z)) / z, rel=1e-14)
    # continuity across the series switch
    assert abs(ec.phi(1.0001e-4) - ec.phi(0.9999e-4)) < 1e-8


def test_phi_ad_examples():
    b = skew(5)
    assert np.allclose(ec.phi_ad(np.zeros((3, 3)), b), b)
    a = 1j * np.diag([0.3, -1.0, 2.0])
    c = 1j * np.diag([1.0, 4.0, -2.0])
    assert np.allclose(ec.phi_ad(a, c), c)


@given(seeds)
def test_phi_ad_series_oracle(seed):
    a = skew(seed, norm=1.0)
    b = random_hermitean(3, seed=seed + 7)
    series = ad_series(a, b, 15, lambda k: (-1) ** k / math.factorial(k + 1))
    assert np.linalg.norm(ec.phi_ad(a, b) - series) <= 1e-8


def test_dexp_examples():
    b = skew(6)
    assert np.allclose(ec.dexp(np.zeros((3, 3)), b), b)
    a = 1j * np.diag([0.3, -1.0, 2.0])
    c = 1j * np.diag([1.0, 4.0, -2.0])
    assert np.allclose(ec.dexp(a, c), mat_exp(a) @ c)


@given(seeds)
def test_dexp_finite_difference(seed):
    a, b = skew(seed), skew(seed + 1)
    d = ec.dexp(a, b)
    errs = [np.linalg.norm((mat_exp(a + h * b) - mat_exp(a)) / h - d) for h in (1e-3, 1e-4)]
    assert errs[1] < errs[0]
    assert 8 <= errs[0] / errs[1] <= 12


@given(seeds, st.floats(-5, 5))
def test_dexp_identity_multiples(seed, c):
    a = skew(seed)
    assert np.allclose(ec.dexp(a, 1j * c * np.eye(3)), 1j * c * mat_exp(a), atol=1e-12)


@given(seeds)
def test_dexp_invert_round_trip(seed):
    a, b = skew(seed), skew(seed + 3)
    try:
        back = ec.dexp_invert(a, ec.dexp(a, b))
    except SingularDerivative:
        return
    assert np.linalg.norm(back - b) <= 1e-8 * np.linalg.norm(b)


def test_dexp_invert_examples():
    c = skew(8)
    assert np.allclose(ec.dexp_invert(np.zeros((3, 3)), c), c)
    with pytest.raises(SingularDerivative) as info:
        ec.dexp_invert(1j * np.diag([0.0, TWO_PI]), 1j * PAULI["sigma1"])
    assert abs(abs(info.value.gap) - TWO_PI) < 1e-9


@given(seeds)
def test_ad_decomposition_splits_commuting_part(seed):
    rng = np.random.default_rng(seed)
    # degenerate spectrum so the commuting part is nontrivial
    v = random_unitary(3, rng=rng)
    lam = np.array([0.4, 0.4, -1.3])
    a = 1j * v @ np.diag(lam) @ v.conj().T
    x = skew(seed + 11)
    b, d = ec.ad_decompose(a, x)
    assert np.linalg.norm(ec.ad(a, b)) < 1e-10
    assert np.linalg.norm(b + ec.ad(a, d) - x) < 1e-10
    # dexp of the pieces
    ea = mat_exp(a)
    lhs = ec.dexp(a, b + ec.ad(a, d))
    assert np.linalg.norm(lhs - (ea @ b + ea @ d - d @ ea)) < 1e-9


def test_periodic_eigenspaces_examples():
    p = ec.periodic_eigenspaces(np.diag([0.0, TWO_PI, 2 * TWO_PI]))
    assert len(p) == 1 and abs(p.representatives[0]) < 1e-9
    assert np.allclose(p.projectors[0], np.eye(3))
    p = ec.periodic_eigenspaces(np.diag([0.0, 1.0]))
    assert np.allclose(p.representatives, [0, 1])
    assert all(np.linalg.matrix_rank(q) == 1 for q in p.projectors)


def test_periodic_eigenspaces_shift_vs_split():
    a = np.diag([0.5, 0.5 + TWO_PI, 3.0])
    # the same 2-space, split along a rotated basis
    r = np.array([[np.cos(0.3), -np.sin(0.3), 0], [np.sin(0.3), np.cos(0.3), 0], [0, 0, 1]])
    b = r @ np.diag([0.5, 0.5, 3.0]) @ r.T
    pa, pb = ec.periodic_eigenspaces(a), ec.periodic_eigenspaces(b)
    assert np.allclose(pa.representatives, pb.representatives)
    for x, y in zip(pa.projectors, pb.projectors):
        assert np.allclose(x, y)


@given(seeds)
def test_projectors_partition_identity(seed):
    p = ec.periodic_eigenspaces(3 * random_hermitean(4, seed=seed))
    total = sum(p.projectors)
    assert np.allclose(total, np.eye(4), atol=1e-10)
    for i, x in enumerate(p.projectors):
        assert np.allclose(x @ x, x, atol=1e-10)
        for y in p.projectors[i + 1 :]:
            assert np.linalg.norm(x @ y) < 1e-10
    assert np.allclose(p.exp_i(), mat_exp(3j * random_hermitean(4, seed=seed)), atol=1e-10)


def test_ambiguous_clustering():
    with pytest.raises(AmbiguousClustering):
        ec.periodic_eigenspaces(np.diag([0.0, 2e-7]))


def test_same_exponential_examples():
    a = random_hermitean(3, seed=21)
    assert ec.same_exponential(a, a)
    v = np.linalg.eigh(a)[1]
    k = v @ np.diag([1.0, -2.0, 0.0]) @ v.conj().T
    assert ec.same_exponential(a, a + TWO_PI * k)
    b = random_hermitean(3, seed=22)
    assert not ec.same_exponential(a, b)
    assert np.linalg.norm(mat_exp(1j * a) - mat_exp(1j * b)) > 0.1


def test_singular_lengths_examples():
    s = ec.singular_lengths(1j * np.diag([0.0, 1.0]), 10.0)
    assert np.allclose(s.lengths, [TWO_PI])
    assert len(ec.singular_lengths(2j * np.eye(3), 10.0)) == 0


def test_singular_lengths_three_levels():
    s = ec.singular_lengths(1j * np.diag([0.0, 1.0, 2.5]), 15.0)
    raw = sorted(TWO_PI * z / d for d in (1.0, 1.5, 2.5) for z in range(1, 10) if TWO_PI * z / d <= 15.0)
    # 4 pi arises from all three gaps
    expected = [t for i, t in enumerate(raw) if i == 0 or t - raw[i - 1] > 1e-9]
    assert len(expected) == len(raw) - 2
    assert np.allclose(s.lengths, expected)


def test_singular_lengths_match_dexp_failures():
    a = 1j * np.diag([0.0, 0.8, 2.1])
    s = ec.singular_lengths(a, 12.0)
    c = skew(31)
    for t in s.lengths:
        with pytest.raises(SingularDerivative):
            ec.dexp_invert(t * a, c)
    # and nowhere else on a fine scan
    for t in np.linspace(0.05, 12.0, 400):
        if not s.near(t, 1e-5):
            ec.dexp_invert(t * a, c)


def test_dexp_invert_scaled_matches_single():
    a = skew(40, norm=1.5)
    ts = np.array([0.3, 1.1, 2.0])
    cs = np.stack([ec.dexp(t * a, skew(41 + i)) for i, t in enumerate(ts)])
    b, ok = ec.dexp_invert_scaled(a, ts, cs)
    assert ok.all()
    for i, t in enumerate(ts):
        assert np.allclose(b[i], ec.dexp_invert(t * a, cs[i]), atol=1e-12)
