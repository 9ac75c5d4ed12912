import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from cqtomo import gauge as gg
from cqtomo.errors import BranchJump, InconsistentOracle, NonGeneric, StructureError
from cqtomo.fields import AffineField, GaussianScalar, NeutrinoParameters, constant_field, neutrino_hamiltonian, phantom, zero_field
from cqtomo.fields import ConstantScalar
from cqtomo.geometry import parallel_beam, unit_disk
from cqtomo.matrix import PAULI, random_hermitean, random_unitary
from cqtomo.propagator import evolve_family

from conftest import seeds

FAM = parallel_beam(unit_disk(), 6, 9)


def test_state_sets_validation():
    with pytest.raises(StructureError):
        gg.StateSets(np.array([[1.0, 1.0]]), np.eye(2))
    s = gg.StateSets.basis(3)
    assert gg.StateSets.from_dict(s.to_dict()).initial.shape == (3, 3)


def test_zero_field_identity_pattern():
    data = gg.measure(zero_field(3), FAM)
    assert np.allclose(data.values, np.eye(3))


def test_amplitudes_blind_to_trace():
    f = phantom("two_bumps")
    g = GaussianScalar(0.9, (0.2, 0.1), 0.3)
    shifted = AffineField(f.base, f.terms + ((g, np.eye(2)),))
    assert np.abs(gg.measure(f, FAM).values - gg.measure(shifted, FAM).values).max() <= 1e-9


def test_neutrino_row_sums():
    p = NeutrinoParameters(random_unitary(3, seed=1), (0.0, 0.5, 3.0), 1.0)
    diam = parallel_beam(unit_disk(), 1, 1)
    amps = gg.measure(neutrino_hamiltonian(p, ConstantScalar(0.0)), diam).values
    assert np.abs(np.sum(amps**2, axis=1) - 1).max() <= 1e-9
    assert np.abs(np.sum(amps**2, axis=2) - 1).max() <= 1e-9
    assert amps.max() <= 1 + 1e-9


def test_recover_identity_and_diagonal():
    assert np.allclose(gg.recover_unitary_up_to_phase(gg.amplitude_oracle(np.eye(3)), 3), np.eye(3))
    u = np.diag(np.exp(1j * np.array([0.7, -2.1])))
    v = gg.recover_unitary_up_to_phase(gg.amplitude_oracle(u), 2)
    assert np.allclose(np.abs(v), np.abs(u))
    assert gg.phase_distance(u, v) < 1e-12


@given(seeds, st.sampled_from([2, 3, 4, 5]))
def test_recover_haar(seed, n):
    u = random_unitary(n, seed=seed)
    v = gg.recover_unitary_up_to_phase(gg.amplitude_oracle(u), n)
    assert np.linalg.norm(v @ v.conj().T - np.eye(n)) <= 1e-8
    assert gg.phase_distance(u, v) <= 1e-7


def test_recover_rejects_row_phase_ambiguity():
    # U and D U share every amplitude of the row-wise probes, but not ours
    u = random_unitary(3, seed=5)
    d = np.diag(np.exp(1j * np.array([0.0, 1.1, -0.4])))
    v = gg.recover_unitary_up_to_phase(gg.amplitude_oracle(d @ u), 3)
    assert gg.phase_distance(d @ u, v) < 1e-10 and gg.phase_distance(u, v) > 0.1


def test_recover_inconsistent_oracle():
    def bad(a, b):
        return np.full(len(a), 0.5)

    with pytest.raises(InconsistentOracle):
        gg.recover_unitary_batch(bad, 2, 3)


def test_recover_batch_matches_single():
    us = np.array([random_unitary(3, seed=s) for s in range(10)])
    vs = gg.recover_unitary_batch(gg.amplitude_oracle(us), 3, 10)
    for u, v in zip(us, vs):
        assert gg.phase_distance(u, v) < 1e-12


def test_calibrate_su_phase_examples():
    raw = np.exp(1j * 0.3) * np.eye(2)
    assert np.allclose(gg.calibrate_su_phase(raw), np.eye(2))
    minus = gg.calibrate_su_phase(raw, reference=-np.eye(2))
    assert np.allclose(minus, -np.eye(2))
    u = gg.calibrate_su_phase(random_unitary(3, seed=2))
    assert abs(np.linalg.det(u) - 1) < 1e-12


def test_calibrate_family_matches_evolution():
    h = 0.8 * (PAULI["sigma1"] + 0.5 * PAULI["sigma3"])
    fam = parallel_beam(unit_disk(), 4, 81)
    data = gg.measure(constant_field(h), fam, mode="ideal_unitary")
    assert np.abs(data.values - evolve_family(constant_field(h), fam)).max() <= 1e-7


def test_calibrate_family_short_chord_near_identity():
    h = random_hermitean(2, seed=3)
    h -= np.trace(h) / 2 * np.eye(2)
    fam = parallel_beam(unit_disk(), 2, 101)
    data = gg.measure(constant_field(h), fam, mode="ideal_unitary")
    first = np.nonzero(fam.labels["offset"] == 0)[0]
    for i in first:
        # first-order bound with room for the O(T^2) term
        assert np.linalg.norm(data.values[i] - np.eye(2)) <= np.linalg.norm(h, 2) * fam.lengths[i] * 1.6


def test_calibrate_family_branch_jump():
    h = 30.0 * PAULI["sigma1"]
    fam = parallel_beam(unit_disk(), 2, 5)
    with pytest.raises(BranchJump):
        gg.measure(constant_field(h), fam, mode="ideal_unitary")


def test_measure_recover_shortcut_agrees():
    f = phantom("two_bumps", {"scale": 0.5})
    a = gg.measure(f, FAM, mode="ideal_unitary", h=1 / 64)
    b = gg.measure(f, FAM, mode="ideal_unitary", h=1 / 64, recover=False, seed=4)
    assert np.abs(a.values - b.values).max() < 1e-12


def test_gauge_equivalent_trivial():
    u = random_unitary(2, seed=1)
    alpha, beta, theta = gg.gauge_equivalent_2d(u, u)
    assert np.allclose(gg.gauge_apply(u, alpha, beta, theta), u, atol=1e-12)


@given(seeds, st.tuples(*(st.floats(-np.pi, np.pi),) * 3))
def test_gauge_equivalent_round_trip(seed, angles):
    u = random_unitary(2, seed=seed)
    v = gg.gauge_apply(u, *angles)
    assert np.abs(np.abs(v[:, 0]) - np.abs(u[:, 0])).max() <= 1e-12
    found = gg.gauge_equivalent_2d(u, v)
    assert found is not None
    assert np.linalg.norm(gg.gauge_apply(u, *found) - v) <= 1e-9


@pytest.mark.parametrize("u", [np.diag(np.exp(1j * np.array([0.3, -0.3]))), np.array([[0, 1], [-1, 0]], dtype=complex)])
def test_gauge_equivalent_special_shapes(u):
    v = gg.gauge_apply(u, 0.4, -1.1, 0.25)
    found = gg.gauge_equivalent_2d(u, v)
    assert found is not None and np.allclose(gg.gauge_apply(u, *found), v)


def test_gauge_equivalent_generic_pairs():
    hits = sum(gg.gauge_equivalent_2d(random_unitary(2, seed=s), random_unitary(2, seed=s + 1000)) is not None for s in range(100))
    assert hits == 0


def test_equal_moduli_imply_gauge_equivalence():
    # in 2D the moduli fix U up to the three-angle gauge, so even conj(U) is reached
    for seed in range(20):
        u = random_unitary(2, seed=seed)
        found = gg.gauge_equivalent_2d(u, np.conj(u))
        assert found is not None
        assert np.linalg.norm(gg.gauge_apply(u, *found) - np.conj(u)) <= 1e-9


def test_symmetry_dimension_two():
    assert all(gg.symmetry_dimension(random_unitary(2, seed=s)) == 3 for s in range(10))


def test_symmetry_dimension_stable_for_four():
    dims = {gg.symmetry_dimension(random_unitary(4, seed=s)) for s in range(10)}
    assert dims == {7}


def test_symmetry_dimension_real_orthogonal_three():
    # real orthogonal matrices pick up the extra dimension
    from scipy.stats import special_ortho_group

    q = special_ortho_group.rvs(3, random_state=0)
    assert gg.symmetry_dimension(q.astype(complex)) == 6


def test_symmetry_dimension_non_generic():
    with pytest.raises(NonGeneric):
        gg.symmetry_dimension(np.eye(3, dtype=complex))
