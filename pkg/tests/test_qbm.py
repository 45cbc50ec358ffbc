import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from qaan.data import all_configs, bits_to_spins, empirical_table
from qaan.oracles import central_difference, relative_error
from qaan.pimc import MomentEstimate
from qaan.qbm import (QbmParams, QbmTrainConfig, QbmTrainer, bound_gradient, clamped_hamiltonian,
                      clamped_hidden_expect, classical_energy, exact_bound_gradient, exact_bound_loss, exact_nll,
                      exact_thermal, from_bit_params, hamiltonian, spin_configs, thermal_diagonal, to_bit_params)
from qaan.rbm import exact_marginal


def random_qbm(rng, nv, nh, gamma=2.0, scale=1.0):
    return QbmParams(gamma, rng.uniform(-scale, scale, nv), rng.uniform(-scale, scale, nh),
                     rng.uniform(-scale, scale, (nv, nh)))


def random_table(rng, n):
    return rng.dirichlet(np.ones(2**n))


def classical_boltzmann(p):
    s = spin_configs(p.n_units)
    w = np.exp(-classical_energy(p, s))
    return s, w / w.sum()


class TestParams:
    def test_gamma_broadcast(self):
        p = QbmParams.zeros(3, 2, gamma=2.0)
        np.testing.assert_array_equal(p.gamma, np.full(5, 2.0))

    def test_negative_gamma_rejected(self):
        with pytest.raises(ValueError):
            QbmParams(-1.0, np.zeros(1), np.zeros(1), np.zeros((1, 1)))

    def test_size_limit(self):
        with pytest.raises(ValueError):
            hamiltonian(QbmParams.zeros(8, 5))


class TestExactThermal:
    def test_classical_limit(self):
        rng = np.random.default_rng(0)
        p = random_qbm(rng, 3, 2, gamma=0.0)
        s, prob = classical_boltzmann(p)
        t = exact_thermal(p)
        np.testing.assert_allclose(t.first_moments, prob @ s, atol=1e-12)
        np.testing.assert_allclose(t.second_moments, (s[:, :3] * prob[:, None]).T @ s[:, 3:], atol=1e-12)

    @pytest.mark.parametrize("g", [0.5, 2.0, 5.0])
    def test_single_spin_symmetric(self, g):
        p = QbmParams(g, [0.0], np.zeros(0), np.zeros((1, 0)))
        assert abs(exact_thermal(p).first_moments[0]) < 1e-14

    @pytest.mark.parametrize("t", [-1.5, 0.2, 3.0])
    def test_single_spin_classical(self, t):
        p = QbmParams(0.0, [t], np.zeros(0), np.zeros((1, 0)))
        assert exact_thermal(p).first_moments[0] == pytest.approx(np.tanh(t), abs=1e-14)

    def test_single_spin_transverse(self):
        # <Z> = (b / D) tanh D for one spin with field b and transverse field G
        b, g = 0.7, 1.3
        d = np.hypot(b, g)
        p = QbmParams(g, [b], np.zeros(0), np.zeros((1, 0)))
        assert exact_thermal(p).first_moments[0] == pytest.approx(b / d * np.tanh(d), abs=1e-14)

    def test_marginal_sums_to_one(self):
        rng = np.random.default_rng(1)
        for nv, nh in [(2, 2), (4, 3), (5, 5)]:
            m = exact_thermal(random_qbm(rng, nv, nh)).visible_marginal
            assert abs(m.sum() - 1.0) < 1e-10 and np.all(m > 0)

    def test_log_partition_matches_trace(self):
        rng = np.random.default_rng(2)
        p = random_qbm(rng, 2, 2)
        w = np.linalg.eigvalsh(hamiltonian(p))
        assert exact_thermal(p).log_partition == pytest.approx(np.log(np.exp(-w).sum()), abs=1e-12)

    def test_unit_ordering(self):
        # unit a is bit (n - 1 - a): a bias on unit 0 moves only unit 0
        p = QbmParams(1.0, [2.0, 0.0], [0.0], np.zeros((2, 1)))
        first = exact_thermal(p).first_moments
        assert first[0] > 0.5 and abs(first[1]) < 1e-14 and abs(first[2]) < 1e-14


class TestClamped:
    def test_hand_example(self):
        p = QbmParams([0.0, 2.0], [0.0], [1.0], [[0.0]])
        out = clamped_hidden_expect(p, np.array([1.0]))
        assert out[0] == pytest.approx(np.tanh(np.sqrt(5)) / np.sqrt(5), abs=1e-15)
        # direct evaluation gives 0.437112; the commonly quoted 0.43823 is off by 1.1e-3
        assert out[0] == pytest.approx(0.437112, abs=1e-6)

    def test_hand_example_by_diagonalization(self):
        H = -np.array([[1.0, 2.0], [2.0, -1.0]])
        w, V = np.linalg.eigh(H)
        rho = (V * np.exp(-w)) @ V.T
        z = np.diag([1.0, -1.0])
        assert np.trace(rho @ z) / np.trace(rho) == pytest.approx(0.437112, abs=1e-6)

    def test_classical_limit(self):
        p = QbmParams(0.0, [0.3], [-0.2, 0.4], [[0.5, -1.0]])
        v = np.array([-1.0])
        np.testing.assert_allclose(clamped_hidden_expect(p, v), np.tanh(p.hidden_bias + v @ p.weights))

    def test_zero_effective_field(self):
        for g in (0.0, 2.0):
            p = QbmParams(g, [0.0], [0.0], [[0.0]])
            assert clamped_hidden_expect(p, np.array([1.0]))[0] == 0.0

    def test_against_dense_clamped_hamiltonian(self):
        rng = np.random.default_rng(3)
        for _ in range(10):
            p = QbmParams(rng.uniform(0, 3, 6), rng.uniform(-1, 1, 3), rng.uniform(-1, 1, 3),
                          rng.uniform(-1, 1, (3, 3)))
            v = bits_to_spins(rng.integers(0, 2, 3)).astype(float)
            diag, _ = thermal_diagonal(clamped_hamiltonian(p, v))
            exact = diag @ spin_configs(3)
            np.testing.assert_allclose(clamped_hidden_expect(p, v), exact, atol=1e-12)


class TestBound:
    def test_classical_limit_is_nll(self):
        rng = np.random.default_rng(4)
        p = random_qbm(rng, 3, 2, gamma=0.0)
        table = random_table(rng, 3)
        assert exact_bound_loss(p, table) == pytest.approx(exact_nll(p, table), abs=1e-12)

    def test_upper_bound(self):
        rng = np.random.default_rng(5)
        for _ in range(20):
            nv, nh = rng.integers(1, 5), rng.integers(1, 4)
            p = random_qbm(rng, nv, nh, gamma=rng.uniform(0, 3))
            table = random_table(rng, nv)
            assert exact_bound_loss(p, table) >= exact_nll(p, table) - 1e-10

    def test_tight_when_visible_field_vanishes(self):
        # with no transverse field on the visible units, H commutes with the projector
        rng = np.random.default_rng(6)
        for nh in (0, 2):
            p = random_qbm(rng, 2, nh)
            p.gamma[:2] = 0.0
            table = random_table(rng, 2)
            assert exact_bound_loss(p, table) == pytest.approx(exact_nll(p, table), abs=1e-12)

    def test_strictly_loose_with_visible_field(self):
        p = QbmParams(2.0, [0.4], np.zeros(0), np.zeros((1, 0)))
        table = np.array([0.3, 0.7])
        assert exact_bound_loss(p, table) > exact_nll(p, table) + 1e-3

    def test_bad_table(self):
        with pytest.raises(ValueError):
            exact_bound_loss(QbmParams.zeros(2, 1), np.ones(3) / 3)


class TestBoundGradient:
    def test_finite_differences(self):
        rng = np.random.default_rng(7)
        p = random_qbm(rng, 3, 2)
        table = random_table(rng, 3)
        numeric = central_difference(lambda: exact_bound_loss(p, table), p.trainable())
        analytic = exact_bound_gradient(p, table).arrays()
        assert relative_error(np.concatenate([a.ravel() for a in analytic]),
                              np.concatenate([a.ravel() for a in numeric])) < 1e-5

    def test_minibatch_matches_table(self):
        rng = np.random.default_rng(8)
        p = random_qbm(rng, 3, 2)
        v = spin_configs(3)
        stats = exact_thermal(p).moments()
        g = bound_gradient(p, v, stats)
        ref = exact_bound_gradient(p, np.full(8, 1 / 8))
        for a, b in zip(g.arrays(), ref.arrays()):
            np.testing.assert_allclose(a, b, atol=1e-14)

    def test_classical_stationarity(self):
        rng = np.random.default_rng(9)
        p = random_qbm(rng, 3, 2, gamma=0.0)
        g = exact_bound_gradient(p, exact_thermal(p).visible_marginal)
        assert max(np.abs(a).max() for a in g.arrays()) < 1e-12

    def test_point_mass_at_zero_parameters(self):
        p = QbmParams.zeros(3, 2, gamma=2.0)
        v = np.array([[1.0, -1.0, 1.0]])
        g = bound_gradient(p, v, exact_thermal(p).moments())
        # free minus clamped: the free phase vanishes, leaving -v
        np.testing.assert_allclose(g.visible_bias, -v[0], atol=1e-14)
        np.testing.assert_allclose(g.hidden_bias, 0.0, atol=1e-14)

    def test_stat_shape_checked(self):
        p = QbmParams.zeros(2, 1)
        with pytest.raises(ValueError):
            bound_gradient(p, np.ones((1, 2)), MomentEstimate(np.zeros(2), np.zeros((2, 1))))


class TestBitMapping:
    def test_round_trip(self):
        p = random_qbm(np.random.default_rng(10), 3, 2, gamma=0.0)
        q = from_bit_params(to_bit_params(p))
        for a, b in zip(p.trainable(), q.trainable()):
            np.testing.assert_allclose(a, b, atol=1e-14)

    def test_same_visible_distribution(self):
        p = random_qbm(np.random.default_rng(11), 4, 2, gamma=0.0)
        np.testing.assert_allclose(exact_marginal(to_bit_params(p)), exact_thermal(p).visible_marginal,
                                   atol=1e-12)


class TestTrainer:
    def test_gamma_constant_and_bound_decreases(self):
        rng = np.random.default_rng(12)
        p = random_qbm(rng, 3, 2, scale=0.3)
        table = random_table(rng, 3)
        data = all_configs(3)[rng.choice(8, size=64, p=table)].astype(float)
        trainer = QbmTrainer(p.copy(), QbmTrainConfig(lr=1e-2, batch_size=64, negative_phase="exact"))
        batch_table = empirical_table(data.astype(np.int8))
        losses = [exact_bound_loss(trainer.params, batch_table)]
        for _ in range(50):
            trainer.step(data, rng)
            np.testing.assert_array_equal(trainer.params.gamma, 2.0)
            losses.append(exact_bound_loss(trainer.params, batch_table))
        assert losses[-1] < losses[0]
        assert np.sum(np.diff(losses) > 1e-12) == 0

    def test_pimc_negative_phase_runs(self):
        rng = np.random.default_rng(13)
        trainer = QbmTrainer(QbmParams.init(3, 2, rng), QbmTrainConfig())
        trainer.run_epoch(rng.integers(0, 2, size=(64, 3)).astype(float), rng)
        assert trainer.epoch == 1
        np.testing.assert_array_equal(trainer.params.gamma, 2.0)

    def test_bad_negative_phase(self):
        with pytest.raises(ValueError):
            QbmTrainer(QbmParams.zeros(2, 1), QbmTrainConfig(negative_phase="cd"))


@settings(max_examples=40, deadline=None)
@given(st.integers(1, 4), st.integers(0, 3), st.floats(0.0, 3.0), st.integers(0, 10_000))
def test_bound_dominates_nll_property(nv, nh, gamma, seed):
    rng = np.random.default_rng(seed)
    p = random_qbm(rng, nv, nh, gamma=gamma)
    table = random_table(rng, nv)
    assert exact_bound_loss(p, table) >= exact_nll(p, table) - 1e-10


@settings(max_examples=40, deadline=None)
@given(st.floats(0.0, 4.0), st.floats(-4.0, 4.0))
def test_clamped_expectation_bounded_property(gamma, field):
    p = QbmParams([0.0, gamma], [0.0], [field], [[0.0]])
    out = clamped_hidden_expect(p, np.array([1.0]))[0]
    assert abs(out) < 1.0
    assert np.sign(out) == np.sign(field)
