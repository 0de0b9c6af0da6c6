import numpy as np
import pytest
from scipy import stats

from drivestyle import errors, kernels
from drivestyle.evaluation import label_switches
from drivestyle.hmm import (
    EmissionParams,
    TransitionMatrix,
    brute_force_likelihood,
    brute_force_path_posterior,
    forward_log_likelihood,
    gaussian_log_density,
    generate,
    sample_state_sequence,
)
from drivestyle.synth import sticky_matrix

from conftest import random_hmm, random_spd


def unit_emissions(means):
    means = np.atleast_2d(np.asarray(means, dtype=float))
    return EmissionParams(means, np.tile(np.eye(means.shape[1]), (len(means), 1, 1)))


class TestForward:
    def test_single_state_is_sum_of_densities(self, rng, backend):
        cov = random_spd(rng)
        emit = EmissionParams(rng.normal(size=(1, 4)), cov[None])
        obs = rng.normal(size=(7, 4))
        trans = TransitionMatrix([[1.0]], [1.0])
        expected = stats.multivariate_normal(emit.means[0], cov).logpdf(obs).sum()
        assert forward_log_likelihood(obs, trans, emit) == pytest.approx(expected, abs=1e-10)

    def test_single_frame_mixture(self, rng, backend):
        trans, emit = random_hmm(rng, 2)
        trans = TransitionMatrix(trans.rows, [0.5, 0.5])
        o = rng.normal(size=(1, 4))
        d = [stats.multivariate_normal(emit.means[k], emit.covariances[k]).pdf(o[0]) for k in range(2)]
        assert forward_log_likelihood(o, trans, emit) == pytest.approx(np.log(0.5 * d[0] + 0.5 * d[1]), abs=1e-12)

    @pytest.mark.parametrize("seed", range(5))
    def test_matches_brute_force(self, seed, backend):
        rng = np.random.default_rng(seed)
        trans, emit = random_hmm(rng, 2)
        obs = rng.normal(0, 2, size=(4, 4))
        assert abs(forward_log_likelihood(obs, trans, emit) - brute_force_likelihood(obs, trans, emit)) <= 1e-9

    def test_long_sequence_stays_finite(self, rng, backend):
        trans, emit = random_hmm(rng, 3)
        obs = rng.normal(0, 30, size=(20000, 4))
        assert np.isfinite(forward_log_likelihood(obs, trans, emit))

    def test_dimension_mismatch(self, rng):
        trans, emit = random_hmm(rng, 2)
        with pytest.raises(errors.DimensionMismatch):
            forward_log_likelihood(np.zeros((3, 3)), trans, emit)
        with pytest.raises(errors.DimensionMismatch):
            forward_log_likelihood(np.zeros((3, 4)), TransitionMatrix(np.eye(3), np.ones(3) / 3), emit)

    def test_non_spd(self):
        emit = EmissionParams(np.zeros((1, 2)), np.array([[[1.0, 2.0], [2.0, 1.0]]]))
        with pytest.raises(errors.NonSPDCovariance):
            forward_log_likelihood(np.zeros((2, 2)), TransitionMatrix([[1.0]], [1.0]), emit)


class TestBruteForce:
    def test_single_state_equals_forward(self, rng):
        emit = EmissionParams(rng.normal(size=(1, 4)), random_spd(rng)[None])
        obs = rng.normal(size=(5, 4))
        trans = TransitionMatrix([[1.0]], [1.0])
        assert brute_force_likelihood(obs, trans, emit) == pytest.approx(
            forward_log_likelihood(obs, trans, emit), abs=1e-12)

    def test_hand_summed_four_paths(self):
        emit = unit_emissions([[0, 0, 0, 0], [1, 0, 0, 0]])
        trans = TransitionMatrix([[0.7, 0.3], [0.2, 0.8]], [0.6, 0.4])
        obs = np.array([[0, 0, 0, 0], [1, 0, 0, 0]], dtype=float)
        c, e = (2 * np.pi) ** -2, np.exp(-0.5)
        # paths 00, 01, 10, 11
        total = 0.6 * c * 0.7 * c * e + 0.6 * c * 0.3 * c + 0.4 * c * e * 0.2 * c * e + 0.4 * c * e * 0.8 * c
        assert brute_force_likelihood(obs, trans, emit) == pytest.approx(np.log(total), abs=1e-12)
        assert forward_log_likelihood(obs, trans, emit) == pytest.approx(np.log(total), abs=1e-12)

    def test_too_large(self, rng):
        trans, emit = random_hmm(rng, 3)
        with pytest.raises(errors.TooLarge):
            brute_force_likelihood(np.zeros((13, 4)), trans, emit)


class TestSampleStateSequence:
    def test_single_state(self, rng, backend):
        emit = unit_emissions([[0, 0, 0, 0]])
        z = sample_state_sequence(rng.normal(size=(50, 4)), TransitionMatrix([[1.0]], [1.0]), emit, rng)
        assert np.all(z == 0)

    def test_far_separated_states(self, backend):
        rng = np.random.default_rng(3)
        emit = unit_emissions([[100, 0, 0, 0], [-100, 0, 0, 0]])
        trans = TransitionMatrix([[0.9, 0.1], [0.1, 0.9]], [0.5, 0.5])
        obs = emit.means[0] + rng.normal(size=(6, 4))
        post = brute_force_path_posterior(obs, trans, emit)
        for t in range(6):
            assert sum(p for path, p in post.items() if path[t] == 0) > 1 - 1e-6
        for seed in range(20):
            z = sample_state_sequence(obs, trans, emit, np.random.default_rng(seed))
            assert np.all(z == 0)

    def test_deterministic(self, rng, backend):
        trans, emit = random_hmm(rng, 3)
        obs = rng.normal(size=(40, 4))
        a = sample_state_sequence(obs, trans, emit, np.random.default_rng(9))
        b = sample_state_sequence(obs, trans, emit, np.random.default_rng(9))
        np.testing.assert_array_equal(a, b)

    def test_path_frequencies_match_brute_force(self, backend):
        rng = np.random.default_rng(11)
        emit = EmissionParams(np.array([[0, 0, 0, 0], [0.8, 0.4, 0, 0]]), np.tile(np.eye(4), (2, 1, 1)))
        trans = TransitionMatrix([[0.7, 0.3], [0.4, 0.6]], [0.55, 0.45])
        obs = np.array([[0.3, 0.1, 0, 0], [0.5, 0.2, 0.1, 0], [0.2, 0.4, 0, 0.1]])
        post = brute_force_path_posterior(obs, trans, emit)
        paths = sorted(post)
        expected = np.array([post[p] for p in paths])

        # the public sampler, reusing its pieces to afford 10^5 draws
        log_emit = gaussian_log_density(obs, emit)
        back = kernels.backward_messages(trans.rows, log_emit)
        n = 100_000
        u = rng.random((n, 3))
        index = {p: i for i, p in enumerate(paths)}
        counts = np.zeros(len(paths))
        for k in range(n):
            z = kernels.sample_forward(trans.rows, trans.initial, log_emit, back, u[k])
            counts[index[tuple(z.tolist())]] += 1
        freq = counts / n
        assert np.max(np.abs(freq - expected)) <= 0.01
        assert stats.chisquare(counts, expected * n).pvalue > 0.001
        # marginals per time step
        for t in range(3):
            m_obs = sum(counts[i] for i, p in enumerate(paths) if p[t] == 0)
            m_exp = sum(expected[i] for i, p in enumerate(paths) if p[t] == 0) * n
            assert stats.chisquare([m_obs, n - m_obs], [m_exp, n - m_exp]).pvalue > 0.001

    def test_public_sampler_frequencies(self, backend):
        emit = EmissionParams(np.array([[0, 0, 0, 0], [0.8, 0.4, 0, 0]]), np.tile(np.eye(4), (2, 1, 1)))
        trans = TransitionMatrix([[0.7, 0.3], [0.4, 0.6]], [0.55, 0.45])
        obs = np.array([[0.3, 0.1, 0, 0], [0.5, 0.2, 0.1, 0]])
        post = brute_force_path_posterior(obs, trans, emit)
        rng = np.random.default_rng(5)
        n = 20_000
        hits = {p: 0 for p in post}
        for _ in range(n):
            hits[tuple(sample_state_sequence(obs, trans, emit, rng).tolist())] += 1
        for p, prob in post.items():
            assert abs(hits[p] / n - prob) < 0.015


class TestGenerate:
    def test_near_zero_covariance(self, rng):
        emit = EmissionParams(np.array([[1.0, 2.0, 3.0, 4.0]]), 1e-12 * np.eye(4)[None])
        _, obs = generate(TransitionMatrix([[1.0]], [1.0]), emit, 20, rng)
        np.testing.assert_allclose(obs, np.tile([1, 2, 3, 4], (20, 1)), atol=1e-4)

    def test_absorbing_state(self, rng):
        trans = TransitionMatrix([[1.0, 0.0], [0.5, 0.5]], [1.0, 0.0])
        z, _ = generate(trans, unit_emissions([[0] * 4, [5] * 4]), 200, rng)
        assert np.all(z == 0)

    def test_sticky_switch_count(self):
        # binomial expectation: 999 transitions, each switches w.p. 0.02
        trans = TransitionMatrix(sticky_matrix(3, 0.98), np.ones(3) / 3)
        emit = unit_emissions(np.eye(3, 4))
        switches = np.array([label_switches(generate(trans, emit, 1000, np.random.default_rng(s))[0])
                             for s in range(100)])
        assert 10 <= switches.mean() <= 30
        assert np.mean((switches >= 10) & (switches <= 30)) >= 0.95

    def test_deterministic(self, rng):
        trans, emit = random_hmm(rng, 3)
        a = generate(trans, emit, 50, np.random.default_rng(1))
        b = generate(trans, emit, 50, np.random.default_rng(1))
        np.testing.assert_array_equal(a[0], b[0])
        np.testing.assert_array_equal(a[1], b[1])


def test_log_density_matches_scipy(rng):
    trans, emit = random_hmm(rng, 3)
    obs = rng.normal(size=(10, 4))
    ld = gaussian_log_density(obs, emit)
    for k in range(3):
        np.testing.assert_allclose(ld[:, k], stats.multivariate_normal(emit.means[k], emit.covariances[k]).logpdf(obs))


def test_transition_matrix_invariants():
    with pytest.raises(errors.DimensionMismatch):
        TransitionMatrix([[0.5, 0.6], [0.5, 0.5]], [0.5, 0.5])
    with pytest.raises(errors.DimensionMismatch):
        TransitionMatrix([[1.0, 0.0], [0.5, 0.5]], [0.7, 0.7])
