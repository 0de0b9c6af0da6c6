import numpy as np
import pytest
from hypothesis import given, settings, strategies as st
from scipy import stats

from drivestyle import errors
from drivestyle.evaluation import matched_accuracy
from drivestyle.sticky import (
    GlobalWeights,
    Hyperparameters,
    ModelState,
    break_sticks,
    count_transitions,
    dirichlet,
    extract_segments,
    fit,
    gibbs_sweep,
    initial_state,
    joint_log_density,
    niw_posterior_from_obs,
    resample_global_weights,
    sample_aux_counts,
    sample_emission_params,
    sample_invwishart,
    sample_niw,
    sample_transition_row,
    sticky_prior_self_mean,
    substream,
    summarize_clusters,
    table_counts,
)
from drivestyle.synth import synthesize

from conftest import random_spd


def simple_hyper(D=4, **kw):
    args = dict(alpha=1.0, gamma=1.0, kappa=0.0, niw_mean0=np.zeros(D), niw_scale0=1.0,
                niw_dof0=D + 3.0, niw_psi0=np.eye(D))
    args.update(kw)
    return Hyperparameters(**args)


def uniform_weights(L):
    return GlobalWeights(np.full(L, 1.0 / L), 0.0)


def crp_tables(n, conc, rng):
    """Seat ``n`` customers one at a time and count occupied tables."""
    tables = []
    for _ in range(n):
        total = sum(tables)
        if rng.random() * (total + conc) < conc:
            tables.append(1)
        else:
            k = rng.choice(len(tables), p=np.array(tables) / total)
            tables[k] += 1
    return len(tables)


class TestHyperparameters:
    def test_defaults_from_data(self, rng):
        obs = rng.normal(size=(500, 4))
        h = Hyperparameters.from_data(obs)
        assert (h.alpha, h.gamma, h.kappa, h.niw_scale0, h.niw_dof0, h.truncation_L) == (1, 1, 10, 0.01, 7, 20)
        np.testing.assert_allclose(h.niw_mean0, obs.mean(axis=0))
        np.testing.assert_allclose(h.niw_psi0, 0.75 * np.cov(obs, rowvar=False), atol=1e-5)

    def test_constant_channel_keeps_psi_spd(self):
        obs = np.column_stack([np.linspace(0, 1, 50), np.zeros((50, 3))])
        h = Hyperparameters.from_data(obs)
        assert np.all(np.linalg.eigvalsh(h.niw_psi0) > 0)

    @pytest.mark.parametrize("kw, exc", [
        ({"alpha": 0.0}, errors.ConfigError),
        ({"gamma": -1.0}, errors.ConfigError),
        ({"kappa": -0.1}, errors.ConfigError),
        ({"niw_dof0": 5.0}, errors.ConfigError),
        ({"truncation_L": 1}, errors.ConfigError),
        ({"emission_mode": "scalar"}, errors.ConfigError),
        ({"niw_psi0": -np.eye(4)}, errors.NonSPDPsi),
        ({"niw_psi0": np.array([[1.0, 2.0, 0, 0], [0, 1, 0, 0], [0, 0, 1, 0], [0, 0, 0, 1]])}, errors.NonSPDPsi),
    ])
    def test_invalid(self, kw, exc):
        with pytest.raises(exc):
            simple_hyper(**kw)

    def test_dict_round_trip(self):
        h = simple_hyper(kappa=3.0)
        back = Hyperparameters.from_dict(h.to_dict())
        assert back.to_dict() == h.to_dict()


class TestBreakSticks:
    def test_first_stick_takes_all(self):
        w = break_sticks(1.0, 5, nu=[1.0, 0.3, 0.3, 0.3, 0.3])
        np.testing.assert_array_equal(w.beta, [1, 0, 0, 0, 0])
        assert w.remainder == 0.0

    def test_geometric_halving(self):
        w = break_sticks(1.0, 3, nu=[0.5] * 3)
        np.testing.assert_array_equal(w.beta, [0.5, 0.25, 0.125])
        assert w.remainder == 0.125

    @settings(max_examples=200, deadline=None)
    @given(st.lists(st.floats(0, 1), min_size=2, max_size=60))
    def test_mass_conserved(self, nu):
        w = break_sticks(1.0, len(nu), nu=nu)
        assert abs(w.beta.sum() + w.remainder - 1.0) <= 1e-12
        assert np.all(w.beta >= 0) and w.remainder >= 0
        assert abs(w.folded().sum() - 1.0) <= 1e-12

    def test_first_weight_mean(self):
        rng = np.random.default_rng(0)
        first = [break_sticks(1.0, 50, rng).beta[0] for _ in range(20_000)]
        assert np.mean(first) == pytest.approx(0.5, abs=0.01)

    def test_short_truncation(self):
        with pytest.raises(errors.ConfigError):
            break_sticks(1.0, 1, np.random.default_rng(0))


class TestDirichlet:
    def test_tiny_parameters_stay_on_simplex(self, rng):
        for _ in range(200):
            x = dirichlet(rng, np.full(20, 1e-4))
            assert np.isfinite(x).all() and abs(x.sum() - 1) < 1e-12

    def test_zero_parameter_gives_zero(self, rng):
        x = dirichlet(rng, [0.0, 2.0, 3.0])
        assert x[0] == 0.0 and abs(x.sum() - 1) < 1e-12

    def test_all_zero(self, rng):
        with pytest.raises(errors.NumericalError):
            dirichlet(rng, np.zeros(3))

    def test_matches_numpy_marginals(self):
        # small parameters exercise the boosted-gamma path
        a = np.array([0.3, 0.7, 2.0])
        ours = np.array([dirichlet(np.random.default_rng(s), a) for s in range(5000)])
        ref = np.random.default_rng(99).dirichlet(a, size=5000)
        for j in range(3):
            assert stats.ks_2samp(ours[:, j], ref[:, j]).pvalue > 0.001


class TestTransitionRow:
    def _mean_row(self, i, weights, alpha, kappa, counts, n, seed=0):
        rng = np.random.default_rng(seed)
        return np.mean([sample_transition_row(i, weights, alpha, kappa, counts, rng) for _ in range(n)], axis=0)

    def test_kappa_zero_mean_is_beta(self):
        w = GlobalWeights(np.array([0.5, 0.2, 0.2, 0.05]), 0.05)
        m = self._mean_row(1, w, 1.0, 0.0, np.zeros(4), 20_000)
        np.testing.assert_allclose(m, w.folded(), atol=0.01)

    def test_sticky_self_mean(self):
        m = self._mean_row(3, uniform_weights(10), 1.0, 9.0, np.zeros(10), 20_000)
        assert m[3] == pytest.approx(0.91, abs=0.01)

    def test_data_swamps_prior(self, rng):
        counts = np.zeros(6)
        counts[0] = 1e6
        row = sample_transition_row(2, uniform_weights(6), 1.0, 10.0, counts, rng)
        np.testing.assert_allclose(row, np.eye(6)[0], atol=0.01)

    def test_on_simplex_and_deterministic(self):
        w = break_sticks(1.0, 8, np.random.default_rng(1))
        a = sample_transition_row(0, w, 2.0, 5.0, np.arange(8), np.random.default_rng(4))
        b = sample_transition_row(0, w, 2.0, 5.0, np.arange(8), np.random.default_rng(4))
        np.testing.assert_array_equal(a, b)
        assert abs(a.sum() - 1) < 1e-12 and np.all(a >= 0)

    def test_kappa_zero_reduces_to_plain_row(self):
        w = GlobalWeights(np.array([0.4, 0.3, 0.2, 0.1]), 0.0)
        counts = np.array([3, 0, 1, 2])
        rng = np.random.default_rng(7)
        n = 100_000
        ours = np.array([sample_transition_row(0, w, 5.0, 0.0, counts, rng) for _ in range(n)])
        ref = np.random.default_rng(8).dirichlet(5.0 * w.beta + counts, size=n)
        for j in range(4):
            assert stats.ks_2samp(ours[:, j], ref[:, j]).pvalue > 0.001

    @given(alpha=st.floats(0.01, 100), beta_i=st.floats(0, 0.999),
           k1=st.floats(0, 1000), k2=st.floats(0, 1000))
    def test_prior_self_mean_monotone(self, alpha, beta_i, k1, k2):
        lo, hi = sorted((k1, k2))
        if hi - lo < 1e-6:
            return
        assert sticky_prior_self_mean(alpha, lo, beta_i) < sticky_prior_self_mean(alpha, hi, beta_i)

    def test_prior_self_mean_monotone_mc(self):
        w = uniform_weights(5)
        means = [self._mean_row(2, w, 1.0, k, np.zeros(5), 10_000)[2] for k in (0.0, 2.0, 10.0)]
        for k, m in zip((0.0, 2.0, 10.0), means):
            assert m == pytest.approx(sticky_prior_self_mean(1.0, k, 0.2), abs=0.01)
        assert means[0] < means[1] < means[2]


class TestEmissions:
    def test_invwishart_mean(self):
        psi = random_spd(np.random.default_rng(2))
        rng = np.random.default_rng(3)
        draws = np.array([sample_invwishart(rng, 12.0, psi) for _ in range(20_000)])
        expected = stats.invwishart(df=12.0, scale=psi).mean()
        assert np.linalg.norm(draws.mean(axis=0) - expected) / np.linalg.norm(expected) < 0.02

    def test_invwishart_marginal_matches_scipy(self):
        psi = random_spd(np.random.default_rng(5))
        rng = np.random.default_rng(6)
        ours = np.array([sample_invwishart(rng, 9.0, psi)[1, 1] for _ in range(5000)])
        ref = stats.invwishart(df=9.0, scale=psi).rvs(size=5000, random_state=7)[:, 1, 1]
        assert stats.ks_2samp(ours, ref).pvalue > 0.001

    def test_empty_state_reproduces_prior(self):
        h = simple_hyper(niw_mean0=np.array([1.0, -2.0, 0.5, 3.0]))
        rng = np.random.default_rng(0)
        means = np.array([sample_emission_params([np.empty((0, 4))], h, rng).means[0] for _ in range(10_000)])
        # E[Sigma] = I / (7 - 4 - 1), so the mean of means has sd ~ 0.007
        np.testing.assert_allclose(means.mean(axis=0), h.niw_mean0, atol=0.03)

    def test_single_observation_update(self):
        h = simple_hyper(niw_mean0=np.array([1.0, 1.0, 1.0, 1.0]))
        o = np.array([[3.0, -1.0, 0.0, 5.0]])
        mu, kappa, nu, psi = niw_posterior_from_obs(o, h)
        np.testing.assert_allclose(mu, (h.niw_mean0 + o[0]) / 2)
        assert (kappa, nu) == (2.0, 8.0)
        d = (o[0] - h.niw_mean0)[:, None]
        np.testing.assert_allclose(psi, np.eye(4) + 0.5 * d @ d.T)

    def test_posterior_concentrates(self):
        rng = np.random.default_rng(1)
        mu_star = np.array([2.0, -1.0, 0.5, 4.0])
        sigma_star = random_spd(rng)
        x = rng.multivariate_normal(mu_star, sigma_star, size=100_000)
        h = Hyperparameters.from_data(x)
        mu_n, *_ = niw_posterior_from_obs(x, h)
        assert np.max(np.abs(mu_n - mu_star)) < 0.01
        draw = sample_emission_params([x], h, rng)
        assert np.linalg.norm(draw.covariances[0] - sigma_star) / np.linalg.norm(sigma_star) < 0.05

    def test_diagonal_mode(self, rng):
        h = simple_hyper(emission_mode="diagonal")
        x = rng.normal(size=(50, 4))
        cov = sample_emission_params([x, np.empty((0, 4))], h, rng).covariances
        for c in cov:
            np.testing.assert_array_equal(c, np.diag(np.diag(c)))
            assert np.all(np.diag(c) > 0)

    def test_diagonal_variance_moments(self):
        # inverse-gamma(nu/2, psi_jj/2) has mean psi_jj / (nu - 2)
        rng = np.random.default_rng(0)
        psi = np.diag([1.0, 2.0, 3.0, 4.0])
        var = np.array([np.diag(sample_niw(rng, np.zeros(4), 1.0, 10.0, psi, diagonal=True)[1])
                        for _ in range(20_000)])
        np.testing.assert_allclose(var.mean(axis=0), np.diag(psi) / 8.0, rtol=0.03)


class TestGlobalWeights:
    def test_symmetric_when_no_tables(self):
        rng = np.random.default_rng(0)
        L = 5
        draws = np.array([resample_global_weights(np.zeros((L, L)), 1.0, rng).beta for _ in range(20_000)])
        np.testing.assert_allclose(draws.mean(axis=0), 1.0 / L, atol=0.01)

    def test_dominant_column(self):
        rng = np.random.default_rng(1)
        aux = np.zeros((4, 4))
        aux[2, 0] = 1000
        draws = [resample_global_weights(aux, 1.0, rng).beta[0] for _ in range(5000)]
        assert np.mean(draws) == pytest.approx(1000 / 1001, abs=0.01)

    @settings(max_examples=100, deadline=None)
    @given(st.lists(st.integers(0, 50), min_size=4, max_size=4), st.floats(1e-3, 100), st.integers(0, 2**31))
    def test_on_simplex(self, col, gamma, seed):
        aux = np.diag(col)
        w = resample_global_weights(aux, gamma, np.random.default_rng(seed))
        assert abs(w.beta.sum() - 1) <= 1e-12 and w.remainder == 0 and np.all(w.beta >= 0)


class TestAuxCounts:
    def test_zero_and_one(self, rng):
        counts = np.array([[0, 1], [1, 0]])
        for _ in range(50):
            np.testing.assert_array_equal(table_counts(counts, np.full((2, 2), 0.3), rng), counts)

    def test_matches_crp_simulation(self):
        n_draws = 100_000
        counts = np.full((n_draws // 100, 1), 5)
        rng = np.random.default_rng(0)
        ours = np.concatenate([table_counts(counts, np.ones_like(counts, dtype=float), rng).ravel()
                               for _ in range(100)])
        sim_rng = np.random.default_rng(1)
        sim = np.array([crp_tables(5, 1.0, sim_rng) for _ in range(20_000)])
        assert abs(ours.mean() - sim.mean()) < 0.02
        # harmonic number H_5
        assert ours.mean() == pytest.approx(sum(1 / k for k in range(1, 6)), abs=0.02)

    def test_sticky_thinning(self, rng):
        L = 3
        labels = np.repeat([0, 1, 2], 40)
        h = simple_hyper(kappa=100.0, truncation_L=L)
        st0 = initial_state(rng.normal(size=(120, 4)), h, rng)
        counts = count_transitions(labels, L)
        state = ModelState(uniform_weights(L), st0.trans, st0.emit, labels, counts, np.zeros((L, L), int))
        m = np.array([sample_aux_counts(state, h, rng) for _ in range(2000)])
        assert np.all(m <= counts) and np.all(m >= 0)
        # diagonal tables survive w.p. alpha*beta/(kappa+alpha*beta) ~ 1/301 each
        assert m[:, 0, 0].mean() < 0.2
        h0 = simple_hyper(kappa=0.0, truncation_L=L)
        m0 = np.array([sample_aux_counts(state, h0, rng) for _ in range(2000)])
        assert m0[:, 0, 0].mean() > 1.0


def _synthetic(seed=0, T=300):
    series, truth = synthesize(3, T, seed=seed, self_prob=0.95, separation=10.0)
    return series.channels, truth


class TestSweep:
    def test_bit_reproducible(self, backend):
        obs, _ = _synthetic()
        h = Hyperparameters.from_data(obs, truncation_L=8)
        runs = []
        for _ in range(2):
            s = initial_state(obs, h, substream(3, 1))
            rng = substream(3, 2)
            for _ in range(3):
                s = gibbs_sweep(s, obs, h, rng)
            runs.append(s)
        a, b = runs
        np.testing.assert_array_equal(a.labels, b.labels)
        np.testing.assert_array_equal(a.trans.rows, b.trans.rows)
        np.testing.assert_array_equal(a.emit.covariances, b.emit.covariances)

    def test_invariants(self, backend):
        obs, _ = _synthetic(1)
        h = Hyperparameters.from_data(obs, truncation_L=10)
        rng = np.random.default_rng(0)
        s = initial_state(obs, h, rng)
        for _ in range(10):
            s = gibbs_sweep(s, obs, h, rng)
            np.testing.assert_array_equal(s.transition_counts, count_transitions(s.labels, s.L))
            assert np.all(np.abs(s.trans.rows.sum(axis=1) - 1) <= 1e-10)
            assert abs(s.weights.folded().sum() - 1) <= 1e-10
            np.testing.assert_allclose(s.trans.initial, s.weights.folded())
            assert np.all(s.aux_table_counts <= s.transition_counts)
            assert np.all((s.aux_table_counts == 0) | (s.transition_counts > 0))
            assert np.isfinite(joint_log_density(s, obs, h))

    def test_backends_give_same_chain(self):
        from drivestyle import kernels
        backends = kernels.available_backends()
        if len(backends) < 2:
            pytest.skip("one backend only")
        obs, _ = _synthetic(2)
        h = Hyperparameters.from_data(obs, truncation_L=6)
        labels = []
        for impl in backends.values():
            saved = {n: getattr(kernels, n) for n in ("backward_messages", "sample_forward", "crt_counts")}
            try:
                for n in saved:
                    setattr(kernels, n, getattr(impl, n))
                labels.append(fit(obs, h, 5, seed=1).labels_map)
            finally:
                for n, f in saved.items():
                    setattr(kernels, n, f)
        np.testing.assert_array_equal(labels[0], labels[1])


class TestJointDensity:
    def test_matches_direct_sum(self, rng):
        obs, _ = _synthetic(3, T=40)
        h = Hyperparameters.from_data(obs, truncation_L=4)
        s = gibbs_sweep(initial_state(obs, h, rng), obs, h, rng)
        z = s.labels
        expected = np.log(s.trans.initial[z[0]]) + sum(np.log(s.trans.rows[a, b]) for a, b in zip(z[:-1], z[1:]))
        for k in np.unique(z):
            mean, cov = s.emit.means[k], s.emit.covariances[k]
            expected += stats.multivariate_normal(mean, cov).logpdf(obs[z == k]).sum()
            expected += stats.invwishart(df=h.niw_dof0, scale=h.niw_psi0).logpdf(cov)
            expected += stats.multivariate_normal(h.niw_mean0, cov / h.niw_scale0).logpdf(mean)
        assert joint_log_density(s, obs, h) == pytest.approx(expected, rel=1e-10)

    def test_invariant_under_relabeling(self, rng):
        obs, _ = _synthetic(4, T=60)
        h = Hyperparameters.from_data(obs, truncation_L=5)
        s = gibbs_sweep(initial_state(obs, h, rng), obs, h, rng)
        order = rng.permutation(5)
        assert joint_log_density(s.permuted(order), obs, h) == pytest.approx(joint_log_density(s, obs, h), rel=1e-12)


class TestFit:
    def test_precondition(self):
        obs, _ = _synthetic()
        h = Hyperparameters.from_data(obs)
        for iters, burn in ((0, 0), (10, 10), (5, -1)):
            with pytest.raises(errors.ConfigError):
                fit(obs, h, iters, burn)

    def test_dimension_check(self):
        h = simple_hyper()
        with pytest.raises(errors.LengthMismatch):
            fit(np.zeros((10, 3)), h, 2)

    def test_result_shape(self):
        obs, truth = _synthetic(5, T=400)
        h = Hyperparameters.from_data(obs, truncation_L=10)
        r = fit(obs, h, 100, burn_in=50, seed=3)
        assert len(r.trace) == 100 and np.all(np.isfinite(r.trace))
        assert 50 <= r.best_iteration < 100
        assert r.trace[r.best_iteration] == r.trace[50:].max()
        occ = np.bincount(r.labels_map)
        assert np.all(occ > 0) and np.all(np.diff(occ) <= 0)
        assert r.n_clusters <= 10
        assert matched_accuracy(truth, r.labels_map) >= 0.95

    def test_determinism(self):
        obs, _ = _synthetic(6, T=200)
        h = Hyperparameters.from_data(obs, truncation_L=8)
        a, b = fit(obs, h, 8, seed=11), fit(obs, h, 8, seed=11)
        np.testing.assert_array_equal(a.labels_map, b.labels_map)
        np.testing.assert_array_equal(a.trace, b.trace)
        c = fit(obs, h, 8, seed=12)
        assert not np.array_equal(a.trace, c.trace)

    def test_accepts_series_and_callback(self):
        series, _ = synthesize(2, 100, seed=1)
        seen = []
        fit(series, Hyperparameters.from_data(series.channels, truncation_L=4), 3,
            callback=lambda it, s, lp: seen.append(it))
        assert seen == [0, 1, 2]


class TestSegments:
    def test_examples(self):
        segs = extract_segments([0, 0, 1, 1, 1, 0])
        assert [(s.cluster_id, s.start, s.stop) for s in segs] == [(0, 0, 2), (1, 2, 5), (0, 5, 6)]
        assert len(extract_segments([4] * 7)) == 1
        assert [len(s) for s in extract_segments([0, 1, 0, 1])] == [1, 1, 1, 1]

    def test_empty(self):
        with pytest.raises(errors.LengthMismatch):
            extract_segments([])

    @given(st.lists(st.integers(0, 3), min_size=1, max_size=200))
    def test_tiling(self, labels):
        segs = extract_segments(labels)
        assert segs[0].start == 0 and segs[-1].stop == len(labels)
        for a, b in zip(segs, segs[1:]):
            assert a.stop == b.start and a.cluster_id != b.cluster_id
        for s in segs:
            assert all(labels[t] == s.cluster_id for t in range(s.start, s.stop))


class TestSummaries:
    def test_single_cluster(self, rng):
        x = rng.normal(size=(30, 4))
        (c,) = summarize_clusters(x, np.zeros(30, dtype=int))
        assert c.occupancy == 1.0 and c.n_frames == 30
        np.testing.assert_allclose(c.mean, x.mean(axis=0))

    def test_even_split(self, rng):
        out = summarize_clusters(rng.normal(size=(10, 4)), np.repeat([0, 1], 5))
        assert [c.occupancy for c in out] == [0.5, 0.5]

    def test_segments_carry_channels(self, rng):
        x = rng.normal(size=(6, 4))
        out = summarize_clusters(x, np.array([0, 0, 1, 1, 1, 0]))
        np.testing.assert_array_equal(out[0].segments[1].channels, x[5:6])

    def test_length_mismatch(self, rng):
        with pytest.raises(errors.LengthMismatch):
            summarize_clusters(rng.normal(size=(5, 4)), np.zeros(4, dtype=int))

    @given(st.lists(st.integers(0, 5), min_size=1, max_size=100))
    def test_occupancy_partition(self, labels):
        x = np.arange(4 * len(labels), dtype=float).reshape(-1, 4)
        out = summarize_clusters(x, np.array(labels))
        assert abs(sum(c.occupancy for c in out) - 1) <= 1e-12
        assert sum(c.n_frames for c in out) == len(labels)
