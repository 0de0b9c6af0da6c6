"""Weak-limit sticky HDP-HMM with Gaussian (NIW) emissions and a blocked
Gibbs sampler.

One sweep resamples, in order: the label path (backward messages, forward
sampling), transition counts, auxiliary table counts with the sticky
override, global weights, transition rows, emission parameters.
"""
from __future__ import annotations

import logging
from dataclasses import dataclass, field, replace
from typing import Callable, Sequence

import numpy as np
from scipy.linalg import solve_triangular
from scipy.special import gammaln, multigammaln

from . import kernels
from .errors import ConfigError, LengthMismatch, NonSPDPsi, NumericalError
from .hmm import EmissionParams, TransitionMatrix, gaussian_log_density, sample_state_sequence

log = logging.getLogger(__name__)

EMISSION_MODES = ("full", "diagonal")
INIT_STATES = 10

# named substreams derived from the run seed
STREAM_INIT = 1
STREAM_SWEEPS = 2
STREAM_SYNTH = 3


def substream(seed: int, stream: int, chain: int = 0) -> np.random.Generator:
    return np.random.default_rng(np.random.SeedSequence(int(seed), spawn_key=(stream, chain)))


# --------------------------------------------------------------------------
# types


@dataclass(frozen=True, eq=False)
class Hyperparameters:
    alpha: float
    gamma: float
    kappa: float
    niw_mean0: np.ndarray
    niw_scale0: float
    niw_dof0: float
    niw_psi0: np.ndarray
    truncation_L: int = 20
    emission_mode: str = "full"

    def __post_init__(self):
        object.__setattr__(self, "niw_mean0", np.asarray(self.niw_mean0, dtype=float))
        object.__setattr__(self, "niw_psi0", np.asarray(self.niw_psi0, dtype=float))
        D = self.niw_mean0.shape[0]
        if not self.alpha > 0:
            raise ConfigError(f"alpha must be > 0, got {self.alpha}")
        if not self.gamma > 0:
            raise ConfigError(f"gamma must be > 0, got {self.gamma}")
        if not self.kappa >= 0:
            raise ConfigError(f"kappa must be >= 0, got {self.kappa}")
        if not self.niw_scale0 > 0:
            raise ConfigError(f"niw_scale0 must be > 0, got {self.niw_scale0}")
        if not self.niw_dof0 > D + 1:
            raise ConfigError(f"niw_dof0 must exceed dim + 1 = {D + 1}, got {self.niw_dof0}")
        if int(self.truncation_L) != self.truncation_L or self.truncation_L < 2:
            raise ConfigError(f"truncation_L must be an integer >= 2, got {self.truncation_L}")
        if self.emission_mode not in EMISSION_MODES:
            raise ConfigError(f"emission_mode must be one of {EMISSION_MODES}, got {self.emission_mode!r}")
        psi = self.niw_psi0
        if psi.shape != (D, D) or not np.allclose(psi, psi.T, rtol=0, atol=1e-10 * max(1.0, np.abs(psi).max())):
            raise NonSPDPsi("niw_psi0 must be a symmetric matrix matching niw_mean0")
        try:
            np.linalg.cholesky(psi)
        except np.linalg.LinAlgError:
            raise NonSPDPsi("niw_psi0 is not positive definite") from None

    @property
    def dim(self) -> int:
        return self.niw_mean0.shape[0]

    @classmethod
    def from_data(cls, obs, *, alpha=1.0, gamma=1.0, kappa=10.0, truncation_L=20,
                  niw_scale0=0.01, niw_dof0=None, psi_fraction=0.75, emission_mode="full"):
        """Data-adaptive NIW base measure: mean of the data, ``psi_fraction``
        times its covariance, ``dim + 3`` degrees of freedom."""
        obs = np.atleast_2d(np.asarray(obs, dtype=float))
        D = obs.shape[1]
        cov = np.atleast_2d(np.cov(obs, rowvar=False))
        # degenerate (constant) channels would make psi singular
        floor = 1e-6 * max(float(np.trace(cov)) / D, 1.0)
        psi = psi_fraction * cov + floor * np.eye(D)
        return cls(
            alpha=float(alpha), gamma=float(gamma), kappa=float(kappa),
            niw_mean0=obs.mean(axis=0), niw_scale0=float(niw_scale0),
            niw_dof0=float(D + 3 if niw_dof0 is None else niw_dof0), niw_psi0=psi,
            truncation_L=int(truncation_L), emission_mode=emission_mode,
        )

    def to_dict(self) -> dict:
        return {
            "alpha": self.alpha, "gamma": self.gamma, "kappa": self.kappa,
            "niw_mean0": self.niw_mean0.tolist(), "niw_scale0": self.niw_scale0,
            "niw_dof0": self.niw_dof0, "niw_psi0": self.niw_psi0.tolist(),
            "truncation_L": self.truncation_L, "emission_mode": self.emission_mode,
        }

    @classmethod
    def from_dict(cls, d) -> "Hyperparameters":
        return cls(**d)


@dataclass(frozen=True)
class GlobalWeights:
    beta: np.ndarray
    remainder: float = 0.0

    def folded(self) -> np.ndarray:
        """Weights with the truncation remainder added to the last slot."""
        b = np.array(self.beta, dtype=float)
        b[-1] += self.remainder
        return b


@dataclass(frozen=True)
class ModelState:
    weights: GlobalWeights
    trans: TransitionMatrix
    emit: EmissionParams
    labels: np.ndarray
    transition_counts: np.ndarray
    aux_table_counts: np.ndarray

    @property
    def L(self) -> int:
        return self.trans.n_states

    def permuted(self, order: np.ndarray) -> "ModelState":
        """Reindex states so new state ``k`` is old state ``order[k]``."""
        order = np.asarray(order)
        inv = np.empty_like(order)
        inv[order] = np.arange(len(order))
        ix = np.ix_(order, order)
        return ModelState(
            weights=GlobalWeights(self.weights.folded()[order], 0.0),
            trans=TransitionMatrix(self.trans.rows[ix], self.trans.initial[order]),
            emit=EmissionParams(self.emit.means[order], self.emit.covariances[order]),
            labels=inv[self.labels],
            transition_counts=self.transition_counts[ix],
            aux_table_counts=self.aux_table_counts[ix],
        )


@dataclass
class FitResult:
    final_state: ModelState
    best_state: ModelState
    labels_map: np.ndarray
    trace: np.ndarray
    best_iteration: int
    seed: int
    config: dict = field(default_factory=dict)

    @property
    def n_clusters(self) -> int:
        return int(self.labels_map.max()) + 1


@dataclass(frozen=True)
class Segment:
    """Half-open run ``[start, stop)`` of constant cluster id."""

    cluster_id: int
    start: int
    stop: int
    channels: np.ndarray | None = field(default=None, compare=False, repr=False)

    def __len__(self):
        return self.stop - self.start


@dataclass(frozen=True)
class ClusterSummary:
    cluster_id: int
    occupancy: float
    n_frames: int
    mean: np.ndarray = field(compare=False)
    std: np.ndarray = field(compare=False)
    segments: tuple[Segment, ...] = ()


# --------------------------------------------------------------------------
# random primitives


def dirichlet(rng: np.random.Generator, params) -> np.ndarray:
    """Dirichlet draw that stays on the simplex for tiny concentrations.

    Gamma variates are formed in log space (``G_a = G_{a+1} U^{1/a}`` for
    ``a < 1``) so they cannot all underflow. Zero parameters give exact zeros.
    """
    a = np.asarray(params, dtype=float)
    pos = a > 0
    if not pos.any():
        raise NumericalError("Dirichlet parameters are all zero")
    small = a < 1.0
    g = rng.standard_gamma(np.where(pos, np.where(small, a + 1.0, a), 1.0))
    u = rng.random(a.shape)
    with np.errstate(divide="ignore"):
        logg = np.log(g) + np.where(small & pos, np.log(u) / np.where(pos, a, 1.0), 0.0)
    logg[~pos] = -np.inf
    x = np.exp(logg - logg[pos].max())
    return x / x.sum()


def sample_invwishart(rng: np.random.Generator, dof: float, psi: np.ndarray) -> np.ndarray:
    """Inverse-Wishart draw by the Bartlett decomposition."""
    D = psi.shape[0]
    C = np.linalg.cholesky(psi)
    A = np.zeros((D, D))
    A[np.diag_indices(D)] = np.sqrt(rng.chisquare(dof - np.arange(D)))
    A[np.tril_indices(D, -1)] = rng.standard_normal(D * (D - 1) // 2)
    # Sigma = C A^{-T} A^{-1} C^T
    B = C @ solve_triangular(A, np.eye(D), lower=True, check_finite=False).T
    S = B @ B.T
    return 0.5 * (S + S.T)


def break_sticks(gamma: float, L: int, rng: np.random.Generator | None = None, nu=None) -> GlobalWeights:
    """Truncated stick-breaking. ``nu`` forces the Beta(1, gamma) fractions."""
    if L < 2:
        raise ConfigError(f"truncation must be >= 2, got {L}")
    nu = rng.beta(1.0, gamma, size=L) if nu is None else np.asarray(nu, dtype=float)
    if nu.shape != (L,):
        raise ConfigError(f"need {L} stick fractions, got {nu.shape}")
    left = np.concatenate(([1.0], np.cumprod(1.0 - nu)))
    beta = nu * left[:-1]
    return GlobalWeights(beta, float(left[-1]))


def sample_transition_row(i: int, weights: GlobalWeights, alpha: float, kappa: float, counts_row,
                          rng: np.random.Generator) -> np.ndarray:
    """Row ``i`` from Dirichlet(alpha*beta + kappa*e_i + counts_row)."""
    params = alpha * weights.folded() + np.asarray(counts_row, dtype=float)
    params[i] += kappa
    return dirichlet(rng, params)


def sticky_prior_self_mean(alpha: float, kappa: float, beta_i: float) -> float:
    return (alpha * beta_i + kappa) / (alpha + kappa)


# --------------------------------------------------------------------------
# emissions


def suff_stats(obs: np.ndarray, labels: np.ndarray, L: int):
    """Per-state counts, means and centred scatter matrices."""
    obs = np.atleast_2d(obs)
    D = obs.shape[1]
    n = np.bincount(labels, minlength=L)
    means = np.zeros((L, D))
    scatter = np.zeros((L, D, D))
    order = np.argsort(labels, kind="stable")
    bounds = np.concatenate(([0], np.cumsum(n)))
    for k in np.flatnonzero(n):
        x = obs[order[bounds[k]:bounds[k + 1]]]
        means[k] = x.mean(axis=0)
        d = x - means[k]
        scatter[k] = d.T @ d
    return n, means, scatter


def niw_posterior(n: int, mean: np.ndarray, scatter: np.ndarray, hyper: Hyperparameters):
    """Conjugate update; returns ``(mu_n, kappa_n, nu_n, psi_n)``."""
    k0, nu0, mu0, psi0 = hyper.niw_scale0, hyper.niw_dof0, hyper.niw_mean0, hyper.niw_psi0
    if n == 0:
        return mu0.copy(), k0, nu0, psi0.copy()
    kn = k0 + n
    mun = (k0 * mu0 + n * mean) / kn
    d = (mean - mu0)[:, None]
    psin = psi0 + scatter + (k0 * n / kn) * (d @ d.T)
    return mun, kn, nu0 + n, 0.5 * (psin + psin.T)


def niw_posterior_from_obs(obs, hyper: Hyperparameters):
    obs = np.asarray(obs, dtype=float).reshape(-1, hyper.dim)
    if len(obs) == 0:
        return niw_posterior(0, None, None, hyper)
    mean = obs.mean(axis=0)
    d = obs - mean
    return niw_posterior(len(obs), mean, d.T @ d, hyper)


def sample_niw(rng: np.random.Generator, mu, kappa, nu, psi, diagonal=False):
    """One (mean, covariance) draw. Diagonal mode draws each channel's
    variance from its own 1-D inverse-Wishart (inverse-gamma)."""
    D = len(mu)
    if diagonal:
        var = 0.5 * np.diag(psi) / rng.standard_gamma(0.5 * nu, size=D)
        cov = np.diag(var)
        mean = mu + np.sqrt(var / kappa) * rng.standard_normal(D)
        return mean, cov
    cov = sample_invwishart(rng, nu, psi)
    mean = mu + np.linalg.cholesky(cov / kappa) @ rng.standard_normal(D)
    return mean, cov


def sample_emission_params(grouped_obs: Sequence[np.ndarray], hyper: Hyperparameters,
                           rng: np.random.Generator) -> EmissionParams:
    """Posterior NIW draw per state; empty groups draw from the prior."""
    stats = []
    for x in grouped_obs:
        x = np.asarray(x, dtype=float).reshape(-1, hyper.dim)
        if len(x):
            m = x.mean(axis=0)
            stats.append((len(x), m, (x - m).T @ (x - m)))
        else:
            stats.append((0, None, None))
    return _emissions_from_stats(stats, hyper, rng)


def _emissions_from_stats(stats, hyper, rng):
    K, D = len(stats), hyper.dim
    means = np.empty((K, D))
    covs = np.empty((K, D, D))
    diagonal = hyper.emission_mode == "diagonal"
    for k, (n, m, s) in enumerate(stats):
        post = niw_posterior(n, m, s, hyper)
        try:
            means[k], covs[k] = sample_niw(rng, *post, diagonal=diagonal)
        except np.linalg.LinAlgError:
            raise NumericalError(f"NIW draw for state {k} is not positive definite") from None
    return EmissionParams(means, covs)


def niw_log_density(mean, cov, hyper: Hyperparameters) -> float:
    """log NIW(mean, cov) under the prior (product of 1-D terms in diagonal mode)."""
    k0, nu0, mu0, psi0 = hyper.niw_scale0, hyper.niw_dof0, hyper.niw_mean0, hyper.niw_psi0
    if hyper.emission_mode == "diagonal":
        var = np.diag(cov)
        b = 0.5 * np.diag(psi0)
        a = 0.5 * nu0
        lig = a * np.log(b) - gammaln(a) - (a + 1) * np.log(var) - b / var
        lmn = -0.5 * (np.log(2 * np.pi * var / k0) + k0 * (mean - mu0) ** 2 / var)
        return float(lig.sum() + lmn.sum())
    D = len(mu0)
    Lc = np.linalg.cholesky(cov)
    logdet = 2.0 * np.log(np.diag(Lc)).sum()
    _, logdet_psi = np.linalg.slogdet(psi0)
    cinv_psi = np.linalg.solve(cov, psi0)
    liw = (0.5 * nu0 * logdet_psi - 0.5 * nu0 * D * np.log(2.0) - multigammaln(0.5 * nu0, D)
           - 0.5 * (nu0 + D + 1) * logdet - 0.5 * np.trace(cinv_psi))
    z = solve_triangular(Lc, mean - mu0, lower=True) * np.sqrt(k0)
    lmn = -0.5 * (D * np.log(2 * np.pi) + logdet - D * np.log(k0) + z @ z)
    return float(liw + lmn)


# --------------------------------------------------------------------------
# global weights and auxiliary counts


def resample_global_weights(aux_table_counts, gamma: float, rng: np.random.Generator) -> GlobalWeights:
    m = np.asarray(aux_table_counts).sum(axis=0)
    L = len(m)
    return GlobalWeights(dirichlet(rng, m + gamma / L), 0.0)


def count_transitions(labels, L: int) -> np.ndarray:
    labels = np.asarray(labels)
    c = np.zeros((L, L), dtype=np.int64)
    np.add.at(c, (labels[:-1], labels[1:]), 1)
    return c


def table_counts(counts, conc, rng: np.random.Generator) -> np.ndarray:
    """Raw CRT table counts for every cell (no sticky override)."""
    counts = np.asarray(counts, dtype=np.int64)
    u = rng.random(int(counts.sum()))
    return kernels.crt_counts(counts, np.asarray(conc, dtype=float), u)


def sample_aux_counts(state: ModelState, hyper: Hyperparameters, rng: np.random.Generator) -> np.ndarray:
    """Table counts with the sticky override: each self-transition table is
    discarded with probability kappa / (kappa + alpha*beta_i)."""
    beta = state.weights.folded()
    L = len(beta)
    conc = np.broadcast_to(hyper.alpha * beta, (L, L)).copy()
    conc[np.diag_indices(L)] += hyper.kappa
    m = table_counts(state.transition_counts, conc, rng)
    denom = hyper.kappa + hyper.alpha * beta
    rho = np.divide(hyper.kappa, denom, out=np.zeros(L), where=denom > 0)
    diag = np.diag(m).copy()
    m[np.diag_indices(L)] = diag - rng.binomial(diag, rho)
    return m


# --------------------------------------------------------------------------
# sweep, density, fit


def _transition_rows(weights, counts, hyper, rng):
    L = counts.shape[0]
    rows = np.empty((L, L))
    for i in range(L):
        rows[i] = sample_transition_row(i, weights, hyper.alpha, hyper.kappa, counts[i], rng)
    return TransitionMatrix(rows, weights.folded())


def gibbs_sweep(state: ModelState, obs: np.ndarray, hyper: Hyperparameters, rng: np.random.Generator) -> ModelState:
    """One blocked sweep: labels, counts, aux counts, beta, rows, emissions."""
    L = state.L
    labels = sample_state_sequence(obs, state.trans, state.emit, rng)
    counts = count_transitions(labels, L)
    staged = replace(state, labels=labels, transition_counts=counts)
    aux = sample_aux_counts(staged, hyper, rng)
    weights = resample_global_weights(aux, hyper.gamma, rng)
    trans = _transition_rows(weights, counts, hyper, rng)
    n, means, scatter = suff_stats(obs, labels, L)
    emit = _emissions_from_stats(list(zip(n, means, scatter)), hyper, rng)
    return ModelState(weights, trans, emit, labels, counts, aux)


def joint_log_density(state: ModelState, obs: np.ndarray, hyper: Hyperparameters) -> float:
    """log p(obs, labels | rows, emissions) plus the NIW prior of occupied states."""
    labels = state.labels
    occupied = np.unique(labels)
    ll = 0.0
    for k in occupied:
        sub = EmissionParams(state.emit.means[k:k + 1], state.emit.covariances[k:k + 1])
        ll += gaussian_log_density(obs[labels == k], sub).sum()
        ll += niw_log_density(state.emit.means[k], state.emit.covariances[k], hyper)
    with np.errstate(divide="ignore"):
        ll += np.log(state.trans.initial[labels[0]])
        ll += np.log(state.trans.rows[labels[:-1], labels[1:]]).sum()
    return float(ll)


def initial_state(obs: np.ndarray, hyper: Hyperparameters, rng: np.random.Generator) -> ModelState:
    """Labels uniform over min(L, 10) states, sticks from the prior, then
    rows and emissions drawn given those labels."""
    L = hyper.truncation_L
    labels = rng.integers(0, min(L, INIT_STATES), size=len(obs)).astype(np.int64)
    weights = break_sticks(hyper.gamma, L, rng)
    weights = GlobalWeights(weights.folded(), 0.0)
    counts = count_transitions(labels, L)
    trans = _transition_rows(weights, counts, hyper, rng)
    n, means, scatter = suff_stats(obs, labels, L)
    emit = _emissions_from_stats(list(zip(n, means, scatter)), hyper, rng)
    state = ModelState(weights, trans, emit, labels, counts, np.zeros((L, L), dtype=np.int64))
    return replace(state, aux_table_counts=sample_aux_counts(state, hyper, rng))


def dense_order(labels, L: int) -> np.ndarray:
    """State order: occupied states by descending occupancy (ties by index),
    then empty states by index."""
    occ = np.bincount(labels, minlength=L)
    return np.lexsort((np.arange(L), -occ))


def fit(obs, hyper: Hyperparameters, iterations: int, burn_in: int = 0, seed: int = 42, chain: int = 0,
        callback: Callable[[int, ModelState, float], None] | None = None) -> FitResult:
    """Run the blocked Gibbs sampler.

    ``obs`` is a ``(T, D)`` array or anything with a ``channels`` attribute.
    The returned segmentation is the post-burn-in sample with the highest
    joint log-density, relabeled densely by descending occupancy.
    """
    if not iterations > burn_in >= 0:
        raise ConfigError(f"need iterations > burn_in >= 0, got iterations={iterations}, burn_in={burn_in}")
    obs = np.ascontiguousarray(getattr(obs, "channels", obs), dtype=float)
    if obs.ndim != 2 or obs.shape[1] != hyper.dim:
        raise LengthMismatch(f"observations of shape {obs.shape} do not match dim {hyper.dim}")
    try:
        state = initial_state(obs, hyper, substream(seed, STREAM_INIT, chain))
    except NumericalError as exc:
        raise NumericalError(f"initialization failed: {exc}", iteration=0) from None
    rng = substream(seed, STREAM_SWEEPS, chain)
    trace = np.empty(iterations)
    best, best_lp, best_it = None, -np.inf, -1
    for it in range(iterations):
        try:
            state = gibbs_sweep(state, obs, hyper, rng)
        except NumericalError as exc:
            raise type(exc)(str(exc), iteration=it) from None
        lp = joint_log_density(state, obs, hyper)
        if not np.isfinite(lp):
            raise NumericalError(f"joint log-density is {lp}", iteration=it)
        trace[it] = lp
        if it >= burn_in and lp > best_lp:
            best, best_lp, best_it = state, lp, it
        if callback is not None:
            callback(it, state, lp)
        log.debug("sweep %d: log density %.3f, occupied %d", it, lp, len(np.unique(state.labels)))
    relabeled = best.permuted(dense_order(best.labels, hyper.truncation_L))
    return FitResult(
        final_state=state,
        best_state=relabeled,
        labels_map=relabeled.labels,
        trace=trace,
        best_iteration=best_it,
        seed=int(seed),
        config={"hyper": hyper.to_dict(), "iterations": iterations, "burn_in": burn_in, "chain": chain},
    )


# --------------------------------------------------------------------------
# segmentation


def extract_segments(labels) -> list[Segment]:
    labels = np.asarray(labels)
    if labels.size == 0:
        raise LengthMismatch("labels are empty")
    cuts = np.flatnonzero(labels[1:] != labels[:-1]) + 1
    starts = np.concatenate(([0], cuts))
    stops = np.concatenate((cuts, [len(labels)]))
    return [Segment(int(labels[a]), int(a), int(b)) for a, b in zip(starts, stops)]


def summarize_clusters(channels, labels) -> list[ClusterSummary]:
    """Per-cluster occupancy, channel mean/std and member segments.

    Pass channels in original physical units; segments carry views into them.
    """
    channels = np.asarray(getattr(channels, "channels", channels), dtype=float)
    labels = np.asarray(labels)
    if len(channels) != len(labels):
        raise LengthMismatch(f"{len(labels)} labels for {len(channels)} frames")
    segs: dict[int, list[Segment]] = {}
    for s in extract_segments(labels):
        segs.setdefault(s.cluster_id, []).append(replace(s, channels=channels[s.start:s.stop]))
    T = len(labels)
    out = []
    for cid in sorted(segs):
        mask = labels == cid
        x = channels[mask]
        out.append(ClusterSummary(cid, int(mask.sum()) / T, int(mask.sum()), x.mean(axis=0), x.std(axis=0),
                                  tuple(segs[cid])))
    return out
