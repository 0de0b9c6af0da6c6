"""Finite-state Gaussian HMM primitives: likelihood, posterior path sampling,
ancestral generation and a brute-force enumeration oracle."""
from __future__ import annotations

import itertools
from dataclasses import dataclass

import numpy as np
from scipy.linalg import solve_triangular

from . import kernels
from .errors import DimensionMismatch, NonSPDCovariance, NumericalError, TooLarge

SIMPLEX_ATOL = 1e-10
BRUTE_FORCE_CAP = 10**6
_LOG_2PI = np.log(2.0 * np.pi)


@dataclass(frozen=True)
class TransitionMatrix:
    rows: np.ndarray
    initial: np.ndarray

    def __post_init__(self):
        rows = np.ascontiguousarray(self.rows, dtype=float)
        initial = np.ascontiguousarray(self.initial, dtype=float)
        object.__setattr__(self, "rows", rows)
        object.__setattr__(self, "initial", initial)
        K = len(initial)
        if rows.shape != (K, K):
            raise DimensionMismatch(f"rows shape {rows.shape} does not match {K} states")
        if np.any(rows < 0) or np.any(initial < 0):
            raise DimensionMismatch("negative transition probability")
        if np.any(np.abs(rows.sum(axis=1) - 1.0) > SIMPLEX_ATOL) or abs(initial.sum() - 1.0) > SIMPLEX_ATOL:
            raise DimensionMismatch("transition rows and initial distribution must sum to 1")

    @property
    def n_states(self) -> int:
        return len(self.initial)


@dataclass(frozen=True)
class EmissionParams:
    """Per-state Gaussian means ``(K, D)`` and covariances ``(K, D, D)``."""

    means: np.ndarray
    covariances: np.ndarray

    def __post_init__(self):
        means = np.ascontiguousarray(self.means, dtype=float)
        covs = np.ascontiguousarray(self.covariances, dtype=float)
        object.__setattr__(self, "means", means)
        object.__setattr__(self, "covariances", covs)
        K, D = means.shape
        if covs.shape != (K, D, D):
            raise DimensionMismatch(f"covariances shape {covs.shape} does not match means {means.shape}")

    @property
    def n_states(self) -> int:
        return self.means.shape[0]

    @property
    def dim(self) -> int:
        return self.means.shape[1]

    def cholesky(self) -> np.ndarray:
        """Lower Cholesky factors; raises NonSPDCovariance instead of regularizing."""
        out = np.empty_like(self.covariances)
        for k, cov in enumerate(self.covariances):
            if not np.allclose(cov, cov.T, rtol=0, atol=1e-10 * max(1.0, np.abs(cov).max())):
                raise NonSPDCovariance(f"covariance of state {k} is not symmetric")
            try:
                out[k] = np.linalg.cholesky(cov)
            except np.linalg.LinAlgError:
                raise NonSPDCovariance(f"covariance of state {k} is not positive definite") from None
        return out


def _check(obs: np.ndarray, trans: TransitionMatrix, emit: EmissionParams) -> np.ndarray:
    obs = np.atleast_2d(np.asarray(obs, dtype=float))
    if obs.shape[0] < 1:
        raise DimensionMismatch("need at least one observation")
    if obs.shape[1] != emit.dim:
        raise DimensionMismatch(f"observations have {obs.shape[1]} channels, emissions {emit.dim}")
    if trans.n_states != emit.n_states:
        raise DimensionMismatch(f"{trans.n_states} transition states vs {emit.n_states} emission states")
    return obs


def gaussian_log_density(obs: np.ndarray, emit: EmissionParams) -> np.ndarray:
    """``(T, K)`` matrix of multivariate normal log densities."""
    obs = np.atleast_2d(np.asarray(obs, dtype=float))
    chol = emit.cholesky()
    T, D = obs.shape
    out = np.empty((T, emit.n_states))
    for k in range(emit.n_states):
        diff = (obs - emit.means[k]).T
        z = solve_triangular(chol[k], diff, lower=True, check_finite=False)
        half_logdet = np.log(np.diag(chol[k])).sum()
        out[:, k] = -0.5 * np.einsum("ij,ij->j", z, z) - half_logdet - 0.5 * D * _LOG_2PI
    return out


def forward_log_likelihood(obs, trans: TransitionMatrix, emit: EmissionParams) -> float:
    """log P(obs) summed over all hidden paths, via the forward recursion."""
    obs = _check(obs, trans, emit)
    return kernels.forward_loglik(trans.rows, trans.initial, gaussian_log_density(obs, emit))


def _enumerate_paths(obs, trans: TransitionMatrix, emit: EmissionParams):
    # independent density route: scipy rather than gaussian_log_density
    from scipy.stats import multivariate_normal

    obs = _check(obs, trans, emit)
    T, K = obs.shape[0], trans.n_states
    if K**T > BRUTE_FORCE_CAP:
        raise TooLarge(f"{K}**{T} paths exceeds {BRUTE_FORCE_CAP}")
    emit.cholesky()
    dens = np.array(
        [multivariate_normal(emit.means[k], emit.covariances[k]).logpdf(obs).reshape(T) for k in range(K)]
    ).T
    with np.errstate(divide="ignore"):
        log_rows = np.log(trans.rows)
        log_init = np.log(trans.initial)
    paths = list(itertools.product(range(K), repeat=T))
    lps = np.empty(len(paths))
    for n, path in enumerate(paths):
        lp = log_init[path[0]] + dens[0, path[0]]
        for t in range(1, T):
            lp += log_rows[path[t - 1], path[t]] + dens[t, path[t]]
        lps[n] = lp
    return paths, lps


def brute_force_likelihood(obs, trans: TransitionMatrix, emit: EmissionParams) -> float:
    """log P(obs) by enumerating all K**T paths. Oracle only."""
    _, lps = _enumerate_paths(obs, trans, emit)
    m = lps.max()
    if not np.isfinite(m):
        return -np.inf
    return float(m + np.log(np.exp(lps - m).sum()))


def brute_force_path_posterior(obs, trans: TransitionMatrix, emit: EmissionParams) -> dict[tuple, float]:
    """Exact posterior probability of every state path (K**T <= cap)."""
    paths, lps = _enumerate_paths(obs, trans, emit)
    w = np.exp(lps - lps.max())
    w /= w.sum()
    return dict(zip(paths, w.tolist()))


def sample_state_sequence(obs, trans: TransitionMatrix, emit: EmissionParams, rng: np.random.Generator,
                          log_emit: np.ndarray | None = None) -> np.ndarray:
    """Draw a path from P(X | obs): backward messages, then forward sampling.

    ``log_emit`` may be passed when the caller already holds the emission
    log-density matrix.
    """
    obs = _check(obs, trans, emit)
    if log_emit is None:
        log_emit = gaussian_log_density(obs, emit)
    back = kernels.backward_messages(trans.rows, log_emit)
    u = rng.random(len(obs))
    try:
        return kernels.sample_forward(trans.rows, trans.initial, log_emit, back, u)
    except FloatingPointError as exc:
        raise NumericalError(str(exc)) from None


def generate(trans: TransitionMatrix, emit: EmissionParams, T: int, rng: np.random.Generator):
    """Ancestral sample of ``T`` frames; returns ``(labels, obs)``."""
    if trans.n_states != emit.n_states:
        raise DimensionMismatch(f"{trans.n_states} transition states vs {emit.n_states} emission states")
    chol = emit.cholesky()
    labels = np.empty(T, dtype=np.int64)
    K = trans.n_states
    labels[0] = rng.choice(K, p=trans.initial)
    for t in range(1, T):
        labels[t] = rng.choice(K, p=trans.rows[labels[t - 1]])
    noise = rng.standard_normal((T, emit.dim))
    obs = emit.means[labels] + np.einsum("tij,tj->ti", chol[labels], noise)
    return labels, obs

