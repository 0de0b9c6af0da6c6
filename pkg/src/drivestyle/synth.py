"""Synthetic sticky-HMM kinematics for recovery benchmarks."""
from __future__ import annotations

import numpy as np

from .errors import ConfigError
from .hmm import EmissionParams, TransitionMatrix, generate
from .ingest import CHANNELS, DrivingSeries
from .sticky import STREAM_SYNTH, substream


def simplex_means(K: int, separation: float, dim: int = len(CHANNELS)) -> np.ndarray:
    """``K`` means with pairwise distance at least ``separation``.

    The first ``dim + 1`` sit on a regular simplex of edge ``separation``;
    further groups repeat it shifted by ``3 * separation`` along the first axis.
    """
    n = dim + 1
    vertices = np.eye(n) * (separation / np.sqrt(2.0))
    vertices -= vertices.mean(axis=0)
    # orthonormal basis of the hyperplane orthogonal to (1, ..., 1)
    q, _ = np.linalg.qr(np.vstack([np.ones(n), np.eye(n)[:-1]]).T)
    flat = vertices @ q[:, 1:]
    shift = np.zeros(dim)
    shift[0] = 3.0 * separation
    return np.array([flat[k % n] + (k // n) * shift for k in range(K)])


def sticky_matrix(K: int, self_prob: float) -> np.ndarray:
    if K == 1:
        return np.ones((1, 1))
    rows = np.full((K, K), (1.0 - self_prob) / (K - 1))
    np.fill_diagonal(rows, self_prob)
    return rows


def synthesize(K: int, T: int, seed: int = 42, self_prob: float = 0.95, separation: float = 10.0,
               rate_hz: float = 10.0) -> tuple[DrivingSeries, np.ndarray]:
    """Unit-covariance Gaussian emissions, uniform initial state."""
    if K < 1:
        raise ConfigError(f"need at least one state, got {K}")
    if not 0.0 <= self_prob < 1.0:
        raise ConfigError(f"self-transition probability must be in [0, 1), got {self_prob}")
    if T < 2:
        raise ConfigError(f"need at least 2 frames, got {T}")
    D = len(CHANNELS)
    trans = TransitionMatrix(sticky_matrix(K, self_prob), np.full(K, 1.0 / K))
    emit = EmissionParams(simplex_means(K, separation, D), np.tile(np.eye(D), (K, 1, 1)))
    labels, obs = generate(trans, emit, T, substream(seed, STREAM_SYNTH))
    series = DrivingSeries(np.arange(T) / rate_hz, obs, rate_hz, f"synth:K={K}:seed={seed}")
    return series, labels
