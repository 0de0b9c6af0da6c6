"""Pure numpy kernels. Reference semantics for ``_kernels.pyx``.

All randomness enters as pre-drawn uniforms so that both backends consume
the generator identically.
"""
import numpy as np


def forward_loglik(trans, init, log_emit):
    """log P(obs) by the scaled forward recursion.

    ``log_emit[t, j]`` is the log emission density of frame t under state j.
    """
    trans = np.asarray(trans, dtype=np.float64)
    log_emit = np.asarray(log_emit, dtype=np.float64)
    T, K = log_emit.shape
    total = 0.0
    with np.errstate(divide="ignore", invalid="ignore"):
        m = log_emit[0].max()
        a = np.asarray(init, dtype=np.float64) * np.exp(log_emit[0] - m)
        c = a.sum()
        if not c > 0:
            return -np.inf
        total += np.log(c) + m
        a = a / c
        for t in range(1, T):
            m = log_emit[t].max()
            p = a @ trans
            a = p * np.exp(log_emit[t] - m)
            c = a.sum()
            if not c > 0:
                return -np.inf
            total += np.log(c) + m
            a = a / c
    return float(total)


def backward_messages(trans, log_emit):
    """Normalized log backward messages, ``out[T-1] = 0``.

    ``out[t, i] = log sum_j trans[i, j] exp(log_emit[t+1, j] + out[t+1, j])``
    shifted so that ``max_i out[t, i] = 0``. Rows are ``-inf`` only where no
    continuation has positive probability.
    """
    trans = np.asarray(trans, dtype=np.float64)
    log_emit = np.asarray(log_emit, dtype=np.float64)
    T, K = log_emit.shape
    out = np.zeros((T, K))
    with np.errstate(divide="ignore", invalid="ignore"):
        for t in range(T - 2, -1, -1):
            v = log_emit[t + 1] + out[t + 1]
            m = v.max()
            if not np.isfinite(m):
                out[t] = -np.inf
                continue
            w = np.exp(v - m)
            s = trans @ w
            smax = s.max()
            if not smax > 0:
                out[t] = -np.inf
                continue
            out[t] = np.log(s / smax)
    return out


def _pick(weights, u):
    cum = np.cumsum(weights)
    total = cum[-1]
    if not total > 0 or not np.isfinite(total):
        return -1
    j = int(np.searchsorted(cum, u * total, side="right"))
    if j >= len(weights):
        j = int(np.flatnonzero(weights > 0)[-1])
    return j


def sample_forward(trans, init, log_emit, log_back, uniforms):
    """Draw a state path from the exact posterior given backward messages.

    Returns an int64 array; raises ``FloatingPointError`` when a step has no
    state with positive posterior mass.
    """
    trans = np.asarray(trans, dtype=np.float64)
    log_emit = np.asarray(log_emit, dtype=np.float64)
    T, K = log_emit.shape
    labels = np.empty(T, dtype=np.int64)
    with np.errstate(divide="ignore", invalid="ignore", over="ignore"):
        prev_row = np.asarray(init, dtype=np.float64)
        for t in range(T):
            v = log_emit[t] + log_back[t]
            m = v.max()
            w = prev_row * np.exp(v - m) if np.isfinite(m) else np.zeros(K)
            j = _pick(w, uniforms[t])
            if j < 0:
                raise FloatingPointError(f"no state has positive posterior mass at t={t}")
            labels[t] = j
            prev_row = trans[j]
    return labels


def crt_counts(counts, conc, uniforms):
    """Chinese-restaurant table counts for every cell of ``counts``.

    Customer n (0-based) in cell (i, j) opens a table when
    ``u < conc[i, j] / (n + conc[i, j])``; the first customer always does.
    Uniforms are consumed in row-major cell order.
    """
    counts = np.asarray(counts, dtype=np.int64)
    conc = np.asarray(conc, dtype=np.float64)
    n = counts.ravel()
    total = int(n.sum())
    if total == 0:
        return np.zeros_like(counts)
    cell = np.repeat(np.arange(n.size), n)
    starts = np.cumsum(n) - n
    k = (np.arange(total) - np.repeat(starts, n)).astype(np.float64)
    c = conc.ravel()[cell]
    with np.errstate(divide="ignore", invalid="ignore"):
        p = c / (k + c)
    p[k == 0] = 1.0
    opened = np.asarray(uniforms[:total]) < p
    return np.bincount(cell, weights=opened, minlength=n.size).astype(np.int64).reshape(counts.shape)
