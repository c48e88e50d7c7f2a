"""Hot inner loops, each in a numba and a pure-numpy flavour.

The public names (``squeeze_rows``, ``local_md_sq``, ``viterbi_log``,
``nearest_centroid``) dispatch to the numba version unless numba is missing
or ``SLEEPGEOM_DISABLE_NUMBA`` is set.  The ``*_numpy`` and ``*_numba``
variants stay importable for equivalence tests and the benchmark script.
"""

from __future__ import annotations

import numpy as np

from ._accel import USE_NUMBA, njit, prange

__all__ = [
    "squeeze_rows",
    "squeeze_rows_numpy",
    "squeeze_rows_numba",
    "local_md_sq",
    "local_md_sq_numpy",
    "local_md_sq_numba",
    "viterbi_log",
    "viterbi_log_numpy",
    "viterbi_log_numba",
    "nearest_centroid",
    "nearest_centroid_numpy",
    "nearest_centroid_numba",
    "BACKEND",
]

BACKEND = "numba" if USE_NUMBA else "numpy"


# ---------------------------------------------------------------------------
# synchrosqueezing: scatter |V|^2 into reassigned unit bins
# ---------------------------------------------------------------------------


def squeeze_rows_numpy(khat: np.ndarray, power: np.ndarray, n_out: int) -> np.ndarray:
    """Sum ``power[r, k]`` into bin ``round_half_up(khat[r, k])`` of row ``r``.

    NaN entries of ``khat`` and targets outside ``[0, n_out)`` are dropped.
    """
    rows, cols = khat.shape
    with np.errstate(invalid="ignore"):
        idx = np.floor(khat + 0.5)
        keep = np.isfinite(idx) & (idx >= 0) & (idx < n_out)
    flat = (np.arange(rows)[:, None] * n_out + np.where(keep, idx, 0).astype(np.int64))[keep]
    out = np.bincount(flat, weights=power[keep], minlength=rows * n_out)
    return out.reshape(rows, n_out)


@njit(cache=True)
def squeeze_rows_numba(khat, power, n_out):
    rows, cols = khat.shape
    out = np.zeros((rows, n_out))
    for r in range(rows):
        for k in range(cols):
            v = khat[r, k]
            if not np.isfinite(v):
                continue
            t = np.floor(v + 0.5)
            if t < 0 or t >= n_out:
                continue
            out[r, int(t)] += power[r, k]
    return out


# ---------------------------------------------------------------------------
# local Mahalanobis quadratic forms
# ---------------------------------------------------------------------------


def local_md_sq_numpy(U: np.ndarray, P: np.ndarray, block: int = 64) -> np.ndarray:
    """Squared local Mahalanobis distances from per-point precision matrices.

    ``P[i]`` is the (truncated) inverse covariance attached to point ``i``;
    the result is ``0.5 * (d^T P[i] d + d^T P[j] d)`` with ``d = U[i] - U[j]``.
    """
    n = U.shape[0]
    q = np.empty((n, n))
    for i0 in range(0, n, block):
        i1 = min(i0 + block, n)
        diff = U[i0:i1, None, :] - U[None, :, :]
        q[i0:i1] = np.einsum("bjp,bpq,bjq->bj", diff, P[i0:i1], diff)
    return 0.5 * (q + q.T)


@njit(cache=True, parallel=True)
def _quad_forms_numba(U, P):
    n, p = U.shape
    q = np.empty((n, n))
    for i in prange(n):
        diff = np.empty(p)
        for j in range(n):
            for a in range(p):
                diff[a] = U[i, a] - U[j, a]
            acc = 0.0
            for a in range(p):
                row = 0.0
                for b in range(p):
                    row += P[i, a, b] * diff[b]
                acc += diff[a] * row
            q[i, j] = acc
    return q


def local_md_sq_numba(U: np.ndarray, P: np.ndarray) -> np.ndarray:
    q = _quad_forms_numba(np.ascontiguousarray(U, dtype=np.float64), np.ascontiguousarray(P, dtype=np.float64))
    return 0.5 * (q + q.T)


# ---------------------------------------------------------------------------
# Viterbi max-product recursion in log space
# ---------------------------------------------------------------------------


def viterbi_log_numpy(log_start, log_trans, log_emis, obs):
    """Log-domain Viterbi.

    Returns ``(nu, back, path)`` where ``nu[t, j]`` is the best log joint
    probability of a path ending in state ``j`` at step ``t`` and
    ``back[t, j]`` its predecessor (``-1`` at ``t = 0``).  Ties resolve to the
    lowest state index.
    """
    T = obs.shape[0]
    S = log_trans.shape[0]
    nu = np.empty((T, S))
    back = np.full((T, S), -1, dtype=np.int64)
    nu[0] = log_start + log_emis[:, obs[0]]
    for t in range(1, T):
        cand = nu[t - 1][:, None] + log_trans
        arg = np.argmax(cand, axis=0)
        back[t] = arg
        nu[t] = cand[arg, np.arange(S)] + log_emis[:, obs[t]]
    path = np.empty(T, dtype=np.int64)
    path[-1] = int(np.argmax(nu[-1]))
    for t in range(T - 1, 0, -1):
        path[t - 1] = back[t, path[t]]
    return nu, back, path


@njit(cache=True)
def viterbi_log_numba(log_start, log_trans, log_emis, obs):
    T = obs.shape[0]
    S = log_trans.shape[0]
    nu = np.empty((T, S))
    back = np.full((T, S), -1, dtype=np.int64)
    for j in range(S):
        nu[0, j] = log_start[j] + log_emis[j, obs[0]]
    for t in range(1, T):
        for j in range(S):
            best = -np.inf
            arg = 0
            for s in range(S):
                v = nu[t - 1, s] + log_trans[s, j]
                if v > best:
                    best = v
                    arg = s
            back[t, j] = arg
            nu[t, j] = best + log_emis[j, obs[t]]
    path = np.empty(T, dtype=np.int64)
    best = -np.inf
    arg = 0
    for j in range(S):
        if nu[T - 1, j] > best:
            best = nu[T - 1, j]
            arg = j
    path[T - 1] = arg
    for t in range(T - 1, 0, -1):
        path[t - 1] = back[t, path[t]]
    return nu, back, path


# ---------------------------------------------------------------------------
# nearest centroid (vector quantisation)
# ---------------------------------------------------------------------------


def nearest_centroid_numpy(X: np.ndarray, C: np.ndarray, block: int = 4096):
    """Index of, and squared distance to, the nearest row of ``C`` per row of ``X``."""
    n = X.shape[0]
    idx = np.empty(n, dtype=np.int64)
    d2 = np.empty(n)
    for i0 in range(0, n, block):
        diff = X[i0 : i0 + block, None, :] - C[None, :, :]
        dist = np.einsum("ncp,ncp->nc", diff, diff)
        arg = np.argmin(dist, axis=1)
        idx[i0 : i0 + block] = arg
        d2[i0 : i0 + block] = dist[np.arange(arg.shape[0]), arg]
    return idx, d2


@njit(cache=True)
def nearest_centroid_numba(X, C):
    n, p = X.shape
    m = C.shape[0]
    idx = np.empty(n, dtype=np.int64)
    d2 = np.empty(n)
    for i in range(n):
        best = np.inf
        arg = 0
        for c in range(m):
            acc = 0.0
            for a in range(p):
                t = X[i, a] - C[c, a]
                acc += t * t
            if acc < best:
                best = acc
                arg = c
        idx[i] = arg
        d2[i] = best
    return idx, d2


if USE_NUMBA:
    squeeze_rows = squeeze_rows_numba
    local_md_sq = local_md_sq_numba
    viterbi_log = viterbi_log_numba
    nearest_centroid = nearest_centroid_numba
else:
    squeeze_rows = squeeze_rows_numpy
    local_md_sq = local_md_sq_numpy
    viterbi_log = viterbi_log_numpy
    nearest_centroid = nearest_centroid_numpy
