"""Local Mahalanobis distance, Gaussian affinity, random walk and diffusion maps."""

from __future__ import annotations

import logging
import math
from dataclasses import dataclass

import numpy as np
import scipy.linalg

from . import kernels
from .errors import DataError, DegeneratePointCloudError, DisconnectedGraphError

__all__ = [
    "LocalCovariances",
    "AffinityMatrix",
    "TransitionMatrix",
    "Embedding",
    "neighbor_count",
    "knn_indices",
    "local_covariances",
    "truncated_pinv",
    "local_md",
    "affinity",
    "transition",
    "diffusion_map",
    "diffusion_distance",
    "select_dimension",
    "fix_signs",
]

log = logging.getLogger(__name__)


@dataclass
class LocalCovariances:
    gammas: np.ndarray  # (J, p, p)
    neighbors: np.ndarray  # (J, K_nb) indices
    alpha: float | None = None

    @property
    def k_nb(self) -> int:
        return self.neighbors.shape[1]


@dataclass
class AffinityMatrix:
    W: np.ndarray
    eps: float


@dataclass
class TransitionMatrix:
    A: np.ndarray
    degrees: np.ndarray
    W: np.ndarray


@dataclass
class Embedding:
    coords: np.ndarray  # (J, d_hat)
    eigenvalues: np.ndarray  # lambda_2 .. lambda_{d_hat+1}
    eigenvectors: np.ndarray  # phi_2 .. phi_{d_hat+1}, columns
    t: float

    @property
    def dim(self) -> int:
        return self.coords.shape[1]


def neighbor_count(alpha: float, J: int) -> int:
    """``round(alpha * J)`` with halves rounded up."""
    return int(math.floor(alpha * J + 0.5))


def knn_indices(U: np.ndarray, k: int) -> np.ndarray:
    """Indices of the ``k`` nearest rows (Euclidean, self excluded, ties by index)."""
    J = U.shape[0]
    sq = np.einsum("ij,ij->i", U, U)
    d2 = sq[:, None] + sq[None, :] - 2.0 * (U @ U.T)
    np.fill_diagonal(d2, np.inf)
    # stable sort keeps the lower index first among equal distances
    return np.argsort(d2, axis=1, kind="stable")[:, :k] if J > 1 else np.zeros((J, 0), int)


def local_covariances(U, alpha: float = 0.1, k: int | None = None,
                      neighbors: np.ndarray | None = None) -> LocalCovariances:
    """Neighbourhood covariance ``Gamma_j`` around every point.

    ``Gamma_j = (1/K) sum_{i in N_j} (u_i - u_j)(u_i - u_j)^T`` where ``N_j``
    holds the ``K = round(alpha * J)`` nearest other points.  Passing
    ``neighbors`` freezes the neighbourhoods instead of recomputing them.
    """
    U = np.asarray(U, dtype=np.float64)
    if U.ndim != 2:
        raise DataError(f"feature matrix must be 2-D, got shape {U.shape}")
    J = U.shape[0]
    if J < 2:
        raise DataError(f"need at least 2 points, got {J}")
    if neighbors is None:
        if k is None:
            k = neighbor_count(alpha, J)
        if not 2 <= k <= J - 1:
            raise DataError(f"neighbour count {k} must lie in 2..{J - 1} (J={J}, alpha={alpha})")
        neighbors = knn_indices(U, k)
    else:
        neighbors = np.asarray(neighbors, dtype=np.int64)
        if neighbors.shape[0] != J:
            raise DataError("frozen neighbourhoods do not match the number of points")
    diff = U[neighbors] - U[:, None, :]
    gammas = np.einsum("jkp,jkq->jpq", diff, diff) / neighbors.shape[1]
    return LocalCovariances(gammas, neighbors, alpha)


def truncated_pinv(G, d: int, rel_floor: float = 1e-10) -> np.ndarray:
    """Inverse of ``G`` restricted to its top-``d`` eigenspace.

    Eigenvalues below ``rel_floor`` times the largest one are treated as zero.
    """
    G = np.asarray(G, dtype=np.float64)
    if G.ndim != 2 or G.shape[0] != G.shape[1]:
        raise DataError(f"expected a square matrix, got shape {G.shape}")
    scale = max(np.abs(G).max(), 1.0)
    if not np.allclose(G, G.T, rtol=0, atol=1e-12 * scale):
        raise DataError("truncated_pinv requires a symmetric matrix")
    if not 0 <= d <= G.shape[0]:
        raise DataError(f"rank {d} outside 0..{G.shape[0]}")
    return _pinv_batch(G[None], d, rel_floor)[0]


def _pinv_batch(G: np.ndarray, d: int, rel_floor: float) -> np.ndarray:
    w, V = np.linalg.eigh(0.5 * (G + np.swapaxes(G, 1, 2)))
    # descending; equal eigenvalues keep eigh's order
    order = np.argsort(-w, axis=1, kind="stable")
    w = np.take_along_axis(w, order, axis=1)
    V = np.take_along_axis(V, order[:, None, :], axis=2)
    top = w[:, :1]
    keep = (np.arange(w.shape[1]) < d) & (w > rel_floor * top) & (top > 0)
    inv = np.where(keep, 1.0 / np.where(keep, w, 1.0), 0.0)
    return np.einsum("jpa,ja,jqa->jpq", V, inv, V)


def local_md(U, cov: LocalCovariances, d: int = 7, rel_floor: float = 1e-10) -> np.ndarray:
    """Squared local Mahalanobis distances, symmetric with zero diagonal.

    ``d2(i, j) = 1/2 (u_i - u_j)^T (T_d[Gamma_i] + T_d[Gamma_j]) (u_i - u_j)``
    with ``T_d`` the rank-``d`` truncated pseudo-inverse.
    """
    U = np.asarray(U, dtype=np.float64)
    p = U.shape[1]
    if not 0 <= d <= p:
        raise DataError(f"rank {d} outside 0..{p}")
    zero = ~np.any(cov.gammas.reshape(len(cov.gammas), -1), axis=1)
    if d > 0 and zero.any():
        log.warning("%d points have an all-zero local covariance; their side contributes 0",
                    int(zero.sum()))
    P = _pinv_batch(cov.gammas, d, rel_floor)
    d2 = kernels.local_md_sq(U, P)
    np.fill_diagonal(d2, 0.0)
    return np.maximum(d2, 0.0)


def affinity(dist2, eps_quantile: float = 0.05, eps: float | None = None,
             diagonal: float = 0.0) -> AffinityMatrix:
    """Gaussian affinity ``exp(-dist2 / eps)``.

    ``eps`` defaults to the ``eps_quantile`` quantile (linear interpolation)
    of the off-diagonal squared distances.
    """
    D = np.asarray(dist2, dtype=np.float64)
    if D.ndim != 2 or D.shape[0] != D.shape[1]:
        raise DataError(f"distance matrix must be square, got shape {D.shape}")
    J = D.shape[0]
    off = D[~np.eye(J, dtype=bool)]
    if off.size == 0 or not np.any(off > 0):
        raise DegeneratePointCloudError("degenerate point cloud: all pairwise distances are zero")
    if eps is None:
        eps = float(np.quantile(off, eps_quantile))
        if not eps > 0:
            raise DegeneratePointCloudError(
                f"degenerate point cloud: the {eps_quantile} quantile of squared distances is 0")
    W = np.exp(-D / eps)
    np.fill_diagonal(W, diagonal)
    return AffinityMatrix(W, float(eps))


def transition(W) -> TransitionMatrix:
    """Row-normalised random walk ``A = D^{-1} W``."""
    if isinstance(W, AffinityMatrix):
        W = W.W
    W = np.asarray(W, dtype=np.float64)
    deg = W.sum(axis=1)
    bad = np.flatnonzero(~(deg > 0))
    if bad.size:
        raise DisconnectedGraphError(f"vertex {int(bad[0])} has zero degree (isolated)")
    return TransitionMatrix(W / deg[:, None], deg, W)


def fix_signs(V: np.ndarray) -> np.ndarray:
    """Flip each column so that its entry of largest magnitude is positive."""
    V = np.array(V, dtype=np.float64, copy=True)
    if V.size == 0:
        return V
    idx = np.argmax(np.abs(V), axis=0)
    s = np.sign(V[idx, np.arange(V.shape[1])])
    s[s == 0] = 1.0
    return V * s


def _spectral_pairs(W: np.ndarray, deg: np.ndarray, n: int):
    """Top ``n`` eigenpairs of the random walk via its symmetric conjugate."""
    J = W.shape[0]
    inv_sqrt = 1.0 / np.sqrt(deg)
    M = W * inv_sqrt[:, None] * inv_sqrt[None, :]
    M = 0.5 * (M + M.T)
    lam, O = scipy.linalg.eigh(M, subset_by_index=[J - n, J - 1])
    lam, O = lam[::-1], O[:, ::-1]
    phi = fix_signs(O * inv_sqrt[:, None])
    return lam, phi


def diffusion_map(A, t: float = 1.0, d_hat: int = 10, delta: float | None = None,
                  tol: float = 1e-9) -> Embedding:
    """Diffusion-map embedding ``lambda_l^t phi_l`` for ``l = 2 .. d_hat + 1``.

    Right eigenvectors of ``A`` come from ``D^{-1/2} W D^{-1/2} = O L O^T``
    with ``phi = D^{-1/2} O``; the trivial pair is dropped.  Within a
    repeated eigenvalue the basis is only defined up to rotation.  With
    ``delta`` set, ``d_hat`` is an upper bound and the dimension shrinks to
    the largest ``l`` with ``lambda_{l+1}^t > delta``.
    """
    if not isinstance(A, TransitionMatrix):
        A = transition(A)
    J = A.W.shape[0]
    if not 1 <= d_hat + 1 <= J:
        raise DataError(f"d_hat={d_hat} needs at least {d_hat + 1} points, got {J}")
    lam, phi = _spectral_pairs(A.W, A.degrees, d_hat + 1)
    if lam.size > 1 and lam[1] >= 1.0 - tol:
        raise DisconnectedGraphError(
            "affinity graph is disconnected (second eigenvalue is 1); increase the kernel bandwidth")
    lam2, phi2 = lam[1:], phi[:, 1:]
    if delta is not None:
        k = select_dimension(lam2, t, delta)
        lam2, phi2 = lam2[:k], phi2[:, :k]
    coords = phi2 * np.sign(lam2) * np.abs(lam2) ** t if t != 1 else phi2 * lam2
    return Embedding(coords, lam2, phi2, t)


def select_dimension(eigenvalues, t: float, delta: float) -> int:
    """Number of leading nontrivial eigenvalues with ``lambda^t > delta``."""
    lam = np.abs(np.asarray(eigenvalues, dtype=np.float64)) ** t
    below = np.flatnonzero(~(lam > delta))
    return int(below[0]) if below.size else int(lam.size)


def diffusion_distance(emb: Embedding, i: int, j: int) -> float:
    return float(np.linalg.norm(emb.coords[i] - emb.coords[j]))
