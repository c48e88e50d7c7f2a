"""Two-channel fusion: alternating diffusion, common metric, bipartite co-clustering."""

from __future__ import annotations

import logging
from dataclasses import dataclass

import numpy as np
import scipy.linalg

from .diffusion import (
    AffinityMatrix,
    Embedding,
    TransitionMatrix,
    affinity,
    diffusion_map,
    fix_signs,
    transition,
)
from .errors import DataError, DisconnectedGraphError

__all__ = [
    "AlternatingOperator",
    "BipartiteOperator",
    "alternating_diffusion",
    "common_metric",
    "adm_embed",
    "multiview_operator",
    "cocluster_eigvecs",
    "induce_clusters",
    "common_feature",
    "partition_vector",
    "normalized_cut",
    "rayleigh_quotient",
]

log = logging.getLogger(__name__)


@dataclass
class AlternatingOperator:
    A: np.ndarray


@dataclass
class BipartiteOperator:
    M: np.ndarray
    degrees: np.ndarray

    @property
    def n(self) -> int:
        return self.M.shape[0] // 2


def _matrix(obj) -> np.ndarray:
    if isinstance(obj, TransitionMatrix):
        return obj.A
    if isinstance(obj, AffinityMatrix):
        return obj.W
    return np.asarray(obj, dtype=np.float64)


def alternating_diffusion(A_x, A_y) -> AlternatingOperator:
    """``A_x @ A_y``.  The product does not commute; ``A_x`` is applied first."""
    Ax, Ay = _matrix(A_x), _matrix(A_y)
    if Ax.shape != Ay.shape or Ax.ndim != 2 or Ax.shape[0] != Ax.shape[1]:
        raise DataError(f"operator shapes differ or are not square: {Ax.shape} vs {Ay.shape}")
    return AlternatingOperator(Ax @ Ay)


def common_metric(op) -> np.ndarray:
    """Euclidean distance between rows of the alternating operator."""
    A = op.A if isinstance(op, AlternatingOperator) else np.asarray(op, dtype=np.float64)
    sq = np.einsum("ij,ij->i", A, A)
    d2 = sq[:, None] + sq[None, :] - 2.0 * (A @ A.T)
    d2 = np.maximum(0.5 * (d2 + d2.T), 0.0)
    np.fill_diagonal(d2, 0.0)
    return np.sqrt(d2)


def adm_embed(common_dist, eps_quantile: float = 0.05, t: float = 1.0, d_hat: int = 10,
              delta: float | None = None) -> Embedding:
    """Diffusion map on the squared common metric."""
    D = np.asarray(common_dist, dtype=np.float64)
    W = affinity(D * D, eps_quantile)
    return diffusion_map(transition(W), t=t, d_hat=d_hat, delta=delta)


def multiview_operator(W_x, W_y) -> BipartiteOperator:
    """Bipartite affinity ``[[0, W_x W_y], [W_y W_x, 0]]`` and its degrees."""
    Wx, Wy = _matrix(W_x), _matrix(W_y)
    if Wx.shape != Wy.shape:
        raise DataError(f"affinity shapes differ: {Wx.shape} vs {Wy.shape}")
    J = Wx.shape[0]
    M = np.zeros((2 * J, 2 * J))
    M[:J, J:] = Wx @ Wy
    M[J:, :J] = Wy @ Wx
    deg = M.sum(axis=1)
    bad = np.flatnonzero(~(deg > 0))
    if bad.size:
        raise DisconnectedGraphError(f"bipartite vertex {int(bad[0])} has zero degree")
    return BipartiteOperator(M, deg)


def cocluster_eigvecs(op: BipartiteOperator, d_tilde: int = 10, tol: float = 1e-9,
                      allow_disconnected: bool = False) -> np.ndarray:
    """Right eigenvectors ``q_2 .. q_{d_tilde+1}`` of ``D^{-1} M``, descending eigenvalue.

    Rows ``0..J-1`` index channel-one epochs and rows ``J..2J-1`` channel two.
    A disconnected graph raises unless ``allow_disconnected`` is set; then
    the eigenvalue-1 space is re-based so that ``q_1`` is constant and the
    following vectors are piecewise constant over the components.
    """
    M, deg = op.M, op.degrees
    n = M.shape[0]
    if not 1 <= d_tilde + 1 <= n:
        raise DataError(f"d_tilde={d_tilde} too large for {n} vertices")
    scale = max(np.abs(M).max(), 1.0)
    if np.allclose(M, M.T, rtol=0, atol=1e-12 * scale):
        inv_sqrt = 1.0 / np.sqrt(deg)
        S = M * inv_sqrt[:, None] * inv_sqrt[None, :]
        lam, O = scipy.linalg.eigh(0.5 * (S + S.T), subset_by_index=[n - d_tilde - 1, n - 1])
        lam, O = lam[::-1], O[:, ::-1]
        Q = O * inv_sqrt[:, None]
    else:
        lam, Q = scipy.linalg.eig(M / deg[:, None])
        if np.abs(lam.imag).max() > 1e-8:
            log.warning("bipartite operator has complex eigenvalues (max |imag| %.3g)",
                        float(np.abs(lam.imag).max()))
        order = np.argsort(-lam.real, kind="stable")[: d_tilde + 1]
        lam, Q = lam.real[order], Q.real[:, order]
    if lam.size > 1 and lam[1] >= 1.0 - tol:
        if not allow_disconnected:
            raise DisconnectedGraphError(
                "bipartite graph is disconnected (second eigenvalue is 1); increase the kernel bandwidth")
        Q = Q.copy()
        top = np.flatnonzero(lam >= 1.0 - tol)
        Q[:, top] = _constant_first(Q[:, top], deg)
    return fix_signs(Q[:, 1:])


def _constant_first(Q: np.ndarray, deg: np.ndarray) -> np.ndarray:
    """D-orthonormal basis of span(Q) whose first vector is constant."""
    basis = [np.ones(Q.shape[0])]
    for v in Q.T:
        for b in basis:
            v = v - (b @ (deg * v)) / (b @ (deg * b)) * b
        if np.sqrt(v @ (deg * v)) > 1e-8 * np.sqrt(deg.sum()) and len(basis) < Q.shape[1]:
            basis.append(v)
    return np.column_stack([b / np.sqrt(b @ (deg * b)) for b in basis])


def induce_clusters(op, clusters, direction: str = "x_to_y") -> np.ndarray:
    """Assign each vertex on one side to the cluster it is most tied to on the other.

    ``clusters`` labels the source side with integers ``0..K-1``; every label
    must be used.  Ties go to the lowest cluster index.
    """
    M = op.M if isinstance(op, BipartiteOperator) else np.asarray(op, dtype=np.float64)
    J = M.shape[0] // 2
    labels = np.asarray(clusters, dtype=np.int64)
    if labels.shape != (J,):
        raise DataError(f"expected {J} cluster labels, got shape {labels.shape}")
    K = int(labels.max()) + 1 if labels.size else 0
    if labels.min(initial=0) < 0 or np.bincount(labels, minlength=K).min(initial=1) == 0:
        raise DataError("cluster labels must be 0..K-1 with no empty cluster")
    if direction == "x_to_y":
        block = M[:J, J:]  # rows: source (x), columns: target (y)
    elif direction == "y_to_x":
        block = M[:J, J:].T
    else:
        raise DataError(f"direction must be 'x_to_y' or 'y_to_x', got {direction!r}")
    onehot = np.zeros((K, J))
    onehot[labels, np.arange(J)] = 1.0
    score = onehot @ block  # (K, J target)
    return np.argmax(score, axis=0)


def common_feature(psi, q, d_hat: int | None = None, d_tilde: int | None = None) -> np.ndarray:
    """Rows ``[psi_2..psi_{d_hat+1}(j), q(j), q(J + j)]`` for every epoch ``j``."""
    P = psi.coords if isinstance(psi, Embedding) else np.asarray(psi, dtype=np.float64)
    Q = np.asarray(q, dtype=np.float64)
    J = P.shape[0]
    d_hat = P.shape[1] if d_hat is None else d_hat
    d_tilde = Q.shape[1] if d_tilde is None else d_tilde
    if Q.shape[0] != 2 * J:
        raise DataError(f"co-clustering matrix has {Q.shape[0]} rows, expected {2 * J}")
    if P.shape[1] < d_hat or Q.shape[1] < d_tilde:
        raise DataError("requested dimensions exceed the available coordinates")
    return np.hstack([P[:, :d_hat], Q[:J, :d_tilde], Q[J:, :d_tilde]])


def _weights(op: BipartiteOperator, mask: np.ndarray):
    return op.degrees[mask].sum(), op.degrees[~mask].sum()


def partition_vector(op: BipartiteOperator, mask) -> np.ndarray:
    """Generalised partition vector of the split ``mask`` / ``~mask``."""
    mask = np.asarray(mask, dtype=bool)
    w1, w2 = _weights(op, mask)
    if not (w1 > 0 and w2 > 0):
        raise DataError("both parts of the partition need positive weight")
    return np.where(mask, np.sqrt(w2 / w1), -np.sqrt(w1 / w2))


def normalized_cut(op: BipartiteOperator, mask) -> float:
    mask = np.asarray(mask, dtype=bool)
    cut = op.M[np.ix_(mask, ~mask)].sum()
    w1, w2 = _weights(op, mask)
    return float(cut / w1 + cut / w2)


def rayleigh_quotient(op: BipartiteOperator, q) -> float:
    """``q^T (D - M) q / q^T D q``."""
    q = np.asarray(q, dtype=np.float64)
    Dq = op.degrees * q
    return float((q @ Dq - q @ (op.M @ q)) / (q @ Dq))
