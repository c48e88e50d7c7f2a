"""Vector quantisation (LBG) and a discrete HMM trained from labels, decoded by Viterbi.

Stages are integers ``1..5`` (:class:`~sleepgeom.ingest.SleepStage`); state
index ``s - 1`` is used internally.  Codebook symbols are ``0..size-1``.
"""

from __future__ import annotations

import json
import logging
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable, Sequence

import numpy as np

from . import kernels
from .errors import DataError
from .ingest import SleepStage

__all__ = [
    "N_STATES",
    "Codebook",
    "HmmModel",
    "ViterbiTrace",
    "lbg_codebook",
    "quantize",
    "estimate_transitions",
    "estimate_emissions",
    "train_hmm",
    "viterbi",
]

log = logging.getLogger(__name__)

N_STATES = len(SleepStage)


@dataclass
class Codebook:
    centroids: np.ndarray
    distortion_history: list = field(default_factory=list)

    @property
    def size(self) -> int:
        return self.centroids.shape[0]

    @property
    def dim(self) -> int:
        return self.centroids.shape[1]


def _distortion(X: np.ndarray, C: np.ndarray) -> tuple[np.ndarray, float]:
    idx, d2 = kernels.nearest_centroid(X, C)
    return idx, float(d2.mean())


def _lloyd(X, C, max_iter, tol):
    idx, dist = _distortion(X, C)
    for _ in range(max_iter):
        counts = np.bincount(idx, minlength=C.shape[0])
        sums = np.zeros_like(C)
        np.add.at(sums, idx, X)
        empty = np.flatnonzero(counts == 0)
        C = np.where(counts[:, None] > 0, sums / np.maximum(counts, 1)[:, None], C)
        if empty.size:
            # re-seed empty cells from the points worst served by the codebook
            _, d2 = kernels.nearest_centroid(X, C)
            order = np.argsort(-d2, kind="stable")
            C[empty] = X[order[: empty.size]]
        idx, new = _distortion(X, C)
        done = dist == 0 or (dist - new) / dist < tol
        dist = new
        if done and not empty.size:
            break
    return C, idx, dist


def lbg_codebook(features, size: int = 64, seed: int = 0, delta: float = 1e-3,
                 tol: float = 1e-6, max_iter: int = 100) -> Codebook:
    """Linde-Buzo-Gray codebook grown by repeated centroid splitting.

    Each centroid ``c`` splits into ``c +/- delta * |c| * s`` with random
    signs ``s`` drawn from ``seed`` (``|c|`` replaced by 1 where zero),
    followed by Lloyd iterations until the relative distortion drop falls
    below ``tol``.
    """
    X = np.ascontiguousarray(features, dtype=np.float64)
    if X.ndim != 2 or not np.all(np.isfinite(X)):
        raise DataError("features must be a finite 2-D matrix")
    if size < 1 or size & (size - 1):
        raise DataError(f"codebook size must be a power of two, got {size}")
    if size > X.shape[0]:
        raise DataError(f"codebook size {size} exceeds the number of vectors {X.shape[0]}")
    rng = np.random.default_rng(seed)
    C = X.mean(axis=0, keepdims=True)
    _, dist = _distortion(X, C)
    history = [dist]
    while C.shape[0] < size:
        mag = np.abs(C)
        mag[mag == 0] = 1.0
        signs = rng.choice((-1.0, 1.0), size=C.shape)
        step = delta * mag * signs
        C = np.concatenate([C + step, C - step])
        C, _, dist = _lloyd(X, C, max_iter, tol)
        history.append(dist)
    return Codebook(C, history)


def quantize(cb: Codebook, v) -> np.ndarray | int:
    """Nearest-centroid symbol(s), ties to the lowest index."""
    V = np.asarray(v, dtype=np.float64)
    single = V.ndim == 1
    V = np.ascontiguousarray(np.atleast_2d(V))
    if V.shape[1] != cb.dim:
        raise DataError(f"feature dimension {V.shape[1]} does not match codebook dimension {cb.dim}")
    if not np.all(np.isfinite(V)):
        raise DataError("cannot quantize non-finite features")
    idx, _ = kernels.nearest_centroid(V, np.ascontiguousarray(cb.centroids))
    return int(idx[0]) if single else idx


def _states(seq) -> np.ndarray:
    s = np.asarray([int(x) for x in seq], dtype=np.int64)
    if s.size and (s.min() < 1 or s.max() > N_STATES):
        raise DataError(f"stage values must lie in 1..{N_STATES}")
    return s - 1


def _normalize(counts: np.ndarray) -> np.ndarray:
    tot = counts.sum(axis=1, keepdims=True)
    with np.errstate(invalid="ignore", divide="ignore"):
        out = counts / tot
    out[tot[:, 0] == 0] = 1.0 / counts.shape[1]
    return out


def estimate_transitions(stage_sequences: Iterable[Sequence[int]], kappa: float = 1.0) -> np.ndarray:
    """Row-normalised transition counts, pooled over sequences, with pseudocount ``kappa``."""
    counts = np.zeros((N_STATES, N_STATES))
    n_seq = 0
    for seq in stage_sequences:
        s = _states(seq)
        n_seq += 1
        np.add.at(counts, (s[:-1], s[1:]), 1.0)
    if n_seq == 0:
        raise DataError("no stage sequences given")
    return _normalize(counts + kappa)


def estimate_emissions(stage_sequences, symbol_sequences, codebook_size: int,
                       kappa: float = 1.0) -> np.ndarray:
    """Per-state symbol frequencies with pseudocount ``kappa``."""
    counts = np.zeros((N_STATES, codebook_size))
    stage_sequences, symbol_sequences = list(stage_sequences), list(symbol_sequences)
    if len(stage_sequences) != len(symbol_sequences):
        raise DataError("different numbers of stage and symbol sequences")
    for k, (seq, sym) in enumerate(zip(stage_sequences, symbol_sequences)):
        s = _states(seq)
        o = np.asarray(sym, dtype=np.int64)
        if s.shape != o.shape:
            raise DataError(f"sequence {k}: {s.size} stages but {o.size} symbols")
        if o.size and (o.min() < 0 or o.max() >= codebook_size):
            raise DataError(f"sequence {k}: symbols must lie in 0..{codebook_size - 1}")
        np.add.at(counts, (s, o), 1.0)
    return _normalize(counts + kappa)


@dataclass
class ViterbiTrace:
    nu: np.ndarray  # (J, 5) log max-probabilities
    back: np.ndarray  # (J, 5) best predecessor state index, -1 at t=0
    path: np.ndarray  # decoded stages 1..5

    @property
    def log_prob(self) -> float:
        return float(self.nu[-1].max())


@dataclass
class HmmModel:
    trans: np.ndarray
    emis: np.ndarray
    codebook: Codebook | None = None
    init_state: SleepStage = SleepStage.AWAKE
    config: dict = field(default_factory=dict)

    def __post_init__(self):
        self.trans = np.asarray(self.trans, dtype=np.float64)
        self.emis = np.asarray(self.emis, dtype=np.float64)
        for name, mat in (("transition", self.trans), ("emission", self.emis)):
            if mat.shape[0] != N_STATES or np.any(mat < 0) or \
                    not np.allclose(mat.sum(axis=1), 1.0, rtol=0, atol=1e-9):
                raise DataError(f"{name} matrix must have {N_STATES} non-negative rows summing to 1")
        if self.trans.shape[1] != N_STATES:
            raise DataError("transition matrix must be square")

    @property
    def n_symbols(self) -> int:
        return self.emis.shape[1]

    def to_dict(self) -> dict:
        return {
            "format": "sleepgeom-hmm",
            "version": 1,
            "init_state": int(self.init_state),
            "states": [s.short for s in SleepStage],
            "trans": self.trans.tolist(),
            "emis": self.emis.tolist(),
            "codebook": None if self.codebook is None else self.codebook.centroids.tolist(),
            "config": self.config,
        }

    @classmethod
    def from_dict(cls, d: dict) -> "HmmModel":
        if d.get("format") != "sleepgeom-hmm":
            raise DataError("not a sleepgeom HMM model document")
        cb = None if d.get("codebook") is None else Codebook(np.asarray(d["codebook"], dtype=np.float64))
        return cls(np.asarray(d["trans"]), np.asarray(d["emis"]), cb,
                   SleepStage(int(d.get("init_state", 1))), d.get("config", {}))

    def save(self, path) -> None:
        Path(path).write_text(json.dumps(self.to_dict(), indent=1))

    @classmethod
    def load(cls, path) -> "HmmModel":
        try:
            return cls.from_dict(json.loads(Path(path).read_text()))
        except (json.JSONDecodeError, KeyError, TypeError) as exc:
            raise DataError(f"{path}: malformed model file: {exc}") from None

    def predict(self, features) -> np.ndarray:
        if self.codebook is None:
            raise DataError("model has no codebook; decode symbol sequences with viterbi()")
        return viterbi(self, quantize(self.codebook, np.atleast_2d(features))).path


def train_hmm(stage_sequences, feature_sequences, size: int = 64, seed: int = 0,
              kappa: float = 1.0, transition_sequences=None, **lbg_kw) -> HmmModel:
    """Fit codebook, emissions and transitions from labelled training data.

    ``transition_sequences`` (stage sequences) overrides the sequences used
    for the transition estimate, e.g. to use full nights when emissions come
    from class-balanced subsets.
    """
    stage_sequences = [np.asarray(s) for s in stage_sequences]
    feature_sequences = [np.atleast_2d(np.asarray(f, dtype=np.float64)) for f in feature_sequences]
    cb = lbg_codebook(np.concatenate(feature_sequences), size, seed, **lbg_kw)
    symbols = [quantize(cb, f) for f in feature_sequences]
    emis = estimate_emissions(stage_sequences, symbols, cb.size, kappa)
    trans = estimate_transitions(transition_sequences if transition_sequences is not None
                                 else stage_sequences, kappa)
    return HmmModel(trans, emis, cb, config={"codebook_size": size, "seed": seed, "kappa": kappa})


def viterbi(model: HmmModel, obs) -> ViterbiTrace:
    """Most probable stage path given a symbol sequence.

    The chain sits in ``init_state`` before the first epoch, so the first
    step is weighted by that row of the transition matrix.  The terminal
    state is free; ties resolve to the lowest stage.
    """
    o = np.ascontiguousarray(obs, dtype=np.int64)
    if o.ndim != 1 or o.size == 0:
        raise DataError("observation sequence must be a non-empty 1-D sequence")
    if o.min() < 0 or o.max() >= model.n_symbols:
        raise DataError(f"symbols must lie in 0..{model.n_symbols - 1}")
    with np.errstate(divide="ignore"):
        log_trans = np.log(model.trans)
        log_emis = np.ascontiguousarray(np.log(model.emis))
    log_start = np.ascontiguousarray(log_trans[int(model.init_state) - 1])
    nu, back, path = kernels.viterbi_log(log_start, np.ascontiguousarray(log_trans), log_emis, o)
    return ViterbiTrace(nu, back, path + 1)
