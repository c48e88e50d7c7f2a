"""Confusion matrices, agreement metrics, training-set selection and cross-validation drivers."""

from __future__ import annotations

import logging
import zlib
from dataclasses import dataclass, field
from typing import Callable, Sequence

import numpy as np

from .errors import DataError
from .ingest import SleepStage

__all__ = [
    "ConfusionMatrix",
    "MetricsReport",
    "Night",
    "SubjectRecord",
    "FoldResult",
    "CrossValidationReport",
    "confusion",
    "metrics",
    "select_training_subjects",
    "class_balance",
    "subject_rng",
    "losocv",
    "kfold",
]

log = logging.getLogger(__name__)

STAGES = tuple(SleepStage)
N = len(STAGES)


@dataclass
class ConfusionMatrix:
    """Counts with rows = expert stage, columns = predicted stage."""

    M: np.ndarray

    def __post_init__(self):
        self.M = np.asarray(self.M, dtype=np.int64)
        if self.M.shape != (N, N) or np.any(self.M < 0):
            raise DataError(f"confusion matrix must be a non-negative {N}x{N} integer matrix")

    def __add__(self, other: "ConfusionMatrix") -> "ConfusionMatrix":
        return ConfusionMatrix(self.M + other.M)

    @property
    def total(self) -> int:
        return int(self.M.sum())

    @classmethod
    def zeros(cls) -> "ConfusionMatrix":
        return cls(np.zeros((N, N), dtype=np.int64))


@dataclass
class MetricsReport:
    precision: np.ndarray
    recall: np.ndarray
    f1: np.ndarray
    accuracy: float
    macro_f1: float
    kappa: float
    expected_accuracy: float

    def to_dict(self) -> dict:
        def clean(a):
            return [None if np.isnan(v) else float(v) for v in a]

        return {
            "per_class": {
                s.short: {"precision": p, "recall": r, "f1": f}
                for s, p, r, f in zip(STAGES, clean(self.precision), clean(self.recall), clean(self.f1))
            },
            "accuracy": self.accuracy,
            "macro_f1": self.macro_f1,
            "kappa": self.kappa,
            "expected_accuracy": self.expected_accuracy,
        }


def confusion(truth, pred) -> ConfusionMatrix:
    t = np.asarray([int(s) for s in truth], dtype=np.int64)
    p = np.asarray([int(s) for s in pred], dtype=np.int64)
    if t.shape != p.shape:
        raise DataError(f"truth has {t.size} epochs but prediction has {p.size}")
    if t.size and (min(t.min(), p.min()) < 1 or max(t.max(), p.max()) > N):
        raise DataError(f"stages must lie in 1..{N}")
    M = np.zeros((N, N), dtype=np.int64)
    np.add.at(M, (t - 1, p - 1), 1)
    return ConfusionMatrix(M)


def metrics(cm) -> MetricsReport:
    """Per-class precision/recall/F1, accuracy, macro-F1 and Cohen's kappa.

    A class absent from both truth and prediction is undefined (NaN) and left
    out of the macro average; any other zero denominator gives 0.
    """
    M = (cm.M if isinstance(cm, ConfusionMatrix) else np.asarray(cm)).astype(np.float64)
    total = M.sum()
    if not total > 0:
        raise DataError("confusion matrix is empty")
    diag = np.diag(M)
    rows, cols = M.sum(axis=1), M.sum(axis=0)
    undefined = (rows == 0) & (cols == 0)
    with np.errstate(invalid="ignore", divide="ignore"):
        pr = np.where(cols > 0, diag / cols, 0.0)
        re = np.where(rows > 0, diag / rows, 0.0)
        f1 = np.where(pr + re > 0, 2 * pr * re / (pr + re), 0.0)
    pr[undefined] = re[undefined] = f1[undefined] = np.nan
    acc = float(diag.sum() / total)
    ea = float((rows * cols).sum() / total**2)
    kappa = (acc - ea) / (1 - ea) if ea < 1 else (1.0 if acc == 1 else 0.0)
    return MetricsReport(pr, re, f1, acc, float(np.nanmean(f1)), float(kappa), ea)


@dataclass
class Night:
    """One scored recording: stages and per-channel epoch feature matrices."""

    recording: str
    stages: np.ndarray
    features: dict

    def __post_init__(self):
        self.stages = np.asarray([int(s) for s in self.stages], dtype=np.int64)
        for ch, f in self.features.items():
            if np.asarray(f).shape[0] != self.stages.size:
                raise DataError(f"{self.recording}/{ch}: {np.asarray(f).shape[0]} feature rows "
                                f"for {self.stages.size} stages")

    def __len__(self) -> int:
        return self.stages.size


@dataclass
class SubjectRecord:
    id: str
    age: float
    nights: list = field(default_factory=list)

    def __post_init__(self):
        if not self.age > 0:
            raise DataError(f"subject {self.id}: age must be positive, got {self.age}")


def select_training_subjects(pool: Sequence[SubjectRecord], test_subject: SubjectRecord,
                             k_hat: int) -> list[SubjectRecord]:
    """The ``k_hat`` subjects closest in age to ``test_subject``; ties to the smaller id."""
    pool = [s for s in pool if s.id != test_subject.id]
    if k_hat < 1 or k_hat > len(pool):
        raise DataError(f"cannot select {k_hat} training subjects from a pool of {len(pool)}")
    return sorted(pool, key=lambda s: (abs(s.age - test_subject.age), s.id))[:k_hat]


def class_balance(stages, rng: np.random.Generator) -> np.ndarray:
    """Sorted indices of a per-stage subsample of equal size.

    Every present stage is cut down to the count of the least represented
    present stage.  Missing stages are reported and simply contribute nothing.
    """
    s = np.asarray([int(x) for x in stages], dtype=np.int64)
    present = [st for st in range(1, N + 1) if np.any(s == st)]
    if not present:
        return np.zeros(0, dtype=np.int64)
    if len(present) < N:
        missing = [SleepStage(st).short for st in range(1, N + 1) if st not in present]
        log.warning("stages %s absent from recording; balancing over present stages only",
                    ",".join(missing))
    n_min = min(int(np.sum(s == st)) for st in present)
    keep = [rng.choice(np.flatnonzero(s == st), size=n_min, replace=False) for st in present]
    return np.sort(np.concatenate(keep))


def subject_rng(seed: int, subject_id: str) -> np.random.Generator:
    """Per-test-subject generator, independent of fold order."""
    return np.random.default_rng([seed, zlib.crc32(subject_id.encode())])


# (train_subjects, test_subject, rng) -> one predicted stage array per test night
FoldRunner = Callable[[list, SubjectRecord, np.random.Generator], list]


@dataclass
class FoldResult:
    test_subjects: list
    train_subjects: list
    confusion: ConfusionMatrix
    nights: list  # (recording, truth, pred)


@dataclass
class CrossValidationReport:
    folds: list
    pooled: ConfusionMatrix
    seed: int
    config: dict = field(default_factory=dict)

    @property
    def pooled_metrics(self) -> MetricsReport:
        return metrics(self.pooled)

    def per_night(self) -> dict:
        rows = [metrics(confusion(t, p)) for f in self.folds for _, t, p in f.nights]
        out = {}
        for key in ("accuracy", "macro_f1", "kappa"):
            vals = np.array([getattr(r, key) for r in rows])
            out[key] = {"mean": float(vals.mean()),
                        "sd": float(vals.std(ddof=1)) if vals.size > 1 else 0.0,
                        "n": int(vals.size)}
        return out

    def to_dict(self) -> dict:
        return {
            "seed": self.seed,
            "config": self.config,
            "pooled": {"confusion": self.pooled.M.tolist(), **self.pooled_metrics.to_dict()},
            "per_night": self.per_night(),
            "folds": [
                {
                    "test": f.test_subjects,
                    "train": f.train_subjects,
                    "confusion": f.confusion.M.tolist(),
                    **metrics(f.confusion).to_dict(),
                }
                for f in self.folds
            ],
        }


def _run_group(subjects, group, k_hat, runner, seed) -> FoldResult:
    held = {s.id for s in group}
    pool = [s for s in subjects if s.id not in held]
    cm = ConfusionMatrix.zeros()
    nights, train_ids = [], set()
    for test in group:
        train = select_training_subjects(pool, test, k_hat)
        assert not any(s.id in held for s in train)
        train_ids.update(s.id for s in train)
        preds = runner(train, test, subject_rng(seed, test.id))
        if len(preds) != len(test.nights):
            raise DataError(f"runner returned {len(preds)} predictions for {len(test.nights)} nights")
        for night, pred in zip(test.nights, preds):
            cm = cm + confusion(night.stages, pred)
            nights.append((night.recording, night.stages.copy(), np.asarray(pred)))
    return FoldResult(sorted(held), sorted(train_ids), cm, nights)


def losocv(subjects: Sequence[SubjectRecord], runner: FoldRunner, k_hat: int = 9,
           seed: int = 0, config: dict | None = None) -> CrossValidationReport:
    """Leave-one-subject-out over every subject."""
    subjects = list(subjects)
    if len(subjects) < k_hat + 1:
        raise DataError(f"LOSOCV with k_hat={k_hat} needs at least {k_hat + 1} subjects")
    if len({s.id for s in subjects}) != len(subjects):
        raise DataError("duplicate subject ids")
    folds = [_run_group(subjects, [s], k_hat, runner, seed) for s in subjects]
    pooled = sum((f.confusion for f in folds), ConfusionMatrix.zeros())
    return CrossValidationReport(folds, pooled, seed, config or {})


def kfold(subjects: Sequence[SubjectRecord], runner: FoldRunner, folds: int = 5, k_hat: int = 9,
          seed: int = 0, config: dict | None = None) -> CrossValidationReport:
    """Group cross-validation; training subjects are age-matched from the other groups."""
    subjects = sorted(subjects, key=lambda s: s.id)
    if not 2 <= folds <= len(subjects):
        raise DataError(f"folds must lie in 2..{len(subjects)}, got {folds}")
    order = np.random.default_rng(seed).permutation(len(subjects))
    groups = [[subjects[i] for i in sorted(order[g::folds])] for g in range(folds)]
    for g in groups:
        if len(subjects) - len(g) < k_hat:
            raise DataError(f"k_hat={k_hat} exceeds the {len(subjects) - len(g)} subjects outside a fold")
    results = [_run_group(subjects, g, k_hat, runner, seed) for g in groups]
    pooled = sum((f.confusion for f in results), ConfusionMatrix.zeros())
    return CrossValidationReport(results, pooled, seed, config or {})
