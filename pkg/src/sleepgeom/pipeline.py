"""Configuration and orchestration: features -> embedding/fusion -> HMM -> evaluation.

Every ``cmd_*`` function reads its inputs from the manifest and earlier
artifacts in ``output_dir``, writes its own artifacts there, and records a
run manifest (config echo, input digests, timings, outputs).
"""

from __future__ import annotations

import configparser
import csv
import dataclasses
import json
import logging
import os
import re
import time
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from . import artifacts, diffusion, fusion, hmm, tfa
from .errors import DataError
from .evaluation import (
    Night,
    SubjectRecord,
    class_balance,
    confusion,
    kfold,
    losocv,
    metrics,
    subject_rng,
)
from .ingest import read_edf, read_hypnogram, segment_epochs, truncate_wake

__all__ = [
    "PipelineConfig",
    "ManifestEntry",
    "RunManifest",
    "FusionResult",
    "read_manifest",
    "night_features",
    "fuse",
    "make_fold_runner",
    "load_subjects",
    "cmd_features",
    "cmd_embed",
    "cmd_fuse",
    "cmd_train",
    "cmd_predict",
    "cmd_evaluate",
    "cmd_export",
]

log = logging.getLogger(__name__)

OUTPUT_ENV = "SLEEPGEOM_OUTPUT_DIR"


@dataclass
class PipelineConfig:
    manifest: str = "manifest.csv"
    output_dir: str = "sleepgeom-out"
    channels: tuple = ("Fpz-Cz", "Pz-Oz")
    epoch_s: float = 30.0
    wake_margin_min: float | None = None
    # time-frequency
    K: int = 4004
    H: float | None = None
    hop: int = 1
    max_freq: float = 50.0
    energy_transform: str = "none"
    # geometry
    alpha: float = 0.1
    md_rank: int = 7
    eps_quantile: float = 0.05
    diffusion_time: float = 1.0
    d_hat: int = 10
    d_tilde: int = 10
    affinity_source: str = "local_md"
    affinity_diagonal: float = 0.0
    single_channel: bool = False
    # hmm
    codebook_size: int = 64
    kappa: float = 1.0
    # evaluation
    k_hat: int = 9
    scheme: str = "losocv"
    folds: int = 5
    embedding_scope: str = "fold"
    seed: int = 0

    def __post_init__(self):
        if isinstance(self.channels, str):
            self.channels = tuple(c.strip() for c in self.channels.split(",") if c.strip())
        self.channels = tuple(self.channels)
        self.validate()

    def validate(self) -> None:
        def need(cond, msg):
            if not cond:
                raise DataError(f"invalid config: {msg}")

        need(len(self.channels) in (1, 2), "channels must name one or two channels")
        need(self.single_channel or len(self.channels) == 2, "fusion needs two channels")
        need(self.epoch_s > 0, "epoch_s must be positive")
        need(self.wake_margin_min is None or self.wake_margin_min >= 0, "wake_margin_min must be >= 0")
        need(self.K >= 1, "K must be positive")
        need(self.H is None or self.H > 0, "H must be positive")
        need(self.hop >= 1, "hop must be >= 1")
        need(self.max_freq > 0, "max_freq must be positive")
        need(self.energy_transform in ("none", "log"), "energy_transform must be none or log")
        need(0 < self.alpha <= 1, "alpha must lie in (0, 1]")
        need(0 <= self.md_rank <= len(tfa.FEATURE_NAMES), "md_rank must lie in 0..10")
        need(0 < self.eps_quantile <= 1, "eps_quantile must lie in (0, 1]")
        need(self.diffusion_time > 0, "diffusion_time must be positive")
        need(self.d_hat >= 1 and self.d_tilde >= 1, "d_hat and d_tilde must be >= 1")
        need(self.affinity_source in ("local_md", "euclidean"), "affinity_source must be local_md or euclidean")
        need(self.affinity_diagonal in (0.0, 1.0), "affinity_diagonal must be 0 or 1")
        need(self.codebook_size >= 1 and not self.codebook_size & (self.codebook_size - 1),
             "codebook_size must be a power of two")
        need(self.kappa >= 0, "kappa must be >= 0")
        need(self.k_hat >= 1, "k_hat must be >= 1")
        need(self.scheme in ("losocv", "kfold"), "scheme must be losocv or kfold")
        need(self.folds >= 2, "folds must be >= 2")
        need(self.embedding_scope in ("fold", "recording"), "embedding_scope must be fold or recording")

    @classmethod
    def from_ini(cls, path, overrides: dict | None = None) -> "PipelineConfig":
        """Load ``key = value`` pairs from any section of an INI file."""
        parser = configparser.ConfigParser()
        try:
            with open(path) as fh:
                parser.read_file(fh)
        except OSError as exc:
            raise DataError(f"cannot read config {path}: {exc}") from None
        except configparser.Error as exc:
            raise DataError(f"malformed config {path}: {exc}") from None
        raw = {}
        for section in parser.sections():
            raw.update(parser.items(section))
        cfg = cls.from_mapping(raw, base_dir=Path(path).parent)
        return cfg.replace(**overrides) if overrides else cfg

    @classmethod
    def from_mapping(cls, raw: dict, base_dir=None) -> "PipelineConfig":
        fields = {f.name: f for f in dataclasses.fields(cls)}
        kw = {}
        for key, value in raw.items():
            if key not in fields:
                raise DataError(f"unknown config key {key!r}")
            kw[key] = _coerce(key, value, fields[key].default)
        if base_dir is not None:
            for key in ("manifest", "output_dir"):
                if key in kw and not Path(kw[key]).is_absolute():
                    kw[key] = str(Path(base_dir) / kw[key])
        return cls(**kw)

    def replace(self, **kw) -> "PipelineConfig":
        kw = {k: v for k, v in kw.items() if v is not None}
        return dataclasses.replace(self, **kw)

    def resolved_output_dir(self) -> Path:
        return Path(os.environ.get(OUTPUT_ENV) or self.output_dir)

    def to_dict(self) -> dict:
        d = dataclasses.asdict(self)
        d["channels"] = list(self.channels)
        return d


def _coerce(key, value, default):
    if not isinstance(value, str):
        return value
    text = value.strip()
    try:
        if key in ("H", "wake_margin_min"):
            return None if text.lower() in ("", "none") else float(text)
        if isinstance(default, bool):
            if text.lower() in ("1", "true", "yes", "on"):
                return True
            if text.lower() in ("0", "false", "no", "off"):
                return False
            raise ValueError(text)
        if isinstance(default, int):
            return int(text)
        if isinstance(default, float):
            return float(text)
    except ValueError:
        raise DataError(f"config key {key!r}: cannot parse {value!r}") from None
    return text


# ---------------------------------------------------------------------------
# manifests
# ---------------------------------------------------------------------------


@dataclass
class ManifestEntry:
    subject: str
    age: float
    recording: str
    edf: Path
    hypnogram: Path
    wake_margin_min: float | None = None


def read_manifest(path) -> list[ManifestEntry]:
    """``subject,age,recording,edf,hypnogram[,wake_margin_min]``; paths relative to the file."""
    path = Path(path)
    if not path.is_file():
        raise DataError(f"manifest not found: {path}")
    out = []
    with path.open(newline="") as fh:
        r = csv.DictReader(fh)
        need = {"subject", "age", "recording", "edf", "hypnogram"}
        if r.fieldnames is None or not need <= set(r.fieldnames):
            raise DataError(f"{path}: manifest needs columns {sorted(need)}")
        for n, row in enumerate(r, start=2):
            try:
                wm = (row.get("wake_margin_min") or "").strip()
                out.append(ManifestEntry(
                    row["subject"].strip(), float(row["age"]), row["recording"].strip(),
                    path.parent / row["edf"].strip(), path.parent / row["hypnogram"].strip(),
                    float(wm) if wm else None))
            except (ValueError, AttributeError) as exc:
                raise DataError(f"{path}:{n}: {exc}") from None
    if not out:
        raise DataError(f"{path}: manifest lists no recordings")
    names = [e.recording for e in out]
    if len(set(names)) != len(names):
        raise DataError(f"{path}: duplicate recording names")
    return out


@dataclass
class RunManifest:
    command: str
    config: dict
    inputs: dict = field(default_factory=dict)
    timings: dict = field(default_factory=dict)
    outputs: list = field(default_factory=list)

    def digest(self, path) -> None:
        if not Path(path).is_file():
            raise DataError(f"file not found: {path}")
        self.inputs[str(path)] = artifacts.sha256_file(path)

    def timed(self, stage: str, t0: float) -> None:
        self.timings[stage] = self.timings.get(stage, 0.0) + time.perf_counter() - t0

    def write(self, out_dir: Path) -> Path:
        p = Path(out_dir) / f"run_{self.command}.json"
        p.parent.mkdir(parents=True, exist_ok=True)
        p.write_text(json.dumps(dataclasses.asdict(self), indent=1, default=str))
        return p


# ---------------------------------------------------------------------------
# stages
# ---------------------------------------------------------------------------


def _slug(name: str) -> str:
    return re.sub(r"[^A-Za-z0-9]+", "-", name).strip("-")


def night_features(entry: ManifestEntry, cfg: PipelineConfig):
    """Scored epochs of one recording and their band features per channel.

    Returns ``(epoch_indices, stages, {channel: J x 10})``.
    """
    for p in (entry.edf, entry.hypnogram):
        if not Path(p).is_file():
            raise DataError(f"{entry.recording}: file not found: {p}")
    rec = read_edf(entry.edf)
    hyp = read_hypnogram(entry.hypnogram)
    try:
        chans = {name: rec.channel(name) for name in cfg.channels}
    except KeyError as exc:
        raise DataError(f"{entry.recording}: {exc.args[0]}") from None
    epochs = segment_epochs(rec, hyp, cfg.channels, cfg.epoch_s)
    margin = entry.wake_margin_min if entry.wake_margin_min is not None else cfg.wake_margin_min
    if margin is not None:
        epochs = truncate_wake(epochs, margin, cfg.epoch_s)
    scored = [e for e in epochs if not e.excluded]
    if len(scored) < len(epochs):
        log.info("%s: %d unscored/excluded epochs dropped", entry.recording, len(epochs) - len(scored))
    if not scored:
        raise DataError(f"{entry.recording}: no scored epochs")
    idx = np.array([e.index for e in scored], dtype=np.int64)
    stages = np.array([int(e.stage) for e in scored], dtype=np.int64)
    feats = {}
    for name, ch in chans.items():
        fs = ch.sampling_rate
        starts = np.round(np.array([e.start for e in scored]) * fs).astype(np.int64)
        try:
            feats[name] = tfa.epoch_features(ch.samples, 1.0 / fs, starts, int(round(cfg.epoch_s * fs)),
                                             K=cfg.K, H=cfg.H, hop=cfg.hop, max_freq=cfg.max_freq)
        except DataError as exc:
            raise type(exc)(f"{entry.recording}/{name}: {exc}") from None
    return idx, stages, feats


@dataclass
class FusionResult:
    features: np.ndarray  # common feature rows (or DM coords in single-channel mode)
    channel_embeddings: list
    adm: diffusion.Embedding | None = None
    cocluster: np.ndarray | None = None


def _prepare(U, cfg: PipelineConfig) -> np.ndarray:
    U = np.array(U, dtype=np.float64)
    if cfg.energy_transform == "log":
        U[:, 0] = np.log(U[:, 0])
    return U


def _channel_operator(U, cfg: PipelineConfig):
    U = _prepare(U, cfg)
    if cfg.affinity_source == "local_md":
        cov = diffusion.local_covariances(U, cfg.alpha)
        d2 = diffusion.local_md(U, cov, cfg.md_rank)
    else:
        diff = U[:, None, :] - U[None, :, :]
        d2 = np.einsum("ijk,ijk->ij", diff, diff)
    W = diffusion.affinity(d2, cfg.eps_quantile, diagonal=cfg.affinity_diagonal)
    return W, diffusion.transition(W)


def fuse(feature_mats: list, cfg: PipelineConfig) -> FusionResult:
    """Per-channel diffusion geometry followed by fusion into common features."""
    ops = [_channel_operator(U, cfg) for U in feature_mats]
    embs = [diffusion.diffusion_map(A, cfg.diffusion_time, cfg.d_hat) for _, A in ops]
    if cfg.single_channel or len(ops) == 1:
        return FusionResult(embs[0].coords, embs)
    (W1, A1), (W2, A2) = ops
    psi = fusion.adm_embed(fusion.common_metric(fusion.alternating_diffusion(A1, A2)),
                           cfg.eps_quantile, cfg.diffusion_time, cfg.d_hat)
    q = fusion.cocluster_eigvecs(fusion.multiview_operator(W1, W2), cfg.d_tilde)
    return FusionResult(fusion.common_feature(psi, q, cfg.d_hat, cfg.d_tilde), embs, psi, q)


def _channels_for(cfg):
    return cfg.channels[:1] if cfg.single_channel else cfg.channels


def make_fold_runner(cfg: PipelineConfig):
    """Runner for :func:`~sleepgeom.evaluation.losocv`.

    With ``embedding_scope = "fold"`` the test subject's epochs are embedded
    together with the class-balanced training epochs; otherwise every night
    is embedded on its own.  The codebook and emissions come from the
    balanced training epochs, transitions from the full training nights.
    """
    chans = _channels_for(cfg)

    def run(train: list, test: SubjectRecord, rng: np.random.Generator) -> list:
        train_nights = [n for s in train for n in s.nights]
        keep = [class_balance(n.stages, rng) for n in train_nights]
        if cfg.embedding_scope == "fold":
            blocks = [{c: n.features[c][k] for c in chans} for n, k in zip(train_nights, keep)]
            blocks += [{c: n.features[c] for c in chans} for n in test.nights]
            sizes = [len(next(iter(b.values()))) for b in blocks]
            v = fuse([np.concatenate([b[c] for b in blocks]) for c in chans], cfg).features
            parts = np.split(v, np.cumsum(sizes)[:-1])
            train_v, test_v = parts[: len(train_nights)], parts[len(train_nights):]
        else:
            train_v = [fuse([n.features[c] for c in chans], cfg).features[k]
                       for n, k in zip(train_nights, keep)]
            test_v = [fuse([n.features[c] for c in chans], cfg).features for n in test.nights]
        model = hmm.train_hmm([n.stages[k] for n, k in zip(train_nights, keep)], train_v,
                              size=cfg.codebook_size, seed=cfg.seed, kappa=cfg.kappa,
                              transition_sequences=[n.stages for n in train_nights])
        return [model.predict(v) for v in test_v]

    return run


# ---------------------------------------------------------------------------
# commands
# ---------------------------------------------------------------------------


def _feature_path(out: Path, recording: str, channel: str) -> Path:
    return out / "features" / f"{recording}_{_slug(channel)}.csv"


def _load_or_compute_features(entry, cfg, out, run: RunManifest, force=False):
    chans = _channels_for(cfg)
    paths = {c: _feature_path(out, entry.recording, c) for c in chans}
    if not force and all(p.is_file() for p in paths.values()):
        feats = {}
        for c, p in paths.items():
            idx, stages, feats[c] = artifacts.read_features_csv(p)
            run.digest(p)
        return idx, stages, feats
    t0 = time.perf_counter()
    run.digest(entry.edf)
    run.digest(entry.hypnogram)
    idx, stages, feats = night_features(entry, cfg)
    run.timed("features", t0)
    for c, p in paths.items():
        artifacts.write_features_csv(p, idx, stages, feats[c])
        run.outputs.append(str(p))
    return idx, stages, feats


def cmd_features(cfg: PipelineConfig) -> RunManifest:
    out = cfg.resolved_output_dir()
    run = RunManifest("features", cfg.to_dict())
    for entry in read_manifest(cfg.manifest):
        _load_or_compute_features(entry, cfg, out, run, force=True)
    run.write(out)
    return run


def cmd_embed(cfg: PipelineConfig) -> RunManifest:
    """Per-recording, per-channel diffusion-map coordinates."""
    out = cfg.resolved_output_dir()
    run = RunManifest("embed", cfg.to_dict())
    for entry in read_manifest(cfg.manifest):
        idx, stages, feats = _load_or_compute_features(entry, cfg, out, run)
        for c in _channels_for(cfg):
            t0 = time.perf_counter()
            _, A = _channel_operator(feats[c], cfg)
            emb = diffusion.diffusion_map(A, cfg.diffusion_time, cfg.d_hat)
            run.timed("embed", t0)
            p = out / "embed" / f"{entry.recording}_{_slug(c)}.csv"
            artifacts.write_coords_csv(p, idx, stages, emb.coords)
            run.outputs.append(str(p))
    run.write(out)
    return run


def _fused_path(out: Path, recording: str, cfg: PipelineConfig) -> Path:
    # single-channel coordinates must never be mistaken for fused features
    return out / "fuse" / (f"{recording}_single.csv" if cfg.single_channel else f"{recording}.csv")


def cmd_fuse(cfg: PipelineConfig) -> RunManifest:
    """Per-recording common features plus the ADM and co-clustering scatter sets."""
    out = cfg.resolved_output_dir()
    run = RunManifest("fuse", cfg.to_dict())
    for entry in read_manifest(cfg.manifest):
        idx, stages, feats = _load_or_compute_features(entry, cfg, out, run)
        t0 = time.perf_counter()
        res = fuse([feats[c] for c in _channels_for(cfg)], cfg)
        run.timed("fuse", t0)
        paths = {_fused_path(out, entry.recording, cfg): res.features}
        if res.adm is not None:
            J = len(idx)
            paths[out / "fuse" / f"{entry.recording}_adm.csv"] = res.adm.coords
            paths[out / "fuse" / f"{entry.recording}_cocluster_ch1.csv"] = res.cocluster[:J]
            paths[out / "fuse" / f"{entry.recording}_cocluster_ch2.csv"] = res.cocluster[J:]
        for p, mat in paths.items():
            artifacts.write_coords_csv(p, idx, stages, mat)
            run.outputs.append(str(p))
    run.write(out)
    return run


def _fused_or_compute(entry, cfg, out, run):
    p = _fused_path(out, entry.recording, cfg)
    if p.is_file():
        run.digest(p)
        return artifacts.read_coords_csv(p)
    idx, stages, feats = _load_or_compute_features(entry, cfg, out, run)
    v = fuse([feats[c] for c in _channels_for(cfg)], cfg).features
    artifacts.write_coords_csv(p, idx, stages, v)
    run.outputs.append(str(p))
    return idx, stages, v


def cmd_train(cfg: PipelineConfig, model_path=None) -> RunManifest:
    """Train an HMM on every manifest recording's (per-recording) common features."""
    out = cfg.resolved_output_dir()
    run = RunManifest("train", cfg.to_dict())
    rng = np.random.default_rng(cfg.seed)
    stages_all, feats_all, full = [], [], []
    for entry in read_manifest(cfg.manifest):
        _, stages, v = _fused_or_compute(entry, cfg, out, run)
        keep = class_balance(stages, rng)
        stages_all.append(stages[keep])
        feats_all.append(v[keep])
        full.append(stages)
    t0 = time.perf_counter()
    model = hmm.train_hmm(stages_all, feats_all, size=cfg.codebook_size, seed=cfg.seed,
                          kappa=cfg.kappa, transition_sequences=full)
    run.timed("train", t0)
    model.config.update(cfg.to_dict())
    p = Path(model_path) if model_path else out / "model" / "hmm.json"
    p.parent.mkdir(parents=True, exist_ok=True)
    model.save(p)
    run.outputs.append(str(p))
    run.write(out)
    return run


def cmd_predict(cfg: PipelineConfig, model_path=None) -> RunManifest:
    out = cfg.resolved_output_dir()
    run = RunManifest("predict", cfg.to_dict())
    p = Path(model_path) if model_path else out / "model" / "hmm.json"
    if not p.is_file():
        raise DataError(f"model not found: {p}")
    run.digest(p)
    model = hmm.HmmModel.load(p)
    for entry in read_manifest(cfg.manifest):
        idx, stages, v = _fused_or_compute(entry, cfg, out, run)
        pred = model.predict(v)
        hp = out / "hypnograms" / f"{entry.recording}.csv"
        artifacts.write_hypnogram_csv(hp, idx, stages, pred)
        run.outputs.append(str(hp))
    run.write(out)
    return run


def load_subjects(cfg: PipelineConfig, out: Path, run: RunManifest):
    """Subjects with their nights' features, computing missing feature CSVs."""
    subjects: dict[str, SubjectRecord] = {}
    index = {}
    for entry in read_manifest(cfg.manifest):
        idx, stages, feats = _load_or_compute_features(entry, cfg, out, run)
        s = subjects.get(entry.subject)
        if s is None:
            s = subjects[entry.subject] = SubjectRecord(entry.subject, entry.age)
        elif s.age != entry.age:
            raise DataError(f"subject {entry.subject} listed with different ages")
        s.nights.append(Night(entry.recording, stages, feats))
        index[entry.recording] = idx
    return [subjects[k] for k in sorted(subjects)], index


def cmd_evaluate(cfg: PipelineConfig) -> RunManifest:
    """Cross-validated staging report and per-night hypnograms."""
    out = cfg.resolved_output_dir()
    run = RunManifest("evaluate", cfg.to_dict())
    subjects, index = load_subjects(cfg, out, run)
    runner = make_fold_runner(cfg)
    t0 = time.perf_counter()
    if cfg.scheme == "losocv":
        report = losocv(subjects, runner, cfg.k_hat, cfg.seed, cfg.to_dict())
    else:
        report = kfold(subjects, runner, cfg.folds, cfg.k_hat, cfg.seed, cfg.to_dict())
    run.timed("evaluate", t0)
    rp = out / "report" / "report.json"
    rp.parent.mkdir(parents=True, exist_ok=True)
    rp.write_text(json.dumps(report.to_dict(), indent=1))
    run.outputs.append(str(rp))
    for f in report.folds:
        for rec, truth, pred in f.nights:
            hp = out / "hypnograms" / f"{rec}.csv"
            artifacts.write_hypnogram_csv(hp, index[rec], truth, pred)
            run.outputs.append(str(hp))
    run.write(out)
    return run


def cmd_export(cfg: PipelineConfig, recording: str, channel: str | None = None,
               first_epoch: int = 0, n_epochs: int = 1) -> RunManifest:
    """Write the synchrosqueezed spectrogram of an epoch range as a flat binary matrix."""
    out = cfg.resolved_output_dir()
    run = RunManifest("export", cfg.to_dict())
    entries = {e.recording: e for e in read_manifest(cfg.manifest)}
    if recording not in entries:
        raise DataError(f"recording {recording!r} not in manifest")
    entry = entries[recording]
    if not Path(entry.edf).is_file():
        raise DataError(f"{recording}: file not found: {entry.edf}")
    run.digest(entry.edf)
    rec = read_edf(entry.edf)
    name = channel or cfg.channels[0]
    try:
        ch = rec.channel(name)
    except KeyError as exc:
        raise DataError(str(exc.args[0])) from None
    fs = ch.sampling_rate
    n = int(round(cfg.epoch_s * fs))
    a, b = first_epoch * n, (first_epoch + n_epochs) * n
    if first_epoch < 0 or n_epochs < 1 or b > ch.samples.size:
        raise DataError(f"epochs {first_epoch}..{first_epoch + n_epochs - 1} outside the recording")
    t0 = time.perf_counter()
    S = tfa.sst_matrix(ch.samples, 1.0 / fs, K=cfg.K, H=cfg.H,
                       frames=np.arange(a, b, cfg.hop), max_freq=cfg.max_freq)
    run.timed("sst", t0)
    p = out / "export" / f"{recording}_{_slug(name)}_e{first_epoch}-{first_epoch + n_epochs - 1}_sst.bin"
    artifacts.save_matrix(p, S.values, {"tau": 1.0 / fs, "K": cfg.K, "first_sample": a,
                                        "hop": cfg.hop, "rows": "time", "cols": "frequency bin"})
    run.outputs.append(str(p))
    run.write(out)
    return run
