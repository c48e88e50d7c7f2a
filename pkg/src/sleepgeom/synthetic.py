"""Two-channel synthetic sleep recordings with known stage labels.

Each epoch is a sum of stage-specific tones (delta for N3, spindles for N2,
alpha for Awake, theta for REM and N1) plus white noise.  The two channels
share the stage signature and carry different nuisance components, so the
labels are recoverable by construction.
"""

from __future__ import annotations

import csv
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .ingest import Channel, SleepStage, write_edf

__all__ = [
    "STAGE_TONES",
    "SyntheticSubject",
    "stage_chain",
    "synth_epoch",
    "generate_subjects",
    "write_corpus",
]

# (frequency Hz, amplitude) pairs per stage
STAGE_TONES: dict[SleepStage, tuple[tuple[float, float], ...]] = {
    SleepStage.AWAKE: ((10.0, 1.0), (21.0, 0.35)),
    SleepStage.REM: ((5.5, 0.8), (25.0, 0.35)),
    SleepStage.N1: ((5.5, 0.6), (8.5, 0.6), (2.5, 0.4)),
    SleepStage.N2: ((13.5, 0.9), (5.0, 0.5), (1.5, 0.5)),
    SleepStage.N3: ((1.5, 2.0), (3.0, 0.6)),
}

# channel-specific nuisance tones (frequency Hz, amplitude)
NUISANCE = (((35.0, 0.3),), ((18.0, 0.2), (45.0, 0.2)))

CHANNEL_NAMES = ("EEG Fpz-Cz", "EEG Pz-Oz")

_STAY = 0.85
# allowed successor stages besides staying put, roughly following a night
_NEXT = {
    SleepStage.AWAKE: (SleepStage.N1,),
    SleepStage.N1: (SleepStage.N2, SleepStage.AWAKE, SleepStage.REM),
    SleepStage.N2: (SleepStage.N3, SleepStage.REM, SleepStage.N1),
    SleepStage.N3: (SleepStage.N2,),
    SleepStage.REM: (SleepStage.N2, SleepStage.N1, SleepStage.AWAKE),
}


@dataclass
class SyntheticSubject:
    id: str
    age: float
    fs: float
    stages: np.ndarray
    signals: dict

    def channels(self) -> list[Channel]:
        return [Channel(name, sig, self.fs, "uV") for name, sig in self.signals.items()]


def stage_chain(n_epochs: int, rng: np.random.Generator) -> np.ndarray:
    """Sticky Markov stage sequence starting Awake and visiting every stage."""
    while True:
        s = [SleepStage.AWAKE]
        for _ in range(n_epochs - 1):
            cur = s[-1]
            if rng.random() < _STAY:
                s.append(cur)
            else:
                opts = _NEXT[cur]
                s.append(opts[rng.integers(len(opts))])
        out = np.array([int(x) for x in s])
        if len(np.unique(out)) == len(SleepStage) or n_epochs < 5 * len(SleepStage):
            return out


def _tones(t, tones, rng, jitter):
    x = np.zeros_like(t)
    for f, a in tones:
        f = f + rng.uniform(-jitter, jitter)
        x += a * rng.uniform(0.8, 1.2) * np.sin(2 * np.pi * f * t + rng.uniform(0, 2 * np.pi))
    return x


def synth_epoch(stage, n: int, fs: float, rng: np.random.Generator, channel: int = 0,
                noise: float = 0.3, jitter: float = 0.3, gain: float = 1.0,
                blend: float = 0.3) -> np.ndarray:
    """One epoch; up to ``blend`` of another stage's signature is mixed in."""
    t = np.arange(n) / fs
    w = rng.uniform(0.0, blend)
    other = SleepStage(int(rng.integers(1, len(SleepStage) + 1)))
    x = (1 - w) * _tones(t, STAGE_TONES[SleepStage(int(stage))], rng, jitter)
    x += w * _tones(t, STAGE_TONES[other], rng, jitter)
    x += _tones(t, NUISANCE[channel % len(NUISANCE)], rng, jitter)
    x += noise * rng.standard_normal(n)
    return gain * x


def generate_subjects(n_subjects: int = 6, n_epochs: int = 100, seed: int = 0, fs: float = 100.0,
                      epoch_s: float = 30.0, noise: float = 0.3,
                      blend: float = 0.3) -> list[SyntheticSubject]:
    rng = np.random.default_rng(seed)
    n = int(round(epoch_s * fs))
    subjects = []
    for i in range(n_subjects):
        stages = stage_chain(n_epochs, rng)
        age = float(rng.integers(25, 80))
        signals = {}
        for c, name in enumerate(CHANNEL_NAMES):
            gain = rng.uniform(0.7, 1.4)
            signals[name] = np.concatenate(
                [synth_epoch(s, n, fs, rng, c, noise, gain=gain, blend=blend) for s in stages])
        subjects.append(SyntheticSubject(f"S{i + 1:02d}", age, fs, stages, signals))
    return subjects


def write_corpus(subjects, directory, epoch_s: float = 30.0) -> Path:
    """Write EDF signals, CSV hypnograms and a manifest; returns the manifest path."""
    d = Path(directory)
    d.mkdir(parents=True, exist_ok=True)
    manifest = d / "manifest.csv"
    with manifest.open("w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["subject", "age", "recording", "edf", "hypnogram"])
        for s in subjects:
            rec = f"{s.id}N1"
            edf = d / f"{rec}-PSG.edf"
            hyp = d / f"{rec}-Hypnogram.csv"
            edf.write_bytes(write_edf(s.channels(), record_duration=epoch_s))
            with hyp.open("w", newline="") as hf:
                hw = csv.writer(hf)
                hw.writerow(["onset", "duration", "label"])
                for j, st in enumerate(s.stages):
                    hw.writerow([j * epoch_s, epoch_s, f"Sleep stage {SleepStage(int(st)).short}"])
            w.writerow([s.id, f"{s.age:g}", rec, edf.name, hyp.name])
    return manifest
