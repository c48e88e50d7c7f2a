"""EDF/EDF+ recordings, hypnograms and 30-second labelled epochs.

Only continuous 16-bit EDF (and EDF+C) files are supported; EDF+D files are
rejected.  Hypnograms come either as EDF+ annotation files (the Sleep-EDF
``*Hypnogram.edf`` layout) or as plain CSV ``onset,duration,label``.
"""

from __future__ import annotations

import csv
import datetime as _dt
import enum
import io
import logging
import math
import re
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable, Sequence

import numpy as np

from .errors import EDFError, HypnogramError

log = logging.getLogger(__name__)

EPOCH_SECONDS = 30.0
ANNOTATION_LABEL = "EDF Annotations"

__all__ = [
    "Channel",
    "Recording",
    "SleepStage",
    "HypnogramEntry",
    "Hypnogram",
    "LabeledEpoch",
    "parse_edf",
    "read_edf",
    "write_edf",
    "parse_hypnogram",
    "read_hypnogram",
    "stage_from_label",
    "segment_epochs",
    "truncate_wake",
    "EPOCH_SECONDS",
]


class SleepStage(enum.IntEnum):
    AWAKE = 1
    REM = 2
    N1 = 3
    N2 = 4
    N3 = 5

    @property
    def short(self) -> str:
        return {1: "W", 2: "R", 3: "N1", 4: "N2", 5: "N3"}[int(self)]


@dataclass
class Channel:
    label: str
    samples: np.ndarray
    sampling_rate: float
    physical_dimension: str = ""


@dataclass
class Recording:
    channels: list[Channel]
    start_time: _dt.datetime
    duration: float
    annotations: list[tuple[float, float, str]] = field(default_factory=list)

    def __post_init__(self):
        for ch in self.channels:
            if ch.sampling_rate <= 0:
                raise EDFError(f"channel {ch.label!r} has non-positive sampling rate")
            expected = self.duration * ch.sampling_rate
            if abs(ch.samples.shape[0] - expected) > 1e-6 * max(1.0, expected):
                raise EDFError(
                    f"channel {ch.label!r} holds {ch.samples.shape[0]} samples, "
                    f"expected {expected:g} for {self.duration:g} s"
                )

    @property
    def labels(self) -> list[str]:
        return [ch.label for ch in self.channels]

    def channel(self, name: str) -> Channel:
        """Channel by exact label, falling back to a unique suffix match.

        Sleep-EDF labels carry a modality prefix (``"EEG Fpz-Cz"``), so
        ``channel("Fpz-Cz")`` finds it.
        """
        for ch in self.channels:
            if ch.label == name:
                return ch
        hits = [ch for ch in self.channels if ch.label.strip().endswith(name.strip())]
        if len(hits) == 1:
            return hits[0]
        if not hits:
            raise KeyError(f"no channel {name!r}; available: {self.labels}")
        raise KeyError(f"channel name {name!r} is ambiguous: {[h.label for h in hits]}")


# ---------------------------------------------------------------------------
# EDF parsing
# ---------------------------------------------------------------------------

_SIGNAL_FIELDS = (
    ("label", 16),
    ("transducer", 80),
    ("physical_dimension", 8),
    ("physical_min", 8),
    ("physical_max", 8),
    ("digital_min", 8),
    ("digital_max", 8),
    ("prefiltering", 80),
    ("samples_per_record", 8),
    ("reserved", 32),
)


def _ascii(raw: bytes, offset: int) -> str:
    try:
        return raw.decode("ascii")
    except UnicodeDecodeError as exc:
        raise EDFError("non-ASCII header field", offset + exc.start) from None


def _number(text: str, offset: int, kind=float):
    text = text.strip()
    try:
        return kind(text)
    except ValueError:
        raise EDFError(f"cannot parse {text!r} as {kind.__name__}", offset) from None


def _parse_start(date: str, time: str) -> _dt.datetime:
    try:
        d = _dt.datetime.strptime(date.strip(), "%d.%m.%y").date()
        t = _dt.datetime.strptime(time.strip(), "%H.%M.%S").time()
    except ValueError:
        return _dt.datetime(1985, 1, 1)
    return _dt.datetime.combine(d, t)


def parse_edf(data: bytes) -> Recording:
    """Parse an EDF or EDF+C byte string into a :class:`Recording`.

    Digital samples are mapped to physical units with the per-signal
    ``(physical_min, physical_max, digital_min, digital_max)`` affine map.
    ``EDF Annotations`` signals are decoded into ``Recording.annotations``
    instead of being returned as channels.
    """
    data = bytes(data)
    if len(data) < 256:
        raise EDFError("truncated fixed header", len(data))
    version = _ascii(data[0:8], 0)
    if version.strip() != "0":
        raise EDFError(f"unsupported EDF version field {version!r}", 0)
    date = _ascii(data[168:176], 168)
    time = _ascii(data[176:184], 176)
    header_bytes = _number(_ascii(data[184:192], 184), 184, int)
    reserved = _ascii(data[192:236], 192)
    if reserved.startswith("EDF+D"):
        raise EDFError("discontinuous EDF+D recordings are not supported", 192)
    n_records = _number(_ascii(data[236:244], 236), 236, int)
    record_duration = _number(_ascii(data[244:252], 244), 244, float)
    ns = _number(_ascii(data[252:256], 252), 252, int)
    if ns < 1:
        raise EDFError(f"number of signals must be positive, got {ns}", 252)
    if header_bytes != 256 * (ns + 1):
        raise EDFError(f"header size {header_bytes} inconsistent with {ns} signals", 184)
    if len(data) < header_bytes:
        raise EDFError("truncated signal header", len(data))

    fields: dict[str, list] = {}
    pos = 256
    for name, width in _SIGNAL_FIELDS:
        values = []
        for _ in range(ns):
            values.append((_ascii(data[pos : pos + width], pos), pos))
            pos += width
        fields[name] = values

    labels = [v.strip() for v, _ in fields["label"]]
    dims = [v.strip() for v, _ in fields["physical_dimension"]]
    pmin = [_number(v, o) for v, o in fields["physical_min"]]
    pmax = [_number(v, o) for v, o in fields["physical_max"]]
    dmin = [_number(v, o, int) for v, o in fields["digital_min"]]
    dmax = [_number(v, o, int) for v, o in fields["digital_max"]]
    nsamp = [_number(v, o, int) for v, o in fields["samples_per_record"]]
    for i, n in enumerate(nsamp):
        if n < 1:
            raise EDFError(f"signal {i} has {n} samples per record", fields["samples_per_record"][i][1])

    record_samples = sum(nsamp)
    record_bytes = 2 * record_samples
    body = len(data) - header_bytes
    if n_records < 0:
        n_records = body // record_bytes
    # annotation-only EDF+ files (e.g. hypnograms) may declare a zero duration
    only_annotations = all(v.strip() == ANNOTATION_LABEL for v, _ in fields["label"])
    if record_duration <= 0 and n_records > 0 and not only_annotations:
        raise EDFError(f"record duration must be positive, got {record_duration}", 244)
    if body < n_records * record_bytes:
        bad = body // record_bytes
        raise EDFError(
            f"data record {bad} is truncated ({n_records} records declared)",
            header_bytes + bad * record_bytes,
        )

    raw = np.frombuffer(data, dtype="<i2", count=n_records * record_samples, offset=header_bytes)
    raw = raw.reshape(n_records, record_samples)

    channels: list[Channel] = []
    annotations: list[tuple[float, float, str]] = []
    col = 0
    for i in range(ns):
        block = raw[:, col : col + nsamp[i]]
        col += nsamp[i]
        if labels[i] == ANNOTATION_LABEL:
            for r in range(n_records):
                annotations.extend(_parse_tal(block[r].tobytes()))
            continue
        if dmax[i] == dmin[i]:
            raise EDFError(
                f"signal {labels[i]!r}: digital_min equals digital_max ({dmin[i]}); cannot scale",
                fields["digital_min"][i][1],
            )
        gain = (pmax[i] - pmin[i]) / (dmax[i] - dmin[i])
        samples = (block.reshape(-1).astype(np.float64) - dmin[i]) * gain + pmin[i]
        rate = nsamp[i] / record_duration
        channels.append(Channel(labels[i], samples, rate, dims[i]))

    annotations.sort(key=lambda a: a[0])
    return Recording(
        channels=channels,
        start_time=_parse_start(date, time),
        duration=n_records * record_duration,
        annotations=annotations,
    )


def read_edf(path: str | Path) -> Recording:
    return parse_edf(Path(path).read_bytes())


_TAL_RE = re.compile(rb"([+-]\d+(?:\.\d*)?)(?:\x15(\d+(?:\.\d*)?))?\x14")


def _parse_tal(raw: bytes) -> list[tuple[float, float, str]]:
    out = []
    for chunk in raw.split(b"\x00"):
        if not chunk:
            continue
        m = _TAL_RE.match(chunk)
        if m is None:
            raise EDFError(f"malformed time-stamped annotation list {chunk[:40]!r}")
        onset = float(m.group(1))
        duration = float(m.group(2)) if m.group(2) else 0.0
        texts = chunk[m.end() :].split(b"\x14")
        for text in texts:
            if text:
                out.append((onset, duration, text.decode("utf-8", errors="replace")))
    return out


# ---------------------------------------------------------------------------
# EDF writing (used for synthetic corpora)
# ---------------------------------------------------------------------------


def _field(value, width: int) -> bytes:
    text = value if isinstance(value, str) else _fmt_number(value, width)
    raw = text.encode("ascii")
    if len(raw) > width:
        raise ValueError(f"EDF field {text!r} exceeds {width} characters")
    return raw.ljust(width, b" ")


def _fmt_number(value, width: int) -> str:
    if isinstance(value, (int, np.integer)):
        return str(int(value))
    text = repr(float(value))
    if text.endswith(".0"):
        text = text[:-2]
    if len(text) <= width:
        return text
    for digits in range(width, 0, -1):
        text = f"{float(value):.{digits}g}"
        if len(text) <= width:
            return text
    raise ValueError(f"cannot fit {value!r} in {width} characters")


def _edf_range(lo: float, hi: float) -> tuple[str, str]:
    """Physical min/max as 8-character strings that still bracket ``[lo, hi]``."""
    if hi <= lo:
        lo, hi = lo - 1.0, lo + 1.0
    for digits in range(6, -1, -1):
        scale = 10.0**digits
        a = math.floor(lo * scale) / scale
        b = math.ceil(hi * scale) / scale
        sa, sb = f"{a:.{digits}f}", f"{b:.{digits}f}"
        if len(sa) <= 8 and len(sb) <= 8 and a < b:
            return sa, sb
    raise ValueError(f"physical range [{lo}, {hi}] does not fit the EDF header")


def _tal_block(annotations: Sequence[tuple[float, float, str]], record_onset: float) -> bytes:
    out = f"+{record_onset:g}\x14\x14\x00".encode("ascii")
    for onset, duration, text in annotations:
        head = f"{onset:+g}"
        if duration:
            head += f"\x15{duration:g}"
        out += head.encode("ascii") + b"\x14" + text.encode("utf-8") + b"\x14\x00"
    return out


def write_edf(
    channels: Sequence[Channel],
    record_duration: float = 1.0,
    start_time: _dt.datetime | None = None,
    annotations: Sequence[tuple[float, float, str]] | None = None,
) -> bytes:
    """Serialise channels (and optional annotations) as EDF/EDF+C bytes.

    Physical ranges are taken from each channel's own min/max, digital range
    is the full int16 span.  Annotations are packed into the first data record
    of an ``EDF Annotations`` signal, which makes the file EDF+C.
    """
    start_time = start_time or _dt.datetime(2000, 1, 1)
    signals = []
    n_records = None
    for ch in channels:
        spr = ch.sampling_rate * record_duration
        if abs(spr - round(spr)) > 1e-9:
            raise ValueError(f"{ch.label}: rate {ch.sampling_rate} x record {record_duration} is not integral")
        spr = int(round(spr))
        n = ch.samples.shape[0] // spr
        if ch.samples.shape[0] != n * spr:
            raise ValueError(f"{ch.label}: sample count is not a whole number of records")
        n_records = n if n_records is None else n_records
        if n != n_records:
            raise ValueError("channels span different durations")
        x = np.asarray(ch.samples, dtype=np.float64)
        lo_s, hi_s = _edf_range(float(x.min()) if x.size else 0.0, float(x.max()) if x.size else 0.0)
        lo, hi = float(lo_s), float(hi_s)
        dig = np.round((x - lo) / (hi - lo) * 65535.0 - 32768.0)
        dig = np.clip(dig, -32768, 32767).astype("<i2")
        signals.append(dict(label=ch.label, dim=ch.physical_dimension, pmin=lo_s, pmax=hi_s,
                            dmin=-32768, dmax=32767, spr=spr, data=dig.reshape(n, spr)))
    if n_records is None:
        n_records = 0
    if annotations is not None:
        tal = _tal_block(sorted(annotations), 0.0)
        n_records = max(n_records, 1)
        longest_stamp = len(_tal_block([], (n_records - 1) * record_duration))
        n_ann = math.ceil(max(len(tal), longest_stamp) / 2)
        blocks = np.zeros((n_records, 2 * n_ann), dtype=np.uint8)
        blocks[0, : len(tal)] = np.frombuffer(tal, dtype=np.uint8)
        for r in range(1, n_records):
            stamp = _tal_block([], r * record_duration)
            blocks[r, : len(stamp)] = np.frombuffer(stamp, dtype=np.uint8)
        signals.append(dict(label=ANNOTATION_LABEL, dim="", pmin=-1, pmax=1, dmin=-32768,
                            dmax=32767, spr=n_ann, data=blocks.view("<i2")))

    ns = len(signals)
    head = b"".join(
        [
            _field("0", 8),
            _field("X X X X", 80),
            _field("Startdate X X X X", 80),
            _field(start_time.strftime("%d.%m.%y"), 8),
            _field(start_time.strftime("%H.%M.%S"), 8),
            _field(256 * (ns + 1), 8),
            _field("EDF+C" if annotations is not None else "", 44),
            _field(n_records, 8),
            _field(record_duration, 8),
            _field(ns, 4),
        ]
    )
    for key, width in (("label", 16), ("transducer", 80), ("dim", 8), ("pmin", 8), ("pmax", 8),
                       ("dmin", 8), ("dmax", 8), ("prefilter", 80), ("spr", 8), ("reserved", 32)):
        for s in signals:
            head += _field(s.get(key, ""), width)
    body = b"".join(
        b"".join(s["data"][r].astype("<i2").tobytes() for s in signals) for r in range(n_records)
    )
    return head + body


# ---------------------------------------------------------------------------
# hypnograms
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class HypnogramEntry:
    onset: float
    duration: float
    raw_label: str


@dataclass
class Hypnogram:
    entries: list[HypnogramEntry]

    def __post_init__(self):
        self.entries = sorted(self.entries, key=lambda e: e.onset)
        for e in self.entries:
            if e.duration < 0:
                raise HypnogramError(f"negative duration at onset {e.onset}: {e.duration}")
        for a, b in zip(self.entries, self.entries[1:]):
            if b.onset < a.onset + a.duration - 1e-9:
                raise HypnogramError(
                    f"overlapping hypnogram entries at {a.onset}+{a.duration} and {b.onset}"
                )

    def __len__(self):
        return len(self.entries)

    @property
    def end(self) -> float:
        return max((e.onset + e.duration for e in self.entries), default=0.0)


def parse_hypnogram(data: bytes | str) -> Hypnogram:
    """Parse an EDF+ annotation file or CSV text into a :class:`Hypnogram`.

    Raw labels are kept verbatim; mapping to stages happens in
    :func:`segment_epochs`.
    """
    if isinstance(data, (bytes, bytearray)) and data[:8] == b"0       ":
        rec = parse_edf(bytes(data))
        return Hypnogram([HypnogramEntry(o, d, t) for o, d, t in rec.annotations])
    if isinstance(data, (bytes, bytearray)):
        try:
            data = bytes(data).decode("utf-8")
        except UnicodeDecodeError:
            raise HypnogramError("unrecognised hypnogram format (neither EDF+ nor UTF-8 CSV)") from None
    return _parse_csv_hypnogram(data)


def _parse_csv_hypnogram(text: str) -> Hypnogram:
    entries = []
    rows = [r for r in csv.reader(io.StringIO(text)) if r and any(c.strip() for c in r)]
    if not rows:
        raise HypnogramError("empty hypnogram")
    for lineno, row in enumerate(rows, 1):
        if len(row) != 3:
            raise HypnogramError(f"line {lineno}: expected onset,duration,label, got {len(row)} fields")
        try:
            onset, duration = float(row[0]), float(row[1])
        except ValueError:
            if lineno == 1:
                continue  # header row
            raise HypnogramError(f"line {lineno}: non-numeric onset/duration {row[:2]}") from None
        if duration < 0:
            raise HypnogramError(f"line {lineno}: negative duration {duration}")
        entries.append(HypnogramEntry(onset, duration, row[2].strip()))
    return Hypnogram(entries)


def read_hypnogram(path: str | Path) -> Hypnogram:
    return parse_hypnogram(Path(path).read_bytes())


_STAGE_ALIASES = {
    "w": SleepStage.AWAKE,
    "wake": SleepStage.AWAKE,
    "awake": SleepStage.AWAKE,
    "r": SleepStage.REM,
    "rem": SleepStage.REM,
    "1": SleepStage.N1,
    "n1": SleepStage.N1,
    "2": SleepStage.N2,
    "n2": SleepStage.N2,
    "3": SleepStage.N3,
    "n3": SleepStage.N3,
    "4": SleepStage.N3,  # R&K stage 4 merges into N3 under AASM
    "n4": SleepStage.N3,
}


def stage_from_label(raw: str) -> tuple[SleepStage | None, str | None]:
    """Map a raw hypnogram label to ``(stage, None)`` or ``(None, reason)``."""
    text = raw.strip().lower()
    if text.startswith("sleep stage"):
        text = text[len("sleep stage") :].strip()
    if text in _STAGE_ALIASES:
        return _STAGE_ALIASES[text], None
    if "movement" in text:
        return None, "movement"
    if text in {"?", "unknown", "unscored"}:
        return None, "unknown"
    return None, f"unrecognised label {raw!r}"


@dataclass
class LabeledEpoch:
    index: int
    start: float
    samples: dict[str, np.ndarray]
    stage: SleepStage | None
    excluded_reason: str | None = None

    @property
    def excluded(self) -> bool:
        return self.stage is None


def segment_epochs(
    rec: Recording,
    hyp: Hypnogram,
    channels: Iterable[str] | None = None,
    epoch_s: float = EPOCH_SECONDS,
) -> list[LabeledEpoch]:
    """Cut a recording into labelled epochs on the hypnogram's 30-s grid.

    Stage-4 labels become N3; movement/unknown epochs, and grid epochs no
    hypnogram entry covers, are kept but marked excluded.  Epochs that would
    run past the end of the signal are dropped and counted in a warning.
    """
    names = list(channels) if channels is not None else rec.labels
    chans = {name: rec.channel(name) for name in names}
    if rec.duration <= 0 or not hyp.entries:
        return []

    labels: dict[int, tuple[SleepStage | None, str | None]] = {}
    for e in hyp.entries:
        stage, reason = stage_from_label(e.raw_label)
        first = e.onset / epoch_s
        count = e.duration / epoch_s
        aligned = abs(first - round(first)) < 1e-6 and abs(count - round(count)) < 1e-6
        if not aligned:
            if stage is not None:
                raise HypnogramError(
                    f"entry {e.raw_label!r} at {e.onset}s/{e.duration}s is not on the {epoch_s:g}-s grid"
                )
            continue
        for k in range(int(round(first)), int(round(first + count))):
            labels[k] = (stage, reason)

    n_grid = int(math.floor(hyp.end / epoch_s + 1e-9))
    epochs = []
    dropped = 0
    for k in range(n_grid):
        start = k * epoch_s
        if start + epoch_s > rec.duration + 1e-9:
            dropped += 1
            continue
        windows = {}
        for name, ch in chans.items():
            a = int(round(start * ch.sampling_rate))
            b = a + int(round(epoch_s * ch.sampling_rate))
            windows[name] = ch.samples[a:b]
        stage, reason = labels.get(k, (None, "unscored"))
        epochs.append(LabeledEpoch(k, start, windows, stage, reason))
    if dropped:
        log.warning("dropped %d epoch(s) extending past the end of the signal", dropped)
    return epochs


def truncate_wake(epochs: Sequence[LabeledEpoch], margin_min: float, epoch_s: float = EPOCH_SECONDS):
    """Keep at most ``margin_min`` minutes of wake before and after sleep.

    Sleep onset/offset are the first/last epochs carrying a non-wake stage;
    everything earlier (later) than the margin is removed, interior epochs
    are untouched.
    """
    epochs = list(epochs)
    sleep = [i for i, e in enumerate(epochs) if e.stage is not None and e.stage != SleepStage.AWAKE]
    if not sleep:
        if epochs:
            log.warning("no sleep epochs found; wake truncation skipped")
        return epochs
    margin = int(round(margin_min * 60.0 / epoch_s))
    first, last = epochs[sleep[0]].index, epochs[sleep[-1]].index
    return [e for e in epochs if first - margin <= e.index <= last + margin]
