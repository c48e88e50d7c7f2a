"""STFT, frequency reassignment, synchrosqueezed spectrogram and epoch band features.

Discrete conventions (``tau`` = sampling period, ``K`` = number of frequency
bins, window support ``m = -L..R`` samples around the frame centre ``j``)::

    V(j, k)    = sum_m x[j+m] * (1/H) h(m/H)  * exp(-2i pi k m / K)
    V_D(j, k)  = sum_m x[j+m] * (1/H) h'(m/H) * exp(-2i pi k m / K)
    khat(j, k) = k - Im( K / (2 pi H) * V_D(j, k) / V(j, k) )
    S(j, b)    = sum over k with khat(j, k) in [b - 1/2, b + 1/2) of |V(j, k)|^2

with ``h(z) = exp(-z^2 / 2)``.  Bin ``k`` sits at ``k / (tau K)`` Hz.  The
signal is zero outside its support.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Sequence

import numpy as np
import scipy.fft as sfft

from . import kernels
from .errors import DataError, SilentEpochError

__all__ = [
    "StftGrid",
    "SynchroSpectrum",
    "DEFAULT_BANDS",
    "FEATURE_NAMES",
    "window_offsets",
    "gaussian_window",
    "stft",
    "reassign_freq",
    "synchrosqueeze",
    "band_features",
    "sst_matrix",
    "epoch_features",
]

# delta, theta, alpha, spindle, four beta slices, low gamma (Hz)
DEFAULT_BANDS: tuple[tuple[float, float], ...] = (
    (0.5, 4.0),
    (4.0, 7.0),
    (7.0, 12.0),
    (12.0, 16.0),
    (16.0, 20.0),
    (20.0, 24.0),
    (24.0, 28.0),
    (28.0, 31.0),
    (31.0, 49.0),
)
TOTAL_RANGE = (0.5, 49.0)
FEATURE_NAMES = tuple(["u0"] + [f"u{i}" for i in range(1, 10)])


@dataclass
class StftGrid:
    values: np.ndarray
    frames: np.ndarray
    H: float
    K: int
    tau: float

    @property
    def n_bins(self) -> int:
        return self.values.shape[1]

    @property
    def freqs(self) -> np.ndarray:
        return np.arange(self.n_bins) / (self.tau * self.K)


@dataclass
class SynchroSpectrum:
    values: np.ndarray
    frames: np.ndarray
    K: int
    tau: float

    @property
    def freqs(self) -> np.ndarray:
        return np.arange(self.values.shape[1]) / (self.tau * self.K)


def _near_int(v: float) -> int | None:
    r = round(v)
    return int(r) if abs(v - r) < 1e-9 * max(1.0, abs(v)) else None


def window_offsets(tau: float, half_width_s: float = 5.0) -> np.ndarray:
    """Sample offsets ``-floor(w/tau) .. ceil(w/tau)`` of the analysis window."""
    ratio = half_width_s / tau
    exact = _near_int(ratio)
    left = exact if exact is not None else math.floor(ratio)
    right = exact if exact is not None else math.ceil(ratio)
    return np.arange(-left, right + 1)


def gaussian_window(tau: float, H: float | None = None, derivative: bool = False,
                    half_width_s: float = 5.0) -> tuple[np.ndarray, np.ndarray]:
    m = window_offsets(tau, half_width_s)
    if H is None:
        H = float(m.size)
    z = m / H
    g = np.exp(-0.5 * z * z) / H
    if derivative:
        g = -z * g
    return m, g


def _check_signal(x) -> np.ndarray:
    x = np.asarray(x, dtype=np.float64)
    if x.ndim != 1:
        raise DataError(f"signal must be one-dimensional, got shape {x.shape}")
    if not np.all(np.isfinite(x)):
        raise DataError("signal contains non-finite samples")
    return x


def _stft_block(xpad: np.ndarray, left: int, frames: np.ndarray, weights: np.ndarray,
                K: int, n_bins: int, phase: np.ndarray) -> np.ndarray:
    L = weights.size
    view = np.lib.stride_tricks.sliding_window_view(xpad, L)
    seg = view[frames] * weights
    spectrum = sfft.rfft(seg, n=K, axis=1)
    half = spectrum.shape[1]
    if n_bins > half:
        k = np.arange(half, n_bins)
        spectrum = np.concatenate([spectrum, np.conj(spectrum[:, K - k])], axis=1)
    else:
        spectrum = spectrum[:, :n_bins]
    return spectrum * phase


def stft(x, tau: float, K: int = 4004, H: float | None = None, frames=None,
         n_bins: int | None = None, derivative: bool = False,
         half_width_s: float = 5.0) -> StftGrid:
    """Discrete Gaussian-window STFT evaluated at sample indices ``frames``.

    Parameters
    ----------
    x : array_like
        Real signal.
    tau : float
        Sampling period in seconds.
    K : int
        Number of frequency bins; must be at least the window length.
    H : float, optional
        Window bandwidth in samples; defaults to the window length.
    frames : array_like of int, optional
        Frame centres; defaults to every sample.
    n_bins : int, optional
        Return only bins ``0 .. n_bins - 1`` (default ``K``).
    derivative : bool
        Use the derivative window ``h'`` instead of ``h``.
    """
    x = _check_signal(x)
    m, w = gaussian_window(tau, H, derivative, half_width_s)
    H = float(m.size) if H is None else float(H)
    if K < m.size:
        raise DataError(f"K={K} is smaller than the window length {m.size}")
    n_bins = K if n_bins is None else int(n_bins)
    if not 0 < n_bins <= K:
        raise DataError(f"n_bins must lie in 1..K, got {n_bins}")
    frames = np.arange(x.size) if frames is None else np.asarray(frames, dtype=np.int64)
    left = -int(m[0])
    xpad = np.pad(x, (left, int(m[-1])))
    # FFT phase origin is the window's first sample; shift it to the centre
    phase = np.exp(2j * np.pi * np.arange(n_bins) * left / K)
    values = _stft_block(xpad, left, frames, w, K, n_bins, phase) if frames.size else \
        np.zeros((0, n_bins), dtype=complex)
    return StftGrid(values, frames, H, K, tau)


def reassign_freq(V_h: StftGrid, V_dh: StftGrid, floor: float = 1e-12) -> np.ndarray:
    """Reassigned (fractional) bin index for every STFT cell.

    Cells whose magnitude is below ``floor`` times the largest magnitude in
    their frame carry NaN, meaning "discard".
    """
    if V_h.values.shape != V_dh.values.shape:
        raise DataError(f"shape mismatch: {V_h.values.shape} vs {V_dh.values.shape}")
    return _reassign(V_h.values, V_dh.values, V_h.K, V_h.H, floor)


def _reassign(vh: np.ndarray, vd: np.ndarray, K: int, H: float, floor: float) -> np.ndarray:
    mag = np.abs(vh)
    cut = floor * mag.max(axis=1, keepdims=True) if mag.size else mag
    ok = (mag > cut) & (mag > 0)
    ratio = np.divide(vd, vh, out=np.zeros_like(vh), where=ok)
    khat = np.arange(vh.shape[1]) - (K / (2.0 * np.pi * H)) * ratio.imag
    khat[~ok] = np.nan
    return khat


def synchrosqueeze(V_h: StftGrid, V_dh: StftGrid, floor: float = 1e-12) -> SynchroSpectrum:
    """Synchrosqueezed spectrogram on the same bin grid as ``V_h``.

    Reassigned indices outside ``[0, n_bins)`` are discarded, so the total
    mass never exceeds that of ``|V_h|^2``.
    """
    khat = reassign_freq(V_h, V_dh, floor)
    power = np.abs(V_h.values) ** 2
    S = kernels.squeeze_rows(khat, power, V_h.n_bins)
    return SynchroSpectrum(S, V_h.frames, V_h.K, V_h.tau)


def _band_masks(freqs: np.ndarray, bands, total_range):
    lo, hi = total_range
    total = (freqs >= lo) & (freqs <= hi)
    masks = []
    for i, (a, b) in enumerate(bands):
        last = i == len(bands) - 1
        masks.append((freqs >= a) & ((freqs <= b) if last else (freqs < b)))
    return total, masks


def band_features(S, tau: float | None = None, K: int | None = None,
                  bands: Sequence[tuple[float, float]] = DEFAULT_BANDS,
                  total_range: tuple[float, float] = TOTAL_RANGE) -> np.ndarray:
    """Ten-dimensional epoch feature from the SST rows of one epoch.

    ``u[0]`` is the in-band energy averaged over the epoch's time columns and
    ``u[1:]`` the fraction of that energy falling in each band.  Band edges
    are half-open on the right except for the last band.
    """
    if isinstance(S, SynchroSpectrum):
        tau, K, S = S.tau, S.K, S.values
    S = np.atleast_2d(np.asarray(S, dtype=np.float64))
    if tau is None or K is None:
        raise DataError("tau and K are required with a raw SST matrix")
    return _features_from_column_sum(S.sum(axis=0), S.shape[0], tau, K, bands, total_range)


def _features_from_column_sum(colsum, n_cols, tau, K, bands, total_range):
    freqs = np.arange(colsum.size) / (tau * K)
    total, masks = _band_masks(freqs, bands, total_range)
    energy = colsum[total].sum()
    if not energy > 0:
        raise SilentEpochError("epoch has zero in-band SST energy; band ratios are undefined")
    u = np.empty(len(bands) + 1)
    u[0] = energy / n_cols
    for i, mask in enumerate(masks):
        u[i + 1] = colsum[mask].sum() / energy
    return u


def _analysis_bins(tau: float, K: int, max_freq: float | None, guard: int) -> int:
    if max_freq is None:
        return K
    return min(K, int(math.ceil(max_freq * tau * K)) + 1 + guard)


class _SstEngine:
    """Blocked SST evaluation sharing windows, padding and phase factors."""

    def __init__(self, x, tau, K, H, max_freq, guard, half_width_s, floor, block):
        self.x = _check_signal(x)
        m, self.w = gaussian_window(tau, H, False, half_width_s)
        _, self.dw = gaussian_window(tau, H, True, half_width_s)
        self.H = float(m.size) if H is None else float(H)
        if K < m.size:
            raise DataError(f"K={K} is smaller than the window length {m.size}")
        self.tau, self.K, self.floor, self.block = tau, K, floor, block
        self.n_bins = _analysis_bins(tau, K, max_freq, guard)
        self.left = -int(m[0])
        self.xpad = np.pad(self.x, (self.left, int(m[-1])))
        self.phase = np.exp(2j * np.pi * np.arange(self.n_bins) * self.left / K)

    def rows(self, frames: np.ndarray):
        for i0 in range(0, frames.size, self.block):
            fr = frames[i0 : i0 + self.block]
            vh = _stft_block(self.xpad, self.left, fr, self.w, self.K, self.n_bins, self.phase)
            vd = _stft_block(self.xpad, self.left, fr, self.dw, self.K, self.n_bins, self.phase)
            khat = _reassign(vh, vd, self.K, self.H, self.floor)
            power = vh.real ** 2 + vh.imag ** 2
            yield kernels.squeeze_rows(khat, power, self.n_bins)


def sst_matrix(x, tau: float, K: int = 4004, H: float | None = None, frames=None,
               max_freq: float | None = 50.0, guard: int = 16, half_width_s: float = 5.0,
               floor: float = 1e-12, block: int = 512) -> SynchroSpectrum:
    """Synchrosqueezed spectrogram restricted to bins up to ``max_freq`` (+ guard)."""
    eng = _SstEngine(x, tau, K, H, max_freq, guard, half_width_s, floor, block)
    frames = np.arange(eng.x.size) if frames is None else np.asarray(frames, dtype=np.int64)
    parts = list(eng.rows(frames))
    values = np.concatenate(parts, axis=0) if parts else np.zeros((0, eng.n_bins))
    return SynchroSpectrum(values, frames, K, tau)


def epoch_features(x, tau: float, starts, epoch_len: int, K: int = 4004, H: float | None = None,
                   hop: int = 1, bands=DEFAULT_BANDS, total_range=TOTAL_RANGE,
                   max_freq: float | None = 50.0, guard: int = 16, half_width_s: float = 5.0,
                   floor: float = 1e-12, block: int = 512) -> np.ndarray:
    """Band features for the epochs starting at sample indices ``starts``.

    Every ``hop``-th time column of each epoch enters the average; ``hop=1``
    uses all of them.  Returns an array of shape ``(len(starts), 10)``.
    """
    if hop < 1:
        raise DataError(f"hop must be >= 1, got {hop}")
    eng = _SstEngine(x, tau, K, H, max_freq, guard, half_width_s, floor, block)
    starts = np.asarray(starts, dtype=np.int64)
    out = np.empty((starts.size, len(bands) + 1))
    offsets = np.arange(0, epoch_len, hop)
    for e, s in enumerate(starts):
        if s < 0 or s + epoch_len > eng.x.size:
            raise DataError(f"epoch at sample {s} extends beyond the signal")
        colsum = np.zeros(eng.n_bins)
        for rows in eng.rows(s + offsets):
            colsum += rows.sum(axis=0)
        try:
            out[e] = _features_from_column_sum(colsum, offsets.size, tau, K, bands, total_range)
        except SilentEpochError as exc:
            raise SilentEpochError(f"epoch starting at sample {s}: {exc}") from None
    return out
