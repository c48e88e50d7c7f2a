import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from sleepgeom import tfa
from sleepgeom.errors import DataError, SilentEpochError

TAU = 0.01
K = 4004

# fraction of the positive-frequency SST mass of a 10 Hz tone (tau=0.01,
# K=4004, window length 1001) within +-2 bins of bin 400, frozen from the
# direct-sum oracle below
TONE_MASS_PM2 = 0.8630872966


def direct_stft(x, j, K, derivative=False, H=1001.0):
    """Brute-force windowed sum for one frame centre ``j``."""
    m = np.arange(-500, 501)
    g = np.exp(-0.5 * (m / H) ** 2) / H
    if derivative:
        g = -(m / H) * g
    idx = j + m
    seg = np.where((idx >= 0) & (idx < x.size), x[np.clip(idx, 0, x.size - 1)], 0.0)
    k = np.arange(K)
    return (seg * g) @ np.exp(-2j * np.pi * np.outer(m, k) / K)


def direct_sst(x, j, K):
    V, VD = direct_stft(x, j, K), direct_stft(x, j, K, derivative=True)
    mag = np.abs(V)
    S = np.zeros(K)
    for k in np.flatnonzero(mag > 1e-12 * mag.max()):
        kh = k - K / (2 * np.pi * 1001.0) * (VD[k] / V[k]).imag
        b = int(np.floor(kh + 0.5))
        if 0 <= b < K:
            S[b] += mag[k] ** 2
    return S


def tone(f, n=6000, phase=0.0):
    return np.cos(2 * np.pi * f * np.arange(n) * TAU + phase)


def test_window_support_and_length():
    m = tfa.window_offsets(TAU)
    assert m[0] == -500 and m[-1] == 500 and m.size == 1001


def test_stft_matches_direct_sum(rng):
    x = rng.normal(size=1500)
    frames = [0, 3, 700, 1499]
    g = tfa.stft(x, TAU, K=1024, frames=frames)
    gd = tfa.stft(x, TAU, K=1024, frames=frames, derivative=True)
    for r, j in enumerate(frames):
        np.testing.assert_allclose(g.values[r], direct_stft(x, j, 1024), rtol=0, atol=1e-13)
        np.testing.assert_allclose(gd.values[r], direct_stft(x, j, 1024, True), rtol=0, atol=1e-13)


def test_truncated_bins_agree_with_full_grid(rng):
    x = rng.normal(size=2000)
    full = tfa.stft(x, TAU, K=K, frames=[1000])
    part = tfa.stft(x, TAU, K=K, frames=[1000], n_bins=2100)
    np.testing.assert_allclose(part.values, full.values[:, :2100], rtol=0, atol=1e-14)


def test_cosine_peaks_at_bin_400():
    g = tfa.stft(tone(10.0), TAU, K=K, frames=[2000, 3000, 4000], n_bins=K // 2)
    assert np.all(np.argmax(np.abs(g.values), axis=1) == 400)


def test_zero_signal_gives_zero_grid_and_spectrum():
    x = np.zeros(3000)
    vh = tfa.stft(x, TAU, K=K, frames=[1500])
    vd = tfa.stft(x, TAU, K=K, frames=[1500], derivative=True)
    assert not np.any(vh.values)
    assert np.all(np.isnan(tfa.reassign_freq(vh, vd)))
    assert not np.any(tfa.synchrosqueeze(vh, vd).values)


def test_delta_impulse_is_flat_window_value():
    x = np.zeros(2000)
    x[1000] = 1.0
    for j in (900, 1000, 1300):
        g = tfa.stft(x, TAU, K=K, frames=[j])
        expect = np.exp(-0.5 * ((1000 - j) / 1001.0) ** 2) / 1001.0
        np.testing.assert_allclose(np.abs(g.values[0]), expect, rtol=1e-12)


def test_stft_rejects_small_k_and_nonfinite():
    with pytest.raises(DataError):
        tfa.stft(np.zeros(100), TAU, K=512)
    with pytest.raises(DataError):
        tfa.stft(np.array([0.0, np.nan]), TAU)


def test_stft_is_linear(rng):
    x, y = rng.normal(size=1200), rng.normal(size=1200)
    a, b = 1.7, -0.3
    fr = [10, 600, 1100]
    lhs = tfa.stft(a * x + b * y, TAU, K=1024, frames=fr).values
    rhs = a * tfa.stft(x, TAU, K=1024, frames=fr).values + b * tfa.stft(y, TAU, K=1024, frames=fr).values
    np.testing.assert_allclose(lhs, rhs, rtol=0, atol=1e-14)


def test_reassignment_of_tone_within_005_hz():
    x = tone(10.0)
    vh = tfa.stft(x, TAU, K=K, frames=[3000], n_bins=K // 2)
    vd = tfa.stft(x, TAU, K=K, frames=[3000], n_bins=K // 2, derivative=True)
    kh = tfa.reassign_freq(vh, vd)[0]
    power = np.abs(vh.values[0]) ** 2
    energetic = power > 0.5 * power.max()
    freqs = kh[energetic] / (TAU * K)
    assert np.all(np.abs(freqs - 10.0) < 0.05)


def test_two_tones_reassign_to_own_frequency():
    x = tone(5.0) + tone(20.0)
    vh = tfa.stft(x, TAU, K=K, frames=[3000], n_bins=K // 2)
    vd = tfa.stft(x, TAU, K=K, frames=[3000], n_bins=K // 2, derivative=True)
    kh = tfa.reassign_freq(vh, vd)[0] / (TAU * K)
    power = np.abs(vh.values[0]) ** 2
    for f in (5.0, 20.0):
        near = (np.abs(vh.freqs - f) < 0.1) & (power > 0.5 * power.max())
        assert near.any()
        assert np.all(np.abs(kh[near] - f) < 0.05)


def test_reassign_shape_mismatch():
    a = tfa.stft(np.ones(50), TAU, K=K, frames=[1, 2])
    b = tfa.stft(np.ones(50), TAU, K=K, frames=[1])
    with pytest.raises(DataError):
        tfa.reassign_freq(a, b)


def test_sst_matches_direct_oracle(rng):
    x = rng.normal(size=2000)
    vh = tfa.stft(x, TAU, K=K, frames=[1000])
    vd = tfa.stft(x, TAU, K=K, frames=[1000], derivative=True)
    np.testing.assert_allclose(tfa.synchrosqueeze(vh, vd).values[0], direct_sst(x, 1000, K),
                               rtol=1e-9, atol=1e-18)


def test_tone_mass_near_bin_400_matches_frozen_oracle():
    x = tone(10.0)
    S_oracle = direct_sst(x, 3000, K)[: K // 2 + 1]
    frac_oracle = S_oracle[398:403].sum() / S_oracle.sum()
    assert frac_oracle == pytest.approx(TONE_MASS_PM2, abs=1e-9)
    vh = tfa.stft(x, TAU, K=K, frames=[3000])
    vd = tfa.stft(x, TAU, K=K, frames=[3000], derivative=True)
    S = tfa.synchrosqueeze(vh, vd).values[0][: K // 2 + 1]
    assert S[398:403].sum() / S.sum() == pytest.approx(TONE_MASS_PM2, abs=1e-9)


@pytest.mark.parametrize("f", [1.0, 2.5, 7.3, 10.0, 13.7, 22.2, 31.0, 45.0])
def test_tone_centroid_within_01_hz(f):
    S = tfa.sst_matrix(tone(f), TAU, frames=[2500, 3000, 3500])
    fr = S.freqs
    cent = (S.values * fr).sum(axis=1) / S.values.sum(axis=1)
    assert np.all(np.abs(cent - f) < 0.1)


def test_sst_mass_bound_equality_when_nothing_discarded(rng):
    x = rng.normal(size=1500)
    vh = tfa.stft(x, TAU, K=K, frames=[700])
    vd = tfa.stft(x, TAU, K=K, frames=[700], derivative=True)
    S = tfa.synchrosqueeze(vh, vd).values
    total = (np.abs(vh.values) ** 2).sum()
    kh = tfa.reassign_freq(vh, vd)
    b = np.floor(kh + 0.5)
    if np.all(np.isfinite(b) & (b >= 0) & (b < K)):
        assert S.sum() == pytest.approx(total, rel=1e-12)
    else:
        assert S.sum() <= total * (1 + 1e-12)


@settings(max_examples=50, deadline=None)
@given(st.integers(0, 2**32 - 1))
def test_sst_mass_bound_random_signals(seed):
    r = np.random.default_rng(seed)
    x = r.normal(size=1200) * r.uniform(0.1, 10)
    vh = tfa.stft(x, TAU, K=K, frames=[200, 600, 1000])
    vd = tfa.stft(x, TAU, K=K, frames=[200, 600, 1000], derivative=True)
    S = tfa.synchrosqueeze(vh, vd).values
    assert np.all(S >= 0)
    assert S.sum() <= (np.abs(vh.values) ** 2).sum() * (1 + 1e-12)


def test_two_tone_band_features():
    x = tone(2.0, 3000) + tone(10.0, 3000)
    u = tfa.epoch_features(x, TAU, [0], 3000)[0]
    assert u[1] == pytest.approx(0.5, abs=0.05)
    assert u[3] == pytest.approx(0.5, abs=0.05)
    assert np.all(u[[2, 4, 5, 6, 7, 8, 9]] < 0.05)


def test_band_features_match_direct_matrix_sum():
    x = tone(2.0, 3000) + tone(10.0, 3000)
    frames = np.arange(0, 3000, 100)
    S = tfa.sst_matrix(x, TAU, frames=frames)
    u = tfa.epoch_features(x, TAU, [0], 3000, hop=100)[0]
    fr = S.freqs
    tot = S.values[:, (fr >= 0.5) & (fr <= 49)].sum()
    assert u[0] == pytest.approx(tot / frames.size, rel=1e-12)
    assert u[1] == pytest.approx(S.values[:, (fr >= 0.5) & (fr < 4)].sum() / tot, rel=1e-12)
    assert u[3] == pytest.approx(S.values[:, (fr >= 7) & (fr < 12)].sum() / tot, rel=1e-12)


def test_band_features_from_spectrum_object():
    x = tone(10.0, 3000)
    S = tfa.sst_matrix(x, TAU, frames=np.arange(0, 3000, 50))
    u = tfa.band_features(S)
    np.testing.assert_allclose(u, tfa.epoch_features(x, TAU, [0], 3000, hop=50)[0], rtol=1e-12)


def test_single_tone_alpha_ratio():
    u = tfa.epoch_features(tone(10.0, 3000), TAU, [0], 3000, hop=10)[0]
    assert u[3] >= 0.9
    assert u[1:].sum() <= 1 + 1e-12


def test_silent_epoch_raises():
    with pytest.raises(SilentEpochError, match="zero in-band"):
        tfa.epoch_features(np.zeros(3000), TAU, [0], 3000, hop=30)


def test_noise_robustness_of_band_ratios():
    r = np.random.default_rng(7)
    x = tone(2.0, 3000) + tone(10.0, 3000)
    noise = r.normal(size=3000) * np.sqrt(np.mean(x**2) / 10.0)
    clean = tfa.epoch_features(x, TAU, [0], 3000, hop=10)[0]
    noisy = tfa.epoch_features(x + noise, TAU, [0], 3000, hop=10)[0]
    assert np.max(np.abs(clean[1:] - noisy[1:])) < 0.1
    # the energy term absorbs the added noise power (about 10%)
    assert noisy[0] / clean[0] == pytest.approx(1.1, abs=0.05)


def test_hop_and_block_do_not_change_dense_result(rng):
    x = rng.normal(size=4000)
    a = tfa.epoch_features(x, TAU, [0, 1000], 3000, hop=7, block=64)
    b = tfa.epoch_features(x, TAU, [0, 1000], 3000, hop=7, block=1000)
    np.testing.assert_allclose(a, b, rtol=1e-12)


def test_epoch_beyond_signal_rejected():
    with pytest.raises(DataError):
        tfa.epoch_features(np.ones(3000), TAU, [100], 3000)
