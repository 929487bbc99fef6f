import math

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st
from hypothesis.extra.numpy import arrays

import oracles
from printleak.features import (
    DegenerateAxisError,
    MfccConfig,
    SilentFrameError,
    SpectrumFrame,
    build_feature_vector,
    feature_matrix,
    feature_names,
    gaussian_kernel,
    gaussian_smooth,
    magnetic_stats,
    mfcc,
    rms,
    short_time_energy,
    spectral_bandwidth,
    spectral_centroid,
    spectrum,
    zcr,
)
from printleak.ingest import Frame

RATE = 8000.0
finite = st.floats(-1e3, 1e3, allow_nan=False, allow_infinity=False)
frame_arrays = arrays(np.float64, st.integers(2, 300), elements=finite)


# --- time domain ---------------------------------------------------------


def test_zcr_examples():
    assert zcr([1, 1, 1, 1]) == 0
    assert zcr([1, -1, 1, -1]) == 1.0
    with pytest.raises(ValueError):
        zcr([1.0])


def test_ste_and_rms_examples():
    assert short_time_energy(np.zeros(8)) == 0
    assert short_time_energy([3, 4]) == 25
    assert rms(np.full(5, 3.0)) == pytest.approx(3.0, rel=1e-15)
    assert rms(np.zeros(4)) == 0
    assert rms([3, 4]) == pytest.approx(math.sqrt(12.5), rel=1e-15)


@given(frame_arrays)
def test_time_domain_matches_loops(x):
    assert zcr(x) == oracles.zcr(x)
    ref = oracles.ste(x)
    assert abs(short_time_energy(x) - ref) <= 1e-9 * max(ref, 1e-300)


@given(frame_arrays)
def test_rms_squared_is_energy_per_sample(x):
    e = short_time_energy(x)
    assert abs(rms(x) ** 2 * len(x) - e) <= 1e-9 * max(e, 1e-300)
    assert 0.0 <= zcr(x) <= 1.0


# --- spectral ------------------------------------------------------------


def test_tone_peaks_at_its_bin():
    t = np.arange(800) / RATE
    sf = spectrum(np.sin(2 * np.pi * 1000 * t), RATE)
    assert sf.freqs[np.argmax(sf.magnitudes)] == pytest.approx(1000.0)
    assert abs(spectral_centroid(sf) - 1000.0) <= RATE / 800


def test_dc_frame_energy_in_bin_zero():
    sf = spectrum(np.ones(800), RATE)
    # the Hann window leaks DC into bin 1 only
    assert np.argmax(sf.magnitudes) == 0
    assert np.all(sf.magnitudes[2:] < 1e-9 * sf.magnitudes[0])


def test_parseval_on_windowed_frame():
    rng = np.random.default_rng(3)
    x = rng.standard_normal(800)
    n = len(x)
    w = 0.5 - 0.5 * np.cos(2 * np.pi * np.arange(n) / n)
    mags = spectrum(x, RATE).magnitudes
    full = mags**2
    total = full[0] + full[-1] + 2 * np.sum(full[1:-1])  # n even: mirror the interior bins
    assert total / n == pytest.approx(np.sum((x * w) ** 2), rel=1e-12)


def test_centroid_and_bandwidth_closed_forms():
    freqs = np.arange(5) * 100.0
    single = SpectrumFrame(freqs, np.array([0, 0, 3.0, 0, 0]))
    assert spectral_centroid(single) == 200.0
    assert spectral_bandwidth(single) == 0.0
    flat = SpectrumFrame(freqs, np.ones(5))
    assert spectral_centroid(flat) == pytest.approx(np.mean(freqs))
    pair = SpectrumFrame(freqs, np.array([0, 2.0, 0, 2.0, 0]))
    assert spectral_bandwidth(pair) == pytest.approx((300 - 100) / 2)


def test_silent_frame_rejected():
    sf = spectrum(np.zeros(800), RATE)
    with pytest.raises(SilentFrameError, match="silent"):
        spectral_centroid(sf)
    with pytest.raises(SilentFrameError):
        spectral_bandwidth(sf)


@given(arrays(np.float64, st.integers(16, 256), elements=st.floats(-10, 10)))
def test_spectral_stats_stay_in_band(x):
    sf = spectrum(x, RATE)
    if np.sum(sf.magnitudes) <= 1e-9:
        return
    assert -1e-9 <= spectral_centroid(sf) <= RATE / 2 + 1e-9
    assert -1e-9 <= spectral_bandwidth(sf) <= RATE / 2 + 1e-9


def test_spectral_stats_match_dft_oracle():
    for x, _ in oracles.random_frames(11, count=20):
        freqs, mags = oracles.dft_magnitudes(x, RATE)
        sf = spectrum(x, RATE)
        assert oracles.rel_err(sf.magnitudes, mags, scale=1e-9 * mags.max()) <= 1e-6
        assert oracles.rel_err(spectral_centroid(sf), oracles.centroid(freqs, mags)) <= 1e-9
        assert oracles.rel_err(spectral_bandwidth(sf), oracles.bandwidth(freqs, mags)) <= 1e-9


# --- smoothing -----------------------------------------------------------


def test_kernel_normalized_with_radius_three_sigma():
    w = gaussian_kernel(1.5)
    assert len(w) == 2 * math.ceil(4.5) + 1
    assert math.isclose(w.sum(), 1.0, rel_tol=1e-15)
    with pytest.raises(ValueError):
        gaussian_kernel(0.0)


def test_smoothing_examples():
    assert np.allclose(gaussian_smooth(np.full(20, 4.2), 2.0), 4.2, rtol=1e-15)
    impulse = np.zeros(21)
    impulse[10] = 1.0
    w = gaussian_kernel(2.0)
    out = gaussian_smooth(impulse, 2.0)
    assert np.allclose(out[10 - len(w) // 2 : 11 + len(w) // 2], w, rtol=0, atol=1e-15)
    assert np.all(out[: 10 - len(w) // 2] == 0)
    series = np.random.default_rng(5).standard_normal(40)
    assert np.allclose(gaussian_smooth(series, 1.3), oracles.gaussian_smooth(series, 1.3), rtol=0, atol=1e-12)


@given(arrays(np.float64, st.integers(1, 80), elements=st.floats(-1e3, 1e3)), st.floats(0.3, 6.0))
def test_smoothing_preserves_length_and_mean(series, sigma):
    out = gaussian_smooth(series, sigma)
    assert out.shape == series.shape
    scale = max(np.abs(series).max(), 1e-300)
    assert abs(out.mean() - series.mean()) <= 1e-9 * scale


def test_smoothing_along_matrix_axis():
    X = np.random.default_rng(2).standard_normal((30, 4))
    out = gaussian_smooth(X, 2.0, axis=0)
    for j in range(4):
        assert np.allclose(out[:, j], gaussian_smooth(X[:, j], 2.0), atol=1e-15)


# --- MFCC ----------------------------------------------------------------


def test_mfcc_silent_frame_is_flat_cepstrum():
    c = mfcc(np.zeros(800), RATE)
    assert np.allclose(c, 0.0, atol=1e-9 * 26 * abs(math.log(1e-10)))


def test_mfcc_deterministic_and_matches_oracle():
    t = np.arange(800) / RATE
    x = np.sin(2 * np.pi * 700 * t) + 0.1 * np.sin(2 * np.pi * 2100 * t)
    a, b = mfcc(x, RATE), mfcc(x.copy(), RATE)
    assert np.array_equal(a, b)
    ref = oracles.mfcc(x, RATE)
    assert oracles.rel_err(a, ref, scale=1e-3 * np.abs(ref).max()) <= 1e-9


def test_mfcc_config_errors():
    with pytest.raises(ValueError, match="Nyquist"):
        mfcc(np.ones(800), RATE, MfccConfig(fmax=5000.0))
    with pytest.raises(ValueError):
        mfcc(np.ones(800), RATE, MfccConfig(n_mels=10, n_coeffs=13))


# --- magnetometer --------------------------------------------------------


def test_magnetic_closed_forms():
    m = np.array([[-1.0, -1, -1], [0, 0, 0], [1, 1, 1]]) + np.array([0.0, 5.0, -3.0])
    s = magnetic_stats(m).reshape(3, 4)
    assert np.allclose(s[:, 0], [0, 5, -3])
    assert np.allclose(s[:, 1], math.sqrt(2 / 3))
    assert np.all(s[:, 2] == 0.0)


def test_degenerate_axis():
    m = np.column_stack([np.arange(5.0), np.full(5, 2.0), np.arange(5.0) ** 2])
    with pytest.raises(DegenerateAxisError, match="degenerate"):
        magnetic_stats(m)
    with pytest.raises(ValueError):
        magnetic_stats(np.ones((1, 3)))


@given(arrays(np.float64, st.tuples(st.integers(1, 20), st.just(3)), elements=st.floats(-50, 50)))
def test_mirror_symmetric_samples_have_zero_skew(half):
    m = np.concatenate([half, -half])
    try:
        s = magnetic_stats(m).reshape(3, 4)
    except DegenerateAxisError:
        return
    assert np.all(s[:, 2] == 0.0)
    assert np.all(s[:, 1] >= 0)


def test_gaussian_kurtosis_near_zero():
    m = np.random.default_rng(9).standard_normal((100_000, 3))
    kurt = magnetic_stats(m).reshape(3, 4)[:, 3]
    assert np.all(np.abs(kurt) <= 0.2)


def test_magnetic_matches_scipy():
    for _, mag in oracles.random_frames(12, count=30):
        ref = oracles.magnetic_stats(mag)
        assert oracles.rel_err(magnetic_stats(mag), ref, scale=1e-12) <= 1e-9


# --- assembly ------------------------------------------------------------


def test_zero_frame_gives_zero_vector_with_flag():
    fr = Frame(np.zeros(800), np.zeros((10, 3)), RATE)
    fv = build_feature_vector(fr)
    assert len(fv) == 5 + 13 + 12
    assert np.all(fv.as_array() == 0)
    assert fv.quality != 0


def test_feature_matrix_rows_match_single_frames():
    frames = oracles.random_frames(4, count=6)
    acoustic = np.stack([x for x, _ in frames])
    magnetic = np.stack([m for _, m in frames])
    X, quality = feature_matrix(acoustic, magnetic, RATE)
    assert X.shape == (6, len(feature_names()))
    assert np.all(quality == 0)
    for row, (x, m) in zip(X, frames):
        fv = build_feature_vector(Frame(x, m, RATE))
        assert np.allclose(fv.as_array(), row, rtol=1e-12, atol=1e-12)


def test_simulated_x_frame_centroid_near_tone():
    from printleak.gcode import build_toolpath
    from printleak.ingest import align_channels
    from printleak.simulate import SimConfig, simulate_emissions

    cfg = SimConfig().zero_noise()
    path = build_toolpath((40.0, 20.0, 0.2), [((30.0, 20.0, 0.2), 600.0, False)])
    trace = simulate_emissions(path, cfg)
    fv = build_feature_vector(align_channels(trace)[3])
    tone = cfg.tone_map[("X", "XLeft", "Slow")]
    assert np.all(np.isfinite(fv.as_array()))
    # the second harmonic pulls the centroid up, but it stays on the fundamental's side
    assert tone * 0.9 <= fv.centroid <= tone * 1.5
