import numpy as np
import pytest
from hypothesis import given, settings
import hypothesis.strategies as st

from enhasr.autodiff import ParameterStore, Tensor, grad_check, tmean, tsum
from enhasr.dsp import (
    FRAME_LENGTH,
    FRAME_SHIFT,
    FeatureMatrix,
    LOG_FLOOR,
    N_FFT,
    WaveformBuffer,
    frame_signal,
    frame_tensor,
    hann_window,
    hz_to_mel,
    log_mel_fbank,
    log_mel_fbank_t,
    mean_variance_normalize_t,
    mel_filter_centers,
    mel_filterbank_matrix,
    mel_to_hz,
    power_spectrum,
)


def naive_dft_power(frame):
    """O(N^2) direct DFT, the independent oracle for power_spectrum."""
    n = len(frame)
    out = np.zeros(n // 2 + 1)
    for k in range(n // 2 + 1):
        re = sum(frame[t] * np.cos(2 * np.pi * k * t / n) for t in range(n))
        im = sum(-frame[t] * np.sin(2 * np.pi * k * t / n) for t in range(n))
        out[k] = re * re + im * im
    return out


def wave_of(samples):
    return WaveformBuffer(np.asarray(samples, dtype=np.float64))


# ---------------------------------------------------------------------------
# framing


def test_frame_count_formula():
    w = wave_of(np.ones(560))
    assert frame_signal(w, 400, 160).shape == (2, 400)


def test_hann_zeroes_first_sample_of_every_frame():
    rng = np.random.default_rng(0)
    w = wave_of(rng.normal(size=1200))
    frames = frame_signal(w, 400, 160)
    assert np.all(frames[:, 0] == 0.0)


def test_frame_windows_ramp_matches_hand_oracle():
    ramp = np.arange(800, dtype=np.float64) / 800.0
    frames = frame_signal(wave_of(ramp), 400, 160)
    win = hann_window(400)
    want = win * ramp[160:560]  # frame index 1 starts at one shift
    np.testing.assert_allclose(frames[1], want, rtol=0, atol=1e-15)


def test_too_short_wave_rejected():
    with pytest.raises(ValueError, match="shorter than one frame"):
        frame_signal(wave_of(np.ones(100)), 400, 160)


def test_rectangular_window_not_offered():
    with pytest.raises(ValueError, match="window"):
        frame_signal(wave_of(np.ones(500)), 400, 160, window="rect")


# ---------------------------------------------------------------------------
# power spectrum


def test_zero_frame_zero_spectrum():
    assert np.all(power_spectrum(np.zeros(512)) == 0.0)


def test_pure_cosine_concentrates_at_bin():
    n, k = 512, 37
    t = np.arange(n)
    frame = np.cos(2 * np.pi * k * t / n)
    p = power_spectrum(frame)
    peak = p[k]
    off = np.delete(p, k)
    assert off.max() < 1e-10 * peak


def test_power_spectrum_matches_naive_dft():
    rng = np.random.default_rng(1)
    frame = rng.normal(size=8)
    np.testing.assert_allclose(power_spectrum(frame), naive_dft_power(frame),
                               rtol=1e-9, atol=1e-12)


def test_power_spectrum_rejects_non_power_of_two():
    with pytest.raises(ValueError, match="power of two"):
        power_spectrum(np.zeros(500))


@given(st.integers(min_value=0, max_value=2**31 - 1))
@settings(max_examples=25, deadline=None)
def test_parseval_property(seed):
    rng = np.random.default_rng(seed)
    x = rng.normal(size=64)
    p = power_spectrum(x)
    # symmetric bins appear twice except DC and Nyquist
    total = p[0] + p[-1] + 2 * p[1:-1].sum()
    time_energy = (x ** 2).sum()
    assert abs(time_energy - total / 64) <= 1e-6 * max(1.0, time_energy)


# ---------------------------------------------------------------------------
# mel filterbank


def test_mel_rows_unimodal_and_zero_at_range_endpoints():
    mat = mel_filterbank_matrix(8, 257)
    for row in mat:
        assert row.min() >= 0.0
        peak = row.argmax()
        d = np.diff(row)
        assert np.all(d[:peak] >= 0) and np.all(d[peak:] <= 0)
    assert np.all(mat[:, 0] == 0.0)
    assert np.all(mat[:, -1] == 0.0)


def test_mel_centers_strictly_increasing():
    centers = mel_filter_centers(20)
    assert np.all(np.diff(centers) > 0)


def test_mel_weight_matches_scalar_formula_oracle():
    # hand-computed from the 2595*log10(1 + f/700) triangle geometry:
    # filter 2 of 4 (0-8 kHz, 257 bins) evaluated at bin 100 (3125 Hz)
    mat = mel_filterbank_matrix(4, 257, 16000, 0.0, 8000.0)
    assert abs(mat[2, 100] - 0.68763020862985835) < 1e-9
    assert abs(mat[2, 50] - 0.27400830341034377) < 1e-9


def test_mel_invalid_range_rejected():
    with pytest.raises(ValueError, match="frequency range"):
        mel_filterbank_matrix(4, 257, 16000, 4000.0, 1000.0)
    with pytest.raises(ValueError, match="num_filters"):
        mel_filterbank_matrix(1, 257)


def test_mel_scale_round_trip():
    f = np.array([0.0, 440.0, 8000.0])
    np.testing.assert_allclose(mel_to_hz(hz_to_mel(f)), f, atol=1e-9)


# ---------------------------------------------------------------------------
# log-mel features


def test_silence_gives_log_floor():
    w = wave_of(np.zeros(1600))
    feats = log_mel_fbank(w, 10)
    np.testing.assert_allclose(feats.values, np.log(LOG_FLOOR))


def test_feature_frame_count_matches_framing():
    w = wave_of(np.random.default_rng(2).normal(size=4000))
    feats = log_mel_fbank(w)
    assert feats.frames == frame_signal(w).shape[0]
    assert feats.dim == 80
    assert feats.frame_shift == FRAME_SHIFT / 16000


def test_tone_excites_the_filter_containing_it():
    t = np.arange(4000) / 16000.0
    w = wave_of(0.5 * np.sin(2 * np.pi * 440.0 * t))
    feats = log_mel_fbank(w)
    mean_per_filter = feats.values.mean(axis=0)
    # 440 Hz falls in filter 15's triangle for the 80-filter layout (mel-center oracle)
    centers = mel_filter_centers(80)
    expect = int(np.argmin(np.abs(centers - 440.0)))
    assert abs(int(mean_per_filter.argmax()) - expect) <= 1
    assert int(mean_per_filter.argmax()) == 15


def test_features_pure_function_bitwise():
    rng = np.random.default_rng(3)
    x = rng.normal(size=3000)
    a = log_mel_fbank(wave_of(x)).values
    b = log_mel_fbank(wave_of(x.copy())).values
    assert a.tobytes() == b.tobytes()


def test_features_finite_for_finite_input():
    rng = np.random.default_rng(4)
    x = np.clip(rng.normal(size=2000) * 1e-6, -1, 1)
    assert np.all(np.isfinite(log_mel_fbank(wave_of(x)).values))


# ---------------------------------------------------------------------------
# differentiable mirror


def test_tensor_route_matches_public_route():
    rng = np.random.default_rng(5)
    x = rng.normal(size=2000)
    public = log_mel_fbank(wave_of(x), 23).values
    mirrored = log_mel_fbank_t(Tensor(x.astype(np.float64)), 23).data
    np.testing.assert_allclose(mirrored, public, rtol=1e-9, atol=1e-9)


def test_frame_tensor_grad():
    rng = np.random.default_rng(6)
    s = ParameterStore()
    s.add("se.x", rng.normal(size=64))

    def f(store):
        from enhasr.autodiff import square
        return tsum(square(frame_tensor(store["se.x"], 16, 8)))

    assert grad_check(f, s, rng=rng).passed


def test_log_mel_fbank_t_grad():
    rng = np.random.default_rng(7)
    s = ParameterStore()
    s.add("se.x", rng.normal(size=600))

    def f(store):
        return tmean(log_mel_fbank_t(store["se.x"], 8))

    report = grad_check(f, s, rng=rng, max_coords=6)
    assert report.passed, report


def test_mvn_zero_mean_unit_var():
    rng = np.random.default_rng(8)
    x = Tensor(rng.normal(2.0, 3.0, size=(50, 4)))
    y = mean_variance_normalize_t(x).data
    np.testing.assert_allclose(y.mean(axis=0), 0.0, atol=1e-7)
    np.testing.assert_allclose(y.var(axis=0), 1.0, atol=1e-3)


def test_waveform_invariants():
    with pytest.raises(ValueError, match="non-empty"):
        WaveformBuffer(np.array([]))
    with pytest.raises(ValueError, match="finite"):
        WaveformBuffer(np.array([np.nan]))
    with pytest.raises(ValueError, match="sample_rate"):
        WaveformBuffer(np.ones(10), sample_rate=44100)


def test_feature_matrix_invariants():
    with pytest.raises(ValueError, match="frames x dim"):
        FeatureMatrix(np.ones(5), frame_shift=0.01)
    with pytest.raises(ValueError, match="finite"):
        FeatureMatrix(np.full((2, 2), np.inf), frame_shift=0.01)
