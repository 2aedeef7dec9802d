import numpy as np
import pytest

from enhasr.autodiff import ParameterStore, Tensor, grad_check, tmean
from enhasr.corpus import synth_utterance
from enhasr.dsp import WaveformBuffer, log_mel_fbank
from enhasr.features import (
    PROJECTED_DIM,
    SSLR_DIM,
    SSLR_HOP,
    SSLR_LAYERS,
    FeatureExtractorKind,
    SpecAugmentPolicy,
    extract_features,
    extract_features_t,
    init_projection_params,
    init_sslr_params,
    min_wave_length,
    project_features,
    project_features_t,
    spec_augment,
    spec_augment_t,
    specaug_mask,
    sslr_stub_t,
)
from enhasr.dsp import FeatureMatrix


def sslr_store(seed=5):
    s = ParameterStore()
    init_sslr_params(s, seed)
    return s


def test_stub_strides_compose_to_20ms_hop():
    assert int(np.prod([s for _c, _k, s in SSLR_LAYERS])) == SSLR_HOP == 320


def test_stub_output_dim_is_1024():
    s = sslr_store()
    wave = synth_utterance("ab", seed=0)
    kind = FeatureExtractorKind(kind="sslr_stub", seed=5)
    feats = extract_features(wave, kind, s)
    assert feats.dim == SSLR_DIM == 1024
    assert feats.frame_shift == 0.02


def test_stub_deterministic_given_seed():
    wave = synth_utterance("abc", seed=1)
    kind = FeatureExtractorKind(kind="sslr_stub", seed=9)
    a = extract_features(wave, kind, sslr_store(9)).values
    b = extract_features(wave, kind, sslr_store(9)).values
    assert a.tobytes() == b.tobytes()
    c = extract_features(wave, kind, sslr_store(10)).values
    assert a.tobytes() != c.tobytes()


def test_stub_params_live_frozen_in_sslr_partition():
    s = sslr_store()
    assert all(n.startswith("sslr.") for n in s.names())
    assert s.frozen["sslr"]
    assert all(not s[n].requires_grad for n in s.names())


def test_fbank_path_delegates_exactly():
    wave = synth_utterance("fade", seed=2)
    kind = FeatureExtractorKind(kind="fbank", num_filters=40)
    got = extract_features(wave, kind, ParameterStore())
    want = log_mel_fbank(wave, 40)
    assert got.values.tobytes() == want.values.tobytes()
    assert got.frame_shift == want.frame_shift


def test_unknown_kind_rejected():
    with pytest.raises(ValueError, match="unknown feature kind"):
        FeatureExtractorKind(kind="mfcc")


def test_gradients_flow_through_frozen_stub():
    s = sslr_store()
    s.add("se.wave", 0.1 * np.random.default_rng(3).normal(size=min_wave_length(
        FeatureExtractorKind(kind="sslr_stub"))))

    def f(store):
        return tmean(sslr_stub_t(store["se.wave"], store))

    report = grad_check(f, s, names=["se.wave"], rng=np.random.default_rng(4))
    assert report.passed, report


# ---------------------------------------------------------------------------
# projection


def test_projection_shape_and_partition():
    s = sslr_store()
    init_projection_params(s, np.random.default_rng(0))
    assert s["asr.proj.weight"].data.shape == (PROJECTED_DIM, SSLR_DIM)
    feats = FeatureMatrix(np.random.default_rng(1).normal(size=(7, 1024)), 0.02)
    out = project_features(feats, s)
    assert out.values.shape == (7, 128)
    assert out.frame_shift == 0.02


def test_projection_zero_weights_zero_output():
    s = sslr_store()
    init_projection_params(s, np.random.default_rng(0))
    s["asr.proj.weight"].data[:] = 0.0
    s["asr.proj.bias"].data[:] = 0.0
    feats = FeatureMatrix(np.ones((3, 1024)), 0.02)
    assert np.all(project_features(feats, s).values == 0.0)


def test_projection_hand_oracle_2_to_1():
    s = ParameterStore()
    s.add("asr.proj.weight", np.array([[2.0, -3.0]]))
    s.add("asr.proj.bias", np.array([0.5]))
    out = project_features_t(Tensor(np.array([[4.0, 1.0]], dtype=np.float32)), s)
    assert abs(float(out.data[0, 0]) - (2.0 * 4.0 - 3.0 * 1.0 + 0.5)) < 1e-6


def test_projection_dim_mismatch_rejected():
    s = sslr_store()
    init_projection_params(s, np.random.default_rng(0))
    with pytest.raises(ValueError, match="expects dim 1024"):
        project_features(FeatureMatrix(np.ones((3, 80)), 0.01), s)


# ---------------------------------------------------------------------------
# SpecAugment


def featmat(frames=10, dim=4, seed=0):
    return FeatureMatrix(np.random.default_rng(seed).normal(size=(frames, dim)), 0.01)


def test_specaug_zero_widths_identity():
    f = featmat()
    policy = SpecAugmentPolicy(num_time_masks=2, max_time_width=0,
                               num_freq_masks=2, max_freq_width=0)
    out = spec_augment(f, policy, rng_seed=1)
    assert out.values.tobytes() == f.values.tobytes()


def test_specaug_disabled_identity():
    f = featmat()
    policy = SpecAugmentPolicy(enabled=False)
    assert spec_augment(f, policy, rng_seed=1).values.tobytes() == f.values.tobytes()


def test_specaug_masked_cell_union_bound():
    f = featmat(frames=30, dim=12, seed=2)
    policy = SpecAugmentPolicy(num_time_masks=2, max_time_width=3,
                               num_freq_masks=2, max_freq_width=2)
    out = spec_augment(f, policy, rng_seed=3)
    masked = int((out.values != f.values).sum())
    assert masked <= 2 * 3 * 12 + 2 * 2 * 30


def test_specaug_seed_7_reproducible():
    f = featmat(frames=10, dim=4, seed=4)
    a = spec_augment(f, SpecAugmentPolicy(1, 3, 1, 2), rng_seed=7).values
    b = spec_augment(f, SpecAugmentPolicy(1, 3, 1, 2), rng_seed=7).values
    assert a.tobytes() == b.tobytes()


def test_specaug_unmasked_cells_bitwise_unchanged():
    f = featmat(frames=20, dim=8, seed=5)
    out = spec_augment(f, SpecAugmentPolicy(2, 4, 2, 3), rng_seed=11)
    keep = specaug_mask((20, 8), SpecAugmentPolicy(2, 4, 2, 3), 11)
    same = out.values[keep == 1.0]
    orig = f.values[keep == 1.0]
    assert same.tobytes() == orig.tobytes()
    assert np.all(out.values[keep == 0.0] == 0.0)


def test_specaug_width_exceeding_extent_rejected():
    f = featmat(frames=5, dim=4)
    with pytest.raises(ValueError, match="exceeds"):
        spec_augment(f, SpecAugmentPolicy(1, 9, 0, 0), rng_seed=0)


def test_specaug_tensor_route_matches_array_route():
    f = featmat(frames=12, dim=6, seed=6)
    policy = SpecAugmentPolicy(2, 3, 1, 2)
    a = spec_augment(f, policy, rng_seed=13).values
    b = spec_augment_t(Tensor(f.values), policy, rng_seed=13).data
    np.testing.assert_array_equal(a, b)
