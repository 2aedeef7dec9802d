"""Feature stage: pluggable extractors (log-mel frontend or a frozen learned
stub), per-utterance normalization, the wide-to-128 projection, and
time/frequency masking augmentation.

The learned-representation stub mimics the interface of a large pre-trained
speech model: 1024-dim output at a 20 ms hop, parameters seeded once and
never updated.  Only the interface matters here; the weights are random.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import autodiff as ad
from . import dsp
from .autodiff import ParameterStore, Tensor
from .dsp import FeatureMatrix, WaveformBuffer

SSLR_DIM = 1024
SSLR_HOP = 320            # samples: 20 ms at 16 kHz
PROJECTED_DIM = 128
FBANK_DIM = dsp.NUM_FILTERS

# (out_channels, kernel, stride); strides compose to 320 samples
SSLR_LAYERS = ((64, 10, 5), (64, 8, 4), (128, 8, 4), (128, 4, 2), (SSLR_DIM, 4, 2))


@dataclass
class FeatureExtractorKind:
    kind: str = "fbank"           # fbank | sslr_stub
    seed: int = 0                 # sslr_stub only
    num_filters: int = FBANK_DIM  # fbank only

    def __post_init__(self):
        if self.kind not in ("fbank", "sslr_stub"):
            raise ValueError(f"unknown feature kind {self.kind!r}")

    @property
    def output_dim(self) -> int:
        return SSLR_DIM if self.kind == "sslr_stub" else self.num_filters

    @property
    def frame_shift(self) -> float:
        return SSLR_HOP / dsp.SAMPLE_RATE if self.kind == "sslr_stub" else \
            dsp.FRAME_SHIFT / dsp.SAMPLE_RATE

    @property
    def needs_projection(self) -> bool:
        return self.kind == "sslr_stub"


@dataclass
class SpecAugmentPolicy:
    num_time_masks: int = 2
    max_time_width: int = 20
    num_freq_masks: int = 2
    max_freq_width: int = 10
    enabled: bool = True

    def __post_init__(self):
        if min(self.num_time_masks, self.max_time_width,
               self.num_freq_masks, self.max_freq_width) < 0:
            raise ValueError("mask counts and widths must be >= 0")


def init_sslr_params(store: ParameterStore, seed: int):
    """Frozen conv-stack weights, fully determined by the seed."""
    rng = np.random.default_rng(np.random.SeedSequence([0x55C1, seed]))
    c_in = 1
    for i, (c_out, k, _s) in enumerate(SSLR_LAYERS):
        w = rng.normal(0.0, np.sqrt(2.0 / (c_in * k)), size=(c_out, c_in, k))
        store.add(f"sslr.conv{i}.weight", w, requires_grad=False)
        c_in = c_out
    store.set_frozen("sslr", True)


def init_projection_params(store: ParameterStore, rng: np.random.Generator,
                           in_dim: int = SSLR_DIM, out_dim: int = PROJECTED_DIM):
    """Trainable wide-to-narrow affine map; lives in the asr partition."""
    store.add("asr.proj.weight", rng.normal(0.0, np.sqrt(1.0 / in_dim), size=(out_dim, in_dim)))
    store.add("asr.proj.bias", np.zeros(out_dim))


def min_wave_length(kind: FeatureExtractorKind) -> int:
    if kind.kind == "fbank":
        return dsp.FRAME_LENGTH
    n = 1
    for _c, k, s in reversed(SSLR_LAYERS):
        n = (n - 1) * s + k
    return n


def sslr_stub_t(wave: Tensor, params: ParameterStore) -> Tensor:
    """Frozen strided conv stack: waveform -> frames x 1024 (20 ms hop)."""
    x = ad.reshape(wave, (1, -1))
    for i, (_c, _k, s) in enumerate(SSLR_LAYERS):
        x = ad.relu(ad.conv1d(x, params[f"sslr.conv{i}.weight"], stride=s))
    return ad.transpose(x)


def extract_features_t(wave: Tensor, kind: FeatureExtractorKind,
                       params: ParameterStore) -> Tensor:
    """Differentiable feature extraction; frames x output_dim."""
    if kind.kind == "fbank":
        return dsp.log_mel_fbank_t(wave, kind.num_filters)
    return sslr_stub_t(wave, params)


def extract_features(wave: WaveformBuffer, kind: FeatureExtractorKind,
                     params: ParameterStore) -> FeatureMatrix:
    """Plain-array feature extraction for one utterance."""
    if kind.kind == "fbank":
        return dsp.log_mel_fbank(wave, kind.num_filters)
    x = Tensor(wave.samples.astype(np.float32))
    values = sslr_stub_t(x, params).data
    return FeatureMatrix(values.astype(np.float64), frame_shift=kind.frame_shift)


def project_features_t(feats: Tensor, params: ParameterStore) -> Tensor:
    """Per-frame affine map to the narrow dim; expects the wide input."""
    w = params["asr.proj.weight"]
    if feats.data.shape[1] != w.data.shape[1]:
        raise ValueError(f"projection expects dim {w.data.shape[1]}, "
                         f"got {feats.data.shape[1]}")
    return feats @ ad.transpose(w) + params["asr.proj.bias"]


def project_features(feats: FeatureMatrix, params: ParameterStore) -> FeatureMatrix:
    out = project_features_t(Tensor(feats.values.astype(np.float32)), params)
    return FeatureMatrix(out.data.astype(np.float64), frame_shift=feats.frame_shift)


# ---------------------------------------------------------------------------
# SpecAugment


def specaug_mask(shape: tuple[int, int], policy: SpecAugmentPolicy,
                 rng_seed: int) -> np.ndarray:
    """The 0/1 keep-mask shared by the array and tensor routes."""
    frames, dim = shape
    if policy.max_time_width > frames:
        raise ValueError(f"time mask width {policy.max_time_width} exceeds {frames} frames")
    if policy.max_freq_width > dim:
        raise ValueError(f"freq mask width {policy.max_freq_width} exceeds {dim} bins")
    rng = np.random.default_rng(np.random.SeedSequence([0x5A6A, rng_seed]))
    keep = np.ones(shape, dtype=np.float64)
    for _ in range(policy.num_time_masks):
        width = int(rng.integers(0, policy.max_time_width + 1))
        if width:
            start = int(rng.integers(0, frames - width + 1))
            keep[start:start + width, :] = 0.0
    for _ in range(policy.num_freq_masks):
        width = int(rng.integers(0, policy.max_freq_width + 1))
        if width:
            start = int(rng.integers(0, dim - width + 1))
            keep[:, start:start + width] = 0.0
    return keep


def spec_augment(feats: FeatureMatrix, policy: SpecAugmentPolicy,
                 rng_seed: int) -> FeatureMatrix:
    """Zero out random time and frequency stripes; unmasked cells untouched."""
    if not policy.enabled:
        return feats
    keep = specaug_mask(feats.values.shape, policy, rng_seed)
    values = feats.values.copy()
    values[keep == 0.0] = 0.0
    return FeatureMatrix(values, frame_shift=feats.frame_shift)


def spec_augment_t(feats: Tensor, policy: SpecAugmentPolicy, rng_seed: int) -> Tensor:
    if not policy.enabled:
        return feats
    keep = specaug_mask(feats.data.shape, policy, rng_seed)
    return feats * Tensor(keep.astype(feats.dtype))
