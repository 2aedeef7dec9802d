"""End-to-end composition: enhancement -> feature extraction -> projection ->
encoder/decoder, with one ParameterStore holding the se / sslr / asr partitions.
"""

from __future__ import annotations

import hashlib
import json
from dataclasses import dataclass, field, replace

import numpy as np

from . import asr as asr_mod
from . import features as feat_mod
from .asr import AsrConfig, RunMode, TokenSequence, Vocabulary
from .autodiff import ParameterStore, Tensor
from .dsp import WaveformBuffer, mean_variance_normalize_t
from .enhance import TasNetConfig, enhance_t, init_se_params, neg_si_snr_t
from .features import (
    FeatureExtractorKind,
    SpecAugmentPolicy,
    extract_features_t,
    init_projection_params,
    init_sslr_params,
    project_features_t,
    spec_augment_t,
)


@dataclass
class PipelineConfig:
    se: TasNetConfig = field(default_factory=TasNetConfig)
    asr: AsrConfig = field(default_factory=AsrConfig)
    feature: FeatureExtractorKind = field(default_factory=FeatureExtractorKind)
    specaug: SpecAugmentPolicy = field(default_factory=SpecAugmentPolicy)
    feature_mvn: bool = True
    vocab_chars: str = "abcdef"

    def __post_init__(self):
        # the 40 ms effective shift fixes the subsample factor per feature kind
        factor = asr_mod.subsample_factor_for_shift(self.feature.frame_shift)
        if self.asr.subsample_factor != factor:
            self.asr = replace(self.asr, subsample_factor=factor)

    @property
    def vocab(self) -> Vocabulary:
        return Vocabulary(list(self.vocab_chars))

    @property
    def encoder_input_dim(self) -> int:
        return feat_mod.PROJECTED_DIM if self.feature.needs_projection \
            else self.feature.output_dim

    def fingerprint(self) -> bytes:
        """32-byte digest of everything that shapes the parameter set."""
        spec = {
            "se": vars(self.se),
            "asr": vars(self.asr),
            "feature": vars(self.feature),
            "feature_mvn": self.feature_mvn,
            "vocab": self.vocab_chars,
        }
        blob = json.dumps(spec, sort_keys=True).encode()
        return hashlib.sha256(blob).digest()


def build_params(pipe: PipelineConfig, seed: int, include_se: bool = True) -> ParameterStore:
    """Fresh random parameters; the sslr partition depends only on feature.seed."""
    store = ParameterStore()
    rng = np.random.default_rng(np.random.SeedSequence([0xA11, seed]))
    if include_se:
        init_se_params(store, pipe.se, rng)
    if pipe.feature.kind == "sslr_stub":
        init_sslr_params(store, pipe.feature.seed)
        init_projection_params(store, rng)
    asr_mod.init_asr_params(store, pipe.asr, len(pipe.vocab),
                            pipe.encoder_input_dim, rng)
    return store


def init_sslr_params_into(store: ParameterStore, pipe: PipelineConfig):
    init_sslr_params(store, pipe.feature.seed)


def _finish_features(feats: Tensor, params: ParameterStore, pipe: PipelineConfig,
                     mode: RunMode, specaug_seed: int) -> Tensor:
    """Masking augmentation (training only) and the optional wide projection."""
    if mode.training and pipe.specaug.enabled:
        feats = spec_augment_t(feats, pipe.specaug, specaug_seed)
    if pipe.feature.needs_projection:
        feats = project_features_t(feats, params)
    return feats


def pipeline_features(wave: Tensor, params: ParameterStore, pipe: PipelineConfig,
                      mode: RunMode = asr_mod.EVAL, use_se: bool = True,
                      specaug_seed: int = 0):
    """Waveform to encoder-ready features; returns (features, enhanced-or-None)."""
    enhanced = None
    x = wave
    if use_se:
        x, _mask = enhance_t(wave, params, pipe.se)
        enhanced = x
    feats = extract_features_t(x, pipe.feature, params)
    if pipe.feature_mvn:
        feats = mean_variance_normalize_t(feats)
    return _finish_features(feats, params, pipe, mode, specaug_seed), enhanced


def base_features(noisy: np.ndarray, params: ParameterStore, pipe: PipelineConfig,
                  use_se: bool) -> np.ndarray:
    """Pre-projection features of a fixed front end (cacheable across epochs;
    only valid while the se and sslr partitions are not being updated)."""
    wave = Tensor(np.asarray(noisy, dtype=np.float32))
    x = wave
    if use_se:
        x, _ = enhance_t(wave, params, pipe.se)
    feats = extract_features_t(x, pipe.feature, params)
    if pipe.feature_mvn:
        feats = mean_variance_normalize_t(feats)
    return feats.data


def pipeline_encode(wave: Tensor, params: ParameterStore, pipe: PipelineConfig,
                    mode: RunMode = asr_mod.EVAL, use_se: bool = True,
                    specaug_seed: int = 0):
    feats, enhanced = pipeline_features(wave, params, pipe, mode, use_se, specaug_seed)
    enc = asr_mod.encode(feats, params, pipe.asr, mode)
    return enc, enhanced


def utterance_loss(noisy: np.ndarray, clean: np.ndarray | None, text: str,
                   params: ParameterStore, pipe: PipelineConfig,
                   mode: RunMode, use_se: bool, se_loss_weight: float,
                   use_enh_loss: bool, specaug_seed: int = 0,
                   cached_base: np.ndarray | None = None):
    """Joint training loss of one utterance; enhancement term only with a
    clean reference present.  cached_base short-circuits the frozen front end
    (and with it the enhancement term, which would be constant anyway)."""
    vocab = pipe.vocab
    target = TokenSequence(vocab.encode(text), vocab)
    if cached_base is not None:
        feats = _finish_features(Tensor(cached_base), params, pipe, mode, specaug_seed)
        enhanced = None
    else:
        wave = Tensor(np.asarray(noisy, dtype=np.float32))
        feats, enhanced = pipeline_features(wave, params, pipe, mode, use_se,
                                            specaug_seed)
    enc = asr_mod.encode(feats, params, pipe.asr, mode)
    ctc = asr_mod.ctc_loss(asr_mod.ctc_log_probs(enc, params), target.ids)
    att = asr_mod.attention_loss(enc, target, params, pipe.asr, mode)
    loss = asr_mod.joint_asr_loss(ctc, att, pipe.asr.ctc_weight)
    parts = {"ctc": ctc.item(), "att": att.item()}
    if (use_enh_loss and use_se and clean is not None and se_loss_weight != 0.0
            and enhanced is not None):
        enh = neg_si_snr_t(enhanced, clean)
        loss = loss + enh * se_loss_weight
        parts["enh"] = enh.item()
    return loss, parts


def decode_utterance(noisy: np.ndarray, params: ParameterStore, pipe: PipelineConfig,
                     use_se: bool, beam: int, ctc_weight: float,
                     lm_weight: float = 0.0, lm=None):
    """Run the full pipeline and beam search; returns (Hypothesis, enhanced-or-None)."""
    wave = Tensor(np.asarray(noisy, dtype=np.float32))
    enc, enhanced = pipeline_encode(wave, params, pipe, asr_mod.EVAL, use_se)
    hyp = asr_mod.beam_search_decode(enc, params, pipe.asr, beam=beam,
                                     ctc_weight=ctc_weight, lm_weight=lm_weight,
                                     lm=lm, vocab=pipe.vocab)
    enhanced_arr = enhanced.data.astype(np.float64) if enhanced is not None else None
    return hyp, enhanced_arr


def dev_accuracy(params: ParameterStore, pipe: PipelineConfig, items,
                 use_se: bool, base_cache: dict | None = None) -> float:
    """Teacher-forced next-token accuracy over (noisy, text) pairs."""
    vocab = pipe.vocab
    correct = total = 0
    for idx, (noisy, _clean, text) in enumerate(items):
        if base_cache is not None:
            if idx not in base_cache:
                base_cache[idx] = base_features(noisy, params, pipe, use_se)
            feats = _finish_features(Tensor(base_cache[idx]), params, pipe,
                                     asr_mod.EVAL, 0)
            enc = asr_mod.encode(feats, params, pipe.asr)
        else:
            wave = Tensor(np.asarray(noisy, dtype=np.float32))
            enc, _ = pipeline_encode(wave, params, pipe, asr_mod.EVAL, use_se)
        target = TokenSequence(vocab.encode(text), vocab)
        c, t = asr_mod.teacher_forced_accuracy(enc, target, params, pipe.asr)
        correct += c
        total += t
    return correct / total if total else 0.0
