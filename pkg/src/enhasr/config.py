"""Flat `key = value` configuration: a defaults table, file loading, and
--set overrides, plus builders for the typed config objects.
"""

from __future__ import annotations

from pathlib import Path

from .asr import AsrConfig
from .corpus import CorpusSpec
from .enhance import TasNetConfig
from .evaluate import DecodeOptions
from .features import FeatureExtractorKind, SpecAugmentPolicy
from .pipeline import PipelineConfig
from .training import TrainConfig

DEFAULTS: dict[str, str] = {
    # corpus generation
    "corpus.n_train": "200",
    "corpus.n_dev": "40",
    "corpus.n_test": "40",
    "corpus.alphabet": "abcdef",
    "corpus.text_len_min": "3",
    "corpus.text_len_max": "6",
    "corpus.snr_min_db": "0.0",
    "corpus.snr_max_db": "10.0",
    "corpus.test_snr_db": "0.0",
    "corpus.clean_fraction": "0.25",
    # enhancement network
    "se.n_filters": "256",
    "se.kernel": "40",
    "se.stride": "20",
    "se.bottleneck": "256",
    "se.conv_channels": "512",
    "se.conv_kernel": "3",
    "se.blocks_per_repeat": "4",
    "se.repeats": "2",
    # feature stage
    "feature.kind": "sslr_stub",
    "feature.seed": "0",
    "feature.num_filters": "80",
    "feature.mvn": "true",
    # masking augmentation
    "specaug.enabled": "true",
    "specaug.num_time_masks": "2",
    "specaug.max_time_width": "20",
    "specaug.num_freq_masks": "2",
    "specaug.max_freq_width": "10",
    # recognizer
    "asr.encoder_layers": "12",
    "asr.decoder_layers": "6",
    "asr.heads": "4",
    "asr.ffn_dim": "2048",
    "asr.model_dim": "256",
    "asr.dropout": "0.1",
    "asr.ctc_weight": "0.3",
    "asr.label_smoothing": "0.1",
    # optimization
    "train.batch_size": "8",
    "train.epochs_se": "20",
    "train.epochs_asr": "30",
    "train.epochs_finetune": "10",
    "train.peak_lr": "1e-3",
    "train.finetune_lr": "5e-4",
    "train.warmup_steps": "20000",
    "train.grad_clip": "5.0",
    "train.se_loss_weight": "1.0",
    "train.average_k": "10",
    # decoding
    "decode.beam": "4",
    "decode.ctc_weight": "0.3",
    "decode.lm_weight": "1.0",
    "decode.lm_order": "3",
    "decode.lm_k": "0.1",
    "decode.unit": "char",
}


class Config:
    """String-keyed settings with typed accessors; unknown keys are rejected."""

    def __init__(self, values: dict[str, str] | None = None):
        self.values = dict(DEFAULTS)
        for k, v in (values or {}).items():
            self.set(k, v)

    def set(self, key: str, value: str):
        if key not in DEFAULTS:
            raise KeyError(f"unknown config key {key!r}")
        self.values[key] = str(value)

    def str_(self, key: str) -> str:
        return self.values[key]

    def int_(self, key: str) -> int:
        return int(self.values[key])

    def float_(self, key: str) -> float:
        return float(self.values[key])

    def bool_(self, key: str) -> bool:
        v = self.values[key].strip().lower()
        if v in ("true", "1", "yes", "on"):
            return True
        if v in ("false", "0", "no", "off"):
            return False
        raise ValueError(f"config key {key} has non-boolean value {v!r}")

    def dump(self) -> str:
        return "\n".join(f"{k} = {self.values[k]}" for k in sorted(self.values)) + "\n"

    # builders ---------------------------------------------------------------

    def corpus_spec(self) -> CorpusSpec:
        return CorpusSpec(
            n_train=self.int_("corpus.n_train"),
            n_dev=self.int_("corpus.n_dev"),
            n_test=self.int_("corpus.n_test"),
            alphabet=self.str_("corpus.alphabet"),
            text_len_min=self.int_("corpus.text_len_min"),
            text_len_max=self.int_("corpus.text_len_max"),
            snr_min_db=self.float_("corpus.snr_min_db"),
            snr_max_db=self.float_("corpus.snr_max_db"),
            test_snr_db=self.float_("corpus.test_snr_db"),
            clean_fraction=self.float_("corpus.clean_fraction"),
        )

    def tasnet(self) -> TasNetConfig:
        return TasNetConfig(
            n_filters=self.int_("se.n_filters"),
            kernel=self.int_("se.kernel"),
            stride=self.int_("se.stride"),
            bottleneck=self.int_("se.bottleneck"),
            conv_channels=self.int_("se.conv_channels"),
            conv_kernel=self.int_("se.conv_kernel"),
            blocks_per_repeat=self.int_("se.blocks_per_repeat"),
            repeats=self.int_("se.repeats"),
        )

    def asr(self) -> AsrConfig:
        return AsrConfig(
            encoder_layers=self.int_("asr.encoder_layers"),
            decoder_layers=self.int_("asr.decoder_layers"),
            heads=self.int_("asr.heads"),
            ffn_dim=self.int_("asr.ffn_dim"),
            model_dim=self.int_("asr.model_dim"),
            dropout=self.float_("asr.dropout"),
            ctc_weight=self.float_("asr.ctc_weight"),
            label_smoothing=self.float_("asr.label_smoothing"),
        )

    def feature_kind(self) -> FeatureExtractorKind:
        return FeatureExtractorKind(
            kind=self.str_("feature.kind"),
            seed=self.int_("feature.seed"),
            num_filters=self.int_("feature.num_filters"),
        )

    def specaug(self) -> SpecAugmentPolicy:
        return SpecAugmentPolicy(
            num_time_masks=self.int_("specaug.num_time_masks"),
            max_time_width=self.int_("specaug.max_time_width"),
            num_freq_masks=self.int_("specaug.num_freq_masks"),
            max_freq_width=self.int_("specaug.max_freq_width"),
            enabled=self.bool_("specaug.enabled"),
        )

    def pipeline(self) -> PipelineConfig:
        return PipelineConfig(
            se=self.tasnet(),
            asr=self.asr(),
            feature=self.feature_kind(),
            specaug=self.specaug(),
            feature_mvn=self.bool_("feature.mvn"),
            vocab_chars=self.str_("corpus.alphabet"),
        )

    def train(self, stage: str) -> TrainConfig:
        epochs = {"se": self.int_("train.epochs_se"),
                  "asr": self.int_("train.epochs_asr"),
                  "finetune": self.int_("train.epochs_finetune")}[stage]
        lr = self.float_("train.finetune_lr" if stage == "finetune" else "train.peak_lr")
        return TrainConfig(
            batch_size=self.int_("train.batch_size"),
            epochs=epochs,
            peak_lr=lr,
            warmup_steps=self.int_("train.warmup_steps"),
            grad_clip=self.float_("train.grad_clip"),
            se_loss_weight=self.float_("train.se_loss_weight"),
            average_k=self.int_("train.average_k"),
        )

    def decode_options(self) -> DecodeOptions:
        return DecodeOptions(
            beam=self.int_("decode.beam"),
            ctc_weight=self.float_("decode.ctc_weight"),
            lm_weight=self.float_("decode.lm_weight"),
            lm_order=self.int_("decode.lm_order"),
            lm_k=self.float_("decode.lm_k"),
            unit=self.str_("decode.unit"),
        )


def parse_config_text(text: str) -> dict[str, str]:
    out = {}
    for lineno, line in enumerate(text.splitlines(), 1):
        body = line.split("#", 1)[0].strip()
        if not body:
            continue
        if "=" not in body:
            raise ValueError(f"line {lineno}: expected 'key = value', got {line!r}")
        key, value = body.split("=", 1)
        out[key.strip()] = value.strip()
    return out


def load_config(path=None, overrides=None) -> Config:
    """File values under --set overrides under defaults."""
    values = {}
    if path is not None:
        values.update(parse_config_text(Path(path).read_text(encoding="utf-8")))
    for item in overrides or []:
        if "=" not in item:
            raise ValueError(f"--set expects key=value, got {item!r}")
        key, value = item.split("=", 1)
        values[key.strip()] = value.strip()
    return Config(values)
