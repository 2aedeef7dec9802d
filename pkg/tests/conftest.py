import numpy as np
import pytest

from enhasr.asr import AsrConfig
from enhasr.corpus import CorpusSpec, build_corpus
from enhasr.enhance import TasNetConfig
from enhasr.features import FeatureExtractorKind, SpecAugmentPolicy
from enhasr.pipeline import PipelineConfig
from enhasr.training import TrainConfig

MICRO_SE = TasNetConfig(n_filters=16, kernel=16, stride=8, bottleneck=8,
                        conv_channels=16, conv_kernel=3, blocks_per_repeat=2, repeats=1)

MICRO_ASR = AsrConfig(encoder_layers=1, decoder_layers=1, heads=2, ffn_dim=16,
                      model_dim=16, dropout=0.1, ctc_weight=0.3)

MICRO_SPECAUG = SpecAugmentPolicy(num_time_masks=1, max_time_width=2,
                                  num_freq_masks=1, max_freq_width=4)


def micro_pipe(kind="sslr_stub", alphabet="abcdef", dropout=0.1, mvn=True):
    return PipelineConfig(
        se=MICRO_SE,
        asr=AsrConfig(encoder_layers=1, decoder_layers=1, heads=2, ffn_dim=16,
                      model_dim=16, dropout=dropout, ctc_weight=0.3),
        feature=FeatureExtractorKind(kind=kind, seed=5, num_filters=20),
        specaug=MICRO_SPECAUG,
        feature_mvn=mvn,
        vocab_chars=alphabet,
    )


def micro_train_cfg(epochs=2, batch_size=4):
    return TrainConfig(batch_size=batch_size, epochs=epochs, peak_lr=1e-3,
                       warmup_steps=20, grad_clip=5.0, se_loss_weight=1.0)


@pytest.fixture(scope="session")
def micro_corpus(tmp_path_factory):
    out = tmp_path_factory.mktemp("micro-corpus")
    spec = CorpusSpec(n_train=10, n_dev=3, n_test=3, text_len_min=2, text_len_max=3,
                      clean_fraction=0.2)
    manifest = build_corpus(spec, seed=77, out_dir=out)
    return manifest
