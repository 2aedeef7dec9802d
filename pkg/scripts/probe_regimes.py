#!/usr/bin/env python3
"""Calibration probe for the regime-ordering experiment: runs the four
fine-tune combinations at reduced scale and prints WER per regime."""

import argparse
import tempfile
import time

import numpy as np

from enhasr.asr import AsrConfig
from enhasr.corpus import CorpusSpec, build_corpus
from enhasr.enhance import TasNetConfig
from enhasr.evaluate import DecodeOptions, evaluate_set
from enhasr.features import FeatureExtractorKind, SpecAugmentPolicy
from enhasr.pipeline import PipelineConfig
from enhasr.training import (
    TrainConfig,
    average_checkpoints,
    combo_regime,
    finetune_iris,
    init_joint_store,
    pretrain_asr,
    pretrain_se,
    select_best_checkpoints,
)
from enhasr.asr import train_char_lm


def make_pipe(se_scale="small"):
    se = {"small": TasNetConfig(n_filters=64, kernel=40, stride=20, bottleneck=32,
                                conv_channels=64, conv_kernel=3,
                                blocks_per_repeat=2, repeats=1),
          "mid": TasNetConfig(n_filters=128, kernel=40, stride=20, bottleneck=64,
                              conv_channels=128, conv_kernel=3,
                              blocks_per_repeat=2, repeats=2)}[se_scale]
    return PipelineConfig(
        se=se,
        asr=AsrConfig(encoder_layers=2, decoder_layers=2, heads=4, ffn_dim=128,
                      model_dim=64, dropout=0.1, ctc_weight=0.3),
        feature=FeatureExtractorKind(kind="sslr_stub", seed=0),
        specaug=SpecAugmentPolicy(num_time_masks=1, max_time_width=4,
                                  num_freq_masks=2, max_freq_width=24),
        vocab_chars="abcdef",
    )


def run_seed(seed, n_train, se_epochs, asr_epochs, ft_epochs, beam, se_scale):
    t0 = time.time()
    tmp = tempfile.mkdtemp()
    spec = CorpusSpec(n_train=n_train, n_dev=24, n_test=24)
    manifest = build_corpus(spec, seed=seed, out_dir=tmp)
    pipe = make_pipe(se_scale)
    lm = train_char_lm([r.text for r in manifest.split("train")], pipe.vocab)
    opts = DecodeOptions(beam=beam, ctc_weight=0.3, lm_weight=1.0)

    se_cfg = TrainConfig(batch_size=8, epochs=se_epochs, peak_lr=1e-3, warmup_steps=50)
    asr_cfg = TrainConfig(batch_size=8, epochs=asr_epochs, peak_lr=1e-3, warmup_steps=50)
    ft_cfg = TrainConfig(batch_size=8, epochs=ft_epochs, peak_lr=5e-4, warmup_steps=15)

    se_ckpt = pretrain_se(manifest, pipe, se_cfg, seed)
    print(f"  [seed {seed}] SE dev SI-SNR {se_ckpt.metrics['dev_si_snr']:.2f} dB "
          f"({time.time() - t0:.0f}s)")
    asr_ckpt = pretrain_asr(manifest, pipe, asr_cfg, seed)
    print(f"  [seed {seed}] ASR dev acc {asr_ckpt.validation_accuracy:.3f} "
          f"({time.time() - t0:.0f}s)")

    wers = {}
    for ft_se, ft_asr in ((False, False), (False, True), (True, False), (True, True)):
        regime = combo_regime(ft_se, ft_asr)
        if regime.update:
            _best, ckpts = finetune_iris(se_ckpt, asr_ckpt, manifest, regime, pipe,
                                         ft_cfg, seed)
            params = average_checkpoints(select_best_checkpoints(ckpts, len(ckpts)))
        else:
            params = init_joint_store(se_ckpt, asr_ckpt, pipe)
        res = evaluate_set(manifest, "test", params, pipe, opts, use_se=True, lm=lm)
        wers[regime.name] = res.breakdown.wer
        print(f"  [seed {seed}] {regime.name:10s} WER {res.breakdown.wer:6.2f}%  "
              f"SI-SNR {res.si_snr_db:6.2f} dB  ({time.time() - t0:.0f}s)")
    # the recognizer alone on raw noisy input, for reference
    res = evaluate_set(manifest, "test", asr_ckpt.params, pipe, opts,
                       use_se=False, lm=lm)
    print(f"  [seed {seed}] no-SE ref   WER {res.breakdown.wer:6.2f}%")
    return wers


def main():
    ap = argparse.ArgumentParser(description=__doc__)
    ap.add_argument("--seeds", type=int, nargs="+", default=[0])
    ap.add_argument("--n-train", type=int, default=120)
    ap.add_argument("--se-epochs", type=int, default=15)
    ap.add_argument("--asr-epochs", type=int, default=20)
    ap.add_argument("--ft-epochs", type=int, default=3)
    ap.add_argument("--beam", type=int, default=2)
    ap.add_argument("--se-scale", default="small")
    args = ap.parse_args()

    allw = {}
    for seed in args.seeds:
        w = run_seed(seed, args.n_train, args.se_epochs, args.asr_epochs,
                     args.ft_epochs, args.beam, args.se_scale)
        for k, v in w.items():
            allw.setdefault(k, []).append(v)
    print("\nseed means:")
    for k, vs in allw.items():
        print(f"  {k:10s} {np.mean(vs):6.2f}  {vs}")


if __name__ == "__main__":
    main()
