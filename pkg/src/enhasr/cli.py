"""Command-line entry points for the whole pipeline.

Subcommands: gen-data, train-se, train-asr, finetune, average, decode,
evaluate, report, regime-matrix.  Every config key can be overridden with
--set key=value; --seed is global.  Exit codes: 0 success, 2 partial
per-utterance failures, 1 fatal.
"""

from __future__ import annotations

import argparse
import csv as csvmod
import sys
from pathlib import Path

from .asr import Vocabulary, train_char_lm
from .config import Config, load_config
from .corpus import Manifest, build_corpus
from .evaluate import evaluate_set
from .reports import RegimeReport, Series, emit_report
from .training import (
    Checkpoint,
    average_checkpoints,
    combo_regime,
    finetune_iris,
    init_joint_store,
    load_checkpoint,
    pretrain_asr,
    pretrain_se,
    resolve_regime,
    save_checkpoint,
    select_best_checkpoints,
)


def _add_common(p: argparse.ArgumentParser):
    p.add_argument("--config", type=Path, default=None, help="key = value file")
    p.add_argument("--set", dest="overrides", action="append", default=[],
                   metavar="KEY=VALUE", help="override one config key")
    p.add_argument("--seed", type=int, default=0)


def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="enhasr", description=__doc__)
    sub = ap.add_subparsers(dest="command", required=True)

    p = sub.add_parser("gen-data", help="synthesize the corpus + manifest + vocab")
    _add_common(p)
    p.add_argument("--out", type=Path, required=True)

    p = sub.add_parser("train-se", help="pre-train the enhancer with SI-SNR")
    _add_common(p)
    p.add_argument("--data", type=Path, required=True)
    p.add_argument("--out", type=Path, required=True)

    p = sub.add_parser("train-asr", help="pre-train the recognizer on raw waves")
    _add_common(p)
    p.add_argument("--data", type=Path, required=True)
    p.add_argument("--out", type=Path, required=True)

    p = sub.add_parser("finetune", help="joint fine-tuning under a named regime")
    _add_common(p)
    p.add_argument("--data", type=Path, required=True)
    p.add_argument("--se-ckpt", type=Path)
    p.add_argument("--asr-ckpt", type=Path)
    p.add_argument("--regime", required=True)
    p.add_argument("--out", type=Path, required=True)

    p = sub.add_parser("average", help="average the k best checkpoints in a directory")
    _add_common(p)
    p.add_argument("--ckpt-dir", type=Path, required=True)
    p.add_argument("--k", type=int, default=None)
    p.add_argument("--out", type=Path, required=True)

    p = sub.add_parser("decode", help="write hypotheses for one split")
    _add_common(p)
    p.add_argument("--data", type=Path, required=True)
    p.add_argument("--split", default="test")
    p.add_argument("--ckpt", type=Path, required=True)
    p.add_argument("--no-se", action="store_true")
    p.add_argument("--out", type=Path, required=True)

    p = sub.add_parser("evaluate", help="decode and score one split")
    _add_common(p)
    p.add_argument("--data", type=Path, required=True)
    p.add_argument("--split", default="test")
    p.add_argument("--ckpt", type=Path, required=True)
    p.add_argument("--no-se", action="store_true")
    p.add_argument("--out-prefix", type=Path, required=True)

    p = sub.add_parser("report", help="plot a series CSV as SVG")
    _add_common(p)
    p.add_argument("--input", type=Path, required=True)
    p.add_argument("--out-prefix", type=Path, required=True)
    p.add_argument("--title", default="training curves")

    p = sub.add_parser("regime-matrix",
                       help="pre-train, fine-tune all four combinations, evaluate")
    _add_common(p)
    p.add_argument("--data", type=Path, required=True)
    p.add_argument("--out", type=Path, required=True)
    return ap


def _history_series(ckpt: Checkpoint, key: str, name: str) -> Series:
    hist = ckpt.metrics.get("history", [])
    return Series(name, [h["epoch"] for h in hist], [h[key] for h in hist])


def cmd_gen_data(args, cfg: Config) -> int:
    manifest = build_corpus(cfg.corpus_spec(), args.seed, args.out)
    Vocabulary(list(cfg.str_("corpus.alphabet"))).save(Path(args.out) / "vocab.txt")
    (Path(args.out) / "corpus.cfg").write_text(cfg.dump(), encoding="utf-8")
    print(f"wrote {len(manifest.records)} utterances under {args.out}")
    return 0


def cmd_train_se(args, cfg: Config) -> int:
    manifest = Manifest.load(args.data / "manifest.jsonl")
    pipe = cfg.pipeline()
    args.out.mkdir(parents=True, exist_ok=True)
    best = pretrain_se(manifest, pipe, cfg.train("se"), args.seed, ckpt_dir=args.out)
    save_checkpoint(best, args.out / "se-best.ckpt")
    emit_report([_history_series(best, "dev_si_snr", "dev SI-SNR (dB)")],
                args.out / "se-curve", "enhancer pre-training", "epoch", "dB")
    print(f"best epoch {best.epoch}: dev SI-SNR "
          f"{best.metrics['dev_si_snr']:.2f} dB -> {args.out / 'se-best.ckpt'}")
    return 0


def cmd_train_asr(args, cfg: Config) -> int:
    manifest = Manifest.load(args.data / "manifest.jsonl")
    pipe = cfg.pipeline()
    args.out.mkdir(parents=True, exist_ok=True)
    best = pretrain_asr(manifest, pipe, cfg.train("asr"), args.seed, ckpt_dir=args.out)
    save_checkpoint(best, args.out / "asr-best.ckpt")
    emit_report([_history_series(best, "dev_accuracy", "dev accuracy")],
                args.out / "asr-curve", "recognizer pre-training", "epoch", "accuracy")
    print(f"best epoch {best.epoch}: dev accuracy "
          f"{best.validation_accuracy:.4f} -> {args.out / 'asr-best.ckpt'}")
    return 0


def cmd_finetune(args, cfg: Config) -> int:
    manifest = Manifest.load(args.data / "manifest.jsonl")
    pipe = cfg.pipeline()
    regime = resolve_regime(args.regime)
    if not regime.update:
        print("regime has nothing to update; use `evaluate` on the composed model",
              file=sys.stderr)
        return 1
    fp = pipe.fingerprint()
    se_ckpt = load_checkpoint(args.se_ckpt, fp) if args.se_ckpt else None
    asr_ckpt = load_checkpoint(args.asr_ckpt, fp) if args.asr_ckpt else None
    args.out.mkdir(parents=True, exist_ok=True)
    best, _ = finetune_iris(se_ckpt, asr_ckpt, manifest, regime, pipe,
                            cfg.train("finetune"), args.seed, ckpt_dir=args.out)
    save_checkpoint(best, args.out / "ft-best.ckpt")
    emit_report([_history_series(best, "dev_accuracy", regime.name)],
                args.out / "ft-curve", f"fine-tuning ({regime.name})",
                "epoch", "accuracy")
    print(f"{regime.name}: best epoch {best.epoch}, dev accuracy "
          f"{best.validation_accuracy:.4f} -> {args.out / 'ft-best.ckpt'}")
    return 0


def cmd_average(args, cfg: Config) -> int:
    paths = sorted(args.ckpt_dir.glob("*.ckpt"))
    paths = [p for p in paths if not p.name.endswith("-best.ckpt")]
    if not paths:
        print(f"no checkpoints in {args.ckpt_dir}", file=sys.stderr)
        return 1
    ckpts = [load_checkpoint(p) for p in paths]
    k = min(args.k or cfg.int_("train.average_k"), len(ckpts))
    chosen = select_best_checkpoints(ckpts, k)
    params = average_checkpoints(chosen)
    out = Checkpoint(params, max(c.epoch for c in chosen),
                     max(c.validation_accuracy for c in chosen),
                     chosen[0].fingerprint,
                     {"averaged_epochs": sorted(c.epoch for c in chosen)})
    save_checkpoint(out, args.out)
    print(f"averaged epochs {out.metrics['averaged_epochs']} -> {args.out}")
    return 0


def _load_eval_bits(args, cfg: Config):
    manifest = Manifest.load(args.data / "manifest.jsonl")
    pipe = cfg.pipeline()
    ckpt = load_checkpoint(args.ckpt, pipe.fingerprint())
    use_se = not args.no_se and bool(ckpt.params.names("se."))
    options = cfg.decode_options()
    lm = None
    if options.lm_weight != 0.0:
        texts = [r.text for r in manifest.split("train")]
        lm = train_char_lm(texts, pipe.vocab, options.lm_order, options.lm_k)
    return manifest, pipe, ckpt, use_se, options, lm


def cmd_decode(args, cfg: Config) -> int:
    manifest, pipe, ckpt, use_se, options, lm = _load_eval_bits(args, cfg)
    result = evaluate_set(manifest, args.split, ckpt.params, pipe, options,
                          use_se, lm, hyp_path=args.out)
    print(f"decoded {len(result.hypotheses)} utterances -> {args.out}")
    return 2 if result.failures else 0


def cmd_evaluate(args, cfg: Config) -> int:
    manifest, pipe, ckpt, use_se, options, lm = _load_eval_bits(args, cfg)
    result = evaluate_set(manifest, args.split, ckpt.params, pipe, options,
                          use_se, lm, hyp_path=Path(str(args.out_prefix) + ".hyp.txt"))
    b = result.breakdown
    csv_path = Path(str(args.out_prefix) + ".csv")
    csv_path.parent.mkdir(parents=True, exist_ok=True)
    snr = "" if result.si_snr_db is None else f"{result.si_snr_db:.4f}"
    csv_path.write_text(
        "split,wer,substitutions,deletions,insertions,ref_tokens,si_snr\n"
        f"{args.split},{b.wer:.4f},{b.substitutions},{b.deletions},"
        f"{b.insertions},{b.ref_words},{snr}\n", encoding="utf-8")
    print(f"{args.split}: WER {b.wer:.2f}% (S={b.substitutions} D={b.deletions} "
          f"I={b.insertions} / {b.ref_words})"
          + (f", SI-SNR {result.si_snr_db:.2f} dB" if result.si_snr_db is not None else ""))
    for uid, msg in sorted(result.failures.items()):
        print(f"FAILED {uid}: {msg}", file=sys.stderr)
    return 2 if result.failures else 0


def cmd_report(args, cfg: Config) -> int:
    with open(args.input, encoding="utf-8") as f:
        rows = list(csvmod.reader(f))
    header, body = rows[0], rows[1:]
    if len(header) != 3 or header[0] != "series":
        print("expected a 3-column CSV with header series,<x>,<y>", file=sys.stderr)
        return 1
    series = {}
    for name, x, y in body:
        series.setdefault(name, Series(name, [], []))
        series[name].xs.append(float(x))
        series[name].ys.append(float(y))
    emit_report(list(series.values()), args.out_prefix, args.title,
                header[1], header[2])
    print(f"wrote {args.out_prefix}.csv and {args.out_prefix}.svg")
    return 0


def cmd_regime_matrix(args, cfg: Config) -> int:
    manifest = Manifest.load(args.data / "manifest.jsonl")
    pipe = cfg.pipeline()
    options = cfg.decode_options()
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    lm = None
    if options.lm_weight != 0.0:
        lm = train_char_lm([r.text for r in manifest.split("train")], pipe.vocab,
                           options.lm_order, options.lm_k)

    print("pre-training enhancer ...")
    se_dir = out / "pretrain-se"
    se_dir.mkdir(exist_ok=True)
    se_ckpt = pretrain_se(manifest, pipe, cfg.train("se"), args.seed, ckpt_dir=se_dir)
    print(f"  dev SI-SNR {se_ckpt.metrics['dev_si_snr']:.2f} dB")
    print("pre-training recognizer ...")
    asr_dir = out / "pretrain-asr"
    asr_dir.mkdir(exist_ok=True)
    asr_ckpt = pretrain_asr(manifest, pipe, cfg.train("asr"), args.seed, ckpt_dir=asr_dir)
    print(f"  dev accuracy {asr_ckpt.validation_accuracy:.4f}")

    report = RegimeReport()
    curves = []
    failures = False
    for ft_se, ft_asr in ((False, False), (False, True), (True, False), (True, True)):
        regime = combo_regime(ft_se, ft_asr)
        print(f"regime {regime.name} ...")
        if regime.update:
            best, epoch_ckpts = finetune_iris(se_ckpt, asr_ckpt, manifest, regime,
                                              pipe, cfg.train("finetune"), args.seed)
            k = min(cfg.int_("train.average_k"), len(epoch_ckpts))
            params = average_checkpoints(select_best_checkpoints(epoch_ckpts, k))
            curves.append(_history_series(best, "dev_accuracy", regime.name))
        else:
            params = init_joint_store(se_ckpt, asr_ckpt, pipe)
        for split in ("dev", "test"):
            result = evaluate_set(manifest, split, params, pipe, options, True, lm,
                                  hyp_path=out / f"hyp-{regime.name}-{split}.txt")
            failures = failures or bool(result.failures)
            report.add(regime.name, f"{split}-sim", result.breakdown.wer,
                       result.si_snr_db)
            print(f"  {split}: WER {result.breakdown.wer:.2f}%"
                  + (f", SI-SNR {result.si_snr_db:.2f} dB"
                     if result.si_snr_db is not None else ""))
    (out / "regime-matrix.csv").write_text(report.to_csv(), encoding="utf-8")
    if curves:
        emit_report(curves, out / "regime-curves", "fine-tuning accuracy by regime",
                    "epoch", "dev accuracy")
    print(f"report -> {out / 'regime-matrix.csv'}")
    return 2 if failures else 0


COMMANDS = {
    "gen-data": cmd_gen_data,
    "train-se": cmd_train_se,
    "train-asr": cmd_train_asr,
    "finetune": cmd_finetune,
    "average": cmd_average,
    "decode": cmd_decode,
    "evaluate": cmd_evaluate,
    "report": cmd_report,
    "regime-matrix": cmd_regime_matrix,
}


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        cfg = load_config(args.config, args.overrides)
        return COMMANDS[args.command](args, cfg)
    except (ValueError, KeyError, OSError) as e:
        print(f"error: {e}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
