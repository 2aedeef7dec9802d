"""Set-level evaluation: decode every utterance of a split, pool error counts
(corpus-level rates, not utterance means), average SI-SNR over simulated
pairs, and emit hypothesis files for audit.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .asr import CharNgramLM
from .autodiff import ParameterStore
from .corpus import Manifest, load_utterance
from .dsp import WaveformBuffer
from .enhance import si_snr
from .metrics import WerBreakdown, wer
from .pipeline import PipelineConfig, decode_utterance


@dataclass
class DecodeOptions:
    beam: int = 4
    ctc_weight: float = 0.3
    lm_weight: float = 1.0
    lm_order: int = 3
    lm_k: float = 0.1
    unit: str = "char"


@dataclass
class EvalResult:
    breakdown: WerBreakdown
    si_snr_db: float | None
    hypotheses: dict = field(default_factory=dict)   # id -> text
    failures: dict = field(default_factory=dict)     # id -> error message

    @property
    def wer(self) -> float:
        return self.breakdown.wer


def evaluate_set(manifest: Manifest, split: str, params: ParameterStore,
                 pipe: PipelineConfig, options: DecodeOptions, use_se: bool,
                 lm: CharNgramLM | None = None,
                 hyp_path=None) -> EvalResult:
    """Decode one split; per-utterance failures are recorded, not fatal."""
    records = manifest.split(split)
    if not records:
        raise ValueError(f"split {split!r} is empty")
    pooled = WerBreakdown()
    snrs = []
    result = EvalResult(pooled, None)
    for r in records:
        try:
            noisy, clean = load_utterance(manifest, r)
            hyp, enhanced = decode_utterance(
                noisy.samples, params, pipe, use_se, options.beam,
                options.ctc_weight, options.lm_weight, lm)
            text = pipe.vocab.decode(hyp.tokens)
            result.hypotheses[r.id] = text
            pooled.add(wer(r.text, text, unit=options.unit))
            if clean is not None:
                est = enhanced if enhanced is not None else noisy.samples
                snrs.append(si_snr(WaveformBuffer(est), clean))
        except (OSError, ValueError) as e:
            result.failures[r.id] = str(e)
    if snrs:
        result.si_snr_db = float(np.mean(snrs))
    if hyp_path is not None:
        write_hypotheses(result, hyp_path)
    return result


def write_hypotheses(result: EvalResult, path):
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    lines = [f"{uid}\t{text}" for uid, text in sorted(result.hypotheses.items())]
    path.write_text("\n".join(lines) + ("\n" if lines else ""), encoding="utf-8")
