"""Noisy-speech pipeline: time-domain enhancement, frozen learned features,
joint CTC/attention character ASR, and the freeze/fine-tune training regimes
that tie them together."""

__version__ = "0.1.0"
