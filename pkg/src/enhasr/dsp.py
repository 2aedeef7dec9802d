"""Classical DSP front end: framing, spectra, mel filterbank, log-mel features.

Two routes share the same geometry: the public functions operate on plain
arrays (np.fft), while the *_t functions mirror them with autodiff ops so the
enhancement module can be fine-tuned through the feature extractor.  A test
pins the two routes against each other.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import autodiff as ad
from .autodiff import Tensor

SAMPLE_RATE = 16000
FRAME_LENGTH = 400      # 25 ms
FRAME_SHIFT = 160       # 10 ms
N_FFT = 512
NUM_FILTERS = 80
LOG_FLOOR = 1e-10
MEL_F_MIN = 0.0
MEL_F_MAX = 8000.0


@dataclass
class WaveformBuffer:
    """Mono audio samples at a fixed 16 kHz rate."""

    samples: np.ndarray
    sample_rate: int = SAMPLE_RATE

    def __post_init__(self):
        self.samples = np.asarray(self.samples, dtype=np.float64).reshape(-1)
        if self.samples.size == 0:
            raise ValueError("waveform must be non-empty")
        if not np.all(np.isfinite(self.samples)):
            raise ValueError("waveform samples must be finite")
        if self.sample_rate != SAMPLE_RATE:
            raise ValueError(f"sample_rate: expected {SAMPLE_RATE}, got {self.sample_rate}")

    def __len__(self):
        return self.samples.shape[0]

    @property
    def duration(self) -> float:
        return len(self) / self.sample_rate


@dataclass
class FeatureMatrix:
    """frames x dim real matrix plus the hop it was produced with."""

    values: np.ndarray
    frame_shift: float

    def __post_init__(self):
        self.values = np.asarray(self.values)
        if self.values.ndim != 2 or self.values.shape[0] < 1 or self.values.shape[1] < 1:
            raise ValueError(f"feature matrix must be frames x dim, got {self.values.shape}")
        if not np.all(np.isfinite(self.values)):
            raise ValueError("feature values must be finite")

    @property
    def frames(self) -> int:
        return self.values.shape[0]

    @property
    def dim(self) -> int:
        return self.values.shape[1]


def hann_window(n: int) -> np.ndarray:
    """Symmetric hann, zero at both endpoints."""
    return 0.5 - 0.5 * np.cos(2.0 * np.pi * np.arange(n) / (n - 1))


def frame_count(length: int, frame_length: int, frame_shift: int) -> int:
    return (length - frame_length) // frame_shift + 1


def frame_signal(wave: WaveformBuffer, frame_length: int = FRAME_LENGTH,
                 frame_shift: int = FRAME_SHIFT, window: str = "hann") -> np.ndarray:
    """Slice a waveform into windowed overlapping frames (frames x frame_length)."""
    if window != "hann":
        raise ValueError(f"unsupported window {window!r}")
    n = len(wave)
    if n < frame_length:
        raise ValueError(f"waveform of {n} samples shorter than one frame ({frame_length})")
    frames = frame_count(n, frame_length, frame_shift)
    win = hann_window(frame_length)
    idx = frame_shift * np.arange(frames)[:, None] + np.arange(frame_length)[None, :]
    return wave.samples[idx] * win


def power_spectrum(frame: np.ndarray) -> np.ndarray:
    """|DFT|^2 of one frame for the non-negative frequency bins."""
    frame = np.asarray(frame)
    n = frame.shape[-1]
    if n < 2 or (n & (n - 1)) != 0:
        raise ValueError(f"frame length must be a power of two, got {n}")
    spec = np.fft.rfft(frame, axis=-1)
    return (spec.real ** 2 + spec.imag ** 2)


def hz_to_mel(f):
    return 2595.0 * np.log10(1.0 + np.asarray(f, dtype=np.float64) / 700.0)


def mel_to_hz(m):
    return 700.0 * (10.0 ** (np.asarray(m, dtype=np.float64) / 2595.0) - 1.0)


def mel_filterbank_matrix(num_filters: int, fft_bins: int, sample_rate: int = SAMPLE_RATE,
                          f_min: float = MEL_F_MIN, f_max: float = MEL_F_MAX) -> np.ndarray:
    """Triangular filters with centers uniformly spaced on the mel scale."""
    if num_filters < 2:
        raise ValueError(f"num_filters must be >= 2, got {num_filters}")
    if not (0.0 <= f_min < f_max <= sample_rate / 2):
        raise ValueError(f"invalid frequency range [{f_min}, {f_max}] for rate {sample_rate}")
    n_fft = 2 * (fft_bins - 1)
    bin_hz = np.arange(fft_bins) * sample_rate / n_fft
    edges = mel_to_hz(np.linspace(hz_to_mel(f_min), hz_to_mel(f_max), num_filters + 2))
    edges[0], edges[-1] = f_min, f_max  # undo mel round-trip error at the range ends
    mat = np.zeros((num_filters, fft_bins))
    for i in range(num_filters):
        lo, mid, hi = edges[i], edges[i + 1], edges[i + 2]
        up = (bin_hz - lo) / (mid - lo)
        down = (hi - bin_hz) / (hi - mid)
        mat[i] = np.maximum(0.0, np.minimum(up, down))
    return mat


def mel_filter_centers(num_filters: int, f_min: float = MEL_F_MIN,
                       f_max: float = MEL_F_MAX) -> np.ndarray:
    edges = mel_to_hz(np.linspace(hz_to_mel(f_min), hz_to_mel(f_max), num_filters + 2))
    return edges[1:-1]


def log_mel_fbank(wave: WaveformBuffer, num_filters: int = NUM_FILTERS) -> FeatureMatrix:
    """Log mel-filterbank energies: 25 ms hann frames, 10 ms shift, FFT 512."""
    frames = frame_signal(wave)
    padded = np.pad(frames, ((0, 0), (0, N_FFT - FRAME_LENGTH)))
    power = power_spectrum(padded)
    mel = mel_filterbank_matrix(num_filters, N_FFT // 2 + 1)
    values = np.log(power @ mel.T + LOG_FLOOR)
    return FeatureMatrix(values, frame_shift=FRAME_SHIFT / SAMPLE_RATE)


# ---------------------------------------------------------------------------
# differentiable mirror


def frame_tensor(x: Tensor, frame_length: int, frame_shift: int) -> Tensor:
    """Framing as an autodiff op: 1-D tensor -> frames x frame_length."""
    n = x.data.shape[0]
    if x.data.ndim != 1:
        raise ValueError(f"frame_tensor expects 1-D input, got {x.data.shape}")
    if n < frame_length:
        raise ValueError(f"waveform of {n} samples shorter than one frame ({frame_length})")
    frames = frame_count(n, frame_length, frame_shift)
    idx = frame_shift * np.arange(frames)[:, None] + np.arange(frame_length)[None, :]
    out = x.data[idx]

    def back(g):
        dx = np.zeros_like(x.data)
        np.add.at(dx, idx, g)
        ad._accum(x, dx)
    return ad._make(out, (x,), back)


class _FbankBasis:
    """Cached constant matrices for the differentiable fbank route."""

    def __init__(self, num_filters: int):
        bins = N_FFT // 2 + 1
        n = np.arange(N_FFT)
        k = np.arange(bins)
        ang = 2.0 * np.pi * np.outer(n, k) / N_FFT
        self.cos = np.cos(ang)          # [N_FFT, bins]
        self.sin = -np.sin(ang)
        self.mel_t = mel_filterbank_matrix(num_filters, bins).T
        self.window = hann_window(FRAME_LENGTH)


_BASIS_CACHE: dict[int, _FbankBasis] = {}


def _basis(num_filters: int) -> _FbankBasis:
    if num_filters not in _BASIS_CACHE:
        _BASIS_CACHE[num_filters] = _FbankBasis(num_filters)
    return _BASIS_CACHE[num_filters]


def log_mel_fbank_t(x: Tensor, num_filters: int = NUM_FILTERS) -> Tensor:
    """Differentiable log-mel: same geometry as log_mel_fbank, DFT via matmul."""
    b = _basis(num_filters)
    dt = x.dtype
    frames = frame_tensor(x, FRAME_LENGTH, FRAME_SHIFT)
    frames = frames * Tensor(b.window.astype(dt))
    frames = ad.pad1d(frames, 0, N_FFT - FRAME_LENGTH, axis=1)
    re = frames @ Tensor(b.cos.astype(dt))
    im = frames @ Tensor(b.sin.astype(dt))
    power = ad.square(re) + ad.square(im)
    mel = power @ Tensor(b.mel_t.astype(dt))
    return ad.log(mel + LOG_FLOOR)


def mean_variance_normalize_t(x: Tensor, eps: float = 1e-8) -> Tensor:
    """Per-utterance, per-dimension zero-mean unit-variance over frames."""
    mean = ad.tmean(x, axis=0, keepdims=True)
    centered = x - mean
    var = ad.tmean(ad.square(centered), axis=0, keepdims=True)
    return centered / ad.sqrt(var + eps)
