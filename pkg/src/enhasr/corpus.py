"""Synthetic noisy-speech corpus: chord-coded "speech" from character strings,
SNR-controlled noise mixing, JSONL manifests and 16-bit WAV I/O.

Each character maps to a two-tone chord with a distinct fundamental, so the
toy recognition task is learnable and enhancement measurably helps.
"""

from __future__ import annotations

import hashlib
import json
import warnings
import wave as wavmod
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .dsp import SAMPLE_RATE, WaveformBuffer

SEGMENT_MS = 120
OVERLAP_MS = 10
SEGMENT = SAMPLE_RATE * SEGMENT_MS // 1000      # 1920 samples
OVERLAP = SAMPLE_RATE * OVERLAP_MS // 1000      # 160 samples

DEFAULT_ALPHABET = "abcdef"
BASE_F0 = 300.0
F0_STEP = 150.0          # per-character fundamental spacing
CHORD_OFFSET = 1000.0    # second tone; additive so no tone collides across characters
NOISE_KINDS = ("white", "babble-like", "hum")


def utterance_length(n_chars: int) -> int:
    return n_chars * (SEGMENT - OVERLAP) + OVERLAP


def char_fundamental(ch: str, alphabet: str) -> float:
    return BASE_F0 + F0_STEP * alphabet.index(ch)


def _derived_rng(seed: int, tag: str) -> np.random.Generator:
    digest = hashlib.sha256(f"{seed}:{tag}".encode()).digest()
    return np.random.default_rng(int.from_bytes(digest[:8], "little"))


def _chord(f0: float, t: np.ndarray, phases: np.ndarray) -> np.ndarray:
    return (np.sin(2 * np.pi * f0 * t + phases[0])
            + 0.6 * np.sin(2 * np.pi * (f0 + CHORD_OFFSET) * t + phases[1]))


def synth_utterance(text: str, seed: int, alphabet: str = DEFAULT_ALPHABET) -> WaveformBuffer:
    """Render text as a chord sequence with 10 ms cross-fades between characters."""
    for ch in text:
        if ch not in alphabet:
            raise ValueError(f"character {ch!r} outside alphabet {alphabet!r}")
    rng = _derived_rng(seed, f"synth:{text}")
    total = utterance_length(len(text))
    out = np.zeros(total)
    fade_in = np.linspace(0.0, 1.0, OVERLAP)
    t = np.arange(SEGMENT) / SAMPLE_RATE
    for i, ch in enumerate(text):
        f0 = char_fundamental(ch, alphabet)
        amp = 0.25 * (1.0 + 0.1 * rng.uniform(-1.0, 1.0))
        phase = rng.uniform(0.0, 2.0 * np.pi, size=2)
        seg = amp * _chord(f0, t, phase)
        env = np.ones(SEGMENT)
        if i > 0:
            env[:OVERLAP] = fade_in
        if i < len(text) - 1:
            env[-OVERLAP:] = fade_in[::-1]
        start = i * (SEGMENT - OVERLAP)
        out[start:start + SEGMENT] += seg * env
    return WaveformBuffer(out)


def _make_noise(kind: str, n: int, rng: np.random.Generator,
                alphabet: str = DEFAULT_ALPHABET) -> np.ndarray:
    if kind == "white":
        return rng.normal(size=n)
    if kind == "hum":
        t = np.arange(n) / SAMPLE_RATE
        ph = rng.uniform(0.0, 2.0 * np.pi, size=2)
        return np.sin(2 * np.pi * 50.0 * t + ph[0]) + 0.5 * np.sin(2 * np.pi * 150.0 * t + ph[1])
    if kind == "babble-like":
        # overlapping chords from random other characters
        noise = np.zeros(n)
        t = np.arange(n) / SAMPLE_RATE
        for _ in range(4):
            ch = alphabet[int(rng.integers(len(alphabet)))]
            ph = rng.uniform(0.0, 2.0 * np.pi, size=2)
            noise += _chord(char_fundamental(ch, alphabet), t, ph)
        return noise
    raise ValueError(f"unknown noise kind {kind!r}")


def mix_noise(clean: WaveformBuffer, noise_kind: str, snr_db: float,
              seed: int, alphabet: str = DEFAULT_ALPHABET) -> WaveformBuffer:
    """Add seeded noise scaled so the clean/noise power ratio hits snr_db."""
    if not np.isfinite(snr_db):
        raise ValueError(f"snr_db must be finite, got {snr_db}")
    p_clean = float(np.mean(clean.samples ** 2))
    if p_clean == 0.0:
        raise ValueError("silent clean signal: SNR undefined")
    rng = _derived_rng(seed, f"noise:{noise_kind}:{snr_db}")
    noise = _make_noise(noise_kind, len(clean), rng, alphabet)
    p_noise = float(np.mean(noise ** 2))
    scale = np.sqrt(p_clean / (p_noise * 10.0 ** (snr_db / 10.0)))
    return WaveformBuffer(clean.samples + scale * noise)


def measure_snr_db(noisy: WaveformBuffer, clean: WaveformBuffer) -> float:
    """Power ratio of the clean part to the residual, in dB."""
    residual = noisy.samples - clean.samples
    p_res = float(np.mean(residual ** 2))
    p_clean = float(np.mean(clean.samples ** 2))
    if p_res == 0.0:
        return float("inf")
    return 10.0 * np.log10(p_clean / p_res)


# ---------------------------------------------------------------------------
# WAV I/O (RIFF PCM16 mono 16 kHz)


def write_wav(path, wave_buf: WaveformBuffer):
    samples = wave_buf.samples
    if samples.min() < -1.0 or samples.max() > 1.0:
        warnings.warn(f"clipping samples outside [-1, 1] while writing {path}")
        samples = np.clip(samples, -1.0, 1.0)
    pcm = np.round(samples * 32767.0).astype("<i2")
    with wavmod.open(str(path), "wb") as f:
        f.setnchannels(1)
        f.setsampwidth(2)
        f.setframerate(SAMPLE_RATE)
        f.writeframes(pcm.tobytes())


def read_wav(path) -> WaveformBuffer:
    with wavmod.open(str(path), "rb") as f:
        if f.getnchannels() != 1:
            raise ValueError(f"channels: expected mono, got {f.getnchannels()}")
        if f.getframerate() != SAMPLE_RATE:
            raise ValueError(f"sample_rate: expected {SAMPLE_RATE}, got {f.getframerate()}")
        if f.getsampwidth() != 2:
            raise ValueError(f"bit_depth: expected 16-bit, got {8 * f.getsampwidth()}")
        raw = f.readframes(f.getnframes())
    pcm = np.frombuffer(raw, dtype="<i2")
    return WaveformBuffer(pcm.astype(np.float64) / 32767.0)


# ---------------------------------------------------------------------------
# corpus generation


@dataclass
class CorpusSpec:
    n_train: int = 200
    n_dev: int = 40
    n_test: int = 40
    alphabet: str = DEFAULT_ALPHABET
    text_len_min: int = 3
    text_len_max: int = 6
    snr_min_db: float = 0.0
    snr_max_db: float = 10.0
    test_snr_db: float = 0.0
    clean_fraction: float = 0.25

    def validate(self):
        if min(self.n_train, self.n_dev, self.n_test) < 1:
            raise ValueError("split sizes must be >= 1")
        if len(set(self.alphabet)) < 5:
            raise ValueError("alphabet must have >= 5 distinct symbols")
        if not (-5.0 <= self.snr_min_db <= self.snr_max_db <= 20.0):
            raise ValueError(f"snr range [{self.snr_min_db}, {self.snr_max_db}] outside [-5, 20] dB")
        if not (0.0 <= self.clean_fraction <= 1.0):
            raise ValueError("clean_fraction must be in [0, 1]")


@dataclass
class Record:
    id: str
    noisy_path: str
    clean_path: str | None
    text: str
    split: str
    snr_db: float | None   # None for clean-kind records (nothing was mixed)

    @property
    def kind(self) -> str:
        return "clean" if self.clean_path is None else "simulated"


@dataclass
class Manifest:
    records: list[Record] = field(default_factory=list)
    root: str = "."

    def split(self, name: str) -> list[Record]:
        return [r for r in self.records if r.split == name]

    def save(self, path):
        with open(path, "w", encoding="utf-8") as f:
            for r in self.records:
                f.write(json.dumps({
                    "id": r.id, "noisy_path": r.noisy_path, "clean_path": r.clean_path,
                    "text": r.text, "split": r.split, "snr_db": r.snr_db,
                }, sort_keys=True) + "\n")

    @classmethod
    def load(cls, path) -> "Manifest":
        records = []
        seen = set()
        with open(path, encoding="utf-8") as f:
            for line in f:
                d = json.loads(line)
                if not d["text"]:
                    raise ValueError(f"record {d['id']!r} has empty text")
                if d["id"] in seen:
                    raise ValueError(f"duplicate utterance id {d['id']!r}")
                seen.add(d["id"])
                records.append(Record(d["id"], d["noisy_path"], d.get("clean_path"),
                                      d["text"], d["split"], d.get("snr_db")))
        return cls(records, root=str(Path(path).parent))

    def resolve(self, rel: str) -> Path:
        return Path(self.root) / rel


def load_utterance(manifest: Manifest, record: Record):
    """Returns (noisy, clean-or-None) waveforms for one record."""
    noisy = read_wav(manifest.resolve(record.noisy_path))
    clean = read_wav(manifest.resolve(record.clean_path)) if record.clean_path else None
    return noisy, clean


def build_corpus(spec: CorpusSpec, seed: int, out_dir) -> Manifest:
    """Generate WAVs and a manifest; a pure function of (spec, seed)."""
    spec.validate()
    out = Path(out_dir)
    try:
        (out / "wav").mkdir(parents=True, exist_ok=True)
    except OSError as e:
        raise ValueError(f"unwritable output directory {out}: {e}") from e

    manifest = Manifest(root=str(out))
    counts = {"train": spec.n_train, "dev": spec.n_dev, "test": spec.n_test}
    for split, n in counts.items():
        for i in range(n):
            uid = f"{split}-{i:04d}"
            rng = _derived_rng(seed, f"utt:{uid}")
            length = int(rng.integers(spec.text_len_min, spec.text_len_max + 1))
            text = "".join(spec.alphabet[k] for k in rng.integers(len(spec.alphabet), size=length))
            utt_seed = int.from_bytes(hashlib.sha256(f"{seed}:{uid}:wave".encode()).digest()[:4], "little")
            clean = synth_utterance(text, utt_seed, spec.alphabet)

            is_clean_kind = split == "train" and rng.random() < spec.clean_fraction
            if is_clean_kind:
                noisy_rel = f"wav/{uid}.wav"
                write_wav(out / noisy_rel, clean)
                manifest.records.append(Record(uid, noisy_rel, None, text, split, None))
            else:
                if split == "test":
                    snr = spec.test_snr_db
                else:
                    snr = float(rng.uniform(spec.snr_min_db, spec.snr_max_db))
                kind = NOISE_KINDS[int(rng.integers(len(NOISE_KINDS)))]
                noisy = mix_noise(clean, kind, snr, utt_seed, spec.alphabet)
                peak = float(np.max(np.abs(noisy.samples)))
                if peak > 1.0:
                    # headroom rescale keeps the mixed SNR intact
                    noisy = WaveformBuffer(noisy.samples / (peak * 1.01))
                    clean = WaveformBuffer(clean.samples / (peak * 1.01))
                noisy_rel = f"wav/{uid}-noisy.wav"
                clean_rel = f"wav/{uid}-clean.wav"
                write_wav(out / noisy_rel, noisy)
                write_wav(out / clean_rel, clean)
                manifest.records.append(Record(uid, noisy_rel, clean_rel, text, split, snr))
    manifest.save(out / "manifest.jsonl")
    return manifest
