"""Optimization machinery and the modular training scheme: warmup Adam,
partition-freezing regimes, per-epoch checkpoints with top-k selection and
parameter averaging, and the three training entry points (enhancement
pre-training, recognizer pre-training, joint fine-tuning).
"""

from __future__ import annotations

import hashlib
import json
import struct
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .asr import RunMode
from .autodiff import ParameterStore, Tensor
from .corpus import Manifest, load_utterance
from .dsp import WaveformBuffer
from .enhance import enhance_t, si_snr, si_snr_loss
from .pipeline import (
    PipelineConfig,
    base_features,
    build_params,
    dev_accuracy,
    utterance_loss,
)

CKPT_MAGIC = b"IRIS"
CKPT_VERSION = 1

PARTITION_SET = frozenset({"se", "sslr", "asr"})
LOSS_SET = frozenset({"enhancement", "asr"})

# the five canonical end-to-end variants (plain recognizer, random-init joint
# model, and the three fine-tune combinations from pre-trained parts)
REGIME_NAMES = (
    "SSLR-ASR",
    "IRIS-random",
    "IRIS-init-FT_SE",
    "IRIS-init-FT_ASR",
    "IRIS-init-FT_SE+ASR",
)


@dataclass(frozen=True)
class TrainRegime:
    """Which partitions start from checkpoints, which get updates, which losses run."""

    name: str
    init: frozenset = frozenset()
    update: frozenset = frozenset()
    losses: frozenset = frozenset({"asr"})

    def __post_init__(self):
        if not self.init <= PARTITION_SET:
            raise ValueError(f"unknown init partitions {set(self.init) - PARTITION_SET}")
        if not self.update <= {"se", "asr"}:
            raise ValueError(f"update must be within {{se, asr}}, got {set(self.update)}")
        if "sslr" in self.update:
            raise ValueError("the sslr partition is never updated")
        if not self.losses <= LOSS_SET:
            raise ValueError(f"unknown losses {set(self.losses) - LOSS_SET}")

    @property
    def includes_se(self) -> bool:
        return "se" in (self.init | self.update)

    def to_dict(self) -> dict:
        return {"name": self.name,
                "init": ",".join(sorted(self.init)),
                "update": ",".join(sorted(self.update)),
                "losses": ",".join(sorted(self.losses))}

    @classmethod
    def from_dict(cls, d: dict) -> "TrainRegime":
        def parse(s):
            return frozenset(x for x in s.split(",") if x)
        return cls(d["name"], parse(d["init"]), parse(d["update"]), parse(d["losses"]))


def canonical_regime(name: str) -> TrainRegime:
    table = {
        "SSLR-ASR": (("sslr",), ("asr",), ("asr",)),
        "IRIS-random": (("sslr",), ("se", "asr"), ("enhancement", "asr")),
        "IRIS-init-FT_SE": (("se", "sslr", "asr"), ("se",), ("enhancement", "asr")),
        "IRIS-init-FT_ASR": (("se", "sslr", "asr"), ("asr",), ("asr",)),
        "IRIS-init-FT_SE+ASR": (("se", "sslr", "asr"), ("se", "asr"), ("enhancement", "asr")),
    }
    if name not in table:
        raise KeyError(f"unknown regime {name!r}; expected one of {REGIME_NAMES}")
    init, update, losses = table[name]
    return TrainRegime(name, frozenset(init), frozenset(update), frozenset(losses))


def combo_regime(ft_se: bool, ft_asr: bool) -> TrainRegime:
    """Fine-tune combination rows: all partitions initialized, updates vary."""
    update = set()
    losses = {"asr"}
    if ft_se:
        update.add("se")
        losses.add("enhancement")
    if ft_asr:
        update.add("asr")
    name = {(False, False): "no-FT", (False, True): "FT_ASR",
            (True, False): "FT_SE", (True, True): "FT_SE+ASR"}[(ft_se, ft_asr)]
    return TrainRegime(name, frozenset({"se", "sslr", "asr"}), frozenset(update),
                       frozenset(losses))


# ---------------------------------------------------------------------------
# learning rate and Adam


def lr_schedule(step: int, peak_lr: float, warmup_steps: int) -> float:
    """Linear warmup to the peak, then inverse-square-root decay."""
    if step < 1:
        raise ValueError(f"step must be >= 1, got {step}")
    return peak_lr * min(step / warmup_steps, np.sqrt(warmup_steps / step))


@dataclass
class OptimizerState:
    peak_lr: float
    warmup_steps: int
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    step: int = 0
    m: dict = field(default_factory=dict)
    v: dict = field(default_factory=dict)


def adam_step(store: ParameterStore, grads: dict, state: OptimizerState,
              regime: TrainRegime):
    """One Adam update over the unfrozen partitions named in the regime."""
    for name in grads:
        part = ParameterStore.partition_of(name)
        if part not in regime.update:
            raise ValueError(f"gradient for non-updated partition {part!r} ({name})")
        if store.frozen.get(part, False):
            raise ValueError(f"gradient for frozen partition {part!r} ({name})")
    state.step += 1
    lr = lr_schedule(state.step, state.peak_lr, state.warmup_steps)
    b1, b2 = state.beta1, state.beta2
    for name, g in grads.items():
        t = store[name]
        g = np.asarray(g, dtype=np.float64)
        m = state.m.get(name)
        if m is None:
            m = np.zeros_like(g)
            state.m[name] = m
            state.v[name] = np.zeros_like(g)
        v = state.v[name]
        m *= b1
        m += (1.0 - b1) * g
        v *= b2
        v += (1.0 - b2) * g * g
        m_hat = m / (1.0 - b1 ** state.step)
        v_hat = v / (1.0 - b2 ** state.step)
        t.data -= (lr * m_hat / (np.sqrt(v_hat) + state.eps)).astype(t.data.dtype)


def clip_grad_norm(grads: dict, max_norm: float) -> float:
    total = np.sqrt(sum(float((g.astype(np.float64) ** 2).sum()) for g in grads.values()))
    if total > max_norm:
        scale = max_norm / (total + 1e-12)
        for g in grads.values():
            g *= scale
    return float(total)


def collect_grads(store: ParameterStore, regime: TrainRegime) -> dict:
    grads = {}
    for name, t in store.entries.items():
        if t.grad is not None and ParameterStore.partition_of(name) in regime.update:
            grads[name] = t.grad
    return grads


def set_trainable(store: ParameterStore, regime: TrainRegime):
    """requires_grad on update partitions plus the enhancer when gradients
    must flow through it into the features."""
    for name, t in store.entries.items():
        part = ParameterStore.partition_of(name)
        t.requires_grad = part in regime.update
    for part in PARTITION_SET:
        store.set_frozen(part, part not in regime.update)


# ---------------------------------------------------------------------------
# checkpoints


@dataclass
class Checkpoint:
    params: ParameterStore
    epoch: int
    validation_accuracy: float
    fingerprint: bytes
    metrics: dict = field(default_factory=dict)


def save_checkpoint(ckpt: Checkpoint, path):
    """Binary format: magic, u32 version, 32-byte fingerprint, u32 entry count,
    then per entry u32 name length, UTF-8 name, u32 rank, u32 extents, raw
    little-endian float32 values.  Metadata goes to a .meta.json sidecar."""
    path = Path(path)
    names = ckpt.params.names()
    with open(path, "wb") as f:
        f.write(CKPT_MAGIC)
        f.write(struct.pack("<I", CKPT_VERSION))
        f.write(ckpt.fingerprint)
        f.write(struct.pack("<I", len(names)))
        for name in names:
            data = ckpt.params[name].data.astype("<f4")
            nb = name.encode()
            f.write(struct.pack("<I", len(nb)))
            f.write(nb)
            f.write(struct.pack("<I", data.ndim))
            f.write(struct.pack(f"<{data.ndim}I", *data.shape))
            f.write(data.tobytes())
    meta = {"epoch": ckpt.epoch, "validation_accuracy": ckpt.validation_accuracy,
            "metrics": ckpt.metrics}
    path.with_suffix(path.suffix + ".meta.json").write_text(
        json.dumps(meta, sort_keys=True, indent=1))


def load_checkpoint(path, expected_fingerprint: bytes | None = None) -> Checkpoint:
    path = Path(path)
    with open(path, "rb") as f:
        if f.read(4) != CKPT_MAGIC:
            raise ValueError(f"{path}: bad checkpoint magic")
        (version,) = struct.unpack("<I", f.read(4))
        if version != CKPT_VERSION:
            raise ValueError(f"{path}: unsupported checkpoint version {version}")
        fingerprint = f.read(32)
        if expected_fingerprint is not None and fingerprint != expected_fingerprint:
            raise ValueError(f"{path}: fingerprint mismatch with current configuration")
        (count,) = struct.unpack("<I", f.read(4))
        store = ParameterStore()
        for _ in range(count):
            (nlen,) = struct.unpack("<I", f.read(4))
            name = f.read(nlen).decode()
            (rank,) = struct.unpack("<I", f.read(4))
            shape = struct.unpack(f"<{rank}I", f.read(4 * rank))
            n = int(np.prod(shape)) if rank else 1
            data = np.frombuffer(f.read(4 * n), dtype="<f4").reshape(shape)
            store.add(name, data.copy())
    meta_path = path.with_suffix(path.suffix + ".meta.json")
    meta = json.loads(meta_path.read_text()) if meta_path.exists() else {}
    if "sslr" in {n.split(".", 1)[0] for n in store.entries}:
        store.set_frozen("sslr", True)
    return Checkpoint(store, meta.get("epoch", 0),
                      meta.get("validation_accuracy", 0.0), fingerprint,
                      meta.get("metrics", {}))


def select_best_checkpoints(checkpoints: list, k: int) -> list:
    """Top-k by validation accuracy; ties go to the later epoch."""
    if k > len(checkpoints):
        raise ValueError(f"asked for {k} of {len(checkpoints)} checkpoints")
    ranked = sorted(checkpoints, key=lambda c: (c.validation_accuracy, c.epoch),
                    reverse=True)
    return ranked[:k]


def average_checkpoints(checkpoints: list) -> ParameterStore:
    """Elementwise mean of every parameter; fingerprints must agree."""
    if not checkpoints:
        raise ValueError("no checkpoints to average")
    fp = checkpoints[0].fingerprint
    for c in checkpoints[1:]:
        if c.fingerprint != fp:
            raise ValueError("fingerprint mismatch across checkpoints")
    names = checkpoints[0].params.names()
    out = ParameterStore()
    for name in names:
        acc = np.zeros_like(checkpoints[0].params[name].data, dtype=np.float64)
        for c in checkpoints:
            acc += c.params[name].data
        out.add(name, (acc / len(checkpoints)).astype(np.float32))
    out.frozen = dict(checkpoints[0].params.frozen)
    return out


# ---------------------------------------------------------------------------
# data plumbing


@dataclass
class TrainConfig:
    batch_size: int = 8
    epochs: int = 10
    peak_lr: float = 1e-3
    warmup_steps: int = 20000
    grad_clip: float = 5.0
    se_loss_weight: float = 1.0   # enhancement-loss weight in joint fine-tuning
    average_k: int = 10


def load_split(manifest: Manifest, split: str, simulated_only: bool = False):
    """Materialize (noisy, clean-or-None, text) triples for one split."""
    items = []
    for r in manifest.split(split):
        if simulated_only and not r.clean_path:
            continue
        noisy, clean = load_utterance(manifest, r)
        items.append((noisy.samples, clean.samples if clean else None, r.text))
    return items


def make_batches(items, batch_size: int, rng: np.random.Generator):
    """Sort by length, bucket, then shuffle bucket order (deterministic)."""
    order = sorted(range(len(items)), key=lambda i: len(items[i][0]))
    buckets = [order[i:i + batch_size] for i in range(0, len(order), batch_size)]
    rng.shuffle(buckets)
    return buckets


def _epoch_rng(seed: int, epoch: int, tag: str) -> np.random.Generator:
    # stable tag digest: python's hash() is salted per process
    digest = int.from_bytes(hashlib.sha256(tag.encode()).digest()[:2], "little")
    return np.random.default_rng(np.random.SeedSequence([seed, epoch, digest]))


# ---------------------------------------------------------------------------
# training entry points


def pretrain_se(manifest: Manifest, pipe: PipelineConfig, train_cfg: TrainConfig,
                seed: int, ckpt_dir=None) -> Checkpoint:
    """Train the enhancer alone with the SI-SNR loss on simulated pairs;
    returns the best checkpoint by dev SI-SNR."""
    items = load_split(manifest, "train", simulated_only=True)
    if not items:
        raise ValueError("corpus has no (noisy, clean) training pairs")
    dev = load_split(manifest, "dev", simulated_only=True)
    regime = TrainRegime("SE-pretrain", frozenset(), frozenset({"se"}),
                         frozenset({"enhancement"}))
    store = build_params(pipe, seed)
    set_trainable(store, regime)
    opt = OptimizerState(train_cfg.peak_lr, train_cfg.warmup_steps)
    fp = pipe.fingerprint()

    history = []
    best = None
    for epoch in range(1, train_cfg.epochs + 1):
        rng = _epoch_rng(seed, epoch, "shuffle")
        total = 0.0
        count = 0
        for bucket in make_batches(items, train_cfg.batch_size, rng):
            store.zero_grad()
            pairs = []
            for i in bucket:
                noisy, clean, _text = items[i]
                est, _ = enhance_t(Tensor(noisy.astype(np.float32)), store, pipe.se)
                pairs.append((est, clean))
            loss = si_snr_loss(pairs)
            loss.backward()
            grads = collect_grads(store, regime)
            clip_grad_norm(grads, train_cfg.grad_clip)
            adam_step(store, grads, opt, regime)
            total += loss.item() * len(bucket)
            count += len(bucket)
        dev_snr = _dev_si_snr(store, pipe, dev)
        entry = {"epoch": epoch, "train_loss": total / count, "dev_si_snr": dev_snr}
        history.append(entry)
        ckpt = Checkpoint(store.copy(), epoch, _squash_db(dev_snr), fp,
                          {"dev_si_snr": dev_snr})
        if ckpt_dir is not None:
            save_checkpoint(ckpt, Path(ckpt_dir) / f"se-epoch{epoch:03d}.ckpt")
        if best is None or ckpt.validation_accuracy > best.validation_accuracy:
            best = ckpt
    best.metrics["history"] = history
    return best


def _squash_db(db: float) -> float:
    """Monotone map of a dB metric into [0, 1] so checkpoint ranking works."""
    return float(1.0 / (1.0 + np.exp(-db / 20.0)))


def _dev_si_snr(store: ParameterStore, pipe: PipelineConfig, dev_items) -> float:
    vals = []
    for noisy, clean, _text in dev_items:
        est, _ = enhance_t(Tensor(noisy.astype(np.float32)), store, pipe.se)
        vals.append(si_snr(WaveformBuffer(est.data.astype(np.float64)),
                           WaveformBuffer(clean)))
    return float(np.mean(vals)) if vals else 0.0


def _train_joint(store: ParameterStore, items, dev, pipe: PipelineConfig,
                 train_cfg: TrainConfig, regime: TrainRegime, seed: int,
                 use_se: bool, ckpt_dir, ckpt_prefix: str) -> tuple[Checkpoint, list]:
    """Shared inner loop of recognizer pre-training and joint fine-tuning."""
    set_trainable(store, regime)
    opt = OptimizerState(train_cfg.peak_lr, train_cfg.warmup_steps)
    fp = pipe.fingerprint()
    use_enh = "enhancement" in regime.losses and use_se
    # frozen front end -> features are fixed per utterance, cache them
    frozen_front = "se" not in regime.update
    cache: dict | None = {} if frozen_front else None
    dev_cache: dict | None = {} if frozen_front else None

    history = []
    checkpoints = []
    for epoch in range(1, train_cfg.epochs + 1):
        shuffle_rng = _epoch_rng(seed, epoch, "shuffle")
        drop_rng = _epoch_rng(seed, epoch, "dropout")
        mode = RunMode(training=True, rng=drop_rng)
        total = 0.0
        count = 0
        aug_base = (seed * 1009 + epoch) * 100003
        for bucket in make_batches(items, train_cfg.batch_size, shuffle_rng):
            store.zero_grad()
            batch_loss = 0.0
            for i in bucket:
                noisy, clean, text = items[i]
                base = None
                if cache is not None:
                    base = cache.get(i)
                    if base is None:
                        base = base_features(noisy, store, pipe, use_se)
                        cache[i] = base
                loss, _parts = utterance_loss(
                    noisy, clean, text, store, pipe, mode, use_se,
                    train_cfg.se_loss_weight, use_enh,
                    specaug_seed=aug_base + i, cached_base=base)
                scaled = loss * (1.0 / len(bucket))
                scaled.backward()
                batch_loss += loss.item()
            grads = collect_grads(store, regime)
            clip_grad_norm(grads, train_cfg.grad_clip)
            adam_step(store, grads, opt, regime)
            total += batch_loss
            count += len(bucket)
        acc = dev_accuracy(store, pipe, dev, use_se, base_cache=dev_cache)
        entry = {"epoch": epoch, "train_loss": total / count, "dev_accuracy": acc}
        history.append(entry)
        ckpt = Checkpoint(store.copy(), epoch, acc, fp, {"dev_accuracy": acc})
        checkpoints.append(ckpt)
        if ckpt_dir is not None:
            save_checkpoint(ckpt, Path(ckpt_dir) / f"{ckpt_prefix}-epoch{epoch:03d}.ckpt")
    best = select_best_checkpoints(checkpoints, 1)[0]
    best.metrics["history"] = history
    return best, checkpoints


def pretrain_asr(manifest: Manifest, pipe: PipelineConfig, train_cfg: TrainConfig,
                 seed: int, ckpt_dir=None) -> Checkpoint:
    """Train the recognizer (and projection) on raw waves, no enhancement in
    front; the sslr partition stays frozen throughout."""
    items = load_split(manifest, "train")
    for _noisy, _clean, text in items:
        if not text:
            raise ValueError("utterance with empty transcript")
    dev = load_split(manifest, "dev")
    regime = TrainRegime("ASR-pretrain", frozenset({"sslr"}), frozenset({"asr"}),
                         frozenset({"asr"}))
    store = build_params(pipe, seed, include_se=False)
    best, _ = _train_joint(store, items, dev, pipe, train_cfg, regime, seed,
                           use_se=False, ckpt_dir=ckpt_dir, ckpt_prefix="asr")
    return best


def finetune_iris(se_ckpt: Checkpoint | None, asr_ckpt: Checkpoint | None,
                  manifest: Manifest, regime: TrainRegime, pipe: PipelineConfig,
                  train_cfg: TrainConfig, seed: int,
                  ckpt_dir=None) -> tuple[Checkpoint, list]:
    """Joint fine-tuning per the given regime; partitions named in
    regime.init come from the checkpoints, the rest are freshly seeded."""
    if "sslr" in regime.update:
        raise ValueError("regime requests an sslr update")
    fp = pipe.fingerprint()
    store = build_params(pipe, seed, include_se=regime.includes_se)
    if "se" in regime.init:
        if se_ckpt is None:
            raise ValueError("regime initializes se but no enhancer checkpoint given")
        if se_ckpt.fingerprint != fp:
            raise ValueError("enhancer checkpoint fingerprint mismatch")
        _copy_partition(se_ckpt.params, store, "se")
    if "asr" in regime.init:
        if asr_ckpt is None:
            raise ValueError("regime initializes asr but no recognizer checkpoint given")
        if asr_ckpt.fingerprint != fp:
            raise ValueError("recognizer checkpoint fingerprint mismatch")
        _copy_partition(asr_ckpt.params, store, "asr")
    # sslr is deterministic in the feature seed, so "init" and "fresh" coincide

    items = load_split(manifest, "train")
    dev = load_split(manifest, "dev")
    best, all_ckpts = _train_joint(store, items, dev, pipe, train_cfg, regime, seed,
                                   use_se=regime.includes_se, ckpt_dir=ckpt_dir,
                                   ckpt_prefix=f"ft-{regime.name}")
    return best, all_ckpts


def _copy_partition(src: ParameterStore, dst: ParameterStore, partition: str):
    names = src.names(partition + ".")
    if not names:
        raise ValueError(f"checkpoint has no {partition!r} partition")
    for name in names:
        if name not in dst.entries:
            raise ValueError(f"checkpoint parameter {name} unknown to this configuration")
        dst[name].data[...] = src[name].data


def init_joint_store(se_ckpt: Checkpoint, asr_ckpt: Checkpoint,
                     pipe: PipelineConfig) -> ParameterStore:
    """Plain concatenation of pre-trained parts, no fine-tuning."""
    fp = pipe.fingerprint()
    if se_ckpt.fingerprint != fp or asr_ckpt.fingerprint != fp:
        raise ValueError("checkpoint fingerprint mismatch with current configuration")
    store = build_params(pipe, seed=0)
    _copy_partition(se_ckpt.params, store, "se")
    _copy_partition(asr_ckpt.params, store, "asr")
    return store


def resolve_regime(name: str) -> TrainRegime:
    """Accept both the five canonical names and the combination-row names."""
    combos = {"no-FT": (False, False), "FT_ASR": (False, True),
              "FT_SE": (True, False), "FT_SE+ASR": (True, True)}
    if name in combos:
        return combo_regime(*combos[name])
    return canonical_regime(name)
