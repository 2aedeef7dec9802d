"""Time-domain speech enhancement: a small Conv-TasNet (learned conv encoder,
dilated-TCN mask estimator, transposed-conv decoder) trained with SI-SNR.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import autodiff as ad
from .autodiff import ParameterStore, Tensor
from .dsp import WaveformBuffer

SI_SNR_EPS = 1e-8
SI_SNR_CAP_DB = 60.0


@dataclass
class TasNetConfig:
    """Mask-estimation network geometry; defaults are the full-size values."""

    n_filters: int = 256        # N: encoder basis size
    kernel: int = 40            # L: encoder kernel (2.5 ms)
    stride: int = 20
    bottleneck: int = 256       # B
    conv_channels: int = 512    # H
    conv_kernel: int = 3        # P
    blocks_per_repeat: int = 4  # X
    repeats: int = 2            # R

    def __post_init__(self):
        if min(self.n_filters, self.kernel, self.stride, self.bottleneck,
               self.conv_channels, self.conv_kernel, self.blocks_per_repeat,
               self.repeats) < 1:
            raise ValueError("all TasNet dimensions must be positive")
        if self.stride > self.kernel:
            raise ValueError(f"stride {self.stride} exceeds kernel {self.kernel}")
        if self.conv_kernel % 2 == 0:
            raise ValueError("conv_kernel must be odd for symmetric padding")

    def block_names(self):
        for r in range(self.repeats):
            for x in range(self.blocks_per_repeat):
                yield r, x, 2 ** x  # dilation doubles within a repeat


@dataclass
class EnhancementOutput:
    enhanced: WaveformBuffer
    mask: np.ndarray
    encoder_frames: int


def init_se_params(store: ParameterStore, config: TasNetConfig, rng: np.random.Generator):
    """Populate the 'se' partition; bias-free convs, He-scaled."""
    def he(*shape, fan_in):
        return rng.normal(0.0, np.sqrt(2.0 / fan_in), size=shape)

    c = config
    store.add("se.encoder.weight", he(c.n_filters, 1, c.kernel, fan_in=c.kernel))
    store.add("se.tcn.bottleneck.weight", he(c.bottleneck, c.n_filters, fan_in=c.n_filters))
    for r, x, _d in c.block_names():
        p = f"se.tcn.block{r}_{x}"
        store.add(f"{p}.conv_in.weight", he(c.conv_channels, c.bottleneck, fan_in=c.bottleneck))
        store.add(f"{p}.prelu1.alpha", np.full(c.conv_channels, 0.25))
        store.add(f"{p}.norm1.gain", np.ones(c.conv_channels))
        store.add(f"{p}.norm1.bias", np.zeros(c.conv_channels))
        store.add(f"{p}.dconv.weight", he(c.conv_channels, c.conv_kernel, fan_in=c.conv_kernel))
        store.add(f"{p}.prelu2.alpha", np.full(c.conv_channels, 0.25))
        store.add(f"{p}.norm2.gain", np.ones(c.conv_channels))
        store.add(f"{p}.norm2.bias", np.zeros(c.conv_channels))
        store.add(f"{p}.res.weight", he(c.bottleneck, c.conv_channels, fan_in=c.conv_channels))
        store.add(f"{p}.skip.weight", he(c.bottleneck, c.conv_channels, fan_in=c.conv_channels))
    store.add("se.tcn.out_prelu.alpha", np.full(c.bottleneck, 0.25))
    store.add("se.tcn.mask_conv.weight", he(c.n_filters, c.bottleneck, fan_in=c.bottleneck))
    store.add("se.decoder.weight", he(c.n_filters, 1, c.kernel, fan_in=c.n_filters))


def global_layer_norm(x: Tensor, gain: Tensor, bias: Tensor, epsilon: float = 1e-8) -> Tensor:
    """Normalize jointly over channels and frames, then per-channel affine."""
    if x.data.ndim != 2:
        raise ValueError(f"global_layer_norm expects channels x frames, got {x.data.shape}")
    if gain.data.shape != (x.data.shape[0],) or bias.data.shape != (x.data.shape[0],):
        raise ValueError("gain/bias must have one value per channel")
    mean = ad.tmean(x)
    centered = x - mean
    var = ad.tmean(ad.square(centered))
    normed = centered / ad.sqrt(var + epsilon)
    return normed * ad.reshape(gain, (-1, 1)) + ad.reshape(bias, (-1, 1))


def tasnet_encode(wave: Tensor, params: ParameterStore, config: TasNetConfig) -> Tensor:
    """Bias-free strided conv + ReLU: waveform -> N x frames representation."""
    n = wave.data.shape[0]
    if n < config.kernel:
        raise ValueError(f"waveform of {n} samples shorter than encoder kernel {config.kernel}")
    x = ad.reshape(wave, (1, -1))
    return ad.relu(ad.conv1d(x, params["se.encoder.weight"], config.stride))


def tasnet_mask(rep: Tensor, params: ParameterStore, config: TasNetConfig) -> Tensor:
    """Dilated-TCN mask estimator; sigmoid output in (0, 1), length-preserving."""
    c = config
    if rep.data.shape[0] != c.n_filters:
        raise ValueError(f"representation channels {rep.data.shape[0]} != n_filters {c.n_filters}")

    def pw(name, x):  # pointwise (1x1) conv as a matmul
        w = params[name]
        if w.data.shape[1] != x.data.shape[0]:
            raise ValueError(f"{name}: expects {w.data.shape[1]} input channels, "
                             f"got {x.data.shape[0]}")
        return w @ x

    h = pw("se.tcn.bottleneck.weight", rep)
    skip_sum = None
    for r, x_i, dil in c.block_names():
        p = f"se.tcn.block{r}_{x_i}"
        y = pw(f"{p}.conv_in.weight", h)
        y = ad.prelu(y, params[f"{p}.prelu1.alpha"])
        y = global_layer_norm(y, params[f"{p}.norm1.gain"], params[f"{p}.norm1.bias"])
        pad = dil * (c.conv_kernel - 1) // 2
        y = ad.depthwise_conv1d(y, params[f"{p}.dconv.weight"], dilation=dil, padding=pad)
        y = ad.prelu(y, params[f"{p}.prelu2.alpha"])
        y = global_layer_norm(y, params[f"{p}.norm2.gain"], params[f"{p}.norm2.bias"])
        skip = pw(f"{p}.skip.weight", y)
        skip_sum = skip if skip_sum is None else skip_sum + skip
        h = h + pw(f"{p}.res.weight", y)
    out = ad.prelu(skip_sum, params["se.tcn.out_prelu.alpha"])
    return ad.sigmoid(pw("se.tcn.mask_conv.weight", out))


def enhance_t(wave: Tensor, params: ParameterStore, config: TasNetConfig) -> tuple[Tensor, Tensor]:
    """Differentiable enhancement; returns (enhanced 1-D tensor, mask)."""
    n = wave.data.shape[0]
    rep = tasnet_encode(wave, params, config)
    mask = tasnet_mask(rep, params, config)
    decoded = ad.conv_transpose1d(mask * rep, params["se.decoder.weight"], config.stride)
    decoded = ad.reshape(decoded, (-1,))
    m = decoded.data.shape[0]
    if m > n:
        decoded = ad.slice_rows(decoded, 0, n)
    elif m < n:
        decoded = ad.pad1d(decoded, 0, n - m, axis=0)
    return decoded, mask


def enhance(wave: WaveformBuffer, params: ParameterStore, config: TasNetConfig) -> EnhancementOutput:
    """Enhance one utterance; output is trimmed/padded to the input length."""
    x = Tensor(wave.samples.astype(np.float32))
    enhanced, mask = enhance_t(x, params, config)
    frames = mask.data.shape[1]
    out = enhanced.data.astype(np.float64)
    if not np.all(np.isfinite(out)):
        raise ValueError("enhancement produced non-finite samples")
    return EnhancementOutput(WaveformBuffer(out), mask.data, frames)


# ---------------------------------------------------------------------------
# SI-SNR


def si_snr(estimate: WaveformBuffer, reference: WaveformBuffer,
           cap_db: float = SI_SNR_CAP_DB) -> float:
    """Scale-invariant SNR in dB, capped; computed in float64."""
    est = np.asarray(estimate.samples if isinstance(estimate, WaveformBuffer) else estimate,
                     dtype=np.float64)
    ref = np.asarray(reference.samples if isinstance(reference, WaveformBuffer) else reference,
                     dtype=np.float64)
    if est.shape != ref.shape or est.size < 2:
        raise ValueError(f"signals must share a length >= 2, got {est.shape} vs {ref.shape}")
    ref = ref - ref.mean()
    if float(np.dot(ref, ref)) == 0.0:
        raise ValueError("constant reference: projection undefined")
    est = est - est.mean()
    s_target = (np.dot(est, ref) / np.dot(ref, ref)) * ref
    e_noise = est - s_target
    val = 10.0 * np.log10(np.dot(s_target, s_target) / (np.dot(e_noise, e_noise) + SI_SNR_EPS))
    return float(min(val, cap_db))


def neg_si_snr_t(estimate: Tensor, reference: np.ndarray) -> Tensor:
    """Differentiable -SI-SNR of one pair; uncapped, epsilon-guarded."""
    ref = np.asarray(reference, dtype=np.float64)
    ref = ref - ref.mean()
    denom = float(np.dot(ref, ref))
    if denom == 0.0:
        raise ValueError("constant reference: projection undefined")
    ref_t = Tensor(ref.astype(estimate.dtype))
    est = estimate - ad.tmean(estimate)
    proj = ad.tsum(est * ref_t) * (1.0 / denom)
    s_target = ref_t * proj
    e_noise = est - s_target
    num = ad.tsum(ad.square(s_target))
    den = ad.tsum(ad.square(e_noise)) + SI_SNR_EPS
    ratio = num / den
    return ad.log(ratio) * (-10.0 / np.log(10.0))


def si_snr_loss(batch) -> Tensor:
    """Mean of -SI-SNR over (estimate tensor, reference array) pairs."""
    if not batch:
        raise ValueError("empty batch")
    total = None
    for est, ref in batch:
        term = neg_si_snr_t(est, ref)
        total = term if total is None else total + term
    return total * (1.0 / len(batch))
