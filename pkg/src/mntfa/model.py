"""MNTFA: causal conv encoder, axial self-attention blocks, conv decoder emitting a CRM.

Feature maps are laid out ``(batch, channels, time, freq)`` throughout.
"""

from __future__ import annotations

import math
from dataclasses import asdict, dataclass, field
from typing import Mapping

import numpy as np
import torch
import torch.nn.functional as F
from torch import nn

from . import branches
from .masking import ComplexMask, apply_mask_tensor
from .spectral import ComplexSpectrogram, ConfigError, StftConfig, Waveform, istft_tensor, stft_tensor


@dataclass
class ModelConfig:
    encoder_channels: tuple[int, ...] = (32, 64, 80)
    kernel_sizes: tuple[tuple[int, int], ...] = ((2, 5), (2, 3), (2, 3))
    freq_strides: tuple[int, ...] = (2, 2, 2)
    asa_blocks: int = 2
    asa_in_channels: int = 80
    asa_attention_channels: int = 40
    causal: bool = True
    stft: StftConfig = field(default_factory=StftConfig)

    def __post_init__(self):
        self.encoder_channels = tuple(int(c) for c in self.encoder_channels)
        self.kernel_sizes = tuple(tuple(int(k) for k in ks) for ks in self.kernel_sizes)
        self.freq_strides = tuple(int(s) for s in self.freq_strides)
        if isinstance(self.stft, Mapping):
            self.stft = StftConfig(**self.stft)

    def validate(self) -> "ModelConfig":
        n = len(self.encoder_channels)
        if n == 0 or len(self.kernel_sizes) != n or len(self.freq_strides) != n:
            raise ConfigError("encoder_channels, kernel_sizes and freq_strides must be non-empty and aligned")
        if self.asa_blocks < 1:
            raise ConfigError("asa_blocks must be >= 1")
        if self.asa_in_channels != self.encoder_channels[-1]:
            raise ConfigError(
                f"asa_in_channels={self.asa_in_channels} must equal the last encoder width "
                f"{self.encoder_channels[-1]}"
            )
        if not 0 < self.asa_attention_channels <= self.asa_in_channels:
            raise ConfigError("need 0 < asa_attention_channels <= asa_in_channels")
        return self

    def freq_sizes(self) -> list[int]:
        """Frequency extent at the input and after every encoder layer."""
        sizes = [self.stft.num_bins]
        for (_, kf), sf in zip(self.kernel_sizes, self.freq_strides):
            sizes.append((sizes[-1] + 2 * (kf // 2) - kf) // sf + 1)
        return sizes

    def to_dict(self) -> dict:
        d = asdict(self)
        d["kernel_sizes"] = [list(k) for k in self.kernel_sizes]
        d["encoder_channels"] = list(self.encoder_channels)
        d["freq_strides"] = list(self.freq_strides)
        return d

    @classmethod
    def from_dict(cls, d: Mapping) -> "ModelConfig":
        return cls(**dict(d))


class FrameNorm(nn.Module):
    """Normalizes each frame over channels and frequency, per-channel affine."""

    def __init__(self, channels: int, eps: float = 1e-5):
        super().__init__()
        self.eps = eps
        self.gain = nn.Parameter(torch.ones(channels))
        self.bias = nn.Parameter(torch.zeros(channels))

    def forward(self, x):
        mean = x.mean(dim=(1, 3), keepdim=True)
        var = x.var(dim=(1, 3), keepdim=True, unbiased=False)
        x = (x - mean) / torch.sqrt(var + self.eps)
        return x * self.gain[:, None, None] + self.bias[:, None, None]


class ChannelNorm(nn.Module):
    """Layer norm over channels at every (time, freq) position."""

    def __init__(self, channels: int, eps: float = 1e-5):
        super().__init__()
        self.norm = nn.LayerNorm(channels, eps=eps)

    def forward(self, x):
        return self.norm(x.permute(0, 2, 3, 1)).permute(0, 3, 1, 2)


class PReLU(nn.Module):
    def __init__(self, channels: int, init: float = 0.25):
        super().__init__()
        self.weight = nn.Parameter(torch.full((channels,), init))

    def forward(self, x):
        return branches.prelu(x, self.weight)


class EncoderLayer(nn.Module):
    def __init__(self, cin, cout, kernel, freq_stride):
        super().__init__()
        self.time_pad = kernel[0] - 1
        self.conv = nn.Conv2d(cin, cout, kernel, stride=(1, freq_stride), padding=(0, kernel[1] // 2))
        self.norm = FrameNorm(cout)
        self.act = PReLU(cout)

    def forward(self, x):
        x = F.pad(x, (0, 0, self.time_pad, 0))
        return self.act(self.norm(self.conv(x)))


class DecoderLayer(nn.Module):
    def __init__(self, cin, cout, kernel, freq_stride, output_padding, final=False):
        super().__init__()
        self.conv = nn.ConvTranspose2d(
            cin,
            cout,
            kernel,
            stride=(1, freq_stride),
            padding=(0, kernel[1] // 2),
            output_padding=(0, output_padding),
        )
        self.final = final
        if not final:
            self.norm = FrameNorm(cout)
            self.act = PReLU(cout)

    def forward(self, x):
        num_frames = x.shape[2]
        # transposed conv spills kernel_t - 1 frames into the future; drop them
        x = self.conv(x)[:, :, :num_frames]
        if self.final:
            return x
        return self.act(self.norm(x))


class AxialAttention(nn.Module):
    """Single-head self-attention along one axis of a feature map, with residual."""

    def __init__(self, in_channels: int, attn_channels: int, axis: str, causal: bool = False):
        super().__init__()
        if axis not in ("time", "frequency"):
            raise ConfigError(f"axis must be 'time' or 'frequency', got {axis!r}")
        self.axis = axis
        self.causal = causal
        self.attn_channels = attn_channels
        self.norm = ChannelNorm(in_channels)
        self.query = nn.Conv2d(in_channels, attn_channels, 1)
        self.key = nn.Conv2d(in_channels, attn_channels, 1)
        self.value = nn.Conv2d(in_channels, attn_channels, 1)
        self.proj = nn.Conv2d(attn_channels, in_channels, 1)

    def scores(self, q, k):
        scale = 1.0 / math.sqrt(self.attn_channels)
        if self.axis == "frequency":
            s = torch.einsum("bctf,bctg->btfg", q, k) * scale
        else:
            s = torch.einsum("bctf,bcsf->bfts", q, k) * scale
            if self.causal:
                n = s.shape[-1]
                future = torch.ones(n, n, dtype=torch.bool, device=s.device).triu_(1)
                s = s.masked_fill(future, float("-inf"))
        return s

    def forward(self, x, return_weights: bool = False):
        h = self.norm(x)
        q, k, v = self.query(h), self.key(h), self.value(h)
        weights = torch.softmax(self.scores(q, k), dim=-1)
        if not torch.isfinite(weights).all():
            raise FloatingPointError(f"non-finite {self.axis} attention weights")
        if self.axis == "frequency":
            out = torch.einsum("btfg,bctg->bctf", weights, v)
        else:
            out = torch.einsum("bfts,bcsf->bctf", weights, v)
        y = x + self.proj(out)
        return (y, weights) if return_weights else y


class ASABlock(nn.Module):
    """Frequency attention (intra-frame) followed by causal time attention (inter-frame).

    Each attention carries its own residual, so the block output is the input
    plus both attention branches.
    """

    def __init__(self, in_channels: int, attn_channels: int, causal: bool = True):
        super().__init__()
        self.freq_attn = AxialAttention(in_channels, attn_channels, "frequency")
        self.time_attn = AxialAttention(in_channels, attn_channels, "time", causal=causal)

    def forward(self, x):
        return self.time_attn(self.freq_attn(x))


class MNTFA(nn.Module):
    def __init__(self, config: ModelConfig | None = None, seed: int = 0):
        super().__init__()
        self.config = (config or ModelConfig()).validate()
        cfg = self.config
        chans = (2,) + cfg.encoder_channels
        self.encoder = nn.ModuleList(
            EncoderLayer(chans[i], chans[i + 1], cfg.kernel_sizes[i], cfg.freq_strides[i])
            for i in range(len(cfg.encoder_channels))
        )
        self.blocks = nn.ModuleList(
            ASABlock(cfg.asa_in_channels, cfg.asa_attention_channels, cfg.causal)
            for _ in range(cfg.asa_blocks)
        )
        sizes = cfg.freq_sizes()
        decoder = []
        for i in reversed(range(len(cfg.encoder_channels))):
            kt, kf = cfg.kernel_sizes[i]
            stride = cfg.freq_strides[i]
            natural = (sizes[i + 1] - 1) * stride - 2 * (kf // 2) + kf
            output_padding = sizes[i] - natural
            if not 0 <= output_padding < stride:
                raise ConfigError(f"decoder layer {i} cannot restore {sizes[i]} bins from {sizes[i + 1]}")
            decoder.append(
                DecoderLayer(2 * chans[i + 1], chans[i] if i else 2, (kt, kf), stride, output_padding, final=i == 0)
            )
        self.decoder = nn.ModuleList(decoder)
        init_weights(self, seed)

    def encode(self, spec: ComplexSpectrogram | tuple[torch.Tensor, torch.Tensor]):
        """Spectrogram ``(B, T, F)`` -> (features ``(B, C_i, T, F')``, skip list)."""
        real, imag = (spec.real, spec.imag) if isinstance(spec, ComplexSpectrogram) else spec
        if real.shape[-1] != self.config.stft.num_bins:
            raise ConfigError(f"encoder expects {self.config.stft.num_bins} bins, got {real.shape[-1]}")
        x = torch.stack([real, imag], dim=1)
        skips = []
        for layer in self.encoder:
            x = layer(x)
            skips.append(x)
        return x, skips

    def decode(self, features, skips) -> ComplexMask:
        if len(skips) != len(self.decoder):
            raise ConfigError(f"decoder needs {len(self.decoder)} skips, got {len(skips)}")
        x = features
        for layer, skip in zip(self.decoder, reversed(skips)):
            if skip.shape[2:] != x.shape[2:]:
                raise ConfigError(f"skip shape {tuple(skip.shape)} does not match features {tuple(x.shape)}")
            x = layer(torch.cat([x, skip], dim=1))
        return ComplexMask(x[:, 0], x[:, 1])

    def mask(self, real, imag) -> ComplexMask:
        features, skips = self.encode((real, imag))
        for block in self.blocks:
            features = block(features)
        return self.decode(features, skips)

    def forward(self, noisy: torch.Tensor):
        """Noisy samples ``(B, N)`` -> (mask, enhanced spectrogram, enhanced samples ``(B, N)``)."""
        cfg = self.config.stft
        y_r, y_i = stft_tensor(noisy, cfg)
        m = self.mask(y_r, y_i)
        s_r, s_i = apply_mask_tensor(y_r, y_i, m.real, m.imag)
        enhanced = istft_tensor(s_r, s_i, cfg, noisy.shape[-1])
        return m, ComplexSpectrogram(s_r, s_i, cfg), enhanced

    @torch.no_grad()
    def enhance(self, y: Waveform) -> Waveform:
        dtype = next(self.parameters()).dtype
        samples = y.samples.to(dtype)
        single = samples.dim() == 1
        _, _, out = self(samples[None] if single else samples)
        return Waveform(out[0] if single else out, y.sample_rate)


def init_weights(model: nn.Module, seed: int = 0) -> None:
    """Fan-in scaled uniform conv weights, zero biases, from a private generator."""
    gen = torch.Generator().manual_seed(seed)
    with torch.no_grad():
        for module in model.modules():
            if isinstance(module, (nn.Conv2d, nn.ConvTranspose2d)):
                w = module.weight
                if isinstance(module, nn.ConvTranspose2d):
                    fan_in = w.shape[0] * w.shape[2] * w.shape[3] // module.stride[1]
                else:
                    fan_in = w.shape[1] * w.shape[2] * w.shape[3]
                bound = math.sqrt(3.0 / fan_in)
                w.copy_(torch.rand(w.shape, generator=gen, dtype=w.dtype) * 2 * bound - bound)
                if module.bias is not None:
                    module.bias.zero_()


def count_params(weights) -> int:
    if isinstance(weights, nn.Module):
        weights = weights.state_dict()
    return int(sum(np.prod(tuple(v.shape), dtype=np.int64) for v in weights.values()))


def mac_breakdown(config: ModelConfig, seconds: float = 10.0) -> dict[str, float]:
    """Analytic multiply-accumulates for one utterance of ``seconds`` of audio.

    Convolutions count ``C_in * C_out * k_t * k_f`` per output (encoder) or per
    input (transposed decoder) position. Attention counts the full score and
    weighted-sum products, including the masked causal half.
    """
    stft = config.stft
    frames = int(seconds * 16000) // stft.hop + 1
    sizes = config.freq_sizes()
    chans = (2,) + tuple(config.encoder_channels)
    out = {"encoder": 0.0, "projections": 0.0, "freq_attention": 0.0, "time_attention": 0.0, "decoder": 0.0}
    for i, (kt, kf) in enumerate(config.kernel_sizes):
        out["encoder"] += chans[i] * chans[i + 1] * kt * kf * sizes[i + 1] * frames
        cout = chans[i] if i else 2
        out["decoder"] += 2 * chans[i + 1] * cout * kt * kf * sizes[i + 1] * frames
    if config.asa_blocks and config.encoder_channels:
        ci, c, fq = config.asa_in_channels, config.asa_attention_channels, sizes[-1]
        per_attention = 4 * ci * c * fq * frames
        n_attn = config.asa_blocks
        out["projections"] = 2 * n_attn * per_attention
        out["freq_attention"] = n_attn * 2 * fq * fq * c * frames
        out["time_attention"] = n_attn * 2 * frames * frames * c * fq
    return out


def count_macs_per_second(config: ModelConfig, seconds: float = 10.0) -> float:
    """MACs per second of 16 kHz audio, amortized over a ``seconds``-long utterance."""
    return sum(mac_breakdown(config, seconds).values()) / seconds
