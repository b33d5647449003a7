"""Training objectives: log-MSE, multi-resolution STFT, embedding KL, and their sum.

All losses operate on batched tensors (``(B, N)`` waveforms, ``(B, T, F)``
spectrogram planes) and are differentiable with respect to the estimate.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Protocol

import torch
import torch.nn.functional as F
from torch import nn

from . import branches
from .spectral import ComplexSpectrogram, SignalError, StftConfig, multires_configs, stft_tensor

EPS = 1e-8


class EmbedderHandle(Protocol):
    """Maps waveforms ``(B, N)`` to embeddings ``(B, frames, dim)``; deterministic."""

    frame_rate: float
    dim: int

    def __call__(self, samples: torch.Tensor) -> torch.Tensor: ...


@dataclass
class MultiResLossConfig:
    resolutions: list[StftConfig] = field(default_factory=multires_configs)

    def __post_init__(self):
        if not self.resolutions:
            raise ValueError("need at least one resolution")


@dataclass
class LossFlags:
    use_mse: bool = True
    use_aux: bool = True
    use_asr: bool = True

    @property
    def label(self) -> str:
        parts = [name for name, on in (("L_MSE", self.use_mse), ("L_ASR", self.use_asr), ("L_aux", self.use_aux)) if on]
        return "+".join(parts)


# Loss combinations of the ablation table, in row order.
ABLATIONS = (
    LossFlags(use_mse=True, use_aux=False, use_asr=False),
    LossFlags(use_mse=True, use_aux=False, use_asr=True),
    LossFlags(use_mse=True, use_aux=True, use_asr=False),
    LossFlags(use_mse=True, use_aux=True, use_asr=True),
)


@dataclass
class LossBreakdown:
    l_mse: torch.Tensor
    l_aux: torch.Tensor
    l_asr: torch.Tensor
    l_total: torch.Tensor

    def as_floats(self) -> dict[str, float]:
        return {k: float(torch.as_tensor(getattr(self, k)).detach()) for k in ("l_mse", "l_aux", "l_asr", "l_total")}


def _planes(spec):
    if isinstance(spec, ComplexSpectrogram):
        return spec.real, spec.imag
    return spec


def _samples(x):
    return getattr(x, "samples", x)


def magnitude(real, imag, eps: float = EPS):
    return torch.sqrt(real**2 + imag**2 + eps)


def mse_loss(clean, estimate, eps: float = EPS) -> torch.Tensor:
    s_r, s_i = _planes(clean)
    e_r, e_i = _planes(estimate)
    if s_r.shape != e_r.shape:
        raise SignalError(f"mse_loss: shape mismatch {tuple(s_r.shape)} vs {tuple(e_r.shape)}")
    err = (
        F.mse_loss(e_r, s_r)
        + F.mse_loss(e_i, s_i)
        + F.mse_loss(magnitude(e_r, e_i, eps), magnitude(s_r, s_i, eps))
    )
    return torch.log(err + eps)


def _stft_mag(x, cfg: StftConfig, eps: float):
    return magnitude(*stft_tensor(x, cfg), eps)


def _check_lengths(s, s_hat):
    if s.shape != s_hat.shape:
        raise SignalError(f"waveform shapes differ: {tuple(s.shape)} vs {tuple(s_hat.shape)}")


def _spectral_convergence(mag, mag_hat, eps):
    return torch.linalg.vector_norm(mag - mag_hat) / (torch.linalg.vector_norm(mag) + eps)


def _log_mag(mag, mag_hat, eps):
    return branches.abs_(torch.log(mag + eps) - torch.log(mag_hat + eps)).mean()


def spectral_convergence(s, s_hat, cfg: StftConfig, eps: float = EPS) -> torch.Tensor:
    """Frobenius relative error of STFT magnitudes; 0 for a silent reference."""
    s, s_hat = _samples(s), _samples(s_hat)
    _check_lengths(s, s_hat)
    return _spectral_convergence(_stft_mag(s, cfg, eps), _stft_mag(s_hat, cfg, eps), eps)


def log_mag_loss(s, s_hat, cfg: StftConfig, eps: float = EPS) -> torch.Tensor:
    s, s_hat = _samples(s), _samples(s_hat)
    _check_lengths(s, s_hat)
    return _log_mag(_stft_mag(s, cfg, eps), _stft_mag(s_hat, cfg, eps), eps)


def stft_loss(s, s_hat, cfg: StftConfig, eps: float = EPS) -> torch.Tensor:
    s, s_hat = _samples(s), _samples(s_hat)
    _check_lengths(s, s_hat)
    mag, mag_hat = _stft_mag(s, cfg, eps), _stft_mag(s_hat, cfg, eps)
    return _spectral_convergence(mag, mag_hat, eps) + _log_mag(mag, mag_hat, eps)


def multires_stft_loss(s, s_hat, cfg: MultiResLossConfig | None = None, eps: float = EPS) -> torch.Tensor:
    cfg = cfg or MultiResLossConfig()
    losses = [stft_loss(s, s_hat, r, eps) for r in cfg.resolutions]
    return torch.stack(losses).mean()


def kl_from_logits(logits_ref: torch.Tensor, logits_est: torch.Tensor) -> torch.Tensor:
    """Mean over frames of KL(softmax(ref) || softmax(est)) along the last axis."""
    log_p = torch.log_softmax(logits_ref, dim=-1)
    log_q = torch.log_softmax(logits_est, dim=-1)
    return (log_p.exp() * (log_p - log_q)).sum(dim=-1).mean()


def asr_embedding_loss(s, s_hat, embedder: EmbedderHandle) -> torch.Tensor:
    s, s_hat = _samples(s), _samples(s_hat)
    _check_lengths(s, s_hat)
    e_ref, e_est = embedder(s), embedder(s_hat)
    if e_ref.shape != e_est.shape:
        raise SignalError(f"embedding frame counts differ: {tuple(e_ref.shape)} vs {tuple(e_est.shape)}")
    return kl_from_logits(e_ref, e_est).clamp_min(0.0)


def total_loss(
    clean_spec,
    est_spec,
    s,
    s_hat,
    cfg: MultiResLossConfig | None = None,
    embedder: EmbedderHandle | None = None,
    flags: LossFlags | None = None,
) -> LossBreakdown:
    flags = flags or LossFlags()
    s_hat_t = _samples(s_hat)
    zero = s_hat_t.new_zeros(())
    l_mse = mse_loss(clean_spec, est_spec) if flags.use_mse else zero
    l_aux = multires_stft_loss(s, s_hat, cfg) if flags.use_aux else zero
    if flags.use_asr:
        if embedder is None:
            raise ValueError("use_asr requires an embedder")
        l_asr = asr_embedding_loss(s, s_hat, embedder)
    else:
        l_asr = zero
    return LossBreakdown(l_mse, l_aux, l_asr, l_mse + l_aux + l_asr)


class ConvEmbedder(nn.Module):
    """Frozen stand-in for a pretrained speech encoder.

    Three strided 1-D convolutions (total stride 160, i.e. 10 ms at 16 kHz)
    with tanh nonlinearities, weights drawn from ``seed``.
    """

    def __init__(self, dim: int = 32, seed: int = 1234, sample_rate: int = 16000):
        super().__init__()
        self.dim = dim
        self.frame_rate = sample_rate / 160
        gen = torch.Generator().manual_seed(seed)
        self.layers = nn.ModuleList(
            [
                nn.Conv1d(1, 16, kernel_size=10, stride=5),
                nn.Conv1d(16, 32, kernel_size=8, stride=4),
                nn.Conv1d(32, dim, kernel_size=16, stride=8),
            ]
        )
        with torch.no_grad():
            for conv in self.layers:
                fan_in = conv.weight.shape[1] * conv.weight.shape[2]
                bound = (3.0 / fan_in) ** 0.5
                conv.weight.copy_(torch.rand(conv.weight.shape, generator=gen) * 2 * bound - bound)
                conv.bias.copy_(torch.rand(conv.bias.shape, generator=gen) * 0.2 - 0.1)
        self.requires_grad_(False)

    def forward(self, samples: torch.Tensor) -> torch.Tensor:
        x = samples.reshape(-1, 1, samples.shape[-1])
        # unit-variance scaling so typical speech levels reach the nonlinearity
        x = x * 10.0
        for i, conv in enumerate(self.layers):
            x = F.conv1d(x, conv.weight.to(x.dtype), conv.bias.to(x.dtype), stride=conv.stride)
            if i < len(self.layers) - 1:
                x = torch.tanh(x)
        return x.transpose(1, 2).reshape(samples.shape[:-1] + (-1, self.dim))
