"""Complex ratio masks: the oracle mask of a clean/noisy pair and mask application."""

from __future__ import annotations

from dataclasses import dataclass

import torch

from .spectral import ComplexSpectrogram, SignalError

CRM_EPS = 1e-8


@dataclass
class ComplexMask:
    real: torch.Tensor
    imag: torch.Tensor

    def __post_init__(self):
        if self.real.shape != self.imag.shape:
            raise SignalError(f"mask real {tuple(self.real.shape)} != imag {tuple(self.imag.shape)}")

    @property
    def shape(self):
        return self.real.shape


def _check_shapes(a, b, what: str) -> None:
    if a.real.shape != b.real.shape:
        raise SignalError(f"{what}: shape mismatch {tuple(a.real.shape)} vs {tuple(b.real.shape)}")


def crm_tensor(s_r, s_i, y_r, y_i, eps: float = CRM_EPS):
    denom = y_r**2 + y_i**2 + eps
    return (y_r * s_r + y_i * s_i) / denom, (y_r * s_i - y_i * s_r) / denom


def apply_mask_tensor(y_r, y_i, m_r, m_i):
    return y_r * m_r - y_i * m_i, y_r * m_i + y_i * m_r


def compute_crm(S: ComplexSpectrogram, Y: ComplexSpectrogram, eps: float = CRM_EPS) -> ComplexMask:
    """Regularized complex quotient ``S / Y``; ``eps`` keeps silent bins bounded."""
    if eps <= 0:
        raise ValueError(f"eps must be positive, got {eps}")
    _check_shapes(S, Y, "compute_crm")
    return ComplexMask(*crm_tensor(S.real, S.imag, Y.real, Y.imag, eps))


def apply_mask(Y: ComplexSpectrogram, M: ComplexMask) -> ComplexSpectrogram:
    _check_shapes(Y, M, "apply_mask")
    real, imag = apply_mask_tensor(Y.real, Y.imag, M.real, M.imag)
    return ComplexSpectrogram(real, imag, Y.config)
