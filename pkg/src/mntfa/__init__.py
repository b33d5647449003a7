"""Causal complex-ratio-mask speech enhancement with axial self-attention."""

from .masking import ComplexMask, apply_mask, compute_crm
from .model import MNTFA, ModelConfig, count_macs_per_second, count_params
from .spectral import ComplexSpectrogram, ConfigError, SignalError, StftConfig, Waveform, istft, stft

__all__ = [
    "MNTFA",
    "ComplexMask",
    "ComplexSpectrogram",
    "ConfigError",
    "ModelConfig",
    "SignalError",
    "StftConfig",
    "Waveform",
    "apply_mask",
    "compute_crm",
    "count_macs_per_second",
    "count_params",
    "istft",
    "stft",
]
