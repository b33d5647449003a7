"""STFT analysis/synthesis between waveforms and complex spectrograms.

Frames are center-aligned: the signal is reflect-padded by ``win_length // 2``
on both ends so frame ``t`` is centered on sample ``t * hop``. Synthesis is
weighted overlap-add normalized by the summed squared window, which inverts
the analysis exactly whenever that envelope is nonzero.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import torch
import torch.nn.functional as F

WINDOWS = ("hann",)


class ConfigError(ValueError):
    """Invalid or inconsistent configuration."""


class SignalError(ValueError):
    """Input data that cannot be processed (wrong shape, too short, ...)."""


@dataclass(frozen=True)
class StftConfig:
    fft_size: int = 512
    win_length: int = 512
    hop: int = 256
    window: str = "hann"

    def __post_init__(self):
        if self.window not in WINDOWS:
            raise ConfigError(f"unsupported window {self.window!r}; expected one of {WINDOWS}")
        if self.fft_size <= 0 or self.fft_size & (self.fft_size - 1):
            raise ConfigError(f"fft_size must be a power of two, got {self.fft_size}")
        if not self.fft_size >= self.win_length > self.hop > 0:
            raise ConfigError(
                f"need fft_size >= win_length > hop > 0, got "
                f"({self.fft_size}, {self.win_length}, {self.hop})"
            )
        if self.win_length % 2:
            raise ConfigError("win_length must be even for symmetric center padding")
        if not satisfies_nola(self):
            raise ConfigError(f"{self} has a vanishing overlap-add envelope")

    @property
    def num_bins(self) -> int:
        return self.fft_size // 2 + 1

    def num_frames(self, num_samples: int) -> int:
        return num_samples // self.hop + 1


@dataclass
class Waveform:
    """Time-domain samples ``(..., N)`` at ``sample_rate`` Hz."""

    samples: torch.Tensor
    sample_rate: int = 16000

    def __post_init__(self):
        self.samples = torch.as_tensor(self.samples)
        if not self.samples.is_floating_point():
            self.samples = self.samples.to(torch.get_default_dtype())
        if self.sample_rate <= 0:
            raise SignalError(f"sample_rate must be positive, got {self.sample_rate}")
        if not torch.isfinite(self.samples).all():
            raise SignalError("waveform contains non-finite samples")

    def __len__(self) -> int:
        return self.samples.shape[-1]

    @property
    def seconds(self) -> float:
        return len(self) / self.sample_rate


@dataclass
class ComplexSpectrogram:
    """Real and imaginary planes of shape ``(..., T, F)``."""

    real: torch.Tensor
    imag: torch.Tensor
    config: StftConfig = field(default_factory=StftConfig)

    def __post_init__(self):
        if self.real.shape != self.imag.shape:
            raise SignalError(f"real {tuple(self.real.shape)} != imag {tuple(self.imag.shape)}")
        if self.real.shape[-1] != self.config.num_bins:
            raise SignalError(
                f"spectrogram has {self.real.shape[-1]} bins, config expects {self.config.num_bins}"
            )

    @property
    def num_frames(self) -> int:
        return self.real.shape[-2]

    @property
    def num_bins(self) -> int:
        return self.real.shape[-1]

    def magnitude(self, eps: float = 0.0) -> torch.Tensor:
        return torch.sqrt(self.real**2 + self.imag**2 + eps)

    def to_complex(self) -> torch.Tensor:
        return torch.complex(self.real, self.imag)

    @classmethod
    def from_complex(cls, z: torch.Tensor, config: StftConfig) -> "ComplexSpectrogram":
        return cls(z.real, z.imag, config)


def make_window(config: StftConfig, dtype=torch.float64) -> torch.Tensor:
    if config.window != "hann":
        raise ConfigError(f"unsupported window {config.window!r}")
    k = torch.arange(config.win_length, dtype=torch.float64)
    w = 0.5 - 0.5 * torch.cos(2 * math.pi * k / config.win_length)
    return w.to(dtype)


def overlap_add_envelope(config: StftConfig) -> torch.Tensor:
    """Summed squared window over one hop period, shape ``(hop,)``."""
    w2 = make_window(config) ** 2
    env = torch.zeros(config.hop, dtype=torch.float64)
    for start in range(0, config.win_length, config.hop):
        chunk = w2[start : start + config.hop]
        env[: len(chunk)] += chunk
    return env


def satisfies_nola(config: StftConfig, tol: float = 1e-10) -> bool:
    return bool(overlap_add_envelope(config).min() > tol)


def _as_batch(x: torch.Tensor) -> tuple[torch.Tensor, tuple[int, ...]]:
    lead = tuple(x.shape[:-1])
    return x.reshape(-1, x.shape[-1]), lead


def stft_tensor(x: torch.Tensor, config: StftConfig) -> tuple[torch.Tensor, torch.Tensor]:
    """Differentiable STFT of ``(..., N)`` samples -> real, imag of ``(..., T, F)``."""
    flat, lead = _as_batch(x)
    pad = config.win_length // 2
    if flat.shape[-1] <= pad:
        raise SignalError(
            f"signal of {flat.shape[-1]} samples is shorter than one frame "
            f"(needs > {pad} for win_length={config.win_length})"
        )
    padded = F.pad(flat.unsqueeze(1), (pad, pad), mode="reflect").squeeze(1)
    frames = padded.unfold(-1, config.win_length, config.hop)
    window = make_window(config, dtype=x.dtype)
    spec = torch.fft.rfft(frames * window, n=config.fft_size, dim=-1)
    shape = lead + spec.shape[-2:]
    return spec.real.reshape(shape), spec.imag.reshape(shape)


def istft_tensor(
    real: torch.Tensor, imag: torch.Tensor, config: StftConfig, out_len: int
) -> torch.Tensor:
    """Weighted overlap-add inverse of :func:`stft_tensor`, trimmed/padded to ``out_len``."""
    if real.shape[-1] != config.num_bins:
        raise SignalError(
            f"spectrogram has {real.shape[-1]} bins, config expects {config.num_bins}"
        )
    lead = tuple(real.shape[:-2])
    num_frames = real.shape[-2]
    spec = torch.complex(real, imag).reshape(-1, num_frames, config.num_bins)
    frames = torch.fft.irfft(spec, n=config.fft_size, dim=-1)[..., : config.win_length]
    window = make_window(config, dtype=frames.dtype)
    frames = frames * window

    total = (num_frames - 1) * config.hop + config.win_length
    signal = F.fold(
        frames.transpose(1, 2),
        output_size=(1, total),
        kernel_size=(1, config.win_length),
        stride=(1, config.hop),
    ).reshape(-1, total)
    env = F.fold(
        (window**2).reshape(1, -1, 1).expand(1, -1, num_frames),
        output_size=(1, total),
        kernel_size=(1, config.win_length),
        stride=(1, config.hop),
    ).reshape(total)

    pad = config.win_length // 2
    signal = signal[:, pad:]
    env = env[pad:]
    nonzero = env > 1e-10
    signal = torch.where(nonzero, signal / torch.where(nonzero, env, torch.ones_like(env)), 0.0)
    if signal.shape[-1] >= out_len:
        signal = signal[:, :out_len]
    else:
        signal = F.pad(signal, (0, out_len - signal.shape[-1]))
    return signal.reshape(lead + (out_len,))


def stft(x: Waveform, config: StftConfig | None = None) -> ComplexSpectrogram:
    config = config or StftConfig()
    if len(x) == 0:
        raise SignalError("empty waveform")
    real, imag = stft_tensor(x.samples, config)
    return ComplexSpectrogram(real, imag, config)


def istft(
    spec: ComplexSpectrogram,
    config: StftConfig | None = None,
    out_len: int | None = None,
    sample_rate: int = 16000,
) -> Waveform:
    config = config or spec.config
    if spec.num_bins != config.num_bins:
        raise SignalError(
            f"spectrogram has {spec.num_bins} bins but config {config} expects {config.num_bins}"
        )
    if out_len is None:
        out_len = (spec.num_frames - 1) * config.hop
    return Waveform(istft_tensor(spec.real, spec.imag, config, out_len), sample_rate)


def multires_configs() -> list[StftConfig]:
    """The three analysis resolutions used by the auxiliary loss."""
    return [
        StftConfig(fft_size=512, win_length=240, hop=50),
        StftConfig(fft_size=1024, win_length=600, hop=120),
        StftConfig(fft_size=2048, win_length=1200, hop=240),
    ]
