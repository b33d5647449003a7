"""16-bit PCM mono WAV reading and writing."""

from __future__ import annotations

import wave
from pathlib import Path

import numpy as np
import torch

from .spectral import SignalError, Waveform

SAMPLE_RATE = 16000
PCM_SCALE = 32768.0


class AudioFormatError(SignalError):
    pass


def to_pcm16(samples) -> np.ndarray:
    x = np.asarray(samples, dtype=np.float64)
    return np.clip(np.round(x * PCM_SCALE), -32768, 32767).astype(np.int16)


def from_pcm16(ints: np.ndarray) -> np.ndarray:
    return ints.astype(np.float64) / PCM_SCALE


def write_pcm16(path, ints: np.ndarray, sample_rate: int = SAMPLE_RATE) -> None:
    ints = np.asarray(ints)
    if ints.dtype != np.int16 or ints.ndim != 1:
        raise AudioFormatError(f"{path}: expected a 1-D int16 array, got {ints.dtype} {ints.shape}")
    with wave.open(str(path), "wb") as fh:
        fh.setnchannels(1)
        fh.setsampwidth(2)
        fh.setframerate(sample_rate)
        fh.writeframes(ints.astype("<i2").tobytes())


def read_pcm16(path, sample_rate: int | None = SAMPLE_RATE) -> np.ndarray:
    path = Path(path)
    try:
        fh = wave.open(str(path), "rb")
    except (wave.Error, EOFError) as exc:
        raise AudioFormatError(f"{path}: not a PCM WAV file ({exc})") from exc
    with fh:
        if fh.getnchannels() != 1:
            raise AudioFormatError(f"{path}: expected mono, got {fh.getnchannels()} channels")
        if fh.getsampwidth() != 2:
            raise AudioFormatError(f"{path}: expected 16-bit PCM, got {8 * fh.getsampwidth()}-bit")
        if sample_rate is not None and fh.getframerate() != sample_rate:
            raise AudioFormatError(
                f"{path}: expected {sample_rate} Hz, got {fh.getframerate()} Hz (no resampling)"
            )
        data = fh.readframes(fh.getnframes())
    return np.frombuffer(data, dtype="<i2").astype(np.int16)


def read_wav(path, sample_rate: int = SAMPLE_RATE, dtype=torch.float64) -> Waveform:
    ints = read_pcm16(path, sample_rate)
    return Waveform(torch.as_tensor(from_pcm16(ints), dtype=dtype), sample_rate)


def write_wav(path, x: Waveform) -> None:
    samples = x.samples.detach().cpu().numpy()
    if samples.ndim != 1:
        raise AudioFormatError(f"{path}: can only write mono waveforms, got shape {samples.shape}")
    write_pcm16(path, to_pcm16(samples), x.sample_rate)
