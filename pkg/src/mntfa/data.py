"""Noisy-mixture synthesis: SNR-controlled mixing and a seeded surrogate corpus."""

from __future__ import annotations

import json
import os
from concurrent.futures import ProcessPoolExecutor
from dataclasses import asdict, dataclass
from pathlib import Path
from typing import NamedTuple

import numpy as np

from .audio import SAMPLE_RATE, from_pcm16, read_pcm16, to_pcm16, write_pcm16
from .spectral import SignalError

PEAK_LIMIT = 0.95
SNR_RANGE = (-5.0, 5.0)


@dataclass
class MixSpec:
    snr_db: float
    target_seconds: float = 10.0
    seed: int = 0

    def __post_init__(self):
        if self.target_seconds <= 0:
            raise ValueError("target_seconds must be positive")


@dataclass
class CorpusRecord:
    id: str
    clean_path: str
    noise_path: str
    noisy_path: str
    snr_db: float
    seed: int


class Mixture(NamedTuple):
    noisy: np.ndarray
    noise: np.ndarray
    clean: np.ndarray
    gain: float


def _array(x) -> np.ndarray:
    x = getattr(x, "samples", x)
    if hasattr(x, "detach"):
        x = x.detach().cpu().numpy()
    return np.asarray(x, dtype=np.float64)


def power(x) -> float:
    return float(np.mean(_array(x) ** 2))


def snr_db(clean, noise) -> float:
    return 10.0 * np.log10(power(clean) / power(noise))


def mix_at_snr(s, n, snr_db: float, peak: float = PEAK_LIMIT) -> Mixture:
    """Scale ``n`` so that ``s`` over the scaled noise sits at ``snr_db``; return the mixture.

    If the mixture peak exceeds ``peak`` all three signals are rescaled jointly,
    so ``noisy == clean + noise`` and the SNR both survive.
    """
    s, n = _array(s), _array(n)
    if s.shape != n.shape:
        raise SignalError(f"clean and noise lengths differ: {s.shape} vs {n.shape}")
    p_s, p_n = power(s), power(n)
    if p_s == 0 or p_n == 0:
        raise SignalError("SNR is undefined for a zero-power clean or noise signal")
    gain = float(np.sqrt(p_s / (p_n * 10.0 ** (snr_db / 10.0))))
    noise = gain * n
    noisy = s + noise
    top = np.max(np.abs(noisy))
    if top > peak:
        scale = peak / top
        s, noise, noisy = s * scale, noise * scale, noisy * scale
    return Mixture(noisy, noise, s, gain)


def truncate_or_pad(x, seconds: float, sample_rate: int = SAMPLE_RATE, rng=None) -> np.ndarray:
    """Random-offset crop to ``seconds`` when longer, zero-pad the tail when shorter."""
    if seconds <= 0:
        raise ValueError("seconds must be positive")
    x = _array(x)
    target = int(round(seconds * sample_rate))
    if len(x) > target:
        rng = np.random.default_rng(rng)
        start = int(rng.integers(0, len(x) - target + 1))
        return x[start : start + target].copy()
    return np.pad(x, (0, target - len(x)))


def sample_snr(rng, low: float = SNR_RANGE[0], high: float = SNR_RANGE[1]) -> float:
    return float(rng.uniform(low, high))


# --- surrogate signals -------------------------------------------------------


def _db_to_amp(db):
    return 10.0 ** (db / 20.0)


def synth_clean(rng, seconds: float, sample_rate: int = SAMPLE_RATE) -> np.ndarray:
    """Speech-like surrogate: voiced harmonic syllables with glides, vibrato and gaps."""
    n = int(round(seconds * sample_rate))
    out = np.zeros(n)
    t = 0
    while t < n:
        t += int(rng.uniform(0.05, 0.2) * sample_rate)
        length = int(rng.uniform(0.15, 0.45) * sample_rate)
        length = min(length, n - t)
        if length <= 0:
            break
        tt = np.arange(length) / sample_rate
        f0_start, f0_end = rng.uniform(90, 260, size=2)
        f0 = np.linspace(f0_start, f0_end, length) * (1 + 0.02 * np.sin(2 * np.pi * rng.uniform(4, 7) * tt))
        phase = 2 * np.pi * np.cumsum(f0) / sample_rate
        formants = rng.uniform([300, 900, 2000], [900, 2200, 3500])
        seg = np.zeros(length)
        for h in range(1, int(4000 / max(f0_start, f0_end)) + 1):
            fh = h * f0
            env = sum(np.exp(-0.5 * ((fh - fm) / 150.0) ** 2) for fm in formants) + 0.05
            seg += env * np.sin(h * phase + rng.uniform(0, 2 * np.pi)) / np.sqrt(h)
        am = 1 + 0.3 * np.sin(2 * np.pi * rng.uniform(2, 6) * tt + rng.uniform(0, 2 * np.pi))
        seg *= am * np.hanning(length)
        out[t : t + length] += seg
        t += length
    rms = np.sqrt(np.mean(out**2)) or 1.0
    return out / rms * _db_to_amp(rng.uniform(-32, -22))


def synth_noise(rng, seconds: float, sample_rate: int = SAMPLE_RATE, kind: str | None = None) -> np.ndarray:
    """White, pink, or amplitude-modulated band-limited noise."""
    n = int(round(seconds * sample_rate))
    kind = kind or rng.choice(["white", "pink", "band"])
    white = rng.standard_normal(n)
    if kind == "white":
        x = white
    elif kind == "pink":
        spec = np.fft.rfft(white)
        f = np.fft.rfftfreq(n, 1.0 / sample_rate)
        f[0] = f[1]
        x = np.fft.irfft(spec / np.sqrt(f), n)
    elif kind == "band":
        spec = np.fft.rfft(white)
        f = np.fft.rfftfreq(n, 1.0 / sample_rate)
        center = rng.uniform(200, 6000)
        width = rng.uniform(100, 1500)
        x = np.fft.irfft(spec * np.exp(-0.5 * ((f - center) / width) ** 2), n)
        tt = np.arange(n) / sample_rate
        x *= 1 + 0.8 * np.sin(2 * np.pi * rng.uniform(0.5, 8) * tt + rng.uniform(0, 2 * np.pi))
    else:
        raise ValueError(f"unknown noise kind {kind!r}")
    rms = np.sqrt(np.mean(x**2)) or 1.0
    return x / rms * _db_to_amp(rng.uniform(-35, -20))


# --- corpus ------------------------------------------------------------------


def _make_record(args) -> CorpusRecord:
    index, entropy, out_dir, seconds, snr_low, snr_high = args
    rng = np.random.default_rng(np.random.SeedSequence(entropy, spawn_key=(index,)))
    clean = synth_clean(rng, seconds)
    noise = synth_noise(rng, seconds)
    snr = sample_snr(rng, snr_low, snr_high)
    mix = mix_at_snr(clean, noise, snr)
    s_int, n_int = to_pcm16(mix.clean), to_pcm16(mix.noise)
    # summing quantized parts keeps noisy == clean + noise exactly in PCM
    y_int = s_int.astype(np.int32) + n_int.astype(np.int32)
    if np.abs(y_int).max() > 32767:
        raise SignalError(f"pair {index}: mixture overflows 16-bit range")
    rec = CorpusRecord(
        id=f"pair{index:05d}",
        clean_path=f"clean/pair{index:05d}.wav",
        noise_path=f"noise/pair{index:05d}.wav",
        noisy_path=f"noisy/pair{index:05d}.wav",
        snr_db=snr,
        seed=index,
    )
    out_dir = Path(out_dir)
    try:
        write_pcm16(out_dir / rec.clean_path, s_int)
        write_pcm16(out_dir / rec.noise_path, n_int)
        write_pcm16(out_dir / rec.noisy_path, y_int.astype(np.int16))
    except OSError as exc:
        raise OSError(f"writing {rec.id} under {out_dir}: {exc}") from exc
    return rec


def num_workers(default: int = 1) -> int:
    try:
        return max(1, int(os.environ.get("MNTFA_NUM_WORKERS", default)))
    except ValueError:
        return default


def synth_corpus(
    out_dir,
    num_pairs: int,
    seconds: float = 4.0,
    seed: int = 0,
    snr_range: tuple[float, float] = SNR_RANGE,
    workers: int | None = None,
    manifest_name: str = "manifest.jsonl",
) -> list[CorpusRecord]:
    """Write ``num_pairs`` clean/noise/noisy WAV triples and a JSONL manifest.

    Each record draws from its own child seed, so the output does not depend
    on ``workers``.
    """
    out_dir = Path(out_dir)
    for sub in ("clean", "noise", "noisy"):
        (out_dir / sub).mkdir(parents=True, exist_ok=True)
    jobs = [(i, seed, str(out_dir), seconds, *snr_range) for i in range(num_pairs)]
    workers = workers or num_workers()
    if workers > 1:
        with ProcessPoolExecutor(workers) as pool:
            records = list(pool.map(_make_record, jobs))
    else:
        records = [_make_record(job) for job in jobs]
    write_manifest(out_dir / manifest_name, records)
    return records


def write_manifest(path, records) -> Path:
    path = Path(path)
    with open(path, "w") as fh:
        for rec in records:
            fh.write(json.dumps(asdict(rec)) + "\n")
    return path


def read_manifest(path, check_files: bool = True) -> list[CorpusRecord]:
    """Load records; relative paths are resolved against the manifest's directory."""
    path = Path(path)
    root = path.parent
    records = []
    with open(path) as fh:
        for lineno, line in enumerate(fh, 1):
            if not line.strip():
                continue
            raw = json.loads(line)
            for key in ("clean_path", "noise_path", "noisy_path"):
                if raw.get(key) is not None:
                    raw[key] = str(root / raw[key])
            raw.setdefault("noise_path", None)
            raw.setdefault("snr_db", float("nan"))
            raw.setdefault("seed", 0)
            raw.setdefault("id", Path(raw["noisy_path"]).stem)
            rec = CorpusRecord(**raw)
            if check_files:
                for p in (rec.clean_path, rec.noisy_path):
                    if not Path(p).exists():
                        raise FileNotFoundError(f"{path}:{lineno}: missing {p}")
            records.append(rec)
    return records


def load_pair(rec: CorpusRecord) -> tuple[np.ndarray, np.ndarray]:
    """(clean, noisy) float arrays for one record."""
    return from_pcm16(read_pcm16(rec.clean_path)), from_pcm16(read_pcm16(rec.noisy_path))
