"""Enhancement metrics, SNR-bucketed reports, and external-metric adapters."""

from __future__ import annotations

import json
import logging
import math
import shlex
import subprocess
import tempfile
from dataclasses import dataclass, field
from pathlib import Path
from typing import Callable, Protocol, Sequence

import numpy as np
import torch

from .audio import SAMPLE_RATE, to_pcm16, write_pcm16
from .data import CorpusRecord, load_pair
from .masking import apply_mask_tensor, crm_tensor
from .spectral import SignalError, StftConfig, istft_tensor, stft_tensor

log = logging.getLogger(__name__)

SI_SDR_CAP = 100.0
SNR_BUCKETS = (-5.0, 0.0, 5.0)


def _array(x) -> np.ndarray:
    x = getattr(x, "samples", x)
    if hasattr(x, "detach"):
        x = x.detach().cpu().numpy()
    return np.asarray(x, dtype=np.float64)


def si_sdr(ref, est, cap: float = SI_SDR_CAP) -> float:
    """Scale-invariant SDR in dB, clipped to ``[-cap, cap]``."""
    ref, est = _array(ref), _array(est)
    if ref.shape != est.shape:
        raise SignalError(f"si_sdr: lengths differ {ref.shape} vs {est.shape}")
    ref_energy = float(np.dot(ref, ref))
    if ref_energy == 0:
        raise SignalError("si_sdr: zero reference")
    target = (np.dot(est, ref) / ref_energy) * ref
    residual = est - target
    num, den = float(np.dot(target, target)), float(np.dot(residual, residual))
    if den == 0:
        return cap
    if num == 0:
        return -cap
    return float(np.clip(10 * np.log10(num / den), -cap, cap))


def third_octave_bands(sample_rate: int, fft_size: int, num_bands: int = 15, min_freq: float = 150.0):
    freqs = np.fft.rfftfreq(fft_size, 1.0 / sample_rate)
    centers = min_freq * 2.0 ** (np.arange(num_bands) / 3.0)
    bands = np.zeros((num_bands, len(freqs)))
    for i, fc in enumerate(centers):
        bands[i] = (freqs >= fc * 2 ** (-1 / 6)) & (freqs < fc * 2 ** (1 / 6))
    return bands


def band_correlation_intelligibility(
    ref, est, sample_rate: int = SAMPLE_RATE, segment_frames: int = 30
) -> float:
    """Coarse intelligibility proxy in [0, 1].

    Mean correlation between short-time third-octave band envelopes of the
    reference and the estimate (segments of ``segment_frames`` STFT frames,
    one-frame hop), clipped to [0, 1].
    """
    ref, est = _array(ref), _array(est)
    if ref.shape != est.shape:
        raise SignalError("band_correlation_intelligibility: lengths differ")
    if len(ref) < sample_rate:
        raise SignalError("band_correlation_intelligibility needs at least 1 s of audio")
    cfg = StftConfig(512, 512, 256)
    bands = third_octave_bands(sample_rate, cfg.fft_size)

    def envelopes(x):
        r, i = stft_tensor(torch.as_tensor(x), cfg)
        power = (r**2 + i**2).numpy()
        return np.sqrt(power @ bands.T).T  # (bands, frames)

    e_ref, e_est = envelopes(ref), envelopes(est)
    frames = e_ref.shape[1]
    n = min(segment_frames, frames)
    win_ref = np.lib.stride_tricks.sliding_window_view(e_ref, n, axis=1)
    win_est = np.lib.stride_tricks.sliding_window_view(e_est, n, axis=1)
    a = win_ref - win_ref.mean(axis=-1, keepdims=True)
    b = win_est - win_est.mean(axis=-1, keepdims=True)
    denom = np.sqrt((a**2).sum(-1) * (b**2).sum(-1))
    corr = np.where(denom > 1e-20, (a * b).sum(-1) / np.maximum(denom, 1e-20), 0.0)
    return float(np.clip(corr.mean(), 0.0, 1.0))


# --- adapters ----------------------------------------------------------------


class MetricAdapter(Protocol):
    """External metric: (reference WAV path, estimate WAV path) -> scalar."""

    name: str

    def __call__(self, ref_path: str, est_path: str) -> float: ...


@dataclass
class ProcessAdapter:
    """Runs ``command REF EST`` and parses one float from its stdout."""

    name: str
    command: str
    timeout: float = 120.0

    def __call__(self, ref_path: str, est_path: str) -> float:
        argv = shlex.split(self.command) + [ref_path, est_path]
        proc = subprocess.run(argv, capture_output=True, text=True, timeout=self.timeout, check=True)
        return float(proc.stdout.strip().split()[-1])


# --- enhancers ---------------------------------------------------------------

# (noisy, clean) -> enhanced. Only oracle enhancers may look at ``clean``.
Enhancer = Callable[[np.ndarray, np.ndarray], np.ndarray]


def identity_enhancer(noisy: np.ndarray, clean: np.ndarray) -> np.ndarray:
    return noisy


def oracle_crm_enhancer(config: StftConfig | None = None, eps: float = 1e-8) -> Enhancer:
    config = config or StftConfig()

    def enhance(noisy, clean):
        y_r, y_i = stft_tensor(torch.as_tensor(noisy), config)
        s_r, s_i = stft_tensor(torch.as_tensor(clean), config)
        m_r, m_i = crm_tensor(s_r, s_i, y_r, y_i, eps)
        e_r, e_i = apply_mask_tensor(y_r, y_i, m_r, m_i)
        return istft_tensor(e_r, e_i, config, len(noisy)).numpy()

    return enhance


def model_enhancer(model) -> Enhancer:
    dtype = next(model.parameters()).dtype

    @torch.no_grad()
    def enhance(noisy, clean):
        x = torch.as_tensor(noisy, dtype=dtype)[None]
        _, _, out = model(x)
        return out[0].double().numpy()

    return enhance


# --- reports -----------------------------------------------------------------


def bucket_of(snr: float, buckets: Sequence[float] = SNR_BUCKETS) -> float | None:
    if snr is None or not math.isfinite(snr):
        return None
    return min(buckets, key=lambda b: abs(b - snr))


@dataclass
class MetricReport:
    records: list[dict] = field(default_factory=list)
    label: str = "enhanced"

    METRICS = ("si_sdr_noisy", "si_sdr_enhanced", "intel_noisy", "intel_enhanced")

    def metric_names(self) -> list[str]:
        names = list(self.METRICS)
        for rec in self.records:
            for key in rec.get("external", {}):
                if key not in names:
                    names.append(key)
        return names

    def _values(self, metric: str, bucket: float | None = None) -> list[float]:
        out = []
        for rec in self.records:
            if bucket is not None and rec["bucket"] != bucket:
                continue
            value = rec.get(metric, rec.get("external", {}).get(metric))
            if value is not None:
                out.append(value)
        return out

    def aggregates(self) -> dict[str, dict[str, float | None]]:
        """``{metric: {"-5": mean, "0": mean, "5": mean, "avg": mean}}``; None when empty."""
        result = {}
        for metric in self.metric_names():
            row = {}
            for b in SNR_BUCKETS:
                vals = self._values(metric, b)
                row[f"{b:g}"] = float(np.mean(vals)) if vals else None
            vals = self._values(metric)
            row["avg"] = float(np.mean(vals)) if vals else None
            result[metric] = row
        return result

    def to_jsonl(self, path) -> Path:
        path = Path(path)
        with open(path, "w") as fh:
            for rec in self.records:
                fh.write(json.dumps({"type": "file", "label": self.label, **rec}) + "\n")
            fh.write(json.dumps({"type": "aggregate", "label": self.label, **self.aggregates()}) + "\n")
        return path

    def render(self) -> str:
        agg = self.aggregates()
        cols = [f"{b:g}" for b in SNR_BUCKETS] + ["avg"]
        lines = [f"{'SNR(dB)':<30}" + "".join(f"{c:>10}" for c in cols[:-1]) + f"{'Avg.':>10}"]
        for metric, row in agg.items():
            cells = "".join(f"{row[c]:>10.3f}" if row[c] is not None else f"{'-':>10}" for c in cols)
            lines.append(f"{metric:<30}{cells}")
        return "\n".join(lines)


def evaluate(
    records: Sequence[CorpusRecord],
    enhancer: Enhancer,
    adapters: Sequence[MetricAdapter] = (),
    label: str = "enhanced",
    intelligibility: bool = True,
) -> MetricReport:
    """Run ``enhancer`` on every noisy file and score it against the clean reference."""
    report = MetricReport(label=label)
    with tempfile.TemporaryDirectory() as tmp:
        for rec in records:
            clean, noisy = load_pair(rec)
            enhanced = np.asarray(enhancer(noisy, clean), dtype=np.float64)
            if enhanced.shape != noisy.shape:
                raise SignalError(f"{rec.id}: enhancer changed length {noisy.shape} -> {enhanced.shape}")
            row = {
                "file_id": rec.id,
                "snr_db": rec.snr_db,
                "bucket": bucket_of(rec.snr_db),
                "si_sdr_noisy": si_sdr(clean, noisy),
                "si_sdr_enhanced": si_sdr(clean, enhanced),
                "intel_noisy": None,
                "intel_enhanced": None,
                "external": {},
            }
            if intelligibility and len(clean) >= SAMPLE_RATE:
                row["intel_noisy"] = band_correlation_intelligibility(clean, noisy)
                row["intel_enhanced"] = band_correlation_intelligibility(clean, enhanced)
            if adapters:
                est_path = Path(tmp) / f"{rec.id}.enhanced.wav"
                write_pcm16(est_path, to_pcm16(enhanced))
                for adapter in adapters:
                    try:
                        row["external"][adapter.name] = float(adapter(rec.clean_path, str(est_path)))
                    except Exception as exc:  # adapter failures must not stop the run
                        log.warning("adapter %s failed on %s: %s", adapter.name, rec.id, exc)
                        row["external"][adapter.name] = None
            report.records.append(row)
    return report


def render_ablation(rows: Sequence[tuple[str, MetricReport]]) -> str:
    """One line per loss combination, averaged over all files."""
    header = f"{'System':<8}{'Loss':<22}{'SI-SDR':>10}{'Intel.':>10}"
    lines = [header]
    if rows:
        base = rows[0][1].aggregates()
        lines.append(f"{'Noisy':<8}{'-':<22}{base['si_sdr_noisy']['avg']:>10.3f}{_fmt(base['intel_noisy']['avg'])}")
    for loss_label, report in rows:
        agg = report.aggregates()
        lines.append(
            f"{'MNTFA':<8}{loss_label:<22}{agg['si_sdr_enhanced']['avg']:>10.3f}{_fmt(agg['intel_enhanced']['avg'])}"
        )
    return "\n".join(lines)


def _fmt(v) -> str:
    return f"{v:>10.3f}" if v is not None else f"{'-':>10}"
