"""Training loop with loss ablation flags, checkpointing and finite-difference gradient checks."""

from __future__ import annotations

import copy
import json
import logging
import math
import time
from dataclasses import asdict, dataclass, field, fields
from pathlib import Path
from typing import Callable

import numpy as np
import torch

from . import branches
from .checkpoint import save_checkpoint
from .data import CorpusRecord, load_pair, read_manifest
from .evalkit import si_sdr
from .losses import ConvEmbedder, LossBreakdown, LossFlags, MultiResLossConfig, total_loss
from .model import MNTFA, ModelConfig
from .spectral import ComplexSpectrogram, stft_tensor

log = logging.getLogger(__name__)


class TrainingDiverged(RuntimeError):
    pass


@dataclass
class TrainConfig:
    manifest: str = ""
    val_manifest: str = ""
    num_val: int = 20
    out_dir: str = "runs/default"
    epochs: int = 10
    batch_size: int = 4
    learning_rate: float = 1e-3
    grad_clip: float = 5.0
    seed: int = 0
    use_mse: bool = True
    use_aux: bool = True
    use_asr: bool = True
    crop_seconds: float = 4.0
    checkpoint_interval: int = 0
    patience: int = 5
    max_steps: int = 0
    time_budget: float = 0.0
    embedder_seed: int = 1234

    def __post_init__(self):
        if not (self.use_mse or self.use_aux or self.use_asr):
            raise ValueError("at least one of use_mse/use_aux/use_asr must be enabled")
        if self.batch_size < 1:
            raise ValueError("batch_size must be >= 1")

    @property
    def flags(self) -> LossFlags:
        return LossFlags(self.use_mse, self.use_aux, self.use_asr)

    @classmethod
    def keys(cls) -> list[str]:
        return [f.name for f in fields(cls)]


@dataclass
class TrainLogRecord:
    step: int
    epoch: int
    l_mse: float
    l_aux: float
    l_asr: float
    l_total: float
    val_si_sdr: float | None = None
    wall_time: float = 0.0
    event: str = "step"


@dataclass
class TrainResult:
    checkpoint: Path
    log: list[TrainLogRecord] = field(default_factory=list)
    model: MNTFA | None = None
    best_val_si_sdr: float | None = None


def compute_losses(model, clean, noisy, flags: LossFlags, embedder, multires=None) -> LossBreakdown:
    _, est_spec, enhanced = model(noisy)
    s_r, s_i = stft_tensor(clean, model.config.stft)
    clean_spec = ComplexSpectrogram(s_r, s_i, model.config.stft)
    return total_loss(clean_spec, est_spec, clean, enhanced, multires, embedder, flags)


def _load_split(cfg: TrainConfig):
    records = read_manifest(cfg.manifest)
    if cfg.val_manifest:
        val = read_manifest(cfg.val_manifest)
        train = records
    else:
        if len(records) <= cfg.num_val:
            raise ValueError(f"manifest has {len(records)} records, need more than num_val={cfg.num_val}")
        train, val = records[: -cfg.num_val], records[-cfg.num_val :]
    return train, val


def _to_tensor(records: list[CorpusRecord]) -> tuple[list[np.ndarray], list[np.ndarray]]:
    cleans, noisies = [], []
    for rec in records:
        c, n = load_pair(rec)
        cleans.append(c)
        noisies.append(n)
    return cleans, noisies


def _crop_batch(cleans, noisies, idx, crop: int, rng):
    cs, ns = [], []
    for i in idx:
        c, n = cleans[i], noisies[i]
        if len(c) > crop:
            start = int(rng.integers(0, len(c) - crop + 1))
            c, n = c[start : start + crop], n[start : start + crop]
        elif len(c) < crop:
            c, n = np.pad(c, (0, crop - len(c))), np.pad(n, (0, crop - len(n)))
        cs.append(c)
        ns.append(n)
    return torch.tensor(np.stack(cs), dtype=torch.float32), torch.tensor(np.stack(ns), dtype=torch.float32)


@torch.no_grad()
def validate(model: MNTFA, cleans, noisies) -> float:
    scores = []
    for c, n in zip(cleans, noisies):
        _, _, out = model(torch.tensor(n, dtype=torch.float32)[None])
        scores.append(si_sdr(c, out[0].double().numpy()))
    return float(np.mean(scores))


def train(cfg: TrainConfig, model_config: ModelConfig | None = None) -> TrainResult:
    """Adam on the flag-restricted total loss; deterministic in serial mode.

    Writes ``last.ckpt`` every ``checkpoint_interval`` steps and at each epoch
    end, ``best.ckpt`` on validation improvement, and ``train_log.jsonl``.
    """
    out = Path(cfg.out_dir)
    out.mkdir(parents=True, exist_ok=True)
    torch.manual_seed(cfg.seed)
    rng = np.random.default_rng(cfg.seed)
    model = MNTFA(model_config or ModelConfig(), seed=cfg.seed)
    embedder = ConvEmbedder(seed=cfg.embedder_seed) if cfg.use_asr else None
    multires = MultiResLossConfig()
    optim = torch.optim.Adam(model.parameters(), lr=cfg.learning_rate)

    train_recs, val_recs = _load_split(cfg)
    cleans, noisies = _to_tensor(train_recs)
    val_cleans, val_noisies = _to_tensor(val_recs)
    crop = int(round(cfg.crop_seconds * 16000))

    (out / "train_config.json").write_text(json.dumps(asdict(cfg), indent=2, sort_keys=True))
    log_path = out / "train_log.jsonl"
    log_fh = open(log_path, "w")
    records: list[TrainLogRecord] = []
    last_ckpt, best_ckpt = out / "last.ckpt", out / "best.ckpt"
    # output location is not provenance; leaving it out keeps reruns byte-identical
    extra = {"train_config": {k: v for k, v in asdict(cfg).items() if k != "out_dir"}}

    def emit(rec: TrainLogRecord):
        records.append(rec)
        log_fh.write(json.dumps(asdict(rec)) + "\n")
        log_fh.flush()

    start = time.monotonic()
    step = 0
    best, stale = -math.inf, 0
    baseline = float(np.mean([si_sdr(c, n) for c, n in zip(val_cleans, val_noisies)]))
    emit(TrainLogRecord(0, 0, 0.0, 0.0, 0.0, 0.0, baseline, 0.0, "baseline"))
    save_checkpoint(last_ckpt, model, extra)
    stop = False
    try:
        for epoch in range(1, cfg.epochs + 1):
            order = rng.permutation(len(cleans))
            model.train()
            for b in range(0, len(order), cfg.batch_size):
                clean, noisy = _crop_batch(cleans, noisies, order[b : b + cfg.batch_size], crop, rng)
                losses = compute_losses(model, clean, noisy, cfg.flags, embedder, multires)
                if not torch.isfinite(losses.l_total):
                    emit(TrainLogRecord(step, epoch, *losses.as_floats().values(), None, time.monotonic() - start, "diverged"))
                    raise TrainingDiverged(f"non-finite loss at step {step}; last good checkpoint: {last_ckpt}")
                optim.zero_grad()
                losses.l_total.backward()
                torch.nn.utils.clip_grad_norm_(model.parameters(), cfg.grad_clip)
                optim.step()
                step += 1
                emit(TrainLogRecord(step, epoch, *losses.as_floats().values(), None, time.monotonic() - start))
                if cfg.checkpoint_interval and step % cfg.checkpoint_interval == 0:
                    save_checkpoint(last_ckpt, model, extra)
                if (cfg.max_steps and step >= cfg.max_steps) or (
                    cfg.time_budget and time.monotonic() - start > cfg.time_budget
                ):
                    stop = True
                    break
            model.eval()
            score = validate(model, val_cleans, val_noisies)
            last = records[-1]
            emit(TrainLogRecord(step, epoch, last.l_mse, last.l_aux, last.l_asr, last.l_total, score, time.monotonic() - start, "epoch"))
            save_checkpoint(last_ckpt, model, extra)
            log.info("epoch %d step %d val SI-SDR %.2f dB (noisy %.2f)", epoch, step, score, baseline)
            if score > best:
                best, stale = score, 0
                save_checkpoint(best_ckpt, model, extra)
            else:
                stale += 1
                if stale >= cfg.patience:
                    break
            if stop:
                break
    finally:
        log_fh.close()
    final = best_ckpt if best_ckpt.exists() else last_ckpt
    return TrainResult(final, records, model, best if best > -math.inf else None)


# --- gradient verification ----------------------------------------------------


@dataclass
class GradCheckEntry:
    name: str
    index: int
    analytic: float
    numeric: float
    rel_error: float


@dataclass
class GradCheckResult:
    max_rel_error: float
    entries: list[GradCheckEntry]

    def passed(self, tol: float = 1e-4) -> bool:
        return self.max_rel_error < tol


def _param_kind(model: torch.nn.Module, name: str) -> str:
    module_name, _, leaf = name.rpartition(".")
    module = model.get_submodule(module_name) if module_name else model
    return f"{type(module).__name__}.{leaf}"


def relative_error(a: float, n: float, floor: float = 1e-6) -> float:
    return abs(a - n) / max(abs(a), abs(n), floor)


# central-difference weights (offset in units of h -> coefficient / h)
STENCILS = {
    2: {1: 0.5, -1: -0.5},
    4: {2: -1 / 12, 1: 8 / 12, -1: -8 / 12, -2: 1 / 12},
}


def grad_check(
    model: MNTFA,
    clean: torch.Tensor,
    noisy: torch.Tensor,
    flags: LossFlags | None = None,
    num_samples: int = 32,
    h: float = 1e-4,
    seed: int = 0,
    embedder=None,
    analytic_hook: Callable[[str, torch.Tensor], torch.Tensor] | None = None,
    freeze_branches: bool = True,
    order: int = 2,
) -> GradCheckResult:
    """Compare autograd against central differences on sampled scalar parameters.

    Runs on a float64 copy of ``model``. At least one scalar is drawn from every
    parameter kind (module type + parameter name); the remainder are drawn
    uniformly over all parameter tensors. ``analytic_hook`` may rewrite the
    analytic gradient (used to build negative controls).

    With ``freeze_branches`` the PReLU/abs branch pattern of the unperturbed
    evaluation is replayed during the perturbed ones (see :mod:`branches`);
    otherwise differences straddling a kink are compared as-is.
    """
    flags = flags or LossFlags()
    model = copy.deepcopy(model).double()
    clean, noisy = clean.double(), noisy.double()
    if flags.use_asr and embedder is None:
        embedder = ConvEmbedder()

    def loss() -> torch.Tensor:
        return compute_losses(model, clean, noisy, flags, embedder).l_total

    model.zero_grad()
    with branches.record() as pattern:
        base = loss()
    base.backward()

    def perturbed() -> float:
        if not freeze_branches:
            return loss().item()
        with branches.replay(pattern):
            return loss().item()
    params = dict(model.named_parameters())
    grads = {}
    for name, p in params.items():
        g = p.grad.detach().clone() if p.grad is not None else torch.zeros_like(p)
        grads[name] = analytic_hook(name, g) if analytic_hook else g

    rng = np.random.default_rng(seed)
    by_kind: dict[str, list[str]] = {}
    for name in params:
        by_kind.setdefault(_param_kind(model, name), []).append(name)
    picks = [by_kind[k][rng.integers(len(by_kind[k]))] for k in sorted(by_kind)]
    names = list(params)
    while len(picks) < num_samples:
        picks.append(names[rng.integers(len(names))])

    entries = []
    with torch.no_grad():
        for name in picks:
            flat = params[name].view(-1)
            idx = int(rng.integers(flat.numel()))
            orig = flat[idx].item()
            values = {}
            for k in STENCILS[order]:
                flat[idx] = orig + k * h
                values[k] = perturbed()
            flat[idx] = orig
            numeric = sum(w * values[k] for k, w in STENCILS[order].items()) / h
            analytic = grads[name].view(-1)[idx].item()
            entries.append(GradCheckEntry(name, idx, analytic, numeric, relative_error(analytic, numeric)))
    return GradCheckResult(max(e.rel_error for e in entries), entries)
