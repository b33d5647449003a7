"""Command-line entry point: ``mntfa {mix,train,enhance,eval,ablate,gradcheck}``.

Every subcommand reads an optional flat key-value config file (YAML or JSON)
given by ``--config``, then applies ``--set key=value`` overrides, then
``--seed``/``--out``. Unknown keys are rejected. Errors are reported as one
JSON line on stderr; exit status 2 for configuration errors, 1 for runtime
failures.
"""

from __future__ import annotations

import argparse
import json
import logging
import sys
from dataclasses import asdict, fields
from pathlib import Path

import numpy as np
import torch
import yaml

from .audio import read_wav, write_wav
from .checkpoint import load_checkpoint
from .data import read_manifest, synth_corpus
from .evalkit import (
    ProcessAdapter,
    evaluate,
    identity_enhancer,
    model_enhancer,
    oracle_crm_enhancer,
    render_ablation,
)
from .losses import ABLATIONS, LossFlags
from .model import MNTFA
from .trainer import TrainConfig, grad_check, train

log = logging.getLogger("mntfa")


class ConfigKeyError(ValueError):
    pass


MIX_KEYS = {"num_pairs": 50, "seconds": 4.0, "snr_low": -5.0, "snr_high": 5.0, "seed": 0, "out": "corpus", "workers": 0}
ENHANCE_KEYS = {"checkpoint": "", "inputs": [], "out": "", "seed": 0}
EVAL_KEYS = {"manifest": "", "checkpoint": "", "enhancer": "model", "adapters": [], "out": "eval", "seed": 0}
GRADCHECK_KEYS = {
    "checkpoint": "",
    "manifest": "",
    "loss": "all",
    "num_samples": 32,
    "h": 1e-4,
    "batch_size": 2,
    "seconds": 1.0,
    "seed": 0,
    "out": "",
    "tolerance": 1e-4,
}
TRAIN_KEYS = {f.name: f.default for f in fields(TrainConfig)}
ABLATE_KEYS = {**TRAIN_KEYS, "eval_manifest": ""}


def _parse_value(text: str):
    try:
        return yaml.safe_load(text)
    except yaml.YAMLError:
        return text


def load_settings(defaults: dict, config_path: str | None, overrides: list[str], seed, out) -> dict:
    settings = dict(defaults)
    given: dict = {}
    if config_path:
        with open(config_path) as fh:
            loaded = yaml.safe_load(fh) or {}
        if not isinstance(loaded, dict):
            raise ConfigKeyError(f"{config_path}: expected a key-value mapping")
        given.update(loaded)
    for item in overrides:
        if "=" not in item:
            raise ConfigKeyError(f"--set expects key=value, got {item!r}")
        key, value = item.split("=", 1)
        given[key.strip()] = _parse_value(value)
    unknown = sorted(set(given) - set(defaults))
    if unknown:
        raise ConfigKeyError(f"unknown config keys {unknown}; valid keys: {sorted(defaults)}")
    settings.update(given)
    if seed is not None:
        settings["seed"] = seed
    if out is not None:
        settings["out_dir" if "out_dir" in defaults else "out"] = out
    return settings


def _seed_everything(seed: int) -> None:
    torch.manual_seed(seed)
    np.random.seed(seed % 2**32)


def cmd_mix(s: dict) -> None:
    records = synth_corpus(
        s["out"],
        int(s["num_pairs"]),
        float(s["seconds"]),
        seed=int(s["seed"]),
        snr_range=(float(s["snr_low"]), float(s["snr_high"])),
        workers=int(s["workers"]) or None,
    )
    print(json.dumps({"manifest": str(Path(s["out"]) / "manifest.jsonl"), "records": len(records)}))


def _train_config(s: dict) -> TrainConfig:
    try:
        return TrainConfig(**{k: s[k] for k in TRAIN_KEYS})
    except (TypeError, ValueError) as exc:
        raise ConfigKeyError(str(exc)) from exc


def cmd_train(s: dict) -> None:
    cfg = _train_config(s)
    if not cfg.manifest:
        raise ConfigKeyError("train needs 'manifest'")
    result = train(cfg)
    print(json.dumps({"checkpoint": str(result.checkpoint), "best_val_si_sdr": result.best_val_si_sdr}))


def cmd_enhance(s: dict, inputs: list[str]) -> None:
    if not s["checkpoint"]:
        raise ConfigKeyError("enhance needs 'checkpoint'")
    paths = list(inputs) + list(s["inputs"] or [])
    if not paths:
        raise ConfigKeyError("enhance needs at least one input WAV")
    model = load_checkpoint(s["checkpoint"]).eval()
    for p in paths:
        src = Path(p)
        dest_dir = Path(s["out"]) if s["out"] else src.parent
        dest_dir.mkdir(parents=True, exist_ok=True)
        dest = dest_dir / f"{src.stem}.enhanced.wav"
        write_wav(dest, model.enhance(read_wav(src, dtype=torch.float32)))
        print(json.dumps({"input": str(src), "output": str(dest)}))


def _adapters(specs):
    adapters = []
    for spec in specs or []:
        if "=" not in spec:
            raise ConfigKeyError(f"adapter spec must be name=command, got {spec!r}")
        name, command = spec.split("=", 1)
        adapters.append(ProcessAdapter(name.strip(), command.strip()))
    return adapters


def _enhancer(kind: str, checkpoint: str):
    if kind == "identity":
        return identity_enhancer
    if kind == "oracle":
        return oracle_crm_enhancer()
    if kind == "model":
        if not checkpoint:
            raise ConfigKeyError("enhancer=model needs 'checkpoint'")
        return model_enhancer(load_checkpoint(checkpoint).eval())
    raise ConfigKeyError(f"enhancer must be model, identity or oracle; got {kind!r}")


def cmd_eval(s: dict) -> None:
    if not s["manifest"]:
        raise ConfigKeyError("eval needs 'manifest'")
    enhancer = _enhancer(s["enhancer"], s["checkpoint"])
    report = evaluate(read_manifest(s["manifest"]), enhancer, _adapters(s["adapters"]), label=s["enhancer"])
    out = Path(s["out"])
    out.mkdir(parents=True, exist_ok=True)
    report.to_jsonl(out / "report.jsonl")
    table = report.render()
    (out / "report.txt").write_text(table + "\n")
    print(table)


def cmd_ablate(s: dict) -> None:
    base = _train_config(s)
    if not base.manifest:
        raise ConfigKeyError("ablate needs 'manifest'")
    eval_manifest = s["eval_manifest"] or base.val_manifest
    root = Path(base.out_dir)
    rows = []
    for flags in ABLATIONS:
        tag = flags.label.replace("+", "_").lower()
        cfg = TrainConfig(**{**asdict(base), **asdict(flags), "out_dir": str(root / tag)})
        result = train(cfg)
        model = load_checkpoint(result.checkpoint).eval()
        records = read_manifest(eval_manifest) if eval_manifest else _val_records(cfg)
        report = evaluate(records, model_enhancer(model), label=flags.label)
        report.to_jsonl(root / tag / "report.jsonl")
        rows.append((flags.label, report))
    table = render_ablation(rows)
    (root / "ablation.txt").write_text(table + "\n")
    with open(root / "ablation.jsonl", "w") as fh:
        for label, report in rows:
            agg = report.aggregates()
            fh.write(json.dumps({"loss": label, **{k: v["avg"] for k, v in agg.items()}}) + "\n")
    print(table)


def _val_records(cfg: TrainConfig):
    records = read_manifest(cfg.manifest)
    return records[-cfg.num_val :]


GRADCHECK_LOSSES = {
    "full": LossFlags(True, True, True),
    "mse": LossFlags(True, False, False),
    "aux": LossFlags(False, True, False),
    "asr": LossFlags(False, False, True),
}


def cmd_gradcheck(s: dict) -> int:
    seed = int(s["seed"])
    _seed_everything(seed)
    model = load_checkpoint(s["checkpoint"]) if s["checkpoint"] else MNTFA(seed=seed)
    n = int(round(float(s["seconds"]) * 16000))
    if s["manifest"]:
        from .data import load_pair

        pairs = [load_pair(r) for r in read_manifest(s["manifest"])[: int(s["batch_size"])]]
        clean = torch.tensor(np.stack([c[:n] for c, _ in pairs]))
        noisy = torch.tensor(np.stack([y[:n] for _, y in pairs]))
    else:
        from .data import mix_at_snr, synth_clean, synth_noise

        rng = np.random.default_rng(seed)
        mixes = [
            mix_at_snr(synth_clean(rng, n / 16000), synth_noise(rng, n / 16000), rng.uniform(-5, 5))
            for _ in range(int(s["batch_size"]))
        ]
        clean = torch.tensor(np.stack([m.clean for m in mixes]))
        noisy = torch.tensor(np.stack([m.noisy for m in mixes]))
    names = list(GRADCHECK_LOSSES) if s["loss"] == "all" else [s["loss"]]
    worst = 0.0
    for name in names:
        if name not in GRADCHECK_LOSSES:
            raise ConfigKeyError(f"loss must be one of {sorted(GRADCHECK_LOSSES)} or 'all'; got {name!r}")
        result = grad_check(
            model, clean, noisy, GRADCHECK_LOSSES[name], num_samples=int(s["num_samples"]), h=float(s["h"]), seed=seed
        )
        worst = max(worst, result.max_rel_error)
        print(json.dumps({"loss": name, "max_rel_error": result.max_rel_error, "samples": len(result.entries)}))
    return 0 if worst < float(s["tolerance"]) else 1


COMMANDS = {
    "mix": MIX_KEYS,
    "train": TRAIN_KEYS,
    "enhance": ENHANCE_KEYS,
    "eval": EVAL_KEYS,
    "ablate": ABLATE_KEYS,
    "gradcheck": GRADCHECK_KEYS,
}


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="mntfa", description=__doc__.splitlines()[0])
    sub = parser.add_subparsers(dest="command", required=True)
    for name in COMMANDS:
        p = sub.add_parser(name)
        p.add_argument("--config", help="YAML/JSON key-value config file")
        p.add_argument("--seed", type=int, help="overrides the 'seed' key")
        p.add_argument("--out", help="output directory")
        p.add_argument("--set", dest="overrides", action="append", default=[], metavar="KEY=VALUE")
        p.add_argument("-v", "--verbose", action="store_true")
        if name == "enhance":
            p.add_argument("inputs", nargs="*", help="input WAV files")
    return parser


def _fail(kind: str, message: str, code: int) -> int:
    print(json.dumps({"error": kind, "message": message}), file=sys.stderr)
    return code


def run(argv: list[str] | None = None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return int(exc.code or 0)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(levelname)s %(name)s: %(message)s")
    try:
        settings = load_settings(COMMANDS[args.command], args.config, args.overrides, args.seed, args.out)
        _seed_everything(int(settings.get("seed", 0)))
        if args.command == "mix":
            cmd_mix(settings)
        elif args.command == "train":
            cmd_train(settings)
        elif args.command == "enhance":
            cmd_enhance(settings, args.inputs)
        elif args.command == "eval":
            cmd_eval(settings)
        elif args.command == "ablate":
            cmd_ablate(settings)
        elif args.command == "gradcheck":
            return cmd_gradcheck(settings)
    except (ConfigKeyError, yaml.YAMLError) as exc:
        return _fail("config", str(exc), 2)
    except FileNotFoundError as exc:
        return _fail("config", str(exc), 2)
    except Exception as exc:
        log.debug("command failed", exc_info=True)
        return _fail(type(exc).__name__, str(exc), 1)
    return 0


def main() -> None:
    sys.exit(run())
