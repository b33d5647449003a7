"""Toy experiment: synthesize a seeded corpus, train under a wall-clock budget,
then compare the trained model with the noisy input and the oracle CRM.

    python3 scripts/run_toy_experiment.py --out runs/toy --budget 780
"""

import argparse
import json
import logging
import time
from pathlib import Path

import numpy as np
import torch

from mntfa.checkpoint import load_checkpoint
from mntfa.data import load_pair, read_manifest, synth_corpus
from mntfa.evalkit import oracle_crm_enhancer, si_sdr
from mntfa.trainer import TrainConfig, train


def run(out: Path, budget: float, seed: int = 0, num_train: int = 200, num_val: int = 20, crop: float = 2.0) -> dict:
    torch.set_num_threads(1)
    manifest = out / "corpus" / "manifest.jsonl"
    if not manifest.exists():
        synth_corpus(out / "corpus", num_train + num_val, seconds=4.0, seed=seed)
    cfg = TrainConfig(
        manifest=str(manifest),
        num_val=num_val,
        out_dir=str(out / "train"),
        epochs=1000,
        patience=1000,
        seed=seed,
        crop_seconds=crop,
        time_budget=budget,
    )
    start = time.monotonic()
    result = train(cfg)
    elapsed = time.monotonic() - start

    model = load_checkpoint(result.checkpoint).eval()
    oracle = oracle_crm_enhancer()
    rows = []
    for rec in read_manifest(manifest)[-num_val:]:
        clean, noisy = load_pair(rec)
        with torch.no_grad():
            est = model(torch.tensor(noisy, dtype=torch.float32)[None])[2][0].double().numpy()
        rows.append(
            {
                "id": rec.id,
                "noisy": si_sdr(clean, noisy),
                "model": si_sdr(clean, est),
                "oracle": si_sdr(clean, oracle(noisy, clean)),
            }
        )
    summary = {
        "train_seconds": elapsed,
        "steps": result.log[-1].step,
        "noisy": float(np.mean([r["noisy"] for r in rows])),
        "model": float(np.mean([r["model"] for r in rows])),
        "oracle": float(np.mean([r["oracle"] for r in rows])),
        "oracle_beats_model_everywhere": all(r["oracle"] >= r["model"] for r in rows),
    }
    summary["improvement"] = summary["model"] - summary["noisy"]
    (out / "toy_summary.json").write_text(json.dumps({"summary": summary, "files": rows}, indent=2))
    return summary


def main():
    p = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    p.add_argument("--out", default="runs/toy")
    p.add_argument("--budget", type=float, default=780.0, help="training wall-clock seconds")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--crop", type=float, default=2.0, help="training crop length in seconds")
    args = p.parse_args()
    logging.basicConfig(level=logging.INFO, format="%(asctime)s %(message)s")
    print(json.dumps(run(Path(args.out), args.budget, args.seed, crop=args.crop), indent=2))


if __name__ == "__main__":
    main()
