"""Ablation over loss combinations on a seeded synthetic corpus.

Trains one model per row (L_MSE, +ASR, +aux, all) under the same wall-clock
budget and writes ``ablation.txt`` / ``ablation.jsonl`` under ``--out``.

    python3 scripts/run_ablation.py --out runs/ablation --budget 300
"""

import argparse
from pathlib import Path

import torch

from mntfa.cli import run
from mntfa.data import synth_corpus


def main():
    p = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    p.add_argument("--out", default="runs/ablation")
    p.add_argument("--budget", type=float, default=300.0, help="training seconds per row")
    p.add_argument("--pairs", type=int, default=120)
    p.add_argument("--seed", type=int, default=0)
    args = p.parse_args()
    torch.set_num_threads(1)
    out = Path(args.out)
    manifest = out / "corpus" / "manifest.jsonl"
    if not manifest.exists():
        synth_corpus(out / "corpus", args.pairs, seconds=4.0, seed=args.seed)
    argv = [
        "ablate",
        "--seed", str(args.seed),
        "--out", str(out / "rows"),
        "--set", f"manifest={manifest}",
        "--set", f"time_budget={args.budget}",
        "--set", "epochs=1000",
        "--set", "patience=1000",
        "--set", "crop_seconds=2.0",
    ]
    raise SystemExit(run(argv))


if __name__ == "__main__":
    main()
