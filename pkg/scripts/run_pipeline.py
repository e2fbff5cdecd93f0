#!/usr/bin/env python3
"""Run the full experiment grid: data, training, analyses, report.

Scales:
  reduced  1000 samples x 50 epochs, analysis over 200 samples (default)
  pilot    300 samples x 15 epochs, analysis over 50 samples, S=100
  smoke    tiny everything, finishes in seconds (format/wiring check)
  full     5000 samples x 200 epochs (the source configuration; very slow)

Usage:
  python scripts/run_pipeline.py --scale reduced --seed 0 --out-dir runs/reduced
"""

import argparse
import sys
import time
from dataclasses import replace
from pathlib import Path

sys.path.insert(0, str(Path(__file__).resolve().parent.parent / "src"))

from attnflow.cli import ExperimentPlan, run_experiment_plan  # noqa: E402

SCALES = {
    "reduced": {},
    "pilot": {"samples": 300, "epochs": 15, "analysis_limit": 50,
              "simulations": 100},
    "smoke": {"samples": 40, "epochs": 2, "seq_len": 16, "vocab": 32,
              "d_model": 16, "mlp_hidden": 32, "model_layers": 2,
              "head_counts": (1, 2), "layers": (1, 2), "analysis_limit": 10,
              "simulations": 20, "max_steps": 30, "horizon": 30,
              "batch_size": 10},
    "full": {"samples": 5000, "epochs": 200},
}


def main() -> int:
    parser = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    parser.add_argument("--scale", choices=sorted(SCALES), default="reduced")
    parser.add_argument("--seed", type=int, default=0)
    parser.add_argument("--out-dir", default=None)
    parser.add_argument("--tasks", nargs="+", default=None)
    parser.add_argument("--heads", type=int, nargs="+", default=None)
    parser.add_argument("--threads", type=int, default=2)
    args = parser.parse_args()

    overrides = dict(SCALES[args.scale])
    overrides["seed"] = args.seed
    overrides["out_dir"] = args.out_dir or f"runs/{args.scale}"
    if args.tasks:
        overrides["tasks"] = tuple(args.tasks)
    if args.heads:
        overrides["head_counts"] = tuple(args.heads)
    plan = replace(ExperimentPlan(), **overrides)

    started = time.time()
    paths = run_experiment_plan(plan, echo=print, threads=args.threads)
    print(f"done in {time.time() - started:.0f}s; report: {paths['tables']}")
    return 0


if __name__ == "__main__":
    sys.exit(main())
