#!/usr/bin/env python3
"""End-to-end desk-scale experiment on the synthetic cohort.

Generates data, runs prepare -> train-dbres -> train-fusion -> evaluate with
a reduced configuration (random init, 96x96 inputs, 2 epochs), and prints the
held-out summary. Finishes in a few minutes on CPU.
"""

from __future__ import annotations

import argparse
import json
import sys
import time
from pathlib import Path

from murmur.cli import main as murmur_main
from murmur.synth import generate_synthetic_dataset


def smoke_config(data_dir: Path, out_dir: Path, seed: int) -> dict:
    model = {
        "dropout_p": 0.2,
        "n_mc_samples": 8,
        "learning_rate": 1e-3,
        "batch_size": 16,
        "max_epochs": 2,
        "pretrained": False,
        "input_size": [96, 96],
        "seed": seed + 101,
    }
    return {
        "data_dir": str(data_dir),
        "output_dir": str(out_dir),
        "seed": seed,
        "heldout_fraction": 0.25,
        "val_fraction": 0.2,
        "present_model": dict(model),
        "unknown_model": {**model, "seed": seed + 202},
        "fusion": {"n_trees": 100, "max_depth": 3, "learning_rate": 0.1, "seed": seed},
        "use_pretrained": False,
        "deterministic": True,
    }


def main() -> int:
    parser = argparse.ArgumentParser(description=__doc__)
    parser.add_argument("--workdir", type=Path, default=Path("smoke_run"))
    parser.add_argument("--n-patients", type=int, default=30)
    parser.add_argument("--seed", type=int, default=3)
    args = parser.parse_args()

    data_dir = args.workdir / "data"
    out_dir = args.workdir / "out"
    start = time.time()
    generate_synthetic_dataset(data_dir, n_patients=args.n_patients, seed=11)
    cfg_path = args.workdir / "config.json"
    cfg_path.write_text(json.dumps(smoke_config(data_dir, out_dir, args.seed), indent=2))

    for command in ("prepare", "train-dbres", "train-fusion", "evaluate"):
        step = time.time()
        rc = murmur_main([command, "--config", str(cfg_path)])
        print(f"{command}: exit {rc} ({time.time() - step:.1f}s)")
        if rc != 0:
            return rc

    summary = json.loads((out_dir / "reports" / "eval_summary.json").read_text())
    print(json.dumps(summary, indent=2, sort_keys=True))
    print(f"total {time.time() - start:.1f}s; reports under {out_dir / 'reports'}")
    return 0


if __name__ == "__main__":
    sys.exit(main())
