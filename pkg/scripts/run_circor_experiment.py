#!/usr/bin/env python3
"""Full-scale experiment on the public CirCor training data.

Needs the dataset directory (per-patient .txt metadata plus .wav recordings)
and a torchvision-format ResNet50 ImageNet state dict. Defaults match the
paper-scale configuration: 224x224 inputs, dropout 0.2, 20 MC samples,
Adam 1e-4, batch 32, up to 15 epochs per binary task. Expect many hours on
CPU; a GPU build of torch is strongly recommended.

Example:
    python scripts/run_circor_experiment.py \
        --data-dir /data/circor/training_data \
        --weights /data/resnet50_imagenet.pt \
        --output-dir runs/circor
"""

from __future__ import annotations

import argparse
import json
import sys
import time
from pathlib import Path

from murmur.cli import main as murmur_main


def main() -> int:
    parser = argparse.ArgumentParser(description=__doc__, formatter_class=argparse.RawDescriptionHelpFormatter)
    parser.add_argument("--data-dir", type=Path, required=True)
    parser.add_argument("--output-dir", type=Path, required=True)
    parser.add_argument("--weights", type=Path, help="ResNet50 ImageNet state dict; omit with --no-pretrained")
    parser.add_argument("--no-pretrained", action="store_true")
    parser.add_argument("--seed", type=int, default=0)
    parser.add_argument("--heldout-fraction", type=float, default=0.2)
    args = parser.parse_args()

    if not args.no_pretrained and args.weights is None:
        parser.error("--weights is required unless --no-pretrained is given")

    cfg = {
        "data_dir": str(args.data_dir),
        "output_dir": str(args.output_dir),
        "seed": args.seed,
        "heldout_fraction": args.heldout_fraction,
        "val_fraction": 0.2,
        "use_pretrained": not args.no_pretrained,
        "deterministic": True,
        "pretrained_weights_path": str(args.weights) if args.weights else None,
    }
    args.output_dir.mkdir(parents=True, exist_ok=True)
    cfg_path = args.output_dir / "config.json"
    cfg_path.write_text(json.dumps(cfg, indent=2))

    start = time.time()
    for command in ("prepare", "train-dbres", "train-fusion", "evaluate"):
        step = time.time()
        rc = murmur_main([command, "--config", str(cfg_path)])
        print(f"{command}: exit {rc} ({(time.time() - step) / 60:.1f} min)")
        if rc != 0:
            return rc

    summary = json.loads((args.output_dir / "reports" / "eval_summary.json").read_text())
    print(json.dumps(summary, indent=2, sort_keys=True))
    print(f"total {(time.time() - start) / 60:.1f} min")
    return 0


if __name__ == "__main__":
    sys.exit(main())
