#!/usr/bin/env python3
"""Generate the synthetic mini-cohort (metadata + WAV files) for desk-scale runs."""

from __future__ import annotations

import argparse
from pathlib import Path

from murmur.synth import generate_synthetic_dataset


def main() -> None:
    parser = argparse.ArgumentParser(description=__doc__)
    parser.add_argument("out_dir", type=Path, help="directory to create the cohort in")
    parser.add_argument("--n-patients", type=int, default=30)
    parser.add_argument("--seed", type=int, default=0)
    parser.add_argument("--min-duration", type=float, default=6.0)
    parser.add_argument("--max-duration", type=float, default=10.0)
    args = parser.parse_args()

    ids = generate_synthetic_dataset(
        args.out_dir,
        n_patients=args.n_patients,
        seed=args.seed,
        duration_range_s=(args.min_duration, args.max_duration),
    )
    print(f"wrote {len(ids)} patients to {args.out_dir}")


if __name__ == "__main__":
    main()
