"""Shared fixtures: tone generators, a tiny synthetic cohort, and one
session-scoped trained pipeline reused by CLI and acceptance tests."""

from __future__ import annotations

import json
from pathlib import Path

import numpy as np
import pytest

from murmur.cli import main as cli_main
from murmur.synth import generate_synthetic_dataset


def sine(freq_hz: float, duration_s: float, sr: int, amp: float = 1.0, phase: float = 0.0) -> np.ndarray:
    t = np.arange(round(duration_s * sr)) / sr
    return amp * np.sin(2 * np.pi * freq_hz * t + phase)


@pytest.fixture(scope="session")
def tiny_dataset(tmp_path_factory) -> Path:
    """16 synthetic patients, all three classes, fast to process."""
    root = tmp_path_factory.mktemp("tiny_data")
    generate_synthetic_dataset(root, n_patients=16, seed=21, duration_range_s=(5.0, 7.0))
    return root


def tiny_run_config(data_dir: Path, output_dir: Path) -> dict:
    """Desk-scale RunConfig: random init, small inputs, short training."""
    model = {
        "dropout_p": 0.2,
        "n_mc_samples": 4,
        "learning_rate": 1e-3,
        "batch_size": 16,
        "max_epochs": 1,
        "pretrained": False,
        "input_size": [64, 64],
        "seed": 11,
    }
    return {
        "data_dir": str(data_dir),
        "output_dir": str(output_dir),
        "seed": 5,
        "heldout_fraction": 0.25,
        "val_fraction": 0.25,
        "present_model": dict(model),
        "unknown_model": {**model, "seed": 12},
        "fusion": {"n_trees": 50, "max_depth": 3, "learning_rate": 0.1, "seed": 5},
        "use_pretrained": False,
        "deterministic": True,
    }


@pytest.fixture(scope="session")
def tiny_pipeline(tiny_dataset, tmp_path_factory) -> dict:
    """prepare + train-dbres + train-fusion run once on the tiny cohort."""
    out = tmp_path_factory.mktemp("tiny_out")
    cfg = tiny_run_config(tiny_dataset, out)
    cfg_path = out / "config.json"
    cfg_path.write_text(json.dumps(cfg))
    for command in ("prepare", "train-dbres", "train-fusion"):
        rc = cli_main([command, "--config", str(cfg_path)])
        assert rc == 0, f"{command} failed with exit code {rc}"
    return {"config_path": cfg_path, "config": cfg, "data_dir": tiny_dataset, "output_dir": out}
