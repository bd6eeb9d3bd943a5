"""Acceptance gate: one test per criterion, each printing a PASS line with its runtime.

Run with `pytest tests/test_acceptance.py -s` to see the per-criterion lines.
The paper-scale tier needs the real public dataset and pretrained weights
(MURMUR_CIRCOR_DATA_DIR and MURMUR_RESNET50_WEIGHTS); it is skipped otherwise.
"""

from __future__ import annotations

import json
import os
import time
from fractions import Fraction
from pathlib import Path

import numpy as np
import pytest

from murmur.cli import main as cli_main
from murmur.config import CascadeConfig, ModelConfig, SegmentationConfig, SpectrogramConfig
from murmur.ingestion import AudioSignal, MurmurLabel, load_patient_directory
from murmur.synth import generate_synthetic_dataset

from conftest import sine

SR = 4000


def report_pass(name: str, elapsed: float, budget: float, detail: str = "") -> None:
    suffix = f" [{detail}]" if detail else ""
    print(f"\nACCEPTANCE {name}: PASS ({elapsed:.2f}s of {budget:.0f}s budget){suffix}")
    assert elapsed < budget


def test_scorer_oracle_equivalence():
    from murmur.scoring import ConfusionMatrix, weighted_accuracy, weighted_accuracy_exact

    start = time.perf_counter()
    rng = np.random.default_rng(2022)
    for _ in range(1000):
        counts = rng.integers(0, 100, size=(3, 3))
        if counts.sum() == 0:
            counts[2, 2] = 1
        cm = ConfusionMatrix(counts)
        c_p, c_u, c_a = counts[0][0], counts[1][1], counts[2][2]
        t_p, t_u, t_a = counts[0].sum(), counts[1].sum(), counts[2].sum()
        oracle = Fraction(int(5 * c_p + 3 * c_u + c_a), int(5 * t_p + 3 * t_u + t_a))
        assert weighted_accuracy_exact(cm) == oracle
    fixture = ConfusionMatrix(np.array([[3, 1, 1], [0, 1, 1], [5, 5, 10]]))
    assert weighted_accuracy_exact(fixture) == Fraction(28, 51)
    assert weighted_accuracy(fixture) == 28 / 51
    report_pass("scorer-oracle-equivalence", time.perf_counter() - start, 1.0)


def test_spectrogram_geometry():
    from murmur.dsp import log_mel_spectrogram, segment_signal

    start = time.perf_counter()
    rng = np.random.default_rng(0)
    seg_cfg, spec_cfg = SegmentationConfig(), SpectrogramConfig()
    four = AudioSignal(rng.normal(size=4 * SR), SR)
    spec = log_mel_spectrogram(segment_signal(four, seg_cfg)[0], spec_cfg)
    assert spec.values.shape == (64, 398)
    assert len(segment_signal(AudioSignal(rng.normal(size=5 * SR), SR), seg_cfg)) == 2
    assert len(segment_signal(AudioSignal(rng.normal(size=45 * SR), SR), seg_cfg)) == 42
    report_pass("spectrogram-geometry", time.perf_counter() - start, 1.0, "64x398; counts 2/42")


def test_cascade_truth_table():
    from murmur.cascade import cascade_label

    start = time.perf_counter()
    cfg = CascadeConfig()
    grid = np.linspace(0.0, 1.0, 101)
    checked = 0
    for pm in grid:
        for um in grid:
            if pm >= 0.5:
                expected = MurmurLabel.PRESENT
            elif um >= 0.5:
                expected = MurmurLabel.UNKNOWN
            else:
                expected = MurmurLabel.ABSENT
            assert cascade_label(pm, um, cfg) is expected
            checked += 1
    assert checked == 101 * 101
    assert cascade_label(0.5, 0.0, cfg) is MurmurLabel.PRESENT  # tie resolves positive
    assert cascade_label(0.0, 0.5, cfg) is MurmurLabel.UNKNOWN
    report_pass("cascade-truth-table", time.perf_counter() - start, 1.0, "10201/10201 cells")


def test_mc_dropout_behavior(tiny_pipeline):
    from murmur.bayes_resnet import PRESENT_VS_REST, SegmentClassifier, build_bayesian_resnet
    from murmur.dsp import Spectrogram

    start = time.perf_counter()
    rng = np.random.default_rng(77)
    probes = [
        Spectrogram(values=rng.normal(size=(64, 120)), source=("probe", 0, float(i)))
        for i in range(20)
    ]

    zero_cfg = ModelConfig(dropout_p=0.0, n_mc_samples=10, pretrained=False, input_size=(64, 64), seed=4)
    zero_clf = build_bayesian_resnet(PRESENT_VS_REST, zero_cfg)
    for spec in probes[:5]:
        a = zero_clf.mc_predict(spec)
        b = zero_clf.mc_predict(spec)
        assert a.std == 0.0 and b.std == 0.0
        assert a.mean_prob == b.mean_prob  # bit-identical repeated calls

    smoke_model = SegmentClassifier.load(
        Path(tiny_pipeline["output_dir"]) / "models" / "dbres_present.pt"
    )
    assert smoke_model.cfg.dropout_p == 0.2
    positive_std = sum(smoke_model.mc_predict(spec, n_mc=50).std > 0 for spec in probes)
    assert positive_std >= 0.95 * len(probes)
    report_pass(
        "mc-dropout-behavior",
        time.perf_counter() - start,
        300.0,
        f"std>0 on {positive_std}/{len(probes)} probes",
    )


def test_signal_feature_analytics():
    from murmur.signal_features import extract_signal_features

    start = time.perf_counter()
    tone = AudioSignal(sine(500.0, 4.0, SR), SR)
    feats = extract_signal_features(tone)
    assert abs(feats.rms - 1 / np.sqrt(2)) < 1e-3
    assert abs(feats.dominant_frequency_hz - 500.0) <= SR / len(tone.samples)

    rng = np.random.default_rng(5)
    scale_free = (
        "zero_crossing_rate", "dominant_frequency_hz", "spectral_entropy",
        "centroid_mean_hz", "centroid_std_hz", "rolloff_mean_hz", "rolloff_std_hz",
        "bandwidth_mean_hz", "bandwidth_std_hz",
    )
    for _ in range(5):
        x = rng.normal(size=2 * SR)
        a = float(rng.uniform(0.2, 5.0))
        base = extract_signal_features(AudioSignal(x, SR))
        scaled = extract_signal_features(AudioSignal(a * x, SR))
        for name in ("mean", "std", "min", "max", "rms"):
            assert getattr(scaled, name) == pytest.approx(a * getattr(base, name), rel=1e-9, abs=1e-12)
        for name in scale_free:
            assert getattr(scaled, name) == pytest.approx(getattr(base, name), rel=1e-9, abs=1e-12)
    report_pass("signal-feature-analytics", time.perf_counter() - start, 10.0)


def _weighted_accuracy_of_constant_prediction(patients, label) -> Fraction:
    """Brute-force weighted accuracy of always predicting `label`."""
    weight = {MurmurLabel.PRESENT: 5, MurmurLabel.UNKNOWN: 3, MurmurLabel.ABSENT: 1}
    num = sum(weight[p.murmur_label] for p in patients if p.murmur_label is label)
    den = sum(weight[p.murmur_label] for p in patients)
    return Fraction(num, den)


def test_end_to_end_smoke(tmp_path_factory):
    start = time.perf_counter()
    root = tmp_path_factory.mktemp("smoke")
    data_dir = root / "data"
    out_dir = root / "out"
    generate_synthetic_dataset(data_dir, n_patients=30, seed=11)

    model = {
        "dropout_p": 0.2, "n_mc_samples": 8, "learning_rate": 1e-3, "batch_size": 16,
        "max_epochs": 2, "pretrained": False, "input_size": [96, 96], "seed": 101,
    }
    cfg = {
        "data_dir": str(data_dir), "output_dir": str(out_dir), "seed": 3,
        "heldout_fraction": 0.25, "val_fraction": 0.2,
        "present_model": dict(model),
        "unknown_model": {**model, "seed": 202},
        "fusion": {"n_trees": 100, "max_depth": 3, "learning_rate": 0.1, "seed": 3},
        "use_pretrained": False, "deterministic": True,
    }
    cfg_path = root / "config.json"
    cfg_path.write_text(json.dumps(cfg))

    for command in ("prepare", "train-dbres", "train-fusion", "evaluate"):
        rc = cli_main([command, "--config", str(cfg_path)])
        assert rc == 0, f"{command} exited {rc}"

    report = json.loads((out_dir / "reports" / "report_dbres.json").read_text())
    assert 0.0 <= report["weighted_accuracy"] <= 1.0
    assert 0.0 <= report["accuracy"] <= 1.0
    assert report["n_patients"] > 0
    fused = json.loads((out_dir / "reports" / "report_fused.json").read_text())
    assert 0.0 <= fused["weighted_accuracy"] <= 1.0

    # majority baseline recomputed independently from the persisted split
    split = json.loads((out_dir / "split.json").read_text())
    patients = {p.patient_id: p for p in load_patient_directory(data_dir)}
    train = [patients[pid] for pid in split["train"]]
    heldout = [patients[pid] for pid in split["heldout"]]
    counts = {lab: sum(1 for p in train if p.murmur_label is lab) for lab in MurmurLabel}
    majority = max(counts, key=counts.get)
    baseline = _weighted_accuracy_of_constant_prediction(heldout, majority)
    assert report["weighted_accuracy"] > float(baseline)

    summary = json.loads((out_dir / "reports" / "eval_summary.json").read_text())
    assert summary["majority_baseline"]["weighted_accuracy"] == pytest.approx(float(baseline))

    report_pass(
        "end-to-end-smoke",
        time.perf_counter() - start,
        900.0,
        f"dbres weighted {report['weighted_accuracy']:.3f} > baseline {float(baseline):.3f}",
    )


PAPER_DATA_ENV = "MURMUR_CIRCOR_DATA_DIR"
PAPER_WEIGHTS_ENV = "MURMUR_RESNET50_WEIGHTS"


@pytest.mark.skipif(
    not (os.environ.get(PAPER_DATA_ENV) and os.environ.get(PAPER_WEIGHTS_ENV)),
    reason=(
        "paper-scale tier: headline numbers (DBRes held-out weighted accuracy 0.780 / "
        "accuracy 0.762, fused 0.749 / 0.820, hidden-test 0.771) are not reproducible at "
        f"desk scale; set {PAPER_DATA_ENV} and {PAPER_WEIGHTS_ENV} to run the full protocol"
    ),
)
def test_paper_scale_tier(tmp_path_factory):
    """Full-data run: fused accuracy up, fused weighted accuracy down, DBRes within 0.05 of 0.780."""
    start = time.perf_counter()
    out_dir = tmp_path_factory.mktemp("paper_out")
    cfg = {
        "data_dir": os.environ[PAPER_DATA_ENV],
        "output_dir": str(out_dir),
        "seed": 0,
        "heldout_fraction": 0.2,
        "val_fraction": 0.2,
        "use_pretrained": True,
        "deterministic": True,
        "pretrained_weights_path": os.environ[PAPER_WEIGHTS_ENV],
    }
    cfg_path = out_dir / "config.json"
    cfg_path.write_text(json.dumps(cfg))
    for command in ("prepare", "train-dbres", "train-fusion", "evaluate"):
        rc = cli_main([command, "--config", str(cfg_path)])
        assert rc == 0, f"{command} exited {rc}"
    summary = json.loads((out_dir / "reports" / "eval_summary.json").read_text())
    assert summary["fused_accuracy"] > summary["dbres_accuracy"]
    assert summary["fused_weighted_accuracy"] < summary["dbres_weighted_accuracy"]
    assert abs(summary["dbres_weighted_accuracy"] - 0.780) <= 0.05
    report_pass("paper-scale-tier", time.perf_counter() - start, 72 * 3600.0)


TABLE_1 = {
    # age_category: (absent, unknown, present) patient counts
    "Neonate": (4, 1, 1),
    "Infant": (76, 25, 25),
    "Child": (495, 37, 132),
    "Adolescent": (53, 3, 16),
    "Missing": (67, 2, 5),
}

TABLE_1_EXPECTED_ROWS = {
    "Neonate": "Neonate,4,0.4,1,0.1,1,0.1,6,0.6",
    "Infant": "Infant,76,8.1,25,2.7,25,2.7,126,13.4",
    "Child": "Child,495,52.6,37,3.9,132,14.0,664,70.5",
    "Adolescent": "Adolescent,53,5.6,3,0.3,16,1.7,72,7.6",
    "Missing": "Missing,67,7.1,2,0.2,5,0.5,74,7.9",
    "Total": "Total,695,73.8,68,7.2,179,19.0,942,100.0",
}


def test_dataset_stats_table_fidelity(tmp_path):
    start = time.perf_counter()
    data_dir = tmp_path / "data"
    data_dir.mkdir()
    i = 0
    for age, (absent, unknown, present) in TABLE_1.items():
        for label, count in zip(("Absent", "Unknown", "Present"), (absent, unknown, present)):
            for _ in range(count):
                lines = [f"t{i:04d} 1 4000", f"AV t{i:04d}_AV.hea t{i:04d}_AV.wav"]
                if age != "Missing":
                    lines.append(f"#Age: {age}")
                lines.append(f"#Murmur: {label}")
                (data_dir / f"t{i:04d}.txt").write_text("\n".join(lines) + "\n")
                i += 1
    assert i == 942

    out_dir = tmp_path / "out"
    rc = cli_main(["stats", "--data-dir", str(data_dir), "--output-dir", str(out_dir)])
    assert rc == 0
    rows = (out_dir / "stats" / "murmur_by_age.csv").read_text().splitlines()
    by_category = {row.split(",")[0]: row for row in rows[1:]}
    for category, expected in TABLE_1_EXPECTED_ROWS.items():
        assert by_category[category] == expected, category
    assert by_category["YoungAdult"] == "YoungAdult,0,0.0,0,0.0,0,0.0,0,0.0"
    report_pass("dataset-stats-fidelity", time.perf_counter() - start, 60.0, "all Table-1 cells exact")
