"""CLI workflow: exit codes, artifacts, manifests, determinism, cache idempotence."""

from __future__ import annotations

import json
from pathlib import Path

import pytest

from murmur.cli import main
from murmur.fusion import fusion_schema_hash
from murmur.ingestion import MurmurLabel, load_patient_directory
from murmur.synth import generate_synthetic_dataset

from conftest import tiny_run_config


def write_config(tmp_path: Path, cfg: dict) -> Path:
    path = tmp_path / "config.json"
    path.write_text(json.dumps(cfg))
    return path


class TestSyntheticDataset:
    def test_generator_makes_parseable_cohort(self, tiny_dataset):
        patients = load_patient_directory(tiny_dataset)
        assert len(patients) == 16
        labels = {p.murmur_label for p in patients}
        assert labels == {MurmurLabel.PRESENT, MurmurLabel.UNKNOWN, MurmurLabel.ABSENT}
        for p in patients:
            assert 1 <= len(p.recordings) <= 3
            for ref in p.recordings:
                assert (tiny_dataset / ref.audio_path).exists()

    def test_generator_deterministic(self, tmp_path):
        a = generate_synthetic_dataset(tmp_path / "a", n_patients=6, seed=4)
        b = generate_synthetic_dataset(tmp_path / "b", n_patients=6, seed=4)
        assert a == b
        for pid in a:
            assert (tmp_path / "a" / f"{pid}.txt").read_text() == (tmp_path / "b" / f"{pid}.txt").read_text()
            wav_a = (tmp_path / "a" / f"{pid}.txt").read_text().splitlines()[1].split()[2]
            assert (tmp_path / "a" / wav_a).read_bytes() == (tmp_path / "b" / wav_a).read_bytes()


class TestExitCodes:
    def test_evaluate_before_training_is_exit_4(self, tiny_dataset, tmp_path):
        cfg = tiny_run_config(tiny_dataset, tmp_path / "out")
        rc = main(["evaluate", "--config", str(write_config(tmp_path, cfg))])
        assert rc == 4

    def test_train_fusion_before_dbres_is_exit_4(self, tiny_dataset, tmp_path):
        cfg = tiny_run_config(tiny_dataset, tmp_path / "out")
        rc = main(["train-fusion", "--config", str(write_config(tmp_path, cfg))])
        assert rc == 4

    def test_config_errors_exit_2(self, tmp_path):
        assert main(["prepare", "--config", str(tmp_path / "missing.json")]) == 2
        bad = tmp_path / "bad.json"
        bad.write_text("{not json")
        assert main(["prepare", "--config", str(bad)]) == 2
        unknown_key = write_config(tmp_path, {"data_dir": "x", "output_dir": "y", "bogus_key": 1})
        assert main(["prepare", "--config", str(unknown_key)]) == 2
        missing_dir = write_config(tmp_path, {"data_dir": str(tmp_path / "nope"), "output_dir": str(tmp_path / "o")})
        assert main(["prepare", "--config", str(missing_dir)]) == 2

    def test_data_errors_exit_3(self, tmp_path):
        data = tmp_path / "data"
        data.mkdir()
        (data / "1.txt").write_text("1 1 4000\nAV 1.hea 1.wav\n#Murmur: Maybe\n")
        rc = main(["stats", "--data-dir", str(data), "--output-dir", str(tmp_path / "out")])
        assert rc == 3


class TestStatsCommand:
    def test_writes_table_and_histogram(self, tiny_dataset, tmp_path, capsys):
        out = tmp_path / "out"
        rc = main(["stats", "--data-dir", str(tiny_dataset), "--output-dir", str(out), "--plot"])
        assert rc == 0
        table = (out / "stats" / "murmur_by_age.csv").read_text().splitlines()
        assert table[0].startswith("age_category,absent_n,absent_pct")
        assert table[-1].startswith("Total,")
        assert (out / "stats" / "recording_lengths.csv").exists()
        assert (out / "stats" / "recording_lengths.png").exists()
        assert (out / "manifests" / "stats.json").exists()
        assert "Total," in capsys.readouterr().out


class TestPipelineArtifacts:
    def test_prepare_artifacts_and_cache_idempotence(self, tiny_pipeline):
        out = Path(tiny_pipeline["output_dir"])
        assert (out / "split.json").exists()
        assert (out / "imputer.json").exists()
        assert (out / "features.csv").exists()
        cache_dirs = list((out / "spectrograms").iterdir())
        assert len(cache_dirs) == 1
        index_before = (cache_dirs[0] / "index.json").read_text()
        npy_mtimes = {p: p.stat().st_mtime_ns for p in cache_dirs[0].glob("*.npy")}

        rc = main(["prepare", "--config", str(tiny_pipeline["config_path"])])
        assert rc == 0
        assert (cache_dirs[0] / "index.json").read_text() == index_before
        assert {p: p.stat().st_mtime_ns for p in cache_dirs[0].glob("*.npy")} == npy_mtimes

    def test_split_is_patient_level_and_stratified(self, tiny_pipeline):
        out = Path(tiny_pipeline["output_dir"])
        split = json.loads((out / "split.json").read_text())
        assert not (set(split["train"]) & set(split["heldout"]))
        patients = {p.patient_id: p for p in load_patient_directory(tiny_pipeline["data_dir"])}
        heldout_labels = {patients[pid].murmur_label for pid in split["heldout"]}
        assert heldout_labels == {MurmurLabel.PRESENT, MurmurLabel.UNKNOWN, MurmurLabel.ABSENT}

    def test_model_manifests_written(self, tiny_pipeline):
        out = Path(tiny_pipeline["output_dir"])
        for stem in ("dbres_present", "dbres_unknown"):
            manifest = json.loads((out / "models" / f"{stem}.manifest.json").read_text())
            assert manifest["task"] in ("present_vs_rest", "unknown_vs_rest")
            assert len(manifest["epoch_metrics"]) == manifest["config"]["max_epochs"]
            assert manifest["split_hash"]
        fusion_manifest = json.loads((out / "models" / "fusion.manifest.json").read_text())
        assert fusion_manifest["schema_hash"] == fusion_schema_hash()
        assert fusion_manifest["rows_from"] == "dbres_validation_fold"

    def test_evaluate_writes_reports_and_is_byte_deterministic(self, tiny_pipeline):
        cfg_path = str(tiny_pipeline["config_path"])
        out = Path(tiny_pipeline["output_dir"])
        assert main(["evaluate", "--config", cfg_path]) == 0
        names = [
            "predictions_dbres.csv",
            "predictions_fused.csv",
            "report_dbres.json",
            "report_dbres.txt",
            "report_fused.json",
            "report_fused.txt",
            "eval_summary.json",
        ]
        first = {n: (out / "reports" / n).read_bytes() for n in names}
        report = json.loads(first["report_dbres.json"])
        assert 0.0 <= report["weighted_accuracy"] <= 1.0
        assert set(report) == {
            "weighted_accuracy", "accuracy", "n_patients",
            "per_class_present", "per_class_unknown", "per_class_absent",
        }
        manifest_first = (out / "manifests" / "evaluate.json").read_bytes()

        assert main(["evaluate", "--config", cfg_path]) == 0
        assert (out / "manifests" / "evaluate.json").read_bytes() == manifest_first
        for name in names:
            assert (out / "reports" / name).read_bytes() == first[name], name

    def test_every_artifact_is_reachable_from_a_manifest(self, tiny_pipeline):
        out = Path(tiny_pipeline["output_dir"])
        listed: set[Path] = set()
        for manifest_path in (out / "manifests").glob("*.json"):
            manifest = json.loads(manifest_path.read_text())
            listed |= {out / rel for rel in manifest["artifacts"]}
            assert manifest["config_hash"]
            assert manifest["data_inventory_hash"]
        for artifact in listed:
            assert artifact.exists(), artifact

    def test_predict_emits_rows_for_every_patient(self, tiny_pipeline, tmp_path):
        cfg = dict(tiny_pipeline["config"])
        rc = main(["predict", "--config", str(tiny_pipeline["config_path"])])
        assert rc == 0
        out = Path(cfg["output_dir"])
        lines = (out / "reports" / "predictions_dbres.csv").read_text().splitlines()
        patients = load_patient_directory(tiny_pipeline["data_dir"])
        assert len(lines) == len(patients) + 1
        fused = (out / "reports" / "predictions_fused.csv").read_text().splitlines()
        assert fused[0].endswith("prob_present,prob_unknown,prob_absent")
        assert len(fused) == len(patients) + 1


def test_cli_rejects_unknown_command():
    with pytest.raises(SystemExit):
        main(["frobnicate"])
