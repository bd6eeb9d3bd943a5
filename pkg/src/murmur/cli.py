"""Experiment harness: prepare / train-dbres / train-fusion / evaluate / predict / stats.

Every command resolves one RunConfig (JSON file plus CLI overrides), writes
its artifacts under output_dir, and records a manifest with the resolved
config and input hashes so deterministic runs are exactly reproducible.
Exit codes: 2 config errors, 3 data errors, 4 missing model artifacts.
"""

from __future__ import annotations

import argparse
import hashlib
import json
import logging
import random
import sys
from pathlib import Path

import numpy as np

from murmur import __version__
from murmur.config import (
    ModelConfig,
    RunConfig,
    config_hash,
    load_run_config,
)
from murmur.errors import ArtifactError, ConfigError, MurmurError
from murmur.ingestion import (
    LABEL_ORDER,
    DemographicImputer,
    MurmurLabel,
    PatientRecord,
    dataset_stats,
    encode_demographics,
    load_patient_directory,
    load_recording,
    plot_length_histogram,
    probe_recording_duration,
    split_dataset,
    write_length_histogram_csv,
    write_stats_table,
)

LOGGER = logging.getLogger(__name__)

COMMANDS = ("prepare", "train-dbres", "train-fusion", "evaluate", "predict", "stats")


# --- paths -------------------------------------------------------------------


def _paths(cfg: RunConfig) -> dict[str, Path]:
    out = Path(cfg.output_dir)
    return {
        "out": out,
        "split": out / "split.json",
        "imputer": out / "imputer.json",
        "features": out / "features.csv",
        "cache_root": out / "spectrograms",
        "models": out / "models",
        "present_model": out / "models" / "dbres_present.pt",
        "unknown_model": out / "models" / "dbres_unknown.pt",
        "fusion_model": out / "models" / "fusion.pkl",
        "reports": out / "reports",
        "stats": out / "stats",
        "manifests": out / "manifests",
    }


def _seed_everything(cfg: RunConfig) -> None:
    import torch

    random.seed(cfg.seed)
    np.random.seed(cfg.seed % (2**32))
    torch.manual_seed(cfg.seed)
    if cfg.deterministic:
        torch.use_deterministic_algorithms(True, warn_only=True)


def _split_hash(train: list[PatientRecord], heldout: list[PatientRecord]) -> str:
    blob = "train:" + ",".join(p.patient_id for p in train)
    blob += ";heldout:" + ",".join(p.patient_id for p in heldout)
    return hashlib.sha256(blob.encode()).hexdigest()[:16]


def _data_inventory_hash(data_dir: Path) -> str:
    """Content hash of metadata files plus (name, size) of audio files."""
    h = hashlib.sha256()
    for path in sorted(data_dir.glob("*.txt")):
        h.update(path.name.encode())
        h.update(path.read_bytes())
    for path in sorted(data_dir.glob("*.wav")):
        h.update(f"{path.name}:{path.stat().st_size}".encode())
    return h.hexdigest()[:16]


def _write_manifest(cfg: RunConfig, command: str, artifacts: list[Path]) -> Path:
    paths = _paths(cfg)
    paths["manifests"].mkdir(parents=True, exist_ok=True)
    out_root = paths["out"]
    manifest = {
        "command": command,
        "package_version": __version__,
        "config": cfg.to_dict(),
        "config_hash": config_hash(cfg),
        "data_inventory_hash": _data_inventory_hash(Path(cfg.data_dir)),
        "artifacts": sorted(str(p.relative_to(out_root)) for p in artifacts),
    }
    path = paths["manifests"] / f"{command}.json"
    path.write_text(json.dumps(manifest, indent=2, sort_keys=True) + "\n")
    return path


# --- shared pipeline pieces ----------------------------------------------------


def _load_patients(cfg: RunConfig) -> list[PatientRecord]:
    data_dir = Path(cfg.data_dir)
    if not data_dir.is_dir():
        raise ConfigError(f"data_dir does not exist: {data_dir}")
    patients = load_patient_directory(data_dir)
    if not patients:
        raise ConfigError(f"no patient metadata (*.txt) found under {data_dir}")
    return patients


def _resolve_split(
    cfg: RunConfig, patients: list[PatientRecord]
) -> tuple[list[PatientRecord], list[PatientRecord]]:
    """Load the persisted split if its parameters match, else compute and persist it."""
    paths = _paths(cfg)
    by_id = {p.patient_id: p for p in patients}
    labeled = [p for p in patients if p.murmur_label is not None]
    if paths["split"].exists():
        stored = json.loads(paths["split"].read_text())
        if (
            stored["seed"] == cfg.seed
            and stored["heldout_fraction"] == cfg.heldout_fraction
            and set(stored["train"]) | set(stored["heldout"]) == {p.patient_id for p in labeled}
        ):
            train = [by_id[p] for p in stored["train"]]
            heldout = [by_id[p] for p in stored["heldout"]]
            return train, heldout
    train, heldout = split_dataset(labeled, cfg.heldout_fraction, cfg.seed)
    paths["out"].mkdir(parents=True, exist_ok=True)
    paths["split"].write_text(
        json.dumps(
            {
                "seed": cfg.seed,
                "heldout_fraction": cfg.heldout_fraction,
                "train": [p.patient_id for p in train],
                "heldout": [p.patient_id for p in heldout],
                "split_hash": _split_hash(train, heldout),
            },
            indent=2,
            sort_keys=True,
        )
        + "\n"
    )
    return train, heldout


def _cache(cfg: RunConfig):
    from murmur.dsp import SpectrogramCache

    return SpectrogramCache(
        _paths(cfg)["cache_root"], cfg.segmentation, cfg.spectrogram, pad_short=cfg.pad_short
    )


def _ensure_prepared(cfg: RunConfig) -> dict:
    """Run prepare work if its artifacts are missing; idempotent via the cache key."""
    paths = _paths(cfg)
    cache = _cache(cfg)
    patients = _load_patients(cfg)
    train, heldout = _resolve_split(cfg, patients)

    if not paths["imputer"].exists():
        imputer = DemographicImputer.fit(train)
        paths["imputer"].write_text(json.dumps(imputer.to_dict(), indent=2, sort_keys=True) + "\n")
    else:
        imputer = DemographicImputer.from_dict(json.loads(paths["imputer"].read_text()))

    from murmur.dsp import recording_spectrograms
    from murmur.signal_features import extract_signal_features, write_feature_table

    need_features = not paths["features"].exists()
    feature_rows = []
    computed = 0
    for patient in patients:
        for idx, ref in enumerate(patient.recordings):
            cached = cache.has(patient.patient_id, idx)
            if cached and not need_features:
                continue
            sig = load_recording(ref, base_dir=cfg.data_dir)
            if not cached:
                cache.put(
                    patient.patient_id,
                    idx,
                    recording_spectrograms(
                        sig, cfg.segmentation, cfg.spectrogram,
                        patient.patient_id, idx, pad_short=cfg.pad_short,
                    ),
                )
                computed += 1
            if need_features:
                feature_rows.append(
                    (patient.patient_id, ref.location.value, extract_signal_features(sig, cfg.spectrogram))
                )
    cache.flush()
    if need_features:
        write_feature_table(paths["features"], feature_rows)
    LOGGER.info("prepare: %d recordings newly cached (key %s)", computed, cache.key)
    return {"patients": patients, "train": train, "heldout": heldout, "imputer": imputer, "cache": cache}


def _load_signal_features(cfg: RunConfig) -> dict[str, list]:
    from murmur.signal_features import read_feature_table

    rows = read_feature_table(_paths(cfg)["features"])
    by_patient: dict[str, list] = {}
    for patient_id, _loc, feats in rows:
        by_patient.setdefault(patient_id, []).append(feats)
    return by_patient


def _effective_model_cfg(cfg: RunConfig, model_cfg: ModelConfig) -> ModelConfig:
    if cfg.use_pretrained:
        return model_cfg
    import dataclasses

    return dataclasses.replace(model_cfg, pretrained=False)


def _require(path: Path, what: str) -> Path:
    if not path.exists():
        raise ArtifactError(f"missing model artifacts: {what} not found at {path}; train it first")
    return path


def _load_dbres_models(cfg: RunConfig):
    from murmur.bayes_resnet import SegmentClassifier

    paths = _paths(cfg)
    present = SegmentClassifier.load(_require(paths["present_model"], "present-vs-rest model"))
    unknown = SegmentClassifier.load(_require(paths["unknown_model"], "unknown-vs-rest model"))
    return present, unknown


def _dbres_predictions(
    cfg: RunConfig, models, patients: list[PatientRecord], cache
) -> dict[str, "object"]:
    from murmur.cascade import classify_patient_dbres

    preds = {}
    for patient in sorted(patients, key=lambda p: p.patient_id):
        preds[patient.patient_id] = classify_patient_dbres(
            models,
            patient,
            cfg.segmentation,
            cfg.spectrogram,
            cfg.cascade,
            data_dir=cfg.data_dir,
            pad_short=cfg.pad_short,
            cache=cache,
        )
    return preds


def _majority_baseline(train: list[PatientRecord], heldout: list[PatientRecord]) -> dict:
    from murmur.scoring import score_report

    counts = {label: 0 for label in LABEL_ORDER}
    for p in train:
        counts[p.murmur_label] += 1
    majority = max(LABEL_ORDER, key=lambda lab: counts[lab])
    report = score_report([(p.murmur_label, majority) for p in heldout])
    return {
        "label": majority.value,
        "weighted_accuracy": report.weighted_accuracy,
        "accuracy": report.accuracy,
    }


# --- commands ---------------------------------------------------------------------


def cmd_prepare(cfg: RunConfig) -> int:
    _seed_everything(cfg)
    _ensure_prepared(cfg)
    paths = _paths(cfg)
    artifacts = [paths["split"], paths["imputer"], paths["features"], _cache(cfg).index_path]
    _write_manifest(cfg, "prepare", artifacts)
    return 0


def cmd_train_dbres(cfg: RunConfig) -> int:
    from murmur.bayes_resnet import (
        PRESENT_VS_REST,
        UNKNOWN_VS_REST,
        build_bayesian_resnet,
        train_segment_classifier,
        write_model_manifest,
    )

    _seed_everything(cfg)
    prepared = _ensure_prepared(cfg)
    paths = _paths(cfg)
    paths["models"].mkdir(parents=True, exist_ok=True)
    cache = prepared["cache"]

    # patient-level validation carve-out from the train split, stratified
    train_core, val = split_dataset(prepared["train"], cfg.val_fraction, cfg.seed + 1)
    split_hash = _split_hash(prepared["train"], prepared["heldout"])

    def segment_rows(patients, task):
        rows = []
        for p in sorted(patients, key=lambda r: r.patient_id):
            for idx in range(len(p.recordings)):
                for spec in cache.get(p.patient_id, idx):
                    rows.append((spec, task.binarize(p.murmur_label)))
        return rows

    artifacts = []
    for task, model_cfg, ckpt_key in (
        (PRESENT_VS_REST, cfg.present_model, "present_model"),
        (UNKNOWN_VS_REST, cfg.unknown_model, "unknown_model"),
    ):
        eff_cfg = _effective_model_cfg(cfg, model_cfg)
        clf = build_bayesian_resnet(task, eff_cfg, weights_path=cfg.pretrained_weights_path)
        clf, _history = train_segment_classifier(
            clf, segment_rows(train_core, task), eff_cfg, val_data=segment_rows(val, task)
        )
        ckpt = paths[ckpt_key]
        clf.save(ckpt)
        manifest = ckpt.with_suffix(".manifest.json")
        write_model_manifest(manifest, clf, split_hash)
        artifacts += [ckpt, manifest]
        LOGGER.info("trained %s -> %s", task.name, ckpt)

    # persist the inner validation patients for fusion training
    val_path = paths["models"] / "dbres_val_patients.json"
    val_path.write_text(json.dumps(sorted(p.patient_id for p in val)) + "\n")
    artifacts.append(val_path)
    _write_manifest(cfg, "train-dbres", artifacts)
    return 0


def cmd_train_fusion(cfg: RunConfig) -> int:
    from murmur.fusion import build_fusion_vector, fusion_schema_hash, train_fusion_model

    _seed_everything(cfg)
    paths = _paths(cfg)
    models = _load_dbres_models(cfg)  # fail fast before any prepare work
    prepared = _ensure_prepared(cfg)

    val_path = paths["models"] / "dbres_val_patients.json"
    if cfg.fusion_on_train or not val_path.exists():
        # naive variant: fusion rows reuse DBRes's own training patients
        fusion_patients = prepared["train"]
    else:
        val_ids = set(json.loads(val_path.read_text()))
        fusion_patients = [p for p in prepared["train"] if p.patient_id in val_ids]

    features = _load_signal_features(cfg)
    preds = _dbres_predictions(cfg, models, fusion_patients, prepared["cache"])
    rows = []
    for patient in fusion_patients:
        demo = encode_demographics(patient, prepared["imputer"])
        vec = build_fusion_vector(preds[patient.patient_id], demo, features[patient.patient_id])
        rows.append((vec, patient.murmur_label))
    model = train_fusion_model(rows, cfg.fusion)

    split_hash = _split_hash(prepared["train"], prepared["heldout"])
    model.save(paths["fusion_model"], split_hash=split_hash)
    manifest_path = paths["fusion_model"].with_suffix(".manifest.json")
    manifest_path.write_text(
        json.dumps(
            {
                "config": cfg.fusion.__dict__,
                "schema_hash": fusion_schema_hash(),
                "split_hash": split_hash,
                "n_rows": len(rows),
                "rows_from": "train" if cfg.fusion_on_train else "dbres_validation_fold",
            },
            indent=2,
            sort_keys=True,
        )
        + "\n"
    )
    _write_manifest(cfg, "train-fusion", [paths["fusion_model"], manifest_path])
    return 0


def cmd_evaluate(cfg: RunConfig) -> int:
    from murmur.cascade import write_predictions
    from murmur.fusion import FusionModel, build_fusion_vector, classify_patient_fused
    from murmur.scoring import score_report, write_report

    _seed_everything(cfg)
    paths = _paths(cfg)
    models = _load_dbres_models(cfg)  # fail fast before any prepare work
    fusion_model = FusionModel.load(_require(paths["fusion_model"], "fusion model"))
    prepared = _ensure_prepared(cfg)
    paths["reports"].mkdir(parents=True, exist_ok=True)

    heldout = prepared["heldout"]
    features = _load_signal_features(cfg)
    preds = _dbres_predictions(cfg, models, heldout, prepared["cache"])

    dbres_pairs = []
    fused_pairs = []
    fused_probs = {}
    for patient in sorted(heldout, key=lambda p: p.patient_id):
        pred = preds[patient.patient_id]
        dbres_pairs.append((patient.murmur_label, pred.label))
        demo = encode_demographics(patient, prepared["imputer"])
        vec = build_fusion_vector(pred, demo, features[patient.patient_id])
        fused_label, probs = classify_patient_fused(fusion_model, vec)
        fused_pairs.append((patient.murmur_label, fused_label))
        fused_probs[patient.patient_id] = tuple(probs.tolist())

    ordered = sorted(heldout, key=lambda p: p.patient_id)
    rows = [(p.patient_id, preds[p.patient_id]) for p in ordered]
    write_predictions(paths["reports"] / "predictions_dbres.csv", rows)
    write_predictions(paths["reports"] / "predictions_fused.csv", rows, probabilities=fused_probs)

    dbres_report = score_report(dbres_pairs)
    fused_report = score_report(fused_pairs)
    write_report(
        dbres_report,
        paths["reports"] / "report_dbres.json",
        paths["reports"] / "report_dbres.txt",
        title="DBRes held-out score report",
    )
    write_report(
        fused_report,
        paths["reports"] / "report_fused.json",
        paths["reports"] / "report_fused.txt",
        title="Fused (boosted-tree integration) held-out score report",
    )

    summary = {
        "n_heldout": len(heldout),
        "majority_baseline": _majority_baseline(prepared["train"], heldout),
        "dbres_weighted_accuracy": dbres_report.weighted_accuracy,
        "dbres_accuracy": dbres_report.accuracy,
        "fused_weighted_accuracy": fused_report.weighted_accuracy,
        "fused_accuracy": fused_report.accuracy,
    }
    (paths["reports"] / "eval_summary.json").write_text(
        json.dumps(summary, indent=2, sort_keys=True) + "\n"
    )

    artifacts = [
        paths["reports"] / name
        for name in (
            "predictions_dbres.csv",
            "predictions_fused.csv",
            "report_dbres.json",
            "report_dbres.txt",
            "report_fused.json",
            "report_fused.txt",
            "eval_summary.json",
        )
    ]
    _write_manifest(cfg, "evaluate", artifacts)
    print(json.dumps(summary, indent=2, sort_keys=True))
    return 0


def cmd_predict(cfg: RunConfig) -> int:
    from murmur.cascade import write_predictions
    from murmur.fusion import FusionModel, build_fusion_vector, classify_patient_fused

    _seed_everything(cfg)
    paths = _paths(cfg)
    models = _load_dbres_models(cfg)
    patients = _load_patients(cfg)
    cache = _cache(cfg)
    paths["reports"].mkdir(parents=True, exist_ok=True)

    preds = _dbres_predictions(cfg, models, patients, cache)
    ordered = sorted(patients, key=lambda p: p.patient_id)
    rows = [(p.patient_id, preds[p.patient_id]) for p in ordered]
    write_predictions(paths["reports"] / "predictions_dbres.csv", rows)
    artifacts = [paths["reports"] / "predictions_dbres.csv"]

    if paths["fusion_model"].exists() and paths["imputer"].exists() and paths["features"].exists():
        fusion_model = FusionModel.load(paths["fusion_model"])
        imputer = DemographicImputer.from_dict(json.loads(paths["imputer"].read_text()))
        features = _load_signal_features(cfg)
        fused_probs = {}
        for patient in ordered:
            demo = encode_demographics(patient, imputer)
            vec = build_fusion_vector(preds[patient.patient_id], demo, features[patient.patient_id])
            _, probs = classify_patient_fused(fusion_model, vec)
            fused_probs[patient.patient_id] = tuple(probs.tolist())
        write_predictions(paths["reports"] / "predictions_fused.csv", rows, probabilities=fused_probs)
        artifacts.append(paths["reports"] / "predictions_fused.csv")
    else:
        LOGGER.warning("fusion model or prepare artifacts missing; emitting DBRes predictions only")

    _write_manifest(cfg, "predict", artifacts)
    return 0


def cmd_stats(cfg: RunConfig, plot: bool = False) -> int:
    patients = _load_patients(cfg)
    for patient in patients:
        for ref in patient.recordings:
            probe_recording_duration(ref, base_dir=cfg.data_dir)
    report = dataset_stats(patients)
    paths = _paths(cfg)
    paths["stats"].mkdir(parents=True, exist_ok=True)
    table_path = paths["stats"] / "murmur_by_age.csv"
    hist_path = paths["stats"] / "recording_lengths.csv"
    write_stats_table(report, table_path)
    write_length_histogram_csv(report, hist_path)
    artifacts = [table_path, hist_path]
    if plot:
        png_path = paths["stats"] / "recording_lengths.png"
        plot_length_histogram(report, png_path)
        artifacts.append(png_path)
    if report.n_recordings_without_duration:
        LOGGER.warning(
            "%d recordings lack audio files; histogram covers the rest",
            report.n_recordings_without_duration,
        )
    _write_manifest(cfg, "stats", artifacts)
    print(table_path.read_text(), end="")
    return 0


# --- argument handling -----------------------------------------------------------


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="murmur",
        description="Heart murmur classification pipeline (dual Bayesian ResNet + boosted fusion).",
    )
    parser.add_argument("command", choices=COMMANDS)
    parser.add_argument("--config", help="JSON RunConfig file; CLI flags override it")
    parser.add_argument("--data-dir", help="directory of patient metadata and WAV files")
    parser.add_argument("--output-dir", help="directory for artifacts, models, and reports")
    parser.add_argument("--seed", type=int, help="master seed for splits and evaluation")
    parser.add_argument(
        "--no-pretrained",
        action="store_true",
        help="random-init the segment classifiers instead of loading external weights",
    )
    parser.add_argument(
        "--deterministic",
        action="store_true",
        help="force deterministic torch algorithms and seeding",
    )
    parser.add_argument("--plot", action="store_true", help="stats: also write the histogram PNG")
    parser.add_argument("-v", "--verbose", action="store_true")
    return parser


def resolve_config(args: argparse.Namespace) -> RunConfig:
    cfg = load_run_config(args.config) if args.config else RunConfig()
    if args.data_dir:
        cfg.data_dir = args.data_dir
    if args.output_dir:
        cfg.output_dir = args.output_dir
    if args.seed is not None:
        cfg.seed = args.seed
    if args.no_pretrained:
        cfg.use_pretrained = False
    if args.deterministic:
        cfg.deterministic = True
    cfg.validate()
    return cfg


def main(argv: list[str] | None = None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(
        level=logging.DEBUG if args.verbose else logging.INFO,
        format="%(levelname)s %(name)s: %(message)s",
        stream=sys.stderr,
    )
    try:
        cfg = resolve_config(args)
        try:
            Path(cfg.output_dir).mkdir(parents=True, exist_ok=True)
        except OSError as exc:
            raise ConfigError(f"output_dir is not writable: {exc}") from exc
        if args.command == "prepare":
            return cmd_prepare(cfg)
        if args.command == "train-dbres":
            return cmd_train_dbres(cfg)
        if args.command == "train-fusion":
            return cmd_train_fusion(cfg)
        if args.command == "evaluate":
            return cmd_evaluate(cfg)
        if args.command == "predict":
            return cmd_predict(cfg)
        if args.command == "stats":
            return cmd_stats(cfg, plot=args.plot)
        raise ConfigError(f"unknown command {args.command!r}")
    except MurmurError as exc:
        category = {2: "config error", 3: "data error", 4: "missing model artifacts"}.get(
            exc.exit_code, "error"
        )
        print(f"murmur: {category}: {exc}", file=sys.stderr)
        return exc.exit_code


def entrypoint() -> None:
    sys.exit(main())


if __name__ == "__main__":
    entrypoint()
