"""Patient-level aggregation of the two binary segment classifiers.

Segment probabilities are averaged arithmetically per task; the present
branch is checked first so present calls always win, then the unknown
branch, else absent. Ties at a threshold resolve to the positive branch.
"""

from __future__ import annotations

import csv
from dataclasses import dataclass
from pathlib import Path
from typing import Sequence

import numpy as np

from murmur.bayes_resnet import ProbEstimate, SegmentClassifier
from murmur.config import CascadeConfig, SegmentationConfig, SpectrogramConfig
from murmur.dsp import Spectrogram, SpectrogramCache, recording_spectrograms
from murmur.errors import EmptySegments, LengthMismatch, NoSegments, TooShort
from murmur.ingestion import MurmurLabel, PatientRecord, load_recording


@dataclass
class PatientPrediction:
    label: MurmurLabel
    present_mean: float
    present_std: float
    unknown_mean: float
    unknown_std: float
    n_segments: int


def cascade_label(present_mean: float, unknown_mean: float, cfg: CascadeConfig) -> MurmurLabel:
    """The three-branch priority rule on the two averaged outputs."""
    if present_mean >= cfg.present_threshold:
        return MurmurLabel.PRESENT
    if unknown_mean >= cfg.unknown_threshold:
        return MurmurLabel.UNKNOWN
    return MurmurLabel.ABSENT


def aggregate_probabilities(
    present_probs: Sequence[ProbEstimate],
    unknown_probs: Sequence[ProbEstimate],
    cfg: CascadeConfig,
) -> PatientPrediction:
    """Pool per-segment estimates into one patient prediction.

    Stds are aggregated as the root mean square of segment stds; they are
    diagnostic only and never enter the decision rule.
    """
    cfg.validate()
    if len(present_probs) == 0 or len(unknown_probs) == 0:
        raise EmptySegments("need at least one segment estimate per task")
    if len(present_probs) != len(unknown_probs):
        raise LengthMismatch(
            f"{len(present_probs)} present estimates vs {len(unknown_probs)} unknown estimates"
        )
    present_mean = float(np.mean([p.mean_prob for p in present_probs]))
    unknown_mean = float(np.mean([p.mean_prob for p in unknown_probs]))
    present_std = float(np.sqrt(np.mean([p.std**2 for p in present_probs])))
    unknown_std = float(np.sqrt(np.mean([p.std**2 for p in unknown_probs])))
    return PatientPrediction(
        label=cascade_label(present_mean, unknown_mean, cfg),
        present_mean=present_mean,
        present_std=present_std,
        unknown_mean=unknown_mean,
        unknown_std=unknown_std,
        n_segments=len(present_probs),
    )


def patient_spectrograms(
    patient: PatientRecord,
    seg_cfg: SegmentationConfig,
    spec_cfg: SpectrogramConfig,
    data_dir: str | Path | None = None,
    pad_short: bool = True,
    cache: SpectrogramCache | None = None,
) -> list[Spectrogram]:
    """All segments of all the patient's recordings, pooled in recording order.

    With padding disabled, recordings shorter than the window contribute
    nothing instead of failing the whole patient.
    """
    specs: list[Spectrogram] = []
    for idx, ref in enumerate(patient.recordings):
        if cache is not None and cache.has(patient.patient_id, idx):
            specs.extend(cache.get(patient.patient_id, idx))
            continue
        sig = load_recording(ref, base_dir=data_dir)
        try:
            specs.extend(
                recording_spectrograms(sig, seg_cfg, spec_cfg, patient.patient_id, idx, pad_short=pad_short)
            )
        except TooShort:
            continue
    return specs


def classify_patient_dbres(
    models: tuple[SegmentClassifier, SegmentClassifier],
    patient: PatientRecord,
    seg_cfg: SegmentationConfig,
    spec_cfg: SpectrogramConfig,
    cascade_cfg: CascadeConfig,
    data_dir: str | Path | None = None,
    pad_short: bool = True,
    cache: SpectrogramCache | None = None,
    n_mc: int | None = None,
) -> PatientPrediction:
    """Run both binary networks on every pooled segment and apply the cascade."""
    present_model, unknown_model = models
    specs = patient_spectrograms(
        patient, seg_cfg, spec_cfg, data_dir=data_dir, pad_short=pad_short, cache=cache
    )
    if not specs:
        raise NoSegments(f"{patient.patient_id}: no complete windows in any recording")
    present_probs = [present_model.mc_predict(s, n_mc=n_mc) for s in specs]
    unknown_probs = [unknown_model.mc_predict(s, n_mc=n_mc) for s in specs]
    return aggregate_probabilities(present_probs, unknown_probs, cascade_cfg)


PREDICTION_COLUMNS = (
    "patient_id",
    "label",
    "present_mean",
    "present_std",
    "unknown_mean",
    "unknown_std",
    "n_segments",
)


def write_predictions(
    path: str | Path,
    rows: Sequence[tuple[str, PatientPrediction]],
    probabilities: dict[str, tuple[float, float, float]] | None = None,
) -> None:
    """Prediction CSV; with `probabilities` given, three class-probability columns are appended."""
    header = list(PREDICTION_COLUMNS)
    if probabilities is not None:
        header += ["prob_present", "prob_unknown", "prob_absent"]
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(header)
        for patient_id, pred in rows:
            row = [
                patient_id,
                pred.label.value,
                repr(pred.present_mean),
                repr(pred.present_std),
                repr(pred.unknown_mean),
                repr(pred.unknown_std),
                pred.n_segments,
            ]
            if probabilities is not None:
                row += [repr(p) for p in probabilities[patient_id]]
            writer.writerow(row)
