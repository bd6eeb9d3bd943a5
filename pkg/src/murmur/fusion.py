"""Gradient-boosted fusion of cascade outputs, demographics, and signal features.

The 27-wide feature vector has a canonical, versioned ordering; its schema
hash travels with every fitted model so a layout drift between training and
inference fails loudly instead of silently scoring garbage.
"""

from __future__ import annotations

import hashlib
import pickle
from dataclasses import dataclass
from pathlib import Path
from typing import Sequence

import numpy as np
from sklearn.ensemble import GradientBoostingClassifier

from murmur.cascade import PatientPrediction
from murmur.config import FusionModelConfig
from murmur.errors import (
    EmptyDataset,
    FeatureSchemaMismatch,
    NoRecordings,
    SingleClassDataset,
    WidthMismatch,
)
from murmur.ingestion import LABEL_ORDER, DemographicVector, MurmurLabel
from murmur.signal_features import FEATURE_NAMES, SignalFeatureVector

FUSION_SCHEMA_VERSION = 1

FUSION_FEATURE_NAMES: tuple[str, ...] = (
    ("dbres_present_mean", "dbres_present_std", "dbres_unknown_mean", "dbres_unknown_std")
    + tuple(f"demo_{name}" for name in DemographicVector.FIELDS)
    + tuple(f"sig_{name}" for name in FEATURE_NAMES)
)

FUSION_WIDTH = len(FUSION_FEATURE_NAMES)

_LABEL_TO_INT = {label: i for i, label in enumerate(LABEL_ORDER)}


def fusion_schema_hash() -> str:
    blob = f"v{FUSION_SCHEMA_VERSION}:" + ",".join(FUSION_FEATURE_NAMES)
    return hashlib.sha256(blob.encode()).hexdigest()[:16]


@dataclass
class FusionVector:
    """Fixed-width (27) per-patient feature vector in canonical block order."""

    values: np.ndarray

    def __post_init__(self):
        self.values = np.asarray(self.values, dtype=np.float64)


def build_fusion_vector(
    pred: PatientPrediction,
    demo: DemographicVector,
    sig_feats: Sequence[SignalFeatureVector],
) -> FusionVector:
    """Concatenate cascade outputs, demographics, and the per-patient mean signal features."""
    if len(sig_feats) == 0:
        raise NoRecordings("need at least one recording's signal features")
    dbres_block = np.array(
        [pred.present_mean, pred.present_std, pred.unknown_mean, pred.unknown_std],
        dtype=np.float64,
    )
    signal_block = np.mean([f.as_array() for f in sig_feats], axis=0)
    return FusionVector(values=np.concatenate([dbres_block, demo.as_array(), signal_block]))


class FusionModel:
    """Boosted-tree ternary classifier over FusionVectors."""

    def __init__(self, cfg: FusionModelConfig):
        cfg.validate()
        self.cfg = cfg
        self.schema_hash = fusion_schema_hash()
        self._model = GradientBoostingClassifier(
            n_estimators=cfg.n_trees,
            max_depth=cfg.max_depth,
            learning_rate=cfg.learning_rate,
            random_state=cfg.seed,
        )
        self.fitted = False

    def fit(self, X: np.ndarray, y: np.ndarray) -> "FusionModel":
        self._model.fit(X, y)
        self.fitted = True
        return self

    @property
    def train_losses(self) -> np.ndarray:
        """Training softmax loss after each boosting round."""
        return np.asarray(self._model.train_score_)

    def predict_probabilities(self, vec: FusionVector) -> np.ndarray:
        """Probabilities over (Present, Unknown, Absent); classes unseen in training get 0."""
        if vec.values.shape != (FUSION_WIDTH,):
            raise WidthMismatch(f"expected width {FUSION_WIDTH}, got shape {vec.values.shape}")
        raw = self._model.predict_proba(vec.values[None, :])[0]
        probs = np.zeros(3, dtype=np.float64)
        for cls, p in zip(self._model.classes_, raw):
            probs[int(cls)] = p
        return probs

    def save(self, path: str | Path, split_hash: str = "") -> None:
        payload = {
            "config": self.cfg,
            "schema_hash": self.schema_hash,
            "split_hash": split_hash,
            "model": self._model,
        }
        with open(path, "wb") as fh:
            pickle.dump(payload, fh)

    @classmethod
    def load(cls, path: str | Path) -> "FusionModel":
        with open(path, "rb") as fh:
            payload = pickle.load(fh)
        if payload["schema_hash"] != fusion_schema_hash():
            raise FeatureSchemaMismatch(
                f"model at {path} was trained on feature schema {payload['schema_hash']}, "
                f"code expects {fusion_schema_hash()}"
            )
        obj = cls(payload["config"])
        obj._model = payload["model"]
        obj.fitted = True
        return obj


def train_fusion_model(
    rows: Sequence[tuple[FusionVector, MurmurLabel]],
    cfg: FusionModelConfig,
) -> FusionModel:
    """Fit the boosted ensemble on (vector, label) rows; deterministic given cfg.seed."""
    if len(rows) == 0:
        raise EmptyDataset("no fusion training rows")
    labels = {label for _, label in rows}
    if len(labels) < 2:
        raise SingleClassDataset(f"all fusion labels identical ({labels.pop().value})")
    X = np.stack([vec.values for vec, _ in rows])
    if X.shape[1] != FUSION_WIDTH:
        raise WidthMismatch(f"expected width {FUSION_WIDTH}, got {X.shape[1]}")
    y = np.array([_LABEL_TO_INT[label] for _, label in rows], dtype=np.int64)
    return FusionModel(cfg).fit(X, y)


def label_from_probabilities(probs: np.ndarray) -> MurmurLabel:
    """Argmax with ties resolved in priority order Present > Unknown > Absent."""
    return LABEL_ORDER[int(np.argmax(probs))]


def classify_patient_fused(model: FusionModel, vec: FusionVector) -> tuple[MurmurLabel, np.ndarray]:
    probs = model.predict_probabilities(vec)
    return label_from_probabilities(probs), probs
