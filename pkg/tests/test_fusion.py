"""Fusion vector construction and the boosted-tree integration model."""

from __future__ import annotations

import pickle

import numpy as np
import pytest

from murmur.cascade import PatientPrediction
from murmur.config import FusionModelConfig
from murmur.errors import (
    EmptyDataset,
    FeatureSchemaMismatch,
    NoRecordings,
    SingleClassDataset,
    WidthMismatch,
)
from murmur.fusion import (
    FUSION_FEATURE_NAMES,
    FUSION_WIDTH,
    FusionVector,
    build_fusion_vector,
    classify_patient_fused,
    fusion_schema_hash,
    label_from_probabilities,
    train_fusion_model,
)
from murmur.ingestion import DemographicVector, MurmurLabel
from murmur.signal_features import FEATURE_NAMES, SignalFeatureVector


def demo_vec() -> DemographicVector:
    return DemographicVector(72.0, 1.0, 0.0, 110.0, 20.0, 0.0)


def sig_vec(fill: float) -> SignalFeatureVector:
    return SignalFeatureVector.from_array(np.full(len(FEATURE_NAMES), fill))


def prediction(pm=0.8, ps=0.1, um=0.2, us=0.05) -> PatientPrediction:
    return PatientPrediction(MurmurLabel.PRESENT, pm, ps, um, us, 4)


class TestFusionVector:
    def test_width_and_block_order(self):
        vec = build_fusion_vector(prediction(), demo_vec(), [sig_vec(3.0)])
        assert vec.values.shape == (FUSION_WIDTH,) == (27,)
        assert vec.values[0] == 0.8  # dbres present mean is the first slot
        np.testing.assert_array_equal(vec.values[4:10], demo_vec().as_array())
        np.testing.assert_array_equal(vec.values[10:], np.full(17, 3.0))

    def test_single_recording_block_is_its_features(self):
        vec = build_fusion_vector(prediction(), demo_vec(), [sig_vec(5.0)])
        np.testing.assert_array_equal(vec.values[10:], sig_vec(5.0).as_array())

    def test_two_recordings_average_elementwise(self):
        vec = build_fusion_vector(prediction(), demo_vec(), [sig_vec(2.0), sig_vec(4.0)])
        np.testing.assert_array_equal(vec.values[10:], np.full(17, 3.0))

    def test_no_recordings_raises(self):
        with pytest.raises(NoRecordings):
            build_fusion_vector(prediction(), demo_vec(), [])

    def test_schema_is_versioned_and_27_named_features(self):
        assert len(FUSION_FEATURE_NAMES) == 27
        assert FUSION_FEATURE_NAMES[0] == "dbres_present_mean"
        assert len(fusion_schema_hash()) == 16


def separable_rows(n_per_class=30, seed=0):
    """Label decided by one feature: a linearly separable toy problem."""
    rng = np.random.default_rng(seed)
    rows = []
    for i, label in enumerate(MurmurLabel):
        for _ in range(n_per_class):
            values = rng.uniform(0, 1, FUSION_WIDTH)
            values[0] = i + rng.uniform(0, 0.5)  # class i lives in [i, i + 0.5)
            rows.append((FusionVector(values), label))
    return rows


class TestFusionModel:
    def test_separable_training_reaches_accuracy_one(self):
        rows = separable_rows()
        model = train_fusion_model(rows, FusionModelConfig(n_trees=50, seed=0))
        correct = sum(
            classify_patient_fused(model, vec)[0] is label for vec, label in rows
        )
        assert correct == len(rows)

    def test_deterministic_given_seed(self):
        rows = separable_rows(seed=3)
        probes = [vec for vec, _ in separable_rows(n_per_class=5, seed=99)]
        a = train_fusion_model(rows, FusionModelConfig(seed=11))
        b = train_fusion_model(rows, FusionModelConfig(seed=11))
        for probe in probes:
            np.testing.assert_array_equal(a.predict_probabilities(probe), b.predict_probabilities(probe))

    def test_probabilities_sum_to_one(self):
        model = train_fusion_model(separable_rows(), FusionModelConfig(n_trees=30))
        for vec, _ in separable_rows(n_per_class=4, seed=5):
            probs = model.predict_probabilities(vec)
            assert probs.sum() == pytest.approx(1.0, abs=1e-6)
            assert (probs >= 0).all()

    def test_output_labels_stay_in_the_ternary_set(self):
        model = train_fusion_model(separable_rows(), FusionModelConfig(n_trees=30))
        rng = np.random.default_rng(0)
        for _ in range(20):
            label, _ = classify_patient_fused(model, FusionVector(rng.uniform(-5, 5, FUSION_WIDTH)))
            assert label in set(MurmurLabel)

    def test_training_loss_non_increasing_in_boosting_rounds(self):
        model = train_fusion_model(separable_rows(), FusionModelConfig(n_trees=120, seed=2))
        losses = model.train_losses
        assert len(losses) == 120
        assert (np.diff(losses) <= 1e-12).all()

    def test_empty_and_single_class_errors(self):
        with pytest.raises(EmptyDataset):
            train_fusion_model([], FusionModelConfig())
        rows = [(FusionVector(np.zeros(FUSION_WIDTH)), MurmurLabel.ABSENT) for _ in range(5)]
        with pytest.raises(SingleClassDataset):
            train_fusion_model(rows, FusionModelConfig())

    def test_width_mismatch(self):
        model = train_fusion_model(separable_rows(), FusionModelConfig(n_trees=10))
        with pytest.raises(WidthMismatch):
            model.predict_probabilities(FusionVector(np.zeros(26)))

    def test_tie_break_order_present_unknown_absent(self):
        third = np.array([1 / 3, 1 / 3, 1 / 3])
        assert label_from_probabilities(third) is MurmurLabel.PRESENT
        assert label_from_probabilities(np.array([0.2, 0.4, 0.4])) is MurmurLabel.UNKNOWN
        assert label_from_probabilities(np.array([0.2, 0.3, 0.5])) is MurmurLabel.ABSENT

    def test_save_load_round_trip_and_schema_guard(self, tmp_path):
        model = train_fusion_model(separable_rows(), FusionModelConfig(n_trees=20, seed=4))
        path = tmp_path / "fusion.pkl"
        model.save(path, split_hash="abc")
        loaded = type(model).load(path)
        probe = separable_rows(n_per_class=2, seed=8)[0][0]
        np.testing.assert_array_equal(
            loaded.predict_probabilities(probe), model.predict_probabilities(probe)
        )

        # permuted-schema artifact must be rejected, never silently scored
        with open(path, "rb") as fh:
            payload = pickle.load(fh)
        payload["schema_hash"] = "0" * 16
        stale = tmp_path / "stale.pkl"
        with open(stale, "wb") as fh:
            pickle.dump(payload, fh)
        with pytest.raises(FeatureSchemaMismatch):
            type(model).load(stale)

    def test_two_class_training_still_emits_three_probabilities(self):
        rows = [row for row in separable_rows(n_per_class=15) if row[1] is not MurmurLabel.UNKNOWN]
        model = train_fusion_model(rows, FusionModelConfig(n_trees=20))
        probs = model.predict_probabilities(rows[0][0])
        assert probs.shape == (3,)
        assert probs[1] == 0.0  # class never seen in training
        assert probs.sum() == pytest.approx(1.0, abs=1e-6)
