"""Per-recording summary features in the time and frequency domains.

The 17-feature set is a fixed, versioned choice: eight time-domain
statistics, three whole-recording frequency-domain values, and mean/std
summaries of three per-frame spectral descriptors.
"""

from __future__ import annotations

import csv
import logging
from dataclasses import dataclass
from pathlib import Path
from typing import Sequence

import numpy as np
from scipy.signal import get_window
from scipy.stats import kurtosis as _kurtosis
from scipy.stats import skew as _skew

from murmur.config import SpectrogramConfig
from murmur.dsp import stft_power_frames, stft_window_params
from murmur.errors import EmptySignal
from murmur.ingestion import AudioSignal

LOGGER = logging.getLogger(__name__)

ROLLOFF_FRACTION = 0.85
SILENT_FRAME_POWER = 1e-12

FEATURE_NAMES = (
    "mean",
    "std",
    "min",
    "max",
    "rms",
    "skewness",
    "kurtosis",
    "zero_crossing_rate",
    "dominant_frequency_hz",
    "spectral_entropy",
    "total_power",
    "centroid_mean_hz",
    "centroid_std_hz",
    "rolloff_mean_hz",
    "rolloff_std_hz",
    "bandwidth_mean_hz",
    "bandwidth_std_hz",
)


@dataclass
class SignalFeatureVector:
    mean: float
    std: float
    min: float
    max: float
    rms: float
    skewness: float
    kurtosis: float
    zero_crossing_rate: float
    dominant_frequency_hz: float
    spectral_entropy: float
    total_power: float
    centroid_mean_hz: float
    centroid_std_hz: float
    rolloff_mean_hz: float
    rolloff_std_hz: float
    bandwidth_mean_hz: float
    bandwidth_std_hz: float

    def as_array(self) -> np.ndarray:
        return np.array([getattr(self, name) for name in FEATURE_NAMES], dtype=np.float64)

    @classmethod
    def from_array(cls, values: np.ndarray) -> "SignalFeatureVector":
        return cls(**{name: float(v) for name, v in zip(FEATURE_NAMES, values)})


def frame_spectral_descriptors(
    sig: AudioSignal,
    cfg: SpectrogramConfig,
) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """Per-STFT-frame (centroid, rolloff, bandwidth), all in Hz.

    Centroid is the power-weighted mean frequency; rolloff the smallest
    frequency where cumulative power reaches ROLLOFF_FRACTION of the frame
    total; bandwidth the power-weighted standard deviation around the
    centroid. Silent frames yield 0 for all three.
    """
    sr = sig.sample_rate_hz
    win, hop = stft_window_params(cfg, sr)
    window = get_window("hann", win, fftbins=True)
    power = stft_power_frames(sig.samples, win, hop, window)
    freqs = np.fft.rfftfreq(win, d=1.0 / sr)

    total = power.sum(axis=1)
    live = total >= SILENT_FRAME_POWER
    n_frames = power.shape[0]
    centroid = np.zeros(n_frames)
    rolloff = np.zeros(n_frames)
    bandwidth = np.zeros(n_frames)

    if np.any(live):
        p = power[live]
        t = total[live]
        centroid[live] = (p @ freqs) / t
        cum = np.cumsum(p, axis=1)
        idx = np.argmax(cum >= ROLLOFF_FRACTION * t[:, None], axis=1)
        rolloff[live] = freqs[idx]
        deviation = freqs[None, :] - centroid[live][:, None]
        bandwidth[live] = np.sqrt(np.einsum("ij,ij->i", deviation**2, p) / t)
    return centroid, rolloff, bandwidth


def extract_signal_features(
    sig: AudioSignal,
    cfg: SpectrogramConfig | None = None,
) -> SignalFeatureVector:
    """Full 17-feature summary of one recording."""
    x = np.asarray(sig.samples, dtype=np.float64)
    if x.size == 0:
        raise EmptySignal("cannot extract features from an empty signal")
    cfg = cfg or SpectrogramConfig()

    std = float(x.std())
    if std < 1e-15:
        skewness, kurt = 0.0, 0.0  # undefined on a constant signal
    else:
        skewness, kurt = float(_skew(x)), float(_kurtosis(x))
    zcr = float(np.count_nonzero(x[:-1] * x[1:] < 0) / (x.size - 1)) if x.size > 1 else 0.0

    spectrum = np.abs(np.fft.rfft(x)) ** 2
    freqs = np.fft.rfftfreq(x.size, d=1.0 / sig.sample_rate_hz)
    total_spec = spectrum.sum()
    dominant = float(freqs[int(np.argmax(spectrum))])
    if total_spec > 0:
        p = spectrum / total_spec
        nz = p[p > 0]
        entropy = float(-(nz * np.log(nz)).sum())
    else:
        entropy = 0.0

    win, _ = stft_window_params(cfg, sig.sample_rate_hz)
    if x.size >= win:
        centroid, rolloff, bandwidth = frame_spectral_descriptors(sig, cfg)
    else:
        LOGGER.warning("signal of %d samples too short for spectral descriptors", x.size)
        centroid = rolloff = bandwidth = np.zeros(1)

    return SignalFeatureVector(
        mean=float(x.mean()),
        std=std,
        min=float(x.min()),
        max=float(x.max()),
        rms=float(np.sqrt(np.mean(x**2))),
        skewness=skewness,
        kurtosis=kurt,
        zero_crossing_rate=zcr,
        dominant_frequency_hz=dominant,
        spectral_entropy=entropy,
        total_power=float(np.mean(x**2)),
        centroid_mean_hz=float(centroid.mean()),
        centroid_std_hz=float(centroid.std()),
        rolloff_mean_hz=float(rolloff.mean()),
        rolloff_std_hz=float(rolloff.std()),
        bandwidth_mean_hz=float(bandwidth.mean()),
        bandwidth_std_hz=float(bandwidth.std()),
    )


def write_feature_table(
    path: str | Path,
    rows: Sequence[tuple[str, str, SignalFeatureVector]],
) -> None:
    """CSV export: one row per recording, columns patient_id, location, then FEATURE_NAMES."""
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(("patient_id", "location") + FEATURE_NAMES)
        for patient_id, location, feats in rows:
            writer.writerow([patient_id, location] + [repr(v) for v in feats.as_array().tolist()])


def read_feature_table(path: str | Path) -> list[tuple[str, str, SignalFeatureVector]]:
    rows = []
    with open(path, newline="") as fh:
        reader = csv.reader(fh)
        header = next(reader)
        assert tuple(header[2:]) == FEATURE_NAMES, "feature table schema mismatch"
        for row in reader:
            rows.append((row[0], row[1], SignalFeatureVector.from_array(np.array([float(v) for v in row[2:]]))))
    return rows
