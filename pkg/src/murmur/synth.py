"""Synthetic mini-dataset for desk-scale runs and CI.

Each class gets a distinct, learnable spectral signature: Present patients
carry periodic 500 Hz tone bursts, Absent patients a low-frequency hum, and
Unknown patients broadband noise with no tonal structure. Standardized
spectrograms keep the shapes separable while absolute level is discarded.
"""

from __future__ import annotations

import random
from pathlib import Path

import numpy as np
from scipy.io import wavfile

from murmur.ingestion import (
    AgeCategory,
    Location,
    MurmurLabel,
    PatientRecord,
    RecordingRef,
    Sex,
    render_patient_metadata,
)

PRESENT_TONE_HZ = 500.0
ABSENT_HUM_HZ = 80.0


def _bursts(duration_s: float, sr: int, tone_hz: float, amp: float, rng: np.random.Generator) -> np.ndarray:
    """Tone gated by a heartbeat-like on/off envelope."""
    t = np.arange(round(duration_s * sr)) / sr
    period = 0.8 + 0.1 * rng.uniform(-1, 1)
    envelope = ((t % period) < 0.45 * period).astype(np.float64)
    phase = rng.uniform(0, 2 * np.pi)
    return amp * envelope * np.sin(2 * np.pi * tone_hz * t + phase)


def synth_waveform(label: MurmurLabel, duration_s: float, sr: int, rng: np.random.Generator) -> np.ndarray:
    noise = rng.normal(0.0, 0.05, size=round(duration_s * sr))
    if label is MurmurLabel.PRESENT:
        tone = _bursts(duration_s, sr, PRESENT_TONE_HZ * (1 + 0.02 * rng.uniform(-1, 1)), 0.6, rng)
        wave = noise + tone + _bursts(duration_s, sr, ABSENT_HUM_HZ, 0.3, rng)
    elif label is MurmurLabel.ABSENT:
        wave = noise + _bursts(duration_s, sr, ABSENT_HUM_HZ * (1 + 0.05 * rng.uniform(-1, 1)), 0.4, rng)
    else:  # Unknown: broadband noise swamps any structure
        wave = rng.normal(0.0, 0.5, size=round(duration_s * sr))
    return np.clip(wave, -0.99, 0.99)


def _random_demographics(rec: PatientRecord, rng: random.Random) -> None:
    cats = [c for c in AgeCategory if c is not AgeCategory.MISSING]
    rec.age_category = rng.choice(cats) if rng.random() > 0.1 else AgeCategory.MISSING
    rec.sex = rng.choice([Sex.FEMALE, Sex.MALE]) if rng.random() > 0.05 else Sex.MISSING
    rec.height_cm = round(rng.uniform(45, 180), 1) if rng.random() > 0.15 else None
    rec.weight_kg = round(rng.uniform(3, 90), 1) if rng.random() > 0.15 else None
    if rec.sex is Sex.FEMALE and rec.age_category in (AgeCategory.ADOLESCENT, AgeCategory.YOUNG_ADULT):
        rec.pregnant = rng.random() < 0.2
    elif rng.random() > 0.1:
        rec.pregnant = False
    else:
        rec.pregnant = None


def generate_synthetic_dataset(
    out_dir: str | Path,
    n_patients: int = 30,
    seed: int = 0,
    sample_rate_hz: int = 4000,
    duration_range_s: tuple[float, float] = (6.0, 10.0),
) -> list[str]:
    """Write metadata + WAV files for a labeled synthetic cohort; returns patient ids.

    Label proportions roughly track the real cohort (half absent, the rest
    split between present and unknown), with at least two patients per class
    so stratified splitting always works.
    """
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    rng = random.Random(seed)
    audio_rng = np.random.default_rng(seed)

    labels = [MurmurLabel.PRESENT, MurmurLabel.UNKNOWN, MurmurLabel.ABSENT] * 2
    while len(labels) < n_patients:
        r = rng.random()
        if r < 0.5:
            labels.append(MurmurLabel.ABSENT)
        elif r < 0.77:
            labels.append(MurmurLabel.PRESENT)
        else:
            labels.append(MurmurLabel.UNKNOWN)
    labels = labels[:n_patients]
    rng.shuffle(labels)

    patient_ids = []
    for i, label in enumerate(labels):
        pid = f"{9000 + i}"
        n_rec = rng.randint(1, 3)
        locations = rng.sample([Location.PV, Location.AV, Location.MV, Location.TV], n_rec)
        recordings = []
        for loc in locations:
            wav_name = f"{pid}_{loc.value}.wav"
            duration = rng.uniform(*duration_range_s)
            wave = synth_waveform(label, duration, sample_rate_hz, audio_rng)
            wavfile.write(out_dir / wav_name, sample_rate_hz, (wave * 32767).astype(np.int16))
            recordings.append(
                RecordingRef(location=loc, audio_path=wav_name, sample_rate_hz=sample_rate_hz)
            )
        rec = PatientRecord(patient_id=pid, recordings=recordings, murmur_label=label)
        _random_demographics(rec, rng)
        (out_dir / f"{pid}.txt").write_text(render_patient_metadata(rec))
        patient_ids.append(pid)
    return patient_ids
