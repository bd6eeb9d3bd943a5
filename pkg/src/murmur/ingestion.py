"""Patient metadata parsing, audio loading, demographics, splits, and dataset stats."""

from __future__ import annotations

import enum
import logging
import random
import wave
from dataclasses import dataclass, field
from decimal import ROUND_HALF_UP, Decimal
from pathlib import Path
from typing import Iterable, Sequence

import numpy as np
from scipy.io import wavfile

from murmur.config import AGE_TO_MONTHS
from murmur.errors import (
    ConfigError,
    DegenerateClass,
    EmptyAudio,
    ImputerNotFitted,
    MalformedHeader,
    MetadataError,
    RecordingCountMismatch,
    UnknownLabel,
    UnsupportedEncoding,
)

LOGGER = logging.getLogger(__name__)


class MurmurLabel(enum.Enum):
    PRESENT = "Present"
    UNKNOWN = "Unknown"
    ABSENT = "Absent"


class AgeCategory(enum.Enum):
    NEONATE = "Neonate"
    INFANT = "Infant"
    CHILD = "Child"
    ADOLESCENT = "Adolescent"
    YOUNG_ADULT = "YoungAdult"
    MISSING = "Missing"


class Sex(enum.Enum):
    FEMALE = "Female"
    MALE = "Male"
    MISSING = "Missing"


class Location(enum.Enum):
    PV = "PV"
    AV = "AV"
    MV = "MV"
    TV = "TV"
    OTHER = "Other"


# Label order used everywhere downstream (confusion matrices, reports).
LABEL_ORDER = (MurmurLabel.PRESENT, MurmurLabel.UNKNOWN, MurmurLabel.ABSENT)

# Dataset-descriptive recording-length range; outside it we warn, not reject.
EXPECTED_DURATION_RANGE_S = (5.0, 45.0)

_MISSING_TOKENS = {"", "nan"}

_AGE_ALIASES = {
    "neonate": AgeCategory.NEONATE,
    "infant": AgeCategory.INFANT,
    "child": AgeCategory.CHILD,
    "adolescent": AgeCategory.ADOLESCENT,
    "young adult": AgeCategory.YOUNG_ADULT,
    "youngadult": AgeCategory.YOUNG_ADULT,
}

_LOCATION_ALIASES = {
    "PV": Location.PV,
    "AV": Location.AV,
    "MV": Location.MV,
    "TV": Location.TV,
    "Phc": Location.OTHER,
    "Other": Location.OTHER,
}


@dataclass
class RecordingRef:
    """One auscultation recording of a patient.

    duration_s is unknown until the audio header has been probed.
    """

    location: Location
    audio_path: str
    sample_rate_hz: int
    duration_s: float | None = None


@dataclass
class PatientRecord:
    patient_id: str
    recordings: list[RecordingRef]
    age_category: AgeCategory = AgeCategory.MISSING
    sex: Sex = Sex.MISSING
    height_cm: float | None = None
    weight_kg: float | None = None
    pregnant: bool | None = None
    murmur_label: MurmurLabel | None = None


@dataclass
class AudioSignal:
    """Amplitude-normalized mono waveform."""

    samples: np.ndarray
    sample_rate_hz: int

    @property
    def duration_s(self) -> float:
        return len(self.samples) / self.sample_rate_hz


@dataclass
class DemographicVector:
    age_months: float
    sex_female: float
    sex_male: float
    height_cm: float
    weight_kg: float
    pregnant: float
    imputed_mask: frozenset[str] = field(default_factory=frozenset)

    FIELDS = ("age_months", "sex_female", "sex_male", "height_cm", "weight_kg", "pregnant")

    def as_array(self) -> np.ndarray:
        return np.array([getattr(self, name) for name in self.FIELDS], dtype=np.float64)


# --- metadata parsing -----------------------------------------------------


def _parse_comment_value(raw: str) -> str | None:
    value = raw.strip()
    return None if value.lower() in _MISSING_TOKENS else value


def parse_patient_metadata(text: str) -> PatientRecord:
    """Parse one patient's metadata file contents.

    Grammar: a header line ``<patient_id> <num_recordings> <sample_rate_hz>``,
    then one line per recording ``<location> <header_file> <audio_file> [...]``,
    then ``#<Key>: <Value>`` comment lines. Unrecognized keys are ignored;
    a literal ``nan`` value means missing.
    """
    lines = [ln.strip() for ln in text.splitlines() if ln.strip()]
    if not lines:
        raise MalformedHeader("empty metadata text")

    head = lines[0].split()
    if len(head) != 3:
        raise MalformedHeader(f"expected '<id> <n_recordings> <sample_rate>', got {lines[0]!r}")
    patient_id = head[0]
    try:
        declared = int(head[1])
        sample_rate = int(head[2])
    except ValueError as exc:
        raise MalformedHeader(f"non-integer counts in header {lines[0]!r}") from exc
    if sample_rate <= 0:
        raise MalformedHeader(f"sample rate must be positive, got {sample_rate}")

    recording_lines = [ln for ln in lines[1:] if not ln.startswith("#")]
    if len(recording_lines) != declared:
        raise RecordingCountMismatch(
            f"{patient_id}: header declares {declared} recordings, found {len(recording_lines)}"
        )
    if declared < 1:
        raise MetadataError(f"{patient_id}: patient must have at least one recording")
    if declared > 6:
        LOGGER.warning("%s: %d recordings exceeds the expected 1-6 range", patient_id, declared)

    recordings: list[RecordingRef] = []
    for ln in recording_lines:
        tokens = ln.split()
        if len(tokens) < 3:
            raise MetadataError(f"{patient_id}: recording line needs 3+ fields, got {ln!r}")
        loc = _LOCATION_ALIASES.get(tokens[0])
        if loc is None:
            raise MetadataError(f"{patient_id}: unknown auscultation location {tokens[0]!r}")
        wav_tokens = [t for t in tokens[1:] if t.lower().endswith(".wav")]
        audio = wav_tokens[0] if wav_tokens else tokens[2]
        recordings.append(RecordingRef(location=loc, audio_path=audio, sample_rate_hz=sample_rate))

    rec = PatientRecord(patient_id=patient_id, recordings=recordings)
    for ln in lines[1:]:
        if not ln.startswith("#") or ":" not in ln:
            continue
        key, _, raw = ln[1:].partition(":")
        key = key.strip().lower()
        value = _parse_comment_value(raw)
        if key == "age":
            if value is not None:
                cat = _AGE_ALIASES.get(value.lower())
                if cat is None:
                    raise MetadataError(f"{patient_id}: unknown age category {value!r}")
                rec.age_category = cat
        elif key == "sex":
            if value is not None:
                try:
                    rec.sex = Sex(value.capitalize())
                except ValueError as exc:
                    raise MetadataError(f"{patient_id}: unknown sex {value!r}") from exc
        elif key == "height":
            rec.height_cm = _parse_float(patient_id, "height", value)
        elif key == "weight":
            rec.weight_kg = _parse_float(patient_id, "weight", value)
        elif key == "pregnancy status":
            if value is not None:
                if value.lower() not in ("true", "false"):
                    raise MetadataError(f"{patient_id}: pregnancy status must be True/False, got {value!r}")
                rec.pregnant = value.lower() == "true"
        elif key == "murmur":
            if value is not None:
                try:
                    rec.murmur_label = MurmurLabel(value.capitalize())
                except ValueError as exc:
                    raise UnknownLabel(f"{patient_id}: murmur label {value!r} not in Present/Unknown/Absent") from exc
    return rec


def _parse_float(patient_id: str, name: str, value: str | None) -> float | None:
    if value is None:
        return None
    try:
        return float(value)
    except ValueError as exc:
        raise MetadataError(f"{patient_id}: {name} is not a number: {value!r}") from exc


def render_patient_metadata(rec: PatientRecord) -> str:
    """Write a PatientRecord back into the metadata grammar (inverse of parse)."""
    sr = rec.recordings[0].sample_rate_hz if rec.recordings else 4000
    lines = [f"{rec.patient_id} {len(rec.recordings)} {sr}"]
    for ref in rec.recordings:
        stem = Path(ref.audio_path).stem
        token = "Phc" if ref.location is Location.OTHER else ref.location.value
        lines.append(f"{token} {stem}.hea {ref.audio_path}")
    if rec.age_category is not AgeCategory.MISSING:
        age = "Young Adult" if rec.age_category is AgeCategory.YOUNG_ADULT else rec.age_category.value
        lines.append(f"#Age: {age}")
    if rec.sex is not Sex.MISSING:
        lines.append(f"#Sex: {rec.sex.value}")
    if rec.height_cm is not None:
        lines.append(f"#Height: {rec.height_cm}")
    if rec.weight_kg is not None:
        lines.append(f"#Weight: {rec.weight_kg}")
    if rec.pregnant is not None:
        lines.append(f"#Pregnancy status: {rec.pregnant}")
    if rec.murmur_label is not None:
        lines.append(f"#Murmur: {rec.murmur_label.value}")
    return "\n".join(lines) + "\n"


def load_patient_directory(data_dir: str | Path) -> list[PatientRecord]:
    """Parse every ``*.txt`` metadata file under data_dir, sorted by patient id."""
    data_dir = Path(data_dir)
    records = []
    for path in sorted(data_dir.glob("*.txt")):
        records.append(parse_patient_metadata(path.read_text()))
    return sorted(records, key=lambda r: r.patient_id)


# --- audio -----------------------------------------------------------------


def load_recording(ref: RecordingRef, base_dir: str | Path | None = None) -> AudioSignal:
    """Load one mono 16-bit PCM waveform, scaled to [-1, 1]."""
    path = Path(base_dir) / ref.audio_path if base_dir is not None else Path(ref.audio_path)
    try:
        sr, data = wavfile.read(path)
    except ValueError as exc:
        raise UnsupportedEncoding(f"{path}: not a readable PCM waveform file: {exc}") from exc
    if data.ndim != 1:
        raise UnsupportedEncoding(f"{path}: expected mono audio, got {data.ndim} channels")
    if data.dtype != np.int16:
        raise UnsupportedEncoding(f"{path}: expected 16-bit PCM, got dtype {data.dtype}")
    if data.size == 0:
        raise EmptyAudio(f"{path}: zero samples")
    if sr != ref.sample_rate_hz:
        LOGGER.warning("%s: file rate %d Hz differs from metadata %d Hz; using file rate",
                       path, sr, ref.sample_rate_hz)
    sig = AudioSignal(samples=data.astype(np.float64) / 32768.0, sample_rate_hz=int(sr))
    lo, hi = EXPECTED_DURATION_RANGE_S
    if not (lo <= sig.duration_s <= hi):
        LOGGER.warning("%s: duration %.2f s outside the expected %g-%g s range",
                       path, sig.duration_s, lo, hi)
    ref.duration_s = sig.duration_s
    ref.sample_rate_hz = int(sr)
    return sig


def probe_recording_duration(ref: RecordingRef, base_dir: str | Path | None = None) -> float | None:
    """Fill duration_s from the WAV header without decoding samples."""
    path = Path(base_dir) / ref.audio_path if base_dir is not None else Path(ref.audio_path)
    if not path.exists():
        return None
    try:
        with wave.open(str(path), "rb") as wav:
            frames = wav.getnframes()
            rate = wav.getframerate()
    except wave.Error:
        return None
    if rate <= 0:
        return None
    ref.duration_s = frames / rate
    return ref.duration_s


# --- demographics -----------------------------------------------------------


@dataclass
class DemographicImputer:
    """Per-field arithmetic means over the training split; fit once, then read-only."""

    means: dict[str, float] = field(default_factory=dict)

    @classmethod
    def fit(cls, patients: Iterable[PatientRecord]) -> "DemographicImputer":
        ages = []
        heights = []
        weights = []
        for rec in patients:
            if rec.age_category is not AgeCategory.MISSING:
                ages.append(AGE_TO_MONTHS[rec.age_category.value])
            if rec.height_cm is not None:
                heights.append(rec.height_cm)
            if rec.weight_kg is not None:
                weights.append(rec.weight_kg)
        means = {}
        if ages:
            means["age_months"] = float(np.mean(ages))
        if heights:
            means["height_cm"] = float(np.mean(heights))
        if weights:
            means["weight_kg"] = float(np.mean(weights))
        return cls(means=means)

    def mean_for(self, field_name: str) -> float:
        if field_name not in self.means:
            raise ImputerNotFitted(f"imputer has no training mean for {field_name!r}")
        return self.means[field_name]

    def to_dict(self) -> dict[str, float]:
        return dict(self.means)

    @classmethod
    def from_dict(cls, raw: dict[str, float]) -> "DemographicImputer":
        return cls(means={k: float(v) for k, v in raw.items()})


def encode_demographics(rec: PatientRecord, imputer: DemographicImputer) -> DemographicVector:
    """Numeric demographic vector with mean imputation of missing fields.

    Age categories map to months via AGE_TO_MONTHS; sex is one-hot with
    Missing as (0, 0); missing pregnancy encodes as 0. Every imputed field
    is named in imputed_mask.
    """
    imputed: set[str] = set()

    if rec.age_category is AgeCategory.MISSING:
        age_months = imputer.mean_for("age_months")
        imputed.add("age_months")
    else:
        age_months = AGE_TO_MONTHS[rec.age_category.value]

    sex_female = 1.0 if rec.sex is Sex.FEMALE else 0.0
    sex_male = 1.0 if rec.sex is Sex.MALE else 0.0

    if rec.height_cm is None:
        height = imputer.mean_for("height_cm")
        imputed.add("height_cm")
    else:
        height = rec.height_cm

    if rec.weight_kg is None:
        weight = imputer.mean_for("weight_kg")
        imputed.add("weight_kg")
    else:
        weight = rec.weight_kg

    if rec.pregnant is None:
        pregnant = 0.0
        imputed.add("pregnant")
    else:
        pregnant = 1.0 if rec.pregnant else 0.0

    return DemographicVector(
        age_months=age_months,
        sex_female=sex_female,
        sex_male=sex_male,
        height_cm=height,
        weight_kg=weight,
        pregnant=pregnant,
        imputed_mask=frozenset(imputed),
    )


# --- splitting ----------------------------------------------------------------


def split_dataset(
    patients: Sequence[PatientRecord],
    heldout_fraction: float,
    seed: int,
) -> tuple[list[PatientRecord], list[PatientRecord]]:
    """Stratified patient-level train/held-out split, deterministic given seed.

    Per class the held-out count is round(class_size * fraction), clamped so
    both sides keep at least one patient of every class.
    """
    if not (0 < heldout_fraction < 1):
        raise ConfigError(f"heldout_fraction must be in (0, 1), got {heldout_fraction}")
    by_label: dict[MurmurLabel, list[PatientRecord]] = {lab: [] for lab in LABEL_ORDER}
    for rec in patients:
        if rec.murmur_label is None:
            raise UnknownLabel(f"{rec.patient_id}: cannot split unlabeled patient")
        by_label[rec.murmur_label].append(rec)

    rng = random.Random(seed)
    train: list[PatientRecord] = []
    heldout: list[PatientRecord] = []
    for label in LABEL_ORDER:
        group = sorted(by_label[label], key=lambda r: r.patient_id)
        if len(group) < 2:
            raise DegenerateClass(
                f"class {label.value} has {len(group)} patient(s); need at least 2 to stratify"
            )
        k = round(len(group) * heldout_fraction)
        k = min(max(k, 1), len(group) - 1)
        rng.shuffle(group)
        heldout.extend(group[:k])
        train.extend(group[k:])
    train.sort(key=lambda r: r.patient_id)
    heldout.sort(key=lambda r: r.patient_id)
    return train, heldout


# --- dataset statistics ----------------------------------------------------------


#: Row order of the murmur-by-age table.
AGE_ROW_ORDER = (
    AgeCategory.NEONATE,
    AgeCategory.INFANT,
    AgeCategory.CHILD,
    AgeCategory.ADOLESCENT,
    AgeCategory.YOUNG_ADULT,
    AgeCategory.MISSING,
)

#: Column order of the murmur-by-age table.
STATS_COLUMN_ORDER = (MurmurLabel.ABSENT, MurmurLabel.UNKNOWN, MurmurLabel.PRESENT)

HIST_BIN_EDGES = np.arange(5.0, 46.0, 1.0)  # 1 s bins over [5, 45] s


def table_percent(count: int, total: int) -> float:
    """One-decimal percentage, rounded in two half-up stages (2 dp then 1 dp).

    The two-stage rounding matches the published-table convention; a single
    rounding step renders 495/942 as 52.5 rather than the tabulated 52.6.
    """
    if total == 0:
        return 0.0
    x = Decimal(100 * count) / Decimal(total)
    return float(x.quantize(Decimal("0.01"), ROUND_HALF_UP).quantize(Decimal("0.1"), ROUND_HALF_UP))


@dataclass
class StatsReport:
    """Murmur-by-age cross-tab plus recording-length histograms."""

    age_counts: dict[AgeCategory, dict[MurmurLabel, int]]
    total_patients: int
    length_histograms: dict[MurmurLabel, np.ndarray]
    hist_bin_edges: np.ndarray
    n_recordings_without_duration: int = 0

    def row(self, cat: AgeCategory) -> tuple[list[tuple[int, float]], int, float]:
        """Cells [(count, pct), ...] in STATS_COLUMN_ORDER plus the row sum cell."""
        counts = self.age_counts[cat]
        cells = [
            (counts[lab], table_percent(counts[lab], self.total_patients))
            for lab in STATS_COLUMN_ORDER
        ]
        row_sum = sum(counts[lab] for lab in STATS_COLUMN_ORDER)
        return cells, row_sum, table_percent(row_sum, self.total_patients)

    def column_total(self, label: MurmurLabel) -> tuple[int, float]:
        total = sum(self.age_counts[cat][label] for cat in AGE_ROW_ORDER)
        return total, table_percent(total, self.total_patients)


def dataset_stats(
    patients: Sequence[PatientRecord],
    durations_by_label: dict[MurmurLabel, Sequence[float]] | None = None,
) -> StatsReport:
    """Cross-tabulate murmur labels by age category and histogram recording lengths.

    Durations come from RecordingRef.duration_s when populated; empty input
    yields an all-zero report.
    """
    age_counts = {
        cat: {lab: 0 for lab in MurmurLabel} for cat in AGE_ROW_ORDER
    }
    for rec in patients:
        if rec.murmur_label is None:
            continue
        age_counts[rec.age_category][rec.murmur_label] += 1
    total = sum(c for row in age_counts.values() for c in row.values())

    histograms = {lab: np.zeros(len(HIST_BIN_EDGES) - 1, dtype=np.int64) for lab in MurmurLabel}
    missing = 0
    if durations_by_label is None:
        collected: dict[MurmurLabel, list[float]] = {lab: [] for lab in MurmurLabel}
        for rec in patients:
            if rec.murmur_label is None:
                continue
            for ref in rec.recordings:
                if ref.duration_s is None:
                    missing += 1
                else:
                    collected[rec.murmur_label].append(ref.duration_s)
        durations_by_label = collected
    for lab, durations in durations_by_label.items():
        if len(durations):
            histograms[lab], _ = np.histogram(np.asarray(durations, dtype=float), bins=HIST_BIN_EDGES)

    return StatsReport(
        age_counts=age_counts,
        total_patients=total,
        length_histograms=histograms,
        hist_bin_edges=HIST_BIN_EDGES.copy(),
        n_recordings_without_duration=missing,
    )


def write_stats_table(report: StatsReport, path: str | Path) -> None:
    """Comma-separated murmur-by-age table, one row per age category plus totals."""
    lines = ["age_category,absent_n,absent_pct,unknown_n,unknown_pct,present_n,present_pct,sum_n,sum_pct"]
    for cat in AGE_ROW_ORDER:
        cells, row_sum, row_pct = report.row(cat)
        flat = ",".join(f"{n},{p}" for n, p in cells)
        lines.append(f"{cat.value},{flat},{row_sum},{row_pct}")
    totals = [report.column_total(lab) for lab in STATS_COLUMN_ORDER]
    flat = ",".join(f"{n},{p}" for n, p in totals)
    lines.append(f"Total,{flat},{report.total_patients},{table_percent(report.total_patients, report.total_patients)}")
    Path(path).write_text("\n".join(lines) + "\n")


def write_length_histogram_csv(report: StatsReport, path: str | Path) -> None:
    lines = ["bin_start_s,bin_end_s,present,unknown,absent"]
    edges = report.hist_bin_edges
    for i in range(len(edges) - 1):
        counts = ",".join(str(int(report.length_histograms[lab][i])) for lab in LABEL_ORDER)
        lines.append(f"{edges[i]:g},{edges[i + 1]:g},{counts}")
    Path(path).write_text("\n".join(lines) + "\n")


def plot_length_histogram(report: StatsReport, path: str | Path) -> None:
    """Stacked recording-length histogram by murmur label (raster output)."""
    import matplotlib

    matplotlib.use("Agg")
    import matplotlib.pyplot as plt

    edges = report.hist_bin_edges
    centers = (edges[:-1] + edges[1:]) / 2
    fig, ax = plt.subplots(figsize=(7.5, 4.0))
    bottom = np.zeros(len(centers))
    for lab, hatch in zip(LABEL_ORDER, ("//", "..", None)):
        counts = report.length_histograms[lab]
        ax.bar(centers, counts, width=1.0, bottom=bottom, label=lab.value, hatch=hatch, edgecolor="black", linewidth=0.3)
        bottom = bottom + counts
    ax.set_xlabel("Recording length (s)")
    ax.set_ylabel("Count")
    ax.legend(title="Murmur")
    fig.tight_layout()
    fig.savefig(path, dpi=150)
    plt.close(fig)
