"""Exception taxonomy. CLI exit codes hang off the three base categories."""

from __future__ import annotations


class MurmurError(Exception):
    """Base class for all package errors."""

    exit_code = 1


class ConfigError(MurmurError):
    """Invalid or inconsistent configuration."""

    exit_code = 2


class DataError(MurmurError):
    """Malformed, missing, or degenerate input data."""

    exit_code = 3


class ArtifactError(MurmurError):
    """A required model artifact (checkpoint, weights file) is missing or stale."""

    exit_code = 4


# --- ingestion ---------------------------------------------------------

class MetadataError(DataError):
    """Patient metadata text violates the grammar."""


class MalformedHeader(MetadataError):
    pass


class UnknownLabel(MetadataError):
    pass


class RecordingCountMismatch(MetadataError):
    pass


class UnsupportedEncoding(DataError):
    pass


class EmptyAudio(DataError):
    pass


class ImputerNotFitted(DataError):
    pass


class DegenerateClass(DataError):
    pass


# --- dsp / signal features ---------------------------------------------

class TooShort(DataError):
    pass


class SegmentTooShort(DataError):
    pass


class EmptySignal(DataError):
    pass


class NyquistExceeded(ConfigError):
    pass


# --- models -------------------------------------------------------------

class WeightsUnavailable(ArtifactError):
    pass


class EmptyDataset(DataError):
    pass


class SingleClassDataset(DataError):
    pass


# --- cascade -------------------------------------------------------------

class EmptySegments(DataError):
    pass


class LengthMismatch(DataError):
    pass


class NoSegments(DataError):
    pass


# --- fusion ---------------------------------------------------------------

class NoRecordings(DataError):
    pass


class WidthMismatch(DataError):
    pass


class FeatureSchemaMismatch(ArtifactError):
    pass


# --- scoring ---------------------------------------------------------------

class UnknownLabelValue(DataError):
    pass


class EmptyEvaluation(DataError):
    pass
