"""Log-mel spectrogram pipeline: windowing, STFT, mel projection, caching.

All framing is exact: no center padding anywhere, so a segment of N samples
with window w and hop h yields 1 + floor((N - w) / h) frames, and a recording
of N samples yields 1 + floor((N - w) / s) complete windows.
"""

from __future__ import annotations

import json
import logging
from dataclasses import dataclass
from pathlib import Path

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view
from scipy.signal import get_window

from murmur.config import SegmentationConfig, SpectrogramConfig, config_hash
from murmur.errors import ConfigError, EmptySignal, NyquistExceeded, SegmentTooShort, TooShort
from murmur.ingestion import AudioSignal

LOGGER = logging.getLogger(__name__)

DB_FLOOR = 1e-10
STANDARDIZE_VAR_FLOOR = 1e-12


@dataclass
class Spectrogram:
    """Standardized log-power mel matrix [n_mels x n_frames] with provenance."""

    values: np.ndarray
    source: tuple[str, int, float]  # (patient_id, recording index, segment start s)


def hz_to_mel(f_hz):
    return 2595.0 * np.log10(1.0 + np.asarray(f_hz, dtype=np.float64) / 700.0)


def mel_to_hz(mel):
    return 700.0 * (10.0 ** (np.asarray(mel, dtype=np.float64) / 2595.0) - 1.0)


def segment_signal(
    sig: AudioSignal,
    cfg: SegmentationConfig,
    pad_short: bool = True,
) -> list[AudioSignal]:
    """Cut a recording into complete overlapping windows starting at multiples of the stride.

    A recording shorter than one window is zero-padded up to it when
    pad_short is set, else rejected.
    """
    cfg.validate()
    if len(sig.samples) == 0:
        raise EmptySignal("cannot segment an empty signal")
    sr = sig.sample_rate_hz
    win = round(cfg.window_s * sr)
    stride = round(cfg.stride_s * sr)
    n = len(sig.samples)
    if n < win:
        if not pad_short:
            raise TooShort(f"recording is {n / sr:.3f} s, shorter than the {cfg.window_s} s window")
        padded = np.zeros(win, dtype=sig.samples.dtype)
        padded[:n] = sig.samples
        return [AudioSignal(samples=padded, sample_rate_hz=sr)]
    count = (n - win) // stride + 1
    return [
        AudioSignal(samples=sig.samples[k * stride : k * stride + win], sample_rate_hz=sr)
        for k in range(count)
    ]


def segment_start_times(sig: AudioSignal, cfg: SegmentationConfig, pad_short: bool = True) -> list[float]:
    """Start time (s) of each window segment_signal would emit."""
    sr = sig.sample_rate_hz
    win = round(cfg.window_s * sr)
    stride = round(cfg.stride_s * sr)
    n = len(sig.samples)
    if n < win:
        return [0.0] if pad_short else []
    count = (n - win) // stride + 1
    return [k * stride / sr for k in range(count)]


def mel_filterbank(
    n_mels: int,
    f_min_hz: float,
    f_max_hz: float,
    sample_rate_hz: int,
    n_fft: int,
) -> np.ndarray:
    """Triangular filters with centers uniformly spaced on the mel scale.

    Returns [n_mels x (n_fft//2 + 1)] nonnegative weights. A filter narrow
    enough to miss every FFT bin gets unit weight at the bin nearest its
    center frequency, so every row has at least one strictly positive weight.
    """
    if f_max_hz > sample_rate_hz / 2 + 1e-9:
        raise NyquistExceeded(
            f"f_max {f_max_hz} Hz exceeds Nyquist {sample_rate_hz / 2} Hz"
        )
    if n_mels < 1 or not (0 <= f_min_hz < f_max_hz):
        raise ConfigError(
            f"invalid filterbank request: n_mels={n_mels}, f_min={f_min_hz}, f_max={f_max_hz}"
        )

    bin_freqs = np.fft.rfftfreq(n_fft, d=1.0 / sample_rate_hz)
    points_hz = mel_to_hz(np.linspace(hz_to_mel(f_min_hz), hz_to_mel(f_max_hz), n_mels + 2))
    weights = np.zeros((n_mels, bin_freqs.size), dtype=np.float64)
    for m in range(n_mels):
        left, center, right = points_hz[m], points_hz[m + 1], points_hz[m + 2]
        rising = (bin_freqs - left) / (center - left)
        falling = (right - bin_freqs) / (right - center)
        weights[m] = np.maximum(0.0, np.minimum(rising, falling))
        if not np.any(weights[m] > 0):
            weights[m, int(np.argmin(np.abs(bin_freqs - center)))] = 1.0
    return weights


def mel_filter_band_edges(n_mels: int, f_min_hz: float, f_max_hz: float) -> list[tuple[float, float]]:
    """(left, right) Hz support of each triangular filter."""
    points_hz = mel_to_hz(np.linspace(hz_to_mel(f_min_hz), hz_to_mel(f_max_hz), n_mels + 2))
    return [(float(points_hz[m]), float(points_hz[m + 2])) for m in range(n_mels)]


def stft_window_params(cfg: SpectrogramConfig, sample_rate_hz: int) -> tuple[int, int]:
    """(window, hop) in samples for this sample rate."""
    win = round(cfg.stft_window_ms * sample_rate_hz / 1000.0)
    hop = round(cfg.stft_hop_ms * sample_rate_hz / 1000.0)
    return win, hop


def stft_power_frames(samples: np.ndarray, win: int, hop: int, window: np.ndarray) -> np.ndarray:
    """Power spectrum per complete frame, [n_frames x (win//2 + 1)]. FFT size equals win."""
    if len(samples) < win:
        raise SegmentTooShort(f"signal of {len(samples)} samples is shorter than one {win}-sample frame")
    frames = sliding_window_view(samples, win)[::hop]
    return np.abs(np.fft.rfft(frames * window, axis=1)) ** 2


def mel_power(segment: AudioSignal, cfg: SpectrogramConfig) -> np.ndarray:
    """Pre-log mel energies [n_mels x n_frames]; linear in signal power."""
    cfg.validate()
    sr = segment.sample_rate_hz
    win, hop = stft_window_params(cfg, sr)
    window = get_window("hann", win, fftbins=True)  # periodic Hann
    power = stft_power_frames(segment.samples, win, hop, window)
    fb = mel_filterbank(cfg.n_mels, cfg.f_min_hz, cfg.f_max_hz, sr, win)
    return (power @ fb.T).T


def log_mel_spectrogram(
    segment: AudioSignal,
    cfg: SpectrogramConfig,
    source: tuple[str, int, float] = ("", 0, 0.0),
) -> Spectrogram:
    """dB mel spectrogram, standardized to zero mean and unit variance.

    A zero-variance matrix (e.g. silence) maps to all zeros rather than NaN.
    """
    mel = mel_power(segment, cfg)
    db = 10.0 * np.log10(np.maximum(mel, DB_FLOOR))
    var = db.var()
    if var < STANDARDIZE_VAR_FLOOR:
        values = np.zeros_like(db)
    else:
        values = (db - db.mean()) / np.sqrt(var)
    return Spectrogram(values=values, source=source)


def recording_spectrograms(
    sig: AudioSignal,
    seg_cfg: SegmentationConfig,
    spec_cfg: SpectrogramConfig,
    patient_id: str,
    recording_index: int,
    pad_short: bool = True,
) -> list[Spectrogram]:
    """All segment spectrograms of one recording, in start-time order."""
    segments = segment_signal(sig, seg_cfg, pad_short=pad_short)
    starts = segment_start_times(sig, seg_cfg, pad_short=pad_short)
    return [
        log_mel_spectrogram(seg, spec_cfg, source=(patient_id, recording_index, start))
        for seg, start in zip(segments, starts)
    ]


class SpectrogramCache:
    """On-disk cache: one binary array file per recording plus a JSON index.

    The index maps "patient|recording|start_s" to a row offset inside that
    recording's array file. The cache directory is keyed by a hash of the
    segmentation + spectrogram configs and the pad flag, so stale entries
    can never be read under a different configuration.
    """

    def __init__(
        self,
        root: str | Path,
        seg_cfg: SegmentationConfig,
        spec_cfg: SpectrogramConfig,
        pad_short: bool = True,
    ):
        self.key = config_hash(
            {
                "segmentation": {"window_s": seg_cfg.window_s, "stride_s": seg_cfg.stride_s},
                "spectrogram": {
                    "n_mels": spec_cfg.n_mels,
                    "stft_window_ms": spec_cfg.stft_window_ms,
                    "stft_hop_ms": spec_cfg.stft_hop_ms,
                    "f_min_hz": spec_cfg.f_min_hz,
                    "f_max_hz": spec_cfg.f_max_hz,
                },
                "pad_short": pad_short,
            }
        )
        self.dir = Path(root) / self.key
        self.index_path = self.dir / "index.json"
        self._index: dict[str, dict] = {}
        if self.index_path.exists():
            self._index = json.loads(self.index_path.read_text())["entries"]

    @staticmethod
    def _rec_key(patient_id: str, recording_index: int) -> str:
        return f"{patient_id}|{recording_index}"

    def has(self, patient_id: str, recording_index: int) -> bool:
        key = self._rec_key(patient_id, recording_index)
        return key in self._index and (self.dir / self._index[key]["file"]).exists()

    def put(self, patient_id: str, recording_index: int, spectrograms: list[Spectrogram]) -> None:
        if not spectrograms:
            return
        self.dir.mkdir(parents=True, exist_ok=True)
        stack = np.stack([s.values for s in spectrograms]).astype(np.float32)
        fname = f"{patient_id}_{recording_index}.npy"
        np.save(self.dir / fname, stack)
        self._index[self._rec_key(patient_id, recording_index)] = {
            "file": fname,
            "starts": [s.source[2] for s in spectrograms],
        }

    def get(self, patient_id: str, recording_index: int) -> list[Spectrogram]:
        entry = self._index[self._rec_key(patient_id, recording_index)]
        stack = np.load(self.dir / entry["file"])
        return [
            Spectrogram(values=stack[i].astype(np.float64), source=(patient_id, recording_index, start))
            for i, start in enumerate(entry["starts"])
        ]

    def flush(self) -> None:
        self.dir.mkdir(parents=True, exist_ok=True)
        payload = {"config_hash": self.key, "entries": self._index}
        self.index_path.write_text(json.dumps(payload, indent=2, sort_keys=True) + "\n")
