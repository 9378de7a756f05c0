"""Differential-entropy features over a bandpass filterbank, and sequence windows."""

from __future__ import annotations

from dataclasses import dataclass
from typing import Sequence

import numpy as np
from scipy import signal

from .ingest.dataset import DEFAULT_BANDS, EpochFeatures, LabeledEpochs

VARIANCE_FLOOR = 1e-12
FILTER_ORDER = 4


def _band_sos(fs: float, low: float, high: float) -> np.ndarray:
    nyq = fs / 2.0
    if low >= nyq:
        raise ValueError(f"band {low}-{high} Hz lies entirely above Nyquist ({nyq} Hz)")
    high = min(high, 0.99 * nyq)
    return signal.butter(FILTER_ORDER, [low, high], btype="bandpass", fs=fs, output="sos")


def bandpass_filterbank(
    x: np.ndarray, fs: float, bands: Sequence[tuple[float, float]] = DEFAULT_BANDS
) -> np.ndarray:
    """Zero-phase Butterworth bandpass per band, output ``(len(bands), ..., T)``.

    Upper edges at or beyond Nyquist are clamped to 0.99 x Nyquist.
    """
    x = np.asarray(x, dtype=np.float64)
    return np.stack([signal.sosfiltfilt(_band_sos(fs, lo, hi), x, axis=-1) for lo, hi in bands])


def differential_entropy(xb: np.ndarray, axis: int = -1) -> np.ndarray:
    """Gaussian differential entropy ``0.5 * ln(2 pi e var)`` along ``axis``."""
    var = np.maximum(np.var(np.asarray(xb, dtype=np.float64), axis=axis), VARIANCE_FLOOR)
    return 0.5 * np.log(2.0 * np.pi * np.e * var)


def featurize_recording(
    epochs: LabeledEpochs, bands: Sequence[tuple[float, float]] = DEFAULT_BANDS, subject: int = 0
) -> EpochFeatures:
    """DE of each band for every epoch and channel: ``(num_epochs, Q, len(bands))``."""
    filtered = bandpass_filterbank(epochs.epochs, epochs.fs, bands)  # (B, E, Q, T)
    de = differential_entropy(filtered, axis=-1)  # (B, E, Q)
    return EpochFeatures(
        np.moveaxis(de, 0, -1),
        epochs.labels.copy(),
        list(bands),
        list(epochs.channel_names),
        epochs.fs,
        np.full(len(epochs.labels), subject, dtype=np.int64),
    )


@dataclass
class SequenceSample:
    X: np.ndarray  # (P, Q, F), centre row is the target epoch
    label: int
    index: int


def window_indices(num_epochs: int, d: int, boundary: str = "replicate") -> tuple[np.ndarray, np.ndarray]:
    """Row indices ``(n, 2d+1)`` into the epoch axis plus the centre epochs.

    ``replicate`` repeats the first/last epoch so every epoch is a centre;
    ``drop`` keeps only centres with a full neighbourhood.
    """
    if d < 0:
        raise ValueError("half-width d must be nonnegative")
    if boundary not in ("replicate", "drop"):
        raise ValueError(f"unknown boundary policy {boundary!r}")
    offsets = np.arange(-d, d + 1)
    if boundary == "replicate":
        centres = np.arange(num_epochs)
    else:
        centres = np.arange(d, num_epochs - d)
    idx = np.clip(centres[:, None] + offsets[None, :], 0, max(num_epochs - 1, 0))
    return idx, centres


def window_sequences(features: EpochFeatures, d: int = 4, boundary: str = "replicate") -> list[SequenceSample]:
    idx, centres = window_indices(len(features.labels), d, boundary)
    return [SequenceSample(features.X_all[row], int(features.labels[c]), int(c)) for row, c in zip(idx, centres)]


def sequence_arrays(features: EpochFeatures, d: int = 4, boundary: str = "replicate"):
    """Stacked windows ``(X, y, subjects)`` ready for training.

    Windows never cross a subject boundary. Pre-windowed datasets pass
    through unchanged.
    """
    if features.windowed:
        return features.X_all, features.labels, features.subjects
    Xs, ys, ss = [], [], []
    for subj in np.unique(features.subjects):
        rows = np.nonzero(features.subjects == subj)[0]
        idx, centres = window_indices(rows.size, d, boundary)
        if idx.size == 0:
            continue
        Xs.append(features.X_all[rows[idx]])
        ys.append(features.labels[rows[centres]])
        ss.append(features.subjects[rows[centres]])
    if not Xs:
        shape = (0, 2 * d + 1) + features.X_all.shape[1:]
        return np.zeros(shape), np.zeros(0, dtype=np.int64), np.zeros(0, dtype=np.int64)
    return np.concatenate(Xs), np.concatenate(ys), np.concatenate(ss)
