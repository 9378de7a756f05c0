"""Containers for segmented epochs and extracted features, and their file form.

The feature file is one binary container: magic ``PGSN``, an 8-byte
little-endian manifest length, a JSON manifest (shapes, channel names, band
edges, label map, sampling rate) and a little-endian float64 payload.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from ..autodiff import read_container, write_container
from .edf import EdfRecording
from .labels import STAGES, map_labels

EPOCH_SECONDS = 30.0
DEFAULT_BANDS = (
    (0.5, 4.0),
    (2.0, 6.0),
    (4.0, 8.0),
    (6.0, 11.0),
    (8.0, 14.0),
    (11.0, 22.0),
    (14.0, 31.0),
    (22.0, 40.0),
    (31.0, 50.0),
)


class AlignmentError(ValueError):
    pass


@dataclass
class LabeledEpochs:
    epochs: np.ndarray  # (num_epochs, Q, T_s)
    labels: np.ndarray  # class indices into STAGES
    fs: float
    channel_names: list[str]

    def __post_init__(self):
        if self.epochs.ndim != 3:
            raise ValueError(f"epochs must be (num_epochs, Q, T_s), got {self.epochs.shape}")
        if self.epochs.shape[2] != int(round(EPOCH_SECONDS * self.fs)):
            raise ValueError(f"epoch length {self.epochs.shape[2]} != 30 s at {self.fs} Hz")
        if len(self.labels) != self.epochs.shape[0]:
            raise AlignmentError("label count differs from epoch count")
        if len(self.labels) and (self.labels.min() < 0 or self.labels.max() >= len(STAGES)):
            raise ValueError("labels outside the 5-class set")


@dataclass
class EpochFeatures:
    """Per-epoch features ``(num_epochs, Q, F)``.

    Pre-windowed sequence data (synthetic sets) is stored as
    ``(num_samples, P, Q, F)`` in the same container.
    """

    X_all: np.ndarray
    labels: np.ndarray
    band_edges: list[tuple[float, float]] = field(default_factory=lambda: list(DEFAULT_BANDS))
    channel_names: list[str] = field(default_factory=list)
    fs: float = 0.0
    subjects: np.ndarray | None = None
    label_names: tuple[str, ...] = STAGES

    def __post_init__(self):
        self.X_all = np.asarray(self.X_all, dtype=np.float64)
        self.labels = np.asarray(self.labels, dtype=np.int64)
        if self.X_all.ndim not in (3, 4):
            raise ValueError(f"X_all must be 3-d or 4-d, got shape {self.X_all.shape}")
        if len(self.labels) != self.X_all.shape[0]:
            raise ValueError("labels and X_all disagree on the number of epochs")
        if self.subjects is None:
            self.subjects = np.zeros(len(self.labels), dtype=np.int64)
        self.subjects = np.asarray(self.subjects, dtype=np.int64)
        if not self.channel_names:
            self.channel_names = [f"ch{i}" for i in range(self.X_all.shape[-2])]
        self.band_edges = [tuple(map(float, b)) for b in self.band_edges]

    @property
    def windowed(self) -> bool:
        return self.X_all.ndim == 4

    @property
    def num_channels(self) -> int:
        return self.X_all.shape[-2]

    @property
    def num_features(self) -> int:
        return self.X_all.shape[-1]

    def subset(self, mask) -> "EpochFeatures":
        return EpochFeatures(
            self.X_all[mask],
            self.labels[mask],
            self.band_edges,
            self.channel_names,
            self.fs,
            self.subjects[mask],
            self.label_names,
        )


def concatenate(parts: list[EpochFeatures]) -> EpochFeatures:
    first = parts[0]
    return EpochFeatures(
        np.concatenate([p.X_all for p in parts]),
        np.concatenate([p.labels for p in parts]),
        first.band_edges,
        first.channel_names,
        first.fs,
        np.concatenate([p.subjects for p in parts]),
        first.label_names,
    )


def segment_epochs(
    recording: EdfRecording,
    raw_labels,
    channels: list[str] | None = None,
    standard: str = "RK",
) -> LabeledEpochs:
    """Cut a recording into 30 s epochs aligned with a hypnogram.

    The trailing partial epoch is dropped. Epochs whose label maps to
    movement/unknown are removed together with their data.
    """
    names = recording.labels
    if channels is None:
        idx = list(range(len(names)))
    else:
        missing = [c for c in channels if c not in names]
        if missing:
            raise KeyError(f"requested channels not in recording: {missing}")
        idx = [names.index(c) for c in channels]
    rates = {recording.sampling_rate(i) for i in idx}
    if len(rates) != 1:
        raise ValueError(f"selected channels have differing sampling rates: {sorted(rates)}")
    fs = rates.pop()
    per_epoch = int(round(EPOCH_SECONDS * fs))
    total = min(recording.signals[i].size for i in idx)
    if total < per_epoch:
        raise AlignmentError("recording shorter than one 30 s epoch")
    n_epochs = total // per_epoch
    raw_labels = list(raw_labels)
    if len(raw_labels) != n_epochs:
        raise AlignmentError(f"{len(raw_labels)} labels for {n_epochs} epochs")
    data = np.stack([recording.signals[i][: n_epochs * per_epoch].reshape(n_epochs, per_epoch) for i in idx], axis=1)
    labels, keep = map_labels(raw_labels, standard)
    return LabeledEpochs(data[keep], labels, fs, [names[i] for i in idx])


FEATURES_VERSION = 1


def write_dataset(path, features: EpochFeatures) -> None:
    meta = {
        "kind": "epoch_features",
        "features_version": FEATURES_VERSION,
        "shape": list(features.X_all.shape),
        "channel_names": list(features.channel_names),
        "band_edges": [list(b) for b in features.band_edges],
        "label_map": {name: i for i, name in enumerate(features.label_names)},
        "fs": features.fs,
    }
    write_container(
        path,
        {
            "X_all": features.X_all,
            "labels": features.labels.astype(np.float64),
            "subjects": features.subjects.astype(np.float64),
        },
        meta,
    )


def read_dataset(path) -> EpochFeatures:
    arrays, meta = read_container(path)
    if meta.get("kind") != "epoch_features":
        raise ValueError(f"{path}: not a feature dataset")
    if meta.get("features_version") != FEATURES_VERSION:
        raise ValueError(f"{path}: dataset version {meta.get('features_version')} != {FEATURES_VERSION}")
    X = arrays["X_all"]
    if list(X.shape) != meta["shape"]:
        raise ValueError(f"{path}: manifest shape {meta['shape']} disagrees with stored array {list(X.shape)}")
    label_map = meta["label_map"]
    names = tuple(sorted(label_map, key=label_map.get))
    return EpochFeatures(
        X,
        arrays["labels"].astype(np.int64),
        [tuple(b) for b in meta["band_edges"]],
        meta["channel_names"],
        meta["fs"],
        arrays["subjects"].astype(np.int64),
        names,
    )
