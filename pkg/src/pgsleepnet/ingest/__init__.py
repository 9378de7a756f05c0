"""EDF ingestion, label handling, dataset containers and synthetic data."""

from .dataset import (
    DEFAULT_BANDS,
    AlignmentError,
    EpochFeatures,
    LabeledEpochs,
    concatenate,
    read_dataset,
    segment_epochs,
    write_dataset,
)
from .edf import EdfError, EdfRecording, EdfSignalHeader, parse_edf_header, read_edf, read_edf_signals, write_edf
from .labels import STAGES, LabelError, map_labels, read_hypnogram, write_hypnogram
from .synthetic import SyntheticSpec, generate_synthetic_dataset, planted_factor_graphs

__all__ = [
    "DEFAULT_BANDS",
    "AlignmentError",
    "EpochFeatures",
    "LabeledEpochs",
    "concatenate",
    "read_dataset",
    "segment_epochs",
    "write_dataset",
    "EdfError",
    "EdfRecording",
    "EdfSignalHeader",
    "parse_edf_header",
    "read_edf",
    "read_edf_signals",
    "write_edf",
    "STAGES",
    "LabelError",
    "map_labels",
    "read_hypnogram",
    "write_hypnogram",
    "SyntheticSpec",
    "generate_synthetic_dataset",
    "planted_factor_graphs",
]
