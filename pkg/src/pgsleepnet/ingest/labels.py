"""Sleep-stage label handling and hypnogram text files."""

from __future__ import annotations

from pathlib import Path
from typing import Iterable, Sequence

import numpy as np

STAGES = ("W", "N1", "N2", "N3", "REM")
STAGE_INDEX = {s: i for i, s in enumerate(STAGES)}

# R&K symbols; None marks epochs that are dropped (movement / unscored)
RK_TO_AASM = {
    "W": "W",
    "R": "REM",
    "1": "N1",
    "2": "N2",
    "3": "N3",
    "4": "N3",
    "M": None,
    "?": None,
}
AASM_SYMBOLS = {"W": "W", "N1": "N1", "N2": "N2", "N3": "N3", "REM": "REM", "R": "REM"}

# long-form annotation strings as shipped with Sleep-EDF hypnograms
_ALIASES = {
    "Sleep stage W": "W",
    "Sleep stage R": "R",
    "Sleep stage 1": "1",
    "Sleep stage 2": "2",
    "Sleep stage 3": "3",
    "Sleep stage 4": "4",
    "Movement time": "M",
    "Sleep stage ?": "?",
}


class LabelError(ValueError):
    pass


def map_labels(raw_labels: Iterable[str], standard: str = "RK") -> tuple[np.ndarray, np.ndarray]:
    """Map raw stage symbols to AASM class indices.

    Returns ``(labels, keep)`` where ``keep`` is a boolean mask over the input
    and ``labels`` holds class indices (into ``STAGES``) for kept epochs only.
    """
    standard = standard.upper()
    if standard not in ("RK", "AASM"):
        raise LabelError(f"unknown labelling standard {standard!r}")
    labels, keep = [], []
    for sym in raw_labels:
        sym = _ALIASES.get(sym.strip(), sym.strip())
        if standard == "RK":
            if sym not in RK_TO_AASM:
                raise LabelError(f"unrecognized R&K stage symbol {sym!r}")
            stage = RK_TO_AASM[sym]
        else:
            if sym in ("M", "?"):
                stage = None
            elif sym in AASM_SYMBOLS:
                stage = AASM_SYMBOLS[sym]
            else:
                raise LabelError(f"unrecognized AASM stage symbol {sym!r}")
        keep.append(stage is not None)
        if stage is not None:
            labels.append(STAGE_INDEX[stage])
    return np.array(labels, dtype=np.int64), np.array(keep, dtype=bool)


def stage_names(labels: Sequence[int]) -> list[str]:
    return [STAGES[int(i)] for i in labels]


def read_hypnogram(path) -> list[str]:
    """One stage symbol per line; blank lines and ``#`` comments ignored."""
    symbols = []
    for line in Path(path).read_text(encoding="utf-8").splitlines():
        line = line.split("#", 1)[0].strip()
        if line:
            symbols.append(line)
    return symbols


def write_hypnogram(path, symbols: Iterable[str]) -> None:
    Path(path).write_text("".join(f"{s}\n" for s in symbols), encoding="utf-8")
