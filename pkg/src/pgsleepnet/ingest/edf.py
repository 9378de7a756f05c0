"""Reader and writer for the European Data Format (EDF).

Layout: a 256-byte fixed ASCII header, then 256 bytes of ASCII fields per
signal (each field stored column-wise across signals), then data records of
little-endian int16 samples, signal after signal within each record.
"""

from __future__ import annotations

import warnings
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

FIXED_HEADER = [
    ("version", 8),
    ("patient_id", 80),
    ("recording_id", 80),
    ("start_date", 8),
    ("start_time", 8),
    ("header_bytes", 8),
    ("reserved", 44),
    ("n_records", 8),
    ("record_duration", 8),
    ("n_signals", 4),
]
SIGNAL_FIELDS = [
    ("label", 16),
    ("transducer", 80),
    ("physical_dimension", 8),
    ("physical_min", 8),
    ("physical_max", 8),
    ("digital_min", 8),
    ("digital_max", 8),
    ("prefiltering", 80),
    ("samples_per_record", 8),
    ("reserved", 32),
]


class EdfError(ValueError):
    pass


@dataclass
class EdfSignalHeader:
    label: str
    transducer: str
    physical_dimension: str
    physical_min: float
    physical_max: float
    digital_min: int
    digital_max: int
    prefiltering: str
    samples_per_record: int

    @property
    def gain(self) -> float:
        return (self.physical_max - self.physical_min) / (self.digital_max - self.digital_min)


@dataclass
class EdfRecording:
    version: str
    patient_id: str
    recording_id: str
    start_date: str
    start_time: str
    record_duration: float
    n_records: int
    signal_headers: list[EdfSignalHeader]
    signals: list[np.ndarray] = field(default_factory=list)

    @property
    def n_signals(self) -> int:
        return len(self.signal_headers)

    @property
    def labels(self) -> list[str]:
        return [s.label for s in self.signal_headers]

    def sampling_rate(self, index: int) -> float:
        return self.signal_headers[index].samples_per_record / self.record_duration

    @property
    def header_bytes(self) -> int:
        return 256 * (1 + self.n_signals)


def _field(raw: bytes, name: str) -> str:
    try:
        return raw.decode("ascii").strip()
    except UnicodeDecodeError as exc:
        raise EdfError(f"header field {name!r} is not ASCII") from exc


def _number(text: str, name: str, kind=float):
    try:
        return kind(text)
    except ValueError as exc:
        raise EdfError(f"header field {name!r} is not numeric: {text!r}") from exc


def parse_edf_header(data: bytes) -> EdfRecording:
    """Parse the header of an EDF byte string.

    A record count of ``-1`` is accepted and resolved from the payload length
    when the payload is present.
    """
    if len(data) < 256:
        raise EdfError(f"truncated header: {len(data)} bytes < 256")
    pos, fixed = 0, {}
    for name, width in FIXED_HEADER:
        fixed[name] = _field(data[pos : pos + width], name)
        pos += width
    ns = _number(fixed["n_signals"], "n_signals", int)
    if ns < 1:
        raise EdfError(f"signal count must be positive, got {ns}")
    n_records = _number(fixed["n_records"], "n_records", int)
    duration = _number(fixed["record_duration"], "record_duration")
    if duration <= 0:
        raise EdfError(f"record duration must be positive, got {duration}")
    header_len = 256 * (1 + ns)
    if len(data) < header_len:
        raise EdfError(f"truncated header: {len(data)} bytes < {header_len} for {ns} signals")

    columns: dict[str, list[str]] = {}
    for name, width in SIGNAL_FIELDS:
        columns[name] = [_field(data[pos + i * width : pos + (i + 1) * width], name) for i in range(ns)]
        pos += width * ns

    headers = []
    for i in range(ns):
        sh = EdfSignalHeader(
            label=columns["label"][i],
            transducer=columns["transducer"][i],
            physical_dimension=columns["physical_dimension"][i],
            physical_min=_number(columns["physical_min"][i], "physical_min"),
            physical_max=_number(columns["physical_max"][i], "physical_max"),
            digital_min=_number(columns["digital_min"][i], "digital_min", int),
            digital_max=_number(columns["digital_max"][i], "digital_max", int),
            prefiltering=columns["prefiltering"][i],
            samples_per_record=_number(columns["samples_per_record"][i], "samples_per_record", int),
        )
        if sh.digital_min >= sh.digital_max:
            raise EdfError(f"signal {sh.label!r}: digital min {sh.digital_min} >= max {sh.digital_max}")
        if sh.physical_min == sh.physical_max:
            raise EdfError(f"signal {sh.label!r}: physical min equals physical max")
        if sh.samples_per_record < 1:
            raise EdfError(f"signal {sh.label!r}: samples per record must be positive")
        headers.append(sh)

    if n_records == -1:
        record_bytes = 2 * sum(h.samples_per_record for h in headers)
        n_records = (len(data) - header_len) // record_bytes
    elif n_records < 0:
        raise EdfError(f"invalid record count {n_records}")

    return EdfRecording(
        version=fixed["version"],
        patient_id=fixed["patient_id"],
        recording_id=fixed["recording_id"],
        start_date=fixed["start_date"],
        start_time=fixed["start_time"],
        record_duration=duration,
        n_records=n_records,
        signal_headers=headers,
    )


def digital_to_physical(dig: np.ndarray, h: EdfSignalHeader) -> np.ndarray:
    dig = np.asarray(dig, dtype=np.float64)
    return (dig - h.digital_min) * h.gain + h.physical_min


def physical_to_digital(phys: np.ndarray, h: EdfSignalHeader) -> np.ndarray:
    dig = np.round((np.asarray(phys, dtype=np.float64) - h.physical_min) / h.gain + h.digital_min)
    return np.clip(dig, h.digital_min, h.digital_max).astype(np.int16)


def read_edf_signals(data: bytes, header: EdfRecording | None = None) -> EdfRecording:
    """Decode the data records into physical-unit channels."""
    if header is None:
        header = parse_edf_header(data)
    spr = [h.samples_per_record for h in header.signal_headers]
    record_len = sum(spr)
    payload = data[header.header_bytes :]
    expected = header.n_records * record_len * 2
    if len(payload) != expected:
        raise EdfError(
            f"payload size mismatch: {len(payload)} bytes, expected {expected} "
            f"({header.n_records} records x {record_len} samples x 2)"
        )
    samples = np.frombuffer(payload, dtype="<i2").reshape(header.n_records, record_len)
    signals = []
    start = 0
    for h, n in zip(header.signal_headers, spr):
        dig = samples[:, start : start + n].reshape(-1).astype(np.int64)
        start += n
        out_of_range = (dig < h.digital_min) | (dig > h.digital_max)
        if np.any(out_of_range):
            warnings.warn(
                f"signal {h.label!r}: {int(out_of_range.sum())} samples outside the digital range; clamped"
            )
            dig = np.clip(dig, h.digital_min, h.digital_max)
        signals.append(digital_to_physical(dig, h))
    header.signals = signals
    return header


def read_edf(path) -> EdfRecording:
    data = Path(path).read_bytes()
    return read_edf_signals(data, parse_edf_header(data))


def _pad(value, width: int) -> bytes:
    text = value if isinstance(value, str) else _fmt_number(value)
    raw = text.encode("ascii")
    if len(raw) > width:
        raise EdfError(f"value {text!r} does not fit in {width} bytes")
    return raw.ljust(width, b" ")


def _fmt_number(x) -> str:
    if isinstance(x, (int, np.integer)):
        return str(int(x))
    text = repr(float(x))
    if text.endswith(".0"):
        text = text[:-2]
    return text[:8]


def encode_edf(rec: EdfRecording, digital: list[np.ndarray]) -> bytes:
    """Serialize a recording given per-channel int16 digital samples."""
    ns = rec.n_signals
    fixed = {
        "version": rec.version or "0",
        "patient_id": rec.patient_id,
        "recording_id": rec.recording_id,
        "start_date": rec.start_date,
        "start_time": rec.start_time,
        "header_bytes": 256 * (1 + ns),
        "reserved": "",
        "n_records": rec.n_records,
        "record_duration": rec.record_duration,
        "n_signals": ns,
    }
    out = bytearray()
    for name, width in FIXED_HEADER:
        out += _pad(fixed[name], width)
    for name, width in SIGNAL_FIELDS:
        for h in rec.signal_headers:
            out += _pad("" if name == "reserved" else getattr(h, name), width)
    blocks = []
    for h, d in zip(rec.signal_headers, digital):
        d = np.asarray(d, dtype="<i2")
        if d.size != rec.n_records * h.samples_per_record:
            raise EdfError(f"signal {h.label!r}: {d.size} samples, expected {rec.n_records * h.samples_per_record}")
        blocks.append(d.reshape(rec.n_records, h.samples_per_record))
    out += np.concatenate(blocks, axis=1).astype("<i2").tobytes()
    return bytes(out)


def write_edf(path, rec: EdfRecording) -> None:
    """Quantize ``rec.signals`` to int16 and write the file."""
    digital = [physical_to_digital(s, h) for s, h in zip(rec.signals, rec.signal_headers)]
    Path(path).write_bytes(encode_edf(rec, digital))
