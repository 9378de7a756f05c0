import json
import struct
import sys
import warnings
from pathlib import Path

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from pgsleepnet.gsp import total_variation
from pgsleepnet.ingest import (
    AlignmentError,
    EdfError,
    EpochFeatures,
    LabelError,
    SyntheticSpec,
    generate_synthetic_dataset,
    map_labels,
    parse_edf_header,
    read_dataset,
    read_edf,
    read_edf_signals,
    read_hypnogram,
    segment_epochs,
    write_dataset,
    write_edf,
)
from pgsleepnet.ingest.edf import EdfSignalHeader, digital_to_physical, encode_edf

DATA = Path(__file__).parent / "data"
sys.path.insert(0, str(DATA))
import make_golden  # noqa: E402


def test_golden_files_match_builder():
    assert (DATA / "minimal_1ch_95s.edf").read_bytes() == make_golden.minimal()
    assert (DATA / "streaming_2ch.edf").read_bytes() == make_golden.streaming()


# -- header ------------------------------------------------------------------------


def test_minimal_header_fields():
    rec = parse_edf_header((DATA / "minimal_1ch_95s.edf").read_bytes())
    assert rec.labels == ["EEG Fpz-Cz"]
    h = rec.signal_headers[0]
    assert h.samples_per_record == 100
    assert (h.physical_min, h.physical_max, h.digital_min, h.digital_max) == (-200, 200, -32768, 32767)
    assert rec.n_records == 95 and rec.record_duration == 1.0
    assert rec.sampling_rate(0) == 100.0
    assert rec.start_date == "01.01.00" and rec.start_time == "22.00.00"


def test_truncated_header():
    with pytest.raises(EdfError, match="truncated"):
        parse_edf_header(b" " * 255)
    raw = (DATA / "streaming_2ch.edf").read_bytes()
    with pytest.raises(EdfError, match="truncated"):
        parse_edf_header(raw[:600])


def test_streaming_record_count_inferred():
    rec = read_edf(DATA / "streaming_2ch.edf")
    assert rec.n_records == 4
    assert [s.size for s in rec.signals] == [400, 200]
    assert rec.labels == ["EEG Pz-Oz", "EOG horizontal"]


def _patch(raw: bytes, offset: int, width: int, value: bytes) -> bytes:
    return raw[:offset] + value.ljust(width, b" ") + raw[offset + width :]


def test_header_rejections():
    raw = (DATA / "minimal_1ch_95s.edf").read_bytes()
    with pytest.raises(EdfError, match="not numeric"):
        parse_edf_header(_patch(raw, 236, 8, b"abc"))
    with pytest.raises(EdfError, match="duration"):
        parse_edf_header(_patch(raw, 244, 8, b"0"))
    with pytest.raises(EdfError, match="ASCII"):
        parse_edf_header(_patch(raw, 8, 80, "Pätient".encode("latin-1")))
    # digital min/max live at 256 + 16 + 80 + 8 + 8 + 8 for one signal
    with pytest.raises(EdfError, match="digital"):
        parse_edf_header(_patch(raw, 256 + 120, 8, b"40000"))


# -- samples ---------------------------------------------------------------------


def test_digital_physical_endpoints():
    h = EdfSignalHeader("x", "", "uV", -200.0, 200.0, -32768, 32767, "", 1)
    assert digital_to_physical(np.array([-32768]), h)[0] == -200.0
    assert digital_to_physical(np.array([32767]), h)[0] == 200.0


@given(st.integers(-32768, 32766))
def test_physical_mapping_monotone(d):
    h = EdfSignalHeader("x", "", "uV", -200.0, 200.0, -32768, 32767, "", 1)
    a, b = digital_to_physical(np.array([d, d + 1]), h)
    assert a < b


def test_golden_roundtrip_bit_exact(tmp_path):
    src = DATA / "minimal_1ch_95s.edf"
    rec = read_edf(src)
    write_edf(tmp_path / "copy.edf", rec)
    assert (tmp_path / "copy.edf").read_bytes() == src.read_bytes()
    t = np.arange(9500) / 100.0
    step = rec.signal_headers[0].gain
    expected = 16000 * np.sin(2 * np.pi * 5 * t) * step
    # digital sine quantized at 1 count, shifted by the half-step of the odd range
    assert np.max(np.abs(rec.signals[0] - expected)) <= step


def test_payload_size_mismatch():
    raw = (DATA / "minimal_1ch_95s.edf").read_bytes()
    with pytest.raises(EdfError, match="payload"):
        read_edf_signals(raw[:-2])


def test_out_of_range_samples_clamped():
    raw = bytearray((DATA / "streaming_2ch.edf").read_bytes())
    header_len = 256 * 3
    struct.pack_into("<h", raw, header_len, 5000)  # beyond digital max 2047
    with warnings.catch_warnings(record=True) as caught:
        warnings.simplefilter("always")
        rec = read_edf_signals(bytes(raw))
    assert any("clamped" in str(w.message) for w in caught)
    assert rec.signals[0][0] == 100.0


# -- labels ------------------------------------------------------------------------


def test_map_labels_rules():
    labels, keep = map_labels(["W", "1", "2", "3", "4", "R"])
    assert labels.tolist() == [0, 1, 2, 3, 3, 4]
    assert keep.all()
    assert map_labels(["4"])[0].tolist() == [3]
    aasm, _ = map_labels(["W", "N1", "N2", "N3", "REM"], standard="AASM")
    assert aasm.tolist() == [0, 1, 2, 3, 4]
    labels, keep = map_labels(["W", "M", "?", "2"])
    assert labels.tolist() == [0, 2] and keep.tolist() == [True, False, False, True]
    assert map_labels(["Sleep stage 4", "Sleep stage R"])[0].tolist() == [3, 4]
    with pytest.raises(LabelError):
        map_labels(["5"])
    with pytest.raises(LabelError):
        map_labels(["W"], standard="XYZ")


def test_hypnogram_reader():
    assert read_hypnogram(DATA / "minimal_1ch_95s.hyp") == ["W", "2", "R"]


# -- segmentation ------------------------------------------------------------------


def test_segment_95s_to_three_epochs():
    rec = read_edf(DATA / "minimal_1ch_95s.edf")
    ep = segment_epochs(rec, ["W", "2", "R"])
    assert ep.epochs.shape == (3, 1, 3000)
    assert ep.labels.tolist() == [0, 2, 4]
    np.testing.assert_array_equal(ep.epochs[1, 0], rec.signals[0][3000:6000])


def test_segment_errors_and_drops():
    rec = read_edf(DATA / "minimal_1ch_95s.edf")
    with pytest.raises(AlignmentError):
        segment_epochs(rec, ["W", "2"])
    with pytest.raises(KeyError):
        segment_epochs(rec, ["W", "2", "R"], channels=["EEG Pz-Oz"])
    ep = segment_epochs(rec, ["W", "M", "R"])
    assert ep.epochs.shape[0] == 2
    np.testing.assert_array_equal(ep.epochs[1, 0], rec.signals[0][6000:9000])


def _multichannel_recording(Q, seconds=60, fs=10):
    from pgsleepnet.ingest import EdfRecording

    headers = [EdfSignalHeader(f"EEG {i}", "", "uV", -1.0, 1.0, -100, 100, "", fs) for i in range(Q)]
    rec = EdfRecording("0", "", "", "01.01.00", "00.00.00", 1.0, seconds, headers)
    rec.signals = [np.zeros(seconds * fs) for _ in range(Q)]
    return rec


def test_segment_selects_26_channels():
    rec = _multichannel_recording(30)
    chosen = [f"EEG {i}" for i in range(26)]
    ep = segment_epochs(rec, ["W", "2"], channels=chosen)
    assert ep.epochs.shape == (2, 26, 300)
    assert ep.channel_names == chosen


# -- dataset container ---------------------------------------------------------------


def _features(rng, n, Q=3, F=9):
    return EpochFeatures(
        rng.normal(size=(n, Q, F)),
        rng.integers(0, 5, n),
        channel_names=[f"c{i}" for i in range(Q)],
        fs=100.0,
        subjects=rng.integers(0, 3, n),
    )


def test_dataset_roundtrip(tmp_path, rng):
    ds = _features(rng, 17)
    write_dataset(tmp_path / "d.pgsn", ds)
    back = read_dataset(tmp_path / "d.pgsn")
    assert back.X_all.tobytes() == ds.X_all.tobytes()
    assert back.labels.tolist() == ds.labels.tolist()
    assert back.subjects.tolist() == ds.subjects.tolist()
    assert back.band_edges == ds.band_edges and back.channel_names == ds.channel_names
    assert back.fs == 100.0


def test_dataset_empty_roundtrip(tmp_path, rng):
    ds = _features(rng, 0)
    write_dataset(tmp_path / "e.pgsn", ds)
    assert read_dataset(tmp_path / "e.pgsn").X_all.shape == (0, 3, 9)


def test_dataset_manifest_errors(tmp_path, rng):
    path = tmp_path / "d.pgsn"
    write_dataset(path, _features(rng, 4))
    raw = path.read_bytes()
    (n,) = struct.unpack("<Q", raw[4:12])
    manifest = json.loads(raw[12 : 12 + n])

    def rewrite(m, name):
        head = json.dumps(m, sort_keys=True).encode()
        p = tmp_path / name
        p.write_bytes(raw[:4] + struct.pack("<Q", len(head)) + head + raw[12 + n :])
        return p

    bad = json.loads(json.dumps(manifest))
    bad["arrays"][0]["shape"] = [5, 3, 9]
    with pytest.raises(ValueError, match="payload"):
        read_dataset(rewrite(bad, "shape.pgsn"))
    old = json.loads(json.dumps(manifest))
    old["meta"]["features_version"] = 99
    with pytest.raises(ValueError, match="version"):
        read_dataset(rewrite(old, "ver.pgsn"))


# -- synthetic generator ------------------------------------------------------------


def test_synthetic_deterministic_and_shaped():
    a = generate_synthetic_dataset(SyntheticSpec(samples_per_class=10, seed=3))
    b = generate_synthetic_dataset(SyntheticSpec(samples_per_class=10, seed=3))
    assert a.X_all.shape == (50, 9, 6, 9)
    assert a.X_all.tobytes() == b.X_all.tobytes()
    assert np.bincount(a.labels).tolist() == [10] * 5
    small = generate_synthetic_dataset(SyntheticSpec(Q=3, P=9, F_de=9, samples_per_class=2))
    assert small.X_all.shape[1:] == (9, 3, 9)


def test_synthetic_planted_graphs_valid():
    spec = SyntheticSpec(samples_per_class=1)
    for pair in spec.graphs:
        for g in (pair.gP, pair.gQ):
            np.testing.assert_array_equal(g.W, g.W.T)
            assert np.all(g.W >= 0)
            # spanning tree makes every factor connected
            assert np.sum(np.linalg.eigvalsh(g.L) < 1e-9) == 1


def test_synthetic_own_graph_is_smoothest():
    spec = SyntheticSpec(samples_per_class=100, sigma=0.0, seed=7)
    ds = generate_synthetic_dataset(spec)
    LNs = [p.product_laplacian for p in spec.graphs]
    N, P, Q, F = ds.X_all.shape
    wins, means = 0, np.zeros((5, 5))
    for x, c in zip(ds.X_all, ds.labels):
        tv = np.array([total_variation(L, x.reshape(P * Q, F)) for L in LNs])
        means[c] += tv / 100
        wins += np.all(tv[c] < np.delete(tv, c))
    off = means + np.diag(np.full(5, np.inf))
    assert np.all(np.diag(means) < off.min(axis=1))
    assert wins / N >= 0.9


def test_synthetic_spec_rejects_wrong_graphs():
    spec = SyntheticSpec(samples_per_class=1)
    with pytest.raises(ValueError):
        SyntheticSpec(num_classes=4, graphs=spec.graphs)
