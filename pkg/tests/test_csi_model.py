import json

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from widur.csi_model import (LABELS, TRACE_HEADER, CsiTrace, LabeledInterval,
                             TraceManifest, decode_labels, encode_labels,
                             parse_labels, parse_trace, write_labels,
                             write_trace)
from widur.errors import (IntervalOutOfRange, IrregularSpacing,
                          MalformedHeader, NonFiniteValue,
                          NonMonotonicTimestamp, OverlappingIntervals,
                          UnknownLabel)

MANIFEST = json.dumps({"sampling_rate_hz": 200, "carrier_freq_ghz": 2.4,
                       "domain_id": "A", "trace_id": "t0"})
HEADER = ",".join(TRACE_HEADER)


def rows_csv(timestamps, value="1.0"):
    body = [",".join([str(t)] + [value] * 30) for t in timestamps]
    return "\n".join([HEADER] + body) + "\n"


def random_trace(n, seed):
    rng = np.random.default_rng(seed)
    ts = np.arange(n) / 200.0
    amps = rng.uniform(0, 40, size=(n, 30))
    return CsiTrace(TraceManifest(domain_id="X", trace_id="r"), ts, amps)


def test_single_row_parses_to_one_frame():
    tr = parse_trace(HEADER + "\n0.000," + ",".join(["1.0"] * 30) + "\n",
                     MANIFEST)
    assert len(tr) == 1
    assert np.all(tr.amplitudes == 1.0)
    assert tr.frame(0).timestamp_s == 0.0


def test_exact_spacing_three_frames():
    tr = parse_trace(rows_csv([0.0, 0.005, 0.010]), MANIFEST)
    assert len(tr) == 3
    assert tr.fs == 200


def test_non_monotonic_reports_row_3():
    with pytest.raises(NonMonotonicTimestamp, match="row 3"):
        parse_trace(rows_csv([0.0, 0.005, 0.004]), MANIFEST)


def test_bad_header():
    with pytest.raises(MalformedHeader):
        parse_trace(rows_csv([0.0]).replace("sc29", "sc30"), MANIFEST)


def test_wrong_field_count_names_row():
    text = HEADER + "\n0.0," + ",".join(["1.0"] * 29) + "\n"
    with pytest.raises(MalformedHeader, match="row 1"):
        parse_trace(text, MANIFEST)


@pytest.mark.parametrize("bad", ["nan", "inf", "-inf"])
def test_non_finite_rejected(bad):
    text = rows_csv([0.0, 0.005]).replace("0.005,1.0", f"0.005,{bad}")
    with pytest.raises(NonFiniteValue, match="row 2"):
        parse_trace(text, MANIFEST)


def test_irregular_gap_rejected():
    with pytest.raises(IrregularSpacing):
        parse_trace(rows_csv([0.0, 0.005, 0.0200]), MANIFEST)


def test_jitter_within_tolerance_accepted():
    tr = parse_trace(rows_csv([0.0, 0.0055, 0.0100]), MANIFEST)
    assert len(tr) == 3


def test_one_frame_writes_two_lines():
    tr = parse_trace(rows_csv([0.0]), MANIFEST)
    csv_text, _ = write_trace(tr)
    assert csv_text.count("\n") == 2
    assert not any(line != line.rstrip() for line in csv_text.split("\n"))


def test_round_trip_1000_frames():
    tr = random_trace(1000, 0)
    assert parse_trace(*write_trace(tr)) == tr


@settings(max_examples=25, deadline=None)
@given(n=st.integers(1, 60), seed=st.integers(0, 2 ** 32 - 1))
def test_round_trip_property(n, seed):
    tr = random_trace(n, seed)
    back = parse_trace(*write_trace(tr))
    assert back == tr
    assert np.array_equal(back.amplitudes.view(np.uint64),
                          tr.amplitudes.view(np.uint64))


def test_labels_single_interval():
    ivs = parse_labels("start_idx,end_idx,label\n0,800,empty\n", 1000)
    assert ivs == [LabeledInterval(0, 800, "empty")]


def test_labels_overlap():
    with pytest.raises(OverlappingIntervals):
        parse_labels("start_idx,end_idx,label\n0,800,dress\n700,900,sit\n",
                     1000)


def test_labels_out_of_range():
    with pytest.raises(IntervalOutOfRange):
        parse_labels("start_idx,end_idx,label\n0,1200,sit\n", 1000)


@pytest.mark.parametrize("label", ["Dress", "walk", "", "EMPTY"])
def test_unknown_label(label):
    with pytest.raises(UnknownLabel):
        parse_labels(f"start_idx,end_idx,label\n0,10,{label}\n", 100)


def test_labels_round_trip():
    ivs = [LabeledInterval(10, 20, "sit"), LabeledInterval(30, 90, "other")]
    assert parse_labels(write_labels(ivs), 100) == ivs


def test_label_vocabulary_is_five_classes():
    assert LABELS == ("empty", "sit", "dress", "undress", "other")
    assert decode_labels(encode_labels(list(LABELS))) == list(LABELS)
    with pytest.raises(UnknownLabel):
        encode_labels(["dance"])


def test_interval_invariants():
    with pytest.raises(ValueError):
        LabeledInterval(5, 5, "sit")
    with pytest.raises(UnknownLabel):
        LabeledInterval(0, 5, "walk")


def test_trace_is_immutable():
    tr = random_trace(5, 1)
    with pytest.raises(ValueError):
        tr.amplitudes[0, 0] = 1.0


def test_negative_amplitude_rejected():
    with pytest.raises(ValueError):
        CsiTrace(TraceManifest(), np.array([0.0]), -np.ones((1, 30)))
