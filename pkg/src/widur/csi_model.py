"""CSI trace and label containers, plus their CSV/JSON serialization.

A trace is stored column-wise (a timestamp vector and an ``n x 30``
amplitude matrix) rather than as a list of frame objects; single frames are
available through :meth:`CsiTrace.frame`.

Floats are written with :func:`repr`, which produces the shortest decimal
string that parses back to the same IEEE-754 double, so a write/parse round
trip is bit-exact.
"""
import csv
import io
import json
from dataclasses import dataclass, field

import numpy as np

from .errors import (CsiFormatError, IntervalOutOfRange, IrregularSpacing,
                     MalformedHeader, NonFiniteValue, NonMonotonicTimestamp,
                     OverlappingIntervals, UnknownLabel)

N_SUBCARRIERS = 30
LABELS = ("empty", "sit", "dress", "undress", "other")
LABEL_INDEX = {name: i for i, name in enumerate(LABELS)}
TRACE_HEADER = ["timestamp_s"] + [f"sc{k:02d}" for k in range(N_SUBCARRIERS)]
LABEL_HEADER = ["start_idx", "end_idx", "label"]
JITTER_TOLERANCE = 0.2


def _frozen(a, dtype=np.float64):
    a = np.array(a, dtype=dtype, copy=True)
    a.setflags(write=False)
    return a


@dataclass(frozen=True)
class CsiFrame:
    timestamp_s: float
    amplitudes: np.ndarray

    def __post_init__(self):
        amps = _frozen(self.amplitudes)
        if amps.shape != (N_SUBCARRIERS,):
            raise ValueError(f"expected {N_SUBCARRIERS} amplitudes, "
                             f"got shape {amps.shape}")
        if not np.all(np.isfinite(amps)) or np.any(amps < 0):
            raise NonFiniteValue("amplitudes must be finite and >= 0")
        object.__setattr__(self, "amplitudes", amps)


@dataclass(frozen=True)
class TraceManifest:
    sampling_rate_hz: float = 200.0
    carrier_freq_ghz: float = 2.4
    domain_id: str = ""
    trace_id: str = ""

    def __post_init__(self):
        if not self.sampling_rate_hz > 0:
            raise CsiFormatError("sampling_rate_hz must be > 0")
        if not self.carrier_freq_ghz > 0:
            raise CsiFormatError("carrier_freq_ghz must be > 0")

    def to_dict(self):
        return {"sampling_rate_hz": self.sampling_rate_hz,
                "carrier_freq_ghz": self.carrier_freq_ghz,
                "domain_id": self.domain_id,
                "trace_id": self.trace_id}


@dataclass(frozen=True, eq=False)
class CsiTrace:
    """Time-ordered CSI amplitudes with the manifest that describes them.

    Parameters
    ----------
    manifest : TraceManifest
    timestamps : array-like, shape (n_frames,)
        Seconds since trace start, strictly increasing.
    amplitudes : array-like, shape (n_frames, 30)
        Linear CSI magnitudes, finite and non-negative.
    """
    manifest: TraceManifest
    timestamps: np.ndarray
    amplitudes: np.ndarray

    def __post_init__(self):
        ts = _frozen(self.timestamps)
        amps = _frozen(self.amplitudes)
        if ts.ndim != 1 or ts.size < 1:
            raise CsiFormatError("a trace needs at least one frame")
        if amps.shape != (ts.size, N_SUBCARRIERS):
            raise CsiFormatError(f"amplitudes must have shape "
                                 f"({ts.size}, {N_SUBCARRIERS}), "
                                 f"got {amps.shape}")
        _check_frames(ts, amps, self.manifest.sampling_rate_hz)
        object.__setattr__(self, "timestamps", ts)
        object.__setattr__(self, "amplitudes", amps)

    def __len__(self):
        return self.timestamps.size

    def __eq__(self, other):
        if not isinstance(other, CsiTrace):
            return NotImplemented
        return (self.manifest == other.manifest
                and np.array_equal(self.timestamps, other.timestamps)
                and np.array_equal(self.amplitudes, other.amplitudes))

    __hash__ = None

    @property
    def fs(self):
        return self.manifest.sampling_rate_hz

    def frame(self, i):
        return CsiFrame(float(self.timestamps[i]), self.amplitudes[i])

    @property
    def frames(self):
        return [self.frame(i) for i in range(len(self))]

    @classmethod
    def from_frames(cls, manifest, frames):
        frames = list(frames)
        return cls(manifest,
                   [f.timestamp_s for f in frames],
                   np.array([f.amplitudes for f in frames]).reshape(
                       len(frames), N_SUBCARRIERS))


@dataclass(frozen=True)
class LabeledInterval:
    """Half-open frame interval ``[start_idx, end_idx)`` with a class label."""
    start_idx: int
    end_idx: int
    label: str

    def __post_init__(self):
        if self.label not in LABEL_INDEX:
            raise UnknownLabel(f"unknown label {self.label!r}")
        if not 0 <= self.start_idx < self.end_idx:
            raise IntervalOutOfRange(
                f"invalid interval [{self.start_idx}, {self.end_idx})")

    @property
    def label_index(self):
        return LABEL_INDEX[self.label]

    def __len__(self):
        return self.end_idx - self.start_idx


@dataclass
class ActivitySegment:
    """A labeled interval of a trace together with its extracted features."""
    interval: LabeledInterval
    trace_id: str = ""
    features: np.ndarray = field(default=None, repr=False)


def _check_frames(ts, amps, fs, row_offset=1):
    # rows are reported 1-based over data rows (the header is not counted)
    bad = ~np.isfinite(ts)
    if bad.any():
        raise NonFiniteValue("non-finite timestamp",
                             row=int(np.argmax(bad)) + row_offset)
    bad_rows = ~np.all(np.isfinite(amps) & (amps >= 0), axis=1)
    if bad_rows.any():
        raise NonFiniteValue("amplitudes must be finite and >= 0",
                             row=int(np.argmax(bad_rows)) + row_offset)
    if ts.size < 2:
        return
    gaps = np.diff(ts)
    nonmono = gaps <= 0
    if nonmono.any():
        raise NonMonotonicTimestamp(
            "timestamps must be strictly increasing",
            row=int(np.argmax(nonmono)) + 1 + row_offset)
    nominal = 1.0 / fs
    off = np.abs(gaps - nominal) > JITTER_TOLERANCE * nominal + 1e-12
    if off.any():
        i = int(np.argmax(off))
        raise IrregularSpacing(
            f"frame gap {gaps[i]!r} s deviates more than "
            f"{JITTER_TOLERANCE:.0%} from 1/{fs:g} s",
            row=i + 1 + row_offset)


def parse_manifest(manifest_text):
    try:
        obj = json.loads(manifest_text)
    except json.JSONDecodeError as exc:
        raise CsiFormatError(f"manifest is not valid JSON: {exc}") from None
    if not isinstance(obj, dict):
        raise CsiFormatError("manifest must be a JSON object")
    missing = {"sampling_rate_hz", "carrier_freq_ghz",
               "domain_id", "trace_id"} - obj.keys()
    if missing:
        raise CsiFormatError(f"manifest lacks keys {sorted(missing)}")
    return TraceManifest(float(obj["sampling_rate_hz"]),
                         float(obj["carrier_freq_ghz"]),
                         str(obj["domain_id"]), str(obj["trace_id"]))


def parse_trace(csv_text, manifest_text):
    """Parse a trace CSV and its JSON manifest into a :class:`CsiTrace`."""
    manifest = parse_manifest(manifest_text)
    lines = csv_text.split("\n")
    if lines and lines[-1] == "":
        lines.pop()
    if not lines or lines[0].split(",") != TRACE_HEADER:
        raise MalformedHeader("expected header timestamp_s,sc00,...,sc29")
    n_cols = len(TRACE_HEADER)
    data = np.empty((len(lines) - 1, n_cols))
    for i, line in enumerate(lines[1:]):
        fields = line.split(",")
        if len(fields) != n_cols:
            raise MalformedHeader(f"expected {n_cols} fields, "
                                  f"got {len(fields)}", row=i + 1)
        try:
            data[i] = [float(f) for f in fields]
        except ValueError:
            raise NonFiniteValue("unparseable number", row=i + 1) from None
    if data.shape[0] == 0:
        raise CsiFormatError("trace has no data rows")
    _check_frames(data[:, 0], data[:, 1:], manifest.sampling_rate_hz)
    return CsiTrace(manifest, data[:, 0], data[:, 1:])


def write_trace(trace):
    """Serialize ``trace`` to ``(csv_text, manifest_text)``."""
    out = [",".join(TRACE_HEADER)]
    for t, row in zip(trace.timestamps.tolist(), trace.amplitudes.tolist()):
        out.append(",".join(map(repr, [t] + row)))
    csv_text = "\n".join(out) + "\n"
    manifest_text = json.dumps(trace.manifest.to_dict(), indent=2) + "\n"
    return csv_text, manifest_text


def _validate_intervals(intervals, n_frames):
    intervals = sorted(intervals, key=lambda iv: (iv.start_idx, iv.end_idx))
    for iv in intervals:
        if iv.end_idx > n_frames:
            raise IntervalOutOfRange(
                f"interval [{iv.start_idx}, {iv.end_idx}) exceeds "
                f"trace length {n_frames}")
    for a, b in zip(intervals, intervals[1:]):
        if b.start_idx < a.end_idx:
            raise OverlappingIntervals(
                f"[{a.start_idx}, {a.end_idx}) overlaps "
                f"[{b.start_idx}, {b.end_idx})")
    return intervals


def parse_labels(csv_text, trace):
    """Parse a label CSV and validate it against ``trace``.

    Returns the intervals sorted by start index.
    """
    n_frames = trace if isinstance(trace, int) else len(trace)
    reader = csv.reader(io.StringIO(csv_text))
    header = next(reader, None)
    if header != LABEL_HEADER:
        raise MalformedHeader("expected header start_idx,end_idx,label")
    intervals = []
    for row_no, fields in enumerate(reader, start=1):
        if not fields:
            continue
        if len(fields) != 3:
            raise MalformedHeader("expected 3 fields", row=row_no)
        try:
            start, end = int(fields[0]), int(fields[1])
        except ValueError:
            raise CsiFormatError("indices must be integers",
                                 row=row_no) from None
        label = fields[2]
        if label not in LABEL_INDEX:
            raise UnknownLabel(f"unknown label {label!r}", row=row_no)
        if not 0 <= start < end <= n_frames:
            raise IntervalOutOfRange(
                f"interval [{start}, {end}) outside [0, {n_frames}]",
                row=row_no)
        intervals.append(LabeledInterval(start, end, label))
    return _validate_intervals(intervals, n_frames)


def write_labels(intervals):
    lines = [",".join(LABEL_HEADER)]
    lines += [f"{iv.start_idx},{iv.end_idx},{iv.label}" for iv in intervals]
    return "\n".join(lines) + "\n"


def encode_labels(labels):
    """Map label names (or already-encoded ints) to codebook indices."""
    out = []
    for lab in labels:
        if isinstance(lab, (int, np.integer)):
            if not 0 <= lab < len(LABELS):
                raise UnknownLabel(f"label index {lab} out of range")
            out.append(int(lab))
        elif lab in LABEL_INDEX:
            out.append(LABEL_INDEX[lab])
        else:
            raise UnknownLabel(f"unknown label {lab!r}")
    return np.asarray(out, dtype=np.int64)


def decode_labels(indices):
    return [LABELS[int(i)] for i in indices]
