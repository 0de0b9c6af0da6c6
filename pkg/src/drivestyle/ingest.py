"""Driving kinematics ingestion: canonical CSV, KITTI oxts records, derived
accelerations and optional per-channel standardization."""
from __future__ import annotations

import csv
import io
import os
from dataclasses import dataclass, field, replace
from typing import Iterable, Mapping, Sequence, TextIO

import numpy as np

from .errors import (
    EmptyInput,
    MalformedRow,
    NonMonotonicTime,
    NonNumericField,
    NonUniformTime,
    ShortLine,
    TooShort,
)

CHANNELS = ("v_f", "v_l", "a_f", "a_l")
CSV_HEADER = ("t",) + CHANNELS

# KITTI raw oxts layout (0-based): vf, vl, af, al
OXTS_COLUMNS = {"v_f": 8, "v_l": 9, "a_f": 14, "a_l": 15}
OXTS_MIN_FIELDS = 17

UNIFORM_RTOL = 1e-3


@dataclass(frozen=True)
class DrivingSeries:
    """Uniformly sampled ``[v_f, v_l, a_f, a_l]`` kinematics.

    ``channels`` has shape ``(T, 4)`` in m/s and m/s^2.
    """

    timestamps: np.ndarray
    channels: np.ndarray
    sample_rate_hz: float
    source_id: str = ""

    def __post_init__(self):
        ts = np.ascontiguousarray(self.timestamps, dtype=float)
        ch = np.ascontiguousarray(self.channels, dtype=float)
        object.__setattr__(self, "timestamps", ts)
        object.__setattr__(self, "channels", ch)
        validate(self)

    def __len__(self):
        return len(self.timestamps)

    @property
    def dt(self) -> float:
        return 1.0 / self.sample_rate_hz

    def channel(self, name: str) -> np.ndarray:
        return self.channels[:, CHANNELS.index(name)]


def validate(series: DrivingSeries) -> None:
    ts, ch = series.timestamps, series.channels
    if ts.ndim != 1 or ch.shape != (len(ts), len(CHANNELS)):
        raise MalformedRow(f"expected {len(CHANNELS)} channels per timestamp, got shape {ch.shape}")
    if len(ts) < 2:
        raise TooShort(f"series needs at least 2 samples, got {len(ts)}")
    if not (np.all(np.isfinite(ts)) and np.all(np.isfinite(ch))):
        raise MalformedRow("non-finite value in series")
    if not series.sample_rate_hz > 0:
        raise MalformedRow(f"sample rate must be positive, got {series.sample_rate_hz}")
    deltas = np.diff(ts)
    bad = np.flatnonzero(deltas <= 0)
    if bad.size:
        raise NonMonotonicTime(f"timestamp {ts[bad[0] + 1]!r} does not increase", line=int(bad[0]) + 3)
    dt = 1.0 / series.sample_rate_hz
    dev = np.abs(deltas - dt) / dt
    if dev.max() > UNIFORM_RTOL:
        k = int(np.argmax(dev))
        raise NonUniformTime(f"step {deltas[k]!r} deviates from dt={dt!r}", line=k + 3)


def _infer_rate(ts: np.ndarray) -> float:
    return 1.0 / float(np.median(np.diff(ts)))


def parse_csv(text: str | TextIO, source_id: str = "") -> DrivingSeries:
    """Parse ``t,v_f,v_l,a_f,a_l`` CSV text; dt is the median timestamp step.

    Line numbers in errors are 1-based and count the header.
    """
    stream = io.StringIO(text) if isinstance(text, str) else text
    reader = csv.reader(stream)
    header = next(reader, None)
    if header is None or not any(c.strip() for c in header):
        raise EmptyInput("no header row")
    names = tuple(c.strip() for c in header)
    if names != CSV_HEADER:
        raise MalformedRow(f"expected header {','.join(CSV_HEADER)!r}, got {','.join(names)!r}", line=1)
    rows = []
    for lineno, row in enumerate(reader, start=2):
        if not row or all(not c.strip() for c in row):
            continue
        if len(row) != len(CSV_HEADER):
            raise MalformedRow(f"expected {len(CSV_HEADER)} fields, got {len(row)}", line=lineno)
        try:
            values = [float(c) for c in row]
        except ValueError:
            raise MalformedRow(f"non-numeric cell in {row!r}", line=lineno) from None
        if not all(np.isfinite(values)):
            raise MalformedRow(f"non-finite cell in {row!r}", line=lineno)
        if rows and values[0] <= rows[-1][0]:
            raise NonMonotonicTime(f"timestamp {values[0]!r} after {rows[-1][0]!r}", line=lineno)
        rows.append(values)
    if not rows:
        raise EmptyInput("header only, no data rows")
    if len(rows) < 2:
        raise TooShort("a series needs at least 2 rows", line=2)
    data = np.asarray(rows, dtype=float)
    ts = data[:, 0]
    return DrivingSeries(ts, data[:, 1:], _infer_rate(ts), source_id)


def serialize_csv(series: DrivingSeries) -> str:
    """Canonical CSV text; ``repr`` floats round-trip exactly."""
    out = [",".join(CSV_HEADER)]
    for t, row in zip(series.timestamps.tolist(), series.channels.tolist()):
        out.append(",".join(repr(float(v)) for v in (t, *row)))
    return "\n".join(out) + "\n"


def parse_oxts(
    records: Iterable[str],
    rate_hz: float = 10.0,
    columns: Mapping[str, int] | None = None,
    source_id: str = "",
) -> DrivingSeries:
    """Extract ``v_f, v_l, a_f, a_l`` from whitespace-delimited oxts lines.

    Timestamps are synthesized as ``i / rate_hz``. ``columns`` overrides the
    KITTI field indices for other loggers.
    """
    cols = dict(OXTS_COLUMNS)
    if columns:
        cols.update(columns)
    idx = [cols[c] for c in CHANNELS]
    min_fields = max(OXTS_MIN_FIELDS, max(idx) + 1)
    frames = []
    for lineno, line in enumerate(records, start=1):
        fields = line.split()
        if not fields:
            continue
        if len(fields) < min_fields:
            raise ShortLine(f"expected at least {min_fields} fields, got {len(fields)}", line=lineno)
        try:
            frames.append([float(fields[i]) for i in idx])
        except ValueError:
            raise NonNumericField(f"non-numeric field in {line.strip()!r}", line=lineno) from None
        if not all(np.isfinite(frames[-1])):
            raise NonNumericField(f"non-finite field in {line.strip()!r}", line=lineno)
    if not frames:
        raise EmptyInput("no oxts records")
    if len(frames) < 2:
        raise TooShort("a series needs at least 2 frames", line=1)
    ts = np.arange(len(frames)) / float(rate_hz)
    return DrivingSeries(ts, np.asarray(frames), float(rate_hz), source_id)


def read_oxts_dir(path: str | os.PathLike) -> list[str]:
    """Lines from a KITTI ``oxts/data`` directory, one file per frame, in
    lexicographic filename order."""
    names = sorted(n for n in os.listdir(path) if n.endswith(".txt"))
    lines = []
    for name in names:
        with open(os.path.join(path, name), encoding="utf-8") as fh:
            lines.append(fh.read().strip())
    return lines


def derive_accel(series: DrivingSeries) -> DrivingSeries:
    """Replace ``a_f``/``a_l`` with finite differences of ``v_f``/``v_l``.

    Central differences in the interior, one-sided at the ends.
    """
    if len(series) < 3:
        raise TooShort(f"derive_accel needs at least 3 samples, got {len(series)}")
    dt = series.dt
    ch = series.channels.copy()
    for v_name, a_name in (("v_f", "a_f"), ("v_l", "a_l")):
        v = series.channel(v_name)
        a = np.empty_like(v)
        a[1:-1] = (v[2:] - v[:-2]) / (2.0 * dt)
        a[0] = (v[1] - v[0]) / dt
        a[-1] = (v[-1] - v[-2]) / dt
        ch[:, CHANNELS.index(a_name)] = a
    return replace(series, channels=ch)


@dataclass(frozen=True)
class Standardization:
    """Per-channel affine record: ``z = (x - mean) / scale``."""

    mean: np.ndarray
    scale: np.ndarray
    enabled: bool = False

    def forward(self, x: np.ndarray) -> np.ndarray:
        return (np.asarray(x, dtype=float) - self.mean) / self.scale

    def inverse(self, z: np.ndarray) -> np.ndarray:
        return np.asarray(z, dtype=float) * self.scale + self.mean

    def to_dict(self) -> dict:
        return {"enabled": self.enabled, "mean": self.mean.tolist(), "scale": self.scale.tolist()}

    @classmethod
    def from_dict(cls, d: Mapping) -> "Standardization":
        return cls(np.asarray(d["mean"], float), np.asarray(d["scale"], float), bool(d["enabled"]))


def standardize(series: DrivingSeries, enabled: bool = False) -> tuple[DrivingSeries, Standardization]:
    """Z-score each channel (sample std, ddof=1) when ``enabled``.

    Channels with std below 1e-9 keep scale 1. When disabled the series is
    returned unchanged with a record of the means and unit scales.
    """
    mean = series.channels.mean(axis=0)
    if not enabled:
        return series, Standardization(mean, np.ones_like(mean), False)
    scale = series.channels.std(axis=0, ddof=1)
    scale = np.where(scale < 1e-9, 1.0, scale)
    rec = Standardization(mean, scale, True)
    return replace(series, channels=rec.forward(series.channels)), rec


def summary(series: DrivingSeries) -> dict:
    ch = series.channels
    return {
        "T": len(series),
        "dt": series.dt,
        "source": series.source_id,
        "ranges": {name: [float(ch[:, i].min()), float(ch[:, i].max())] for i, name in enumerate(CHANNELS)},
    }


def from_arrays(values: Sequence[Sequence[float]] | np.ndarray, rate_hz: float = 10.0, source_id: str = "") -> DrivingSeries:
    values = np.asarray(values, dtype=float)
    return DrivingSeries(np.arange(len(values)) / float(rate_hz), values, float(rate_hz), source_id)
