"""Readers and writers for the model, segmentation, ranking, timeline and
report files."""
from __future__ import annotations

import csv
import io
import json
import math

import numpy as np

from .errors import InputError, LengthMismatch, MalformedRow
from .ranking import UrgencyRanking, occupancy_rows
from .scenario import TimelineRecord
from .sticky import FitResult


def _fmt(x) -> str:
    return repr(float(x))


def dumps(obj) -> str:
    return json.dumps(obj, indent=1, allow_nan=False) + "\n"


def write_text(path, text: str) -> None:
    with open(path, "w", encoding="utf-8", newline="") as fh:
        fh.write(text)


def model_document(result: FitResult, config: dict, standardization: dict | None = None) -> dict:
    s = result.best_state
    return {
        "config": config,
        "seed": result.seed,
        "weights": {"beta": s.weights.beta.tolist(), "remainder": s.weights.remainder},
        "trans": {"rows": s.trans.rows.tolist(), "initial": s.trans.initial.tolist()},
        "emit": {"means": s.emit.means.tolist(), "covariances": s.emit.covariances.tolist()},
        "labels": result.labels_map.tolist(),
        "n_clusters": result.n_clusters,
        "best_iteration": result.best_iteration,
        "trace": result.trace.tolist(),
        "standardization": standardization,
    }


def labels_csv(timestamps, labels) -> str:
    out = ["t,cluster_id"]
    out += [f"{_fmt(t)},{int(c)}" for t, c in zip(timestamps, labels)]
    return "\n".join(out) + "\n"


def read_labels_csv(text: str) -> tuple[np.ndarray, np.ndarray]:
    reader = csv.reader(io.StringIO(text))
    header = next(reader, None)
    if header is None or [h.strip() for h in header] != ["t", "cluster_id"]:
        raise MalformedRow("labels file must start with header 't,cluster_id'", line=1)
    ts, labels = [], []
    for lineno, row in enumerate(reader, start=2):
        if not row:
            continue
        try:
            ts.append(float(row[0]))
            labels.append(int(row[1]))
        except (ValueError, IndexError):
            raise MalformedRow(f"bad labels row {row!r}", line=lineno) from None
        if labels[-1] < 0:
            raise MalformedRow("cluster ids must be non-negative", line=lineno)
    if not labels:
        raise InputError("labels file has no rows")
    return np.asarray(ts), np.asarray(labels, dtype=np.int64)


def check_aligned(series_len: int, labels: np.ndarray) -> None:
    if series_len != len(labels):
        raise LengthMismatch(f"{len(labels)} labels for a series of {series_len} frames")


def ranking_document(ranking: UrgencyRanking) -> dict:
    return ranking.to_dict()


def occupancy_csv(ranking: UrgencyRanking) -> str:
    out = ["coarse_level,cluster_id,occupancy,rank"]
    out += [f"{c},{i},{_fmt(o)},{r}" for c, i, o, r in occupancy_rows(ranking)]
    return "\n".join(out) + "\n"


def summary_csv(clusters) -> str:
    """Cluster occupancy distribution with per-channel means (original units)."""
    from .ingest import CHANNELS

    out = ["cluster_id,occupancy,frames,segments," + ",".join(f"mean_{c}" for c in CHANNELS)]
    for c in clusters:
        out.append(f"{c.cluster_id},{_fmt(c.occupancy)},{c.n_frames},{len(c.segments)},"
                   + ",".join(_fmt(v) for v in c.mean))
    return "\n".join(out) + "\n"


def timeline_csv(records: list[TimelineRecord]) -> str:
    out = ["t,cluster_id,level,coarse,number,distance,type,angle"]
    for r in records:
        s = r.scene
        dist = "" if math.isinf(s.distance) else _fmt(s.distance)
        out.append(f"{_fmt(r.t)},{r.cluster_id},{r.level.value},{r.coarse.value},{s.number},{dist},"
                   f"{s.type},{_fmt(s.angle)}")
    return "\n".join(out) + "\n"
