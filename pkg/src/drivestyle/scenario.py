"""Scene features from KITTI tracking labels, risk timelines and the
speed/scene correlation report."""
from __future__ import annotations

import io
import math
from collections import Counter, defaultdict
from dataclasses import dataclass
from typing import Iterable, Sequence, TextIO

import numpy as np
from scipy import stats

from .errors import FrameMisalignment, LengthMismatch, MalformedLine, UnknownCluster, UnknownType
from .ranking import Coarse, Level, UrgencyRanking

# KITTI tracking label: frame track_id type truncated occluded alpha bbox(4) dims(3) location(3) rotation_y [score]
LABEL_MIN_FIELDS = 17
_FRAME, _TRACK, _TYPE, _ALPHA = 0, 1, 2, 5
_LOC = slice(13, 16)

OBJECT_TYPES = ("car", "van", "truck", "pedestrian", "cyclist", "tram", "misc")
_TYPE_MAP = {
    "car": "car", "van": "van", "truck": "truck", "pedestrian": "pedestrian",
    "person_sitting": "pedestrian", "cyclist": "cyclist", "tram": "tram", "misc": "misc",
}
NO_TYPE = "none"


@dataclass(frozen=True)
class BoundingBox:
    frame: int
    object_type: str
    location: tuple[float, float, float]
    observation_angle: float
    track_id: int | None = None

    @property
    def ground_distance(self) -> float:
        x, _, z = self.location
        return math.hypot(x, z)


@dataclass(frozen=True)
class ScenarioFrame:
    number: int = 0
    distance: float = math.inf
    type: str = NO_TYPE
    angle: float = 0.0
    nearest_id: int | None = None


@dataclass(frozen=True)
class TimelineRecord:
    t: float
    cluster_id: int
    level: Level
    coarse: Coarse
    scene: ScenarioFrame


def parse_label_frames(text: str | TextIO | Iterable[str]) -> dict[int, list[BoundingBox]]:
    """Boxes grouped by frame; ``DontCare`` rows are dropped."""
    lines = io.StringIO(text) if isinstance(text, str) else text
    frames: dict[int, list[BoundingBox]] = defaultdict(list)
    for lineno, line in enumerate(lines, start=1):
        f = line.split()
        if not f:
            continue
        if len(f) < LABEL_MIN_FIELDS:
            raise MalformedLine(f"expected at least {LABEL_MIN_FIELDS} fields, got {len(f)}", line=lineno)
        raw_type = f[_TYPE]
        if raw_type == "DontCare":
            continue
        obj = _TYPE_MAP.get(raw_type.lower())
        if obj is None:
            raise UnknownType(f"unknown object type {raw_type!r}", line=lineno)
        try:
            frame, track = int(f[_FRAME]), int(f[_TRACK])
            alpha = float(f[_ALPHA])
            loc = tuple(float(v) for v in f[_LOC])
        except ValueError:
            raise MalformedLine(f"non-numeric field in {line.strip()!r}", line=lineno) from None
        if frame < 0 or not all(math.isfinite(v) for v in loc):
            raise MalformedLine("negative frame or non-finite location", line=lineno)
        if not -math.pi <= alpha <= math.pi:
            raise MalformedLine(f"observation angle {alpha} outside [-pi, pi]", line=lineno)
        frames[frame].append(BoundingBox(frame, obj, loc, alpha, track if track >= 0 else None))
    return dict(frames)


def extract_features(boxes: dict[int, list[BoundingBox]], frame_count: int, frame_offset: int = 0) -> list[ScenarioFrame]:
    """Per-frame [number, distance, type, angle] of the nearest box.

    Label frame ``f`` lands on series frame ``f + frame_offset``.
    """
    shifted = {f + frame_offset: b for f, b in boxes.items() if b}
    if shifted and (min(shifted) < 0 or max(shifted) >= frame_count):
        raise FrameMisalignment(
            f"label frames span [{min(shifted)}, {max(shifted)}] after offset {frame_offset}, "
            f"series has {frame_count} frames"
        )
    out = []
    for t in range(frame_count):
        bs = shifted.get(t)
        if not bs:
            out.append(ScenarioFrame())
            continue
        nearest = min(bs, key=lambda b: b.ground_distance)
        out.append(ScenarioFrame(len(bs), nearest.ground_distance, nearest.object_type,
                                 nearest.observation_angle, nearest.track_id))
    return out


def build_risk_timeline(labels, ranking: UrgencyRanking, frames: Sequence[ScenarioFrame],
                        timestamps=None) -> list[TimelineRecord]:
    labels = np.asarray(labels)
    if len(labels) != len(frames):
        raise LengthMismatch(f"{len(labels)} labels vs {len(frames)} scene frames")
    if timestamps is None:
        timestamps = np.arange(len(labels), dtype=float)
    by_id = ranking.by_id()
    missing = sorted(set(np.unique(labels).tolist()) - set(by_id))
    if missing:
        raise UnknownCluster(f"clusters {missing} are not in the ranking")
    return [
        TimelineRecord(float(t), int(c), by_id[int(c)].level, by_id[int(c)].coarse, fr)
        for t, c, fr in zip(timestamps, labels, frames)
    ]


def _coef(x, y, kind: str):
    """Coefficient and a flag; ``None`` when undefined."""
    x, y = np.asarray(x, float), np.asarray(y, float)
    if len(x) < 3:
        return None, "InsufficientData"
    if np.ptp(x) == 0 or np.ptp(y) == 0:
        return None, "InsufficientVariance"
    if kind == "pearson":
        r = stats.pearsonr(x, y)[0]
    else:
        rx, ry = stats.rankdata(x), stats.rankdata(y)
        # identical or mirrored rankings are exactly +-1; avoid rounding drift
        if np.array_equal(rx, ry):
            return 1.0, None
        if np.array_equal(rx, len(x) + 1 - ry):
            return -1.0, None
        r = stats.spearmanr(x, y)[0]
    return float(np.clip(r, -1.0, 1.0)), None


def _coefficients(v_f, frames: Sequence[ScenarioFrame]) -> dict:
    number = np.array([f.number for f in frames], dtype=float)
    has = number > 0
    dist = np.array([f.distance for f in frames])[has]
    out, flags = {}, {}
    for kind in ("pearson", "spearman"):
        out[f"{kind}_vf_number"], flags[f"{kind}_vf_number"] = _coef(v_f, number, kind)
        out[f"{kind}_vf_distance"], flags[f"{kind}_vf_distance"] = _coef(v_f[has], dist, kind)
    out["n_frames"] = int(len(frames))
    out["n_frames_with_objects"] = int(has.sum())
    out["flags"] = {k: v for k, v in flags.items() if v}
    return out


def nearest_changes(frames: Sequence[ScenarioFrame]) -> int:
    """Frames where the nearest tracked object differs from the previous frame's."""
    n = 0
    for prev, cur in zip(frames, frames[1:]):
        if prev.number and cur.number and prev.nearest_id != cur.nearest_id:
            n += 1
    return n


def correlation_report(v_f, frames: Sequence[ScenarioFrame], timeline: Sequence[TimelineRecord]) -> dict:
    """Global and per-cluster Pearson/Spearman of v_f against number and
    distance, per-level scene means, type frequencies, nearest-object changes.

    Frames without objects never enter distance statistics.
    """
    if hasattr(v_f, "channel"):
        v_f = v_f.channel("v_f")
    v_f = np.asarray(v_f, dtype=float)
    if not (len(v_f) == len(frames) == len(timeline)):
        raise LengthMismatch(f"lengths differ: v_f {len(v_f)}, frames {len(frames)}, timeline {len(timeline)}")
    clusters = np.array([r.cluster_id for r in timeline])
    per_cluster = {}
    for cid in np.unique(clusters).tolist():
        idx = np.flatnonzero(clusters == cid)
        per_cluster[str(cid)] = _coefficients(v_f[idx], [frames[i] for i in idx])

    per_level = {}
    for coarse in Coarse:
        sel = [f for f, r in zip(frames, timeline) if r.coarse is coarse]
        if not sel:
            continue
        with_obj = [f.distance for f in sel if f.number > 0]
        per_level[coarse.value] = {
            "frames": len(sel),
            "mean_number": float(np.mean([f.number for f in sel])),
            "mean_distance": float(np.mean(with_obj)) if with_obj else None,
            "type_frequencies": dict(sorted(Counter(f.type for f in sel if f.number > 0).items())),
        }
    return {
        "global": _coefficients(v_f, frames),
        "per_cluster": per_cluster,
        "per_level": per_level,
        "type_frequencies": dict(sorted(Counter(f.type for f in frames if f.number > 0).items())),
        "nearest_changes": nearest_changes(frames),
    }
