"""Urgency ranking of driving-style clusters.

Clusters are first split by the sign pattern of forward acceleration over
each of their segments (accelerate/decelerate, first half vs second half),
then by whether the decelerating part reaches a stop, and finally ordered
within each level by mean speed or mean deceleration.
"""
from __future__ import annotations

import enum
from collections import Counter
from dataclasses import dataclass, field
from typing import Iterable, Sequence

import numpy as np

from .errors import DuplicateCluster, EmptyCluster, EmptyPart
from .ingest import CHANNELS
from .sticky import ClusterSummary

V_F = CHANNELS.index("v_f")
A_F = CHANNELS.index("a_f")

DEFAULT_DEADBAND = 0.05  # m/s^2
DEFAULT_STOP_THRESHOLD = 0.5  # m/s


class Pattern(str, enum.Enum):
    PP = "PP"
    PN = "PN"
    NP = "NP"
    NN = "NN"


# more dangerous first; used for tie-breaking the segment vote
_DANGER = {Pattern.NN: 3, Pattern.NP: 2, Pattern.PN: 1, Pattern.PP: 0}


class Level(str, enum.Enum):
    L1 = "L1"
    L2 = "L2"
    L3_1 = "L3_1"
    L3_2 = "L3_2"
    L4_1 = "L4_1"
    L4_2 = "L4_2"

    @property
    def coarse(self) -> "Coarse":
        return _COARSE[self]

    @property
    def rank(self) -> int:
        return LEVEL_ORDER.index(self)


class Coarse(str, enum.Enum):
    VerySafe = "VerySafe"
    Safe = "Safe"
    Dangerous = "Dangerous"
    VeryDangerous = "VeryDangerous"

    @property
    def safe_side(self) -> bool:
        return self in (Coarse.VerySafe, Coarse.Safe)


_COARSE = {
    Level.L1: Coarse.VerySafe,
    Level.L2: Coarse.Safe,
    Level.L3_1: Coarse.Dangerous,
    Level.L3_2: Coarse.Dangerous,
    Level.L4_1: Coarse.VeryDangerous,
    Level.L4_2: Coarse.VeryDangerous,
}

# safest -> most dangerous
LEVEL_ORDER = (Level.L1, Level.L2, Level.L3_2, Level.L3_1, Level.L4_2, Level.L4_1)


@dataclass(frozen=True)
class RankingConfig:
    deadband: float = DEFAULT_DEADBAND
    stop_threshold: float = DEFAULT_STOP_THRESHOLD


@dataclass(frozen=True)
class LevelAssignment:
    cluster_id: int
    level: Level
    score: float
    occupancy: float = 0.0

    @property
    def coarse(self) -> Coarse:
        return self.level.coarse

    def to_dict(self) -> dict:
        return {"id": self.cluster_id, "level": self.level.value, "coarse": self.coarse.value,
                "score": self.score, "occupancy": self.occupancy}


@dataclass(frozen=True)
class UrgencyRanking:
    order: tuple[LevelAssignment, ...]
    coarse_occupancy: dict = field(default_factory=dict)

    def by_id(self) -> dict[int, LevelAssignment]:
        return {a.cluster_id: a for a in self.order}

    @property
    def ids(self) -> list[int]:
        return [a.cluster_id for a in self.order]

    def to_dict(self) -> dict:
        return {
            "clusters": [a.to_dict() for a in sorted(self.order, key=lambda a: a.cluster_id)],
            "order": self.ids,
            "coarse_occupancy": {k.value: v for k, v in self.coarse_occupancy.items()},
        }

    @classmethod
    def from_dict(cls, d) -> "UrgencyRanking":
        by_id = {c["id"]: c for c in d["clusters"]}
        order = tuple(
            LevelAssignment(int(i), Level(by_id[i]["level"]), float(by_id[i]["score"]),
                            float(by_id[i].get("occupancy", 0.0)))
            for i in d["order"]
        )
        return cls(order, _coarse_occupancy(order))


def _halves(x: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    if len(x) == 1:
        return x, x
    h = len(x) // 2
    return x[:h], x[h:]


def _sign(mean: float, deadband: float) -> str:
    # |mean| <= deadband counts as non-braking
    return "P" if mean >= -deadband else "N"


def segment_pattern(a_f: np.ndarray, deadband: float = DEFAULT_DEADBAND) -> Pattern:
    a_f = np.asarray(a_f, dtype=float)
    if a_f.size == 0:
        raise EmptyCluster("segment has no frames")
    first, second = _halves(a_f)
    return Pattern(_sign(first.mean(), deadband) + _sign(second.mean(), deadband))


def classify_sign_pattern(a_f: np.ndarray | Sequence[np.ndarray], deadband: float = DEFAULT_DEADBAND) -> Pattern:
    """Majority vote of per-segment patterns; ties go to the more dangerous one.

    ``a_f`` is either one segment's values or a sequence of per-segment arrays.
    """
    segments = _as_segments(a_f)
    if not segments:
        raise EmptyCluster("cluster has no segments")
    return _vote([segment_pattern(s, deadband) for s in segments])


def _as_segments(a_f) -> list[np.ndarray]:
    if isinstance(a_f, np.ndarray) and a_f.ndim == 1:
        return [a_f] if a_f.size else []
    if len(a_f) and np.isscalar(a_f[0]):
        return [np.asarray(a_f, dtype=float)]
    return [np.asarray(s, dtype=float) for s in a_f]


def _vote(patterns: Iterable[Pattern]) -> Pattern:
    votes = Counter(patterns)
    return max(votes, key=lambda p: (votes[p], _DANGER[p]))


def will_stop(v_f, stop_threshold: float = DEFAULT_STOP_THRESHOLD) -> bool:
    """True when the observed minimum forward speed reaches the threshold."""
    v_f = np.asarray(v_f, dtype=float)
    if v_f.size == 0:
        raise EmptyPart("no frames in part")
    return bool(v_f.min() <= stop_threshold)


def assign_level(cluster: ClusterSummary, config: RankingConfig = RankingConfig()) -> LevelAssignment:
    """Walk the level decision tree for one cluster.

    The accelerating/decelerating "first part" is the first half of every
    segment whose own pattern agrees with the cluster's vote.
    """
    segs = [s.channels for s in cluster.segments if s.channels is not None and len(s.channels)]
    if not segs:
        raise EmptyCluster(f"cluster {cluster.cluster_id} has no segments with data")
    patterns = [segment_pattern(s[:, A_F], config.deadband) for s in segs]
    pattern = _vote(patterns)
    agreeing = [s for s, p in zip(segs, patterns) if p == pattern]
    whole = np.concatenate(segs)
    first = np.concatenate([_halves(s)[0] for s in agreeing])

    if pattern is Pattern.PP:
        level, score = Level.L1, whole[:, V_F].mean()
    elif pattern is Pattern.PN:
        level, score = Level.L2, first[:, V_F].mean()
    elif pattern is Pattern.NP:
        stop = will_stop(first[:, V_F], config.stop_threshold)
        level, score = (Level.L3_1 if stop else Level.L3_2), first[:, A_F].mean()
    else:
        stop = will_stop(whole[:, V_F], config.stop_threshold)
        level, score = (Level.L4_1 if stop else Level.L4_2), whole[:, A_F].mean()
    return LevelAssignment(cluster.cluster_id, level, float(score), float(cluster.occupancy))


def _sort_key(a: LevelAssignment):
    # speed levels: slower is safer; braking levels: milder (closer to 0) is safer
    within = a.score if a.level in (Level.L1, Level.L2) else -a.score
    return (a.level.rank, within, a.cluster_id)


def _coarse_occupancy(assignments) -> dict:
    total = sum(a.occupancy for a in assignments)
    occ = {c: 0.0 for c in Coarse}
    if total > 0:
        for a in assignments:
            occ[a.coarse] += a.occupancy / total
    return occ


def rank_clusters(assignments: Sequence[LevelAssignment]) -> UrgencyRanking:
    """Total order, safest first."""
    if not assignments:
        raise EmptyCluster("nothing to rank")
    ids = [a.cluster_id for a in assignments]
    dup = [i for i, n in Counter(ids).items() if n > 1]
    if dup:
        raise DuplicateCluster(f"cluster ids repeated: {sorted(dup)}")
    order = tuple(sorted(assignments, key=_sort_key))
    return UrgencyRanking(order, _coarse_occupancy(order))


def rank_summaries(clusters: Sequence[ClusterSummary], config: RankingConfig = RankingConfig()) -> UrgencyRanking:
    return rank_clusters([assign_level(c, config) for c in clusters])


def occupancy_rows(ranking: UrgencyRanking) -> list[tuple[str, int, float, int]]:
    """Plot rows ``(coarse_level, cluster_id, occupancy, rank)``; rank 0 is safest."""
    return [(a.coarse.value, a.cluster_id, a.occupancy, r) for r, a in enumerate(ranking.order)]
