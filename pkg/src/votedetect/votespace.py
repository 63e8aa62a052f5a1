"""Correspondence filtering and vote construction.

A vote is one descriptor correspondence that survived the distance and hue
filters, projected into (center-x, center-y, relative scale, relative
rotation) and weighted by its adjacency in [0, 1].
"""
from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Optional, Sequence

import numpy as np

TWO_PI = 2.0 * math.pi


def wrap_angle(theta: float) -> float:
    """Map an angle in radians into [0, 2*pi)."""
    t = math.fmod(theta, TWO_PI)
    if t < 0.0:
        t += TWO_PI
    # fmod of a tiny negative value can round up to exactly 2*pi
    if t >= TWO_PI:
        t = 0.0
    return t


@dataclass(frozen=True)
class Keypoint:
    x: float
    y: float
    scale: float
    orientation: float
    descriptor: tuple
    luminance: int
    hue: Optional[float] = None

    def __post_init__(self):
        if not self.scale > 0:
            raise ValueError(f"keypoint scale must be positive, got {self.scale}")


@dataclass(frozen=True)
class Correspondence:
    pattern_feature_id: int
    scene_feature_id: int
    distance: float


@dataclass(frozen=True, slots=True)
class Vote:
    vote_id: int
    cx: float
    cy: float
    rel_scale: float
    rel_rotation: float
    adjacency: float
    pattern_feature_id: int
    scene_feature_id: int
    scene_lum: int
    pattern_lum: int


@dataclass(frozen=True)
class PatternMeta:
    pattern_id: str
    width: int
    height: int

    @property
    def center(self) -> tuple[float, float]:
        return (self.width / 2.0, self.height / 2.0)

    @property
    def diagonal(self) -> float:
        return math.hypot(self.width, self.height)


class VoteSpace:
    """All votes of one (pattern, scene) pair.

    Votes are immutable; erasure only flips their ``alive`` flag. Column
    arrays are cached once for vectorised queries.
    """

    def __init__(self, pattern_id: str, votes: Sequence[Vote], scene_dims: tuple[int, int]):
        self.pattern_id = pattern_id
        self.votes = list(votes)
        self.scene_dims = (int(scene_dims[0]), int(scene_dims[1]))
        for i, v in enumerate(self.votes):
            if v.vote_id != i:
                raise ValueError("vote ids must equal their position in the vote space")
        n = len(self.votes)
        self.alive = np.ones(n, dtype=bool)
        self.cx = np.array([v.cx for v in self.votes], dtype=float)
        self.cy = np.array([v.cy for v in self.votes], dtype=float)
        self.adjacency = np.array([v.adjacency for v in self.votes], dtype=float)

    def __len__(self) -> int:
        return len(self.votes)

    @property
    def live_count(self) -> int:
        return int(self.alive.sum())

    def live_ids(self) -> np.ndarray:
        return np.flatnonzero(self.alive)

    def live_votes(self) -> list[Vote]:
        return [self.votes[i] for i in self.live_ids()]

    def live_adjacency_sum(self) -> float:
        return float(self.adjacency[self.alive].sum())

    def remove(self, ids) -> None:
        self.alive[np.asarray(list(ids), dtype=int)] = False


def distance_threshold(distances: Sequence[float]) -> float:
    """Midrange of the correspondence distances."""
    if len(distances) == 0:
        raise ValueError("empty correspondence set")
    lo = min(distances)
    hi = max(distances)
    if lo < 0:
        raise ValueError("distances must be non-negative")
    return (lo + hi) / 2.0


def reject_by_distance(distance: float, thr: float) -> bool:
    """True when the correspondence is accepted (boundary inclusive)."""
    return distance <= thr


def adjacency(distance: float, thr: float) -> float:
    if distance > thr:
        raise ValueError(f"distance {distance} exceeds threshold {thr}; filter first")
    if thr == 0.0:
        # only reachable with distance == 0: every match is perfect
        return 1.0
    r = distance / thr
    return 1.0 - r * r


def hue_filter(pattern_hue: Optional[float], scene_hue: Optional[float],
               max_diff_deg: float = 60.0) -> bool:
    if pattern_hue is None or scene_hue is None:
        return True
    d = abs(pattern_hue - scene_hue) % 360.0
    return min(d, 360.0 - d) <= max_diff_deg


def predict_vote(corr: Correspondence, pattern_kp: Keypoint, scene_kp: Keypoint,
                 meta: PatternMeta, adj: float, vote_id: int = 0) -> Vote:
    """Project a correspondence to the object center it implies.

    The pattern keypoint's offset to the pattern center is carried into the
    scene by the similarity transform relating the two keypoints.
    """
    if pattern_kp.scale <= 0:
        raise ValueError("pattern keypoint scale must be positive")
    rel_scale = scene_kp.scale / pattern_kp.scale
    rel_rotation = wrap_angle(scene_kp.orientation - pattern_kp.orientation)
    ox = meta.center[0] - pattern_kp.x
    oy = meta.center[1] - pattern_kp.y
    c, s = math.cos(rel_rotation), math.sin(rel_rotation)
    cx = scene_kp.x + rel_scale * (c * ox - s * oy)
    cy = scene_kp.y + rel_scale * (s * ox + c * oy)
    return Vote(
        vote_id=vote_id,
        cx=cx,
        cy=cy,
        rel_scale=rel_scale,
        rel_rotation=rel_rotation,
        adjacency=adj,
        pattern_feature_id=corr.pattern_feature_id,
        scene_feature_id=corr.scene_feature_id,
        scene_lum=int(scene_kp.luminance),
        pattern_lum=int(pattern_kp.luminance),
    )


def build_vote_space(pattern_kps: Sequence[Keypoint], scene_kps: Sequence[Keypoint],
                     corrs: Sequence[Correspondence], meta: PatternMeta,
                     scene_dims: tuple[int, int], hue_max_diff: float = 60.0) -> VoteSpace:
    if not corrs:
        return VoteSpace(meta.pattern_id, [], scene_dims)
    thr = distance_threshold([c.distance for c in corrs])
    votes: list[Vote] = []
    for corr in corrs:
        if not reject_by_distance(corr.distance, thr):
            continue
        pk = pattern_kps[corr.pattern_feature_id]
        sk = scene_kps[corr.scene_feature_id]
        if not hue_filter(pk.hue, sk.hue, hue_max_diff):
            continue
        adj = adjacency(corr.distance, thr)
        votes.append(predict_vote(corr, pk, sk, meta, adj, vote_id=len(votes)))
    return VoteSpace(meta.pattern_id, votes, scene_dims)
