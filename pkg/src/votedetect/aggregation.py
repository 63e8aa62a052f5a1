"""Two-pass vote aggregation and occurrence acceptance.

For every proposition, strongest first:

* pass 1 gathers the live votes in a disc around the proposition, keeps the
  strongest vote per pattern feature and runs cascade pass 1;
* the surviving group gives a first pose, whose shrunken quad bounds a
  flood fill over the raw vote image (pass 2), followed by the same unique
  filtering and cascade pass 2;
* an accepted group becomes an occurrence and its area is erased from the
  vote space and vote image.
"""
from __future__ import annotations

import math
from collections import deque
from dataclasses import dataclass, field
from typing import Optional, Sequence

import numpy as np

from .cascade import CascadeConfig, CascadeContext, FilterReport, run_cascade
from .vote_image import (Proposition, VoteImage, erase_region, point_in_convex_polygon,
                         remove_votes)
from .votespace import PatternMeta, Vote, VoteSpace, wrap_angle


@dataclass(frozen=True)
class Pose:
    center: tuple[float, float]
    scale: float
    rotation: float
    quad: tuple[tuple[float, float], ...]

    @classmethod
    def from_similarity(cls, center, scale: float, rotation: float, width: float,
                        height: float) -> "Pose":
        """Pose whose quad is the width x height rectangle under the transform.

        Corners run TL, TR, BR, BL of the pattern, which has positive signed
        area in (x, y) coordinates.
        """
        rotation = wrap_angle(rotation)
        c, s = math.cos(rotation), math.sin(rotation)
        hw, hh = width / 2.0, height / 2.0
        quad = []
        for u, v in ((-hw, -hh), (hw, -hh), (hw, hh), (-hw, hh)):
            quad.append((center[0] + scale * (c * u - s * v),
                         center[1] + scale * (s * u + c * v)))
        return cls((float(center[0]), float(center[1])), float(scale), rotation, tuple(quad))

    def shrunk_quad(self, factor: float) -> list[tuple[float, float]]:
        cx, cy = self.center
        return [(cx + factor * (x - cx), cy + factor * (y - cy)) for x, y in self.quad]


@dataclass
class Occurrence:
    pattern_id: str
    pose: Pose
    votes: list[Vote]
    filter_report: list[FilterReport]
    proposition: Optional[Proposition] = None

    @property
    def vote_count(self) -> int:
        return len(self.votes)

    @property
    def adjacency_sum(self) -> float:
        return math.fsum(v.adjacency for v in self.votes)

    def to_dict(self) -> dict:
        return {
            "pattern_id": self.pattern_id,
            "center": list(self.pose.center),
            "scale": self.pose.scale,
            "rotation_deg": math.degrees(self.pose.rotation),
            "quad": [list(p) for p in self.pose.quad],
            "vote_count": self.vote_count,
            "adjacency_sum": self.adjacency_sum,
            "filter_report": [r.to_dict() for r in self.filter_report],
        }


@dataclass
class DetectionConfig:
    gamma: float = 0.25
    shrink: float = 0.8
    t_min: float = 1.5
    smooth_radius: int = 1
    cascade: CascadeConfig = field(default_factory=CascadeConfig)


def gather_local(vs: VoteSpace, prop: Proposition, radius: float) -> list[Vote]:
    if radius <= 0:
        raise ValueError("radius must be positive")
    live = vs.live_ids()
    px, py = prop.position
    d2 = (vs.cx[live] - px) ** 2 + (vs.cy[live] - py) ** 2
    return [vs.votes[i] for i in live[d2 <= radius * radius]]


def unique_filter(votes: Sequence[Vote]) -> list[Vote]:
    """Strongest vote per pattern feature, in descending adjacency."""
    best: dict[int, Vote] = {}
    for v in votes:
        cur = best.get(v.pattern_feature_id)
        if cur is None or (v.adjacency, -v.scene_feature_id) > (cur.adjacency, -cur.scene_feature_id):
            best[v.pattern_feature_id] = v
    return sorted(best.values(), key=lambda v: (-v.adjacency, v.pattern_feature_id,
                                                 v.scene_feature_id))


def estimate_pose(votes: Sequence[Vote], meta: PatternMeta) -> Pose:
    if not votes:
        raise ValueError("cannot estimate a pose from an empty vote group")
    w = np.array([v.adjacency for v in votes], dtype=float)
    cx = np.array([v.cx for v in votes], dtype=float)
    cy = np.array([v.cy for v in votes], dtype=float)
    if w.sum() <= 0:
        w = np.ones_like(w)
    center = (float(np.dot(w, cx) / w.sum()), float(np.dot(w, cy) / w.sum()))
    scale = float(np.median([v.rel_scale for v in votes]))
    rot = np.array([v.rel_rotation for v in votes], dtype=float)
    rotation = math.atan2(np.sin(rot).sum(), np.cos(rot).sum())
    return Pose.from_similarity(center, scale, rotation, meta.width, meta.height)


def flood_cells(vi: VoteImage, seed: tuple[int, int], bound) -> list[tuple[int, int]]:
    """8-connected fill over nonzero cells whose centers lie inside ``bound``.

    ``seed`` is (col, row); returns filled cells as (col, row).
    """
    col, row = seed
    rows, cols = vi.shape
    # evaluate the bound only around the quad to keep large grids cheap
    bx = [p[0] for p in bound]
    by = [p[1] for p in bound]
    b = vi.bin_size
    c0 = max(0, int(math.floor(min(bx) / b)) - 1)
    c1 = min(cols, int(math.ceil(max(bx) / b)) + 1)
    r0 = max(0, int(math.floor(min(by) / b)) - 1)
    r1 = min(rows, int(math.ceil(max(by) / b)) + 1)
    allowed = np.zeros((rows, cols), dtype=bool)
    if c0 < c1 and r0 < r1:
        sub_r, sub_c = np.mgrid[r0:r1, c0:c1]
        inside = point_in_convex_polygon((sub_c + 0.5) * b, (sub_r + 0.5) * b, bound)
        allowed[r0:r1, c0:c1] = inside & (vi.grid[r0:r1, c0:c1] > 0)
    if not (0 <= row < rows and 0 <= col < cols) or not allowed[row, col]:
        return []
    seen = {(row, col)}
    queue = deque([(row, col)])
    out = []
    while queue:
        r, c = queue.popleft()
        out.append((c, r))
        for dr in (-1, 0, 1):
            for dc in (-1, 0, 1):
                nr, nc = r + dr, c + dc
                if (nr, nc) in seen or not (0 <= nr < rows and 0 <= nc < cols):
                    continue
                if allowed[nr, nc]:
                    seen.add((nr, nc))
                    queue.append((nr, nc))
    return out


def flood_gather(vs: VoteSpace, vi: VoteImage, prop: Proposition, bound: Pose,
                 shrink: float = 0.8) -> list[Vote]:
    if not 0 < shrink <= 1:
        raise ValueError("shrink must be in (0, 1]")
    cells = flood_cells(vi, prop.cell, bound.shrunk_quad(shrink))
    ids = sorted(i for c, r in cells for i in vi.cell_votes(c, r) if vs.alive[i])
    return [vs.votes[i] for i in ids]


def detect(vs: VoteSpace, vi: VoteImage, props: Sequence[Proposition], meta: PatternMeta,
           config: Optional[DetectionConfig] = None, scene_image=None, pattern_image=None,
           trace: Optional[list] = None) -> list[Occurrence]:
    """Run the proposition loop; mutates ``vs`` and ``vi`` by erasure.

    ``trace``, when given, receives one dict per proposition describing where
    it stopped.
    """
    cfg = config or DetectionConfig()
    radius = cfg.gamma * meta.diagonal
    occurrences: list[Occurrence] = []

    def note(prop, stage, report=None):
        if trace is not None:
            trace.append({"cell": list(prop.cell), "strength": prop.strength, "stage": stage,
                          "rejected_by": report.rejected_by if report else None})

    for prop in props:
        col, row = prop.cell
        if vi.smoothed_at(col, row, cfg.smooth_radius) <= cfg.t_min:
            note(prop, "stale")
            continue
        group1 = unique_filter(gather_local(vs, prop, radius))
        rep1 = run_cascade(group1, 1, cfg.cascade)
        if not rep1.accepted:
            note(prop, "pass1", rep1)
            continue
        pose1 = estimate_pose(group1, meta)
        group2 = unique_filter(flood_gather(vs, vi, prop, pose1, cfg.shrink))
        ctx = CascadeContext(scene_image, pattern_image, pose1)
        rep2 = run_cascade(group2, 2, cfg.cascade, ctx)
        if not rep2.accepted:
            note(prop, "pass2", rep2)
            continue
        pose2 = estimate_pose(group2, meta)
        occurrences.append(Occurrence(meta.pattern_id, pose2, group2, [rep1, rep2], prop))
        erase_region(vs, vi, pose2.quad)
        remove_votes(vs, vi, [v.vote_id for v in group2])
        note(prop, "accepted")
    return occurrences
