"""Vote image: the (X, Y) projection of a vote space's adjacency mass."""
from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .votespace import VoteSpace


@dataclass(frozen=True)
class Proposition:
    cell: tuple[int, int]  # (col, row)
    position: tuple[float, float]
    strength: float


def box_sum(a: np.ndarray, radius: int) -> np.ndarray:
    """Sum over the (2r+1) x (2r+1) window around every cell, zero outside."""
    if radius == 0:
        return a.astype(float, copy=True)
    k = 2 * radius + 1
    p = np.pad(a.astype(float), radius + 1)
    s = p.cumsum(axis=0).cumsum(axis=1)
    h, w = a.shape
    # integral-image window sums; padded origin row/col is all zeros
    return s[k:k + h, k:k + w] - s[0:h, k:k + w] - s[k:k + h, 0:w] + s[0:h, 0:w]


def point_in_convex_polygon(px, py, poly) -> np.ndarray:
    """Vectorised inside test for a convex polygon, boundary inclusive.

    Works for either vertex orientation.
    """
    px = np.asarray(px, dtype=float)
    py = np.asarray(py, dtype=float)
    pts = np.asarray(poly, dtype=float)
    n = len(pts)
    scale = max(1.0, float(np.abs(pts).max()))
    eps = 1e-9 * scale * scale
    pos = np.ones(px.shape, dtype=bool)
    neg = np.ones(px.shape, dtype=bool)
    for i in range(n):
        x0, y0 = pts[i]
        x1, y1 = pts[(i + 1) % n]
        cross = (x1 - x0) * (py - y0) - (y1 - y0) * (px - x0)
        pos &= cross >= -eps
        neg &= cross <= eps
    return pos | neg


class VoteImage:
    """Per-cell adjacency sums with an index back to the votes in each cell.

    ``grid`` has shape (rows, cols) = (ceil(H / bin), ceil(W / bin)). Votes
    whose centers fall outside the scene are clamped into border cells.
    """

    def __init__(self, vs: VoteSpace, bin_size: int = 4):
        if bin_size < 1:
            raise ValueError("bin_size must be >= 1")
        self.bin_size = int(bin_size)
        w, h = vs.scene_dims
        self.cols = max(1, math.ceil(w / self.bin_size))
        self.rows = max(1, math.ceil(h / self.bin_size))
        self.grid = np.zeros((self.rows, self.cols), dtype=float)
        self.vote_index: dict[int, list[int]] = {}
        self._counts: dict[int, np.ndarray] = {}

        col = np.clip(np.floor(vs.cx / self.bin_size), 0, self.cols - 1).astype(int)
        row = np.clip(np.floor(vs.cy / self.bin_size), 0, self.rows - 1).astype(int)
        self.cell_of = row * self.cols + col
        for vid in vs.live_ids():
            self.vote_index.setdefault(int(self.cell_of[vid]), []).append(int(vid))
        self._adjacency = vs.adjacency
        for cell in self.vote_index:
            self._recompute(cell)

    @property
    def shape(self) -> tuple[int, int]:
        return self.grid.shape

    def _recompute(self, cell: int) -> None:
        ids = self.vote_index.get(cell, [])
        r, c = divmod(cell, self.cols)
        # summing in id order keeps the value reproducible after erasures
        self.grid[r, c] = float(np.sum(self._adjacency[ids])) if ids else 0.0

    def cell_center(self, col: int, row: int) -> tuple[float, float]:
        return ((col + 0.5) * self.bin_size, (row + 0.5) * self.bin_size)

    def cell_votes(self, col: int, row: int) -> list[int]:
        return list(self.vote_index.get(row * self.cols + col, []))

    def discard(self, ids) -> None:
        touched = set()
        for vid in ids:
            cell = int(self.cell_of[vid])
            lst = self.vote_index.get(cell)
            if lst is not None and vid in lst:
                lst.remove(vid)
                touched.add(cell)
        for cell in touched:
            if not self.vote_index[cell]:
                del self.vote_index[cell]
            self._recompute(cell)

    def _count(self, radius: int) -> np.ndarray:
        if radius not in self._counts:
            self._counts[radius] = box_sum(np.ones(self.shape), radius)
        return self._counts[radius]

    def smoothed(self, radius: int = 1) -> np.ndarray:
        return smooth(self, radius)

    def smoothed_at(self, col: int, row: int, radius: int = 1) -> float:
        """Smoothed value of one cell computed from the live grid."""
        if radius == 0:
            return float(self.grid[row, col])
        cnt = self._count(radius)
        r0, r1 = max(0, row - radius), min(self.rows, row + radius + 1)
        c0, c1 = max(0, col - radius), min(self.cols, col + radius + 1)
        return float((self.grid[r0:r1, c0:c1] / cnt[r0:r1, c0:c1]).sum())


def rasterize(vs: VoteSpace, bin_size: int = 4) -> VoteImage:
    return VoteImage(vs, bin_size)


def smooth(vi: VoteImage, kernel_radius: int = 1) -> np.ndarray:
    """Mass-preserving box blur of the raw grid.

    Each cell spreads its value evenly over the in-bounds cells of its
    window, so border cells renormalise and the total is unchanged.
    """
    if kernel_radius < 0:
        raise ValueError("kernel_radius must be >= 0")
    if kernel_radius == 0:
        return vi.grid.copy()
    return box_sum(vi.grid / vi._count(kernel_radius), kernel_radius)


def local_maxima(values: np.ndarray, t_min: float) -> list[tuple[int, int]]:
    """(row, col) of cells above t_min that are >= all 8 neighbours."""
    padded = np.pad(values, 1, constant_values=-np.inf)
    h, w = values.shape
    peak = values > t_min
    for dr in (-1, 0, 1):
        for dc in (-1, 0, 1):
            if dr == 0 and dc == 0:
                continue
            peak &= values >= padded[1 + dr:1 + dr + h, 1 + dc:1 + dc + w]
    rows, cols = np.nonzero(peak)
    return list(zip(rows.tolist(), cols.tolist()))


def find_propositions(vi: VoteImage, t_min: float = 1.5, nms_radius: int = 2,
                      max_props: int = 512, smooth_radius: int = 1) -> list[Proposition]:
    if t_min <= 0:
        raise ValueError("t_min must be positive")
    # integral-image sums differ in the last bits across a plateau; quantise
    # so that plateau cells tie and the raw vote mass decides between them
    values = np.round(smooth(vi, smooth_radius), 9)
    peaks = local_maxima(values, t_min)
    peaks.sort(key=lambda rc: (-values[rc], -vi.grid[rc], rc[0], rc[1]))
    kept: list[tuple[int, int]] = []
    for r, c in peaks:
        if len(kept) >= max_props:
            break
        if any(max(abs(r - kr), abs(c - kc)) <= nms_radius for kr, kc in kept):
            continue
        kept.append((r, c))
    return [Proposition(cell=(c, r), position=vi.cell_center(c, r), strength=float(values[r, c]))
            for r, c in kept]


def erase_region(vs: VoteSpace, vi: VoteImage, quad) -> int:
    """Remove every live vote whose center lies inside ``quad``."""
    live = vs.live_ids()
    if len(live) == 0:
        return 0
    inside = point_in_convex_polygon(vs.cx[live], vs.cy[live], quad)
    ids = live[inside]
    remove_votes(vs, vi, ids)
    return int(len(ids))


def remove_votes(vs: VoteSpace, vi: VoteImage, ids) -> None:
    ids = [int(i) for i in ids if vs.alive[int(i)]]
    if not ids:
        return
    vs.remove(ids)
    vi.discard(ids)
