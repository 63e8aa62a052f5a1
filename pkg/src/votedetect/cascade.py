"""Verification cascade applied to aggregated vote groups.

Filters, in their canonical numbering:

1. vote count
2. adjacency sum
3. scale variance
4. rotation variance (twelve-bucket robust centering)
5. luminance binary tests
6. normalised cross correlation of the 50x50 object patch

Pass 1 runs (1)(2)(3)(4); pass 2 runs (3)(4)(5)(6). The first rejection
stops the cascade.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field, asdict
from typing import Optional, Sequence

import numpy as np
from scipy import ndimage

from .votespace import TWO_PI, Vote

ROTATION_BUCKETS = 12
ROTATION_TOP_BUCKETS = 3
NCC_PATCH = 50

PASS_FILTERS = {
    1: ("vote_count", "adjacency_sum", "scale_variance", "rotation_variance"),
    2: ("scale_variance", "rotation_variance", "binary_test", "ncc"),
}


class CascadeConfigError(ValueError):
    pass


@dataclass
class CascadeConfig:
    min_votes: int = 6
    min_adjacency_sum: float = 3.0
    max_scale_variance: float = 0.05
    max_rotation_variance: float = math.radians(15.0) ** 2
    binary_tests: int = 128
    max_hamming_norm: float = 0.25
    min_ncc: float = 0.3
    rng_seed: int = 0
    use_ncc: bool = True

    def __post_init__(self):
        if self.min_votes < 3:
            raise CascadeConfigError("min_votes must be >= 3")
        for name in ("min_adjacency_sum", "max_scale_variance", "max_rotation_variance",
                     "max_hamming_norm"):
            if getattr(self, name) < 0:
                raise CascadeConfigError(f"{name} must be >= 0")
        if self.binary_tests < 1:
            raise CascadeConfigError("binary_tests must be >= 1")


@dataclass
class FilterResult:
    name: str
    statistic: float
    threshold: float
    accepted: bool

    def __bool__(self):
        return self.accepted


@dataclass
class FilterReport:
    pass_no: int
    results: list[FilterResult] = field(default_factory=list)

    @property
    def accepted(self) -> bool:
        return all(r.accepted for r in self.results)

    @property
    def rejected_by(self) -> Optional[str]:
        for r in self.results:
            if not r.accepted:
                return r.name
        return None

    def to_dict(self) -> dict:
        return {"pass": self.pass_no, "accepted": self.accepted,
                "filters": [asdict(r) for r in self.results]}


@dataclass
class CascadeContext:
    scene_image: Optional[np.ndarray] = None
    pattern_image: Optional[np.ndarray] = None
    pose: Optional[object] = None


def vote_count_filter(votes: Sequence[Vote], min_votes: int = 6) -> FilterResult:
    n = len(votes)
    return FilterResult("vote_count", float(n), float(min_votes), n >= min_votes)


def adjacency_sum_filter(votes: Sequence[Vote], min_sum: float = 3.0) -> FilterResult:
    total = math.fsum(v.adjacency for v in votes)
    return FilterResult("adjacency_sum", total, float(min_sum), total >= min_sum)


def scale_variance(votes: Sequence[Vote]) -> float:
    s = np.array([v.rel_scale for v in votes], dtype=float)
    return float(np.mean((s - s.mean()) ** 2))


def scale_variance_filter(votes: Sequence[Vote], max_var: float = 0.05) -> FilterResult:
    if not votes:
        return FilterResult("scale_variance", math.inf, float(max_var), False)
    var = scale_variance(votes)
    return FilterResult("scale_variance", var, float(max_var), var <= max_var)


def _anchor_vote(votes: Sequence[Vote]) -> Vote:
    return min(votes, key=lambda v: (-v.adjacency, v.scene_feature_id, v.pattern_feature_id))


def rotation_buckets(votes: Sequence[Vote]) -> np.ndarray:
    """Bucket index of every vote on a 30-degree grid.

    The grid phase is taken from the strongest vote, which sits at the middle
    of bucket 0, so the histogram turns together with the votes.
    """
    rot = np.array([v.rel_rotation for v in votes], dtype=float)
    width = TWO_PI / ROTATION_BUCKETS
    rel = np.mod(rot - _anchor_vote(votes).rel_rotation + width / 2.0, TWO_PI)
    return np.minimum((rel // width).astype(int), ROTATION_BUCKETS - 1)


def rotation_variance(votes: Sequence[Vote]) -> float:
    """Variance of rotations about their robust circular center.

    The center is the resultant angle of the votes in the three most
    populated buckets; all rotations are turned so that center lands on pi
    and the squared deviations from pi are averaged.
    """
    rot = np.array([v.rel_rotation for v in votes], dtype=float)
    buckets = rotation_buckets(votes)
    counts = np.bincount(buckets, minlength=ROTATION_BUCKETS)
    order = sorted(range(ROTATION_BUCKETS), key=lambda b: (-counts[b], b))
    top = order[:ROTATION_TOP_BUCKETS]
    members = rot[np.isin(buckets, top)]
    mean = math.atan2(np.sin(members).sum(), np.cos(members).sum())
    shifted = np.mod(rot - mean + math.pi, TWO_PI)
    return float(np.mean((shifted - math.pi) ** 2))


def rotation_variance_filter(votes: Sequence[Vote],
                             max_var: float = math.radians(15.0) ** 2) -> FilterResult:
    if not votes:
        return FilterResult("rotation_variance", math.inf, float(max_var), False)
    var = rotation_variance(votes)
    return FilterResult("rotation_variance", var, float(max_var), var <= max_var)


def binary_test_pairs(n: int, tests: int, seed: int) -> np.ndarray:
    """``tests`` ordered index pairs (i, j), i != j, drawn independently."""
    rng = np.random.default_rng(seed)
    i = rng.integers(0, n, size=tests)
    j = rng.integers(0, n - 1, size=tests)
    j = j + (j >= i)
    return np.stack([i, j], axis=1)


def binary_test_bits(scene_lums, pattern_lums, tests: int = 128, seed: int = 0):
    scene_lums = np.asarray(scene_lums)
    pattern_lums = np.asarray(pattern_lums)
    pairs = binary_test_pairs(len(scene_lums), tests, seed)
    scene_bits = scene_lums[pairs[:, 0]] < scene_lums[pairs[:, 1]]
    pattern_bits = pattern_lums[pairs[:, 0]] < pattern_lums[pairs[:, 1]]
    return scene_bits, pattern_bits


def binary_test_filter(votes: Sequence[Vote], tests: int = 128, max_hamming_norm: float = 0.25,
                       seed: int = 0, scene_lums=None, pattern_lums=None) -> FilterResult:
    """Compare luminance orderings of random vote pairs on both images.

    Luminances default to those stored in the votes.
    """
    if len(votes) < 2:
        return FilterResult("binary_test", 1.0, float(max_hamming_norm), False)
    if scene_lums is None:
        scene_lums = [v.scene_lum for v in votes]
    if pattern_lums is None:
        pattern_lums = [v.pattern_lum for v in votes]
    sb, pb = binary_test_bits(scene_lums, pattern_lums, tests, seed)
    dist = float(np.count_nonzero(sb != pb)) / tests
    return FilterResult("binary_test", dist, float(max_hamming_norm), dist <= max_hamming_norm)


def sample_object_patch(scene: np.ndarray, pose, pattern_shape: tuple[int, int],
                        size: int = NCC_PATCH) -> np.ndarray:
    """Resample the pose quad of ``scene`` into a size x size patch.

    Output pixel (i, j) reads the scene where pattern point
    ((j + 0.5) W / size, (i + 0.5) H / size) lands under the pose. Samples
    falling outside the scene are zero.
    """
    h, w = pattern_shape
    u = (np.arange(size) + 0.5) * w / size - w / 2.0
    v = (np.arange(size) + 0.5) * h / size - h / 2.0
    uu, vv = np.meshgrid(u, v)
    c, s = math.cos(pose.rotation), math.sin(pose.rotation)
    x = pose.center[0] + pose.scale * (c * uu - s * vv)
    y = pose.center[1] + pose.scale * (s * uu + c * vv)
    # pixel centers sit at half-integer coordinates
    return ndimage.map_coordinates(scene.astype(float), [y - 0.5, x - 0.5], order=1,
                                   mode="constant", cval=0.0)


def resize_bilinear(image: np.ndarray, size: int = NCC_PATCH) -> np.ndarray:
    h, w = image.shape
    y = (np.arange(size) + 0.5) * h / size - 0.5
    x = (np.arange(size) + 0.5) * w / size - 0.5
    yy, xx = np.meshgrid(y, x, indexing="ij")
    return ndimage.map_coordinates(image.astype(float), [yy, xx], order=1, mode="nearest")


def ncc(a: np.ndarray, b: np.ndarray) -> float:
    """Zero-mean normalised cross correlation; 0 when either side is flat."""
    a = np.asarray(a, dtype=float).ravel()
    b = np.asarray(b, dtype=float).ravel()
    da = a - a.mean()
    db = b - b.mean()
    na = math.sqrt(float(np.dot(da, da)))
    nb = math.sqrt(float(np.dot(db, db)))
    if na == 0.0 or nb == 0.0:
        return 0.0
    return float(np.dot(da, db) / (na * nb))


def ncc_filter(scene_image: np.ndarray, pattern_image: np.ndarray, pose,
               min_ncc: float = 0.3) -> FilterResult:
    patch = sample_object_patch(scene_image, pose, pattern_image.shape)
    ref = resize_bilinear(pattern_image)
    score = ncc(patch, ref)
    return FilterResult("ncc", score, float(min_ncc), score >= min_ncc)


def run_cascade(votes: Sequence[Vote], pass_no: int, config: CascadeConfig,
                context: Optional[CascadeContext] = None) -> FilterReport:
    if pass_no not in PASS_FILTERS:
        raise ValueError(f"pass must be 1 or 2, got {pass_no}")
    names = list(PASS_FILTERS[pass_no])
    if pass_no == 2 and not config.use_ncc:
        names.remove("ncc")
    if "ncc" in names:
        if (context is None or context.scene_image is None or context.pattern_image is None
                or context.pose is None):
            raise CascadeConfigError("pass 2 needs scene image, pattern image and pose")

    report = FilterReport(pass_no)
    for name in names:
        if name == "vote_count":
            res = vote_count_filter(votes, config.min_votes)
        elif name == "adjacency_sum":
            res = adjacency_sum_filter(votes, config.min_adjacency_sum)
        elif name == "scale_variance":
            res = scale_variance_filter(votes, config.max_scale_variance)
        elif name == "rotation_variance":
            res = rotation_variance_filter(votes, config.max_rotation_variance)
        elif name == "binary_test":
            res = binary_test_filter(votes, config.binary_tests, config.max_hamming_norm,
                                     config.rng_seed)
        else:
            res = ncc_filter(context.scene_image, context.pattern_image, context.pose,
                             config.min_ncc)
        report.results.append(res)
        if not res.accepted:
            break
    return report
