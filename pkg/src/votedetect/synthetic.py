"""Ground-truth scenes and detection scoring.

A synthetic scene plants similarity-transformed copies of textured patterns
into a textured background, together with the keypoints an ideal extractor
would return: inliers that mirror pattern keypoints under the instance
transform, and noise keypoints scattered over the scene.

Descriptor distances are set directly. Every scene keypoint derives its
descriptor from one pattern keypoint plus a perturbation of chosen length;
lengths come from target adjacencies at a nominal threshold ``T``
(``dist = T * sqrt(1 - adj)``). A share of the noise is placed beyond ``T``
and the farthest one at ``2T - min_dist`` so the midrange threshold of the
scene lands back on ``T``.
"""
from __future__ import annotations

import math
from dataclasses import asdict, dataclass, field
from typing import Optional, Sequence

import numpy as np
from scipy import ndimage

from .features import FeatureSet, GrayImage, sample_luminance
from .vote_image import point_in_convex_polygon
from .votespace import Keypoint, PatternMeta, wrap_angle

# inlier adjacency is skewed toward the top of its range: hi - (hi - lo) * v**k
INLIER_SKEW = 6


@dataclass
class PatternSpec:
    pattern_id: str
    seed: int
    width: int = 256
    height: int = 192
    n_keypoints: int = 30
    descriptor_length: int = 64


@dataclass
class SyntheticPattern:
    spec: PatternSpec
    features: FeatureSet
    image: GrayImage

    @property
    def meta(self) -> PatternMeta:
        return PatternMeta(self.spec.pattern_id, self.spec.width, self.spec.height)


@dataclass
class PlantedInstance:
    pattern_id: str
    center: tuple[float, float]
    scale: float = 1.0
    rotation: float = 0.0  # radians
    inlier_count: int = 30


@dataclass
class SceneSpec:
    scene_id: str
    width: int
    height: int
    patterns: list[PatternSpec]
    instances: list[PlantedInstance] = field(default_factory=list)
    noise_votes: int = 300
    seed: int = 0
    nominal_threshold: float = 0.5
    inlier_adjacency: tuple[float, float] = (0.6, 1.0)
    noise_adjacency: tuple[float, float] = (0.0, 1.0)
    noise_reject_fraction: float = 0.5
    noise_scale: tuple[float, float] = (1.5, 10.0)
    position_jitter: float = 0.3
    scale_jitter: float = 0.01
    rotation_jitter_deg: float = 0.5
    hue: bool = True
    hue_jitter_deg: float = 10.0
    bridges: list[tuple[int, int]] = field(default_factory=list)
    bridge_spacing: float = 2.0
    bridge_adjacency: tuple[float, float] = (0.1, 0.3)

    def to_dict(self) -> dict:
        return asdict(self)

    @classmethod
    def from_dict(cls, data: dict) -> "SceneSpec":
        data = dict(data)
        data["patterns"] = [PatternSpec(**p) for p in data["patterns"]]
        data["instances"] = [
            PlantedInstance(**{**i, "center": tuple(i["center"])}) for i in data.get("instances", [])
        ]
        for key in ("inlier_adjacency", "noise_adjacency", "noise_scale", "bridge_adjacency"):
            if key in data:
                data[key] = tuple(data[key])
        data["bridges"] = [tuple(b) for b in data.get("bridges", [])]
        return cls(**data)


@dataclass
class GroundTruth:
    pattern_id: str
    center: tuple[float, float]
    scale: float
    rotation: float
    pattern_diagonal: float
    quad: list[tuple[float, float]]
    inlier_ids: list[int]  # indices into the scene feature set

    def to_dict(self) -> dict:
        d = asdict(self)
        d["rotation_deg"] = math.degrees(d.pop("rotation"))
        return d


@dataclass
class GeneratedScene:
    spec: SceneSpec
    features: FeatureSet
    image: GrayImage
    patterns: dict[str, SyntheticPattern]
    truth: list[GroundTruth]


def texture(rng: np.random.Generator, height: int, width: int, sigma: float,
            lo: float = 20.0, hi: float = 235.0) -> np.ndarray:
    """Smooth random texture stretched to [lo, hi]."""
    t = ndimage.gaussian_filter(rng.random((height, width)), sigma, mode="wrap")
    t = (t - t.min()) / max(t.max() - t.min(), 1e-12)
    return lo + (hi - lo) * t


def make_pattern(spec: PatternSpec) -> SyntheticPattern:
    rng = np.random.default_rng(spec.seed)
    img = np.round(texture(rng, spec.height, spec.width, sigma=5.0)).astype(np.uint8)
    margin = 8.0
    kps = []
    for _ in range(spec.n_keypoints):
        x = rng.uniform(margin, spec.width - margin)
        y = rng.uniform(margin, spec.height - margin)
        kps.append(Keypoint(
            x=float(x), y=float(y),
            scale=float(rng.uniform(2.0, 8.0)),
            orientation=float(rng.uniform(0.0, 2 * math.pi)),
            descriptor=tuple(float(d) for d in rng.random(spec.descriptor_length)),
            luminance=sample_luminance(img, x, y),
            hue=float(rng.uniform(0.0, 360.0)),
        ))
    fs = FeatureSet(spec.pattern_id, spec.width, spec.height, kps)
    return SyntheticPattern(spec, fs, GrayImage(img))


def similarity(center, scale, rotation, pattern_center):
    """Map pattern points into the scene for one planted instance."""
    c, s = math.cos(rotation), math.sin(rotation)
    pcx, pcy = pattern_center

    def f(x, y):
        u, v = x - pcx, y - pcy
        return (center[0] + scale * (c * u - s * v), center[1] + scale * (s * u + c * v))

    return f


def instance_quad(inst: PlantedInstance, meta: PatternMeta) -> list[tuple[float, float]]:
    f = similarity(inst.center, inst.scale, inst.rotation, meta.center)
    return [f(0.0, 0.0), f(meta.width, 0.0), f(meta.width, meta.height), f(0.0, meta.height)]


def render_instance(scene: np.ndarray, pattern: np.ndarray, inst: PlantedInstance,
                    meta: PatternMeta) -> None:
    """Paint the warped pattern into ``scene`` in place (bilinear, inverse map)."""
    quad = np.array(instance_quad(inst, meta))
    h, w = scene.shape
    c0 = max(0, int(math.floor(quad[:, 0].min())))
    c1 = min(w, int(math.ceil(quad[:, 0].max())) + 1)
    r0 = max(0, int(math.floor(quad[:, 1].min())))
    r1 = min(h, int(math.ceil(quad[:, 1].max())) + 1)
    if c0 >= c1 or r0 >= r1:
        return
    rr, cc = np.mgrid[r0:r1, c0:c1]
    xs, ys = cc + 0.5, rr + 0.5
    inside = point_in_convex_polygon(xs, ys, quad)
    c, s = math.cos(inst.rotation), math.sin(inst.rotation)
    dx, dy = xs - inst.center[0], ys - inst.center[1]
    u = (c * dx + s * dy) / inst.scale + meta.center[0]
    v = (-s * dx + c * dy) / inst.scale + meta.center[1]
    vals = ndimage.map_coordinates(pattern.astype(float), [v - 0.5, u - 0.5], order=1,
                                   mode="nearest")
    block = scene[r0:r1, c0:c1]
    block[inside] = vals[inside]


def _perturbed(rng, base: Sequence[float], dist: float) -> tuple:
    d = rng.standard_normal(len(base))
    d /= np.linalg.norm(d)
    return tuple(float(b) for b in np.asarray(base) + dist * d)


def _inlier_adjacency(rng, lo, hi, n):
    return hi - (hi - lo) * rng.random(n) ** INLIER_SKEW


def generate(spec: SceneSpec) -> GeneratedScene:
    rng = np.random.default_rng(spec.seed)
    patterns = {p.pattern_id: make_pattern(p) for p in spec.patterns}
    T = spec.nominal_threshold

    for k, inst in enumerate(spec.instances):
        if inst.pattern_id not in patterns:
            raise ValueError(f"instance {k}: unknown pattern {inst.pattern_id!r}")
        if not (0 <= inst.center[0] < spec.width and 0 <= inst.center[1] < spec.height):
            raise ValueError(f"instance {k}: center {inst.center} outside the scene")
        if inst.inlier_count < 1 or inst.inlier_count > patterns[inst.pattern_id].spec.n_keypoints:
            raise ValueError(f"instance {k}: inlier_count must be in [1, n_keypoints]")

    empty = not spec.instances and spec.noise_votes == 0
    if empty:
        scene = np.full((spec.height, spec.width), 128.0)
    else:
        scene = texture(rng, spec.height, spec.width, sigma=8.0, lo=30.0, hi=220.0)
    for inst in spec.instances:
        p = patterns[inst.pattern_id]
        render_instance(scene, p.image.pixels, inst, p.meta)
    pixels = np.clip(np.round(scene), 0, 255).astype(np.uint8)

    # (x, y, scale, orientation, source pattern kp, distance, hue) before luminance
    raw: list[tuple] = []
    truth: list[GroundTruth] = []
    rot_jit = math.radians(spec.rotation_jitter_deg)

    for inst in spec.instances:
        p = patterns[inst.pattern_id]
        f = similarity(inst.center, inst.scale, inst.rotation, p.meta.center)
        chosen = rng.choice(p.spec.n_keypoints, size=inst.inlier_count, replace=False)
        adj = _inlier_adjacency(rng, *spec.inlier_adjacency, inst.inlier_count)
        ids = []
        for j, a in zip(chosen, adj):
            pk = p.features.keypoints[j]
            x, y = f(pk.x, pk.y)
            x += rng.normal(0.0, spec.position_jitter)
            y += rng.normal(0.0, spec.position_jitter)
            scale = pk.scale * inst.scale * math.exp(rng.normal(0.0, spec.scale_jitter))
            orient = pk.orientation + inst.rotation + rng.normal(0.0, rot_jit)
            hue = (pk.hue + rng.normal(0.0, spec.hue_jitter_deg)) % 360.0
            ids.append(len(raw))
            raw.append((x, y, scale, orient, (inst.pattern_id, int(j)), T * math.sqrt(1 - a), hue))
        truth.append(GroundTruth(inst.pattern_id, tuple(map(float, inst.center)),
                                 float(inst.scale), wrap_angle(inst.rotation),
                                 p.meta.diagonal, instance_quad(inst, p.meta), ids))

    for a_idx, b_idx in spec.bridges:
        _add_bridge(rng, raw, spec, patterns, a_idx, b_idx, truth)

    noise_src = sorted({i.pattern_id for i in spec.instances}) or sorted(patterns)
    n_far = int(round(spec.noise_votes * spec.noise_reject_fraction))
    lo_n, hi_n = spec.noise_adjacency
    for k in range(spec.noise_votes):
        pid = noise_src[int(rng.integers(len(noise_src)))]
        j = int(rng.integers(patterns[pid].spec.n_keypoints))
        if k < n_far:
            dist = T * rng.uniform(1.0, 2.0)
        else:
            dist = T * math.sqrt(1.0 - rng.uniform(lo_n, hi_n))
        raw.append((rng.uniform(0, spec.width), rng.uniform(0, spec.height),
                    rng.uniform(*spec.noise_scale), rng.uniform(0, 2 * math.pi), (pid, j),
                    dist, rng.uniform(0.0, 360.0)))
    if n_far:
        # the farthest noise keypoint pins the midrange threshold to T
        start = len(raw) - spec.noise_votes
        r_min = min(r[5] for r in raw)
        far = max(range(start, start + n_far), key=lambda i: raw[i][5])
        raw[far] = raw[far][:5] + (2 * T - r_min,) + raw[far][6:]

    kps = []
    for x, y, scale, orient, (pid, j), dist, hue in raw:
        base = patterns[pid].features.keypoints[j].descriptor
        kps.append(Keypoint(
            x=float(x), y=float(y), scale=float(scale), orientation=wrap_angle(orient),
            descriptor=_perturbed(rng, base, dist),
            luminance=sample_luminance(pixels, x, y),
            hue=float(hue) if spec.hue else None,
        ))
    if not spec.hue:
        for p in patterns.values():
            p.features.keypoints = [_strip_hue(kp) for kp in p.features.keypoints]
    features = FeatureSet(spec.scene_id, spec.width, spec.height, kps)
    return GeneratedScene(spec, features, GrayImage(pixels), patterns, truth)


def _strip_hue(kp: Keypoint) -> Keypoint:
    return Keypoint(kp.x, kp.y, kp.scale, kp.orientation, kp.descriptor, kp.luminance, None)


def _add_bridge(rng, raw, spec, patterns, a_idx, b_idx, truth):
    """Weak coherent votes on the segment joining two instance centers.

    Each bridge vote reuses a pattern feature of the nearer instance at a
    lower adjacency than that instance's inliers, so it only links the two
    vote blobs on the vote image.
    """
    T = spec.nominal_threshold
    ia, ib = spec.instances[a_idx], spec.instances[b_idx]
    (ax, ay), (bx, by) = ia.center, ib.center
    length = math.hypot(bx - ax, by - ay)
    steps = max(1, int(length // spec.bridge_spacing))
    for k in range(1, steps):
        t = k / steps
        qx, qy = ax + t * (bx - ax), ay + t * (by - ay)
        owner_idx = a_idx if t <= 0.5 else b_idx
        inst = spec.instances[owner_idx]
        p = patterns[inst.pattern_id]
        inlier_feats = [raw[i][4][1] for i in truth[owner_idx].inlier_ids]
        j = int(inlier_feats[int(rng.integers(len(inlier_feats)))])
        pk = p.features.keypoints[j]
        c, s = math.cos(inst.rotation), math.sin(inst.rotation)
        ox, oy = p.meta.center[0] - pk.x, p.meta.center[1] - pk.y
        x = qx - inst.scale * (c * ox - s * oy)
        y = qy - inst.scale * (s * ox + c * oy)
        a = rng.uniform(*spec.bridge_adjacency)
        raw.append((x, y, pk.scale * inst.scale, pk.orientation + inst.rotation,
                    (inst.pattern_id, j), T * math.sqrt(1 - a), pk.hue))


# -- scoring -----------------------------------------------------------------

@dataclass
class MatchCriteria:
    radius_fraction: float = 0.25  # of the scaled pattern diagonal
    scale_tol: float = 1.3  # multiplicative, both ways
    rot_tol_deg: float = 20.0


@dataclass
class ProcessOutcome:
    process_id: str
    pattern_id: str
    occurrences: list[dict]
    truths: list[GroundTruth]


@dataclass
class ProcessScore:
    process_id: str
    pattern_id: str
    true_detections: list[int]
    false_detections: list[int]
    matched_truths: list[int]
    instances: int


@dataclass
class EvalResult:
    processes: list[ProcessScore]
    detection_rate: float
    false_detection_chance: float
    avg_false_detections: float
    total_instances: int
    matched_instances: int
    total_false: int
    processes_with_false: int

    def to_dict(self) -> dict:
        return asdict(self)

    def summary_table(self) -> str:
        rows = [
            ("Detection rate", f"{100 * self.detection_rate:.2f}%"),
            ("False detection chance", f"{100 * self.false_detection_chance:.2f}%"),
            ("Average number of false detections", f"{self.avg_false_detections:.2f}"),
        ]
        width = max(len(r[0]) for r in rows)
        lines = [f"{'Metric'.ljust(width)} | Value", f"{'-' * width}-+-------"]
        lines += [f"{name.ljust(width)} | {value}" for name, value in rows]
        lines.append("")
        lines.append(f"processes: {len(self.processes)}, with false detections: "
                     f"{self.processes_with_false}, false detections: {self.total_false}, "
                     f"instances matched: {self.matched_instances}/{self.total_instances}")
        return "\n".join(lines) + "\n"


def _angle_diff_deg(a_deg: float, b_deg: float) -> float:
    d = abs(a_deg - b_deg) % 360.0
    return min(d, 360.0 - d)


def score_process(outcome: ProcessOutcome, criteria: MatchCriteria) -> ProcessScore:
    truths = [t for t in outcome.truths if t.pattern_id == outcome.pattern_id]
    order = sorted(range(len(outcome.occurrences)),
                   key=lambda i: (-outcome.occurrences[i]["adjacency_sum"],
                                  outcome.occurrences[i]["pattern_id"], i))
    claimed: set[int] = set()
    true_ids, false_ids = [], []
    for i in order:
        occ = outcome.occurrences[i]
        best, best_d = None, math.inf
        for k, t in enumerate(truths):
            if k in claimed or t.pattern_id != occ["pattern_id"]:
                continue
            d = math.hypot(occ["center"][0] - t.center[0], occ["center"][1] - t.center[1])
            ratio = occ["scale"] / t.scale
            if (d <= criteria.radius_fraction * t.scale * t.pattern_diagonal
                    and 1.0 / criteria.scale_tol <= ratio <= criteria.scale_tol
                    and _angle_diff_deg(occ["rotation_deg"], math.degrees(t.rotation))
                    <= criteria.rot_tol_deg
                    and d < best_d):
                best, best_d = k, d
        if best is None:
            false_ids.append(i)
        else:
            claimed.add(best)
            true_ids.append(i)
    return ProcessScore(outcome.process_id, outcome.pattern_id, sorted(true_ids),
                        sorted(false_ids), sorted(claimed), len(truths))


def proposition_coverage(propositions, truths: Sequence[GroundTruth], radius: float) -> list[bool]:
    """Whether each planted instance has a proposition within ``radius``."""
    return [any(math.hypot(p.position[0] - t.center[0], p.position[1] - t.center[1]) <= radius
                for p in propositions)
            for t in truths]


def evaluate(outcomes: Sequence[ProcessOutcome],
             criteria: Optional[MatchCriteria] = None) -> EvalResult:
    """Detection rate (per instance), false detection chance (per process)
    and average false detections over processes that had any."""
    criteria = criteria or MatchCriteria()
    scores = [score_process(o, criteria) for o in outcomes]
    total_inst = sum(s.instances for s in scores)
    matched = sum(len(s.matched_truths) for s in scores)
    total_false = sum(len(s.false_detections) for s in scores)
    with_false = sum(1 for s in scores if s.false_detections)
    return EvalResult(
        processes=scores,
        detection_rate=matched / total_inst if total_inst else 0.0,
        false_detection_chance=with_false / len(scores) if scores else 0.0,
        avg_false_detections=total_false / with_false if with_false else 0.0,
        total_instances=total_inst,
        matched_instances=matched,
        total_false=total_false,
        processes_with_false=with_false,
    )


# -- suites ------------------------------------------------------------------

DEFAULT_PATTERNS = (PatternSpec("A", seed=1001), PatternSpec("B", seed=1002))


def place_instances(rng, width, height, meta: PatternMeta, count, scale_range=(0.8, 1.25),
                    inlier_count=30, max_tries=10000) -> list[PlantedInstance]:
    """Instances fully inside the scene, centers farther apart than the larger
    scaled pattern diagonal."""
    placed: list[PlantedInstance] = []
    tries = 0
    while len(placed) < count:
        tries += 1
        if tries > max_tries:
            raise RuntimeError("could not place instances; scene too small")
        s = float(rng.uniform(*scale_range))
        half = s * meta.diagonal / 2.0
        if 2 * half >= min(width, height):
            continue
        cx, cy = float(rng.uniform(half, width - half)), float(rng.uniform(half, height - half))
        if all(math.hypot(cx - p.center[0], cy - p.center[1]) > max(s, p.scale) * meta.diagonal
               for p in placed):
            placed.append(PlantedInstance(meta.pattern_id, (cx, cy), s,
                                          float(rng.uniform(0, 2 * math.pi)), inlier_count))
    return placed


def default_suite(n_scenes: int = 20, base_seed: int = 1, instances: int = 5,
                  noise_votes: int = 300, width: int = 2048, height: int = 1536) -> list[SceneSpec]:
    """Scenes with ``instances`` copies of pattern A; pattern B is a decoy
    searched in every scene but never planted."""
    specs = []
    meta = PatternMeta("A", DEFAULT_PATTERNS[0].width, DEFAULT_PATTERNS[0].height)
    for k in range(n_scenes):
        seed = base_seed + k
        rng = np.random.default_rng([seed, 7])
        inst = place_instances(rng, width, height, meta, instances)
        specs.append(SceneSpec(scene_id=f"scene{seed:03d}", width=width, height=height,
                               patterns=[PatternSpec(**asdict(p)) for p in DEFAULT_PATTERNS],
                               instances=inst, noise_votes=noise_votes, seed=seed))
    return specs


def adjacent_pair_spec(seed: int, gap_fraction: float = 0.05) -> SceneSpec:
    """Two side-by-side instances of one pattern whose vote blobs are joined
    by a bridge of weak coherent votes."""
    rng = np.random.default_rng([seed, 11])
    p = DEFAULT_PATTERNS[0]
    rot = float(rng.uniform(0, 2 * math.pi))
    s = float(rng.uniform(0.9, 1.1))
    sep = (1.0 + gap_fraction) * p.width * s
    cx, cy = 512.0 + rng.uniform(-20, 20), 384.0 + rng.uniform(-20, 20)
    dx, dy = 0.5 * sep * math.cos(rot), 0.5 * sep * math.sin(rot)
    instances = [PlantedInstance("A", (cx - dx, cy - dy), s, rot, 30),
                 PlantedInstance("A", (cx + dx, cy + dy), s, rot, 30)]
    return SceneSpec(scene_id=f"pair{seed:03d}", width=1024, height=768,
                     patterns=[PatternSpec(**asdict(p))], instances=instances,
                     noise_votes=20, noise_reject_fraction=1.0, seed=seed, bridges=[(0, 1)])
