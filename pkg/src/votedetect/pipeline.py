"""One detection process: a pattern searched in a scene, end to end."""
from __future__ import annotations

import logging
from dataclasses import dataclass
from typing import Optional

import numpy as np

from .aggregation import Occurrence, detect
from .config import RunConfig
from .features import FeatureSet, match
from .vote_image import Proposition, VoteImage, find_propositions, rasterize, smooth
from .votespace import PatternMeta, VoteSpace, build_vote_space

log = logging.getLogger(__name__)


@dataclass
class ProcessResult:
    pattern_id: str
    occurrences: list[Occurrence]
    propositions: list[Proposition]
    vote_space: VoteSpace
    smoothed_votes: np.ndarray  # smoothed vote image before any erasure
    trace: list[dict]


def pattern_meta(pattern: FeatureSet, pattern_image: Optional[np.ndarray] = None) -> PatternMeta:
    if pattern_image is not None:
        h, w = pattern_image.shape
    else:
        w, h = pattern.width, pattern.height
    if not (w and h):
        raise ValueError(f"pattern {pattern.image_id!r} has no dimensions; give its image")
    if not 256 <= max(w, h) <= 512:
        log.warning("pattern %s: larger side %d outside the usual [256, 512]", pattern.image_id,
                    max(w, h))
    return PatternMeta(pattern.image_id, int(w), int(h))


def build_votes(pattern: FeatureSet, scene: FeatureSet, meta: PatternMeta,
                config: RunConfig) -> tuple[VoteSpace, VoteImage]:
    corrs = match(pattern, scene, config.metric)
    if not (scene.width and scene.height):
        raise ValueError(f"scene {scene.image_id!r} has no dimensions; give its image")
    vs = build_vote_space(pattern.keypoints, scene.keypoints, corrs, meta,
                          (scene.width, scene.height), config.hue_max_diff)
    return vs, rasterize(vs, config.bin_size)


def run_process(pattern: FeatureSet, scene: FeatureSet, config: RunConfig,
                pattern_image: Optional[np.ndarray] = None,
                scene_image: Optional[np.ndarray] = None) -> ProcessResult:
    meta = pattern_meta(pattern, pattern_image)
    if scene_image is not None and not (scene.width and scene.height):
        h, w = scene_image.shape
        scene = FeatureSet(scene.image_id, w, h, scene.keypoints)
    if not pattern.keypoints:
        log.warning("pattern %s has no keypoints; nothing to detect", meta.pattern_id)
    vs, vi = build_votes(pattern, scene, meta, config)
    smoothed = smooth(vi, config.smooth_radius)
    props = find_propositions(vi, config.t_min, config.nms_radius, config.max_props,
                              config.smooth_radius)
    trace: list[dict] = []
    occs = detect(vs, vi, props, meta, config.detection_config(), scene_image=scene_image,
                  pattern_image=pattern_image, trace=trace)
    return ProcessResult(meta.pattern_id, occs, props, vs, smoothed, trace)


def run_scene(spec, config: RunConfig):
    """Generate one synthetic scene and search every pattern it lists.

    Returns the generated scene and ``(process_id, ProcessResult)`` pairs.
    """
    from .synthetic import generate

    scene = generate(spec)
    out = []
    for pid, pat in scene.patterns.items():
        res = run_process(pat.features, scene.features, config, pat.image.pixels,
                          scene.image.pixels)
        out.append((f"{spec.scene_id}/{pid}", res))
    return scene, out
