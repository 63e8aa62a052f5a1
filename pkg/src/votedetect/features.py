"""Feature sets, correspondences, grayscale images and brute-force matching.

Keypoint files are JSON Lines. An optional first line
``{"header": {"image_id": ..., "width": ..., "height": ...}}`` carries the
image metadata; every other non-blank line is one keypoint.
"""
from __future__ import annotations

import json
import logging
import math
import re
from dataclasses import dataclass, field
from pathlib import Path
from typing import Optional, Sequence

import numpy as np

from .votespace import Correspondence, Keypoint, wrap_angle

log = logging.getLogger(__name__)

KEYPOINT_FIELDS = ("x", "y", "scale", "orientation", "luminance", "descriptor")
METRICS = ("l2", "l1", "hamming")


class FormatError(ValueError):
    pass


@dataclass
class FeatureSet:
    image_id: str
    width: int
    height: int
    keypoints: list[Keypoint] = field(default_factory=list)

    def __len__(self):
        return len(self.keypoints)

    @property
    def descriptor_length(self) -> Optional[int]:
        return len(self.keypoints[0].descriptor) if self.keypoints else None

    def descriptors(self) -> np.ndarray:
        if not self.keypoints:
            return np.zeros((0, 0))
        return np.array([kp.descriptor for kp in self.keypoints], dtype=float)


@dataclass
class GrayImage:
    pixels: np.ndarray  # (height, width) uint8

    def __post_init__(self):
        self.pixels = np.asarray(self.pixels, dtype=np.uint8)
        if self.pixels.ndim != 2:
            raise ValueError("gray image must be two dimensional")

    @property
    def width(self) -> int:
        return self.pixels.shape[1]

    @property
    def height(self) -> int:
        return self.pixels.shape[0]


def _keypoint_from_record(rec: dict, lineno: int) -> Keypoint:
    if not isinstance(rec, dict):
        raise FormatError(f"line {lineno}: expected a JSON object")
    for name in KEYPOINT_FIELDS:
        if name not in rec:
            raise FormatError(f"line {lineno}: missing field '{name}'")
    try:
        hue = rec.get("hue")
        kp = Keypoint(
            x=float(rec["x"]),
            y=float(rec["y"]),
            scale=float(rec["scale"]),
            orientation=wrap_angle(float(rec["orientation"])),
            descriptor=tuple(float(d) for d in rec["descriptor"]),
            luminance=int(rec["luminance"]),
            hue=None if hue is None else float(hue) % 360.0,
        )
    except (TypeError, ValueError) as exc:
        raise FormatError(f"line {lineno}: {exc}") from None
    if not 0 <= kp.luminance <= 255:
        raise FormatError(f"line {lineno}: luminance {kp.luminance} outside [0, 255]")
    return kp


def parse_feature_set(text: str, image_id: str = "") -> FeatureSet:
    fs = FeatureSet(image_id=image_id, width=0, height=0)
    dlen = None
    for lineno, line in enumerate(text.splitlines(), start=1):
        if not line.strip():
            continue
        try:
            rec = json.loads(line)
        except json.JSONDecodeError as exc:
            raise FormatError(f"line {lineno}: invalid JSON ({exc.msg})") from None
        if isinstance(rec, dict) and "header" in rec:
            if fs.keypoints:
                raise FormatError(f"line {lineno}: header must precede keypoints")
            hdr = rec["header"]
            fs.image_id = str(hdr.get("image_id", fs.image_id))
            fs.width = int(hdr.get("width", 0))
            fs.height = int(hdr.get("height", 0))
            continue
        kp = _keypoint_from_record(rec, lineno)
        if dlen is None:
            dlen = len(kp.descriptor)
        elif len(kp.descriptor) != dlen:
            raise FormatError(f"line {lineno}: descriptor length {len(kp.descriptor)} "
                              f"differs from {dlen}")
        fs.keypoints.append(kp)
    if fs.width and fs.height:
        outside = sum(1 for kp in fs.keypoints
                      if not (0 <= kp.x <= fs.width and 0 <= kp.y <= fs.height))
        if outside:
            log.warning("%s: %d keypoints lie outside the %dx%d image", fs.image_id or "features",
                        outside, fs.width, fs.height)
    return fs


def load_feature_set(path) -> FeatureSet:
    path = Path(path)
    return parse_feature_set(path.read_text(), image_id=path.stem)


def format_feature_set(fs: FeatureSet) -> str:
    lines = [json.dumps({"header": {"image_id": fs.image_id, "width": fs.width,
                                    "height": fs.height}})]
    for kp in fs.keypoints:
        rec = {"x": kp.x, "y": kp.y, "scale": kp.scale, "orientation": kp.orientation,
               "luminance": kp.luminance, "hue": kp.hue, "descriptor": list(kp.descriptor)}
        lines.append(json.dumps(rec))
    return "\n".join(lines) + "\n"


def save_feature_set(fs: FeatureSet, path) -> None:
    Path(path).write_text(format_feature_set(fs))


def load_correspondences(path) -> list[Correspondence]:
    out = []
    for lineno, line in enumerate(Path(path).read_text().splitlines(), start=1):
        if not line.strip():
            continue
        try:
            rec = json.loads(line)
            out.append(Correspondence(int(rec["pattern_feature_id"]),
                                      int(rec["scene_feature_id"]), float(rec["distance"])))
        except (json.JSONDecodeError, KeyError, TypeError, ValueError) as exc:
            raise FormatError(f"line {lineno}: bad correspondence record ({exc})") from None
    return out


def format_correspondences(corrs: Sequence[Correspondence]) -> str:
    return "".join(json.dumps({"pattern_feature_id": c.pattern_feature_id,
                               "scene_feature_id": c.scene_feature_id,
                               "distance": c.distance}) + "\n" for c in corrs)


def save_correspondences(corrs: Sequence[Correspondence], path) -> None:
    Path(path).write_text(format_correspondences(corrs))


_POPCOUNT = np.array([bin(i).count("1") for i in range(256)], dtype=np.int64)


def _as_bytes(desc: np.ndarray) -> np.ndarray:
    b = np.asarray(desc)
    if b.size and (np.any(b != np.round(b)) or b.min() < 0 or b.max() > 255):
        raise ValueError("hamming metric needs descriptors of integer bytes in [0, 255]")
    return b.astype(np.uint8)


def pairwise_distances(a: np.ndarray, b: np.ndarray, metric: str = "l2") -> np.ndarray:
    """Distances between the rows of ``a`` (n, d) and ``b`` (m, d)."""
    if metric == "l2":
        return np.sqrt(((a[:, None, :] - b[None, :, :]) ** 2).sum(axis=2))
    if metric == "l1":
        return np.abs(a[:, None, :] - b[None, :, :]).sum(axis=2)
    if metric == "hamming":
        x = _as_bytes(a)[:, None, :] ^ _as_bytes(b)[None, :, :]
        return _POPCOUNT[x].sum(axis=2).astype(float)
    raise ValueError(f"unknown metric {metric!r}; expected one of {METRICS}")


def match(pattern: FeatureSet, scene: FeatureSet, metric: str = "l2",
          chunk: int = 256) -> list[Correspondence]:
    """Nearest pattern keypoint for every scene keypoint (exhaustive scan).

    Ties go to the lower pattern index.
    """
    if metric not in METRICS:
        raise ValueError(f"unknown metric {metric!r}; expected one of {METRICS}")
    if not pattern.keypoints or not scene.keypoints:
        return []
    pl, sl = pattern.descriptor_length, scene.descriptor_length
    if pl != sl:
        raise ValueError(f"descriptor length mismatch: pattern {pl}, scene {sl}")
    pd = pattern.descriptors()
    sd = scene.descriptors()
    out: list[Correspondence] = []
    for start in range(0, len(sd), chunk):
        d = pairwise_distances(sd[start:start + chunk], pd, metric)
        nn = np.argmin(d, axis=1)  # first minimum = lowest index
        for k, j in enumerate(nn):
            out.append(Correspondence(int(j), start + k, float(d[k, j])))
    return out


_PGM_HEADER = re.compile(rb"\A(P\d)(?:\s|#[^\n]*\n)+(\d+)(?:\s|#[^\n]*\n)+(\d+)"
                         rb"(?:\s|#[^\n]*\n)+(\d+)\s")


def parse_pgm(data: bytes) -> GrayImage:
    if data[:2] in (b"P2", b"P6", b"P3", b"P1", b"P4"):
        raise FormatError(f"unsupported PNM format {data[:2].decode()}; only P5 is read")
    m = _PGM_HEADER.match(data)
    if not m or m.group(1) != b"P5":
        raise FormatError("not a binary PGM (P5) file")
    width, height, maxval = (int(m.group(i)) for i in (2, 3, 4))
    if maxval != 255:
        raise FormatError(f"unsupported maxval {maxval}; only 255 is read")
    body = data[m.end():]
    need = width * height
    if len(body) < need:
        raise FormatError(f"truncated PGM body: {len(body)} of {need} bytes")
    pixels = np.frombuffer(body[:need], dtype=np.uint8).reshape(height, width).copy()
    return GrayImage(pixels)


def load_pgm(path) -> GrayImage:
    return parse_pgm(Path(path).read_bytes())


def format_pgm(image: GrayImage) -> bytes:
    header = f"P5\n{image.width} {image.height}\n255\n".encode()
    return header + np.ascontiguousarray(image.pixels, dtype=np.uint8).tobytes()


def save_pgm(image: GrayImage, path) -> None:
    Path(path).write_bytes(format_pgm(image))


def sample_luminance(pixels: np.ndarray, x: float, y: float) -> int:
    """Pixel value under continuous point (x, y); pixel centers at +0.5."""
    h, w = pixels.shape
    c = min(max(int(math.floor(x)), 0), w - 1)
    r = min(max(int(math.floor(y)), 0), h - 1)
    return int(pixels[r, c])
