"""Detection of the two chin-mount marker keypoints plus dataset tooling.

The reference detector finds the markers as the two largest color blobs
in an HSV band and reports the upper-left corner of each, refined to
subpixel. Any learned model can replace it by satisfying the
``DetectorBackend`` protocol. The tooling half of the module carries the
keypoint-aware augmentation used to grow a training set, and the MAE
evaluation used to score a backend against hand-labeled truth.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable, Protocol, Sequence

import numpy as np
from scipy import ndimage

from .errors import AmbiguousBlobs, FewerThanTwoBlobs, KeypointOutOfBounds, LengthMismatch
from .frames import FrameDims, ImageFrame, PixelFormat
from . import kernels

# 8-connectivity for blob labeling
_LABEL_STRUCTURE = np.ones((3, 3), dtype=bool)


@dataclass(frozen=True)
class KeypointPair:
    """Subpixel positions of the two marker corners, canonically ordered.

    m1 is the keypoint with the smaller x (ties broken by smaller y).
    """

    m1: tuple[float, float]
    m2: tuple[float, float]
    confidence: float = 1.0

    def __post_init__(self):
        if not 0.0 <= self.confidence <= 1.0:
            raise ValueError(f"confidence {self.confidence} outside [0, 1]")
        if (self.m1[0], self.m1[1]) > (self.m2[0], self.m2[1]):
            raise ValueError(f"keypoints not canonically ordered: {self.m1} vs {self.m2}")

    @classmethod
    def ordered(cls, a: tuple[float, float], b: tuple[float, float],
                confidence: float = 1.0) -> "KeypointPair":
        """Build a pair, sorting the two points into canonical order."""
        if (a[0], a[1]) <= (b[0], b[1]):
            return cls(a, b, confidence)
        return cls(b, a, confidence)

    def in_bounds(self, dims: FrameDims) -> bool:
        return all(0 <= x < dims.width and 0 <= y < dims.height
                   for x, y in (self.m1, self.m2))

    def separation(self) -> float:
        return math.hypot(self.m2[0] - self.m1[0], self.m2[1] - self.m1[1])


@dataclass(frozen=True)
class ColorBlobConfig:
    """HSV band and blob-size limits for the reference detector.

    Hue is in degrees [0, 360); saturation and value in [0, 1]. The
    defaults bracket the orange of the physical markers but are expected
    to be tuned per camera in the pipeline config.
    """

    hue_lo: float = 10.0
    hue_hi: float = 50.0
    sat_min: float = 0.45
    val_min: float = 0.35
    min_area: int = 40
    expected_area: int = 400

    def to_dict(self) -> dict:
        return {
            "hue_lo": self.hue_lo, "hue_hi": self.hue_hi,
            "sat_min": self.sat_min, "val_min": self.val_min,
            "min_area": self.min_area, "expected_area": self.expected_area,
        }

    @classmethod
    def from_dict(cls, d: dict) -> "ColorBlobConfig":
        return cls(**{k: d[k] for k in cls().to_dict() if k in d})


class DetectorBackend(Protocol):
    """Contract every marker detector satisfies: deterministic for a fixed
    frame and configuration."""

    name: str

    def detect(self, frame: ImageFrame) -> KeypointPair: ...


def hsv_mask(img: np.ndarray, config: ColorBlobConfig) -> np.ndarray:
    """Boolean mask of pixels inside the configured HSV band."""
    return kernels.color_mask(np.ascontiguousarray(img), config.hue_lo,
                              config.hue_hi, config.sat_min, config.val_min)


def _refine_corner(cx: int, cy: int, blob: np.ndarray, img: np.ndarray) -> tuple[float, float]:
    """Subpixel corner: intensity-weighted centroid of the in-blob pixels
    in the 3x3 neighborhood around the integer bbox corner."""
    h, w = blob.shape
    y0, y1 = max(cy - 1, 0), min(cy + 2, h)
    x0, x1 = max(cx - 1, 0), min(cx + 2, w)
    win = blob[y0:y1, x0:x1]
    val = img[y0:y1, x0:x1].max(axis=2).astype(np.float32) / np.float32(255.0)
    weights = val * win
    total = float(weights.sum())
    if total <= 0.0:
        return float(cx), float(cy)
    ys, xs = np.mgrid[y0:y1, x0:x1]
    return (float((weights * xs).sum() / total), float((weights * ys).sum() / total))


def detect_markers(frame: ImageFrame, config: ColorBlobConfig) -> KeypointPair:
    """Locate the two marker keypoints in an RGB frame.

    The two largest blobs inside the HSV band (area >= min_area) are the
    markers; each keypoint is the blob bounding box's upper-left corner
    refined to subpixel. Raises FewerThanTwoBlobs when occlusion leaves
    fewer than two candidates and AmbiguousBlobs when a third blob rivals
    the second (area >= 0.8x), signalling background interference.
    """
    if frame.pixel_format is not PixelFormat.RGB8:
        raise ValueError("detect_markers expects an RGB8 frame")
    img = frame.pixels
    mask = hsv_mask(img, config)

    labels, n = ndimage.label(mask, structure=_LABEL_STRUCTURE)
    if n < 2:
        raise FewerThanTwoBlobs(f"found {n} candidate blobs")
    areas = np.bincount(labels.ravel())
    areas[0] = 0
    qualifying = np.flatnonzero(areas >= config.min_area)
    if len(qualifying) < 2:
        raise FewerThanTwoBlobs(f"found {len(qualifying)} blobs of area >= {config.min_area}")
    order = qualifying[np.argsort(areas[qualifying])[::-1]]
    if len(order) >= 3 and areas[order[2]] >= 0.8 * areas[order[1]]:
        raise AmbiguousBlobs(
            f"third blob area {areas[order[2]]} >= 0.8 x {areas[order[1]]}")

    corners = []
    for lbl in order[:2]:
        blob = labels == lbl
        ys, xs = np.nonzero(blob)
        corners.append(_refine_corner(int(xs.min()), int(ys.min()), blob, img))
    conf = min(float(areas[order[1]]) / config.expected_area, 1.0)
    return KeypointPair.ordered(corners[0], corners[1], conf)


@dataclass(frozen=True)
class ColorBlobDetector:
    """Reference DetectorBackend over ``detect_markers``."""

    config: ColorBlobConfig = field(default_factory=ColorBlobConfig)
    name: str = "color-blob"

    def detect(self, frame: ImageFrame) -> KeypointPair:
        return detect_markers(frame, self.config)


# ---------------------------------------------------------------------------
# dataset tooling: samples, augmentation, evaluation
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class KeypointSample:
    image: ImageFrame
    truth: KeypointPair

    def __post_init__(self):
        if not self.truth.in_bounds(self.image.dims):
            raise ValueError("truth keypoints outside the image")


@dataclass(frozen=True)
class AugmentSpec:
    """Geometric + photometric augmentation parameters.

    Rotation and scale act about the frame center, then translation is
    applied; channel_shift offsets each RGB channel (pixels only, never
    keypoints). Positive rotation turns the +x axis toward +y.
    """

    rotation_deg: float = 0.0
    scale: float = 1.0
    translation: tuple[float, float] = (0.0, 0.0)
    channel_shift: tuple[int, int, int] = (0, 0, 0)

    def is_identity_geometry(self) -> bool:
        return (self.rotation_deg == 0.0 and self.scale == 1.0
                and self.translation == (0.0, 0.0))

    def matrix(self, dims: FrameDims) -> np.ndarray:
        """Forward 2x3 affine for this spec on a frame of the given dims."""
        cx, cy = (dims.width - 1) / 2.0, (dims.height - 1) / 2.0
        th = math.radians(self.rotation_deg)
        s = self.scale
        a, b = s * math.cos(th), s * math.sin(th)
        tx, ty = self.translation
        # p' = C + s R (p - C) + t
        return np.array([
            [a, -b, cx - a * cx + b * cy + tx],
            [b, a, cy - b * cx - a * cy + ty],
        ])

    @classmethod
    def from_dict(cls, d: dict) -> "AugmentSpec":
        return cls(
            rotation_deg=float(d.get("rotation_deg", 0.0)),
            scale=float(d.get("scale", 1.0)),
            translation=tuple(d.get("translation", (0.0, 0.0))),  # type: ignore[arg-type]
            channel_shift=tuple(d.get("channel_shift", (0, 0, 0))),  # type: ignore[arg-type]
        )


def _apply_affine(m: np.ndarray, p: tuple[float, float]) -> tuple[float, float]:
    return (m[0, 0] * p[0] + m[0, 1] * p[1] + m[0, 2],
            m[1, 0] * p[0] + m[1, 1] * p[1] + m[1, 2])


def _invert_affine(m: np.ndarray) -> np.ndarray:
    full = np.vstack([m, [0.0, 0.0, 1.0]])
    return np.linalg.inv(full)[:2, :]


def augment(sample: KeypointSample, spec: AugmentSpec) -> KeypointSample:
    """Warp a sample's image and truth keypoints by the same transform.

    Raises KeypointOutOfBounds if the spec would push a truth point off
    the frame; clamping labels would corrupt training geometry.
    """
    frame = sample.image
    dims = frame.dims
    m = spec.matrix(dims)
    new_pts = [_apply_affine(m, p) for p in (sample.truth.m1, sample.truth.m2)]
    for x, y in new_pts:
        if not (0 <= x < dims.width and 0 <= y < dims.height):
            raise KeypointOutOfBounds(f"keypoint maps to ({x:.1f}, {y:.1f}) "
                                      f"outside {dims.width}x{dims.height}")

    pixels = frame.pixels
    squeeze = pixels.ndim == 2
    if squeeze:
        pixels = pixels[..., None]
    if spec.is_identity_geometry():
        warped = pixels.copy()
    else:
        inv = _invert_affine(m)
        warped, _ = kernels.warp_affine_u8(pixels, inv, dims.height, dims.width, True, 0)
    if any(spec.channel_shift) and not squeeze:
        shift = np.array(spec.channel_shift, dtype=np.int16)
        warped = np.clip(warped.astype(np.int16) + shift, 0, 255).astype(np.uint8)
    if squeeze:
        warped = warped[..., 0]

    out_frame = ImageFrame(frame.stream_id, frame.timestamp_us, warped, frame.pixel_format)
    truth = KeypointPair.ordered(new_pts[0], new_pts[1], sample.truth.confidence)
    return KeypointSample(out_frame, truth)


@dataclass(frozen=True)
class MaeReport:
    """Mean absolute error over normalized keypoint coordinates."""

    mean: float
    std: float
    count: int
    per_sample: tuple[float, ...] = ()

    def to_dict(self) -> dict:
        return {"mean": self.mean, "std": self.std, "count": self.count}


def evaluate_mae(pred: Sequence[KeypointPair], truth: Sequence[KeypointPair],
                 norm: FrameDims) -> MaeReport:
    """MAE of predicted vs true keypoints, coordinates normalized by the
    frame dims (x / width, y / height). std is the population std of the
    per-sample MAEs."""
    if len(pred) != len(truth):
        raise LengthMismatch(f"{len(pred)} predictions vs {len(truth)} truths")
    if not pred:
        return MaeReport(0.0, 0.0, 0)
    w, h = float(norm.width), float(norm.height)
    errs = []
    for p, t in zip(pred, truth):
        e = (abs(p.m1[0] - t.m1[0]) / w + abs(p.m1[1] - t.m1[1]) / h
             + abs(p.m2[0] - t.m2[0]) / w + abs(p.m2[1] - t.m2[1]) / h) / 4.0
        errs.append(e)
    arr = np.asarray(errs)
    return MaeReport(float(arr.mean()), float(arr.std()), len(errs), tuple(errs))


# ---------------------------------------------------------------------------
# truth-record files (one JSON-lines record per image)
# ---------------------------------------------------------------------------

def save_keypoint_records(path: Path | str, records: Iterable[tuple[str, KeypointPair]]) -> None:
    with open(path, "w") as f:
        for name, kp in records:
            f.write(json.dumps({"file": name, "m1": list(kp.m1), "m2": list(kp.m2)}) + "\n")


def load_keypoint_records(path: Path | str) -> list[tuple[str, KeypointPair]]:
    out = []
    with open(path) as f:
        for line in f:
            line = line.strip()
            if not line:
                continue
            d = json.loads(line)
            out.append((d["file"], KeypointPair.ordered(tuple(d["m1"]), tuple(d["m2"]))))
    return out
