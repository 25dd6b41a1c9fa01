"""From marker keypoints to the on-face overlay transform.

The probe holder keeps the imaging plane parallel to the camera, so the
whole registration problem is 2-D: the marker separation gives scale,
the marker baseline angle gives rotation, and a calibrated anchor point
expressed in marker-local units gives translation. A one-shot calibration
captures the reference geometry (marker distance, baseline angle, where
the ultrasound apex sits relative to the markers); after that every frame's
keypoints produce the similarity transform directly.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass
from pathlib import Path
from typing import Optional

import numpy as np

from .errors import DegenerateMarkers
from .frames import FrameDims, ImageFrame
from .marker_tracking import ColorBlobConfig, KeypointPair, detect_markers
from . import kernels

MIN_MARKER_SEPARATION_PX = 2.0


@dataclass(frozen=True)
class CropRect:
    """Axis-aligned crop rectangle in source pixels."""

    x: int
    y: int
    width: int
    height: int

    def __post_init__(self):
        if self.width <= 0 or self.height <= 0:
            raise ValueError("crop must be non-empty")
        if self.x < 0 or self.y < 0:
            raise ValueError("crop origin must be non-negative")

    def within(self, dims: FrameDims) -> bool:
        return self.x + self.width <= dims.width and self.y + self.height <= dims.height

    def to_dict(self) -> dict:
        return {"x": self.x, "y": self.y, "width": self.width, "height": self.height}

    @classmethod
    def from_dict(cls, d: dict) -> "CropRect":
        return cls(int(d["x"]), int(d["y"]), int(d["width"]), int(d["height"]))


@dataclass(frozen=True)
class Pose2D:
    """Instantaneous probe pose on the camera plane."""

    angle_rad: float
    scale: float
    anchor_px: tuple[float, float]

    def __post_init__(self):
        if self.scale <= 0:
            raise ValueError("pose scale must be positive")


@dataclass(frozen=True)
class OverlayTransform:
    """Similarity transform from (cropped) ultrasound pixels to RGB pixels.

    T(p) = scale * R(rotation_rad) * p + translation
    """

    rotation_rad: float
    scale: float
    translation: tuple[float, float]

    def __post_init__(self):
        if self.scale <= 0:
            raise ValueError("transform scale must be positive")

    def matrix(self) -> np.ndarray:
        c = math.cos(self.rotation_rad) * self.scale
        s = math.sin(self.rotation_rad) * self.scale
        tx, ty = self.translation
        return np.array([[c, -s, tx], [s, c, ty]])

    def apply(self, points: np.ndarray) -> np.ndarray:
        """Map (n, 2) points forward through the transform."""
        m = self.matrix()
        pts = np.asarray(points, dtype=np.float64)
        return pts @ m[:, :2].T + m[:, 2]

    def inverse(self) -> "OverlayTransform":
        inv_scale = 1.0 / self.scale
        c = math.cos(-self.rotation_rad) * inv_scale
        s = math.sin(-self.rotation_rad) * inv_scale
        tx, ty = self.translation
        return OverlayTransform(
            rotation_rad=-self.rotation_rad,
            scale=inv_scale,
            translation=(-(c * tx - s * ty), -(s * tx + c * ty)),
        )

    @classmethod
    def identity(cls) -> "OverlayTransform":
        return cls(0.0, 1.0, (0.0, 0.0))


@dataclass(frozen=True)
class CalibrationProfile:
    """Reference geometry captured once per seating.

    anchor_offset is in marker-local units: origin at m1, x-axis toward
    m2, one unit = the marker separation. us_anchor is the cropped
    ultrasound pixel that lands on the anchor (by default the top-center
    of the crop, i.e. the probe contact point).
    """

    ref_marker_distance_px: float
    anchor_offset: tuple[float, float]
    base_rotation_offset_rad: float
    us_crop: CropRect
    us_anchor: tuple[float, float]

    def __post_init__(self):
        if self.ref_marker_distance_px <= 0:
            raise ValueError("ref_marker_distance_px must be positive")

    def to_dict(self) -> dict:
        return {
            "ref_marker_distance_px": self.ref_marker_distance_px,
            "anchor_offset": list(self.anchor_offset),
            "base_rotation_offset_rad": self.base_rotation_offset_rad,
            "us_crop": self.us_crop.to_dict(),
            "us_anchor": list(self.us_anchor),
        }

    @classmethod
    def from_dict(cls, d: dict) -> "CalibrationProfile":
        return cls(
            ref_marker_distance_px=float(d["ref_marker_distance_px"]),
            anchor_offset=tuple(d["anchor_offset"]),  # type: ignore[arg-type]
            base_rotation_offset_rad=float(d["base_rotation_offset_rad"]),
            us_crop=CropRect.from_dict(d["us_crop"]),
            us_anchor=tuple(d["us_anchor"]),  # type: ignore[arg-type]
        )


def save_profile(profile: CalibrationProfile, path: Path | str) -> None:
    Path(path).write_text(json.dumps(profile.to_dict(), indent=2) + "\n")


def load_profile(path: Path | str) -> CalibrationProfile:
    return CalibrationProfile.from_dict(json.loads(Path(path).read_text()))


def pose_from_markers(kp: KeypointPair, cal: CalibrationProfile) -> Pose2D:
    """Scale from marker separation, angle from the marker baseline,
    anchor by rotating the calibrated offset into the current frame.

    Raises DegenerateMarkers below 2 px separation (detection failure).
    """
    dx = kp.m2[0] - kp.m1[0]
    dy = kp.m2[1] - kp.m1[1]
    dist = math.hypot(dx, dy)
    if dist < MIN_MARKER_SEPARATION_PX:
        raise DegenerateMarkers(f"marker separation {dist:.2f} px below "
                                f"{MIN_MARKER_SEPARATION_PX} px")
    scale = dist / cal.ref_marker_distance_px
    angle = math.atan2(dy, dx) + cal.base_rotation_offset_rad
    ox = cal.anchor_offset[0] * cal.ref_marker_distance_px
    oy = cal.anchor_offset[1] * cal.ref_marker_distance_px
    c, s = math.cos(angle), math.sin(angle)
    anchor = (kp.m1[0] + scale * (c * ox - s * oy),
              kp.m1[1] + scale * (s * ox + c * oy))
    return Pose2D(angle_rad=angle, scale=scale, anchor_px=anchor)


def overlay_transform(pose: Pose2D, cal: CalibrationProfile) -> OverlayTransform:
    """Transform placing the cropped ultrasound frame so that us_anchor
    lands on the pose anchor with the pose's rotation and scale."""
    c = math.cos(pose.angle_rad) * pose.scale
    s = math.sin(pose.angle_rad) * pose.scale
    ax, ay = cal.us_anchor
    tx = pose.anchor_px[0] - (c * ax - s * ay)
    ty = pose.anchor_px[1] - (s * ax + c * ay)
    return OverlayTransform(pose.angle_rad, pose.scale, (tx, ty))


def apply_transform(t: OverlayTransform, img: ImageFrame, canvas: FrameDims,
                    method: str = "bilinear") -> ImageFrame:
    """Resample a frame onto a canvas through the transform.

    Output pixel q samples the source at T^-1(q); bilinear by default,
    nearest when exactness matters more than smoothness. Pixels mapping
    outside the source are transparent (alpha False) and excluded from
    blending downstream.
    """
    if method not in ("bilinear", "nearest"):
        raise ValueError(f"unknown resampling method {method!r}")
    pixels = img.pixels
    squeeze = pixels.ndim == 2
    if squeeze:
        pixels = pixels[..., None]
    inv = t.inverse().matrix()
    out, alpha = kernels.warp_affine_u8(
        np.ascontiguousarray(pixels), inv, canvas.height, canvas.width,
        method == "bilinear", 0)
    if squeeze:
        out = out[..., 0]
    return ImageFrame(img.stream_id, img.timestamp_us, out, img.pixel_format, alpha)


def apply_crop(img: ImageFrame, rect: CropRect) -> ImageFrame:
    """Cut the calibrated crop out of a source frame."""
    if not rect.within(img.dims):
        raise ValueError(f"crop {rect} outside source {img.dims}")
    view = img.pixels[rect.y:rect.y + rect.height, rect.x:rect.x + rect.width]
    return ImageFrame(img.stream_id, img.timestamp_us,
                      np.ascontiguousarray(view), img.pixel_format)


def calibrate_from_frame(frame: ImageFrame, blob_config: ColorBlobConfig,
                         us_crop: CropRect,
                         anchor_px: Optional[tuple[float, float]] = None,
                         us_anchor: Optional[tuple[float, float]] = None) -> CalibrationProfile:
    """One-shot calibration from an aligned reference frame.

    The current marker geometry becomes the profile: separation -> scale
    1.0, baseline angle zeroed via the base rotation offset. ``anchor_px``
    names where on the face the ultrasound apex should sit (default: half
    a marker-distance right and below m1 in screen space). ``us_anchor``
    defaults to the top-center of the crop.
    """
    kp = detect_markers(frame, blob_config)
    dx = kp.m2[0] - kp.m1[0]
    dy = kp.m2[1] - kp.m1[1]
    dist = math.hypot(dx, dy)
    if dist < MIN_MARKER_SEPARATION_PX:
        raise DegenerateMarkers(f"marker separation {dist:.2f} px too small to calibrate")
    angle = math.atan2(dy, dx)
    # the base offset zeroes the pose angle for this frame, so anchor_offset
    # lives in the calibration frame's screen axes: anchor = m1 + offset * dist
    if anchor_px is None:
        offset = (0.5, 0.5)
    else:
        offset = ((anchor_px[0] - kp.m1[0]) / dist, (anchor_px[1] - kp.m1[1]) / dist)
    if us_anchor is None:
        us_anchor = (us_crop.width / 2.0, 0.0)
    return CalibrationProfile(
        ref_marker_distance_px=dist,
        anchor_offset=offset,
        base_rotation_offset_rad=-angle,
        us_crop=us_crop,
        us_anchor=us_anchor,
    )
