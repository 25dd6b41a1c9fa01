"""Tongue-region post-processing: highlight masks and contour polylines.

A segmentation provider hands this module a per-pixel probability map of
the tongue band; here it is thresholded and reduced to a contour, either
by keeping the topmost hit per column or by thinning the region to a
skeleton. A deterministic synthetic band generator doubles as the test
oracle: it returns both the map and the analytic top edge it was drawn
from. Comparison metrics (MSD, Hausdorff) quantify how far a learner's
contour sits from a reference.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass
from typing import Iterable, Sequence

import numpy as np
from scipy.interpolate import CubicSpline

from .errors import EmptyContour, SpecOutOfBounds
from .frames import FrameDims
from . import kernels

DEFAULT_THRESHOLD = 0.5
DEFAULT_MAX_GAP = 10


@dataclass(frozen=True)
class SegmentationMap:
    """Per-pixel tongue probability in [0, 1] over one ultrasound crop."""

    prob: np.ndarray

    def __post_init__(self):
        p = self.prob
        if p.ndim != 2:
            raise ValueError(f"probability map must be 2-D, got shape {p.shape}")
        if p.size and (float(p.min()) < 0.0 or float(p.max()) > 1.0):
            raise ValueError("probability values outside [0, 1]")

    @property
    def width(self) -> int:
        return int(self.prob.shape[1])

    @property
    def height(self) -> int:
        return int(self.prob.shape[0])

    @property
    def dims(self) -> FrameDims:
        return FrameDims(self.width, self.height)

    def to_gray(self) -> np.ndarray:
        """Render as a GRAY8 raster (prob * 255, rounded)."""
        return np.floor(self.prob * 255.0 + 0.5).astype(np.uint8)


@dataclass(frozen=True)
class TongueContour:
    """Ordered subpixel polyline of the extracted tongue surface.

    Top-pixel contours are strictly x-increasing; skeleton contours are in
    arc order. May be empty (nothing to render downstream).
    """

    points: np.ndarray
    source_dims: FrameDims

    def __post_init__(self):
        pts = self.points
        if pts.ndim != 2 or pts.shape[1] != 2:
            raise ValueError(f"contour points must be (n, 2), got {pts.shape}")
        if len(pts):
            xs, ys = pts[:, 0], pts[:, 1]
            if (xs.min() < 0 or ys.min() < 0 or xs.max() >= self.source_dims.width
                    or ys.max() >= self.source_dims.height):
                raise ValueError("contour points outside source dims")

    def __len__(self) -> int:
        return int(self.points.shape[0])

    @property
    def is_empty(self) -> bool:
        return len(self) == 0

    @classmethod
    def empty(cls, dims: FrameDims) -> "TongueContour":
        return cls(np.empty((0, 2), dtype=np.float64), dims)


@dataclass(frozen=True)
class TongueBandSpec:
    """Parameters of a synthetic bright tongue band.

    The band follows a cubic spline through x-monotone control points with
    the given vertical thickness; multiplicative speckle is seeded so the
    map is a pure function of the spec.
    """

    control_points: tuple[tuple[float, float], ...]
    band_thickness: float
    brightness: float
    speckle_seed: int
    noise_level: float
    width: int
    height: int

    def __post_init__(self):
        if len(self.control_points) < 3:
            raise ValueError("need at least 3 control points")
        xs = [p[0] for p in self.control_points]
        if any(b <= a for a, b in zip(xs, xs[1:])):
            raise ValueError("control point x values must be strictly increasing")
        if not 0.0 <= self.brightness <= 1.0:
            raise ValueError("brightness outside [0, 1]")
        if not 0.0 <= self.noise_level <= 1.0:
            raise ValueError("noise_level outside [0, 1]")
        if self.band_thickness <= 0:
            raise ValueError("band_thickness must be positive")

    def curve(self) -> CubicSpline:
        pts = np.asarray(self.control_points, dtype=np.float64)
        return CubicSpline(pts[:, 0], pts[:, 1])

    def columns(self) -> np.ndarray:
        """Integer columns the band spans."""
        xs = [p[0] for p in self.control_points]
        return np.arange(int(math.ceil(xs[0])), int(math.floor(xs[-1])) + 1)

    def to_dict(self) -> dict:
        return {
            "control_points": [list(p) for p in self.control_points],
            "band_thickness": self.band_thickness,
            "brightness": self.brightness,
            "speckle_seed": self.speckle_seed,
            "noise_level": self.noise_level,
            "width": self.width,
            "height": self.height,
        }

    @classmethod
    def from_dict(cls, d: dict) -> "TongueBandSpec":
        return cls(
            control_points=tuple(tuple(p) for p in d["control_points"]),
            band_thickness=float(d["band_thickness"]),
            brightness=float(d["brightness"]),
            speckle_seed=int(d["speckle_seed"]),
            noise_level=float(d["noise_level"]),
            width=int(d["width"]),
            height=int(d["height"]),
        )


def binarize(seg: SegmentationMap, threshold: float = DEFAULT_THRESHOLD) -> np.ndarray:
    """Boolean mask: prob >= threshold (inclusive). threshold in (0, 1)."""
    if not 0.0 < threshold < 1.0:
        raise ValueError(f"threshold {threshold} outside (0, 1)")
    return seg.prob >= threshold


def extract_top_pixels(mask: np.ndarray, max_gap: int = DEFAULT_MAX_GAP) -> TongueContour:
    """Topmost hit per column, split at gaps, longest run kept.

    For each column holding at least one true pixel, the lowest row index
    is emitted. Runs of columns separated by more than ``max_gap`` empty
    columns are treated as separate contours and only the run with the
    most columns survives (ties: leftmost). An empty mask yields an empty
    contour, not an error.
    """
    h, w = mask.shape
    dims = FrameDims(w, h)
    occupied = mask.any(axis=0)
    cols = np.flatnonzero(occupied)
    if len(cols) == 0:
        return TongueContour.empty(dims)
    tops = mask[:, cols].argmax(axis=0)

    # split where the hole between consecutive occupied columns exceeds max_gap
    breaks = np.flatnonzero(np.diff(cols) - 1 > max_gap)
    starts = np.concatenate([[0], breaks + 1])
    ends = np.concatenate([breaks + 1, [len(cols)]])
    lengths = ends - starts
    best = int(np.argmax(lengths))  # argmax takes the first (leftmost) maximum
    sl = slice(starts[best], ends[best])
    pts = np.column_stack([cols[sl].astype(np.float64), tops[sl].astype(np.float64)])
    return TongueContour(pts, dims)


def skeletonize(mask: np.ndarray) -> np.ndarray:
    """Zhang-Suen two-subiteration thinning to a fixpoint (bool in, bool out)."""
    return kernels.zhang_suen(np.ascontiguousarray(mask, dtype=bool))


_NEIGHBORS = [(-1, -1), (-1, 0), (-1, 1), (0, -1), (0, 1), (1, -1), (1, 0), (1, 1)]


def skeleton_contour(mask: np.ndarray) -> TongueContour:
    """Thin the mask and walk the skeleton into an arc-ordered polyline.

    The walk starts at the leftmost skeleton pixel and greedily steps to
    the nearest unvisited 8-neighbor; side branches off the main path are
    dropped.
    """
    h, w = mask.shape
    dims = FrameDims(w, h)
    skel = skeletonize(mask)
    ys, xs = np.nonzero(skel)
    if len(xs) == 0:
        return TongueContour.empty(dims)
    start = np.lexsort((ys, xs))[0]
    cur = (int(ys[start]), int(xs[start]))
    remaining = set(zip(ys.tolist(), xs.tolist()))
    remaining.discard(cur)
    path = [cur]
    while True:
        nxt = None
        for dy, dx in _NEIGHBORS:
            cand = (cur[0] + dy, cur[1] + dx)
            if cand in remaining:
                nxt = cand
                break
        if nxt is None:
            break
        remaining.discard(nxt)
        path.append(nxt)
        cur = nxt
    pts = np.array([[x, y] for y, x in path], dtype=np.float64)
    return TongueContour(pts, dims)


def contour_distance(a: TongueContour, b: TongueContour, metric: str = "msd") -> float:
    """Symmetric contour-to-contour distance in pixels.

    msd: symmetric mean of nearest-neighbor distances,
    (sum_a min_b d + sum_b min_a d) / (|a| + |b|).
    hausdorff: max over both directed maxima of nearest-neighbor distance.
    """
    if a.is_empty or b.is_empty:
        raise EmptyContour("contour_distance needs two non-empty contours")
    da = kernels.min_dists(a.points, b.points)
    db = kernels.min_dists(b.points, a.points)
    if metric == "msd":
        return float((da.sum() + db.sum()) / (len(a) + len(b)))
    if metric == "hausdorff":
        return float(max(da.max(), db.max()))
    raise ValueError(f"unknown metric {metric!r} (use 'msd' or 'hausdorff')")


def generate_segmentation(spec: TongueBandSpec) -> tuple[SegmentationMap, TongueContour]:
    """Render the synthetic band and its analytic top-edge truth contour.

    Band pixels are those within band_thickness/2 of the spline,
    value = brightness scaled by seeded multiplicative speckle
    (1 + noise_level * uniform(-1, 1)), clipped to [0, 1]. Background is
    exactly 0. Raises SpecOutOfBounds when the band leaves the frame.
    """
    cols = spec.columns()
    if len(cols) == 0 or cols[0] < 0 or cols[-1] >= spec.width:
        raise SpecOutOfBounds("control points span columns outside the frame")
    f = spec.curve()(cols.astype(np.float64))
    half = spec.band_thickness / 2.0
    if float(f.min()) - half < 0 or float(f.max()) + half > spec.height - 1:
        raise SpecOutOfBounds("band leaves the frame vertically")

    prob = np.zeros((spec.height, spec.width), dtype=np.float64)
    ys = np.arange(spec.height, dtype=np.float64)[:, None]
    band = np.abs(ys - f[None, :]) <= half
    values = np.full(band.shape, spec.brightness)
    if spec.noise_level > 0:
        rng = np.random.default_rng(spec.speckle_seed)
        eta = rng.uniform(-1.0, 1.0, size=band.shape)
        values = np.clip(spec.brightness * (1.0 + spec.noise_level * eta), 0.0, 1.0)
    prob[:, cols] = np.where(band, values, 0.0)

    truth = TongueContour(np.column_stack([cols.astype(np.float64), f - half]),
                          FrameDims(spec.width, spec.height))
    return SegmentationMap(prob), truth


# ---------------------------------------------------------------------------
# contour export formats
# ---------------------------------------------------------------------------

def write_contours_csv(path, contours: Iterable[tuple[int, TongueContour]]) -> None:
    """CSV rows: frame_index,point_index,x,y."""
    with open(path, "w") as fh:
        fh.write("frame_index,point_index,x,y\n")
        for frame_index, contour in contours:
            for i, (x, y) in enumerate(contour.points):
                fh.write(f"{frame_index},{i},{x:.3f},{y:.3f}\n")


def contour_to_record(bundle_ts_us: int, contour: TongueContour) -> str:
    """One JSON-lines record keyed by bundle timestamp."""
    return json.dumps({
        "bundle_ts_us": bundle_ts_us,
        "dims": [contour.source_dims.width, contour.source_dims.height],
        "points": [[round(float(x), 3), round(float(y), 3)] for x, y in contour.points],
    })


def record_to_contour(line: str) -> tuple[int, TongueContour]:
    d = json.loads(line)
    dims = FrameDims(int(d["dims"][0]), int(d["dims"][1]))
    pts = np.asarray(d["points"], dtype=np.float64).reshape(-1, 2)
    return int(d["bundle_ts_us"]), TongueContour(pts, dims)


def load_contour_records(path) -> list[tuple[int, TongueContour]]:
    out = []
    with open(path) as fh:
        for line in fh:
            line = line.strip()
            if line:
                out.append(record_to_contour(line))
    return out
