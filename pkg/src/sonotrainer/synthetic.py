"""Deterministic synthetic inputs: marker frames, band frames, audio tone.

Everything here is a pure function of its parameters (seeds included),
so synthetic runs replay bit-for-bit. The marker renderer doubles as the
detector-suite oracle: the square positions it was given are the truth.
"""

from __future__ import annotations

import math

import numpy as np

from .frames import AudioChunk, ImageFrame, PixelFormat, StreamId
from .tongue_contour import TongueBandSpec, TongueContour, generate_segmentation

MARKER_COLOR = (230, 120, 30)     # orange, well inside the default HSV band
BACKGROUND_GRAY = 128             # zero saturation, never matches the band
DEFAULT_MARKER_SIZE = 20


def render_marker_frame(width: int, height: int,
                        positions: tuple[tuple[int, int], tuple[int, int]],
                        size: int = DEFAULT_MARKER_SIZE,
                        color: tuple[int, int, int] = MARKER_COLOR,
                        background: int = BACKGROUND_GRAY) -> np.ndarray:
    """Gray frame with two solid marker squares, top-left corners at
    ``positions``. Squares must fit fully inside the frame."""
    img = np.full((height, width, 3), background, dtype=np.uint8)
    for (x, y) in positions:
        if not (0 <= x and x + size <= width and 0 <= y and y + size <= height):
            raise ValueError(f"marker square at ({x}, {y}) size {size} leaves the frame")
        img[y:y + size, x:x + size] = color
    return img


def marker_positions_for_frame(index: int, width: int, height: int, seed: int,
                               size: int = DEFAULT_MARKER_SIZE
                               ) -> tuple[tuple[int, int], tuple[int, int]]:
    """Slow deterministic drift of the marker pair over frame index.

    Positions stay integral so blob corners remain crisp, and the pair
    keeps a fixed separation so the derived pose stays sane.
    """
    rng = np.random.default_rng(seed)
    base_x = int(rng.integers(width // 6, width // 3))
    base_y = int(rng.integers(height // 3, height // 2))
    gap = int(rng.integers(width // 4, width // 3))
    phase = float(rng.uniform(0, 2 * math.pi))
    drift_x = int(round(12 * math.sin(2 * math.pi * index / 90.0 + phase)))
    drift_y = int(round(8 * math.sin(2 * math.pi * index / 60.0 + phase * 0.7)))
    x1 = base_x + drift_x
    y1 = base_y + drift_y
    return ((x1, y1), (x1 + gap, y1))


def synthetic_rgb_frame(index: int, timestamp_us: int, width: int, height: int,
                        seed: int) -> ImageFrame:
    positions = marker_positions_for_frame(index, width, height, seed)
    pixels = render_marker_frame(width, height, positions)
    return ImageFrame(StreamId.RGB, timestamp_us, pixels, PixelFormat.RGB8)


def band_spec_for_frame(index: int, width: int, height: int, seed: int,
                        noise_level: float = 0.05) -> TongueBandSpec:
    """Tongue band whose bow flexes deterministically over frame index."""
    rng = np.random.default_rng(seed)
    margin = width // 8
    xs = np.linspace(margin, width - margin, 5)
    mid = height * 0.55
    amp = height * 0.12 * (0.6 + 0.4 * math.sin(2 * math.pi * index / 45.0))
    bow = -amp * np.sin(np.linspace(0.2, math.pi - 0.2, 5))
    jitter = rng.uniform(-2.0, 2.0, size=5)
    ys = mid + bow + jitter
    control = tuple((float(x), float(y)) for x, y in zip(xs, ys))
    return TongueBandSpec(
        control_points=control,
        band_thickness=max(6.0, height * 0.06),
        brightness=0.9,
        speckle_seed=seed * 100003 + index,
        noise_level=noise_level,
        width=width,
        height=height,
    )


def synthetic_us_frame(index: int, timestamp_us: int, width: int, height: int,
                       seed: int, noise_level: float = 0.05
                       ) -> tuple[ImageFrame, TongueContour]:
    """Grayscale ultrasound-like frame rendered from the band generator,
    plus the analytic truth contour for that frame."""
    spec = band_spec_for_frame(index, width, height, seed, noise_level)
    seg, truth = generate_segmentation(spec)
    frame = ImageFrame(StreamId.US, timestamp_us, seg.to_gray(), PixelFormat.GRAY8)
    return frame, truth


def synthetic_audio_chunk(index: int, timestamp_us: int, sample_rate_hz: int,
                          samples_per_chunk: int, seed: int) -> AudioChunk:
    """One chunk of a continuous tone; frequency wobbles with the seed."""
    rng = np.random.default_rng(seed)
    freq = float(rng.uniform(180.0, 260.0))
    start = index * samples_per_chunk
    n = np.arange(start, start + samples_per_chunk, dtype=np.float64)
    wave = 0.3 * np.sin(2 * math.pi * freq * n / sample_rate_hz)
    samples = (wave * 32767).astype(np.int16)
    return AudioChunk(timestamp_us, sample_rate_hz, samples)
