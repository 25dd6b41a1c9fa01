"""Core value types shared by every pipeline stage.

Frames wrap a uint8 numpy raster plus stream identity and a microsecond
timestamp. They are treated as immutable once constructed: stages build
new frames rather than writing into received ones.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from enum import IntEnum
from typing import Optional

import numpy as np


class StreamId(IntEnum):
    """Wire-protocol stream identifiers (values are normative)."""

    RGB = 0
    US = 1
    PRED = 2
    COMPOSITE = 3
    REF = 4


class PixelFormat(IntEnum):
    GRAY8 = 0
    RGB8 = 1

    @property
    def channels(self) -> int:
        return 1 if self is PixelFormat.GRAY8 else 3


@dataclass(frozen=True)
class FrameDims:
    width: int
    height: int

    def __post_init__(self):
        if self.width <= 0 or self.height <= 0:
            raise ValueError(f"non-positive frame dims {self.width}x{self.height}")


@dataclass(frozen=True)
class ImageFrame:
    """One timestamped raster from a named stream.

    ``pixels`` is uint8 with shape (h, w) for GRAY8 or (h, w, 3) for RGB8.
    ``alpha`` is an optional bool mask of shape (h, w) marking pixels that
    carry data (used by warped overlays; None means fully opaque).
    """

    stream_id: StreamId
    timestamp_us: int
    pixels: np.ndarray
    pixel_format: PixelFormat
    alpha: Optional[np.ndarray] = field(default=None, repr=False)

    def __post_init__(self):
        px = self.pixels
        if px.dtype != np.uint8:
            raise ValueError(f"frame pixels must be uint8, got {px.dtype}")
        if self.pixel_format is PixelFormat.GRAY8:
            if px.ndim != 2:
                raise ValueError(f"GRAY8 frame must be (h, w), got shape {px.shape}")
        else:
            if px.ndim != 3 or px.shape[2] != 3:
                raise ValueError(f"RGB8 frame must be (h, w, 3), got shape {px.shape}")
        if self.alpha is not None and self.alpha.shape != px.shape[:2]:
            raise ValueError("alpha mask shape does not match frame dims")

    @property
    def width(self) -> int:
        return int(self.pixels.shape[1])

    @property
    def height(self) -> int:
        return int(self.pixels.shape[0])

    @property
    def dims(self) -> FrameDims:
        return FrameDims(self.width, self.height)

    @property
    def payload(self) -> bytes:
        """Raster bytes, row-major, as carried on the wire."""
        return np.ascontiguousarray(self.pixels).tobytes()

    @classmethod
    def from_payload(cls, stream_id: StreamId, timestamp_us: int, width: int,
                     height: int, pixel_format: PixelFormat, payload: bytes) -> "ImageFrame":
        n = width * height * pixel_format.channels
        if len(payload) != n:
            raise ValueError(f"payload length {len(payload)} != {n} for "
                             f"{width}x{height} {pixel_format.name}")
        shape = (height, width) if pixel_format is PixelFormat.GRAY8 else (height, width, 3)
        pixels = np.frombuffer(payload, dtype=np.uint8).reshape(shape)
        return cls(stream_id, timestamp_us, pixels, pixel_format)

    def with_timestamp(self, timestamp_us: int) -> "ImageFrame":
        return ImageFrame(self.stream_id, timestamp_us, self.pixels,
                          self.pixel_format, self.alpha)


@dataclass(frozen=True)
class AudioChunk:
    """Mono PCM16 audio covering [timestamp_us, timestamp_us + duration)."""

    timestamp_us: int
    sample_rate_hz: int
    samples: np.ndarray

    def __post_init__(self):
        if self.sample_rate_hz <= 0:
            raise ValueError("sample_rate_hz must be positive")
        if self.samples.dtype != np.int16 or self.samples.ndim != 1:
            raise ValueError("samples must be 1-D int16")

    @property
    def duration_us(self) -> int:
        return len(self.samples) * 1_000_000 // self.sample_rate_hz

    @property
    def rms(self) -> float:
        """RMS level normalized to [0, 1] (full-scale sine ~ 0.707)."""
        if len(self.samples) == 0:
            return 0.0
        x = self.samples.astype(np.float64) / 32768.0
        return float(np.sqrt(np.mean(x * x)))


def gray_frame(stream_id: StreamId, timestamp_us: int, pixels: np.ndarray,
               alpha: Optional[np.ndarray] = None) -> ImageFrame:
    return ImageFrame(stream_id, timestamp_us, pixels, PixelFormat.GRAY8, alpha)


def rgb_frame(stream_id: StreamId, timestamp_us: int, pixels: np.ndarray,
              alpha: Optional[np.ndarray] = None) -> ImageFrame:
    return ImageFrame(stream_id, timestamp_us, pixels, PixelFormat.RGB8, alpha)
