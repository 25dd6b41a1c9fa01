"""Exception hierarchy for the training pipeline.

Every failure mode that callers are expected to branch on gets its own
class; generic misuse (bad argument types, impossible dims) raises
ValueError like any numpy code would.
"""


class SonotrainerError(Exception):
    """Base class for all pipeline-specific errors."""


# --- marker tracking ---

class FewerThanTwoBlobs(SonotrainerError):
    """Marker detection found fewer than two qualifying blobs (occlusion
    or markers out of frame)."""


class AmbiguousBlobs(SonotrainerError):
    """A third blob is nearly as large as the second: background
    interference makes the marker assignment unsafe."""


class KeypointOutOfBounds(SonotrainerError):
    """An augmentation would push a ground-truth keypoint off-frame."""


class LengthMismatch(SonotrainerError):
    """Prediction and truth lists differ in length."""


# --- pose / calibration ---

class DegenerateMarkers(SonotrainerError):
    """Marker separation below the usable minimum; detection failure."""


# --- tongue contour ---

class EmptyContour(SonotrainerError):
    """A contour metric was asked for on an empty contour."""


class SpecOutOfBounds(SonotrainerError):
    """Synthetic band spec does not fit inside its frame."""


# --- stream sync / sources ---

class SourceStalled(SonotrainerError):
    """A required stream produced nothing for longer than the stall
    timeout; signals device loss."""

    def __init__(self, stream: str, gap_us: int):
        super().__init__(f"stream {stream} stalled ({gap_us} us without frames)")
        self.stream = stream
        self.gap_us = gap_us


class SessionNotFound(SonotrainerError):
    """Replay requested for a directory that is not a session."""


class ConfigInvalid(SonotrainerError):
    """Pipeline or source configuration failed validation."""


# --- session io ---

class ManifestCorrupt(SonotrainerError):
    """Recorded session fails its integrity check (CRC / size / count)."""


class DirNotWritable(SonotrainerError):
    """Recording target directory cannot be written."""


class DiskFull(SonotrainerError):
    """Recording aborted because the device ran out of space."""


# --- slippage ---

class EmptyTrial(SonotrainerError):
    """A slippage trial has fewer than two pose samples."""


# --- compositor ---

class DimsMismatch(SonotrainerError):
    """Layers handed to the compositor do not share the canvas dims."""


# --- service control plane ---

class NoReferenceSelected(SonotrainerError):
    """Comparison metrics requested before a reference session was chosen."""


class ProtocolError(SonotrainerError):
    """A wire message violates the framing contract (magic, version,
    length, or enum field out of range)."""
