"""Real-time pronunciation training: ultrasound tongue video registered
onto the learner's face, live contour feedback, recording and replay."""

from .errors import (AmbiguousBlobs, ConfigInvalid, DegenerateMarkers, DimsMismatch,
                     DirNotWritable, DiskFull, EmptyContour, EmptyTrial,
                     FewerThanTwoBlobs, KeypointOutOfBounds, LengthMismatch,
                     ManifestCorrupt, NoReferenceSelected, ProtocolError,
                     SessionNotFound, SonotrainerError, SourceStalled, SpecOutOfBounds)
from .frames import AudioChunk, FrameDims, ImageFrame, PixelFormat, StreamId
from .marker_tracking import (AugmentSpec, ColorBlobConfig, ColorBlobDetector,
                              DetectorBackend, KeypointPair, KeypointSample,
                              MaeReport, augment, detect_markers, evaluate_mae)
from .pose_calibration import (CalibrationProfile, CropRect, OverlayTransform, Pose2D,
                               apply_crop, apply_transform, calibrate_from_frame,
                               load_profile, overlay_transform, pose_from_markers,
                               save_profile)
from .tongue_contour import (SegmentationMap, TongueBandSpec, TongueContour, binarize,
                             contour_distance, extract_top_pixels,
                             generate_segmentation, skeleton_contour, skeletonize)
from .stream_sync import (SyncedBundle, frame_timestamp, make_source_from_spec, pair)
from .compositor import BlendWeights, composite
from .session_io import (SessionManifest, SessionRecorder, record, replay,
                         verify_session)
from .slippage import PoseSample6DOF, SlippageReport, analyze_trials
from .pipeline import (Pipeline, PipelineConfig, PipelineResult, compare_with_reference,
                       load_config, run_headless)
from .server import ServiceThread, TrainerService

__version__ = "0.1.0"

__all__ = [
    "AmbiguousBlobs", "AudioChunk", "AugmentSpec", "BlendWeights",
    "CalibrationProfile", "ColorBlobConfig", "ColorBlobDetector", "ConfigInvalid",
    "CropRect", "DegenerateMarkers", "DetectorBackend", "DimsMismatch",
    "DirNotWritable", "DiskFull", "EmptyContour", "EmptyTrial", "FewerThanTwoBlobs",
    "FrameDims", "ImageFrame", "KeypointOutOfBounds", "KeypointPair",
    "KeypointSample", "LengthMismatch", "MaeReport", "ManifestCorrupt",
    "NoReferenceSelected", "OverlayTransform", "Pipeline", "PipelineConfig",
    "PipelineResult", "PixelFormat", "Pose2D", "PoseSample6DOF", "ProtocolError",
    "SegmentationMap", "ServiceThread", "SessionManifest", "SessionNotFound",
    "SessionRecorder", "SlippageReport", "SonotrainerError", "SourceStalled",
    "SpecOutOfBounds", "StreamId", "SyncedBundle", "TongueBandSpec", "TongueContour",
    "TrainerService", "analyze_trials", "apply_crop", "apply_transform", "augment",
    "binarize", "calibrate_from_frame", "compare_with_reference", "composite",
    "contour_distance", "detect_markers", "evaluate_mae", "extract_top_pixels",
    "frame_timestamp", "generate_segmentation", "load_config", "load_profile",
    "make_source_from_spec", "overlay_transform", "pair", "pose_from_markers",
    "record", "replay", "run_headless", "save_profile", "skeleton_contour",
    "skeletonize", "verify_session",
]
