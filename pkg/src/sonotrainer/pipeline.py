"""End-to-end processing: synchronized bundles in, composited feedback out.

Per bundle: detect the chin markers -> derive the holder pose -> warp the
calibrated ultrasound crop and its prediction map onto the face -> extract
the tongue contour -> blend the layers -> emit one immutable result with
metrics and per-stage latencies. Everything is driven by a validated
PipelineConfig so a headless run with synthetic sources is reproducible
bit for bit.
"""

from __future__ import annotations

import hashlib
import json
import time
from collections import deque
from dataclasses import dataclass, field
from pathlib import Path
from typing import Callable, Iterator, Optional

import numpy as np

from . import kernels, session_io
from .compositor import BlendWeights, composite
from .errors import (AmbiguousBlobs, ConfigInvalid, DegenerateMarkers, EmptyContour,
                     FewerThanTwoBlobs, NoReferenceSelected, SourceStalled)
from .frames import FrameDims, ImageFrame, PixelFormat, StreamId
from .marker_tracking import ColorBlobConfig, KeypointPair, detect_markers
from .pose_calibration import (CalibrationProfile, CropRect, Pose2D, apply_crop,
                               apply_transform, calibrate_from_frame, load_profile,
                               overlay_transform, pose_from_markers)
from .stream_sync import (DEFAULT_STALL_TIMEOUT_US, DEFAULT_TOLERANCE_US,
                          SyncedBundle, make_source_from_spec, pair)
from .tongue_contour import (DEFAULT_MAX_GAP, DEFAULT_THRESHOLD, SegmentationMap,
                             TongueContour, binarize, contour_distance,
                             extract_top_pixels, skeleton_contour, skeletonize)

DEFAULT_RGB_SOURCE = "synthetic:rgb,frames=90,fps=30,width=640,height=480,seed=7"
DEFAULT_US_SOURCE = "synthetic:us,frames=90,fps=30,width=256,height=256,seed=11"
DEFAULT_AUDIO_SOURCE = "synthetic:audio,frames=90,fps=30,rate=16000,seed=5"
CONTOUR_METHODS = ("top", "skeleton")
SEGMENTATION_PROVIDERS = ("intensity",)
STAGES = ("detect", "pose", "segment", "contour", "warp", "composite")
EPOCH_ISO = "1970-01-01T00:00:00+00:00"


@dataclass(frozen=True)
class PipelineConfig:
    rgb_source: str = DEFAULT_RGB_SOURCE
    us_source: str = DEFAULT_US_SOURCE
    audio_source: Optional[str] = DEFAULT_AUDIO_SOURCE
    calibration: str = "auto"
    weights: BlendWeights = field(default_factory=BlendWeights)
    detector: ColorBlobConfig = field(default_factory=ColorBlobConfig)
    segmentation: str = "intensity"
    contour_method: str = "top"
    contour_threshold: float = DEFAULT_THRESHOLD
    contour_max_gap: int = DEFAULT_MAX_GAP
    tolerance_us: int = DEFAULT_TOLERANCE_US
    stall_timeout_us: int = DEFAULT_STALL_TIMEOUT_US
    record_dir: Optional[str] = None
    record_outputs: tuple = session_io.ALL_OUTPUTS
    guideline: bool = True
    blend_mode: str = "additive"
    pace: bool = False
    deterministic: Optional[bool] = None

    def to_dict(self) -> dict:
        return {
            "sources": {"rgb": self.rgb_source, "us": self.us_source,
                        "audio": self.audio_source},
            "calibration": self.calibration,
            "weights": list(self.weights.as_tuple()),
            "detector": self.detector.to_dict(),
            "segmentation": self.segmentation,
            "contour": {"method": self.contour_method,
                        "threshold": self.contour_threshold,
                        "max_gap": self.contour_max_gap},
            "sync": {"tolerance_us": self.tolerance_us,
                     "stall_timeout_us": self.stall_timeout_us},
            "record": {"directory": self.record_dir,
                       "outputs": list(self.record_outputs)},
            "guideline": self.guideline,
            "blend_mode": self.blend_mode,
            "pace": self.pace,
            "deterministic": self.deterministic,
        }

    @classmethod
    def from_dict(cls, d: dict) -> "PipelineConfig":
        problems: list[str] = []
        sources = d.get("sources") or {}
        contour = d.get("contour") or {}
        sync = d.get("sync") or {}
        record = d.get("record") or {}

        def grab(fn, what, default):
            try:
                return fn()
            except (ValueError, TypeError, KeyError, ConfigInvalid) as e:
                problems.append(f"{what}: {e}")
                return default

        weights = grab(lambda: BlendWeights.from_any(d.get("weights", (0.9, 0.4, 1.0))),
                       "weights", BlendWeights())
        detector = grab(lambda: ColorBlobConfig.from_dict(d.get("detector") or {}),
                        "detector", ColorBlobConfig())
        cfg = cls(
            rgb_source=sources.get("rgb", DEFAULT_RGB_SOURCE),
            us_source=sources.get("us", DEFAULT_US_SOURCE),
            audio_source=sources.get("audio", DEFAULT_AUDIO_SOURCE),
            calibration=d.get("calibration", "auto"),
            weights=weights,
            detector=detector,
            segmentation=d.get("segmentation", "intensity"),
            contour_method=contour.get("method", "top"),
            contour_threshold=grab(lambda: float(contour.get("threshold", DEFAULT_THRESHOLD)),
                                   "contour.threshold", DEFAULT_THRESHOLD),
            contour_max_gap=grab(lambda: int(contour.get("max_gap", DEFAULT_MAX_GAP)),
                                 "contour.max_gap", DEFAULT_MAX_GAP),
            tolerance_us=grab(lambda: int(sync.get("tolerance_us", DEFAULT_TOLERANCE_US)),
                              "sync.tolerance_us", DEFAULT_TOLERANCE_US),
            stall_timeout_us=grab(lambda: int(sync.get("stall_timeout_us",
                                                       DEFAULT_STALL_TIMEOUT_US)),
                                  "sync.stall_timeout_us", DEFAULT_STALL_TIMEOUT_US),
            record_dir=record.get("directory"),
            record_outputs=tuple(record.get("outputs", session_io.ALL_OUTPUTS)),
            guideline=bool(d.get("guideline", True)),
            blend_mode=d.get("blend_mode", "additive"),
            pace=bool(d.get("pace", False)),
            deterministic=d.get("deterministic"),
        )
        problems.extend(cfg.problems())
        if problems:
            raise ConfigInvalid("; ".join(problems))
        return cfg

    def problems(self) -> list[str]:
        """Everything wrong with this config, empty when valid."""
        out: list[str] = []
        from .stream_sync import parse_source_spec
        for name, spec in (("rgb", self.rgb_source), ("us", self.us_source),
                           ("audio", self.audio_source)):
            if spec is None:
                continue
            try:
                kind, params = parse_source_spec(spec)
            except ConfigInvalid as e:
                out.append(f"{name} source: {e}")
                continue
            if kind == "replay" and not (Path(params["dir"]) / session_io.MANIFEST_NAME).is_file():
                out.append(f"{name} source: no session manifest in {params['dir']!r}")
        if self.calibration != "auto" and not Path(self.calibration).is_file():
            out.append(f"calibration profile {self.calibration!r} does not exist")
        if self.segmentation not in SEGMENTATION_PROVIDERS:
            out.append(f"unknown segmentation provider {self.segmentation!r}")
        if self.contour_method not in CONTOUR_METHODS:
            out.append(f"unknown contour method {self.contour_method!r}")
        if not 0.0 < self.contour_threshold < 1.0:
            out.append(f"contour threshold {self.contour_threshold} outside (0, 1)")
        if self.contour_max_gap < 0:
            out.append("contour max_gap must be >= 0")
        if self.tolerance_us <= 0 or self.stall_timeout_us <= 0:
            out.append("sync tolerance and stall timeout must be positive")
        bad = set(o.upper() for o in self.record_outputs) - set(session_io.ALL_OUTPUTS)
        if bad:
            out.append(f"unknown record outputs {sorted(bad)}")
        if self.blend_mode not in ("additive", "over"):
            out.append(f"unknown blend mode {self.blend_mode!r}")
        return out

    def is_deterministic(self) -> bool:
        """Live (stub) sources break run-to-run determinism; synthetic
        and replay sources keep it, and that is the default assumption."""
        if self.deterministic is not None:
            return bool(self.deterministic)
        specs = [self.rgb_source, self.us_source, self.audio_source]
        return not any(s and s.startswith("stub:") for s in specs)

    def canonical_dict(self) -> dict:
        """Config as recorded and hashed: the record target directory is
        an output location, not behavior, so it is scrubbed — two runs
        differing only in where they write must produce equal sessions."""
        d = self.to_dict()
        d["record"] = dict(d["record"], directory=None)
        return d

    def session_identity(self) -> tuple[str, str]:
        """(session_id, created_at) for the recorder.

        Deterministic configs hash to a stable id with a fixed creation
        time so identical runs produce identical sessions on disk.
        """
        if self.is_deterministic():
            blob = json.dumps(self.canonical_dict(), sort_keys=True).encode()
            return hashlib.sha256(blob).hexdigest()[:32], EPOCH_ISO
        import uuid
        from datetime import datetime, timezone
        return uuid.uuid4().hex, datetime.now(timezone.utc).isoformat()


def load_config(path) -> PipelineConfig:
    p = Path(path)
    if not p.is_file():
        raise ConfigInvalid(f"config file {p} does not exist")
    try:
        data = json.loads(p.read_text())
    except json.JSONDecodeError as e:
        raise ConfigInvalid(f"config file {p} is not valid JSON: {e}") from e
    return PipelineConfig.from_dict(data)


def make_segmentation_provider(spec: str) -> Callable[[ImageFrame], SegmentationMap]:
    """Provider contract: cropped grayscale ultrasound -> probability map.

    'intensity' divides pixel values by 255, which matches synthetic
    ultrasound where the band is rendered as brightness. A trained
    segmenter drops in behind the same callable signature.
    """
    if spec == "intensity":
        def provider(frame: ImageFrame) -> SegmentationMap:
            return SegmentationMap(frame.pixels.astype(np.float64) / 255.0)
        return provider
    raise ConfigInvalid(f"unknown segmentation provider {spec!r}")


@dataclass(frozen=True)
class PipelineResult:
    """One processed bundle, ready to publish and to record."""
    index: int
    bundle: SyncedBundle
    markers: Optional[KeypointPair]
    pose: Optional[Pose2D]
    us_frame: ImageFrame
    pred_frame: ImageFrame
    composite_frame: ImageFrame
    contour: Optional[TongueContour]
    metrics: dict
    stage_ns: dict


@dataclass
class ReferenceSession:
    """A replayed session used as the comparison target."""
    directory: str
    contours: list
    video: Optional[session_io.ReplayVideoSource]

    def contour_for(self, index: int) -> TongueContour:
        return self.contours[index % len(self.contours)][1]

    def frame_for(self, index: int) -> Optional[ImageFrame]:
        if self.video is None or len(self.video) == 0:
            return None
        f = self.video.frame(index % len(self.video))
        return ImageFrame(StreamId.REF, f.timestamp_us, f.pixels, f.pixel_format)


def compare_with_reference(live: Optional[TongueContour],
                           ref: Optional[TongueContour]) -> dict:
    """MSD / Hausdorff between learner and reference contours.

    An empty contour on either side gives null metrics rather than an
    error, so a momentary segmentation dropout does not kill the stream.
    """
    if live is None or ref is None:
        return {"msd": None, "hausdorff": None}
    try:
        return {"msd": contour_distance(live, ref, "msd"),
                "hausdorff": contour_distance(live, ref, "hausdorff")}
    except EmptyContour:
        return {"msd": None, "hausdorff": None}


def _transparent_layer(stream: StreamId, ts: int, dims: FrameDims) -> ImageFrame:
    px = np.zeros((dims.height, dims.width), np.uint8)
    return ImageFrame(stream, ts, px, PixelFormat.GRAY8,
                      alpha=np.zeros((dims.height, dims.width), bool))


class Pipeline:
    """Stateful orchestrator; iterate process() to drive it."""

    def __init__(self, config: PipelineConfig):
        problems = config.problems()
        if problems:
            raise ConfigInvalid("; ".join(problems))
        self.config = config
        self.weights = config.weights
        self.blend_mode = config.blend_mode
        self.profile: Optional[CalibrationProfile] = None
        if config.calibration != "auto":
            self.profile = load_profile(config.calibration)
        self.provider = make_segmentation_provider(config.segmentation)
        self.reference: Optional[ReferenceSession] = None
        self.stalled: Optional[SourceStalled] = None
        self.bundle_count = 0
        self.detect_failures = 0
        self.last_metrics: Optional[dict] = None
        self._stage_hist = {s: deque(maxlen=120) for s in STAGES}

        self.rgb_source = make_source_from_spec(config.rgb_source, "rgb")
        self.us_source = make_source_from_spec(config.us_source, "us")
        self.audio_source = (make_source_from_spec(config.audio_source, "audio")
                             if config.audio_source else None)

    # -- control surface (called from other threads; all swaps are atomic) --

    def set_weights(self, weights) -> BlendWeights:
        self.weights = BlendWeights.from_any(weights)
        return self.weights

    def select_reference(self, directory: str) -> ReferenceSession:
        sources = session_io.replay(directory)
        if not sources.contours:
            raise ValueError(f"session {directory!r} has no recorded contours")
        video = (sources.video.get(StreamId.COMPOSITE)
                 or sources.video.get(StreamId.US))
        self.reference = ReferenceSession(str(directory), sources.contours, video)
        return self.reference

    def clear_reference(self) -> None:
        self.reference = None

    def get_metrics(self) -> dict:
        if self.reference is None:
            raise NoReferenceSelected("no reference session selected")
        return dict(self.last_metrics or {"msd": None, "hausdorff": None})

    def get_status(self) -> dict:
        lat = {}
        for stage, hist in self._stage_hist.items():
            if hist:
                lat[stage] = {"last_ms": hist[-1] / 1e6,
                              "mean_ms": sum(hist) / len(hist) / 1e6}
        return {
            "bundles": self.bundle_count,
            "detect_failures": self.detect_failures,
            "weights": list(self.weights.as_tuple()),
            "reference": self.reference.directory if self.reference else None,
            "stalled": str(self.stalled) if self.stalled else None,
            "latency": lat,
            "calibrated": self.profile is not None,
        }

    # -- the per-bundle pipeline --

    def _ensure_profile(self, rgb: ImageFrame, us: ImageFrame) -> None:
        if self.profile is not None:
            return
        crop = CropRect(0, 0, us.width, us.height)
        try:
            self.profile = calibrate_from_frame(rgb, self.config.detector, crop)
        except (FewerThanTwoBlobs, AmbiguousBlobs, DegenerateMarkers):
            pass  # try again on the next bundle

    def _extract_contour(self, mask: np.ndarray) -> TongueContour:
        if self.config.contour_method == "skeleton":
            return skeleton_contour(skeletonize(mask))
        return extract_top_pixels(mask, self.config.contour_max_gap)

    def process(self) -> Iterator[PipelineResult]:
        """Yield one result per synchronized bundle.

        A stalled source ends the iteration and is left on self.stalled
        as a status fact rather than escaping as an exception.
        """
        bundles = pair(self.rgb_source, self.us_source, self.audio_source,
                       tolerance_us=self.config.tolerance_us,
                       stall_timeout_us=self.config.stall_timeout_us)
        try:
            for bundle in bundles:
                yield self._process_bundle(bundle)
        except SourceStalled as e:
            self.stalled = e
            return

    def _process_bundle(self, bundle: SyncedBundle) -> PipelineResult:
        rgb, us = bundle.rgb, bundle.us
        ts = bundle.bundle_ts_us
        stage_ns: dict = {}

        t0 = time.perf_counter_ns()
        markers: Optional[KeypointPair] = None
        try:
            markers = detect_markers(rgb, self.config.detector)
        except (FewerThanTwoBlobs, AmbiguousBlobs):
            self.detect_failures += 1
        stage_ns["detect"] = time.perf_counter_ns() - t0

        t0 = time.perf_counter_ns()
        self._ensure_profile(rgb, us)
        pose: Optional[Pose2D] = None
        if markers is not None and self.profile is not None:
            try:
                pose = pose_from_markers(markers, self.profile)
            except DegenerateMarkers:
                self.detect_failures += 1
        stage_ns["pose"] = time.perf_counter_ns() - t0

        t0 = time.perf_counter_ns()
        if self.profile is not None and self.profile.us_crop.within(us.dims):
            us_crop = apply_crop(us, self.profile.us_crop)
        else:
            us_crop = us
        seg = self.provider(us_crop)
        stage_ns["segment"] = time.perf_counter_ns() - t0

        t0 = time.perf_counter_ns()
        mask = binarize(seg, self.config.contour_threshold)
        contour = self._extract_contour(mask)
        pred_crop = ImageFrame(StreamId.PRED, ts, seg.to_gray(), PixelFormat.GRAY8)
        stage_ns["contour"] = time.perf_counter_ns() - t0

        t0 = time.perf_counter_ns()
        if pose is not None:
            t = overlay_transform(pose, self.profile)
            us_t = apply_transform(t, us_crop.with_timestamp(ts), rgb.dims, "bilinear")
            pred_t = apply_transform(t, pred_crop, rgb.dims, "bilinear")
        else:
            us_t = _transparent_layer(StreamId.US, ts, rgb.dims)
            pred_t = _transparent_layer(StreamId.PRED, ts, rgb.dims)
        stage_ns["warp"] = time.perf_counter_ns() - t0

        t0 = time.perf_counter_ns()
        comp = composite(rgb, us_t, pred_t, self.weights,
                         guideline=self.config.guideline and markers is not None,
                         markers=markers, mode=self.blend_mode)
        stage_ns["composite"] = time.perf_counter_ns() - t0

        ref = self.reference
        metrics = compare_with_reference(
            contour, ref.contour_for(self.bundle_count) if ref else None)
        metrics["audio_rms"] = bundle.audio.rms if bundle.audio else None
        metrics["skew_us"] = dict(bundle.skew_us)
        metrics["us_held"] = bundle.us_held
        metrics["bundle_ts_us"] = ts
        self.last_metrics = metrics

        for s, ns in stage_ns.items():
            self._stage_hist[s].append(ns)
        index = self.bundle_count
        self.bundle_count += 1
        return PipelineResult(index=index, bundle=bundle, markers=markers,
                              pose=pose, us_frame=us_t, pred_frame=pred_t,
                              composite_frame=comp, contour=contour,
                              metrics=metrics, stage_ns=stage_ns)


@dataclass
class RunStats:
    bundles: int
    elapsed_s: float
    bundles_per_s: float
    record_dir: Optional[str]
    manifest: Optional[session_io.SessionManifest]
    stalled: Optional[str]


def run_headless(config: PipelineConfig,
                 on_result: Optional[Callable[[PipelineResult], None]] = None) -> RunStats:
    """Drive the pipeline to exhaustion without a server.

    Records to config.record_dir when set. Kernels are warmed before the
    clock starts so the measured rate reflects steady state, not JIT
    compilation.
    """
    kernels.warm_up()
    pipeline = Pipeline(config)
    recorder = None
    if config.record_dir:
        session_id, created_at = config.session_identity()
        recorder = session_io.SessionRecorder(
            config.record_dir, config.record_outputs,
            calibration=None, config=config.canonical_dict(),
            session_id=session_id, created_at=created_at)
    started = time.perf_counter()
    count = 0
    try:
        for result in pipeline.process():
            if recorder is not None:
                if recorder.manifest.calibration is None and pipeline.profile is not None:
                    recorder.manifest.calibration = pipeline.profile.to_dict()
                recorder.write(result)
            if on_result is not None:
                on_result(result)
            count += 1
    finally:
        manifest = recorder.close() if recorder is not None else None
    elapsed = time.perf_counter() - started
    return RunStats(bundles=count, elapsed_s=elapsed,
                    bundles_per_s=count / elapsed if elapsed > 0 else float("inf"),
                    record_dir=config.record_dir, manifest=manifest,
                    stalled=str(pipeline.stalled) if pipeline.stalled else None)
