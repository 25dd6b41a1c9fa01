"""Lossless session recording and bit-exact replay.

A session directory holds one PNG per frame per stream
(``<STREAM>/<ordinal>.png``), audio as PCM16 WAV, contours as JSON-lines
keyed by bundle timestamp, and a ``manifest.json`` indexing every frame
with its timestamp and file CRC32. Lossless storage is what makes the
round-trip identity property (record -> replay -> record equality) hold,
and the CRCs are what let replay refuse a silently truncated file.

The recorder rewrites the manifest roughly once per second of stream
time, so a crash costs at most the trailing second.
"""

from __future__ import annotations

import errno
import io
import json
import os
import uuid
import wave
import zlib
from dataclasses import dataclass, field
from datetime import datetime, timezone
from pathlib import Path
from typing import Iterable, Optional

import numpy as np
from PIL import Image

from .errors import DirNotWritable, DiskFull, ManifestCorrupt, SessionNotFound
from .frames import AudioChunk, ImageFrame, PixelFormat, StreamId
from .tongue_contour import TongueContour, contour_to_record, load_contour_records

MANIFEST_NAME = "manifest.json"
CONTOURS_NAME = "contours.jsonl"
AUDIO_NAME = "audio.wav"
VIDEO_OUTPUTS = ("RGB", "US", "PRED", "COMPOSITE")
ALL_OUTPUTS = VIDEO_OUTPUTS + ("CONTOURS", "AUDIO")
FLUSH_INTERVAL_US = 1_000_000


@dataclass
class StreamDescriptor:
    pixel_format: str
    width: int
    height: int
    frames: list = field(default_factory=list)  # [[timestamp_us, crc32], ...]

    @property
    def frame_count(self) -> int:
        return len(self.frames)

    def to_dict(self) -> dict:
        return {"pixel_format": self.pixel_format, "width": self.width,
                "height": self.height, "frame_count": self.frame_count,
                "frames": self.frames}


@dataclass
class AudioDescriptor:
    sample_rate_hz: int
    sample_count: int = 0
    crc32: int = 0
    chunks: list = field(default_factory=list)  # [[timestamp_us, n_samples], ...]

    def to_dict(self) -> dict:
        return {"sample_rate_hz": self.sample_rate_hz, "sample_count": self.sample_count,
                "crc32": self.crc32, "chunks": self.chunks}


@dataclass
class SessionManifest:
    session_id: str
    created_at: str
    streams: dict
    audio: Optional[AudioDescriptor] = None
    calibration: Optional[dict] = None
    config: Optional[dict] = None
    contour_count: int = 0

    def to_dict(self) -> dict:
        return {
            "session_id": self.session_id,
            "created_at": self.created_at,
            "streams": {k: v.to_dict() for k, v in self.streams.items()},
            "audio": self.audio.to_dict() if self.audio else None,
            "calibration": self.calibration,
            "config": self.config,
            "contour_count": self.contour_count,
        }

    @classmethod
    def from_dict(cls, d: dict) -> "SessionManifest":
        streams = {}
        for name, sd in (d.get("streams") or {}).items():
            streams[name] = StreamDescriptor(
                pixel_format=sd["pixel_format"], width=int(sd["width"]),
                height=int(sd["height"]), frames=[list(f) for f in sd["frames"]])
            if sd.get("frame_count", len(streams[name].frames)) != len(streams[name].frames):
                raise ManifestCorrupt(f"stream {name}: frame_count disagrees with index")
        audio = None
        if d.get("audio"):
            a = d["audio"]
            audio = AudioDescriptor(int(a["sample_rate_hz"]), int(a["sample_count"]),
                                    int(a["crc32"]), [list(c) for c in a["chunks"]])
        return cls(session_id=d["session_id"], created_at=d["created_at"],
                   streams=streams, audio=audio, calibration=d.get("calibration"),
                   config=d.get("config"), contour_count=int(d.get("contour_count", 0)))


def _frame_path(root: Path, stream: str, ordinal: int) -> Path:
    return root / stream / f"{ordinal:06d}.png"


def _encode_png(frame: ImageFrame) -> bytes:
    mode = "L" if frame.pixel_format is PixelFormat.GRAY8 else "RGB"
    buf = io.BytesIO()
    Image.fromarray(frame.pixels, mode=mode).save(buf, format="PNG")
    return buf.getvalue()


def _decode_png(data: bytes, pixel_format: PixelFormat) -> np.ndarray:
    img = Image.open(io.BytesIO(data))
    arr = np.asarray(img)
    want = 2 if pixel_format is PixelFormat.GRAY8 else 3
    if arr.ndim != want and not (want == 3 and arr.ndim == 3 and arr.shape[2] == 3):
        raise ManifestCorrupt(f"decoded PNG shape {arr.shape} does not match {pixel_format.name}")
    return arr


def _write_guard(path: Path, data: bytes) -> None:
    try:
        path.write_bytes(data)
    except OSError as e:
        if e.errno == errno.ENOSPC:
            raise DiskFull(str(path)) from e
        raise


class SessionRecorder:
    """Incremental recorder; feed it pipeline results and close it."""

    def __init__(self, directory, outputs: Iterable[str],
                 calibration: Optional[dict] = None, config: Optional[dict] = None,
                 session_id: Optional[str] = None, created_at: Optional[str] = None):
        self.outputs = {o.upper() for o in outputs}
        unknown = self.outputs - set(ALL_OUTPUTS)
        if unknown:
            raise ValueError(f"unknown outputs {sorted(unknown)}")
        if not self.outputs:
            raise ValueError("at least one output must be selected")

        self.root = Path(directory)
        try:
            self.root.mkdir(parents=True, exist_ok=True)
            probe = self.root / ".write-probe"
            probe.write_bytes(b"")
            probe.unlink()
        except OSError as e:
            raise DirNotWritable(f"{self.root}: {e}") from e

        self.manifest = SessionManifest(
            session_id=session_id or uuid.uuid4().hex,
            created_at=created_at or datetime.now(timezone.utc).isoformat(),
            streams={}, calibration=calibration, config=config)
        self._contours_fh = None
        self._wav = None
        self._wav_fh = None
        self._audio_crc = 0
        self._last_flush_ts: Optional[int] = None
        self._closed = False

    def _stream_for(self, name: str, frame: ImageFrame) -> StreamDescriptor:
        sd = self.manifest.streams.get(name)
        if sd is None:
            sd = StreamDescriptor(frame.pixel_format.name, frame.width, frame.height)
            self.manifest.streams[name] = sd
            (self.root / name).mkdir(exist_ok=True)
        elif (sd.width, sd.height) != (frame.width, frame.height):
            raise ValueError(f"stream {name} dims changed mid-session")
        return sd

    def _write_frame(self, name: str, frame: ImageFrame) -> None:
        sd = self._stream_for(name, frame)
        data = _encode_png(frame)
        _write_guard(_frame_path(self.root, name, sd.frame_count), data)
        sd.frames.append([frame.timestamp_us, zlib.crc32(data)])

    def _write_audio(self, chunk: AudioChunk) -> None:
        if self._wav is None:
            self._wav_fh = open(self.root / AUDIO_NAME, "wb")
            self._wav = wave.open(self._wav_fh, "wb")
            self._wav.setnchannels(1)
            self._wav.setsampwidth(2)
            self._wav.setframerate(chunk.sample_rate_hz)
            self.manifest.audio = AudioDescriptor(chunk.sample_rate_hz)
        a = self.manifest.audio
        if a.chunks and a.chunks[-1][0] == chunk.timestamp_us:
            return  # same covering chunk attached to a later bundle
        raw = chunk.samples.tobytes()
        self._wav.writeframes(raw)
        self._audio_crc = zlib.crc32(raw, self._audio_crc)
        a.sample_count += len(chunk.samples)
        a.chunks.append([chunk.timestamp_us, len(chunk.samples)])

    def write(self, result) -> None:
        """Record one pipeline result (or bare SyncedBundle)."""
        if self._closed:
            raise RuntimeError("recorder already closed")
        bundle = getattr(result, "bundle", result)
        ts = bundle.bundle_ts_us
        if "RGB" in self.outputs:
            self._write_frame("RGB", bundle.rgb.with_timestamp(ts))
        if "US" in self.outputs:
            self._write_frame("US", bundle.us.with_timestamp(ts))
        pred = getattr(result, "pred_frame", None)
        if "PRED" in self.outputs and pred is not None:
            self._write_frame("PRED", pred.with_timestamp(ts))
        comp = getattr(result, "composite_frame", None)
        if "COMPOSITE" in self.outputs and comp is not None:
            self._write_frame("COMPOSITE", comp.with_timestamp(ts))
        contour = getattr(result, "contour", None)
        if "CONTOURS" in self.outputs and contour is not None:
            if self._contours_fh is None:
                self._contours_fh = open(self.root / CONTOURS_NAME, "w")
            self._contours_fh.write(contour_to_record(ts, contour) + "\n")
            self.manifest.contour_count += 1
        if "AUDIO" in self.outputs and bundle.audio is not None:
            self._write_audio(bundle.audio)

        if self._last_flush_ts is None:
            self._last_flush_ts = ts
        elif ts - self._last_flush_ts >= FLUSH_INTERVAL_US:
            self.flush()
            self._last_flush_ts = ts

    def flush(self) -> None:
        """Persist the manifest (atomically) and sync stream files."""
        if self._contours_fh:
            self._contours_fh.flush()
        if self._wav_fh:
            self._wav_fh.flush()
        if self.manifest.audio:
            self.manifest.audio.crc32 = self._audio_crc
        tmp = self.root / (MANIFEST_NAME + ".tmp")
        _write_guard(tmp, (json.dumps(self.manifest.to_dict(), indent=2) + "\n").encode())
        os.replace(tmp, self.root / MANIFEST_NAME)

    def close(self) -> SessionManifest:
        if self._closed:
            return self.manifest
        self._closed = True
        if self._wav:
            self._wav.close()
            self._wav_fh.close()
            self._wav = self._wav_fh = None
        if self._contours_fh:
            self._contours_fh.close()
            self._contours_fh = None
        self.flush()
        return self.manifest


def record(results: Iterable, outputs: Iterable[str], directory, **kwargs) -> SessionManifest:
    """Drain an iterable of results into a session directory."""
    rec = SessionRecorder(directory, outputs, **kwargs)
    try:
        for r in results:
            rec.write(r)
    finally:
        manifest = rec.close()
    return manifest


# ---------------------------------------------------------------------------
# replay
# ---------------------------------------------------------------------------

class ReplayVideoSource:
    """Re-emits a recorded stream with its exact timestamps."""

    def __init__(self, root: Path, name: str, descriptor: StreamDescriptor):
        self.root = root
        self.name = name
        self.descriptor = descriptor
        self.stream_id = StreamId[name] if name in StreamId.__members__ else StreamId.REF

    def __len__(self) -> int:
        return self.descriptor.frame_count

    def frame(self, ordinal: int) -> ImageFrame:
        ts, crc = self.descriptor.frames[ordinal]
        path = _frame_path(self.root, self.name, ordinal)
        try:
            data = path.read_bytes()
        except FileNotFoundError as e:
            raise ManifestCorrupt(f"stream {self.name}: missing frame file {path.name}") from e
        if zlib.crc32(data) != crc:
            raise ManifestCorrupt(f"stream {self.name}: CRC mismatch on {path.name}")
        fmt = PixelFormat[self.descriptor.pixel_format]
        return ImageFrame(self.stream_id, int(ts), _decode_png(data, fmt), fmt)

    def __iter__(self):
        for i in range(len(self)):
            yield self.frame(i)


class ReplayAudioSource:
    """Re-emits recorded audio with the original chunk boundaries."""

    def __init__(self, root: Path, descriptor: AudioDescriptor):
        self.descriptor = descriptor
        with wave.open(str(root / AUDIO_NAME), "rb") as wf:
            raw = wf.readframes(wf.getnframes())
        if zlib.crc32(raw) != descriptor.crc32:
            raise ManifestCorrupt("audio: CRC mismatch")
        self.samples = np.frombuffer(raw, dtype=np.int16)
        if len(self.samples) != descriptor.sample_count:
            raise ManifestCorrupt("audio: sample count disagrees with manifest")

    def __iter__(self):
        pos = 0
        for ts, n in self.descriptor.chunks:
            yield AudioChunk(int(ts), self.descriptor.sample_rate_hz,
                             self.samples[pos:pos + n])
            pos += n


@dataclass
class ReplaySources:
    manifest: SessionManifest
    video: dict
    audio: Optional[ReplayAudioSource]
    contours: list

    @property
    def directory(self) -> Path:
        return self._directory

    _directory: Path = field(default=Path("."), repr=False)


def load_manifest(directory) -> SessionManifest:
    root = Path(directory)
    path = root / MANIFEST_NAME
    if not path.is_file():
        raise SessionNotFound(f"no {MANIFEST_NAME} in {root}")
    try:
        manifest = SessionManifest.from_dict(json.loads(path.read_text()))
    except (json.JSONDecodeError, KeyError, ValueError) as e:
        raise ManifestCorrupt(f"unreadable manifest: {e}") from e
    for name, sd in manifest.streams.items():
        ts = [f[0] for f in sd.frames]
        if any(b <= a for a, b in zip(ts, ts[1:])):
            raise ManifestCorrupt(f"stream {name}: timestamps not strictly increasing")
    return manifest


def replay(directory, verify: bool = True) -> ReplaySources:
    """Open a session for replay.

    With ``verify`` (the default) every indexed file is CRC-checked up
    front, so corruption surfaces before any frame is consumed.
    """
    root = Path(directory)
    manifest = load_manifest(root)
    if verify:
        report = verify_session(root, manifest=manifest)
        if not report["ok"]:
            raise ManifestCorrupt("; ".join(report["errors"]))
    video = {}
    for name, sd in manifest.streams.items():
        src = ReplayVideoSource(root, name, sd)
        video[src.stream_id] = src
    audio = ReplayAudioSource(root, manifest.audio) if manifest.audio else None
    contours = []
    if manifest.contour_count:
        contours = load_contour_records(root / CONTOURS_NAME)
    return ReplaySources(manifest=manifest, video=video, audio=audio,
                         contours=contours, _directory=root)


def verify_session(directory, manifest: Optional[SessionManifest] = None) -> dict:
    """Integrity report: per-stream counts plus every CRC/count mismatch."""
    root = Path(directory)
    if manifest is None:
        manifest = load_manifest(root)
    errors = []
    counts = {}
    for name, sd in manifest.streams.items():
        counts[name] = sd.frame_count
        for i, (ts, crc) in enumerate(sd.frames):
            path = _frame_path(root, name, i)
            if not path.is_file():
                errors.append(f"stream {name}: missing {path.name}")
                continue
            if zlib.crc32(path.read_bytes()) != crc:
                errors.append(f"stream {name}: CRC mismatch on {path.name}")
        on_disk = len(list((root / name).glob("*.png"))) if (root / name).is_dir() else 0
        if on_disk != sd.frame_count:
            errors.append(f"stream {name}: {on_disk} files on disk, "
                          f"{sd.frame_count} in manifest")
    if manifest.audio:
        wav_path = root / AUDIO_NAME
        if not wav_path.is_file():
            errors.append("audio: missing audio.wav")
        else:
            try:
                with wave.open(str(wav_path), "rb") as wf:
                    raw = wf.readframes(wf.getnframes())
                if zlib.crc32(raw) != manifest.audio.crc32:
                    errors.append("audio: CRC mismatch")
            except wave.Error as e:
                errors.append(f"audio: unreadable ({e})")
    if manifest.contour_count:
        cp = root / CONTOURS_NAME
        if not cp.is_file():
            errors.append("contours: missing contours.jsonl")
        else:
            n = sum(1 for line in cp.read_text().splitlines() if line.strip())
            if n != manifest.contour_count:
                errors.append(f"contours: {n} records on disk, "
                              f"{manifest.contour_count} in manifest")
    return {"ok": not errors, "errors": errors, "streams": counts,
            "session_id": manifest.session_id}
