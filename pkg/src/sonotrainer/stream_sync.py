"""Multi-stream alignment: RGB master clock, nearest ultrasound frame,
covering audio chunk.

The pairer is a pure generator over per-stream iterators, so replaying
the same inputs reproduces the same bundle sequence. Live capture wraps
each device in a thread feeding a bounded drop-oldest queue; the queue
iterator raises SourceStalled on wall-clock silence, while the pairer
additionally detects stalls in stream time (master timestamp running
away from the newest ultrasound timestamp).
"""

from __future__ import annotations

import queue
import threading
import time
from collections import deque
from dataclasses import dataclass, field
from typing import Iterable, Iterator, Optional

from .errors import ConfigInvalid, SourceStalled
from .frames import AudioChunk, ImageFrame, StreamId
from . import synthetic

# half of two 30 fps periods: a frame is "fresh" within half a period either side
DEFAULT_TOLERANCE_US = 16_667
DEFAULT_STALL_TIMEOUT_US = 500_000
QUEUE_CAPACITY = 8


@dataclass(frozen=True)
class SyncedBundle:
    """One aligned tuple of streams. bundle_ts_us is the RGB timestamp
    (RGB is the master clock); us_held marks a reused ultrasound frame
    whose skew exceeded tolerance (hold-last policy)."""

    rgb: ImageFrame
    us: ImageFrame
    audio: Optional[AudioChunk]
    bundle_ts_us: int
    skew_us: dict = field(default_factory=dict)
    us_held: bool = False


def pair(rgb_frames: Iterable[ImageFrame], us_frames: Iterable[ImageFrame],
         audio_chunks: Optional[Iterable[AudioChunk]] = None,
         tolerance_us: int = DEFAULT_TOLERANCE_US,
         stall_timeout_us: int = DEFAULT_STALL_TIMEOUT_US) -> Iterator[SyncedBundle]:
    """Emit one bundle per RGB frame, pairing the |dt|-closest ultrasound
    frame.

    When the closest frame is farther than tolerance the last paired
    frame is reused (held) so the overlay never flickers; the signed skew
    is surfaced either way. If the master clock runs more than
    stall_timeout_us past the newest ultrasound timestamp the source is
    declared stalled. Audio is attached when a chunk covers the bundle
    timestamp.
    """
    us_it = iter(us_frames)
    audio_it = iter(audio_chunks) if audio_chunks is not None else None
    us_buf: deque[ImageFrame] = deque()
    audio_buf: deque[AudioChunk] = deque()
    us_done = False
    audio_done = audio_it is None
    newest_us_ts: Optional[int] = None
    last_us: Optional[ImageFrame] = None
    prev_ts: Optional[int] = None

    for rgb in rgb_frames:
        t = rgb.timestamp_us
        if prev_ts is not None and t <= prev_ts:
            raise ValueError(f"RGB timestamps not strictly increasing: {prev_ts} -> {t}")
        prev_ts = t

        # pull ultrasound frames until one is at/past the master timestamp
        while not us_done and (not us_buf or us_buf[-1].timestamp_us < t):
            try:
                frame = next(us_it)
            except StopIteration:
                us_done = True
                break
            us_buf.append(frame)
            newest_us_ts = frame.timestamp_us

        gap = t - (newest_us_ts if newest_us_ts is not None else 0)
        if gap > stall_timeout_us:
            raise SourceStalled("US", gap)

        held = False
        if us_buf:
            best = min(us_buf, key=lambda f: abs(f.timestamp_us - t))
            delta = best.timestamp_us - t
            if abs(delta) <= tolerance_us or (last_us is None and delta < 0):
                paired, skew = best, delta
                held = abs(delta) > tolerance_us
                last_us = best
                while us_buf and us_buf[0].timestamp_us < best.timestamp_us:
                    us_buf.popleft()
            elif last_us is not None:
                paired, skew, held = last_us, last_us.timestamp_us - t, True
            else:
                # only future frames beyond tolerance and nothing paired yet:
                # pairing would break the no-future-pairing guarantee, so wait
                continue
        elif last_us is not None:
            paired, skew, held = last_us, last_us.timestamp_us - t, True
        else:
            # no ultrasound frame has ever arrived; wait for the stall timeout
            continue

        # audio: pull until a chunk ends at/after t, attach the covering one
        while not audio_done and (not audio_buf
                                  or audio_buf[-1].timestamp_us + audio_buf[-1].duration_us <= t):
            try:
                audio_buf.append(next(audio_it))  # type: ignore[arg-type]
            except StopIteration:
                audio_done = True
        while audio_buf and audio_buf[0].timestamp_us + audio_buf[0].duration_us <= t:
            audio_buf.popleft()
        chunk = None
        if audio_buf and audio_buf[0].timestamp_us <= t:
            chunk = audio_buf[0]

        skews = {"US": int(skew)}
        if chunk is not None:
            skews["AUDIO"] = 0
        yield SyncedBundle(rgb=rgb, us=paired, audio=chunk, bundle_ts_us=t,
                           skew_us=skews, us_held=held)


# ---------------------------------------------------------------------------
# frame sources
# ---------------------------------------------------------------------------

def frame_timestamp(index: int, fps: int, offset_us: int = 0) -> int:
    """Integer-division timestamp policy: index * 1e6 // fps plus offset."""
    return offset_us + index * 1_000_000 // fps


class SyntheticRgbSource:
    """Deterministic camera stand-in: gray frames with two drifting markers."""

    stream_id = StreamId.RGB

    def __init__(self, frames: int = 90, fps: int = 30, width: int = 640,
                 height: int = 480, seed: int = 7, offset_us: int = 0):
        if frames < 0 or fps <= 0:
            raise ConfigInvalid("synthetic source needs frames >= 0 and fps > 0")
        self.frames = frames
        self.fps = fps
        self.width = width
        self.height = height
        self.seed = seed
        self.offset_us = offset_us

    def __iter__(self) -> Iterator[ImageFrame]:
        for i in range(self.frames):
            ts = frame_timestamp(i, self.fps, self.offset_us)
            yield synthetic.synthetic_rgb_frame(i, ts, self.width, self.height, self.seed)


class SyntheticUsSource:
    """Deterministic ultrasound stand-in rendered from the band generator."""

    stream_id = StreamId.US

    def __init__(self, frames: int = 90, fps: int = 30, width: int = 256,
                 height: int = 256, seed: int = 11, offset_us: int = 0,
                 noise_level: float = 0.05):
        if frames < 0 or fps <= 0:
            raise ConfigInvalid("synthetic source needs frames >= 0 and fps > 0")
        self.frames = frames
        self.fps = fps
        self.width = width
        self.height = height
        self.seed = seed
        self.offset_us = offset_us
        self.noise_level = noise_level

    def __iter__(self) -> Iterator[ImageFrame]:
        for i in range(self.frames):
            ts = frame_timestamp(i, self.fps, self.offset_us)
            frame, _ = synthetic.synthetic_us_frame(i, ts, self.width, self.height,
                                                    self.seed, self.noise_level)
            yield frame


class SyntheticAudioSource:
    """One tone chunk per video frame period."""

    def __init__(self, chunks: int = 90, fps: int = 30, sample_rate_hz: int = 16_000,
                 seed: int = 5, offset_us: int = 0):
        self.chunks = chunks
        self.fps = fps
        self.sample_rate_hz = sample_rate_hz
        self.seed = seed
        self.offset_us = offset_us
        self.samples_per_chunk = sample_rate_hz // fps

    def __iter__(self) -> Iterator[AudioChunk]:
        for i in range(self.chunks):
            ts = frame_timestamp(i, self.fps, self.offset_us)
            yield synthetic.synthetic_audio_chunk(i, ts, self.sample_rate_hz,
                                                  self.samples_per_chunk, self.seed)


class StubSource:
    """Push-based stand-in for a live device.

    A network agent (or a test) pushes timestamped frames in; iteration
    blocks until the next frame arrives, ends cleanly once the stub is
    closed and drained, and raises SourceStalled when the pusher goes
    quiet for the stall window. Timestamps must be strictly increasing.
    """

    def __init__(self, descriptor: str, stream_id: StreamId = StreamId.US,
                 stall_timeout_us: int = DEFAULT_STALL_TIMEOUT_US):
        self.descriptor = descriptor
        self.stream_id = stream_id
        self.stall_timeout_us = stall_timeout_us
        self._frames: deque[ImageFrame] = deque()
        self._cond = threading.Condition()
        self._closed = False
        self._last_ts: Optional[int] = None

    def push(self, frame: ImageFrame) -> None:
        with self._cond:
            if self._closed:
                raise RuntimeError(f"stub source {self.descriptor} is closed")
            if self._last_ts is not None and frame.timestamp_us <= self._last_ts:
                raise ValueError("pushed timestamps must be strictly increasing")
            self._last_ts = frame.timestamp_us
            self._frames.append(frame)
            self._cond.notify_all()

    def close(self) -> None:
        with self._cond:
            self._closed = True
            self._cond.notify_all()

    def __iter__(self) -> Iterator[ImageFrame]:
        while True:
            with self._cond:
                deadline = time.monotonic() + self.stall_timeout_us / 1e6
                while not self._frames and not self._closed:
                    remaining = deadline - time.monotonic()
                    if remaining <= 0:
                        raise SourceStalled(f"stub:{self.descriptor}",
                                            self.stall_timeout_us)
                    self._cond.wait(remaining)
                if not self._frames:
                    return  # closed and drained
                frame = self._frames.popleft()
            yield frame


def parse_source_spec(spec: str) -> tuple[str, dict]:
    """Parse ``kind:key=value,...`` CLI source specs.

    Examples: ``synthetic:rgb,frames=90,seed=7``, ``replay:/path/dir``,
    ``stub:probe0``.
    """
    kind, _, rest = spec.partition(":")
    kind = kind.strip()
    params: dict = {}
    if kind == "replay":
        params["dir"] = rest
        return kind, params
    if kind == "stub":
        params["id"] = rest
        return kind, params
    if kind == "synthetic":
        parts = [p for p in rest.split(",") if p]
        for p in parts:
            if "=" in p:
                k, v = p.split("=", 1)
                params[k.strip()] = v.strip()
            else:
                params["stream"] = p.strip()
        return kind, params
    raise ConfigInvalid(f"unknown source kind {kind!r} in {spec!r}")


def make_source(kind: str, config: dict):
    """Build a frame/audio source from a parsed spec.

    kind 'synthetic' reads stream (rgb|us|audio), frames, fps, dims, seed;
    'replay' reads dir and stream; 'stub' reads id. Unknown kinds and
    malformed parameters raise ConfigInvalid.
    """
    if kind == "synthetic":
        stream = str(config.get("stream", "rgb")).lower()
        try:
            common = {
                "frames": int(config.get("frames", 90)),
                "fps": int(config.get("fps", 30)),
                "seed": int(config.get("seed", 7)),
                "offset_us": int(config.get("offset", config.get("offset_us", 0))),
            }
            if stream == "rgb":
                return SyntheticRgbSource(width=int(config.get("width", 640)),
                                          height=int(config.get("height", 480)), **common)
            if stream == "us":
                return SyntheticUsSource(width=int(config.get("width", 256)),
                                         height=int(config.get("height", 256)),
                                         noise_level=float(config.get("noise", 0.05)),
                                         **common)
            if stream == "audio":
                return SyntheticAudioSource(
                    chunks=common["frames"], fps=common["fps"], seed=common["seed"],
                    offset_us=common["offset_us"],
                    sample_rate_hz=int(config.get("rate", 16_000)))
        except ValueError as e:
            raise ConfigInvalid(f"bad synthetic source parameter: {e}") from e
        raise ConfigInvalid(f"unknown synthetic stream {stream!r}")
    if kind == "replay":
        from . import session_io
        stream = str(config.get("stream", "")).upper()
        sources = session_io.replay(config["dir"])
        if stream in ("", "RGB"):
            return sources.video[StreamId.RGB]
        if stream == "AUDIO":
            return sources.audio
        return sources.video[StreamId[stream]]
    if kind == "stub":
        return StubSource(config.get("id", "stub"))
    raise ConfigInvalid(f"unknown source kind {kind!r}")


def make_source_from_spec(spec: str, stream: Optional[str] = None):
    kind, params = parse_source_spec(spec)
    if stream is not None and kind == "synthetic":
        params.setdefault("stream", stream)
    if stream is not None and kind == "replay":
        params.setdefault("stream", stream)
    return make_source(kind, params)


# ---------------------------------------------------------------------------
# bounded queues for live capture threads
# ---------------------------------------------------------------------------

class BoundedFrameQueue:
    """Drop-oldest queue connecting a capture thread to the pairer.

    Overflow evicts the oldest entry and counts it; the pairer therefore
    always sees the freshest frames at the cost of gaps, which the skew
    fields make visible.
    """

    _DONE = object()

    def __init__(self, capacity: int = QUEUE_CAPACITY, name: str = ""):
        # one extra slot is reserved for the end-of-stream sentinel so
        # closing never evicts a real frame
        self._capacity = capacity
        self._q: queue.Queue = queue.Queue(maxsize=capacity + 1)
        self.name = name
        self.dropped = 0
        self._lock = threading.Lock()

    def put(self, item) -> None:
        while self._q.qsize() >= self._capacity:
            try:
                self._q.get_nowait()
                with self._lock:
                    self.dropped += 1
            except queue.Empty:
                break
        self._q.put_nowait(item)

    def close(self) -> None:
        self._q.put_nowait(self._DONE)

    def __iter__(self) -> Iterator:
        """Blocking iterator with a wall-clock stall guard."""
        while True:
            try:
                item = self._q.get(timeout=DEFAULT_STALL_TIMEOUT_US / 1e6)
            except queue.Empty:
                raise SourceStalled(self.name or "queue", DEFAULT_STALL_TIMEOUT_US)
            if item is self._DONE:
                return
            yield item


def feed_queue(source, q: BoundedFrameQueue) -> threading.Thread:
    """Pump a source into a queue on a daemon thread, closing it at EOS."""

    def run():
        try:
            for item in source:
                q.put(item)
        finally:
            q.close()

    t = threading.Thread(target=run, daemon=True, name=f"feed-{q.name}")
    t.start()
    return t
