"""WebSocket service: publishes pipeline output, answers control messages.

The pipeline runs on a worker thread; each result is handed to the
asyncio side, encoded once, and fanned out to per-subscriber bounded
queues. A slow client drops whole bundles from its own queue (counted,
reported in get_status) and never stalls the pipeline or other clients.
Freeze is applied here at the publication layer: sources and recording
continue while subscribers keep receiving the frozen frames.

Clients may also push binary ultrasound frames up the same connection;
they are routed into a stub source when the config uses one, which is
how a remote ultrasound-side agent feeds a live device in.
"""

from __future__ import annotations

import asyncio
import threading
import time
from collections import deque
from typing import Optional

from websockets.asyncio.server import serve
from websockets.exceptions import ConnectionClosed

from . import kernels, protocol, session_io
from .errors import (ConfigInvalid, ManifestCorrupt, NoReferenceSelected,
                     ProtocolError, SessionNotFound, SonotrainerError)
from .frames import ImageFrame, StreamId
from .pipeline import Pipeline, PipelineConfig, PipelineResult
from .stream_sync import StubSource

SUBSCRIBER_QUEUE_BUNDLES = 8


class _Subscriber:
    """One connected client's outgoing bundle queue (drop-oldest)."""

    def __init__(self):
        self.queue: deque = deque()
        self.ready = asyncio.Event()
        self.dropped = 0

    def push(self, item) -> None:
        if len(self.queue) >= SUBSCRIBER_QUEUE_BUNDLES:
            self.queue.popleft()
            self.dropped += 1
        self.queue.append(item)
        self.ready.set()


class TrainerService:
    """Owns the pipeline thread, the socket server, and the control plane."""

    def __init__(self, config: PipelineConfig, host: str = "127.0.0.1",
                 port: int = 8765):
        self.config = config
        self.pipeline = Pipeline(config)
        self.host = host
        self.port = port
        self._server = None
        self._loop: Optional[asyncio.AbstractEventLoop] = None
        self._subscribers: set[_Subscriber] = set()
        self._stop = threading.Event()
        self._worker: Optional[threading.Thread] = None
        self._rec_lock = threading.Lock()
        self._recorder: Optional[session_io.SessionRecorder] = None
        self._record_dir: Optional[str] = None
        self.frozen = False
        self._frozen_item: Optional[dict] = None
        self._last_result: Optional[tuple] = None
        self.published = 0
        self.ended = False

    # ------------------------------------------------------------------
    # lifecycle
    # ------------------------------------------------------------------

    async def start(self) -> None:
        self._loop = asyncio.get_running_loop()
        self._server = await serve(self._handle, self.host, self.port)
        sock = next(iter(self._server.sockets))
        self.port = sock.getsockname()[1]
        if self.config.record_dir:
            self._start_recorder(self.config.record_dir)
        self._worker = threading.Thread(target=self._pipeline_worker,
                                        name="pipeline", daemon=True)
        self._worker.start()

    async def stop(self) -> None:
        self._stop.set()
        if self._worker is not None:
            await asyncio.to_thread(self._worker.join, 10.0)
        with self._rec_lock:
            if self._recorder is not None:
                self._recorder.close()
                self._recorder = None
        if self._server is not None:
            self._server.close()
            await self._server.wait_closed()

    @property
    def url(self) -> str:
        return f"ws://{self.host}:{self.port}"

    # ------------------------------------------------------------------
    # pipeline thread
    # ------------------------------------------------------------------

    def _pipeline_worker(self) -> None:
        kernels.warm_up()
        start_wall: Optional[float] = None
        try:
            for result in self.pipeline.process():
                if self._stop.is_set():
                    break
                with self._rec_lock:
                    if self._recorder is not None:
                        if (self._recorder.manifest.calibration is None
                                and self.pipeline.profile is not None):
                            self._recorder.manifest.calibration = self.pipeline.profile.to_dict()
                        self._recorder.write(result)
                if self.config.pace:
                    ts_s = result.bundle.bundle_ts_us / 1e6
                    if start_wall is None:
                        start_wall = time.monotonic() - ts_s
                    delay = start_wall + ts_s - time.monotonic()
                    if delay > 0:
                        time.sleep(delay)
                ref_frame = None
                if self.pipeline.reference is not None:
                    try:
                        ref_frame = self.pipeline.reference.frame_for(result.index)
                    except ManifestCorrupt:
                        ref_frame = None
                if self._loop is not None:
                    self._loop.call_soon_threadsafe(self._publish, result, ref_frame)
        finally:
            if self._loop is not None:
                self._loop.call_soon_threadsafe(self._publish_end)

    # ------------------------------------------------------------------
    # publication (loop thread)
    # ------------------------------------------------------------------

    def _encode_item(self, result: PipelineResult,
                     ref_frame: Optional[ImageFrame]) -> dict:
        frames = [protocol.encode_frame(result.bundle.rgb),
                  protocol.encode_frame(result.us_frame),
                  protocol.encode_frame(result.pred_frame),
                  protocol.encode_frame(result.composite_frame)]
        if ref_frame is not None:
            frames.append(protocol.encode_frame(ref_frame))
        return {"frames": frames}

    def _publish(self, result: PipelineResult, ref_frame: Optional[ImageFrame]) -> None:
        self._last_result = (result, ref_frame)
        self.published += 1
        if not self._subscribers:
            return
        if self.frozen and self._frozen_item is not None:
            frames = self._frozen_item["frames"]
        else:
            frames = self._encode_item(result, ref_frame)["frames"]
        metrics = protocol.event("metrics", index=result.index, **result.metrics)
        item = {"frames": frames, "events": [metrics]}
        for sub in self._subscribers:
            sub.push(item)

    def _publish_end(self) -> None:
        self.ended = True
        detail = str(self.pipeline.stalled) if self.pipeline.stalled else None
        kind = "source_stalled" if self.pipeline.stalled else "end"
        msg = protocol.event("status", event=kind, detail=detail,
                             bundles=self.pipeline.bundle_count)
        for sub in self._subscribers:
            sub.push({"frames": [], "events": [msg]})

    # ------------------------------------------------------------------
    # connection handling
    # ------------------------------------------------------------------

    async def _handle(self, ws) -> None:
        sub = _Subscriber()
        self._subscribers.add(sub)
        sender = asyncio.create_task(self._sender(ws, sub))
        try:
            async for message in ws:
                if isinstance(message, (bytes, bytearray)):
                    await self._handle_binary(ws, bytes(message))
                else:
                    reply = await self._handle_control(message)
                    await ws.send(reply)
        except ConnectionClosed:
            pass
        finally:
            self._subscribers.discard(sub)
            sender.cancel()

    async def _sender(self, ws, sub: _Subscriber) -> None:
        try:
            while True:
                await sub.ready.wait()
                sub.ready.clear()
                while sub.queue:
                    item = sub.queue.popleft()
                    for frame in item["frames"]:
                        await ws.send(frame)
                    for ev in item["events"]:
                        await ws.send(ev)
        except (ConnectionClosed, asyncio.CancelledError):
            pass

    async def _handle_binary(self, ws, data: bytes) -> None:
        try:
            frame = protocol.decode_frame(data)
        except ProtocolError as e:
            await ws.send(protocol.event("error", message=str(e)))
            return
        source = self.pipeline.us_source if frame.stream_id is StreamId.US else None
        if isinstance(source, StubSource):
            try:
                source.push(frame)
            except (ValueError, RuntimeError) as e:
                await ws.send(protocol.event("error", message=str(e)))
        else:
            await ws.send(protocol.event(
                "error", message=f"no stub source accepts pushed "
                                 f"{frame.stream_id.name} frames"))

    # ------------------------------------------------------------------
    # control plane
    # ------------------------------------------------------------------

    async def _handle_control(self, text: str) -> str:
        try:
            msg = protocol.parse_control(text)
        except ProtocolError as e:
            return protocol.reply_error(None, "ProtocolError", str(e))
        msg_id = msg.get("id")
        mtype = msg.get("type")
        try:
            if mtype == "set_weights":
                w = self.pipeline.set_weights(msg["weights"])
                return protocol.reply_ok(msg_id, weights=list(w.as_tuple()))
            if mtype == "freeze":
                self._freeze()
                return protocol.reply_ok(msg_id, frozen=True)
            if mtype == "unfreeze":
                self.frozen = False
                self._frozen_item = None
                return protocol.reply_ok(msg_id, frozen=False)
            if mtype == "start_record":
                directory = msg.get("directory") or self.config.record_dir
                if not directory:
                    return protocol.reply_error(msg_id, "ConfigInvalid",
                                                "no record directory given")
                self._start_recorder(directory)
                return protocol.reply_ok(msg_id, directory=str(directory))
            if mtype == "stop_record":
                info = self._stop_recorder()
                if info is None:
                    return protocol.reply_error(msg_id, "ConfigInvalid",
                                                "not recording")
                return protocol.reply_ok(msg_id, **info)
            if mtype == "select_reference":
                directory = msg.get("directory") or msg.get("id")
                if not directory:
                    return protocol.reply_error(msg_id, "ConfigInvalid",
                                                "select_reference needs a directory")
                ref = await asyncio.to_thread(self.pipeline.select_reference,
                                              str(directory))
                return protocol.reply_ok(msg_id, reference=ref.directory,
                                         contours=len(ref.contours))
            if mtype == "get_metrics":
                return protocol.reply_ok(msg_id, metrics=self.pipeline.get_metrics())
            if mtype == "get_status":
                return protocol.reply_ok(msg_id, status=self._status())
            return protocol.reply_error(msg_id, "UnknownControlType",
                                        f"unknown control type {mtype!r}")
        except (SonotrainerError, ValueError, KeyError, TypeError) as e:
            # a malformed request must get an error reply, never kill the
            # connection
            name = type(e).__name__ if not isinstance(e, KeyError) else "MissingField"
            return protocol.reply_error(msg_id, name, str(e))

    def _freeze(self) -> None:
        if self._last_result is not None:
            self._frozen_item = self._encode_item(*self._last_result)
        self.frozen = True

    def _start_recorder(self, directory) -> None:
        session_id, created_at = self.config.session_identity()
        recorder = session_io.SessionRecorder(
            directory, self.config.record_outputs,
            calibration=(self.pipeline.profile.to_dict()
                         if self.pipeline.profile else None),
            config=self.config.canonical_dict(),
            session_id=session_id, created_at=created_at)
        with self._rec_lock:
            if self._recorder is not None:
                self._recorder.close()
            self._recorder = recorder
            self._record_dir = str(directory)

    def _stop_recorder(self) -> Optional[dict]:
        with self._rec_lock:
            if self._recorder is None:
                return None
            manifest = self._recorder.close()
            self._recorder = None
            directory, self._record_dir = self._record_dir, None
        return {"directory": directory, "session_id": manifest.session_id,
                "frames": {k: v.frame_count for k, v in manifest.streams.items()}}

    def _status(self) -> dict:
        status = self.pipeline.get_status()
        status.update({
            "frozen": self.frozen,
            "recording": self._record_dir,
            "subscribers": len(self._subscribers),
            "dropped": sum(s.dropped for s in self._subscribers),
            "published": self.published,
            "ended": self.ended,
        })
        return status


async def serve_forever(config: PipelineConfig, host: str, port: int,
                        ready: Optional[threading.Event] = None,
                        bound: Optional[list] = None) -> None:
    service = TrainerService(config, host, port)
    await service.start()
    if bound is not None:
        bound.append(service)
    if ready is not None:
        ready.set()
    try:
        await asyncio.Future()
    except asyncio.CancelledError:
        pass
    finally:
        await service.stop()


class ServiceThread:
    """Run a TrainerService on a private event loop thread (tests, tools)."""

    def __init__(self, config: PipelineConfig, host: str = "127.0.0.1",
                 port: int = 0):
        self.config = config
        self.host = host
        self.port = port
        self.service: Optional[TrainerService] = None
        self._loop: Optional[asyncio.AbstractEventLoop] = None
        self._thread: Optional[threading.Thread] = None
        self._started = threading.Event()

    def __enter__(self) -> "ServiceThread":
        self._thread = threading.Thread(target=self._run, name="service", daemon=True)
        self._thread.start()
        if not self._started.wait(30.0):
            raise RuntimeError("service failed to start within 30 s")
        return self

    def _run(self) -> None:
        self._loop = asyncio.new_event_loop()
        asyncio.set_event_loop(self._loop)

        async def main():
            self.service = TrainerService(self.config, self.host, self.port)
            await self.service.start()
            self._started.set()
            await self._stopping
            await self.service.stop()

        self._stopping = self._loop.create_future()
        try:
            self._loop.run_until_complete(main())
        finally:
            self._loop.close()

    @property
    def url(self) -> str:
        assert self.service is not None
        return self.service.url

    def __exit__(self, *exc) -> None:
        if self._loop is not None and not self._loop.is_closed():
            self._loop.call_soon_threadsafe(
                lambda: self._stopping.done() or self._stopping.set_result(None))
        if self._thread is not None:
            self._thread.join(15.0)
