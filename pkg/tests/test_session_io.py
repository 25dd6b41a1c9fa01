"""Recording and replaying sessions on tmp dirs, including deliberate
on-disk corruption that the verifier must catch."""

import json
import shutil
from types import SimpleNamespace

import numpy as np
import pytest

from sonotrainer.errors import DirNotWritable, ManifestCorrupt, SessionNotFound
from sonotrainer.frames import AudioChunk, FrameDims, ImageFrame, PixelFormat, StreamId
from sonotrainer.session_io import (
    MANIFEST_NAME,
    SessionManifest,
    SessionRecorder,
    load_manifest,
    replay,
    verify_session,
)
from sonotrainer.stream_sync import SyncedBundle
from sonotrainer.tongue_contour import TongueContour


def make_result(i, seed=50):
    rng = np.random.default_rng(seed + i)
    ts = i * 33_333
    rgb = ImageFrame(StreamId.RGB, ts,
                     rng.integers(0, 256, (24, 32, 3), dtype=np.uint8),
                     PixelFormat.RGB8)
    us = ImageFrame(StreamId.US, ts,
                    rng.integers(0, 256, (16, 16), dtype=np.uint8),
                    PixelFormat.GRAY8)
    audio = AudioChunk(ts, 16_000, (rng.integers(-500, 500, 533)).astype(np.int16))
    bundle = SyncedBundle(rgb=rgb, us=us, audio=audio, bundle_ts_us=ts,
                          skew_us={"US": 0}, us_held=False)
    pred = ImageFrame(StreamId.PRED, ts,
                      rng.integers(0, 256, (24, 32), dtype=np.uint8),
                      PixelFormat.GRAY8)
    comp = ImageFrame(StreamId.COMPOSITE, ts,
                      rng.integers(0, 256, (24, 32, 3), dtype=np.uint8),
                      PixelFormat.RGB8)
    contour = TongueContour(np.array([[1.0 + i, 2.0], [3.0, 4.0 + i]]),
                            FrameDims(32, 24))
    return SimpleNamespace(bundle=bundle, pred_frame=pred, composite_frame=comp,
                           contour=contour)


def record_session(directory, n=5, outputs=("RGB", "US", "PRED", "COMPOSITE",
                                            "CONTOURS", "AUDIO"), seed=50):
    rec = SessionRecorder(directory, outputs, calibration={"ref": 1.0},
                         config={"note": "test"}, session_id="s" * 32,
                         created_at="2026-01-01T00:00:00+00:00")
    for i in range(n):
        rec.write(make_result(i, seed))
    return rec.close()


def test_record_writes_expected_layout(tmp_path):
    d = tmp_path / "sess"
    m = record_session(d, n=4)
    assert (d / MANIFEST_NAME).exists()
    assert (d / "RGB" / "000000.png").exists()
    assert (d / "RGB" / "000003.png").exists()
    assert (d / "US" / "000002.png").exists()
    assert (d / "audio.wav").exists()
    assert (d / "contours.jsonl").exists()
    assert m.streams["RGB"].frame_count == 4
    assert m.contour_count == 4
    assert m.audio.sample_count == 4 * 533


def test_manifest_json_roundtrip(tmp_path):
    d = tmp_path / "sess"
    record_session(d, n=3)
    m = load_manifest(d)
    m2 = SessionManifest.from_dict(json.loads(json.dumps(m.to_dict())))
    assert m2.to_dict() == m.to_dict()
    assert m.session_id == "s" * 32
    assert m.calibration == {"ref": 1.0}


def test_replay_returns_identical_pixels(tmp_path):
    d = tmp_path / "sess"
    record_session(d, n=5)
    sources = replay(d)
    frames = list(sources.video[StreamId.RGB])
    assert len(frames) == 5
    want = make_result(2).bundle.rgb
    assert np.array_equal(frames[2].pixels, want.pixels)
    assert frames[2].timestamp_us == want.timestamp_us
    us_frames = list(sources.video[StreamId.US])
    assert us_frames[4].pixels.shape == (16, 16)


def test_replay_audio_chunks_match(tmp_path):
    d = tmp_path / "sess"
    record_session(d, n=3)
    sources = replay(d)
    chunks = list(sources.audio)
    assert len(chunks) == 3
    want = make_result(1).bundle.audio
    assert np.array_equal(chunks[1].samples, want.samples)
    assert chunks[1].timestamp_us == want.timestamp_us
    assert chunks[1].sample_rate_hz == 16_000


def test_replay_contours(tmp_path):
    d = tmp_path / "sess"
    record_session(d, n=3)
    sources = replay(d)
    assert len(sources.contours) == 3
    ts, c = sources.contours[2]
    assert ts == 2 * 33_333
    assert abs(c.points[0, 0] - 3.0) < 1e-9


def test_rerecord_of_replay_is_identical(tmp_path):
    # record -> replay -> record again: manifests must agree apart from
    # nothing at all (same ids passed in), files byte for byte
    a = tmp_path / "a"
    b = tmp_path / "b"
    record_session(a, n=4)
    sources = replay(a)
    rgbs = list(sources.video[StreamId.RGB])
    uss = list(sources.video[StreamId.US])
    audio = list(sources.audio)
    rec = SessionRecorder(b, ("RGB", "US", "AUDIO"), session_id="s" * 32,
                          created_at="2026-01-01T00:00:00+00:00")
    for i, rgb in enumerate(rgbs):
        bundle = SyncedBundle(rgb=rgb, us=uss[i], audio=audio[i],
                              bundle_ts_us=rgb.timestamp_us, skew_us={}, us_held=False)
        rec.write(bundle)
    rec.close()
    ma = load_manifest(a).to_dict()
    mb = load_manifest(b).to_dict()
    for name in ("RGB", "US"):
        assert ma["streams"][name] == mb["streams"][name]
    assert ma["audio"] == mb["audio"]
    raw_a = (a / "RGB" / "000002.png").read_bytes()
    raw_b = (b / "RGB" / "000002.png").read_bytes()
    assert raw_a == raw_b


def test_missing_session_raises(tmp_path):
    with pytest.raises(SessionNotFound):
        load_manifest(tmp_path / "nope")


def test_truncated_frame_detected(tmp_path):
    d = tmp_path / "sess"
    record_session(d, n=4)
    target = d / "US" / "000001.png"
    data = target.read_bytes()
    target.write_bytes(data[: len(data) // 2])
    report = verify_session(d)
    assert not report["ok"]
    assert any("US" in e and "000001" in e for e in report["errors"])
    with pytest.raises(ManifestCorrupt) as ei:
        replay(d)
    assert "US" in str(ei.value)


def test_bitflip_in_frame_detected(tmp_path):
    d = tmp_path / "sess"
    record_session(d, n=3)
    target = d / "RGB" / "000002.png"
    data = bytearray(target.read_bytes())
    data[-10] ^= 0xFF
    target.write_bytes(bytes(data))
    report = verify_session(d)
    assert not report["ok"]
    assert any("RGB" in e for e in report["errors"])


def test_missing_frame_file_detected(tmp_path):
    d = tmp_path / "sess"
    record_session(d, n=3)
    (d / "PRED" / "000000.png").unlink()
    report = verify_session(d)
    assert not report["ok"]


def test_audio_corruption_detected(tmp_path):
    d = tmp_path / "sess"
    record_session(d, n=3)
    wav = d / "audio.wav"
    data = bytearray(wav.read_bytes())
    data[100] ^= 0x55
    wav.write_bytes(bytes(data))
    report = verify_session(d)
    assert not report["ok"]
    assert any("audio" in e.lower() for e in report["errors"])


def test_clean_session_verifies_ok(tmp_path):
    d = tmp_path / "sess"
    record_session(d, n=4)
    report = verify_session(d)
    assert report["ok"]
    assert report["errors"] == []
    assert report["streams"]["RGB"] == 4


def test_garbled_manifest_raises(tmp_path):
    d = tmp_path / "sess"
    record_session(d, n=2)
    (d / MANIFEST_NAME).write_text("{not json")
    with pytest.raises(ManifestCorrupt):
        load_manifest(d)


def test_unwritable_directory_raises(tmp_path):
    blocker = tmp_path / "blocker"
    blocker.write_text("a file where a directory should go")
    with pytest.raises(DirNotWritable):
        SessionRecorder(blocker / "sub", ("RGB",))


def test_unknown_output_rejected(tmp_path):
    with pytest.raises(ValueError):
        SessionRecorder(tmp_path / "s", ("RGB", "DEPTH"))
    with pytest.raises(ValueError):
        SessionRecorder(tmp_path / "s2", ())


def test_subset_of_outputs(tmp_path):
    d = tmp_path / "sess"
    record_session(d, n=3, outputs=("COMPOSITE",))
    assert not (d / "RGB").exists()
    assert not (d / "audio.wav").exists()
    m = load_manifest(d)
    assert list(m.streams) == ["COMPOSITE"]
    assert m.audio is None
    report = verify_session(d)
    assert report["ok"]


def test_manifest_flushed_mid_session(tmp_path):
    d = tmp_path / "sess"
    rec = SessionRecorder(d, ("RGB",))
    rec.write(make_result(0))
    assert not (d / MANIFEST_NAME).exists()  # below the flush interval
    # jump stream time past 1 s: the next write must flush
    r = make_result(0)
    far = SyncedBundle(rgb=r.bundle.rgb.with_timestamp(1_200_000),
                       us=r.bundle.us, audio=None, bundle_ts_us=1_200_000,
                       skew_us={}, us_held=False)
    rec.write(SimpleNamespace(bundle=far, pred_frame=None, composite_frame=None,
                              contour=None))
    assert (d / MANIFEST_NAME).exists()
    mid = load_manifest(d)
    assert mid.streams["RGB"].frame_count == 2
    rec.close()


def test_write_after_close_refused(tmp_path):
    d = tmp_path / "sess"
    rec = SessionRecorder(d, ("RGB",))
    rec.write(make_result(0))
    rec.close()
    with pytest.raises(RuntimeError):
        rec.write(make_result(1))


def test_replay_without_verify_skips_scan(tmp_path):
    d = tmp_path / "sess"
    record_session(d, n=3)
    target = d / "RGB" / "000001.png"
    data = target.read_bytes()
    target.write_bytes(data[:40])
    sources = replay(d, verify=False)  # no up-front scan
    with pytest.raises(ManifestCorrupt):
        list(sources.video[StreamId.RGB])  # lazy read still checks crc


def test_dims_change_mid_session_rejected(tmp_path):
    d = tmp_path / "sess"
    rec = SessionRecorder(d, ("RGB",))
    rec.write(make_result(0))
    odd = ImageFrame(StreamId.RGB, 50_000,
                     np.zeros((10, 10, 3), np.uint8), PixelFormat.RGB8)
    bundle = SyncedBundle(rgb=odd, us=make_result(1).bundle.us, audio=None,
                          bundle_ts_us=50_000, skew_us={}, us_held=False)
    with pytest.raises(ValueError):
        rec.write(bundle)
