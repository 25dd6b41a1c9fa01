"""End-to-end pipeline runs on small synthetic configs. Kept short per
run (frames=12-30 at low resolution) so the whole file stays fast."""

import dataclasses
import json

import numpy as np
import pytest

from sonotrainer.errors import ConfigInvalid, NoReferenceSelected
from sonotrainer.frames import FrameDims, StreamId
from sonotrainer.pipeline import (
    EPOCH_ISO,
    Pipeline,
    PipelineConfig,
    compare_with_reference,
    load_config,
    run_headless,
)
from sonotrainer.tongue_contour import TongueContour

SMALL = PipelineConfig(
    rgb_source="synthetic:rgb,frames=12,fps=30,width=320,height=240,seed=7",
    us_source="synthetic:us,frames=12,fps=30,width=96,height=96,seed=11",
    audio_source="synthetic:audio,frames=12,fps=30,rate=16000,seed=5",
)


def small(**overrides):
    return dataclasses.replace(SMALL, **overrides)


def test_process_yields_one_result_per_rgb_frame():
    results = list(Pipeline(SMALL).process())
    assert len(results) == 12
    r = results[5]
    assert r.index == 5
    assert r.bundle.bundle_ts_us == 5 * 1_000_000 // 30
    assert r.composite_frame.pixels.shape == (240, 320, 3)
    assert r.composite_frame.stream_id is StreamId.COMPOSITE


def test_results_carry_markers_pose_and_contour():
    results = list(Pipeline(SMALL).process())
    detected = [r for r in results if r.markers is not None]
    assert len(detected) == 12  # synthetic frames are clean
    assert all(r.pose is not None for r in detected)
    with_contour = [r for r in results if r.contour is not None and not r.contour.is_empty]
    assert len(with_contour) >= 10


def test_metrics_fields_without_reference():
    results = list(Pipeline(SMALL).process())
    m = results[0].metrics
    assert m["msd"] is None and m["hausdorff"] is None
    assert m["audio_rms"] is not None and m["audio_rms"] > 0
    assert m["skew_us"]["US"] == 0
    assert m["us_held"] is False
    assert m["bundle_ts_us"] == 0


def test_two_runs_identical_composites():
    a = [r.composite_frame.pixels for r in Pipeline(SMALL).process()]
    b = [r.composite_frame.pixels for r in Pipeline(SMALL).process()]
    for x, y in zip(a, b):
        assert np.array_equal(x, y)


def test_run_headless_counts_and_stats(tmp_path):
    stats = run_headless(small(record_dir=str(tmp_path / "out")))
    assert stats.bundles == 12
    assert stats.stalled is None
    assert stats.manifest is not None
    assert stats.manifest.streams["COMPOSITE"].frame_count == 12
    assert stats.manifest.contour_count == 12
    assert stats.bundles_per_s > 0


def test_recorded_sessions_byte_identical_across_dirs(tmp_path):
    run_headless(small(record_dir=str(tmp_path / "one")))
    run_headless(small(record_dir=str(tmp_path / "two")))
    ma = json.loads((tmp_path / "one" / "manifest.json").read_text())
    mb = json.loads((tmp_path / "two" / "manifest.json").read_text())
    assert ma == mb  # directory does not leak into recorded bytes
    for rel in ("RGB/000000.png", "COMPOSITE/000011.png", "audio.wav"):
        assert (tmp_path / "one" / rel).read_bytes() == \
               (tmp_path / "two" / rel).read_bytes()


def test_session_identity_deterministic_config():
    sid1, created1 = SMALL.session_identity()
    sid2, created2 = small(record_dir="/somewhere/else").session_identity()
    assert sid1 == sid2  # record dir is not behavior
    assert created1 == created2 == EPOCH_ISO
    assert len(sid1) == 32


def test_session_identity_nondeterministic_with_stub():
    cfg = small(us_source="stub:probe0", deterministic=None)
    assert not cfg.is_deterministic()
    sid1, _ = cfg.session_identity()
    sid2, _ = cfg.session_identity()
    assert sid1 != sid2  # fresh id per session


def test_config_roundtrip_through_dict():
    cfg = small(guideline=False, blend_mode="over")
    back = PipelineConfig.from_dict(cfg.to_dict())
    assert back == cfg


def test_config_invalid_collects_all_problems():
    bad = SMALL.to_dict()
    bad["sources"]["rgb"] = "carrier:pigeon"
    bad["contour"]["method"] = "snakes"
    bad["contour"]["threshold"] = 3.0
    bad["blend_mode"] = "multiply"
    with pytest.raises(ConfigInvalid) as ei:
        PipelineConfig.from_dict(bad)
    text = str(ei.value)
    for needle in ("pigeon", "snakes", "threshold", "multiply"):
        assert needle in text, text


def test_load_config_missing_file(tmp_path):
    with pytest.raises(ConfigInvalid):
        load_config(tmp_path / "absent.json")
    p = tmp_path / "broken.json"
    p.write_text("{")
    with pytest.raises(ConfigInvalid):
        load_config(p)


def test_load_config_valid_file(tmp_path):
    p = tmp_path / "config.json"
    p.write_text(json.dumps(SMALL.to_dict()))
    assert load_config(p) == SMALL


def test_set_weights_changes_next_composite():
    pipe = Pipeline(SMALL)
    it = pipe.process()
    first = next(it)
    pipe.set_weights((0.1, 0.1, 0.1))
    second = next(it)
    # dimmer weights must darken the frame overall
    assert second.composite_frame.pixels.sum() < first.composite_frame.pixels.sum()
    assert pipe.get_status()["weights"] == [0.1, 0.1, 0.1]


def test_get_metrics_requires_reference():
    pipe = Pipeline(SMALL)
    with pytest.raises(NoReferenceSelected):
        pipe.get_metrics()


def test_reference_self_comparison_is_zero(tmp_path):
    ref_dir = tmp_path / "ref"
    run_headless(small(record_dir=str(ref_dir)))
    pipe = Pipeline(SMALL)
    pipe.select_reference(str(ref_dir))
    results = list(pipe.process())
    msds = [r.metrics["msd"] for r in results if r.metrics["msd"] is not None]
    assert len(msds) == 12
    # same config, same seeds: the live contours equal the recorded ones
    assert max(msds) == 0.0
    assert pipe.get_metrics()["msd"] == 0.0


def test_reference_against_shifted_contours(tmp_path):
    # replace the recorded contours with copies pushed 5 px down: every
    # live frame should then sit 5 px from its reference
    import sonotrainer.tongue_contour as tc

    ref_dir = tmp_path / "ref"
    run_headless(small(record_dir=str(ref_dir)))
    lines = (ref_dir / "contours.jsonl").read_text().strip().split("\n")
    shifted = []
    for line in lines:
        ts, c = tc.record_to_contour(line)
        pts = c.points.copy()
        pts[:, 1] += 5.0
        shifted.append(tc.contour_to_record(
            ts, TongueContour(pts, c.source_dims)))
    (ref_dir / "contours.jsonl").write_text("\n".join(shifted) + "\n")
    # manifest tracks no contour hash beyond the line count, so replay works
    pipe = Pipeline(SMALL)
    pipe.select_reference(str(ref_dir))
    results = list(pipe.process())
    msds = [r.metrics["msd"] for r in results if r.metrics["msd"] is not None]
    assert len(msds) == 12
    # nearest-neighbor matching on a sloped contour reads slightly under
    # the vertical 5 px shift (perpendicular distance), never over it
    for v in msds:
        assert 4.0 <= v <= 5.0 + 1e-9, msds


def test_compare_with_reference_handles_empty():
    dims = FrameDims(10, 10)
    full = TongueContour(np.array([[1.0, 1.0]]), dims)
    empty = TongueContour.empty(dims)
    assert compare_with_reference(None, full) == {"msd": None, "hausdorff": None}
    assert compare_with_reference(full, empty) == {"msd": None, "hausdorff": None}
    got = compare_with_reference(full, full)
    assert got["msd"] == 0.0 and got["hausdorff"] == 0.0


def test_select_reference_requires_contours(tmp_path):
    # a session recorded without contours cannot serve as a reference
    run_headless(small(record_dir=str(tmp_path / "nc"),
                       record_outputs=("RGB", "US")))
    pipe = Pipeline(SMALL)
    with pytest.raises(ValueError):
        pipe.select_reference(str(tmp_path / "nc"))


def test_status_shape_after_run():
    pipe = Pipeline(SMALL)
    list(pipe.process())
    st = pipe.get_status()
    assert st["bundles"] == 12
    assert st["detect_failures"] == 0
    assert st["calibrated"] is True
    assert st["stalled"] is None
    assert "composite" in st["latency"]
    assert st["latency"]["detect"]["mean_ms"] > 0


def test_stall_reported_not_raised():
    # us dies after 2 frames while rgb runs a full second: once the master
    # clock is 500 ms past the newest us frame the run ends at the stall
    # instead of crashing
    cfg = small(
        rgb_source="synthetic:rgb,frames=30,fps=30,width=320,height=240,seed=7",
        us_source="synthetic:us,frames=2,fps=30,width=96,height=96,seed=11",
        audio_source="synthetic:audio,frames=30,fps=30,rate=16000,seed=5",
    )
    pipe = Pipeline(cfg)
    results = list(pipe.process())
    assert pipe.stalled is not None
    assert 2 <= len(results) < 30
    assert pipe.get_status()["stalled"] is not None


def test_detect_failure_yields_plain_composite():
    # black rgb frames: no markers, but composites still flow
    cfg = small(rgb_source="synthetic:rgb,frames=6,fps=30,width=320,height=240,seed=7")
    pipe = Pipeline(cfg)

    # monkeypatch-free approach: feed a config whose detector cannot
    # match the synthetic orange (hue band far away)
    from sonotrainer.marker_tracking import ColorBlobConfig
    cfg2 = small(detector=ColorBlobConfig(hue_lo=200.0, hue_hi=240.0))
    results = list(Pipeline(cfg2).process())
    assert len(results) == 12
    assert all(r.markers is None for r in results)
    assert all(r.pose is None for r in results)
    # composite is just the weighted rgb (transparent overlay layers)
    r = results[0]
    want = np.floor(0.9 * r.bundle.rgb.pixels.astype(np.float64) + 0.5).astype(np.uint8)
    assert np.array_equal(r.composite_frame.pixels, want)


def test_replay_source_round_trip_as_input(tmp_path):
    # record a session, then run a second pipeline consuming it as its
    # sources; composites must reproduce byte for byte
    rec_dir = tmp_path / "rec"
    run_headless(small(record_dir=str(rec_dir)))
    replay_cfg = small(
        rgb_source=f"replay:{rec_dir}",
        us_source=f"replay:{rec_dir}",
        audio_source=f"replay:{rec_dir}",
    )
    live = [r.composite_frame.pixels for r in Pipeline(SMALL).process()]
    replayed = [r.composite_frame.pixels for r in Pipeline(replay_cfg).process()]
    assert len(live) == len(replayed)
    for a, b in zip(live, replayed):
        assert np.array_equal(a, b)
