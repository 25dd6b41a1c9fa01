"""Command-line entry points under the ``trainer`` executable."""

from __future__ import annotations

import argparse
import asyncio
import dataclasses
import json
import sys
from pathlib import Path

import numpy as np
from PIL import Image

from . import session_io, slippage
from .errors import SonotrainerError
from .frames import ImageFrame, PixelFormat, StreamId
from .marker_tracking import (AugmentSpec, ColorBlobConfig, KeypointSample,
                              augment, load_keypoint_records, save_keypoint_records)
from .pipeline import PipelineConfig, load_config, run_headless
from .pose_calibration import CalibrationProfile, CropRect, calibrate_from_frame, save_profile
from .stream_sync import pair
from .tongue_contour import (SegmentationMap, binarize, contour_to_record,
                             extract_top_pixels, skeleton_contour, skeletonize,
                             write_contours_csv)


def _load_rgb_png(path: str) -> ImageFrame:
    arr = np.asarray(Image.open(path).convert("RGB"))
    return ImageFrame(StreamId.RGB, 0, arr, PixelFormat.RGB8)


def _parse_ints(text: str, n: int, what: str) -> tuple:
    parts = [p for p in text.replace(" ", "").split(",") if p]
    if len(parts) != n:
        raise SystemExit(f"--{what} needs {n} comma-separated values, got {text!r}")
    return tuple(int(p) for p in parts)


def _cmd_run(args) -> int:
    config = load_config(args.config) if args.config else PipelineConfig()
    overrides = {}
    if args.record:
        overrides["record_dir"] = args.record
    if args.rgb_source:
        overrides["rgb_source"] = args.rgb_source
    if args.us_source:
        overrides["us_source"] = args.us_source
    if args.audio_source:
        overrides["audio_source"] = args.audio_source
    if args.listen and not args.headless:
        overrides["pace"] = True
    if overrides:
        config = dataclasses.replace(config, **overrides)

    if args.listen:
        host, _, port = args.listen.rpartition(":")
        host = host or "127.0.0.1"
        from .server import serve_forever
        import threading
        ready = threading.Event()
        bound: list = []

        async def main():
            task = asyncio.ensure_future(
                serve_forever(config, host, int(port), ready=ready, bound=bound))
            while not ready.is_set():
                await asyncio.sleep(0.01)
            print(f"listening on {bound[0].url}", flush=True)
            await task

        try:
            asyncio.run(main())
        except KeyboardInterrupt:
            pass
        return 0

    stats = run_headless(config)
    print(f"bundles: {stats.bundles}")
    print(f"rate: {stats.bundles_per_s:.1f} bundles/s")
    if stats.record_dir:
        print(f"recorded: {stats.record_dir} "
              f"(session {stats.manifest.session_id})")
    if stats.stalled:
        print(f"stalled: {stats.stalled}")
        return 1
    return 0


def _cmd_calibrate(args) -> int:
    frame = _load_rgb_png(args.from_frame)
    x, y, w, h = _parse_ints(args.crop, 4, "crop")
    anchor = None
    if args.anchor:
        ax, ay = _parse_ints(args.anchor, 2, "anchor")
        anchor = (float(ax), float(ay))
    profile = calibrate_from_frame(frame, ColorBlobConfig(), CropRect(x, y, w, h),
                                   anchor_px=anchor)
    save_profile(profile, args.out)
    print(f"wrote {args.out} (marker distance "
          f"{profile.ref_marker_distance_px:.2f} px)")
    return 0


def _cmd_augment(args) -> int:
    in_dir = Path(args.in_dir)
    out_dir = Path(args.out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    spec_doc = json.loads(Path(args.spec).read_text())
    specs = [AugmentSpec.from_dict(s) for s in
             (spec_doc if isinstance(spec_doc, list) else [spec_doc])]
    records = load_keypoint_records(in_dir / "keypoints.jsonl")
    out_records = []
    skipped = 0
    for name, truth in records:
        frame = _load_rgb_png(str(in_dir / name))
        sample = KeypointSample(frame, truth)
        for i, spec in enumerate(specs):
            try:
                result = augment(sample, spec)
            except SonotrainerError as e:
                skipped += 1
                print(f"skip {name} spec {i}: {e}", file=sys.stderr)
                continue
            stem = Path(name).stem
            out_name = f"{stem}.png" if len(specs) == 1 else f"{stem}_{i}.png"
            Image.fromarray(result.image.pixels, mode="RGB").save(out_dir / out_name)
            out_records.append((out_name, result.truth))
    save_keypoint_records(out_dir / "keypoints.jsonl", out_records)
    print(f"wrote {len(out_records)} augmented samples to {out_dir}"
          + (f" ({skipped} skipped: keypoints left the frame)" if skipped else ""))
    return 0


def _cmd_extract_contours(args) -> int:
    sources = session_io.replay(args.session_dir)
    us = sources.video.get(StreamId.US)
    if us is None:
        raise SystemExit(f"{args.session_dir} has no ultrasound stream")
    contours = []
    for frame in us:
        seg = SegmentationMap(frame.pixels.astype(np.float64) / 255.0)
        mask = binarize(seg, args.threshold)
        if args.method == "skeleton":
            contour = skeleton_contour(skeletonize(mask))
        else:
            contour = extract_top_pixels(mask, args.max_gap)
        contours.append((frame.timestamp_us, contour))
    out_csv = Path(args.out) if args.out else Path(args.session_dir) / "contours_extracted.csv"
    write_contours_csv(out_csv, contours)
    out_jsonl = out_csv.with_suffix(".jsonl")
    out_jsonl.write_text("".join(contour_to_record(ts, c) + "\n"
                                 for ts, c in contours))
    nonempty = sum(1 for _, c in contours if not c.is_empty)
    print(f"extracted {len(contours)} contours ({nonempty} non-empty) "
          f"-> {out_csv}, {out_jsonl}")
    return 0


def _cmd_replay(args) -> int:
    sources = session_io.replay(args.session_dir)
    m = sources.manifest
    print(f"session {m.session_id} created {m.created_at}")
    for name, sd in m.streams.items():
        print(f"  {name}: {sd.frame_count} frames {sd.width}x{sd.height} "
              f"{sd.pixel_format}")
    if m.audio:
        print(f"  AUDIO: {m.audio.sample_count} samples @ "
              f"{m.audio.sample_rate_hz} Hz in {len(m.audio.chunks)} chunks")
    if m.contour_count:
        print(f"  CONTOURS: {m.contour_count}")
    rgb = sources.video.get(StreamId.RGB)
    us = sources.video.get(StreamId.US)
    if rgb is None or us is None:
        print("bundles: n/a (need RGB and US streams to re-pair)")
        return 0
    held = 0
    skews = []
    count = 0
    for bundle in pair(rgb, us, iter(sources.audio) if sources.audio else None):
        count += 1
        held += bundle.us_held
        skews.append(abs(bundle.skew_us["US"]))
    print(f"bundles: {count} ({held} held, max |skew| "
          f"{max(skews) if skews else 0} us)")
    return 0


def _cmd_verify(args) -> int:
    report = session_io.verify_session(args.session_dir)
    for name, count in report["streams"].items():
        print(f"  {name}: {count} frames")
    if report["ok"]:
        print(f"OK: session {report['session_id']} intact")
        return 0
    for err in report["errors"]:
        print(f"CORRUPT: {err}", file=sys.stderr)
    return 1


def _cmd_analyze_slippage(args) -> int:
    report = slippage.analyze_csv(args.csv)
    slippage.write_report(report, args.out)

    def show(r: dict, indent: str = "") -> None:
        print(f"{indent}trials: {r['trial_count']}")
        for axis, stat in r["axes"].items():
            print(f"{indent}  {axis:>5}: {stat['mean']:.3f} +/- "
                  f"{stat['std']:.3f} {stat['unit']}")

    if "conditions" in report:
        for cond, r in report["conditions"].items():
            print(f"{cond}:")
            show(r, "  ")
    else:
        show(report)
    print(f"wrote {args.out}")
    return 0


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="trainer",
        description="Real-time ultrasound tongue-feedback pipeline tools")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("run", help="run the pipeline headless or as a service")
    p.add_argument("--config", help="pipeline config JSON")
    p.add_argument("--headless", action="store_true",
                   help="no pacing; process as fast as sources allow")
    p.add_argument("--record", metavar="DIR", help="record the session here")
    p.add_argument("--listen", metavar="ADDR:PORT",
                   help="serve frames/control on this address")
    p.add_argument("--rgb-source", help="override the RGB source spec")
    p.add_argument("--us-source", help="override the ultrasound source spec")
    p.add_argument("--audio-source", help="override the audio source spec")
    p.set_defaults(fn=_cmd_run)

    p = sub.add_parser("calibrate", help="build a calibration profile from a frame")
    p.add_argument("--from-frame", required=True, metavar="PNG")
    p.add_argument("--out", required=True, metavar="JSON")
    p.add_argument("--crop", default="0,0,256,256", metavar="X,Y,W,H",
                   help="ultrasound crop rectangle (default 0,0,256,256)")
    p.add_argument("--anchor", metavar="X,Y",
                   help="screen point where the ultrasound apex should sit")
    p.set_defaults(fn=_cmd_calibrate)

    p = sub.add_parser("augment", help="augment a labeled keypoint dataset")
    p.add_argument("--in", dest="in_dir", required=True, metavar="DIR",
                   help="directory with images + keypoints.jsonl")
    p.add_argument("--out", dest="out_dir", required=True, metavar="DIR")
    p.add_argument("--spec", required=True, metavar="JSON",
                   help="augmentation spec (object or list of objects)")
    p.set_defaults(fn=_cmd_augment)

    p = sub.add_parser("extract-contours",
                       help="extract tongue contours from a recorded session")
    p.add_argument("session_dir")
    p.add_argument("--method", choices=("top", "skeleton"), default="top")
    p.add_argument("--threshold", type=float, default=0.5)
    p.add_argument("--max-gap", type=int, default=10)
    p.add_argument("--out", metavar="CSV")
    p.set_defaults(fn=_cmd_extract_contours)

    p = sub.add_parser("replay", help="re-pair a recorded session and summarize it")
    p.add_argument("session_dir")
    p.set_defaults(fn=_cmd_replay)

    p = sub.add_parser("verify", help="check a recorded session's integrity")
    p.add_argument("session_dir")
    p.set_defaults(fn=_cmd_verify)

    p = sub.add_parser("analyze-slippage",
                       help="6-DOF slippage statistics from a trials CSV")
    p.add_argument("csv")
    p.add_argument("--out", default="report.json", metavar="JSON")
    p.set_defaults(fn=_cmd_analyze_slippage)

    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        return args.fn(args)
    except SonotrainerError as e:
        print(f"error: {type(e).__name__}: {e}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
