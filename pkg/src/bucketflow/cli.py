"""Command-line entry point: ``bucketflow <subcommand> ...``."""

from __future__ import annotations

import argparse
import json
import logging
import sys
from dataclasses import replace
from pathlib import Path
from typing import Sequence

from . import __version__, dataset, plot, report
from .binfmt import LoadError
from .core import DEFAULT_CLASS_MAP, SIZE_CLASS_MAP, ClassMap
from .evaluation import EvalConfig, evaluate_dataset
from .gtflow import DEFAULT_MAX_RADIUS, class_point_histogram, generate_gt_flow
from .metrics import BUCKET_WIDTH, DEFAULT_DT, MAX_SPEED, size_bucket_classes
from .tracker import TrackerConfig
from .trackflow import FLOW_MARGIN, flows_from_tracks, track_sequence

log = logging.getLogger("bucketflow")


def _class_map(path: str | None) -> ClassMap:
    return DEFAULT_CLASS_MAP if path is None else ClassMap.from_json(path)


def _csv(text: str) -> list[str]:
    return [t.strip() for t in text.split(",") if t.strip()]


def _eval_config(args: argparse.Namespace) -> EvalConfig:
    return EvalConfig(
        max_radius=args.radius,
        dt=args.dt,
        class_map=_class_map(args.class_map),
        size_buckets=args.size_buckets,
        bucket_width=args.bucket_width,
        max_speed=args.max_speed,
    )


def _add_eval_flags(p: argparse.ArgumentParser) -> None:
    p.add_argument("--radius", type=float, default=DEFAULT_MAX_RADIUS, help="evaluation radius around the ego, meters")
    p.add_argument("--dt", type=float, default=DEFAULT_DT, help="frame interval used to convert flow to speed, seconds")
    p.add_argument("--class-map", help="JSON class map (default: built-in meta-class map)")
    p.add_argument("--bucket-width", type=float, default=BUCKET_WIDTH, help="speed bucket width, m/s")
    p.add_argument("--max-speed", type=float, default=MAX_SPEED, help="lower edge of the open-ended last bucket, m/s")
    p.add_argument("--size-buckets", action="store_true", help="relabel boxes as SMALL/MEDIUM/LARGE by volume")
    p.add_argument("--threads", type=int, default=1, help="sequences evaluated in parallel")


# -- subcommands ---------------------------------------------------------------


def cmd_synth(args: argparse.Namespace) -> int:
    from . import synth

    noise = synth.DetectionNoise(
        center_std=args.center_std,
        yaw_std=args.yaw_std,
        dim_std=args.dim_std,
        dropout=args.dropout,
        false_positive_rate=args.fp_rate,
    )
    for i in range(args.sequences):
        seed = args.seed + i
        if args.imbalanced:
            frames = synth.imbalanced_scene(seed, args.frames, args.dt)
        else:
            frames = synth.random_scene(seed, args.frames, args.dt, background_points=args.background_points)
        seq_id = f"seq{i:04d}"
        seq_dir = dataset.save_sequence(args.out, seq_id, frames, args.dt)
        ids = [f.cloud.frame_id for f in frames]
        gts = [generate_gt_flow(a, b, DEFAULT_CLASS_MAP, None) for a, b in zip(frames[:-1], frames[1:])]
        dataset.save_gt_flows(seq_dir, ids[:-1], gts, DEFAULT_CLASS_MAP)
        if args.detections:
            dets = synth.perturb_detections([f.boxes for f in frames], noise, seed)
            dataset.save_detections(args.detections, seq_id, ids, dets)
        log.info("wrote %s (%d frames)", seq_dir, len(frames))
    return 0


def cmd_gtflow(args: argparse.Namespace) -> int:
    class_map = SIZE_CLASS_MAP if args.size_buckets else _class_map(args.class_map)
    for name in dataset.list_sequences(args.dataset):
        seq_dir = Path(args.dataset) / name
        seq = dataset.load_sequence(seq_dir)
        frames = list(seq.frames)
        if args.size_buckets:
            frames = [replace(f, boxes=tuple(size_bucket_classes(f.boxes))) for f in frames]
        gts = [generate_gt_flow(a, b, class_map, None) for a, b in zip(frames[:-1], frames[1:])]
        dataset.save_gt_flows(seq_dir, seq.frame_ids[:-1], gts, class_map)
        log.info("sequence %s: ground truth for %d frame pairs", name, len(gts))
    return 0


def _run_trackflow(dataset_root: str, detections_root: str, out: Path, config: TrackerConfig, margin: float) -> None:
    for name in dataset.list_sequences(dataset_root):
        seq = dataset.load_sequence(Path(dataset_root) / name)
        dets = dataset.load_detections(detections_root, name, seq.frame_ids)
        frames = seq.sensor_frames(dets)
        tracked = track_sequence(frames, config)
        flows = flows_from_tracks(frames, tracked, margin)
        dataset.save_flow(out / name, seq.frame_ids[:-1], flows)
        n_tracks = len({b.track_id for boxes in tracked for b in boxes})
        log.info("sequence %s: %d frames, %d tracks", name, len(frames), n_tracks)


def cmd_trackflow(args: argparse.Namespace) -> int:
    config = TrackerConfig.from_json(args.tracker_config) if args.tracker_config else TrackerConfig()
    out = Path(args.out)
    if not args.sweep:
        if args.confidence is not None:
            config = replace(config, confidence_threshold=args.confidence)
        _run_trackflow(args.dataset, args.detections, out, config, args.margin)
        return 0
    eval_config = _eval_config(args)
    for threshold in sorted(float(t) for t in _csv(args.sweep)):
        tag = f"conf_{threshold:.3f}"
        _run_trackflow(args.dataset, args.detections, out / tag, replace(config, confidence_threshold=threshold), args.margin)
        partial = evaluate_dataset(args.dataset, out / tag, eval_config, threads=args.threads)
        doc = report.build_report(partial, eval_config.to_dict() | {"confidence_threshold": threshold})
        report.write_report(out / f"report_{tag}.json", doc)
        mean = doc["mean"]["mean_dynamic_normalized_epe"]
        print(f"confidence {threshold:.3f}: mean dynamic normalized EPE {report.format_value(mean)}")
    return 0


def cmd_evaluate(args: argparse.Namespace) -> int:
    if args.from_matrix:
        docs = []
        for path in args.from_matrix:
            with open(path) as f:
                docs.append(json.load(f))
        doc = report.merge_documents(docs)
    else:
        if not args.gt or not args.pred:
            raise ValueError("evaluate needs --gt and --pred (or --from-matrix)")
        config = _eval_config(args)
        sequences = _csv(args.sequences) if args.sequences else None
        partial = evaluate_dataset(args.gt, args.pred, config, sequences, args.threads)
        doc = report.build_report(partial, config)
    if args.out:
        report.write_report(args.out, doc)
    for line in report.report_summary_lines(doc):
        print(line)
    return 0


def cmd_stats(args: argparse.Namespace) -> int:
    class_map = _class_map(args.class_map)
    gts = []
    for name in dataset.list_sequences(args.dataset):
        seq = dataset.load_sequence(Path(args.dataset) / name)
        gts.extend(generate_gt_flow(a, b, class_map, args.radius) for a, b in zip(seq.frames[:-1], seq.frames[1:]))
    if not gts:
        raise ValueError("dataset has no frame pairs")
    hist = class_point_histogram(gts, respect_eval_mask=True)
    total = sum(hist.values())
    if args.json:
        print(json.dumps({"total": total, "counts": hist}, indent=2))
        return 0
    for cls, n in hist.items():
        share = 100.0 * n / total if total else 0.0
        print(f"{cls:<16} {n:>12d}  {share:7.3f}%")
    print(f"{'total':<16} {total:>12d}")
    return 0


def cmd_plot(args: argparse.Namespace) -> int:
    reports = [report.load_report(p) for p in args.reports]
    labels = _csv(args.labels) if args.labels else [Path(p).stem for p in args.reports]
    hatched = _csv(args.hatch) if args.hatch else []
    for path in plot.write_charts(reports, labels, args.out, hatched):
        print(path)
    return 0


def cmd_convert(args: argparse.Namespace) -> int:
    print(
        f"error: no adapter for dataset format {args.format!r}; "
        "write sequences in the bucketflow layout (see the README)",
        file=sys.stderr,
    )
    return 2


# -- parser --------------------------------------------------------------------


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="bucketflow", description=__doc__)
    parser.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    parser.add_argument("-v", "--verbose", action="count", default=0, help="more logging (repeatable)")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("synth", help="write synthetic sequences with ground truth and optional detections")
    p.add_argument("out", help="dataset root to create")
    p.add_argument("--sequences", type=int, default=4)
    p.add_argument("--frames", type=int, default=5)
    p.add_argument("--dt", type=float, default=DEFAULT_DT)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--background-points", type=int, default=2000)
    p.add_argument("--imbalanced", action="store_true", help="use the imbalanced fixed layout instead of random scenes")
    p.add_argument("--detections", help="also write detections under this root")
    p.add_argument("--center-std", type=float, default=0.0)
    p.add_argument("--yaw-std", type=float, default=0.0)
    p.add_argument("--dim-std", type=float, default=0.0)
    p.add_argument("--dropout", type=float, default=0.0)
    p.add_argument("--fp-rate", type=float, default=0.0, help="mean false positives per frame")
    p.set_defaults(func=cmd_synth)

    p = sub.add_parser("gtflow", help="generate ground-truth flow files from annotated boxes")
    p.add_argument("dataset")
    p.add_argument("--class-map")
    p.add_argument("--size-buckets", action="store_true")
    p.set_defaults(func=cmd_gtflow)

    p = sub.add_parser("trackflow", help="estimate flow from detections via tracking")
    p.add_argument("dataset")
    p.add_argument("--detections", required=True, help="detections root (<root>/<sequence>/NNNNNN.json)")
    p.add_argument("--out", required=True, help="output flow root")
    p.add_argument("--confidence", type=float, help="detection confidence threshold (default 0.2)")
    p.add_argument("--tracker-config", help="JSON tracker configuration")
    p.add_argument("--margin", type=float, default=FLOW_MARGIN, help="box growth when selecting points, meters")
    p.add_argument("--sweep", help="comma-separated thresholds; writes flows and a report per threshold")
    _add_eval_flags(p)
    p.set_defaults(func=cmd_trackflow)

    p = sub.add_parser("evaluate", help="score predicted flow against ground truth")
    p.add_argument("--gt", help="dataset root with ground truth")
    p.add_argument("--pred", help="prediction root (<root>/<sequence>/NNNNNN.bin)")
    p.add_argument("--out", help="report path (JSON)")
    p.add_argument("--sequences", help="comma-separated subset of sequences")
    p.add_argument("--from-matrix", nargs="+", help="merge stored reports or bucket matrices instead of evaluating")
    _add_eval_flags(p)
    p.set_defaults(func=cmd_evaluate)

    p = sub.add_parser("stats", help="per-class point counts inside the evaluation radius")
    p.add_argument("dataset")
    p.add_argument("--class-map")
    p.add_argument("--radius", type=float, default=DEFAULT_MAX_RADIUS)
    p.add_argument("--json", action="store_true")
    p.set_defaults(func=cmd_stats)

    p = sub.add_parser("plot", help="SVG bar charts from reports")
    p.add_argument("reports", nargs="+")
    p.add_argument("--labels", help="comma-separated label per report")
    p.add_argument("--hatch", help="comma-separated labels drawn hatched (e.g. supervised methods)")
    p.add_argument("--out", required=True, help="output directory")
    p.set_defaults(func=cmd_plot)

    p = sub.add_parser("convert", help="import an external dataset (no adapters ship yet)")
    p.add_argument("format")
    p.add_argument("source")
    p.add_argument("out")
    p.set_defaults(func=cmd_convert)
    return parser


def main(argv: Sequence[str] | None = None) -> int:
    args = build_parser().parse_args(argv)
    level = logging.WARNING - 10 * min(args.verbose, 2)
    logging.basicConfig(level=level, format="%(levelname)s %(name)s: %(message)s")
    try:
        return args.func(args)
    except (LoadError, ValueError, KeyError, OSError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
