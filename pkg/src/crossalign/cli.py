"""Command-line front end: simulate -> train-align -> eval -> report.

Exit codes: 0 success, 2 usage or config error, 3 numeric failure,
4 artifact mismatch (e.g. checkpoint vs dataset shapes).
"""

from __future__ import annotations

import argparse
import csv
import io
import json
import logging
import sys
from dataclasses import asdict, replace
from pathlib import Path

from . import __version__
from .alignment_head import (
    AlignHeadParams,
    CheckpointError,
    NonFiniteLoss,
    config_echo,
    load_checkpoint,
    save_checkpoint,
    train,
)
from .config import ConfigError, load_config, write_config_echo
from .evaluation import Detection, GroundTruth, deviation_stats, mean_ap, write_jsonl
from .geometry import InvalidBox, RotatedBox, rotated_iou
from .modality_selection import EmptyCrop, GrayImage, ms_score
from .pipeline import PipelineConfig, align_records, box_errors, build_records, split_scenes, training_samples
from .pnm import PnmError, read_pnm
from .simulator import DatasetError, FEATURE_CHANNELS, export_dataset, generate_dataset, harmonize_scene, import_dataset

log = logging.getLogger("crossalign")

EXIT_OK, EXIT_USAGE, EXIT_NUMERIC, EXIT_MISMATCH = 0, 2, 3, 4


class CliError(Exception):
    def __init__(self, message: str, code: int = EXIT_USAGE):
        super().__init__(message)
        self.code = code


def _load_dataset(path):
    try:
        return import_dataset(path)
    except DatasetError as exc:
        raise CliError(f"dataset: {exc}", EXIT_MISMATCH) from exc


def _fmt(v: float) -> str:
    return f"{v:.6f}"


def cmd_simulate(args) -> int:
    cfg = load_config(args.config)
    out = Path(args.out_dir)
    scenes = generate_dataset(cfg.scene, cfg.num_scenes)
    try:
        export_dataset(scenes, out, cfg.scene)
        write_config_echo(cfg, out / "config.json")
    except OSError as exc:
        raise CliError(f"cannot write dataset: {exc}") from exc
    pairs = [a for sc in scenes for a in harmonize_scene(sc, cfg.pipeline.dark_threshold).annotations]
    stats = deviation_stats(pairs, cfg.eval.pos_px, cfg.eval.size_px, cfg.eval.angle_deg)
    n_obj = sum(len(sc.annotations) for sc in scenes)
    print(f"scenes={len(scenes)} objects={n_obj} paired={len(pairs)} deviant_fraction={_fmt(stats.deviant_fraction)}")
    return EXIT_OK


def _loss_csv(curve) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(["epoch", "loss"])
    for i, v in enumerate(curve):
        w.writerow([i, repr(float(v))])
    return buf.getvalue()


def cmd_train_align(args) -> int:
    cfg = load_config(args.config)
    if args.epochs is not None:
        cfg.train = replace(cfg.train, epochs=args.epochs)
    if args.no_ms:
        cfg.pipeline = replace(cfg.pipeline, use_ms=False)
    if args.no_jitter:
        cfg.jitter = replace(cfg.jitter, enabled=False)
    scenes, _ = _load_dataset(args.dataset_dir)
    train_scenes, _ = split_scenes(scenes, cfg.pipeline.holdout_fraction)
    out = Path(args.checkpoint)
    header = {
        "kind": "trained",
        "config": cfg.to_dict(),
        "pipeline": asdict(cfg.pipeline),
        "feature_channels": FEATURE_CHANNELS,
        "train_config": config_echo(cfg.train),
    }
    input_dim = FEATURE_CHANNELS * cfg.pipeline.out_size ** 2
    curve: list[float] = []
    if args.oracle:
        header["kind"] = "oracle"
        params = None
    elif args.untrained:
        header["kind"] = "untrained"
        params = AlignHeadParams.zeros(input_dim, cfg.train.hidden)
    else:
        records, negatives = build_records(train_scenes, cfg.pipeline)
        samples = training_samples(records, negatives, cfg.jitter_config(), cfg.jitter.copies)
        if not samples:
            raise CliError("no training samples in dataset", EXIT_MISMATCH)
        try:
            params, curve = train(cfg.train, samples,
                                  log=lambda e, l: log.info("epoch %d loss %.6g", e, l))
        except NonFiniteLoss as exc:
            raise CliError(str(exc), EXIT_NUMERIC) from exc
        header["train_samples"] = len(samples)
    try:
        out.parent.mkdir(parents=True, exist_ok=True)
        save_checkpoint(out, params, header)
        out.with_suffix(".loss.csv").write_text(_loss_csv(curve), encoding="utf-8")
        write_config_echo(cfg, out.with_suffix(".config.json"))
    except OSError as exc:
        raise CliError(f"cannot write checkpoint: {exc}") from exc
    print(f"checkpoint={out} kind={header['kind']} epochs={len(curve)}"
          + (f" final_loss={curve[-1]:.6g}" if curve else ""))
    return EXIT_OK


def cmd_eval(args) -> int:
    try:
        params, header = load_checkpoint(args.checkpoint)
    except OSError as exc:
        raise CliError(f"cannot read checkpoint: {exc}", EXIT_MISMATCH) from exc
    except CheckpointError as exc:
        raise CliError(str(exc), EXIT_MISMATCH) from exc
    try:
        pipeline = PipelineConfig(**header.get("pipeline", {}))
    except (TypeError, ValueError) as exc:
        raise CliError(f"checkpoint header: {exc}", EXIT_MISMATCH) from exc
    channels = header.get("feature_channels", FEATURE_CHANNELS)
    expected = FEATURE_CHANNELS * pipeline.out_size ** 2
    if channels != FEATURE_CHANNELS or (params is not None and params.input_dim != expected):
        raise CliError(
            f"checkpoint expects input dim {None if params is None else params.input_dim}, "
            f"dataset features give {expected}", EXIT_MISMATCH)
    scenes, _ = _load_dataset(args.dataset_dir)
    _, held = split_scenes(scenes, pipeline.holdout_fraction)
    records, _ = build_records(held, pipeline)
    oracle = header.get("kind") == "oracle"
    aligned = align_records(params, records, oracle=oracle)
    truth = [r.sensed_pose for r in records]
    before = box_errors([r.proposal for r in records], truth)
    after = box_errors(aligned, truth)

    iou_thresh = header.get("config", {}).get("eval", {}).get("iou_thresh", 0.5)
    gts = [GroundTruth((r.scene_id, r.reference.value), r.class_id, r.sensed_pose) for r in records]
    classes = sorted({r.class_id for r in records})

    def _map(boxes):
        if not classes:
            return 0.0
        dets = [Detection((r.scene_id, r.reference.value), r.class_id, b, 1.0) for r, b in zip(records, boxes)]
        return mean_ap(dets, gts, classes, iou_thresh)[0]

    map_before = _map([r.proposal for r in records])
    map_after = _map(aligned)
    rows = [
        ("center_error_px", before.center, after.center),
        ("size_error_px", before.size, after.size),
        ("angle_error_deg", before.angle_deg, after.angle_deg),
        ("mean_iou", before.iou, after.iou),
        (f"map@{iou_thresh:g}", map_before, map_after),
    ]
    reduction = 1.0 - after.center / before.center if before.center > 0 else 0.0
    report = Path(args.report)
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(["metric", "before", "after"])
    for name, b, a in rows:
        w.writerow([name, _fmt(b), _fmt(a)])
    w.writerow(["center_error_reduction", "", _fmt(reduction)])
    table = [f"{'metric':<22}{'before':>12}{'after':>12}"]
    table += [f"{name:<22}{b:>12.4f}{a:>12.4f}" for name, b, a in rows]
    table.append(f"{'center_error_reduction':<22}{'':>12}{reduction:>12.4f}")
    try:
        report.parent.mkdir(parents=True, exist_ok=True)
        report.write_text(buf.getvalue(), encoding="utf-8")
        report.with_suffix(".txt").write_text("\n".join(table) + "\n", encoding="utf-8")
        write_jsonl(report.with_suffix(".aligned.jsonl"),
                    [Detection(f"{r.scene_id}:{r.object_id}", r.class_id, b, 1.0) for r, b in zip(records, aligned)])
    except OSError as exc:
        raise CliError(f"cannot write report: {exc}") from exc
    print(f"held-out objects: {len(records)} (checkpoint kind: {header.get('kind')})")
    print("\n".join(table))
    return EXIT_OK


def cmd_stats(args) -> int:
    scenes, manifest = _load_dataset(args.dataset_dir)
    pairs = [a for sc in scenes for a in harmonize_scene(sc, args.dark_threshold).annotations]
    stats = deviation_stats(pairs, args.pos_px, args.size_px, args.angle_deg)
    text = stats.to_csv()
    if args.out:
        Path(args.out).write_text(text, encoding="utf-8")
    sys.stdout.write(text)
    return EXIT_OK


def _parse_box(values) -> RotatedBox:
    try:
        return RotatedBox(*values)
    except InvalidBox as exc:
        raise CliError(f"invalid box: {exc}") from exc


def cmd_ms_score(args) -> int:
    try:
        img = GrayImage(read_pnm(args.image))
    except (OSError, PnmError) as exc:
        raise CliError(f"cannot read image: {exc}") from exc
    try:
        s = ms_score(img, _parse_box(args.box), args.extend, invert=args.invert)
    except EmptyCrop as exc:
        raise CliError(str(exc)) from exc
    print("score,n,n_object,n_bbox")
    print(f"{_fmt(s.score)},{s.n},{s.n_object},{s.n_bbox}")
    return EXIT_OK


def cmd_iou(args) -> int:
    print(_fmt(rotated_iou(_parse_box(args.box_a), _parse_box(args.box_b))))
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="crossalign", description=__doc__.splitlines()[0])
    p.add_argument("--version", action="version", version=__version__)
    p.add_argument("-v", "--verbose", action="store_true")
    sub = p.add_subparsers(dest="command", required=True)

    s = sub.add_parser("simulate", help="generate a synthetic paired dataset")
    s.add_argument("config", nargs="?", help="run config JSON (defaults if omitted)")
    s.add_argument("out_dir")
    s.set_defaults(func=cmd_simulate)

    t = sub.add_parser("train-align", help="train the alignment head")
    t.add_argument("dataset_dir")
    t.add_argument("config", help="run config JSON")
    t.add_argument("checkpoint")
    t.add_argument("--epochs", type=int)
    t.add_argument("--no-ms", action="store_true", help="always use IR as the reference modality")
    t.add_argument("--no-jitter", action="store_true", help="skip jitter augmentation")
    g = t.add_mutually_exclusive_group()
    g.add_argument("--oracle", action="store_true", help="write an oracle checkpoint (true deviations)")
    g.add_argument("--untrained", action="store_true", help="write an all-zero checkpoint")
    t.set_defaults(func=cmd_train_align)

    e = sub.add_parser("eval", help="align the held-out split and report errors")
    e.add_argument("dataset_dir")
    e.add_argument("checkpoint")
    e.add_argument("report", help="CSV report path")
    e.set_defaults(func=cmd_eval)

    st = sub.add_parser("stats", help="cross-modal deviation statistics as CSV")
    st.add_argument("dataset_dir")
    st.add_argument("--pos-px", type=float, default=3.0)
    st.add_argument("--size-px", type=float, default=3.0)
    st.add_argument("--angle-deg", type=float, default=3.0)
    st.add_argument("--dark-threshold", type=float, default=10.0)
    st.add_argument("--out")
    st.set_defaults(func=cmd_stats)

    m = sub.add_parser("ms-score", help="annotation quality score of one box")
    m.add_argument("image", help="PGM or PPM image")
    m.add_argument("box", nargs=5, type=float, metavar=("CX", "CY", "W", "H", "THETA"))
    m.add_argument("--extend", type=float, default=1.25)
    m.add_argument("--invert", action="store_true", help="objects are dark on a bright background")
    m.set_defaults(func=cmd_ms_score)

    i = sub.add_parser("iou", help="rotated IoU of two boxes")
    i.add_argument("--a", dest="box_a", nargs=5, type=float, required=True, metavar=("CX", "CY", "W", "H", "THETA"))
    i.add_argument("--b", dest="box_b", nargs=5, type=float, required=True, metavar=("CX", "CY", "W", "H", "THETA"))
    i.set_defaults(func=cmd_iou)
    return p


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(message)s")
    try:
        return args.func(args)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except CliError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return exc.code


if __name__ == "__main__":
    sys.exit(main())
