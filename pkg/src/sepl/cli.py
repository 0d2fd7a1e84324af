"""Command-line front end: enhance, eval, synth, cam-threshold, masks-inspect.

Exit codes: 0 success, 1 usage/config error, 2 finished with per-image failures.
"""
from __future__ import annotations

import argparse
import json
import logging
import os
import sys
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path
from typing import Optional, Sequence

from .core import FlattenPolicy, SeplConfig, canonicalize, cam_to_label_map, enhance_image
from .errors import SeplError, ThresholdOutOfRange
from .io import (
    PRED_IOU_MIN,
    STABILITY_MIN,
    ManifestEntry,
    QualityFilter,
    filter_records,
    load_mask_records,
    read_label_png,
    read_manifest,
    read_score_stack,
    write_label_png,
)
from .metrics import ConfusionMatrix, accumulate, report
from .synth import PRESETS, SceneSpec, generate, preset_spec, write_corpus

log = logging.getLogger("sepl")

EXIT_OK, EXIT_USAGE, EXIT_PARTIAL = 0, 1, 2


@dataclass
class RunConfig:
    manifest: Path
    out: Path
    sepl: SeplConfig = field(default_factory=SeplConfig)
    quality: QualityFilter = field(default_factory=QualityFilter)
    workers: int = 1
    format: str = "human"

    def __post_init__(self):
        if self.workers < 1:
            raise ValueError(f"worker count must be >= 1, got {self.workers}")
        if self.format not in ("human", "machine"):
            raise ValueError(f"unknown report format {self.format!r}")


# enhance -----------------------------------------------------------------------------


def _dump_json(obj, path: Path) -> None:
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text(json.dumps(obj, indent=1, sort_keys=True) + "\n")


def enhance_entry(entry: ManifestEntry, num_classes: Optional[int], cfg: SeplConfig, quality: QualityFilter, out: Path) -> dict:
    """Process one manifest entry end to end; returns its outcome record (written to disk as well)."""
    if entry.pseudo is None or entry.masks is None:
        raise SeplError("entry needs both 'pseudo' and 'masks'")
    pseudo = read_label_png(entry.pseudo, num_classes)
    records, rejected = load_mask_records(entry.masks)
    kept = filter_records(records, quality)
    for r in kept:
        if r.mask.shape != pseudo.shape:
            raise SeplError(f"mask size {r.mask.shape} differs from label map {pseudo.shape}")
    outcome = enhance_image(pseudo, canonicalize([r.mask for r in kept]), cfg)
    write_label_png(outcome.flat, out / "labels" / f"{entry.id}.png")
    record = {
        "id": entry.id,
        "records_total": len(records) + len(rejected),
        "records_rejected": len(rejected),
        "records_filtered": len(records) - len(kept),
        **outcome.to_record(),
    }
    _dump_json(record, out / "records" / f"{entry.id}.json")
    return record


def _enhance_job(args) -> tuple[str, Optional[dict], Optional[str]]:
    entry = args[0]
    try:
        return entry.id, enhance_entry(*args), None
    except (SeplError, OSError, ValueError) as exc:
        return entry.id, None, f"{type(exc).__name__}: {exc}"


def selection_stats(records: Sequence[dict]) -> dict:
    """Class- and mask-level selection statistics from per-image outcome records."""
    classes = fallback = with_os = with_op = 0
    masks = {"by_os": 0, "by_op": 0, "both": 0}
    for rec in records:
        for cls in rec["classes"]:
            classes += 1
            rules = {s["rule"] for s in cls["selected"]}
            if rules == {"fallback_original"}:
                fallback += 1
                continue
            with_os += bool(rules & {"by_os", "both"})
            with_op += bool(rules & {"by_op", "both"})
            for s in cls["selected"]:
                masks[s["rule"]] += 1

    def frac(n: int) -> Optional[float]:
        return n / classes if classes else None

    return {
        "classes": classes,
        "classes_fallback": fallback,
        "classes_enhanced": classes - fallback,
        "classes_with_os_mask": with_os,
        "classes_with_op_mask": with_op,
        "fraction_fallback": frac(fallback),
        "fraction_os": frac(with_os),
        "fraction_op": frac(with_op),
        "selected_masks": masks,
    }


def run_enhance(cfg: RunConfig) -> tuple[int, dict]:
    manifest = read_manifest(cfg.manifest)
    jobs = [(e, manifest.num_classes, cfg.sepl, cfg.quality, cfg.out) for e in manifest.entries]
    if cfg.workers == 1:
        results = [_enhance_job(j) for j in jobs]
    else:
        with ProcessPoolExecutor(max_workers=cfg.workers) as pool:
            results = list(pool.map(_enhance_job, jobs, chunksize=max(1, len(jobs) // (4 * cfg.workers))))
    records = [rec for _, rec, _ in results if rec is not None]
    skipped = [{"id": i, "reason": err} for i, _, err in results if err is not None]
    summary = {
        "config": {
            "t1": cfg.sepl.t1,
            "t2": cfg.sepl.t2,
            "flatten": cfg.sepl.flatten_policy.value,
            "mask_filter": cfg.quality.enabled,
            "pred_iou_min": cfg.quality.pred_iou_min,
            "stability_min": cfg.quality.stability_min,
        },
        "images": len(manifest.entries),
        "processed": len(records),
        "skipped": skipped,
        "selection": selection_stats(records),
    }
    _dump_json(summary, cfg.out / "summary.json")
    return (EXIT_PARTIAL if skipped else EXIT_OK), summary


def _print_summary(summary: dict, fmt: str) -> None:
    if fmt == "machine":
        print(json.dumps(summary, sort_keys=True))
        return
    c = summary["config"]
    print(f"SEPL t1={c['t1']} t2={c['t2']} flatten={c['flatten']} "
          f"mask_filter={'on' if c['mask_filter'] else 'off'} "
          f"(pred_iou>={c['pred_iou_min']}, stability>={c['stability_min']})")
    print(f"images: {summary['images']}  processed: {summary['processed']}  skipped: {len(summary['skipped'])}")
    s = summary["selection"]
    if s["classes"]:
        print(f"classes: {s['classes']}  enhanced: {s['classes_enhanced']}  fallback: {s['classes_fallback']} "
              f"({100 * s['fraction_fallback']:.1f}%)")
        print(f"classes with an o_s-selected mask: {100 * s['fraction_os']:.1f}%  "
              f"with an o_p-selected mask: {100 * s['fraction_op']:.1f}%")
    for item in summary["skipped"]:
        print(f"  skipped {item['id']}: {item['reason']}")


def cmd_enhance(args) -> int:
    cfg = RunConfig(
        manifest=Path(args.manifest),
        out=Path(args.out),
        sepl=SeplConfig(args.t1, args.t2, FlattenPolicy(args.flatten.replace("-", "_"))),
        quality=QualityFilter(not args.no_mask_filter, args.pred_iou_min, args.stability_min),
        workers=args.workers,
        format=args.format,
    )
    code, summary = run_enhance(cfg)
    _print_summary(summary, cfg.format)
    return code


# eval --------------------------------------------------------------------------------


def _label_paths(source: Path, field_name: str) -> tuple[dict[str, Path], Optional[int], Optional[list]]:
    if source.is_dir():
        return {p.stem: p for p in sorted(source.glob("*.png"))}, None, None
    manifest = read_manifest(source)
    paths = {e.id: getattr(e, field_name) for e in manifest.entries if getattr(e, field_name) is not None}
    return paths, manifest.num_classes, manifest.class_names


def cmd_eval(args) -> int:
    pred, _, _ = _label_paths(Path(args.pred), "pseudo")
    gt, k_manifest, names = _label_paths(Path(args.gt), "gt")
    k = args.num_classes if args.num_classes is not None else k_manifest
    if k is None:
        raise SeplError("class count unknown: pass --num-classes or add a manifest header")
    common = sorted(set(pred) & set(gt))
    missing = sorted(set(pred) ^ set(gt))
    for image_id in missing:
        side = "prediction" if image_id in pred else "ground truth"
        print(f"MissingPair: {image_id} only has a {side}", file=sys.stderr)
    if not common:
        print("error: no image ids in common between prediction and ground truth", file=sys.stderr)
        return EXIT_USAGE
    cm = ConfusionMatrix.zeros(k)
    failures = 0
    for image_id in common:
        try:
            cm = accumulate(cm, read_label_png(pred[image_id], k), read_label_png(gt[image_id], k))
        except (SeplError, OSError) as exc:
            failures += 1
            print(f"skipped {image_id}: {type(exc).__name__}: {exc}", file=sys.stderr)
    rep = report(cm, names)
    if args.format == "machine":
        print("\n".join(rep.to_lines()))
    else:
        print(f"images scored: {len(common) - failures}")
        print(rep.to_text())
    return EXIT_PARTIAL if (missing or failures) else EXIT_OK


# synth -------------------------------------------------------------------------------


def _scene_specs(args) -> tuple[list[tuple[str, SceneSpec]], int]:
    if args.spec:
        conf = json.loads(Path(args.spec).read_text())
    else:
        conf = {}
    if "scenes" in conf:
        specs = [SceneSpec.from_json(s) for s in conf["scenes"]]
        k = conf.get("num_classes", max([s.num_classes for s in specs], default=5))
        return [(f"scene_{i:05d}", s) for i, s in enumerate(specs)], k
    preset = args.preset or conf.get("preset", "partial")
    count = args.count if args.count is not None else conf.get("count", 10)
    seed = args.seed if args.seed is not None else conf.get("seed", 0)
    canvas = tuple(args.canvas or conf.get("canvas", (64, 64)))
    k = args.num_classes or conf.get("num_classes", 5)
    specs = [preset_spec(preset, seed + i, canvas, k) for i in range(count)]
    return [(f"{preset}_{i:05d}", s) for i, s in enumerate(specs)], k


def cmd_synth(args) -> int:
    specs, k = _scene_specs(args)
    scenes = [(image_id, generate(spec)) for image_id, spec in specs]
    manifest = write_corpus(scenes, Path(args.out), k)
    print(f"wrote {len(scenes)} scenes, manifest {manifest}")
    return EXIT_OK


# cam-threshold -----------------------------------------------------------------------


def cmd_cam_threshold(args) -> int:
    out = Path(args.out)
    if not 0.0 <= args.bg_threshold <= 1.0:
        raise ThresholdOutOfRange(f"background threshold {args.bg_threshold} outside [0, 1]")
    failures = 0
    for path in map(Path, args.stacks):
        try:
            label_map = cam_to_label_map(read_score_stack(path), args.bg_threshold, args.num_classes)
            write_label_png(label_map, out / f"{path.stem}.png")
        except (SeplError, OSError) as exc:
            failures += 1
            print(f"skipped {path}: {type(exc).__name__}: {exc}", file=sys.stderr)
    print(f"wrote {len(args.stacks) - failures} label maps to {out}")
    return EXIT_PARTIAL if failures else EXIT_OK


# masks-inspect -----------------------------------------------------------------------


def cmd_masks_inspect(args) -> int:
    quality = QualityFilter(not args.no_mask_filter, args.pred_iou_min, args.stability_min)
    for path in args.files:
        records, rejected = load_mask_records(path)
        kept = 0
        for i, r in enumerate(records):
            ok = r.area > 0 and quality.accepts(r)
            kept += ok
            row = {
                "file": str(path),
                "index": i,
                "size": list(r.segmentation.size),
                "area": r.area,
                "bbox": list(r.bbox),
                "predicted_iou": r.predicted_iou,
                "stability_score": r.stability_score,
                "kept": ok,
            }
            if args.format == "machine":
                print(json.dumps(row))
            else:
                print(f"{i:4d} area={r.area:7d} bbox={tuple(r.bbox)} iou={r.predicted_iou:.3f} "
                      f"stab={r.stability_score:.3f} {'kept' if ok else 'dropped'}")
        summary = {"file": str(path), "records": len(records), "kept": kept,
                   "dropped": len(records) - kept, "rejected": len(rejected)}
        if args.format == "machine":
            print(json.dumps({"record": "summary", **summary}))
        else:
            print(f"{path}: {kept}/{len(records)} kept, {len(rejected)} polygon records rejected")
    return EXIT_OK


# parser ------------------------------------------------------------------------------


def _default_workers() -> int:
    try:
        return int(os.environ.get("SEPL_WORKERS", "1"))
    except ValueError:
        return 1


def _add_filter_flags(p: argparse.ArgumentParser) -> None:
    p.add_argument("--pred-iou-min", type=float, default=PRED_IOU_MIN)
    p.add_argument("--stability-min", type=float, default=STABILITY_MIN)
    p.add_argument("--no-mask-filter", action="store_true", help="keep every well-formed mask record")


def _add_format(p: argparse.ArgumentParser) -> None:
    p.add_argument("--format", choices=("human", "machine"), default="human")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="sepl", description="Refine pseudo-labels with class-agnostic masks.")
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("enhance", help="enhance every image of a manifest")
    p.add_argument("--manifest", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--t1", type=float, default=0.5)
    p.add_argument("--t2", type=float, default=0.85)
    p.add_argument("--flatten", choices=("smaller-region-last", "higher-class-last"), default="smaller-region-last")
    _add_filter_flags(p)
    p.add_argument("--workers", type=int, default=_default_workers())
    _add_format(p)
    p.set_defaults(func=cmd_enhance)

    p = sub.add_parser("eval", help="score predicted label maps against ground truth")
    p.add_argument("--pred", required=True, help="directory of <id>.png or a manifest (uses 'pseudo')")
    p.add_argument("--gt", required=True, help="manifest with 'gt' paths, or a directory of <id>.png")
    p.add_argument("--num-classes", type=int)
    _add_format(p)
    p.set_defaults(func=cmd_eval)

    p = sub.add_parser("synth", help="generate a synthetic corpus")
    p.add_argument("--spec", help="JSON corpus spec")
    p.add_argument("--preset", choices=PRESETS)
    p.add_argument("--count", type=int)
    p.add_argument("--seed", type=int)
    p.add_argument("--canvas", type=int, nargs=2, metavar=("H", "W"))
    p.add_argument("--num-classes", type=int)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_synth)

    p = sub.add_parser("cam-threshold", help="turn score stacks into pseudo-label PNGs")
    p.add_argument("stacks", nargs="+")
    p.add_argument("--bg-threshold", type=float, required=True)
    p.add_argument("--num-classes", type=int)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_cam_threshold)

    p = sub.add_parser("masks-inspect", help="list mask records and the quality-filter verdict")
    p.add_argument("files", nargs="+")
    _add_filter_flags(p)
    _add_format(p)
    p.set_defaults(func=cmd_masks_inspect)
    return parser


def main(argv: Optional[Sequence[str]] = None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return EXIT_USAGE if exc.code else EXIT_OK
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(levelname)s %(message)s")
    try:
        return args.func(args)
    except (SeplError, ValueError, OSError) as exc:
        print(f"error: {type(exc).__name__}: {exc}", file=sys.stderr)
        return EXIT_USAGE


def entry_point() -> None:
    sys.exit(main())
