"""Command-line entry point: ``alpr {inspect,run,eval,bench,augment,anchors}``.

Exit codes: 0 success, 1 other error, 2 usage, 3 config parse, 4 model/weights,
5 data/IO, 6 validation.
"""

from __future__ import annotations

import argparse
import json
import logging
import sys
from concurrent.futures import ThreadPoolExecutor
from pathlib import Path

import numpy as np

from .errors import AlprError, DataError, ValidationError
from .pipeline import MODEL_DIR_ENV, Models, PipelineConfig

log = logging.getLogger("alpr")

IMAGE_SUFFIXES = {".png", ".jpg", ".jpeg", ".bmp", ".rgb"}


def _parse_counts(text: str) -> list[int]:
    try:
        return [int(t) for t in text.split(",") if t.strip()]
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected comma-separated integers, got {text!r}") from None


def _unit(text: str) -> float:
    v = float(text)
    if not 0.0 <= v <= 1.0:
        raise argparse.ArgumentTypeError(f"{v} is outside [0, 1]")
    return v


def _add_pipeline_flags(p: argparse.ArgumentParser) -> None:
    p.add_argument("--model-dir", help=f"directory with {{vehicle,lp,ocr}}.{{cfg,weights}} (default ${MODEL_DIR_ENV})")
    p.add_argument("--vehicle-thresh", type=_unit, default=0.25)
    p.add_argument("--layout-thresh", type=_unit, default=0.75)
    p.add_argument("--lp-thresh", type=_unit, default=0.25, help="minimum score of a plate candidate")
    p.add_argument("--char-thresh", type=_unit, default=None, help="override the rules file thresholds")
    p.add_argument("--char-thresh-eu", type=_unit, default=None, help="override for European plates")
    p.add_argument("--nms-iou", type=_unit, default=0.25)
    p.add_argument("--rules", help="layout rules JSON (default: built-in)")


def _pipeline_config(args) -> PipelineConfig:
    return PipelineConfig(
        vehicle_thresh=args.vehicle_thresh,
        layout_thresh=args.layout_thresh,
        lp_thresh=args.lp_thresh,
        char_thresh=args.char_thresh,
        char_thresh_eu=args.char_thresh_eu,
        nms_iou=args.nms_iou,
        rules_path=args.rules,
        model_dir=args.model_dir,
    )


# --------------------------------------------------------------------- inspect


def cmd_inspect(args) -> int:
    from .model_io import builtin_config, describe, load_config, load_weights_file

    if args.config in ("vehicle", "lp", "ocr") and not Path(args.config).exists():
        model = builtin_config(args.config)
    else:
        try:
            model = load_config(args.config)
        except OSError as exc:
            raise DataError(f"cannot read {args.config}: {exc}") from exc
    if args.weights:
        model = load_weights_file(model, args.weights)
    print(describe(model))
    return 0


# --------------------------------------------------------------------- run


def list_images(target: Path) -> list[tuple[Path, str]]:
    """(path, record key) pairs; keys are relative to the input directory."""
    if target.is_dir():
        files = sorted(p for p in target.rglob("*") if p.suffix.lower() in IMAGE_SUFFIXES and p.is_file())
        return [(p, p.relative_to(target).as_posix()) for p in files]
    if target.is_file():
        return [(target, target.name)]
    raise DataError(f"{target} does not exist")


def draw_overlay(image: np.ndarray, out) -> np.ndarray:
    from PIL import Image, ImageDraw

    im = Image.fromarray(image)
    draw = ImageDraw.Draw(im)
    for r in out.results:
        draw.rectangle([r.vehicle_rect[0], r.vehicle_rect[1], r.vehicle_rect[2] - 1, r.vehicle_rect[3] - 1], outline=(255, 255, 0))
        if r.plate_rect:
            x0, y0, x1, y1 = r.plate_rect
            draw.rectangle([x0, y0, x1 - 1, y1 - 1], outline=(255, 0, 0))
            draw.text((x0, max(0, y0 - 12)), f"{r.text} [{r.plate.layout.value}]", fill=(255, 255, 255))
        for x, y, w, h in r.char_rects:
            draw.rectangle([x, y, x + w - 1, y + h - 1], outline=(0, 255, 255))
    return np.asarray(im)


def cmd_run(args) -> int:
    from .inference import load_image, save_image
    from .pipeline import output_record, run_pipeline, timing_record

    config = _pipeline_config(args)
    config.rulesets()  # fail early on a bad rules file
    models = Models.from_dir(args.model_dir)
    images = list_images(Path(args.input))
    out_dir = Path(args.out)
    out_dir.mkdir(parents=True, exist_ok=True)
    if args.overlay:
        (out_dir / "overlays").mkdir(exist_ok=True)

    def work(item):
        path, key = item
        image = load_image(path)
        out = run_pipeline(image, models, config)
        if args.overlay:
            save_image(out_dir / "overlays" / (Path(key).with_suffix("").as_posix().replace("/", "__") + ".png"),
                       draw_overlay(image, out))
        return output_record(key, out), timing_record(key, out)

    with ThreadPoolExecutor(max_workers=max(1, args.workers)) as pool, \
            open(out_dir / "results.jsonl", "w") as res_f, open(out_dir / "timings.jsonl", "w") as tim_f:
        # map() yields in input order whatever the completion order
        for rec, tim in pool.map(work, images):
            res_f.write(json.dumps(rec, sort_keys=True) + "\n")
            tim_f.write(json.dumps(tim, sort_keys=True) + "\n")
            plates = [v["plate"]["text"] for v in rec["vehicles"] if v.get("plate")]
            print(f"{rec['image']}: {rec['status']} {' '.join(p or '-' for p in plates)}".rstrip())
    log.info("wrote %d records to %s", len(images), out_dir / "results.jsonl")
    return 0


# --------------------------------------------------------------------- eval


def cmd_eval(args) -> int:
    from .evaluation import evaluate_runs

    if args.runs:
        manifest_path = Path(args.runs)
        try:
            manifest = json.loads(manifest_path.read_text())
        except (OSError, ValueError) as exc:
            raise DataError(f"cannot read runs manifest {manifest_path}: {exc}") from exc
        base = manifest_path.parent
    elif args.results and args.annotations:
        manifest = {"runs": [{"dataset": args.dataset, "results": args.results,
                              "annotations": args.annotations, "merge_1_I": args.merge_1_I}]}
        base = Path(".")
    else:
        raise ValidationError("give --runs, or both --results and --annotations")
    if args.weighted:
        manifest["weighted"] = True
    report = evaluate_runs(manifest, base)
    print(report.format())
    if args.out:
        Path(args.out).write_text(json.dumps(report.to_dict(), indent=2))
    return 0


# --------------------------------------------------------------------- bench


def cmd_bench(args) -> int:
    from . import bench
    from .inference import load_image

    config = _pipeline_config(args)
    if args.fixture:
        stats, rows = bench.fixture_sweep(args.sweep, args.repeats, args.warmup, config)
    else:
        if not args.image:
            raise ValidationError("bench needs an image, or --fixture")
        models = Models.from_dir(args.model_dir)
        stats = bench.measure_stages(load_image(args.image), models, config, args.repeats, args.warmup)
        rows = bench.sweep(stats, args.sweep)
    print(bench.format_table(stats, rows))
    if args.out:
        Path(args.out).write_text(json.dumps({
            "stages_ms": {"vehicle": stats.vehicle, "lp": stats.lp, "rec": stats.rec},
            "repeats": stats.repeats,
            "sweep": [r.__dict__ for r in rows],
        }, indent=2))
    return 0


# --------------------------------------------------------------------- augment


def cmd_augment(args) -> int:
    from . import augmentation as aug
    from .evaluation import load_annotations, save_annotations
    from .inference import save_image

    manifest = Path(args.manifest)
    plates = aug.plates_from_records(load_annotations(manifest), manifest.parent)
    if not plates:
        raise DataError(f"{manifest} has no plates with character annotations")
    if args.count < 1:
        raise ValidationError("--count must be at least 1")
    ss = np.random.SeedSequence(args.seed)
    if args.mode == "permute":
        generated = aug.permute_corpus(plates, args.count, ss)
    elif args.mode == "negative":
        generated = [aug.negative_image(p) for p in plates]
    else:
        op = aug.jitter if args.mode == "jitter" else aug.rescale_margin
        seeds = ss.spawn(args.count * len(plates))
        generated = [op(p, seeds[k * len(plates) + i]) for k in range(args.count) for i, p in enumerate(plates)]

    out = Path(args.out)
    (out / "images").mkdir(parents=True, exist_ok=True)
    records = []
    for i, p in enumerate(generated):
        rel = f"images/{args.mode}_{i:06d}.png"
        save_image(out / rel, p.raster)
        records.append(aug.plate_record(p, rel))
    save_annotations(out / "manifest.txt", records)
    if args.mode == "permute":
        counts = aug.glyph_counts(plates)
        before = aug.category_balance(counts)
        counts.update(aug.glyph_counts(generated))
        after = aug.category_balance(counts)
        for cat in before:
            print(f"{cat}: max/min count ratio {before[cat]:.2f} -> {after[cat]:.2f}")
    print(f"wrote {len(generated)} plates to {out / 'manifest.txt'}")
    return 0


# --------------------------------------------------------------------- anchors


def _image_size(path: Path) -> tuple[int, int]:
    if path.suffix.lower() == ".rgb":
        meta = json.loads(path.with_suffix(".json").read_text())
        return int(meta["width"]), int(meta["height"])
    from PIL import Image

    with Image.open(path) as im:
        return im.size


def cmd_anchors(args) -> int:
    from .decode import anchor_cost, anchors_to_grid, compute_anchors
    from .evaluation import load_annotations

    ann = Path(args.annotations)
    boxes = []
    for rec in load_annotations(ann):
        if args.target == "vehicle":
            if not rec.vehicles:
                continue
            try:
                w, h = _image_size(ann.parent / rec.image_path)
            except (OSError, ValueError, KeyError) as exc:
                raise DataError(f"cannot size {rec.image_path}: {exc}") from exc
            boxes += [(v.rect[2] / w, v.rect[3] / h) for v in rec.vehicles]
        elif args.target == "plate":
            boxes += [(v.plate.rect[2] / v.rect[2], v.plate.rect[3] / v.rect[3])
                      for v in rec.vehicles if v.plate is not None]
        else:
            for p in rec.all_plates():
                boxes += [(c.rect[2] / p.rect[2], c.rect[3] / p.rect[3]) for c in p.chars]
    if not boxes:
        raise DataError(f"no {args.target} boxes in {ann}")
    history: list[float] = []
    anchors = compute_anchors(boxes, args.k, args.seed, history=history)
    gw, gh = args.grid
    grid = anchors_to_grid(anchors, gw, gh)
    print(f"{len(boxes)} boxes, {len(history)} iterations, mean 1-IoU {anchor_cost(boxes, anchors) / len(boxes):.4f}")
    print("anchors=" + ", ".join(f"{w:.4f},{h:.4f}" for w, h in grid))
    return 0


def _grid(text: str) -> tuple[int, int]:
    try:
        w, h = (int(t) for t in text.lower().split("x"))
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected WxH, got {text!r}") from None
    return w, h


# --------------------------------------------------------------------- main


def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="alpr", description=__doc__.splitlines()[0])
    ap.add_argument("-v", "--verbose", action="store_true")
    sub = ap.add_subparsers(dest="command", required=True)

    p = sub.add_parser("inspect", help="print layer shapes and BFLOPs of a .cfg")
    p.add_argument("config", help="path to a .cfg, or one of vehicle/lp/ocr for the shipped configs")
    p.add_argument("--weights", help="also validate a .weights file against the config")
    p.set_defaults(func=cmd_inspect)

    p = sub.add_parser("run", help="detect and read plates in an image or directory")
    p.add_argument("input")
    p.add_argument("--out", default="alpr_out")
    p.add_argument("--overlay", action="store_true", help="also write annotated PNGs")
    p.add_argument("--workers", type=int, default=1)
    p.add_argument("--seed", type=int, default=0, help="unused; the pipeline is deterministic")
    _add_pipeline_flags(p)
    p.set_defaults(func=cmd_run)

    p = sub.add_parser("eval", help="score results.jsonl against annotations")
    p.add_argument("--results")
    p.add_argument("--annotations")
    p.add_argument("--dataset", default="default")
    p.add_argument("--merge-1-I", dest="merge_1_I", action="store_true", help="read '1' and 'I' as one class")
    p.add_argument("--runs", help="JSON manifest listing several runs / datasets")
    p.add_argument("--weighted", action="store_true", help="weight the average row by plate count")
    p.add_argument("--out", help="write the report as JSON")
    p.set_defaults(func=cmd_eval)

    p = sub.add_parser("bench", help="per-stage timings and the vehicle-count sweep")
    p.add_argument("image", nargs="?")
    p.add_argument("--sweep", type=_parse_counts, default=[1, 2, 3, 4])
    p.add_argument("--repeats", type=int, default=20)
    p.add_argument("--warmup", type=int, default=2)
    p.add_argument("--fixture", action="store_true", help="use the synthetic models and scenes; adds measured totals")
    p.add_argument("--out", help="write the table as JSON")
    _add_pipeline_flags(p)
    p.set_defaults(func=cmd_bench)

    p = sub.add_parser("augment", help="generate plate variants from an annotated corpus")
    p.add_argument("manifest", help="annotation file with plates and characters")
    p.add_argument("--mode", choices=("permute", "negative", "jitter", "rescale"), required=True)
    p.add_argument("--count", type=int, default=1, help="variants per plate (ignored by negative)")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_augment)

    p = sub.add_parser("anchors", help="k-means anchors from annotated boxes")
    p.add_argument("annotations")
    p.add_argument("--target", choices=("vehicle", "plate", "char"), default="vehicle")
    p.add_argument("-k", type=int, default=5)
    p.add_argument("--grid", type=_grid, default=(13, 13), help="output grid WxH for cfg units")
    p.add_argument("--seed", type=int, default=0)
    p.set_defaults(func=cmd_anchors)
    return ap


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(levelname)s %(message)s")
    try:
        return args.func(args)
    except AlprError as exc:
        print(f"alpr {args.command}: error: {exc}", file=sys.stderr)
        return exc.exit_code
    except OSError as exc:
        print(f"alpr {args.command}: error: {exc}", file=sys.stderr)
        return DataError.exit_code


if __name__ == "__main__":
    sys.exit(main())
