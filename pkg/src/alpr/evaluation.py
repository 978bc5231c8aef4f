"""Annotation I/O, IoU matching, precision/recall, recognition rate, splits, run aggregation.

Annotation files are plain text, one record per image::

    # comments and blank lines are ignored
    image  <path, rest of line>
    vehicle <car|motorcycle> <x> <y> <w> <h>
    plate  <layout> <x> <y> <w> <h> [<text>]
    char   <glyph> <x> <y> <w> <h>

Boxes are top-left pixel coordinates.  A ``plate`` line belongs to the most
recent ``vehicle`` of the record (or to the image itself when no vehicle has
been given, as in plate-patch corpora); ``char`` lines belong to the most
recent plate and are listed in reading order.
"""

from __future__ import annotations

import json
import math
import statistics
from dataclasses import dataclass, field
from pathlib import Path
from typing import Callable, Iterable, Sequence

import numpy as np

from .decode import iou_matrix
from .errors import DataError, ValidationError
from .layout_rules import ALPHABET, Layout, VehicleKind

Rect = tuple[float, float, float, float]  # x, y, w, h


@dataclass
class CharAnnotation:
    glyph: str
    rect: Rect


@dataclass
class PlateAnnotation:
    layout: Layout
    rect: Rect
    text: str = ""
    chars: list[CharAnnotation] = field(default_factory=list)


@dataclass
class VehicleAnnotation:
    kind: VehicleKind
    rect: Rect
    plate: PlateAnnotation | None = None


@dataclass
class AnnotationRecord:
    image_path: str
    vehicles: list[VehicleAnnotation] = field(default_factory=list)
    plates: list[PlateAnnotation] = field(default_factory=list)  # plates without a vehicle

    def all_plates(self) -> list[PlateAnnotation]:
        return [v.plate for v in self.vehicles if v.plate is not None] + list(self.plates)


def _num(v: float) -> str:
    v = float(v)
    return str(int(v)) if v.is_integer() else repr(v)


def _rect(tokens, lineno) -> Rect:
    try:
        x, y, w, h = (float(t) for t in tokens)
    except ValueError:
        raise DataError(f"line {lineno}: bad box {' '.join(tokens)!r}") from None
    if w <= 0 or h <= 0:
        raise DataError(f"line {lineno}: box extent must be positive")
    return (x, y, w, h)


NEST_TOLERANCE = 1.0  # pixels; absorbs rounding in hand-made annotations


def _nested(inner: Rect, outer: Rect) -> bool:
    ix0, iy0, ix1, iy1 = _corners(inner)
    ox0, oy0, ox1, oy1 = _corners(outer)
    t = NEST_TOLERANCE
    return ix0 >= ox0 - t and iy0 >= oy0 - t and ix1 <= ox1 + t and iy1 <= oy1 + t


def parse_annotations(text: str) -> list[AnnotationRecord]:
    records: list[AnnotationRecord] = []
    plate: PlateAnnotation | None = None
    for lineno, raw in enumerate(text.splitlines(), start=1):
        line = raw.strip()
        if not line or line.startswith("#"):
            continue
        tag, _, rest = line.partition(" ")
        tokens = rest.split()
        if tag == "image":
            if not rest.strip():
                raise DataError(f"line {lineno}: image needs a path")
            records.append(AnnotationRecord(rest.strip()))
            plate = None
            continue
        if not records:
            raise DataError(f"line {lineno}: {tag!r} before any image line")
        rec = records[-1]
        if tag == "vehicle":
            if len(tokens) != 5:
                raise DataError(f"line {lineno}: vehicle needs kind x y w h")
            try:
                kind = VehicleKind(tokens[0].lower())
            except ValueError:
                raise DataError(f"line {lineno}: unknown vehicle kind {tokens[0]!r}") from None
            rec.vehicles.append(VehicleAnnotation(kind, _rect(tokens[1:], lineno)))
            plate = None
        elif tag == "plate":
            if len(tokens) not in (5, 6):
                raise DataError(f"line {lineno}: plate needs layout x y w h [text]")
            try:
                layout = Layout(tokens[0].lower())
            except ValueError:
                raise DataError(f"line {lineno}: unknown layout {tokens[0]!r}") from None
            plate = PlateAnnotation(layout, _rect(tokens[1:5], lineno), tokens[5] if len(tokens) == 6 else "")
            if rec.vehicles:
                if rec.vehicles[-1].plate is not None:
                    raise DataError(f"line {lineno}: vehicle already has a plate")
                rec.vehicles[-1].plate = plate
            else:
                rec.plates.append(plate)
        elif tag == "char":
            if plate is None:
                raise DataError(f"line {lineno}: char without a plate")
            if len(tokens) != 5 or tokens[0] not in ALPHABET:
                raise DataError(f"line {lineno}: char needs glyph x y w h with glyph in the alphabet")
            plate.chars.append(CharAnnotation(tokens[0], _rect(tokens[1:], lineno)))
        else:
            raise DataError(f"line {lineno}: unknown tag {tag!r}")
    for rec in records:
        for v in rec.vehicles:
            if v.plate is not None and not _nested(v.plate.rect, v.rect):
                raise DataError(f"{rec.image_path}: plate {v.plate.rect} lies outside its vehicle {v.rect}")
        for p in rec.all_plates():
            glyphs = "".join(c.glyph for c in p.chars)
            if not p.text:
                p.text = glyphs
            elif p.chars and glyphs != p.text:
                raise DataError(f"{rec.image_path}: plate text {p.text!r} != chars {glyphs!r}")
    return records


def format_annotations(records: Iterable[AnnotationRecord]) -> str:
    out = []

    def plate_lines(p: PlateAnnotation):
        head = f"plate {p.layout.value} " + " ".join(_num(v) for v in p.rect)
        out.append(head + (f" {p.text}" if p.text else ""))
        for c in p.chars:
            out.append(f"char {c.glyph} " + " ".join(_num(v) for v in c.rect))

    for rec in records:
        out.append(f"image {rec.image_path}")
        for p in rec.plates:
            plate_lines(p)
        for v in rec.vehicles:
            out.append(f"vehicle {v.kind.value} " + " ".join(_num(x) for x in v.rect))
            if v.plate is not None:
                plate_lines(v.plate)
        out.append("")
    return "\n".join(out)


def load_annotations(path) -> list[AnnotationRecord]:
    try:
        return parse_annotations(Path(path).read_text())
    except OSError as exc:
        raise DataError(f"cannot read annotations {path}: {exc}") from exc


def save_annotations(path, records) -> None:
    Path(path).write_text(format_annotations(records))


# --------------------------------------------------------------------- matching


def _corners(rect: Rect) -> tuple[float, float, float, float]:
    x, y, w, h = rect
    return (x, y, x + w, y + h)


@dataclass
class MatchCounts:
    tp: int = 0
    fp: int = 0
    fn: int = 0
    pairs: list[tuple[int, int]] = field(default_factory=list)  # (pred, gt)

    def __add__(self, other: "MatchCounts") -> "MatchCounts":
        return MatchCounts(self.tp + other.tp, self.fp + other.fp, self.fn + other.fn)

    @property
    def precision(self) -> float:
        n = self.tp + self.fp
        return self.tp / n if n else 1.0

    @property
    def recall(self) -> float:
        n = self.tp + self.fn
        return self.tp / n if n else 1.0


def match_detections(
    predictions: Sequence[tuple[Rect, object, float]],
    ground_truth: Sequence[tuple[Rect, object]],
    iou_threshold: float = 0.5,
    compatible: Callable[[object, object], bool] | None = None,
) -> MatchCounts:
    """Greedy matching in descending score order.

    A prediction is a true positive when its best-overlapping still-unmatched,
    class-compatible ground truth has IoU strictly above the threshold.
    Boxes are (x, y, w, h).
    """
    compatible = compatible or (lambda p, g: p == g)
    n_gt = len(ground_truth)
    if not predictions:
        return MatchCounts(0, 0, n_gt)
    ious = iou_matrix(
        np.array([_corners(p[0]) for p in predictions]).reshape(-1, 4),
        np.array([_corners(g[0]) for g in ground_truth]).reshape(-1, 4),
    )
    order = sorted(range(len(predictions)), key=lambda i: (-predictions[i][2], i))
    taken = [False] * n_gt
    counts = MatchCounts()
    for i in order:
        best, best_iou = -1, iou_threshold
        for j in range(n_gt):
            if taken[j] or not compatible(predictions[i][1], ground_truth[j][1]):
                continue
            if ious[i, j] > best_iou:
                best, best_iou = j, ious[i, j]
        if best >= 0:
            taken[best] = True
            counts.tp += 1
            counts.pairs.append((i, best))
        else:
            counts.fp += 1
    counts.fn = n_gt - counts.tp
    return counts


def canonical_text(text: str, merge_1_I: bool) -> str:
    return text.replace("I", "1") if merge_1_I else text


def recognition_rate(results: Sequence[tuple[str, str]], merge_1_I: bool = False) -> float:
    """Fraction of (predicted, truth) pairs that agree on every character."""
    if not results:
        raise ValidationError("recognition rate of an empty result list")
    correct = sum(
        canonical_text(p, merge_1_I) == canonical_text(t, merge_1_I) for p, t in results
    )
    return correct / len(results)


def aggregate_runs(values: Sequence[float]) -> tuple[float, float]:
    """Mean and sample (n-1) standard deviation."""
    if not values:
        raise ValidationError("no runs to aggregate")
    mean = statistics.fmean(values)
    std = statistics.stdev(values) if len(values) > 1 else 0.0
    return mean, std


# --------------------------------------------------------------------- splits


@dataclass(frozen=True)
class SplitProtocol:
    """Either fractions (train, val, test), absolute counts, or fixed id lists."""

    ratios: tuple[float, float, float] | None = None
    counts: tuple[int, int, int] | None = None
    fixed: tuple[tuple[str, ...], tuple[str, ...], tuple[str, ...]] | None = None

    def __post_init__(self):
        given = sum(x is not None for x in (self.ratios, self.counts, self.fixed))
        if given != 1:
            raise ValidationError("give exactly one of ratios, counts, fixed")
        if self.ratios is not None:
            if any(r < 0 for r in self.ratios) or not math.isclose(sum(self.ratios), 1.0, abs_tol=1e-9):
                raise ValidationError(f"split ratios {self.ratios} must be non-negative and sum to 1")

    @classmethod
    def nested(cls, train_fraction: float, val_of_train: float) -> "SplitProtocol":
        """Train/test split, then a validation share carved out of the training part."""
        return cls(ratios=(
            train_fraction * (1 - val_of_train),
            train_fraction * val_of_train,
            1 - train_fraction,
        ))


# split presets for the datasets without an official protocol
PROTOCOLS = {
    "caltech": SplitProtocol(counts=(62, 16, 46)),
    "englishlp": SplitProtocol.nested(0.8, 0.2),
    "chineselp": SplitProtocol(ratios=(0.4, 0.2, 0.4)),
    "aolp": SplitProtocol.nested(2 / 3, 0.2),
    "openalpr-eu": SplitProtocol(ratios=(0.0, 0.0, 1.0)),
}


def _apportion(n: int, ratios) -> list[int]:
    """Largest-remainder rounding of n * ratios."""
    raw = [n * r for r in ratios]
    sizes = [math.floor(x + 1e-9) for x in raw]
    rest = n - sum(sizes)
    order = sorted(range(len(raw)), key=lambda i: (-(raw[i] - sizes[i]), i))
    for i in order[:rest]:
        sizes[i] += 1
    return sizes


def split_dataset(items: Sequence[str], protocol: SplitProtocol, seed: int = 0):
    """Returns (train, validation, test) lists; disjoint and exhaustive."""
    items = list(items)
    if not items:
        raise ValidationError("cannot split an empty manifest")
    if protocol.fixed is not None:
        known = set(items)
        missing = [x for part in protocol.fixed for x in part if x not in known]
        if missing:
            raise DataError(f"fixed split references unknown images: {missing[:5]}")
        return tuple(list(part) for part in protocol.fixed)
    if protocol.counts is not None:
        if sum(protocol.counts) != len(items):
            raise ValidationError(f"split counts {protocol.counts} do not add up to {len(items)}")
        sizes = list(protocol.counts)
    else:
        sizes = _apportion(len(items), protocol.ratios)
    perm = np.random.default_rng(seed).permutation(len(items))
    shuffled = [items[i] for i in perm]
    a, b = sizes[0], sizes[0] + sizes[1]
    return shuffled[:a], shuffled[a:b], shuffled[b:]


# --------------------------------------------------------------------- end to end


@dataclass
class StageMetrics:
    vehicle: MatchCounts
    plate: MatchCounts
    recognition_rate: float
    plates: int

    def as_dict(self) -> dict:
        return {
            "vehicle_precision": self.vehicle.precision,
            "vehicle_recall": self.vehicle.recall,
            "lp_precision": self.plate.precision,
            "lp_recall": self.plate.recall,
            "recognition_rate": self.recognition_rate,
        }


def _xywh_to_rect(box) -> Rect:
    return tuple(float(v) for v in box)


def load_results(path) -> dict[str, dict]:
    out = {}
    try:
        lines = Path(path).read_text().splitlines()
    except OSError as exc:
        raise DataError(f"cannot read results {path}: {exc}") from exc
    for n, line in enumerate(lines, start=1):
        if line.strip():
            try:
                rec = json.loads(line)
            except ValueError as exc:
                raise DataError(f"{path}:{n}: {exc}") from None
            out[rec["image"]] = rec
    return out


def evaluate_end_to_end(
    results: dict[str, dict],
    annotations: Sequence[AnnotationRecord],
    merge_1_I: bool = False,
    iou_threshold: float = 0.5,
) -> StageMetrics:
    """Score pipeline records (see ``pipeline.output_record``) against annotations."""
    ann = {a.image_path: a for a in annotations}
    missing = sorted(set(ann) - set(results))
    extra = sorted(set(results) - set(ann))
    if missing or extra:
        raise DataError(
            f"results and annotations disagree: missing results for {missing[:10]}, "
            f"no annotations for {extra[:10]}"
        )
    veh_total, lp_total = MatchCounts(), MatchCounts()
    pairs: list[tuple[str, str]] = []
    for image, rec in sorted(ann.items()):
        res = results[image]
        pv = [(_xywh_to_rect(v["box"]), v["kind"], v["score"]) for v in res.get("vehicles", [])]
        gv = [(v.rect, v.kind.value) for v in rec.vehicles]
        veh_total = veh_total + match_detections(pv, gv, iou_threshold)

        plates = [v["plate"] for v in res.get("vehicles", []) if v.get("plate")]
        pp = [(_xywh_to_rect(p["box"]), p["layout"], p["score"]) for p in plates]
        gts = rec.all_plates()
        gp = [(p.rect, p.layout.value) for p in gts]
        lp_ok = lambda pred, gt: pred == gt or pred == Layout.UNDEFINED.value
        lp_total = lp_total + match_detections(pp, gp, iou_threshold, lp_ok)

        # recognition: box-only match, then exact string comparison
        box_match = match_detections(pp, gp, iou_threshold, lambda p, g: True)
        read = {g: plates[p]["text"] for p, g in box_match.pairs}
        pairs += [(read.get(j, ""), gt.text) for j, gt in enumerate(gts)]
    rate = recognition_rate(pairs, merge_1_I) if pairs else 0.0
    return StageMetrics(veh_total, lp_total, rate, len(pairs))


@dataclass
class DatasetReport:
    name: str
    runs: list[StageMetrics]

    def summary(self) -> dict[str, tuple[float, float]]:
        keys = self.runs[0].as_dict().keys()
        return {k: aggregate_runs([r.as_dict()[k] for r in self.runs]) for k in keys}


@dataclass
class EvalReport:
    datasets: list[DatasetReport]
    weighted: bool = False

    def average(self) -> dict[str, float]:
        """Across datasets: plain mean of dataset means, or plate-count weighted."""
        out = {}
        for key in ("vehicle_precision", "vehicle_recall", "lp_precision", "lp_recall", "recognition_rate"):
            means = [d.summary()[key][0] for d in self.datasets]
            if self.weighted:
                w = [statistics.fmean(r.plates for r in d.runs) for d in self.datasets]
                out[key] = sum(m * x for m, x in zip(means, w)) / sum(w) if sum(w) else 0.0
            else:
                out[key] = statistics.fmean(means)
        return out

    def to_dict(self) -> dict:
        return {
            "datasets": {
                d.name: {
                    "runs": [r.as_dict() for r in d.runs],
                    "mean_std": {k: list(v) for k, v in d.summary().items()},
                }
                for d in self.datasets
            },
            "average": self.average(),
            "weighted": self.weighted,
        }

    def format(self) -> str:
        lines = [f"{'dataset':<14} {'veh P':>14} {'veh R':>14} {'LP P':>14} {'LP R':>14} {'recog':>14}"]
        cell = lambda ms: f"{100 * ms[0]:6.2f}±{100 * ms[1]:5.2f}"
        for d in self.datasets:
            s = d.summary()
            lines.append(
                f"{d.name:<14} "
                + " ".join(f"{cell(s[k]):>14}" for k in ("vehicle_precision", "vehicle_recall", "lp_precision", "lp_recall", "recognition_rate"))
                + f"   ({len(d.runs)} run{'s' if len(d.runs) != 1 else ''})"
            )
        avg = self.average()
        lines.append(
            f"{'Average':<14} "
            + " ".join(f"{100 * avg[k]:>14.2f}" for k in ("vehicle_precision", "vehicle_recall", "lp_precision", "lp_recall", "recognition_rate"))
        )
        return "\n".join(lines)


def evaluate_runs(manifest: dict, base: Path | None = None) -> EvalReport:
    """Manifest: {"runs": [{"dataset", "results", "annotations", "merge_1_I"?}], "weighted"?}."""
    base = base or Path(".")
    by_name: dict[str, list[StageMetrics]] = {}
    try:
        runs = manifest["runs"]
    except (KeyError, TypeError):
        raise DataError("runs manifest needs a 'runs' list") from None
    for run in runs:
        try:
            results = load_results(base / run["results"])
            annotations = load_annotations(base / run["annotations"])
            name = run.get("dataset", "default")
        except KeyError as exc:
            raise DataError(f"run entry {run!r} lacks {exc}") from None
        metrics = evaluate_end_to_end(results, annotations, bool(run.get("merge_1_I", False)))
        by_name.setdefault(name, []).append(metrics)
    return EvalReport(
        [DatasetReport(n, r) for n, r in by_name.items()], bool(manifest.get("weighted", False))
    )
