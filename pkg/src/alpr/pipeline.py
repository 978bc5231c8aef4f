"""Three-stage recognition: vehicles -> one plate + layout per vehicle -> characters."""

from __future__ import annotations

import math
import os
import time
from dataclasses import dataclass, field, replace
from pathlib import Path

import numpy as np

from .decode import BoundingBox, decode_region, nms
from .errors import ConfigError, ModelError, ValidationError
from .inference import preprocess, run
from .layout_rules import (
    LAYOUT_CLASSES,
    VEHICLE_CLASSES,
    CharDetection,
    Layout,
    LayoutRuleSet,
    Reading,
    VehicleKind,
    load_rulesets,
    read_plate,
)
from .model_io import NetworkModel, load_config, load_weights_file

GRAY = 127
MODEL_DIR_ENV = "ALPR_MODEL_DIR"
MODEL_FILES = {"vehicle": "vehicle", "lp": "lp", "ocr": "ocr"}


@dataclass
class PipelineConfig:
    vehicle_thresh: float = 0.25
    layout_thresh: float = 0.75
    lp_thresh: float = 0.25  # minimum score for any LP candidate
    char_thresh: float | None = None  # None: take thresholds from the rules file
    char_thresh_eu: float | None = None
    nms_iou: float = 0.25
    target_ratio: float = 2.75
    ratio_band: tuple[float, float] = (2.5, 3.0)
    rules_path: str | None = None
    model_dir: str | None = None
    output_dir: str | None = None

    def __post_init__(self):
        for name in ("vehicle_thresh", "layout_thresh", "lp_thresh", "char_thresh", "char_thresh_eu", "nms_iou"):
            v = getattr(self, name)
            if v is not None and not 0.0 <= v <= 1.0:
                raise ConfigError(f"{name}={v} is outside [0, 1]")

    def rulesets(self) -> dict[Layout, LayoutRuleSet]:
        rules = load_rulesets(self.rules_path)
        out = {}
        for layout, rs in rules.items():
            thr = self.char_thresh_eu if layout == Layout.EUROPEAN else self.char_thresh
            out[layout] = rs if thr is None else replace(rs, char_conf_threshold=thr)
        return out


@dataclass(frozen=True)
class Models:
    vehicle: NetworkModel
    lp: NetworkModel
    ocr: NetworkModel

    def __post_init__(self):
        for name, model, classes in (
            ("vehicle", self.vehicle, len(VEHICLE_CLASSES)),
            ("lp", self.lp, len(LAYOUT_CLASSES)),
            ("ocr", self.ocr, 35),
        ):
            if not model.has_weights:
                raise ModelError(f"{name} model has no weights")
            if model.region.classes != classes:
                raise ModelError(f"{name} model predicts {model.region.classes} classes, expected {classes}")
            if len(model.region.anchors) != model.region.num:
                raise ModelError(f"{name} model cfg has no anchors")

    @classmethod
    def from_dir(cls, model_dir=None) -> "Models":
        """Load <dir>/{vehicle,lp,ocr}.{cfg,weights}; dir defaults to $ALPR_MODEL_DIR."""
        model_dir = model_dir or os.environ.get(MODEL_DIR_ENV)
        if not model_dir:
            raise ConfigError(f"no model directory given and ${MODEL_DIR_ENV} is unset")
        d = Path(model_dir)
        loaded = {}
        for key, stem in MODEL_FILES.items():
            cfg, weights = d / f"{stem}.cfg", d / f"{stem}.weights"
            if not cfg.exists() or not weights.exists():
                raise ModelError(f"missing {cfg} or {weights}")
            loaded[key] = load_weights_file(load_config(cfg), weights)
        return cls(**loaded)


@dataclass(frozen=True)
class VehicleDetection:
    box: BoundingBox  # normalized to the full image
    kind: VehicleKind
    score: float


@dataclass(frozen=True)
class PlateDetection:
    box: BoundingBox  # normalized to the vehicle patch
    layout: Layout
    score: float
    predicted_layout: Layout  # network's class before the undefined rule


@dataclass
class PlateResult:
    vehicle: VehicleDetection
    vehicle_rect: tuple[int, int, int, int]  # x0, y0, x1, y1 pixels
    plate: PlateDetection | None = None
    plate_rect: tuple[int, int, int, int] | None = None
    characters: list[CharDetection] = field(default_factory=list)
    char_rects: list[tuple[float, float, float, float]] = field(default_factory=list)
    text: str = ""
    status: str = "ok"  # ok | no_plate | no_characters | error
    reading: Reading | None = None
    error: str = ""


@dataclass
class StageTimings:
    vehicle_ms: float = 0.0
    lp_ms: list[float] = field(default_factory=list)
    ocr_ms: list[float] = field(default_factory=list)

    @property
    def total_ms(self) -> float:
        return self.vehicle_ms + sum(self.lp_ms) + sum(self.ocr_ms)


@dataclass
class PipelineOutput:
    width: int
    height: int
    results: list[PlateResult]
    timings: StageTimings

    @property
    def negative(self) -> bool:
        return not self.results


# --------------------------------------------------------------------- geometry


def box_to_rect(box: BoundingBox, width: int, height: int) -> tuple[int, int, int, int]:
    x0 = max(0, min(width, int(round(box.x0 * width))))
    x1 = max(0, min(width, int(round(box.x1 * width))))
    y0 = max(0, min(height, int(round(box.y0 * height))))
    y1 = max(0, min(height, int(round(box.y1 * height))))
    return x0, y0, x1, y1


def crop(image: np.ndarray, rect, fill: int = GRAY) -> np.ndarray:
    """Crop (x0, y0, x1, y1); parts outside the image are filled with ``fill``."""
    x0, y0, x1, y1 = rect
    h, w = image.shape[:2]
    out = np.full((y1 - y0, x1 - x0) + image.shape[2:], fill, dtype=image.dtype)
    sx0, sy0, sx1, sy1 = max(x0, 0), max(y0, 0), min(x1, w), min(y1, h)
    if sx1 > sx0 and sy1 > sy0:
        out[sy0 - y0 : sy1 - y0, sx0 - x0 : sx1 - x0] = image[sy0:sy1, sx0:sx1]
    return out


def enlarge_rect(rect, target_ratio: float = 2.75, band=(2.5, 3.0)):
    """Grow a plate rect symmetrically until w/h hits ``target_ratio``.

    Rects whose aspect ratio already lies in ``band`` are returned unchanged.
    """
    x0, y0, x1, y1 = rect
    w, h = x1 - x0, y1 - y0
    if w <= 0 or h <= 0:
        raise ValidationError(f"degenerate plate box {rect}")
    ratio = w / h
    if band[0] <= ratio <= band[1]:
        return rect
    if ratio < band[0]:
        extra = math.ceil(h * target_ratio - 1e-9) - w
        return (x0 - extra // 2, y0, x1 + extra - extra // 2, y1)
    extra = math.ceil(w / target_ratio - 1e-9) - h
    return (x0, y0 - extra // 2, x1, y1 + extra - extra // 2)


def enlarge_patch(image: np.ndarray, rect, target_ratio: float = 2.75, band=(2.5, 3.0)):
    """Returns (patch, region) where region is the enlarged rect in image pixels."""
    region = enlarge_rect(rect, target_ratio, band)
    return crop(image, region), region


# --------------------------------------------------------------------- stages


def detect_vehicles(
    image: np.ndarray, model: NetworkModel, threshold: float = 0.25, nms_iou: float = 0.25
) -> list[VehicleDetection]:
    head = run(model, preprocess(image, model.width, model.height))
    region = model.region
    dets = nms(decode_region(head, region.anchors, region.classes, threshold), nms_iou)
    return [VehicleDetection(d.box, VEHICLE_CLASSES[d.class_id], d.score) for d in dets]


def detect_plate(
    patch: np.ndarray,
    model: NetworkModel,
    layout_threshold: float = 0.75,
    decode_threshold: float = 0.25,
) -> PlateDetection | None:
    """Best-scoring plate candidate, or None; low scores get the undefined layout."""
    if patch.size == 0:
        return None
    head = run(model, preprocess(patch, model.width, model.height))
    region = model.region
    cands = decode_region(head, region.anchors, region.classes, decode_threshold)
    if not cands:
        return None
    best = max(range(len(cands)), key=lambda i: (cands[i].score, -i))
    d = cands[best]
    predicted = LAYOUT_CLASSES[d.class_id]
    layout = predicted if d.score >= layout_threshold else Layout.UNDEFINED
    return PlateDetection(d.box, layout, d.score, predicted)


def _sub_rect(outer, box: BoundingBox) -> tuple[int, int, int, int]:
    ox0, oy0, ox1, oy1 = outer
    x0, y0, x1, y1 = box_to_rect(box, ox1 - ox0, oy1 - oy0)
    return (ox0 + x0, oy0 + y0, ox0 + x1, oy0 + y1)


def _process_vehicle(image, veh, models, config, rules, timings) -> PlateResult:
    h, w = image.shape[:2]
    vrect = box_to_rect(veh.box, w, h)
    result = PlateResult(veh, vrect)
    t0 = time.perf_counter()
    plate = None
    if vrect[2] > vrect[0] and vrect[3] > vrect[1]:
        plate = detect_plate(crop(image, vrect), models.lp, config.layout_thresh, config.lp_thresh)
    timings.lp_ms.append((time.perf_counter() - t0) * 1e3)
    if plate is None:
        result.status = "no_plate"
        return result
    result.plate = plate
    prect = _sub_rect(vrect, plate.box)
    result.plate_rect = prect
    if prect[2] <= prect[0] or prect[3] <= prect[1]:
        result.status = "no_plate"
        return result

    t0 = time.perf_counter()
    patch, region = enlarge_patch(image, prect, config.target_ratio, config.ratio_band)
    x = preprocess(patch, models.ocr.width, models.ocr.height)
    head = run(models.ocr, x)
    reading = read_plate(
        head, models.ocr.region.anchors, plate.layout, veh.kind, rules, config.nms_iou
    )
    timings.ocr_ms.append((time.perf_counter() - t0) * 1e3)

    rx0, ry0, rx1, ry1 = region
    rw, rh = rx1 - rx0, ry1 - ry0
    result.reading = reading
    result.characters = reading.characters
    result.char_rects = [
        (rx0 + c.box.x0 * rw, ry0 + c.box.y0 * rh, c.box.w * rw, c.box.h * rh)
        for c in reading.characters
    ]
    result.text = reading.text
    if reading.negative:
        result.status = "no_characters"
    return result


def run_pipeline(image: np.ndarray, models: Models, config: PipelineConfig | None = None) -> PipelineOutput:
    config = config or PipelineConfig()
    rules = config.rulesets()
    timings = StageTimings()
    h, w = image.shape[:2]

    t0 = time.perf_counter()
    vehicles = detect_vehicles(image, models.vehicle, config.vehicle_thresh, config.nms_iou)
    timings.vehicle_ms = (time.perf_counter() - t0) * 1e3

    results = []
    for veh in vehicles:
        try:
            results.append(_process_vehicle(image, veh, models, config, rules, timings))
        except (ValidationError, ModelError) as exc:
            results.append(
                PlateResult(veh, box_to_rect(veh.box, w, h), status="error", error=str(exc))
            )
    return PipelineOutput(w, h, results, timings)


# --------------------------------------------------------------------- records


def _xywh(rect):
    x0, y0, x1, y1 = rect
    return [x0, y0, x1 - x0, y1 - y0]


def output_record(image_path: str, out: PipelineOutput) -> dict:
    """JSON-serializable, timing-free result record for one image."""
    vehicles = []
    for r in out.results:
        v = {
            "kind": r.vehicle.kind.value,
            "score": round(r.vehicle.score, 6),
            "box": _xywh(r.vehicle_rect),
            "status": r.status,
        }
        if r.error:
            v["error"] = r.error
        if r.plate is not None:
            v["plate"] = {
                "layout": r.plate.layout.value,
                "predicted_layout": r.plate.predicted_layout.value,
                "score": round(r.plate.score, 6),
                "box": _xywh(r.plate_rect),
                "text": r.text,
                "rows": r.reading.rows.value if r.reading else "one",
                "short": bool(r.reading.short) if r.reading else False,
                "characters": [
                    {"glyph": c.glyph, "score": round(c.score, 6), "box": [round(v_, 3) for v_ in rect]}
                    for c, rect in zip(r.characters, r.char_rects)
                ],
            }
        vehicles.append(v)
    return {
        "image": image_path,
        "width": out.width,
        "height": out.height,
        "status": "negative" if out.negative else "ok",
        "vehicles": vehicles,
    }


def timing_record(image_path: str, out: PipelineOutput) -> dict:
    t = out.timings
    return {
        "image": image_path,
        "vehicles": len(out.results),
        "vehicle_ms": t.vehicle_ms,
        "lp_ms": t.lp_ms,
        "ocr_ms": t.ocr_ms,
        "total_ms": t.total_ms,
    }
