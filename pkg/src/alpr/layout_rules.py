"""Layout-aware post-processing of character detections into a plate string."""

from __future__ import annotations

import json
from dataclasses import dataclass, field, replace
from enum import Enum
from importlib import resources
from pathlib import Path
from typing import Iterable, Sequence

import numpy as np

from .decode import BoundingBox, Detection, decode_region, nms
from .errors import ConfigError, ValidationError

# 'O' is read jointly with '0'
ALPHABET = "0123456789ABCDEFGHIJKLMNPQRSTUVWXYZ"
LETTERS = frozenset(ALPHABET[10:])
DIGITS = frozenset(ALPHABET[:10])

DIGIT_TO_LETTER = {"1": "I", "2": "Z", "4": "A", "5": "S", "6": "G", "7": "Z", "8": "B"}
LETTER_TO_DIGIT = {"A": "4", "B": "8", "D": "0", "G": "6", "I": "1", "J": "1", "Q": "0", "S": "5", "Z": "7"}


class Layout(str, Enum):
    AMERICAN = "american"
    BRAZILIAN = "brazilian"
    CHINESE = "chinese"
    EUROPEAN = "european"
    TAIWANESE = "taiwanese"
    UNDEFINED = "undefined"


# class index order of the LP detector head
LAYOUT_CLASSES = (
    Layout.AMERICAN,
    Layout.BRAZILIAN,
    Layout.CHINESE,
    Layout.EUROPEAN,
    Layout.TAIWANESE,
)


class VehicleKind(str, Enum):
    CAR = "car"
    MOTORCYCLE = "motorcycle"


VEHICLE_CLASSES = (VehicleKind.CAR, VehicleKind.MOTORCYCLE)


class Rows(str, Enum):
    ONE = "one"
    TWO = "two"
    EITHER = "either"


@dataclass(frozen=True)
class CharDetection:
    box: BoundingBox
    glyph: str
    score: float

    def __post_init__(self):
        if self.glyph not in ALPHABET:
            raise ValidationError(f"glyph {self.glyph!r} is not in the 35-class alphabet")


@dataclass(frozen=True)
class LayoutRuleSet:
    layout: Layout
    min_chars: int
    max_chars: int
    char_conf_threshold: float = 0.5
    pattern: str | None = None
    rows: Rows = Rows.ONE
    digit_to_letter: dict = field(default_factory=lambda: dict(DIGIT_TO_LETTER))
    letter_to_digit: dict = field(default_factory=lambda: dict(LETTER_TO_DIGIT))

    def __post_init__(self):
        if not 0 < self.min_chars <= self.max_chars:
            raise ConfigError(f"{self.layout.value}: need 0 < min_chars <= max_chars")
        if self.pattern is not None:
            if set(self.pattern) - set("LD?"):
                raise ConfigError(f"{self.layout.value}: pattern may only use L, D and ?")
            if not len(self.pattern) == self.min_chars == self.max_chars:
                raise ConfigError(f"{self.layout.value}: pattern length must equal min = max chars")
        if not 0.0 <= self.char_conf_threshold <= 1.0:
            raise ConfigError(f"{self.layout.value}: threshold outside [0, 1]")


def builtin_rulesets() -> dict[Layout, LayoutRuleSet]:
    text = resources.files("alpr").joinpath("data").joinpath("layouts.json").read_text()
    return rulesets_from_json(text)


def rulesets_from_json(text: str) -> dict[Layout, LayoutRuleSet]:
    try:
        records = json.loads(text)["layouts"]
    except (ValueError, KeyError, TypeError) as exc:
        raise ConfigError(f"bad layout rules file: {exc}") from exc
    out = {}
    for rec in records:
        try:
            layout = Layout(rec["name"])
            rs = LayoutRuleSet(
                layout=layout,
                min_chars=int(rec["min"]),
                max_chars=int(rec["max"]),
                char_conf_threshold=float(rec.get("threshold", 0.5)),
                pattern=rec.get("pattern"),
                rows=Rows(rec.get("rows", "one")),
                digit_to_letter={**DIGIT_TO_LETTER, **rec.get("digit_to_letter", {})},
                letter_to_digit={**LETTER_TO_DIGIT, **rec.get("letter_to_digit", {})},
            )
        except (KeyError, ValueError) as exc:
            raise ConfigError(f"bad layout record {rec!r}: {exc}") from exc
        out[layout] = rs
    if Layout.UNDEFINED not in out:
        raise ConfigError("rules file must define the 'undefined' fallback layout")
    return out


def load_rulesets(path=None) -> dict[Layout, LayoutRuleSet]:
    if path is None:
        return builtin_rulesets()
    return rulesets_from_json(Path(path).read_text())


def rulesets_to_json(rules: dict[Layout, LayoutRuleSet]) -> str:
    records = []
    for rs in rules.values():
        rec = {"name": rs.layout.value, "min": rs.min_chars, "max": rs.max_chars,
               "threshold": rs.char_conf_threshold, "rows": rs.rows.value}
        if rs.pattern:
            rec["pattern"] = rs.pattern
        d2l = {k: v for k, v in rs.digit_to_letter.items() if DIGIT_TO_LETTER.get(k) != v}
        l2d = {k: v for k, v in rs.letter_to_digit.items() if LETTER_TO_DIGIT.get(k) != v}
        if d2l:
            rec["digit_to_letter"] = d2l
        if l2d:
            rec["letter_to_digit"] = l2d
        records.append(rec)
    return json.dumps({"layouts": records}, indent=2)


# --------------------------------------------------------------------- steps


def enforce_count(detections: Sequence[CharDetection], rules: LayoutRuleSet) -> list[CharDetection]:
    """Trim to max_chars or top up to min_chars from below-threshold candidates.

    Output is a subset of the input, in input order.
    """
    thr = rules.char_conf_threshold
    rank = sorted(range(len(detections)), key=lambda i: (-detections[i].score, i))
    above = [i for i in rank if detections[i].score >= thr]
    below = [i for i in rank if detections[i].score < thr]
    chosen = above[: rules.max_chars]
    if len(chosen) < rules.min_chars:
        chosen += below[: rules.min_chars - len(chosen)]
    keep = set(chosen)
    return [d for i, d in enumerate(detections) if i in keep]


def apply_swaps(text: str, rules: LayoutRuleSet) -> str:
    """Coerce fixed letter/digit positions; positions without a mapping stay as-is."""
    if rules.pattern is None:
        return text
    if len(text) != len(rules.pattern):
        raise ValidationError(
            f"{rules.layout.value} text {text!r} has {len(text)} characters, "
            f"pattern {rules.pattern} needs {len(rules.pattern)}"
        )
    out = []
    for ch, slot in zip(text, rules.pattern):
        if slot == "L" and ch in DIGITS:
            ch = rules.digit_to_letter.get(ch, ch)
        elif slot == "D" and ch in LETTERS:
            ch = rules.letter_to_digit.get(ch, ch)
        out.append(ch)
    return "".join(out)


def pattern_violations(text: str, rules: LayoutRuleSet) -> list[int]:
    """Positions whose glyph category disagrees with the pattern ('0' fits both)."""
    if rules.pattern is None or len(text) != len(rules.pattern):
        return []
    bad = []
    for i, (ch, slot) in enumerate(zip(text, rules.pattern)):
        if ch == "0":
            continue
        if (slot == "L" and ch not in LETTERS) or (slot == "D" and ch not in DIGITS):
            bad.append(i)
    return bad


def detect_rows(detections: Sequence[CharDetection], vehicle_kind, layout) -> Rows:
    if not detections:
        raise ValidationError("cannot infer rows from an empty detection list")
    layout = Layout(layout)
    if layout == Layout.BRAZILIAN:
        return Rows.TWO if VehicleKind(vehicle_kind) == VehicleKind.MOTORCYCLE else Rows.ONE
    if layout == Layout.EUROPEAN:
        below = 0
        for i, d in enumerate(detections):
            if any(d.box.y0 >= o.box.y1 for j, o in enumerate(detections) if j != i):
                below += 1
        return Rows.TWO if 2 * below >= len(detections) else Rows.ONE
    return Rows.ONE


def _split_rows(ys: np.ndarray) -> np.ndarray:
    """2-means on centre y; returns a bool mask of the bottom row."""
    lo, hi = ys.min(), ys.max()
    if lo == hi:
        return np.zeros(len(ys), bool)
    assign = None
    for _ in range(100):
        new = np.abs(ys - hi) < np.abs(ys - lo)
        if assign is not None and np.array_equal(new, assign):
            break
        assign = new
        if assign.all() or not assign.any():
            break
        lo, hi = ys[~assign].mean(), ys[assign].mean()
    return assign


def reading_order(detections: Sequence[CharDetection], rows: Rows) -> list[CharDetection]:
    dets = list(detections)
    if not dets:
        return []
    by_x = lambda i: (dets[i].box.cx, i)
    if rows != Rows.TWO:
        return [dets[i] for i in sorted(range(len(dets)), key=by_x)]
    bottom = _split_rows(np.array([d.box.cy for d in dets]))
    top_idx = sorted((i for i in range(len(dets)) if not bottom[i]), key=by_x)
    bot_idx = sorted((i for i in range(len(dets)) if bottom[i]), key=by_x)
    return [dets[i] for i in top_idx + bot_idx]


def assemble_text(detections: Sequence[CharDetection], rows: Rows) -> str:
    return "".join(d.glyph for d in reading_order(detections, rows))


@dataclass
class Reading:
    text: str
    characters: list[CharDetection]
    rows: Rows = Rows.ONE
    short: bool = False  # fewer candidates than the layout minimum
    violations: list[int] = field(default_factory=list)

    @property
    def negative(self) -> bool:
        return not self.text


def char_detections(detections: Iterable[Detection]) -> list[CharDetection]:
    return [CharDetection(d.box, ALPHABET[d.class_id], d.score) for d in detections]


def read_plate(
    feature_map: np.ndarray,
    anchors,
    layout,
    vehicle_kind,
    rules: dict[Layout, LayoutRuleSet] | None = None,
    nms_iou: float = 0.25,
    char_threshold: float | None = None,
) -> Reading:
    """Decode a CR-NET head and apply the layout heuristics."""
    rules = rules or builtin_rulesets()
    rs = rules.get(Layout(layout), rules[Layout.UNDEFINED])
    if char_threshold is not None:
        rs = replace(rs, char_conf_threshold=char_threshold)
    # every cell is a candidate for re-admission, except those with no score at all
    pool = [d for d in decode_region(feature_map, anchors, len(ALPHABET), 0.0) if d.score > 0.0]
    pool = nms(pool, nms_iou)
    chars = enforce_count(char_detections(pool), rs)
    if not chars:
        return Reading("", [], short=True)
    rows = detect_rows(chars, vehicle_kind, rs.layout)
    ordered = reading_order(chars, rows)
    text = "".join(c.glyph for c in ordered)
    short = len(ordered) < rs.min_chars
    if rs.pattern is not None and len(text) == len(rs.pattern):
        text = apply_swaps(text, rs)
        ordered = [replace(c, glyph=g) for c, g in zip(ordered, text)]
    return Reading(text, ordered, rows, short, pattern_violations(text, rs))


def recognize_plate(
    lp_patch: np.ndarray,
    crnet_model,
    layout,
    vehicle_kind,
    rules: dict[Layout, LayoutRuleSet] | None = None,
    nms_iou: float = 0.25,
) -> Reading:
    """Run the character network on an (already enlarged) plate patch."""
    from .inference import preprocess, run

    x = preprocess(lp_patch, crnet_model.width, crnet_model.height)
    head = run(crnet_model, x)
    return read_plate(head, crnet_model.region.anchors, layout, vehicle_kind, rules, nms_iou)
