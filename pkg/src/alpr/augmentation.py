"""Plate-level augmentation: glyph permutation, negatives, jitter and rescale-with-margin.

Plates are RGB uint8 patches with character boxes in patch pixels (x, y, w, h).
Every op is pure given its seed.
"""

from __future__ import annotations

import math
from collections import Counter
from dataclasses import dataclass, field, replace
from functools import lru_cache
from pathlib import Path
from typing import Sequence

import numpy as np
from PIL import Image

from .errors import DataError, ValidationError
from .evaluation import AnnotationRecord, CharAnnotation, PlateAnnotation
from .layout_rules import ALPHABET, DIGITS, LETTERS, Layout, builtin_rulesets

Rect = tuple[float, float, float, float]
FILL = 127

# '0' also stands for 'O', so it may fill either kind of slot
LETTER_POOL = tuple(sorted(LETTERS)) + ("0",)
DIGIT_POOL = tuple(sorted(DIGITS))


@dataclass
class AnnotatedPlate:
    raster: np.ndarray  # (H, W, 3) uint8
    layout: Layout
    chars: list[tuple[str, Rect]] = field(default_factory=list)

    def __post_init__(self):
        r = self.raster
        if r.ndim != 3 or r.shape[2] != 3 or r.dtype != np.uint8:
            raise ValidationError(f"plate raster must be HxWx3 uint8, got {r.shape} {r.dtype}")
        h, w = r.shape[:2]
        for glyph, (x, y, bw, bh) in self.chars:
            if glyph not in ALPHABET:
                raise ValidationError(f"glyph {glyph!r} is not in the alphabet")
            if bw <= 0 or bh <= 0 or x < -1e-6 or y < -1e-6 or x + bw > w + 1e-6 or y + bh > h + 1e-6:
                raise ValidationError(f"char box {(x, y, bw, bh)} outside the {w}x{h} patch")

    @property
    def text(self) -> str:
        return "".join(g for g, _ in self.chars)


def _pixel_box(rect: Rect, w: int, h: int) -> tuple[int, int, int, int]:
    x, y, bw, bh = rect
    x0, y0 = max(0, int(math.floor(x + 1e-9))), max(0, int(math.floor(y + 1e-9)))
    x1, y1 = min(w, int(math.ceil(x + bw - 1e-9))), min(h, int(math.ceil(y + bh - 1e-9)))
    return x0, y0, x1, y1


# --------------------------------------------------------------------- permutation


@lru_cache(maxsize=None)
def _pattern(layout: Layout) -> str | None:
    rs = builtin_rulesets().get(layout)
    return rs.pattern if rs is not None else None


def slot_categories(plate: AnnotatedPlate) -> list[str]:
    """'L' or 'D' per slot: from the layout pattern when it fits, else from the glyph."""
    pattern = _pattern(plate.layout)
    if pattern is None or len(pattern) != len(plate.chars):
        pattern = "?" * len(plate.chars)
    return [
        slot if slot != "?" else ("D" if g in DIGITS else "L")
        for slot, (g, _) in zip(pattern, plate.chars)
    ]


class GlyphBank:
    """Donor glyph patches cut from an annotated corpus."""

    def __init__(self, plates: Sequence[AnnotatedPlate] = ()):
        self.donors: dict[str, list[np.ndarray]] = {}
        for p in plates:
            self.add(p)

    def add(self, plate: AnnotatedPlate) -> None:
        h, w = plate.raster.shape[:2]
        for glyph, rect in plate.chars:
            x0, y0, x1, y1 = _pixel_box(rect, w, h)
            if x1 <= x0 or y1 <= y0:
                raise DataError(f"char {glyph!r} box {rect} crops an empty region")
            self.donors.setdefault(glyph, []).append(plate.raster[y0:y1, x0:x1].copy())

    def available(self, pool: Sequence[str]) -> list[str]:
        return [g for g in pool if self.donors.get(g)]


def resize_nearest(patch: np.ndarray, w: int, h: int) -> np.ndarray:
    ph, pw = patch.shape[:2]
    rows = (np.arange(h) * ph) // h
    cols = (np.arange(w) * pw) // w
    return patch[rows[:, None], cols[None, :]]


def permute_characters(
    plate: AnnotatedPlate, bank: GlyphBank, counts: Counter, seed=0
) -> AnnotatedPlate:
    """Re-fill every slot with a donor glyph of the same category, rarest glyph first.

    ``counts`` is the running corpus histogram; it is updated in place with the
    glyphs written into the new plate.  Ties between equally rare glyphs are
    broken uniformly at random.
    """
    rng = np.random.default_rng(seed)
    h, w = plate.raster.shape[:2]
    raster = plate.raster.copy()
    chars = []
    for (glyph, rect), cat in zip(plate.chars, slot_categories(plate)):
        pool = bank.available(LETTER_POOL if cat == "L" else DIGIT_POOL)
        if not pool:
            kind = "letter" if cat == "L" else "digit"
            raise DataError(f"no {kind} donors available for a {kind} slot")
        x0, y0, x1, y1 = _pixel_box(rect, w, h)
        if x1 <= x0 or y1 <= y0:
            raise DataError(f"char {glyph!r} box {rect} crops an empty region")
        low = min(counts.get(g, 0) for g in pool)
        rarest = [g for g in pool if counts.get(g, 0) == low]
        new = rarest[int(rng.integers(len(rarest)))]
        donors = bank.donors[new]
        patch = donors[int(rng.integers(len(donors)))]
        raster[y0:y1, x0:x1] = resize_nearest(patch, x1 - x0, y1 - y0)
        counts[new] += 1
        chars.append((new, rect))
    return AnnotatedPlate(raster, plate.layout, chars)


def glyph_counts(plates: Sequence[AnnotatedPlate]) -> Counter:
    return Counter(g for p in plates for g, _ in p.chars)


def permute_corpus(plates: Sequence[AnnotatedPlate], copies: int, seed=0) -> list[AnnotatedPlate]:
    """``copies`` permuted variants of each plate, balancing against originals + output so far."""
    if copies < 0:
        raise ValidationError("copies must be non-negative")
    bank = GlyphBank(plates)
    counts = glyph_counts(plates)
    out = []
    ss = seed if isinstance(seed, np.random.SeedSequence) else np.random.SeedSequence(seed)
    seeds = ss.spawn(copies * len(plates))
    k = 0
    for _ in range(copies):
        for p in plates:
            out.append(permute_characters(p, bank, counts, seeds[k]))
            k += 1
    return out


def category_balance(counts: Counter) -> dict[str, float]:
    """max/min count inside each category, over glyphs that occur.

    '0' is measured with the digits, where most of its uses are.  Glyphs absent from the corpus have no donors and cannot be generated, so
    they are left out.
    """
    out = {}
    for name, pool in (("letters", sorted(LETTERS)), ("digits", DIGIT_POOL)):
        vals = [counts[g] for g in pool if counts.get(g, 0) > 0]
        out[name] = max(vals) / min(vals) if vals else math.nan
    return out

# --------------------------------------------------------------------- photometric / geometric


def negative_image(plate: AnnotatedPlate) -> AnnotatedPlate:
    return replace(plate, raster=(255 - plate.raster).astype(np.uint8), chars=list(plate.chars))


def rotate_box(rect: Rect, angle_deg: float, center: tuple[float, float]) -> Rect:
    """Axis-aligned hull of a box rotated counter-clockwise (as displayed) about ``center``."""
    x, y, w, h = rect
    t = math.radians(angle_deg)
    c, s = math.cos(t), math.sin(t)
    cx, cy = center
    xs, ys = [], []
    for px, py in ((x, y), (x + w, y), (x, y + h), (x + w, y + h)):
        dx, dy = px - cx, py - cy
        # y points down, so a visual CCW turn is (dx, dy) -> (dx c + dy s, -dx s + dy c)
        xs.append(cx + dx * c + dy * s)
        ys.append(cy - dx * s + dy * c)
    return (min(xs), min(ys), max(xs) - min(xs), max(ys) - min(ys))


def _clip(rect: Rect, w: int, h: int) -> Rect:
    x, y, bw, bh = rect
    x0, y0 = min(max(x, 0.0), w - 1.0), min(max(y, 0.0), h - 1.0)
    x1, y1 = min(max(x + bw, x0 + 1.0), float(w)), min(max(y + bh, y0 + 1.0), float(h))
    return (x0, y0, x1 - x0, y1 - y0)


def _pad_crop(raster: np.ndarray, left: int, top: int, right: int, bottom: int, fill=FILL):
    """Positive amounts add a margin, negative ones cut into the patch."""
    h, w = raster.shape[:2]
    nw, nh = w + left + right, h + top + bottom
    if nw <= 0 or nh <= 0:
        raise ValidationError("crop removes the whole patch")
    out = np.full((nh, nw, 3), fill, np.uint8)
    sx0, sy0 = max(0, -left), max(0, -top)
    sx1, sy1 = min(w, w + right), min(h, h + bottom)
    out[sy0 + top : sy1 + top, sx0 + left : sx1 + left] = raster[sy0:sy1, sx0:sx1]
    return out


@dataclass(frozen=True)
class JitterRanges:
    brightness: tuple[float, float] = (0.85, 1.15)
    rotation: tuple[float, float] = (-5.0, 5.0)  # degrees
    crop: tuple[float, float] = (-0.02, 0.08)  # fraction of patch size; negative adds a margin

    @classmethod
    def identity(cls) -> "JitterRanges":
        return cls((1.0, 1.0), (0.0, 0.0), (0.0, 0.0))


def jitter(plate: AnnotatedPlate, seed=0, ranges: JitterRanges = JitterRanges(), fill=FILL) -> AnnotatedPlate:
    rng = np.random.default_rng(seed)
    gain = rng.uniform(*ranges.brightness)
    angle = rng.uniform(*ranges.rotation)
    crop = rng.uniform(*ranges.crop)
    raster = plate.raster
    chars = list(plate.chars)
    h, w = raster.shape[:2]

    if gain != 1.0:
        raster = np.clip(np.rint(raster.astype(np.float64) * gain), 0, 255).astype(np.uint8)
    if angle != 0.0:
        img = Image.fromarray(raster).rotate(
            angle, resample=Image.Resampling.BILINEAR, center=(w / 2, h / 2), fillcolor=(fill,) * 3
        )
        raster = np.asarray(img, dtype=np.uint8)
        chars = [(g, _clip(rotate_box(r, angle, (w / 2, h / 2)), w, h)) for g, r in chars]
    if crop != 0.0:
        dx, dy = int(round(crop * w / 2)), int(round(crop * h / 2))
        raster = _pad_crop(raster, -dx, -dy, -dx, -dy, fill)
        nh, nw = raster.shape[:2]
        chars = [(g, _clip((x - dx, y - dy, bw, bh), nw, nh)) for g, (x, y, bw, bh) in chars]
    if raster is plate.raster:
        raster = raster.copy()
    return AnnotatedPlate(raster, plate.layout, chars)


def rescale_margin(
    plate: AnnotatedPlate,
    seed=0,
    scale: tuple[float, float] = (0.8, 1.2),
    margin: tuple[float, float] = (0.0, 0.15),
    fill=FILL,
) -> AnnotatedPlate:
    """Rescale the patch by a random factor, then pad each side by a random fraction of its size."""
    rng = np.random.default_rng(seed)
    s = rng.uniform(*scale)
    m = rng.uniform(*margin, size=4)  # left, top, right, bottom
    h, w = plate.raster.shape[:2]
    nw, nh = max(1, int(round(w * s))), max(1, int(round(h * s)))
    raster = plate.raster
    if (nw, nh) != (w, h):
        raster = np.asarray(
            Image.fromarray(raster).resize((nw, nh), Image.Resampling.BILINEAR), dtype=np.uint8
        )
    sx, sy = nw / w, nh / h
    left, top = int(round(m[0] * nw)), int(round(m[1] * nh))
    right, bottom = int(round(m[2] * nw)), int(round(m[3] * nh))
    if left or top or right or bottom:
        raster = _pad_crop(raster, left, top, right, bottom, fill)
    elif raster is plate.raster:
        raster = raster.copy()
    chars = [(g, (x * sx + left, y * sy + top, bw * sx, bh * sy)) for g, (x, y, bw, bh) in plate.chars]
    return AnnotatedPlate(raster, plate.layout, chars)


# --------------------------------------------------------------------- corpus I/O


def plates_from_records(records: Sequence[AnnotationRecord], base: Path | None = None) -> list[AnnotatedPlate]:
    """Crop every annotated plate (with characters) out of its image."""
    from .inference import load_image
    from .pipeline import crop

    base = Path(base or ".")
    out = []
    for rec in records:
        plates = [p for p in rec.all_plates() if p.chars]
        if not plates:
            continue
        image = load_image(base / rec.image_path)
        for p in plates:
            x, y, w, h = p.rect
            x0, y0 = int(math.floor(x)), int(math.floor(y))
            x1, y1 = int(math.ceil(x + w)), int(math.ceil(y + h))
            patch = crop(image, (x0, y0, x1, y1))
            chars = [(c.glyph, _clip((c.rect[0] - x0, c.rect[1] - y0, c.rect[2], c.rect[3]), x1 - x0, y1 - y0))
                     for c in p.chars]
            out.append(AnnotatedPlate(patch, p.layout, chars))
    return out


def plate_record(plate: AnnotatedPlate, image_path: str) -> AnnotationRecord:
    """Plate-patch record: the plate covers the whole image."""
    h, w = plate.raster.shape[:2]
    chars = [CharAnnotation(g, tuple(round(v, 3) for v in r)) for g, r in plate.chars]
    pa = PlateAnnotation(plate.layout, (0.0, 0.0, float(w), float(h)), plate.text, chars)
    return AnnotationRecord(image_path, plates=[pa])
