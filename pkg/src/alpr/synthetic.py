"""Hand-built tiny networks and a colour-coded scene renderer.

The three networks are not trained: their weights are set by hand so that a
scene drawn by ``render_scene`` decodes to known vehicles, plates and
characters.  The colour protocol is

* vehicle body: blue 255 (car) or 128 (motorcycle), red = green = 0
* plate background: black
* character cell: green 255, red = glyph code, blue 0

The vehicle net max-pools blue over quarter-width columns, the plate net
max-pools (1 - blue) over a 2x8 grid of the vehicle patch, and the character
net reads red/green over 8x8 pixel cells of the enlarged plate patch.  A
single glyph therefore has to sit exactly on one character cell, which
``render_scene`` guarantees.
"""

from __future__ import annotations

from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .layout_rules import ALPHABET, LAYOUT_CLASSES, Layout
from .model_io import ConvWeights, NetworkModel, parse_config, with_weights, write_weights

SCENE_W, SCENE_H = 512, 256
VEHICLE_COLS = 4
VEHICLE_W = SCENE_W // VEHICLE_COLS  # 128
PLATE_W, PLATE_H = 64, 32
CELL = 8

OBJ_GAIN = 40.0
GLYPH_GAIN = 20000.0
CLASS_GAIN = 20.0


def glyph_code(glyph: str) -> int:
    """Red-channel value encoding a glyph."""
    k = ALPHABET.index(glyph)
    return int(round(255 * (k + 1) / (len(ALPHABET) + 1)))


def _region(classes: int, anchor=(1.0, 1.0)) -> str:
    return f"[region]\nanchors={anchor[0]},{anchor[1]}\nclasses={classes}\nnum=1\n"


VEHICLE_CFG = (
    "[net]\nwidth=64\nheight=16\nchannels=3\n"
    + "[maxpool]\nsize=2\nstride=2\n" * 4
    + "[convolutional]\nfilters=7\nsize=1\nstride=1\npad=0\nactivation=linear\n"
    + _region(2)
)

LP_CFG = (
    "[net]\nwidth=16\nheight=64\nchannels=3\n"
    "[convolutional]\nbatch_normalize=1\nfilters=3\nsize=1\nstride=1\npad=0\nactivation=linear\n"
    + "[maxpool]\nsize=2\nstride=2\n" * 3
    + "[convolutional]\nfilters=10\nsize=1\nstride=1\npad=0\nactivation=linear\n"
    + _region(5)
)

OCR_CFG = (
    "[net]\nwidth=88\nheight=32\nchannels=3\n"
    "[convolutional]\nfilters=3\nsize=3\nstride=1\npad=1\nactivation=leaky\n"
    + "[maxpool]\nsize=2\nstride=2\n" * 3
    + "[convolutional]\nfilters=40\nsize=1\nstride=1\npad=0\nactivation=linear\n"
    + _region(35)
)


def _head(classes: int, obj_w, obj_b, cls_w, cls_b) -> ConvWeights:
    """1x1 conv over RGB producing one anchor's (tx, ty, tw, th, to, logits)."""
    k = np.zeros((classes + 5, 3, 1, 1), np.float32)
    b = np.zeros(classes + 5, np.float32)
    k[4, :, 0, 0] = obj_w
    b[4] = obj_b
    k[5:, :, 0, 0] = cls_w
    b[5:] = cls_b
    return ConvWeights(b, k)


def vehicle_model() -> NetworkModel:
    model = parse_config(VEHICLE_CFG)
    # objectness on blue; car vs motorcycle split at blue = 0.75
    cls_w = np.array([[0, 0, CLASS_GAIN], [0, 0, 0]], np.float32)
    cls_b = np.array([-0.75 * CLASS_GAIN, 0], np.float32)
    head = _head(2, [0, 0, OBJ_GAIN], -0.25 * OBJ_GAIN, cls_w, cls_b)
    return with_weights(model, {4: head})


def lp_model(layout: Layout = Layout.BRAZILIAN) -> NetworkModel:
    model = parse_config(LP_CFG)
    ident = ConvWeights(
        np.zeros(3, np.float32),
        np.eye(3, dtype=np.float32).reshape(3, 3, 1, 1),
        np.ones(3, np.float32),
        np.zeros(3, np.float32),
        np.ones(3, np.float32),
    )
    cls_b = np.zeros(5, np.float32)
    cls_b[LAYOUT_CLASSES.index(layout)] = CLASS_GAIN
    # plate where blue is low: to = gain * ((1 - blue) - 0.75)
    head = _head(5, [0, 0, -OBJ_GAIN], 0.25 * OBJ_GAIN, np.zeros((5, 3), np.float32), cls_b)
    return with_weights(model, {0: ident, 4: head})


def ocr_model() -> NetworkModel:
    model = parse_config(OCR_CFG)
    ident = np.zeros((3, 3, 3, 3), np.float32)
    for c in range(3):
        ident[c, c, 1, 1] = 1.0
    codes = np.array([glyph_code(g) / 255.0 for g in ALPHABET], np.float64)
    # logit_k = G (2 v_k r - v_k^2): argmax is the nearest code, softmax-invariant to r^2
    cls_w = np.zeros((35, 3), np.float32)
    cls_w[:, 0] = 2 * GLYPH_GAIN * codes
    cls_b = (-GLYPH_GAIN * codes**2).astype(np.float32)
    head = _head(35, [0, OBJ_GAIN, 0], -0.75 * OBJ_GAIN, cls_w, cls_b)
    return with_weights(model, {0: ConvWeights(np.zeros(3, np.float32), ident), 4: head})


def fixture_models(layout: Layout = Layout.BRAZILIAN):
    from .pipeline import Models

    return Models(vehicle_model(), lp_model(layout), ocr_model())


@dataclass
class SceneVehicle:
    column: int  # 0..3
    text: str = "ABC1234"
    motorcycle: bool = False
    plate_cell: tuple[int, int] = (0, 5)  # (col 0..1, row 0..7) in the vehicle patch
    with_plate: bool = True


def _char_cells(n: int, two_rows: bool) -> list[tuple[int, int]]:
    """(x, y) pixel offsets of glyph cells inside a 64x32 plate."""
    # plate left edge sits 12 px right of an 8 px cell boundary of the enlarged patch
    if not two_rows:
        return [(4 + CELL * i, CELL) for i in range(n)]
    top = max(1, n - (n + 1) // 2)
    cells = [(4 + CELL * (i + 1), 0) for i in range(top)]
    cells += [(4 + CELL * (i + 1), 2 * CELL) for i in range(n - top)]
    return cells


def render_scene(vehicles: list[SceneVehicle], width: int = SCENE_W, height: int = SCENE_H) -> np.ndarray:
    img = np.zeros((height, width, 3), np.uint8)
    sx, sy = width / SCENE_W, height / SCENE_H
    if (sx, sy) != (1.0, 1.0):
        raise ValueError("the fixture networks assume a 512x256 scene")
    for v in vehicles:
        x0 = v.column * VEHICLE_W
        img[:, x0 : x0 + VEHICLE_W, 2] = 128 if v.motorcycle else 255
        if not v.with_plate:
            continue
        px = x0 + v.plate_cell[0] * PLATE_W
        py = v.plate_cell[1] * PLATE_H
        img[py : py + PLATE_H, px : px + PLATE_W] = 0
        if len(v.text) > 7:
            raise ValueError("at most 7 glyphs fit on a fixture plate")
        for ch, (cx, cy) in zip(v.text, _char_cells(len(v.text), v.motorcycle)):
            img[py + cy : py + cy + CELL, px + cx : px + cx + CELL, 1] = 255
            img[py + cy : py + cy + CELL, px + cx : px + cx + CELL, 0] = glyph_code(ch)
    return img


def write_fixture(directory, layout: Layout = Layout.BRAZILIAN) -> Path:
    """Write vehicle/lp/ocr .cfg + .weights into ``directory``."""
    from .model_io import serialize_config

    d = Path(directory)
    d.mkdir(parents=True, exist_ok=True)
    for stem, model in (("vehicle", vehicle_model()), ("lp", lp_model(layout)), ("ocr", ocr_model())):
        (d / f"{stem}.cfg").write_text(serialize_config(model))
        (d / f"{stem}.weights").write_bytes(write_weights(model))
    return d


def scene_annotation(vehicles: list[SceneVehicle], image_path: str, layout: Layout = Layout.BRAZILIAN):
    """Ground truth for ``render_scene(vehicles)`` in the annotation format."""
    from .evaluation import AnnotationRecord, CharAnnotation, PlateAnnotation, VehicleAnnotation
    from .layout_rules import VehicleKind

    rec = AnnotationRecord(image_path)
    for v in vehicles:
        x0 = v.column * VEHICLE_W
        kind = VehicleKind.MOTORCYCLE if v.motorcycle else VehicleKind.CAR
        va = VehicleAnnotation(kind, (float(x0), 0.0, float(VEHICLE_W), float(SCENE_H)))
        if v.with_plate:
            px = x0 + v.plate_cell[0] * PLATE_W
            py = v.plate_cell[1] * PLATE_H
            chars = [
                CharAnnotation(ch, (float(px + cx), float(py + cy), float(CELL), float(CELL)))
                for ch, (cx, cy) in zip(v.text, _char_cells(len(v.text), v.motorcycle))
            ]
            va.plate = PlateAnnotation(layout, (float(px), float(py), float(PLATE_W), float(PLATE_H)), v.text, chars)
        rec.vehicles.append(va)
    return rec
