"""YOLOv2 region decoding, IoU, greedy NMS and k-means anchor estimation."""

from __future__ import annotations

from dataclasses import dataclass
from typing import Sequence

import numpy as np

from .errors import ValidationError


@dataclass(frozen=True)
class BoundingBox:
    """Centre/extent box, normalized to the frame it lives in."""

    cx: float
    cy: float
    w: float
    h: float

    def __post_init__(self):
        if not (self.w > 0 and self.h > 0):
            raise ValidationError(f"box extent must be positive: {self}")
        if not (0.0 <= self.cx <= 1.0 and 0.0 <= self.cy <= 1.0):
            raise ValidationError(f"box centre outside [0, 1]: {self}")

    @classmethod
    def from_corners(cls, x0, y0, x1, y1, width=1.0, height=1.0) -> "BoundingBox":
        return cls(
            (x0 + x1) / 2 / width, (y0 + y1) / 2 / height, (x1 - x0) / width, (y1 - y0) / height
        )

    @property
    def x0(self) -> float:
        return self.cx - self.w / 2

    @property
    def y0(self) -> float:
        return self.cy - self.h / 2

    @property
    def x1(self) -> float:
        return self.cx + self.w / 2

    @property
    def y1(self) -> float:
        return self.cy + self.h / 2

    def corners(self) -> tuple[float, float, float, float]:
        return (self.x0, self.y0, self.x1, self.y1)

    def to_pixels(self, width: int, height: int) -> tuple[float, float, float, float]:
        """(x, y, w, h) in pixels, top-left origin."""
        return (self.x0 * width, self.y0 * height, self.w * width, self.h * height)


@dataclass(frozen=True)
class Detection:
    box: BoundingBox
    objectness: float
    class_probs: tuple[float, ...]
    class_id: int
    score: float


def _sigmoid(x):
    with np.errstate(over="ignore"):
        return 1.0 / (1.0 + np.exp(-x))


def decode_region(
    feature_map: np.ndarray,
    anchors: Sequence[tuple[float, float]],
    classes: int,
    conf_threshold: float,
) -> list[Detection]:
    """Turn a (A*(C+5), H, W) region map into detections with score >= threshold.

    Detections come out in (anchor, row, col) order; boxes are clamped to the
    unit square.
    """
    fm = np.asarray(feature_map, dtype=np.float64)
    num = len(anchors)
    depth = classes + 5
    if fm.ndim != 3 or num == 0 or fm.shape[0] != depth * num:
        raise ValidationError(
            f"region map has {fm.shape[0] if fm.ndim == 3 else fm.shape} channels, "
            f"expected (classes+5)*anchors = {depth * num}"
        )
    _, gh, gw = fm.shape
    t = fm.reshape(num, depth, gh, gw)
    cols = np.arange(gw)[None, None, :]
    rows = np.arange(gh)[None, :, None]
    aw = np.array([a[0] for a in anchors], dtype=np.float64)[:, None, None]
    ah = np.array([a[1] for a in anchors], dtype=np.float64)[:, None, None]

    cx = (_sigmoid(t[:, 0]) + cols) / gw
    cy = (_sigmoid(t[:, 1]) + rows) / gh
    bw = aw * np.exp(t[:, 2]) / gw
    bh = ah * np.exp(t[:, 3]) / gh
    obj = _sigmoid(t[:, 4])

    logits = t[:, 5:]  # (A, C, H, W)
    mx = logits.max(axis=1, keepdims=True)
    e = np.exp(logits - mx)
    # sequential accumulation over classes keeps results reproducible per cell
    total = np.zeros_like(e[:, 0])
    for k in range(classes):
        total = total + e[:, k]
    probs = e / total[:, None]
    class_id = probs.argmax(axis=1)
    best = np.take_along_axis(probs, class_id[:, None], axis=1)[:, 0]
    score = obj * best

    x0 = np.clip(cx - bw / 2, 0.0, 1.0)
    x1 = np.clip(cx + bw / 2, 0.0, 1.0)
    y0 = np.clip(cy - bh / 2, 0.0, 1.0)
    y1 = np.clip(cy + bh / 2, 0.0, 1.0)

    out = []
    for a, r, c in zip(*np.nonzero(score >= conf_threshold)):
        box = BoundingBox(
            float((x0[a, r, c] + x1[a, r, c]) / 2),
            float((y0[a, r, c] + y1[a, r, c]) / 2),
            float(x1[a, r, c] - x0[a, r, c]),
            float(y1[a, r, c] - y0[a, r, c]),
        )
        out.append(
            Detection(
                box,
                float(obj[a, r, c]),
                tuple(float(p) for p in probs[a, :, r, c]),
                int(class_id[a, r, c]),
                float(score[a, r, c]),
            )
        )
    return out


def iou(a: BoundingBox, b: BoundingBox) -> float:
    iw = min(a.x1, b.x1) - max(a.x0, b.x0)
    ih = min(a.y1, b.y1) - max(a.y0, b.y0)
    if iw <= 0 or ih <= 0:
        return 0.0
    inter = iw * ih
    return min(1.0, inter / (a.w * a.h + b.w * b.h - inter))


def iou_matrix(boxes_a: np.ndarray, boxes_b: np.ndarray) -> np.ndarray:
    """Pairwise IoU of (N, 4) and (M, 4) corner arrays."""
    a = np.asarray(boxes_a, dtype=np.float64).reshape(-1, 4)
    b = np.asarray(boxes_b, dtype=np.float64).reshape(-1, 4)
    iw = np.minimum(a[:, None, 2], b[None, :, 2]) - np.maximum(a[:, None, 0], b[None, :, 0])
    ih = np.minimum(a[:, None, 3], b[None, :, 3]) - np.maximum(a[:, None, 1], b[None, :, 1])
    inter = np.clip(iw, 0, None) * np.clip(ih, 0, None)
    area_a = (a[:, 2] - a[:, 0]) * (a[:, 3] - a[:, 1])
    area_b = (b[:, 2] - b[:, 0]) * (b[:, 3] - b[:, 1])
    union = area_a[:, None] + area_b[None, :] - inter
    with np.errstate(invalid="ignore", divide="ignore"):
        return np.minimum(np.where(inter > 0, inter / union, 0.0), 1.0)


def nms_indices(
    boxes: np.ndarray,
    scores: Sequence[float],
    classes: Sequence[int],
    iou_threshold: float,
    class_agnostic: bool = False,
) -> list[int]:
    """Greedy NMS on corner boxes; returns kept indices in priority order."""
    n = len(scores)
    if n == 0:
        return []
    order = sorted(range(n), key=lambda i: (-scores[i], i))
    ious = iou_matrix(boxes, boxes)
    cls = np.asarray(classes)
    same = np.ones((n, n), bool) if class_agnostic else cls[:, None] == cls[None, :]
    suppressed = np.zeros(n, bool)
    keep = []
    for i in order:
        if suppressed[i]:
            continue
        keep.append(i)
        suppressed |= same[i] & (ious[i] >= iou_threshold)
    return keep


def nms(
    detections: Sequence[Detection], iou_threshold: float, class_agnostic: bool = False
) -> list[Detection]:
    """Per-class greedy NMS; ties on score go to the earlier detection."""
    if not detections:
        return []
    boxes = np.array([d.box.corners() for d in detections])
    keep = nms_indices(
        boxes, [d.score for d in detections], [d.class_id for d in detections],
        iou_threshold, class_agnostic,
    )
    return [detections[i] for i in keep]


# --------------------------------------------------------------------- anchors


def _wh_iou(boxes: np.ndarray, centroids: np.ndarray) -> np.ndarray:
    """IoU of origin-aligned (w, h) pairs: (N, K)."""
    inter = np.minimum(boxes[:, None, 0], centroids[None, :, 0]) * np.minimum(
        boxes[:, None, 1], centroids[None, :, 1]
    )
    union = (boxes[:, 0] * boxes[:, 1])[:, None] + (centroids[:, 0] * centroids[:, 1])[None, :] - inter
    return inter / union


def anchor_cost(boxes, centroids) -> float:
    """Total 1 - IoU of each box to its nearest centroid."""
    d = 1.0 - _wh_iou(np.asarray(boxes, float), np.asarray(centroids, float))
    return float(d.min(axis=1).sum())


def compute_anchors(
    boxes: Sequence[tuple[float, float]],
    k: int,
    seed: int = 0,
    max_iter: int = 300,
    history: list | None = None,
) -> list[tuple[float, float]]:
    """k-means over (w, h) with 1 - IoU distance and k-means++ seeding.

    A centroid moves to its cluster mean only if that does not raise the
    cluster's cost, so the total cost is non-increasing.  Per-iteration costs
    are appended to ``history`` when given.
    """
    data = np.asarray(boxes, dtype=np.float64).reshape(-1, 2)
    n = len(data)
    if n == 0:
        raise ValidationError("no boxes to cluster")
    if not 1 <= k <= n:
        raise ValidationError(f"k={k} must be between 1 and the number of boxes ({n})")
    if (data <= 0).any():
        raise ValidationError("box extents must be positive")
    rng = np.random.default_rng(seed)

    centroids = [data[rng.integers(n)]]
    for _ in range(1, k):
        d = (1.0 - _wh_iou(data, np.array(centroids))).min(axis=1) ** 2
        if d.sum() <= 0:
            # fewer distinct boxes than k; reuse unchosen points in order
            centroids.append(data[len(centroids)])
            continue
        centroids.append(data[rng.choice(n, p=d / d.sum())])
    cent = np.array(centroids)

    assign = None
    for _ in range(max_iter):
        dist = 1.0 - _wh_iou(data, cent)
        new_assign = dist.argmin(axis=1)
        if history is not None:
            history.append(float(dist[np.arange(n), new_assign].sum()))
        if assign is not None and np.array_equal(new_assign, assign):
            break
        assign = new_assign
        for j in range(k):
            members = data[assign == j]
            if len(members) == 0:
                continue
            cand = members.mean(axis=0)
            old_cost = (1.0 - _wh_iou(members, cent[j : j + 1])).sum()
            new_cost = (1.0 - _wh_iou(members, cand[None])).sum()
            if new_cost <= old_cost:
                cent[j] = cand
    order = np.argsort(cent[:, 0] * cent[:, 1], kind="stable")
    return [(float(w), float(h)) for w, h in cent[order]]


def anchors_to_grid(anchors, grid_w: int, grid_h: int) -> list[tuple[float, float]]:
    """Normalized (w, h) anchors -> grid-cell units, as stored in region cfgs."""
    return [(w * grid_w, h * grid_h) for w, h in anchors]

