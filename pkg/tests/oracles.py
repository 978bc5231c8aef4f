"""Slow, independent reference implementations used as test oracles.

Each one is written as plain scalar loops, without reusing package code, so it
can catch vectorization mistakes in the real implementations.
"""

import itertools
import struct

import numpy as np


def scalar_decode(fm, anchors, classes, threshold):
    """Per-cell YOLOv2 region decode.  Returns tuples
    (cx, cy, w, h, objectness, probs, class_id, score) in (anchor, row, col) order.

    Arithmetic is done on numpy float64 scalars with the same operation order
    as the textbook formulas, so results are comparable bit for bit.
    """
    fm = np.asarray(fm, dtype=np.float64)
    depth = classes + 5
    _, gh, gw = fm.shape
    out = []
    one = np.float64(1.0)
    for a, (aw, ah) in enumerate(anchors):
        aw, ah = np.float64(aw), np.float64(ah)
        for r in range(gh):
            for c in range(gw):
                v = [fm[a * depth + e, r, c] for e in range(depth)]
                sx = one / (one + np.exp(-v[0]))
                sy = one / (one + np.exp(-v[1]))
                cx = (sx + np.float64(c)) / np.float64(gw)
                cy = (sy + np.float64(r)) / np.float64(gh)
                bw = aw * np.exp(v[2]) / np.float64(gw)
                bh = ah * np.exp(v[3]) / np.float64(gh)
                obj = one / (one + np.exp(-v[4]))
                logits = v[5:]
                mx = logits[0]
                for x in logits[1:]:
                    if x > mx:
                        mx = x
                ex = [np.exp(x - mx) for x in logits]
                total = np.float64(0.0)
                for e in ex:
                    total = total + e
                probs = [e / total for e in ex]
                best = 0
                for k in range(1, classes):
                    if probs[k] > probs[best]:
                        best = k
                score = obj * probs[best]
                if not score >= threshold:
                    continue
                clamp = lambda t: min(max(t, np.float64(0.0)), np.float64(1.0))
                x0, x1 = clamp(cx - bw / 2), clamp(cx + bw / 2)
                y0, y1 = clamp(cy - bh / 2), clamp(cy + bh / 2)
                out.append((
                    float((x0 + x1) / 2), float((y0 + y1) / 2), float(x1 - x0), float(y1 - y0),
                    float(obj), tuple(float(p) for p in probs), best, float(score),
                ))
    return out


def box_iou(a, b):
    """Corner-format IoU with plain Python floats."""
    ix = min(a[2], b[2]) - max(a[0], b[0])
    iy = min(a[3], b[3]) - max(a[1], b[1])
    if ix <= 0 or iy <= 0:
        return 0.0
    inter = ix * iy
    union = (a[2] - a[0]) * (a[3] - a[1]) + (b[2] - b[0]) * (b[3] - b[1]) - inter
    return inter / union


def reference_nms(boxes, scores, classes, threshold, class_agnostic=False):
    """Repeatedly take the best survivor and strike every overlapping peer."""
    alive = set(range(len(scores)))
    kept = []
    while alive:
        best = min(alive, key=lambda i: (-scores[i], i))
        kept.append(best)
        alive.discard(best)
        for j in list(alive):
            if (class_agnostic or classes[j] == classes[best]) and box_iou(boxes[best], boxes[j]) >= threshold:
                alive.discard(j)
    return kept


def reference_match(preds, gts, threshold=0.5, compatible=lambda p, g: p == g):
    """Greedy matcher on (x, y, w, h) boxes; returns (tp, fp, fn)."""
    corners = lambda r: (r[0], r[1], r[0] + r[2], r[1] + r[3])
    order = sorted(range(len(preds)), key=lambda i: (-preds[i][2], i))
    used = set()
    tp = 0
    for i in order:
        best, best_iou = None, threshold
        for j, g in enumerate(gts):
            if j in used or not compatible(preds[i][1], g[1]):
                continue
            v = box_iou(corners(preds[i][0]), corners(g[0]))
            if v > best_iou:
                best, best_iou = j, v
        if best is not None:
            used.add(best)
            tp += 1
    return tp, len(preds) - tp, len(gts) - tp


def max_matching(preds, gts, threshold=0.5):
    """Largest possible number of one-to-one same-class matches (exhaustive)."""
    corners = lambda r: (r[0], r[1], r[0] + r[2], r[1] + r[3])
    ok = [[p[1] == g[1] and box_iou(corners(p[0]), corners(g[0])) > threshold for g in gts] for p in preds]
    if len(preds) > len(gts):
        ok = [list(col) for col in zip(*ok)] if preds and gts else []
    rows, cols = len(ok), len(ok[0]) if ok else 0
    best = 0
    for perm in itertools.permutations(range(cols), rows):
        best = max(best, sum(ok[i][j] for i, j in enumerate(perm)))
    return best


def darknet_reorg(x, stride):
    """Darknet reorg_cpu with forward=0, looped over the flat input buffer."""
    c, h, w = x.shape
    out_c = c // (stride * stride)
    flat_in = x.reshape(-1)
    out = np.empty_like(flat_in)
    for k in range(c):
        for j in range(h):
            for i in range(w):
                in_index = i + w * (j + h * k)
                c2 = k % out_c
                offset = k // out_c
                w2 = i * stride + offset % stride
                h2 = j * stride + offset // stride
                out_index = w2 + w * stride * (h2 + h * stride * c2)
                out[in_index] = flat_in[out_index]
    return out.reshape(c * stride * stride, h // stride, w // stride)


def space_to_depth(x, stride):
    c, h, w = x.shape
    out = np.empty((c * stride * stride, h // stride, w // stride), x.dtype)
    for dy in range(stride):
        for dx in range(stride):
            for ch in range(c):
                for j in range(h // stride):
                    for i in range(w // stride):
                        out[(dy * stride + dx) * c + ch, j, i] = x[ch, j * stride + dy, i * stride + dx]
    return out


def direct_conv(x, kernel, bias, stride, pad):
    """Six nested loops; no im2col."""
    c, h, w = x.shape
    f, _, k, _ = kernel.shape
    oh = (h + 2 * pad - k) // stride + 1
    ow = (w + 2 * pad - k) // stride + 1
    out = np.zeros((f, oh, ow), np.float64)
    for o in range(f):
        for r in range(oh):
            for q in range(ow):
                acc = float(bias[o])
                for ch in range(c):
                    for dy in range(k):
                        for dx in range(k):
                            y, xx = r * stride + dy - pad, q * stride + dx - pad
                            if 0 <= y < h and 0 <= xx < w:
                                acc += float(kernel[o, ch, dy, dx]) * float(x[ch, y, xx])
                out[o, r, q] = acc
    return out


def weights_file(header, blocks):
    """Assemble a weights file from a header tuple and a list of float lists."""
    major, minor, revision, seen = header
    data = struct.pack("<iiiQ", major, minor, revision, seen)
    for block in blocks:
        data += struct.pack(f"<{len(block)}f", *block)
    return data
