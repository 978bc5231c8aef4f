"""CPU forward pass for parsed Darknet networks.

Tensors are float32 numpy arrays in (channels, rows, cols) layout.
"""

from __future__ import annotations

import json
from pathlib import Path

import numpy as np

from .errors import DataError, ModelError
from .model_io import (
    ConvSpec,
    ConvWeights,
    MaxPoolSpec,
    NetworkModel,
    RegionSpec,
    ReorgSpec,
    RouteSpec,
)

BN_EPSILON = 1e-6
LEAKY_SLOPE = 0.1


def im2col(x: np.ndarray, size: int, stride: int, pad: int) -> np.ndarray:
    """Unfold (C, H, W) into (C*size*size, out_h*out_w) columns.

    Row order is (channel, kernel row, kernel col), matching the kernel layout
    in the weights file.
    """
    c, h, w = x.shape
    if pad:
        x = np.pad(x, ((0, 0), (pad, pad), (pad, pad)))
    out_h = (h + 2 * pad - size) // stride + 1
    out_w = (w + 2 * pad - size) // stride + 1
    if size == 1:
        cols = x[:, : (out_h - 1) * stride + 1 : stride, : (out_w - 1) * stride + 1 : stride]
        return cols.reshape(c, out_h * out_w)
    win = np.lib.stride_tricks.sliding_window_view(x, (size, size), axis=(1, 2))
    win = win[:, ::stride, ::stride][:, :out_h, :out_w]  # (C, oh, ow, k, k)
    return win.transpose(0, 3, 4, 1, 2).reshape(c * size * size, out_h * out_w)


def convolve(x: np.ndarray, layer: ConvSpec, w: ConvWeights) -> np.ndarray:
    c, h, wd = x.shape
    p = layer.pad_px
    out_h = (h + 2 * p - layer.size) // layer.stride + 1
    out_w = (wd + 2 * p - layer.size) // layer.stride + 1
    cols = im2col(x, layer.size, layer.stride, p)
    y = w.kernel.reshape(layer.filters, -1) @ cols
    if w.batch_normalized:
        inv = w.scales / np.sqrt(w.rolling_variance + np.float32(BN_EPSILON))
        y = (y - w.rolling_mean[:, None]) * inv[:, None] + w.biases[:, None]
    else:
        y = y + w.biases[:, None]
    y = y.reshape(layer.filters, out_h, out_w)
    if layer.activation == "leaky":
        y = np.where(y > 0, y, np.float32(LEAKY_SLOPE) * y)
    return y.astype(np.float32, copy=False)


def maxpool(x: np.ndarray, size: int, stride: int) -> np.ndarray:
    """Max pooling with (size-1) right/bottom padding of -inf."""
    c, h, w = x.shape
    out_h = (h - 1) // stride + 1
    out_w = (w - 1) // stride + 1
    need_h = (out_h - 1) * stride + size
    need_w = (out_w - 1) * stride + size
    xp = np.full((c, max(need_h, h), max(need_w, w)), -np.inf, dtype=x.dtype)
    xp[:, :h, :w] = x
    win = np.lib.stride_tricks.sliding_window_view(xp, (size, size), axis=(1, 2))
    win = win[:, ::stride, ::stride][:, :out_h, :out_w]
    return win.max(axis=(3, 4))


def reorg_darknet(x: np.ndarray, stride: int) -> np.ndarray:
    """Darknet's reorg layer, reproducing its flat-buffer index arithmetic.

    Needed to run weights trained with Darknet; the result is a permutation of
    the input but not a plain space-to-depth.
    """
    c, h, w = x.shape
    s = stride
    out_c = c // (s * s)
    k, j, i = np.meshgrid(np.arange(c), np.arange(h), np.arange(w), indexing="ij")
    c2 = k % out_c
    offset = k // out_c
    w2 = i * s + offset % s
    h2 = j * s + offset // s
    src = w2 + w * s * (h2 + h * s * c2)
    flat = x.reshape(-1)
    return flat[src.reshape(-1)].reshape(c * s * s, h // s, w // s)


def space_to_depth(x: np.ndarray, stride: int) -> np.ndarray:
    """Plain space-to-depth: out channel = (dy*s + dx)*C + c."""
    c, h, w = x.shape
    s = stride
    y = x.reshape(c, h // s, s, w // s, s).transpose(2, 4, 0, 1, 3)
    return y.reshape(s * s * c, h // s, w // s)


def forward(
    model: NetworkModel, x: np.ndarray, check_finite: bool = False
) -> list[np.ndarray]:
    """Run every layer and return all per-layer outputs."""
    if model.weights is None:
        raise ModelError("model has no weights loaded")
    expected = (model.channels, model.height, model.width)
    if tuple(x.shape) != expected:
        raise ModelError(f"input shape {tuple(x.shape)} does not match network input {expected}")
    x = np.asarray(x, dtype=np.float32)
    outputs: list[np.ndarray] = []
    for i, layer in enumerate(model.layers):
        if isinstance(layer, ConvSpec):
            x = convolve(x, layer, model.weights[i])
        elif isinstance(layer, MaxPoolSpec):
            x = maxpool(x, layer.size, layer.stride)
        elif isinstance(layer, RouteSpec):
            srcs = model.route_sources(i)
            x = outputs[srcs[0]] if len(srcs) == 1 else np.concatenate([outputs[s] for s in srcs])
        elif isinstance(layer, ReorgSpec):
            x = (reorg_darknet if layer.flavor == "darknet" else space_to_depth)(x, layer.stride)
        elif isinstance(layer, RegionSpec):
            pass  # decoded separately
        if check_finite and not np.isfinite(x).all():
            raise ModelError(f"non-finite values after layer {i} ({layer.kind})")
        outputs.append(x)
    return outputs


def run(model: NetworkModel, x: np.ndarray) -> np.ndarray:
    """Output of the last layer only."""
    return forward(model, x)[-1]


# --------------------------------------------------------------------- images


def resize_bilinear(image: np.ndarray, out_w: int, out_h: int) -> np.ndarray:
    """Half-pixel-centre bilinear resize of an (H, W, C) array, no antialiasing."""
    h, w = image.shape[:2]
    img = image.astype(np.float32)
    ys = np.clip((np.arange(out_h) + 0.5) * (h / out_h) - 0.5, 0, h - 1)
    xs = np.clip((np.arange(out_w) + 0.5) * (w / out_w) - 0.5, 0, w - 1)
    y0 = np.floor(ys).astype(int)
    x0 = np.floor(xs).astype(int)
    y1 = np.minimum(y0 + 1, h - 1)
    x1 = np.minimum(x0 + 1, w - 1)
    wy = (ys - y0).astype(np.float32)[:, None, None]
    wx = (xs - x0).astype(np.float32)[None, :, None]
    top = img[y0][:, x0] * (1 - wx) + img[y0][:, x1] * wx
    bot = img[y1][:, x0] * (1 - wx) + img[y1][:, x1] * wx
    return top * (1 - wy) + bot * wy


def preprocess(image: np.ndarray, target_w: int, target_h: int) -> np.ndarray:
    """uint8 RGB (H, W, 3) raster -> float32 (3, target_h, target_w) in [0, 1]."""
    image = np.asarray(image)
    if image.ndim != 3 or image.shape[0] == 0 or image.shape[1] == 0:
        raise DataError(f"cannot preprocess image of shape {image.shape}")
    resized = resize_bilinear(image, target_w, target_h) / np.float32(255.0)
    return np.ascontiguousarray(resized.transpose(2, 0, 1), dtype=np.float32)


def load_image(path) -> np.ndarray:
    """Read PNG/JPEG via Pillow, or headerless .rgb with a .json size sidecar."""
    path = Path(path)
    if path.suffix.lower() == ".rgb":
        sidecar = path.with_suffix(".json")
        try:
            meta = json.loads(sidecar.read_text())
            w, h = int(meta["width"]), int(meta["height"])
        except (OSError, KeyError, ValueError) as exc:
            raise DataError(f"{path}: missing or bad size sidecar {sidecar}") from exc
        data = np.frombuffer(path.read_bytes(), dtype=np.uint8)
        if data.size != w * h * 3:
            raise DataError(f"{path}: {data.size} bytes, expected {w * h * 3}")
        return data.reshape(h, w, 3).copy()
    from PIL import Image

    try:
        with Image.open(path) as im:
            return np.asarray(im.convert("RGB")).copy()
    except OSError as exc:
        raise DataError(f"cannot read image {path}: {exc}") from exc


def save_image(path, image: np.ndarray) -> None:
    path = Path(path)
    image = np.ascontiguousarray(image, dtype=np.uint8)
    if path.suffix.lower() == ".rgb":
        path.write_bytes(image.tobytes())
        path.with_suffix(".json").write_text(
            json.dumps({"width": image.shape[1], "height": image.shape[0]})
        )
        return
    from PIL import Image

    Image.fromarray(image).save(path)
