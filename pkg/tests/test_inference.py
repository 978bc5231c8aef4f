import json

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from alpr.errors import ConfigError, DataError, ModelError
from alpr.inference import (
    BN_EPSILON,
    convolve,
    forward,
    load_image,
    maxpool,
    preprocess,
    reorg_darknet,
    resize_bilinear,
    run,
    save_image,
    space_to_depth,
)
from alpr.model_io import ConvSpec, ConvWeights, builtin_config, parse_config, random_weights

from oracles import darknet_reorg, direct_conv
from oracles import space_to_depth as s2d_oracle


def _one_conv(size=1, filters=1, channels=1, w=2, h=2, act="linear", bn=False):
    text = (
        f"[net]\nwidth={w}\nheight={h}\nchannels={channels}\n"
        f"[convolutional]\nfilters={filters}\nsize={size}\npad=1\nactivation={act}\nbatch_normalize={int(bn)}\n"
    )
    return parse_config(text)


def test_affine_conv():
    from alpr.model_io import with_weights

    m = with_weights(_one_conv(), {0: ConvWeights(np.array([0.5]), np.full((1, 1, 1, 1), 2.0))})
    out = run(m, np.ones((1, 2, 2), np.float32))
    assert np.all(out == 2.5)


def test_maxpool_quad():
    x = np.array([[[1, 2], [3, 4]]], np.float32)
    assert maxpool(x, 2, 2).tolist() == [[[4.0]]]


def test_maxpool_stride_one_keeps_size():
    x = np.arange(9, dtype=np.float32).reshape(1, 3, 3)
    y = maxpool(x, 2, 1)
    assert y.shape == (1, 3, 3)
    # bottom-right cell sees only itself (padding is -inf)
    assert y[0, 2, 2] == 8 and y[0, 0, 0] == 4


@given(st.integers(1, 3), st.sampled_from([1, 3]), st.sampled_from([1, 2]),
       st.integers(3, 7), st.integers(3, 7), st.integers(0, 10**6))
def test_im2col_conv_matches_direct_loops(c, k, stride, h, w, seed):
    rng = np.random.default_rng(seed)
    x = rng.standard_normal((c, h, w)).astype(np.float32)
    kern = rng.standard_normal((2, c, k, k)).astype(np.float32)
    bias = rng.standard_normal(2).astype(np.float32)
    layer = ConvSpec(2, k, stride, True, False, "linear")
    got = convolve(x, layer, ConvWeights(bias, kern))
    ref = direct_conv(x, kern, bias, stride, layer.pad_px)
    np.testing.assert_allclose(got, ref, rtol=1e-5, atol=1e-5)


def test_batchnorm_formula(rng):
    x = rng.standard_normal((2, 3, 3)).astype(np.float32)
    kern = rng.standard_normal((2, 2, 1, 1)).astype(np.float32)
    b, s, mu, var = (rng.uniform(0.5, 1.5, 2).astype(np.float32) for _ in range(4))
    got = convolve(x, ConvSpec(2, 1, 1, True, True, "linear"), ConvWeights(b, kern, s, mu, var))
    raw = np.einsum("fc,chw->fhw", kern[:, :, 0, 0], x)
    ref = s[:, None, None] * (raw - mu[:, None, None]) / np.sqrt(var[:, None, None] + BN_EPSILON) + b[:, None, None]
    np.testing.assert_allclose(got, ref, rtol=1e-5, atol=1e-6)


def test_leaky_slope(rng):
    x = np.array([[[-1.0, 2.0]]], np.float32)
    y = convolve(x, ConvSpec(1, 1, 1, False, False, "leaky"), ConvWeights(np.zeros(1), np.ones((1, 1, 1, 1))))
    np.testing.assert_allclose(y, [[[-0.1, 2.0]]])


@given(st.floats(0.1, 10), st.integers(0, 1000))
def test_conv_linearity(alpha, seed):
    rng = np.random.default_rng(seed)
    x = rng.standard_normal((2, 4, 4)).astype(np.float32)
    layer = ConvSpec(3, 3, 1, True, False, "linear")
    w = ConvWeights(np.zeros(3, np.float32), rng.standard_normal((3, 2, 3, 3)).astype(np.float32))
    np.testing.assert_allclose(convolve(np.float32(alpha) * x, layer, w), alpha * convolve(x, layer, w), rtol=1e-4, atol=1e-4)


@given(st.sampled_from([4, 8, 12]), st.sampled_from([2, 4, 6]), st.sampled_from([2, 4]))
def test_darknet_reorg_matches_scalar_loop(c, h, w):
    x = np.arange(c * h * w, dtype=np.float32).reshape(c, h, w)
    got = reorg_darknet(x, 2)
    assert got.shape == (4 * c, h // 2, w // 2)
    np.testing.assert_array_equal(got, darknet_reorg(x, 2))
    assert sorted(got.ravel()) == sorted(x.ravel())


def test_space_to_depth_small_example():
    x = np.arange(16, dtype=np.float32).reshape(1, 4, 4)
    got = space_to_depth(x, 2)
    assert got.shape == (4, 2, 2)
    np.testing.assert_array_equal(got, s2d_oracle(x, 2))
    assert got[0].tolist() == [[0, 2], [8, 10]]


def test_darknet_reorg_rejects_single_channel():
    text = "[net]\nwidth=4\nheight=4\nchannels=1\n[reorg]\nstride=2\n"
    with pytest.raises(ConfigError):
        parse_config(text)
    m = parse_config(text.replace("stride=2", "stride=2\nflavor=s2d"))
    assert m.shape_trace == ((2, 2, 4),)


def test_route_concatenation_order(rng):
    text = (
        "[net]\nwidth=4\nheight=4\nchannels=2\n"
        "[convolutional]\nfilters=3\nsize=1\nactivation=linear\n"
        "[convolutional]\nfilters=5\nsize=1\nactivation=linear\n"
        "[route]\nlayers=1,0\n"
    )
    m = random_weights(parse_config(text), 3)
    outs = forward(m, rng.random((2, 4, 4), dtype=np.float32))
    np.testing.assert_array_equal(outs[2], np.concatenate([outs[1], outs[0]]))
    assert m.shape_trace[2] == (4, 4, 8)


def test_forward_errors():
    m = _one_conv()
    with pytest.raises(ModelError):
        forward(m, np.zeros((1, 2, 2), np.float32))
    mw = random_weights(m)
    with pytest.raises(ModelError):
        forward(mw, np.zeros((1, 3, 2), np.float32))


@pytest.mark.slow
@pytest.mark.parametrize("name", ["vehicle", "lp", "ocr"])
def test_full_size_forward_shapes(name, rng):
    m = random_weights(builtin_config(name), seed=1)
    x = rng.random((3, m.height, m.width), dtype=np.float32)
    outs = forward(m, x, check_finite=True)
    for i, o in enumerate(outs):
        w, h, c = m.shape_trace[i]
        assert o.shape == (c, h, w)


# ---------------------------------------------------------------- images


def test_preprocess_constant_gray():
    img = np.full((10, 7, 3), 128, np.uint8)
    t = preprocess(img, 5, 4)
    assert t.shape == (3, 4, 5)
    np.testing.assert_allclose(t, 128 / 255, rtol=1e-6)


def test_preprocess_single_pixel_upscale():
    img = np.array([[[255, 0, 0]]], np.uint8)
    t = preprocess(img, 2, 2)
    assert t.shape == (3, 2, 2)
    assert np.all(t[0] == 1.0) and np.all(t[1:] == 0.0)


def test_preprocess_vehicle_input_shape():
    img = np.zeros((720, 1280, 3), np.uint8)
    assert preprocess(img, 448, 288).shape == (3, 288, 448)


def test_preprocess_rejects_empty():
    with pytest.raises(DataError):
        preprocess(np.zeros((0, 4, 3), np.uint8), 2, 2)


def test_resize_identity(rng):
    img = rng.integers(0, 255, (5, 6, 3)).astype(np.uint8)
    np.testing.assert_array_equal(resize_bilinear(img, 6, 5), img.astype(np.float32))


def test_image_io_roundtrip(tmp_path, rng):
    img = rng.integers(0, 255, (6, 9, 3)).astype(np.uint8)
    save_image(tmp_path / "a.png", img)
    np.testing.assert_array_equal(load_image(tmp_path / "a.png"), img)
    (tmp_path / "b.rgb").write_bytes(img.tobytes())
    (tmp_path / "b.json").write_text(json.dumps({"width": 9, "height": 6}))
    np.testing.assert_array_equal(load_image(tmp_path / "b.rgb"), img)
    with pytest.raises(DataError):
        load_image(tmp_path / "missing.png")
