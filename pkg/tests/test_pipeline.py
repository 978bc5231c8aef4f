import json
import math
from dataclasses import replace

import numpy as np
import pytest

from alpr.errors import ConfigError, ModelError
from alpr.layout_rules import LAYOUT_CLASSES, Layout, VehicleKind
from alpr.model_io import with_weights
from alpr.pipeline import (
    GRAY,
    Models,
    PipelineConfig,
    crop,
    detect_plate,
    enlarge_rect,
    output_record,
    run_pipeline,
    timing_record,
)
from alpr.synthetic import PLATE_H, PLATE_W, SceneVehicle, lp_model, render_scene, vehicle_model, write_fixture


def test_enlarge_examples():
    assert enlarge_rect((0, 0, 100, 50)) == (-19, 0, 119, 50)  # 138 x 50
    assert enlarge_rect((0, 0, 275, 100)) == (0, 0, 275, 100)
    x0, y0, x1, y1 = enlarge_rect((0, 0, 400, 100))
    assert (x1 - x0, y1 - y0) == (400, 146)


@pytest.mark.parametrize("w,h", [(30, 20), (64, 32), (200, 30), (100, 10), (7, 3)])
def test_enlarged_ratio_in_band(w, h):
    x0, y0, x1, y1 = enlarge_rect((10, 10, 10 + w, 10 + h))
    r = (x1 - x0) / (y1 - y0)
    assert 2.5 <= r <= 3.0 or math.isclose(r, 2.75, rel_tol=0.05)
    # grows symmetrically and never shrinks
    assert x0 <= 10 and y0 <= 10 and x1 >= 10 + w and y1 >= 10 + h
    assert abs((x0 - 10) - (10 + w - x1)) <= 1 and abs((y0 - 10) - (10 + h - y1)) <= 1


def test_crop_fills_outside_with_gray():
    img = np.full((4, 4, 3), 9, np.uint8)
    out = crop(img, (-2, -1, 3, 2))
    assert out.shape == (3, 5, 3)
    assert np.all(out[0] == GRAY) and np.all(out[:, :2] == GRAY)
    assert np.all(out[1:, 2:] == 9)


def _lp_with_class_gain(gain):
    m = lp_model()
    head = m.weights[4]
    bias = head.biases.copy()
    bias[5:] = 0.0
    bias[5 + LAYOUT_CLASSES.index(Layout.BRAZILIAN)] = gain
    given = {i: w for i, w in enumerate(m.weights) if w is not None}
    return with_weights(m, {**given, 4: replace(head, biases=bias)})


def _vehicle_patch():
    img = render_scene([SceneVehicle(0)])
    return img[:, :128]


def test_detect_plate_confident_layout():
    d = detect_plate(_vehicle_patch(), lp_model())
    assert d.layout == Layout.BRAZILIAN and d.score > 0.99


def test_detect_plate_low_score_is_undefined():
    # class probability e^g / (e^g + 4) = 0.6
    d = detect_plate(_vehicle_patch(), _lp_with_class_gain(math.log(6)))
    assert d.score == pytest.approx(0.6, abs=1e-3)
    assert d.layout == Layout.UNDEFINED and d.predicted_layout == Layout.BRAZILIAN


def test_detect_plate_none_without_plate():
    patch = render_scene([SceneVehicle(0, with_plate=False)])[:, :128]
    assert detect_plate(patch, lp_model()) is None


def test_models_validation():
    with pytest.raises(ModelError):
        Models(vehicle_model(), lp_model(), vehicle_model())
    with pytest.raises(ConfigError):
        Models.from_dir("")


def test_models_from_dir(tmp_path):
    write_fixture(tmp_path)
    m = Models.from_dir(tmp_path)
    assert m.ocr.region.classes == 35
    (tmp_path / "ocr.weights").unlink()
    with pytest.raises(ModelError):
        Models.from_dir(tmp_path)


def test_config_validation():
    with pytest.raises(ConfigError):
        PipelineConfig(vehicle_thresh=1.5)
    cfg = PipelineConfig(char_thresh=0.3, char_thresh_eu=0.7)
    rules = cfg.rulesets()
    assert rules[Layout.EUROPEAN].char_conf_threshold == 0.7
    assert rules[Layout.BRAZILIAN].char_conf_threshold == 0.3
    assert PipelineConfig().rulesets()[Layout.EUROPEAN].char_conf_threshold == 0.65


# ---------------------------------------------------------------- end to end


def test_fixture_reads_injected_string(fixture_models):
    out = run_pipeline(render_scene([SceneVehicle(1)]), fixture_models)
    (r,) = out.results
    assert r.text == "ABC1234" and r.status == "ok"
    assert r.vehicle.kind == VehicleKind.CAR
    assert r.vehicle_rect == (128, 0, 256, 256)
    assert r.plate_rect == (128, 160, 128 + PLATE_W, 160 + PLATE_H)


def test_fixture_motorcycle_two_rows(fixture_models):
    out = run_pipeline(render_scene([SceneVehicle(2, "XYZ9876", motorcycle=True)]), fixture_models)
    (r,) = out.results
    assert r.vehicle.kind == VehicleKind.MOTORCYCLE and r.text == "XYZ9876"
    assert r.reading.rows.value == "two"


def test_zero_vehicles_is_negative_with_timings(fixture_models):
    out = run_pipeline(render_scene([]), fixture_models)
    assert out.negative and out.results == []
    assert out.timings.vehicle_ms > 0 and out.timings.lp_ms == [] and out.timings.ocr_ms == []
    assert output_record("e.png", out)["status"] == "negative"


@pytest.mark.parametrize("n", [1, 2, 4])
def test_per_vehicle_timings(fixture_models, n):
    out = run_pipeline(render_scene([SceneVehicle(c) for c in range(n)]), fixture_models)
    assert len(out.results) == n
    assert len(out.timings.lp_ms) == n and len(out.timings.ocr_ms) == n
    t = timing_record("x", out)
    assert t["total_ms"] == pytest.approx(t["vehicle_ms"] + sum(t["lp_ms"]) + sum(t["ocr_ms"]))


def test_vehicle_without_plate(fixture_models):
    out = run_pipeline(render_scene([SceneVehicle(0, with_plate=False), SceneVehicle(3)]), fixture_models)
    statuses = sorted(r.status for r in out.results)
    assert statuses == ["no_plate", "ok"]
    assert len(out.timings.ocr_ms) == 1


def test_output_records_are_deterministic(fixture_models):
    img = render_scene([SceneVehicle(0, "QRS5678"), SceneVehicle(2, "XYZ9876", motorcycle=True)])
    recs = [json.dumps(output_record("x.png", run_pipeline(img, fixture_models)), sort_keys=True) for _ in range(3)]
    assert len(set(recs)) == 1
    rec = json.loads(recs[0])
    assert sorted(v["plate"]["text"] for v in rec["vehicles"]) == ["QRS5678", "XYZ9876"]
    assert "ms" not in recs[0]
