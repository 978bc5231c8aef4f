import pytest

from alpr.bench import StageStats, format_table, measure_stages, sweep
from alpr.errors import ValidationError
from alpr.synthetic import SceneVehicle, render_scene

STATS = StageStats((5.0, 0.3), (2.0, 0.4), (1.0, 0.2), repeats=10)


def test_additive_model():
    rows = sweep(STATS, [0, 1, 2, 4])
    assert [r.predicted_ms for r in rows] == [5.0, 8.0, 11.0, 17.0]
    assert rows[1].fps == pytest.approx(125.0)
    assert rows[0].predicted_std == pytest.approx(0.3)
    assert rows[2].predicted_std == pytest.approx((0.09 + 2 * (0.16 + 0.04)) ** 0.5)
    assert all(b.predicted_ms > a.predicted_ms for a, b in zip(rows, rows[1:]))


def test_sweep_rejects_negative_counts():
    with pytest.raises(ValidationError):
        sweep(STATS, [-1])


def test_measure_stages(fixture_models):
    stats = measure_stages(render_scene([SceneVehicle(0), SceneVehicle(1)]), fixture_models, repeats=3, warmup=0)
    assert len(stats.samples["vehicle"]) == 3 and len(stats.samples["lp"]) == 6
    assert stats.predict(1) == pytest.approx(stats.vehicle[0] + stats.lp[0] + stats.rec[0])
    table = format_table(stats, sweep(stats, [1, 2]))
    assert "recognition" in table and len(table.splitlines()) == 9


def test_measure_stages_needs_plates(fixture_models):
    with pytest.raises(ValidationError):
        measure_stages(render_scene([]), fixture_models, repeats=1, warmup=0)
    with pytest.raises(ValidationError):
        measure_stages(render_scene([SceneVehicle(0)]), fixture_models, repeats=0)
