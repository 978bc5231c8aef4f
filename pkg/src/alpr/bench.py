"""Per-stage timing and the additive cost model t(n) = t_vehicle + n * (t_lp + t_rec)."""

from __future__ import annotations

import statistics
import time
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

from .errors import ValidationError
from .pipeline import Models, PipelineConfig, run_pipeline


def _mean_std(xs: Sequence[float]) -> tuple[float, float]:
    if not xs:
        return 0.0, 0.0
    return statistics.fmean(xs), statistics.stdev(xs) if len(xs) > 1 else 0.0


@dataclass
class StageStats:
    vehicle: tuple[float, float]  # mean, std in ms
    lp: tuple[float, float]
    rec: tuple[float, float]
    repeats: int
    samples: dict[str, list[float]] = field(default_factory=dict)

    def predict(self, n: int) -> float:
        return self.vehicle[0] + n * (self.lp[0] + self.rec[0])

    def predict_std(self, n: int) -> float:
        # stage noise treated as independent
        return (self.vehicle[1] ** 2 + n * (self.lp[1] ** 2 + self.rec[1] ** 2)) ** 0.5


def measure_stages(
    image: np.ndarray,
    models: Models,
    config: PipelineConfig | None = None,
    repeats: int = 20,
    warmup: int = 2,
) -> StageStats:
    """Run the pipeline ``warmup + repeats`` times and pool the per-stage timings."""
    if repeats < 1:
        raise ValidationError("need at least one timed repetition")
    config = config or PipelineConfig()
    for _ in range(warmup):
        run_pipeline(image, models, config)
    veh, lp, rec = [], [], []
    for _ in range(repeats):
        t = run_pipeline(image, models, config).timings
        veh.append(t.vehicle_ms)
        lp += t.lp_ms
        rec += t.ocr_ms
    if not lp or not rec:
        raise ValidationError("benchmark image produced no plate reads; per-vehicle stages were not timed")
    return StageStats(_mean_std(veh), _mean_std(lp), _mean_std(rec), repeats,
                      {"vehicle": veh, "lp": lp, "rec": rec})


@dataclass
class SweepRow:
    vehicles: int
    predicted_ms: float
    predicted_std: float
    measured_ms: float | None = None
    measured_std: float | None = None

    @property
    def fps(self) -> float:
        return 1000.0 / self.predicted_ms if self.predicted_ms > 0 else float("inf")


def sweep(stats: StageStats, counts: Sequence[int]) -> list[SweepRow]:
    if any(n < 0 for n in counts):
        raise ValidationError("vehicle counts must be non-negative")
    return [SweepRow(n, stats.predict(n), stats.predict_std(n)) for n in counts]


def measure_totals(
    image: np.ndarray, models: Models, config: PipelineConfig | None = None, repeats: int = 20, warmup: int = 2
) -> tuple[float, float, int]:
    """Mean/std of the summed stage time on one image, and its vehicle count."""
    config = config or PipelineConfig()
    for _ in range(warmup):
        run_pipeline(image, models, config)
    totals, n = [], 0
    for _ in range(repeats):
        out = run_pipeline(image, models, config)
        totals.append(out.timings.total_ms)
        n = len(out.results)
    m, s = _mean_std(totals)
    return m, s, n


def format_table(stats: StageStats, rows: Sequence[SweepRow]) -> str:
    lines = [
        f"{'stage':<16}{'mean ms':>10}{'std ms':>10}",
        f"{'vehicle':<16}{stats.vehicle[0]:>10.3f}{stats.vehicle[1]:>10.3f}",
        f"{'lp + layout':<16}{stats.lp[0]:>10.3f}{stats.lp[1]:>10.3f}",
        f"{'recognition':<16}{stats.rec[0]:>10.3f}{stats.rec[1]:>10.3f}",
        f"({stats.repeats} timed repetitions)",
        "",
        f"{'vehicles':>8}{'additive ms':>14}{'± std':>9}{'FPS':>9}{'measured ms':>14}{'± std':>9}",
    ]
    for r in rows:
        meas = f"{r.measured_ms:>14.3f}{r.measured_std:>9.3f}" if r.measured_ms is not None else f"{'-':>14}{'':>9}"
        lines.append(f"{r.vehicles:>8}{r.predicted_ms:>14.3f}{r.predicted_std:>9.3f}{r.fps:>9.1f}{meas}")
    return "\n".join(lines)


def fixture_sweep(counts: Sequence[int], repeats: int = 20, warmup: int = 2, config=None):
    """Measured vs additive totals on synthetic scenes with n vehicles (n <= 4)."""
    from .synthetic import VEHICLE_COLS, SceneVehicle, fixture_models, render_scene

    models = fixture_models()
    config = config or PipelineConfig()
    if any(n < 1 or n > VEHICLE_COLS for n in counts):
        raise ValidationError(f"fixture scenes hold 1..{VEHICLE_COLS} vehicles")
    stats = measure_stages(render_scene([SceneVehicle(0)]), models, config, repeats, warmup)
    rows = sweep(stats, counts)
    for row in rows:
        scene = render_scene([SceneVehicle(c) for c in range(row.vehicles)])
        m, s, n = measure_totals(scene, models, config, repeats, warmup)
        if n != row.vehicles:
            raise ValidationError(f"fixture scene with {row.vehicles} vehicles yielded {n}")
        row.measured_ms, row.measured_std = m, s
    return stats, rows
