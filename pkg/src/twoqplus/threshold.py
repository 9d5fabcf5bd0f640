"""Classification thresholds for the two-class system and sweep drivers."""
from __future__ import annotations

import enum
import logging
import math
import os
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field
from typing import Optional, Sequence

import numpy as np
from scipy.optimize import brentq

from . import analysis
from .analysis import DEFAULT_QUAD, CostModel, QuadratureConfig
from .workload import BoundedPareto, SizeDistribution, TrafficContext, WorkloadError, with_alpha

log = logging.getLogger(__name__)

WORKERS_ENV = "TWOQPLUS_WORKERS"


class Criterion(str, enum.Enum):
    THEOREM1 = "theorem1-sufficient"
    EXACT = "exact-ratio"


@dataclass(frozen=True)
class ThresholdResult:
    h: float
    coverage: float
    criterion: Criterion
    saturated: bool = False
    scan_points: Optional[int] = None


def theorem1_threshold(ctx: TrafficContext, cost: CostModel) -> ThresholdResult:
    """Largest H whose first-class FCFS wait does not exceed the scheduling delay.

    The wait is continuous and strictly increasing in H, so the root is
    unique and a bracketing solver suffices.
    """
    k, p = ctx.dist.min_size, ctx.dist.max_size
    t_cost = cost.t_cost
    if analysis.class1_fcfs_wait(p, ctx) <= t_cost:
        return ThresholdResult(p, 1.0, Criterion.THEOREM1, saturated=True)
    if t_cost <= 0:
        return ThresholdResult(k, 0.0, Criterion.THEOREM1)
    h = brentq(lambda x: analysis.class1_fcfs_wait(x, ctx) - t_cost, k, p, xtol=k * 1e-12, rtol=1e-13, maxiter=500)
    return ThresholdResult(h, float(ctx.dist.cdf(h)), Criterion.THEOREM1)


def exact_hmax(
    ctx: TrafficContext,
    cost: CostModel,
    scan_points: int = 200,
    rel_width: float = 1e-4,
    cfg: QuadratureConfig = DEFAULT_QUAD,
) -> ThresholdResult:
    """Largest H at which first-class FCFS is no slower on average than delayed SRPT.

    A log grid is scanned for the last point where the ratio is <= 1 and is
    followed by a point above 1; the bracket is then bisected (in log H) to
    ``rel_width``. Dips of the ratio below 1 at small H do not matter since
    only the last crossing is kept.
    """
    k, p = ctx.dist.min_size, ctx.dist.max_size
    grid = np.geomspace(k, p, scan_points)[1:]
    grid[-1] = p
    ratios = analysis.completion_ratio_profile(grid, ctx, cost, cfg)
    below = ratios <= 1.0
    if below[-1]:
        return ThresholdResult(p, 1.0, Criterion.EXACT, saturated=True, scan_points=scan_points)
    idx = np.flatnonzero(below)
    if idx.size == 0:
        # ratio > 1 right above k: only the degenerate empty class qualifies
        return ThresholdResult(k, 0.0, Criterion.EXACT, scan_points=scan_points)
    i = int(idx[-1])
    lo, hi = float(grid[i]), float(grid[i + 1])
    while hi / lo - 1.0 > rel_width:
        mid = math.sqrt(lo * hi)
        if analysis.completion_ratio(mid, ctx, cost, cfg) <= 1.0:
            lo = mid
        else:
            hi = mid
    return ThresholdResult(lo, float(ctx.dist.cdf(lo)), Criterion.EXACT, scan_points=scan_points)


SOLVERS = {Criterion.THEOREM1: theorem1_threshold, Criterion.EXACT: exact_hmax}


class Axis(str, enum.Enum):
    LOAD = "load"
    T_COST = "t_cost"
    ALPHA = "alpha"


@dataclass(frozen=True)
class SweepSpec:
    """One-dimensional sweep; ``t_cost`` values are seconds."""

    dist: SizeDistribution
    axis: Axis
    values: Sequence[float]
    load: float = 0.5
    t_cost: float = 100e-6
    link_rate: float = 1e10

    def __post_init__(self):
        object.__setattr__(self, "axis", Axis(self.axis))
        object.__setattr__(self, "values", tuple(float(v) for v in self.values))
        if not self.values:
            raise ValueError("sweep needs at least one axis value")
        ok = {
            Axis.LOAD: lambda v: 0 < v < 1,
            Axis.T_COST: lambda v: v >= 0,
            Axis.ALPHA: lambda v: 0 < v < 1,
        }[self.axis]
        bad = [v for v in self.values if not ok(v)]
        if bad:
            raise ValueError(f"{self.axis.value} values out of range: {bad}")
        if self.axis is Axis.ALPHA and not isinstance(self.dist, BoundedPareto):
            raise ValueError("alpha sweeps need a Bounded-Pareto base workload")

    def cell(self, value: float) -> tuple[TrafficContext, CostModel]:
        dist, load, t_cost = self.dist, self.load, self.t_cost
        if self.axis is Axis.LOAD:
            load = value
        elif self.axis is Axis.T_COST:
            t_cost = value
        else:
            dist = with_alpha(dist, value)
        return TrafficContext(dist, self.link_rate, load), CostModel.from_total(t_cost)


@dataclass
class SweepRow:
    axis_value: float
    result: Optional[ThresholdResult] = None
    error: Optional[str] = field(default=None)


def _solve_cell(args) -> SweepRow:
    spec, value, criterion = args
    try:
        ctx, cost = spec.cell(value)
        return SweepRow(value, SOLVERS[criterion](ctx, cost))
    except (analysis.AnalysisError, WorkloadError, ValueError, ArithmeticError) as exc:
        log.error("sweep row %s=%r failed: %s", spec.axis.value, value, exc)
        return SweepRow(value, error=str(exc))


def worker_count() -> int:
    try:
        return max(1, int(os.environ.get(WORKERS_ENV, "1")))
    except ValueError:
        return 1


def run_sweep(spec: SweepSpec, criterion: Criterion | str, workers: int | None = None) -> list[SweepRow]:
    criterion = Criterion(criterion)
    jobs = [(spec, v, criterion) for v in spec.values]
    workers = worker_count() if workers is None else workers
    if workers > 1 and len(jobs) > 1:
        with ProcessPoolExecutor(max_workers=workers) as pool:
            return list(pool.map(_solve_cell, jobs))
    return [_solve_cell(job) for job in jobs]


SWEEP_HEADER = "axis_value,h_bytes,coverage,criterion,saturated"


def format_sweep(rows: Sequence[SweepRow], criterion: Criterion | str) -> str:
    criterion = Criterion(criterion)
    lines = [SWEEP_HEADER]
    for row in rows:
        if row.result is None:
            lines.append(f"{row.axis_value!r},nan,nan,{criterion.value},error")
        else:
            r = row.result
            lines.append(
                f"{row.axis_value!r},{r.h!r},{r.coverage!r},{r.criterion.value},{str(r.saturated).lower()}"
            )
    return "\n".join(lines) + "\n"
