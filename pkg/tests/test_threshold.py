import numpy as np
import pytest

from twoqplus import analysis as an
from twoqplus import threshold as th
from twoqplus.analysis import CostModel
from twoqplus.threshold import Axis, Criterion, SweepSpec
from twoqplus.workload import PRESETS, TrafficContext, empirical_from_points

WEB = PRESETS["websearch-bp"]
DATA = PRESETS["datamining-bp"]
LOADS = [0.1, 0.2, 0.3, 0.4, 0.5, 0.6, 0.7, 0.8, 0.9]
COSTS = [2.4e-6, 20e-6, 100e-6, 1000e-6]


def ctx(d=WEB, load=0.5):
    return TrafficContext(d, 1e10, load)


@pytest.mark.parametrize("d", [WEB, DATA], ids=["web", "data"])
@pytest.mark.parametrize("t_cost", COSTS)
def test_theorem1_root_residual(d, t_cost):
    for load in (0.1, 0.5, 0.9):
        c = ctx(d, load)
        r = th.theorem1_threshold(c, CostModel.from_total(t_cost))
        if r.saturated:
            assert r.h == d.p and an.class1_fcfs_wait(d.p, c) <= t_cost
            continue
        assert an.class1_fcfs_wait(r.h, c) == pytest.approx(t_cost, rel=1e-6)
        assert r.coverage == d.cdf(r.h)
        assert r.criterion is Criterion.THEOREM1


@pytest.mark.parametrize("d", [WEB, DATA], ids=["web", "data"])
def test_theorem1_never_exceeds_exact(d):
    for load in LOADS:
        c = ctx(d, load)
        for t_cost in COSTS:
            cost = CostModel.from_total(t_cost)
            assert th.theorem1_threshold(c, cost).h <= th.exact_hmax(c, cost).h


@pytest.mark.parametrize("d", [WEB, DATA], ids=["web", "data"])
def test_exact_hmax_crossing(d):
    c = ctx(d, 0.5)
    cost = CostModel.from_total(100e-6)
    r = th.exact_hmax(c, cost)
    assert r.scan_points == 200 and not r.saturated
    assert an.completion_ratio(r.h, c, cost) <= 1.0
    assert an.completion_ratio(r.h, c, cost) == pytest.approx(1.0, abs=1e-3)
    assert an.completion_ratio(r.h * (1 + 1e-3), c, cost) > 1.0


def test_monotone_in_load_and_cost():
    for d in (WEB, DATA):
        hs = [th.theorem1_threshold(ctx(d, load), CostModel.from_total(100e-6)).h for load in LOADS]
        assert all(b < a for a, b in zip(hs, hs[1:]))
        hs = [th.theorem1_threshold(ctx(d, 0.5), CostModel.from_total(t)).h for t in COSTS]
        assert all(b > a for a, b in zip(hs, hs[1:]))


def test_saturation_and_degenerate_cost():
    c = ctx(WEB, 0.1)
    huge = CostModel.from_total(10.0)
    r = th.theorem1_threshold(c, huge)
    assert r.saturated and r.h == WEB.p and r.coverage == 1.0
    r = th.exact_hmax(c, huge)
    assert r.saturated and r.h == WEB.p
    r = th.theorem1_threshold(c, CostModel())
    assert r.h == WEB.k and r.coverage == 0.0


def test_exact_hmax_without_any_admissible_h(monkeypatch):
    monkeypatch.setattr(an, "completion_ratio_profile", lambda hs, *a: np.full(len(hs), 1.5))
    r = th.exact_hmax(ctx(WEB, 0.9), CostModel())
    assert r.h == WEB.k and r.coverage == 0.0 and not r.saturated


def test_exact_hmax_takes_last_crossing(monkeypatch):
    # ratio dips below one twice; only the upper crossing counts
    def fake(h, *a):
        return np.where((h < 1e4) | ((h > 1e5) & (h < 2e6)), 0.9, 1.1)

    monkeypatch.setattr(an, "completion_ratio_profile", lambda hs, *a: fake(np.asarray(hs)))
    monkeypatch.setattr(an, "completion_ratio", lambda h, *a: float(fake(h)))
    r = th.exact_hmax(ctx(WEB, 0.5), CostModel())
    assert r.h == pytest.approx(2e6, rel=1e-4) and r.h <= 2e6


def test_sweep_spec_validation():
    with pytest.raises(ValueError):
        SweepSpec(WEB, "load", [])
    with pytest.raises(ValueError):
        SweepSpec(WEB, "load", [0.5, 1.0])
    with pytest.raises(ValueError):
        SweepSpec(WEB, "t_cost", [-1e-6])
    with pytest.raises(ValueError):
        SweepSpec(WEB, "alpha", [1.2])
    with pytest.raises(ValueError):
        SweepSpec(WEB, "bogus", [0.5])
    emp = empirical_from_points([(1e3, 0.0), (1e6, 1.0)])
    with pytest.raises(ValueError):
        SweepSpec(emp, "alpha", [0.5])


def test_sweep_cell_construction():
    spec = SweepSpec(DATA, Axis.ALPHA, [0.6], load=0.3, t_cost=50e-6)
    c, cost = spec.cell(0.6)
    assert (c.dist.k, c.dist.p, c.dist.alpha) == (DATA.k, DATA.p, 0.6)
    assert c.load == 0.3 and cost.t_cost == pytest.approx(50e-6)
    c, cost = SweepSpec(WEB, Axis.T_COST, [2e-3]).cell(2e-3)
    assert cost.t_cost == 2e-3 and c.load == 0.5


def test_load_sweep_table_format():
    spec = SweepSpec(WEB, Axis.LOAD, LOADS)
    rows = th.run_sweep(spec, "theorem1-sufficient", workers=1)
    assert [r.axis_value for r in rows] == LOADS
    text = th.format_sweep(rows, Criterion.THEOREM1)
    lines = text.split("\n")
    assert lines[0] == th.SWEEP_HEADER
    assert text.endswith("\n") and "\r" not in text
    assert len(lines) == len(LOADS) + 2
    first = lines[1].split(",")
    assert float(first[0]) == 0.1
    assert float(first[1]) == rows[0].result.h  # full precision round-trips
    assert first[3:] == ["theorem1-sufficient", "false"]


def test_parallel_sweep_matches_serial():
    spec = SweepSpec(DATA, Axis.T_COST, [2.4e-6, 1e-3])
    serial = th.run_sweep(spec, Criterion.EXACT, workers=1)
    par = th.run_sweep(spec, Criterion.EXACT, workers=2)
    assert [r.result for r in serial] == [r.result for r in par]
    assert serial[0].result.h < serial[1].result.h


def test_sweep_records_row_errors(monkeypatch):
    real = th.exact_hmax

    def flaky(c, cost, **kw):
        if c.load == 0.3:
            raise an.AnalysisError("boom")
        return real(c, cost, **kw)

    monkeypatch.setitem(th.SOLVERS, Criterion.EXACT, flaky)
    rows = th.run_sweep(SweepSpec(WEB, Axis.LOAD, [0.2, 0.3, 0.4]), Criterion.EXACT, workers=1)
    assert rows[1].result is None and "boom" in rows[1].error
    assert rows[0].result is not None and rows[2].result is not None
    text = th.format_sweep(rows, Criterion.EXACT)
    assert text.splitlines()[2] == "0.3,nan,nan,exact-ratio,error"


def test_worker_count_env(monkeypatch):
    monkeypatch.setenv(th.WORKERS_ENV, "3")
    assert th.worker_count() == 3
    monkeypatch.setenv(th.WORKERS_ENV, "junk")
    assert th.worker_count() == 1
    monkeypatch.delenv(th.WORKERS_ENV)
    assert th.worker_count() == 1


def test_exact_scan_resolution_is_reported():
    r = th.exact_hmax(ctx(WEB, 0.5), CostModel.from_total(100e-6), scan_points=400)
    assert r.scan_points == 400
    r200 = th.exact_hmax(ctx(WEB, 0.5), CostModel.from_total(100e-6))
    assert r.h == pytest.approx(r200.h, rel=2e-4)


@pytest.mark.parametrize(
    "d,load,t_cost,h,cov",
    [
        (WEB, 0.1, 100e-6, 11.54e6, 0.943),
        (WEB, 0.5, 100e-6, 4.74e6, 0.882),
        (DATA, 0.9, 100e-6, 14.28e6, 0.97),
    ],
)
def test_theorem1_examples(d, load, t_cost, h, cov):
    r = th.theorem1_threshold(ctx(d, load), CostModel.from_total(t_cost))
    assert r.h == pytest.approx(h, rel=0.02)
    assert r.coverage == pytest.approx(cov, abs=0.005)


@pytest.mark.parametrize(
    "d,t_cost,h,cov",
    [(WEB, 100e-6, 5.72e6, 0.895), (WEB, 2.4e-6, 1.09e6, 0.764), (DATA, 1000e-6, 75.28e6, 0.986)],
)
def test_exact_examples(d, t_cost, h, cov):
    r = th.exact_hmax(ctx(d, 0.5), CostModel.from_total(t_cost))
    assert r.h == pytest.approx(h, rel=0.03)
    assert r.coverage == pytest.approx(cov, abs=0.01)


def test_alpha_sweep_examples():
    rows = th.run_sweep(SweepSpec(WEB, Axis.ALPHA, [0.125, 0.9]), Criterion.EXACT, workers=1)
    got = [(r.result.h, r.result.coverage) for r in rows]
    assert got[0][0] == pytest.approx(5.72e6, rel=0.03) and got[0][1] == pytest.approx(0.895, abs=0.01)
    assert got[1][0] == pytest.approx(2.93e6, rel=0.03) and got[1][1] == pytest.approx(0.999, abs=0.01)


def test_tcost_sweep_data_endpoints():
    vals = [v * 1e-6 for v in (2.4, 20, 50, 100, 200, 1000)]
    rows = th.run_sweep(SweepSpec(DATA, Axis.T_COST, vals), Criterion.EXACT, workers=1)
    hs = np.array([r.result.h for r in rows])
    assert np.all(np.diff(hs) > 0)
    assert hs[0] == pytest.approx(2.59e6, rel=0.03)
    assert hs[-1] == pytest.approx(75.28e6, rel=0.03)
