import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from scipy import integrate, stats

from twoqplus import workload as wl
from twoqplus.workload import BoundedPareto, TrafficContext, WorkloadError

WEB = wl.PRESETS["websearch-bp"]
DATA = wl.PRESETS["datamining-bp"]

# 30-digit mpmath quadrature of the raw Bounded-Pareto density
ORACLE = {
    ("web", "m1", WEB.p): 1938118.2691264400228,
    ("web", "m2", WEB.p): 26418644979539.73306,
    ("web", "m1", 1e6): 100602.63600955777846,
    ("data", "m1", DATA.p): 5293282.9463193486709,
    ("data", "m2", DATA.p): 2191164985943154.8309,
}
LAMBDA_WEB_HALF = 322.47774037118160365


def _log_grid(d, n=60):
    return np.geomspace(d.k, d.p, n)


@pytest.mark.parametrize("d", [WEB, DATA], ids=["web", "data"])
def test_pdf_zero_outside_support(d):
    assert d.pdf(d.k * 0.999) == 0.0
    assert d.pdf(d.p * 1.001) == 0.0
    assert d.pdf(d.k) > 0 and d.pdf(d.p) > 0


@pytest.mark.parametrize("d", [WEB, DATA], ids=["web", "data"])
def test_pdf_integrates_to_one(d):
    pts = _log_grid(d, 40)
    total = sum(integrate.quad(d.pdf, a, b, epsabs=0, epsrel=1e-12)[0] for a, b in zip(pts[:-1], pts[1:]))
    assert abs(total - 1.0) < 1e-9


@pytest.mark.parametrize("d", [WEB, DATA], ids=["web", "data"])
def test_pdf_is_cdf_derivative(d):
    for x in _log_grid(d, 50)[1:-1]:
        h = x * 1e-6
        fd = (d.cdf(x + h) - d.cdf(x - h)) / (2 * h)
        assert fd == pytest.approx(d.pdf(x), rel=1e-6)


def test_cdf_endpoints_and_reference_point():
    assert WEB.cdf(WEB.k) == 0.0
    assert WEB.cdf(WEB.p) == 1.0
    assert WEB.cdf(1.0) == 0.0
    assert WEB.cdf(1e12) == 1.0
    assert WEB.cdf(11.54e6) == pytest.approx(0.943, abs=0.002)


def test_moments_match_frozen_oracle():
    for (name, kind, x), ref in ORACLE.items():
        d = WEB if name == "web" else DATA
        got = d.partial_moment(x, 1 if kind == "m1" else 2)
        assert got == pytest.approx(ref, rel=1e-8), (name, kind, x)


@pytest.mark.parametrize("d", [WEB, DATA], ids=["web", "data"])
@pytest.mark.parametrize("order", [1, 2])
def test_moments_match_quadrature_on_grid(d, order):
    grid = _log_grid(d, 55)
    running = 0.0
    for a, b in zip(grid[:-1], grid[1:]):
        running += integrate.quad(lambda t: t**order * d.pdf(t), a, b, epsabs=0, epsrel=1e-12)[0]
        assert d.partial_moment(b, order) == pytest.approx(running, rel=1e-8)


@pytest.mark.parametrize("d", [WEB, DATA], ids=["web", "data"])
def test_moments_monotone_and_bounded(d):
    xs = _log_grid(d, 80)
    m1 = d.partial_moment(xs, 1)
    m2 = d.partial_moment(xs, 2)
    assert np.all(np.diff(m1) > 0) and np.all(np.diff(m2) > 0)
    assert np.all(m2 <= xs * m1 * (1 + 1e-12))
    assert d.partial_moment(d.k, 1) == 0.0


def test_moment_order_rejected():
    with pytest.raises(WorkloadError):
        WEB.partial_moment(1e6, 3)


def test_bp_parameter_validation():
    with pytest.raises(WorkloadError):
        BoundedPareto(10, 5, 0.5)
    with pytest.raises(WorkloadError):
        BoundedPareto(1, 5, 1.0)
    with pytest.raises(WorkloadError):
        BoundedPareto(0, 5, 0.5)


def test_context_arrival_rate_and_linearity():
    ctx = wl.make_context(WEB, 1e10, 0.5)
    assert ctx.arrival_rate == pytest.approx(LAMBDA_WEB_HALF, rel=1e-12)
    assert wl.make_context(WEB, 1e10, 0.25).arrival_rate == pytest.approx(LAMBDA_WEB_HALF / 2, rel=1e-12)
    assert wl.make_context(WEB, 2e10, 0.5).arrival_rate == pytest.approx(2 * LAMBDA_WEB_HALF, rel=1e-12)
    for x in _log_grid(WEB, 20):
        assert ctx.m1_time(x) == pytest.approx(8e-10 * WEB.partial_moment(x, 1), rel=1e-14)
        assert ctx.m2_time(x) == pytest.approx(64e-20 * WEB.partial_moment(x, 2), rel=1e-14)
    assert ctx.service_time(1500) == pytest.approx(1.2e-6)


@pytest.mark.parametrize("d", [WEB, DATA], ids=["web", "data"])
@pytest.mark.parametrize("load", [0.1, 0.5, 0.9])
def test_partial_load_reaches_total_load(d, load):
    ctx = TrafficContext(d, 1e10, load)
    assert wl.partial_load(d.p, ctx) == pytest.approx(load, rel=1e-12)
    assert wl.partial_load(d.k, ctx) == 0.0


@pytest.mark.parametrize("load", [0.0, 1.0, -0.1, 1.5])
def test_context_rejects_unstable_load(load):
    with pytest.raises(WorkloadError):
        TrafficContext(WEB, 1e10, load)


def test_sampling_matches_cdf():
    rng = np.random.default_rng(7)
    xs = WEB.sample(rng, 10**6)
    assert xs.min() >= WEB.k and xs.max() <= WEB.p
    assert stats.kstest(xs, WEB.cdf).statistic < 0.005
    assert WEB.ppf(0.0) == WEB.k and WEB.ppf(1.0) == pytest.approx(WEB.p, rel=1e-12)


def test_sampling_deterministic():
    a = [wl.sample_size(DATA, np.random.default_rng(3)) for _ in range(3)]
    assert a[0] == a[1] == a[2]
    assert np.array_equal(DATA.sample(np.random.default_rng(5), 100), DATA.sample(np.random.default_rng(5), 100))


def test_module_level_wrappers():
    assert wl.pdf(1e6, WEB) == WEB.pdf(1e6)
    assert wl.cdf(1e6, WEB) == WEB.cdf(1e6)
    assert wl.partial_moment(1e6, 1, WEB) == WEB.partial_moment(1e6, 1)


def test_presets_and_alpha_family():
    assert wl.preset("websearch-bp") is WEB
    with pytest.raises(WorkloadError):
        wl.preset("nope")
    d = wl.with_alpha(WEB, 0.9)
    assert (d.k, d.p, d.alpha) == (WEB.k, WEB.p, 0.9)
    # share of flows below 100 KB in the synthetic families
    assert wl.with_alpha(DATA, 0.01).cdf(100e3) == pytest.approx(0.45, abs=0.01)
    assert wl.with_alpha(WEB, 0.125).cdf(100e3) == pytest.approx(0.52, abs=0.01)
    assert wl.with_alpha(WEB, 0.9).cdf(100e3) == pytest.approx(0.958, abs=0.01)


# empirical tables


def test_empirical_uniform_moments():
    k, p = 10.0, 1000.0
    d = wl.empirical_from_points([(k, 0.0), (p, 1.0)])
    assert d.partial_moment(p, 1) == pytest.approx((k + p) / 2, rel=1e-14)
    assert d.partial_moment(p, 2) == pytest.approx((k * k + k * p + p * p) / 3, rel=1e-14)
    assert d.cdf(505.0) == pytest.approx(0.5)
    assert d.pdf(500.0) == pytest.approx(1 / (p - k))
    assert d.pdf(5.0) == 0.0


@pytest.mark.parametrize(
    "points",
    [
        [(10, 0.0), (10, 1.0)],
        [(10, 0.0), (20, 0.7), (15, 1.0)],
        [(10, 0.0), (20, 0.7), (30, 0.6), (40, 1.0)],
        [(10, 0.1), (20, 1.0)],
        [(10, 0.0), (20, 0.9)],
        [(0, 0.0), (20, 1.0)],
        [(10, 0.0)],
    ],
)
def test_empirical_rejects_bad_tables(points):
    with pytest.raises(WorkloadError):
        wl.empirical_from_points(points)


def test_empirical_table_of_bp_reproduces_moments():
    xs = np.geomspace(WEB.k, WEB.p, 10**4)
    qs = WEB.cdf(xs)
    qs[0], qs[-1] = 0.0, 1.0
    d = wl.empirical_from_points(zip(xs, qs))
    for order in (1, 2):
        assert d.partial_moment(d.max_size, order) == pytest.approx(WEB.partial_moment(WEB.p, order), rel=1e-3)


def test_empirical_file_round_trip(tmp_path):
    d = wl.empirical_from_points([(100, 0.0), (1e3, 0.3), (1e4, 0.3), (1e6, 1.0)])
    path = tmp_path / "cdf.csv"
    wl.save_empirical(d, path)
    back = wl.load_empirical(path)
    assert back.sizes == d.sizes and back.probs == d.probs
    assert wl.resolve_workload(str(path)).sizes == d.sizes
    # a flat cdf stretch carries no mass
    assert back.ppf(0.3) == pytest.approx(1e3)


def test_empirical_file_errors(tmp_path):
    bad = tmp_path / "bad.csv"
    bad.write_text("size,p\n1,0\n2,1\n")
    with pytest.raises(WorkloadError):
        wl.load_empirical(bad)
    bad.write_text("size_bytes,cdf\n1,0\nx,1\n")
    with pytest.raises(WorkloadError, match=":3"):
        wl.load_empirical(bad)
    with pytest.raises(WorkloadError):
        wl.resolve_workload(str(tmp_path / "missing.csv"))


@st.composite
def _tables(draw):
    n = draw(st.integers(2, 12))
    steps = draw(st.lists(st.floats(0.01, 10.0), min_size=n - 1, max_size=n - 1))
    masses = draw(st.lists(st.floats(0.0, 1.0), min_size=n - 1, max_size=n - 1))
    if sum(masses) == 0:
        masses[0] = 1.0
    sizes = 1.0 + np.concatenate([[0.0], np.cumsum(steps)])
    probs = np.concatenate([[0.0], np.cumsum(masses) / sum(masses)])
    probs[-1] = 1.0
    return wl.empirical_from_points(zip(sizes, probs))


@settings(max_examples=60, deadline=None)
@given(_tables(), st.floats(0.0, 1.0))
def test_empirical_properties(d, u):
    x = d.ppf(u)
    assert d.min_size <= x <= d.max_size
    assert d.cdf(x) == pytest.approx(u, abs=1e-9)
    grid = np.linspace(d.min_size, d.max_size, 50)
    m1 = d.partial_moment(grid, 1)
    assert np.all(np.diff(m1) >= -1e-12)
    mean = d.partial_moment(d.max_size, 1)
    assert d.min_size * (1 - 1e-12) <= mean <= d.max_size * (1 + 1e-12)
    assert d.partial_moment(d.max_size, 2) >= mean**2 * (1 - 1e-9)


@settings(max_examples=40, deadline=None)
@given(st.floats(1.0, 1e4), st.floats(1.5, 1e4), st.floats(0.01, 0.99))
def test_bp_ppf_inverts_cdf(k, ratio, alpha):
    d = BoundedPareto(k, k * ratio, alpha)
    for u in (0.0, 0.1, 0.5, 0.9, 1.0):
        assert d.cdf(d.ppf(u)) == pytest.approx(u, abs=1e-9)
    mean = d.partial_moment(d.p, 1)
    assert d.k <= mean <= d.p or math.isclose(mean, d.k, rel_tol=1e-9)
