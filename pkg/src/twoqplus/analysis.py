"""Mean-value analysis of M/G/1 under SRPT (with and without scheduling
delay) and FCFS, plus the class-restricted quantities of the two-class
(2QPlus) system.

Every integral is taken in the size domain with the Jacobian ``8/link_rate``
folded in, which is the same as integrating over service time.
"""
from __future__ import annotations

import warnings
from dataclasses import dataclass

import numpy as np
from scipy import integrate

from .workload import TrafficContext


class AnalysisError(ArithmeticError):
    pass


@dataclass(frozen=True)
class CostModel:
    """Scheduling delays in seconds: gather (T_g), compute (T_c), respond (T_r)."""

    t_gather: float = 0.0
    t_compute: float = 0.0
    t_respond: float = 0.0

    def __post_init__(self):
        for name in ("t_gather", "t_compute", "t_respond"):
            if not getattr(self, name) >= 0:
                raise ValueError(f"{name} must be >= 0, got {getattr(self, name)}")

    @property
    def t1(self) -> float:
        return self.t_gather + self.t_compute

    @property
    def t2(self) -> float:
        return self.t_respond

    @property
    def t_cost(self) -> float:
        return self.t1 + self.t2

    @classmethod
    def from_total(cls, t_cost: float) -> "CostModel":
        """Split a total delay evenly between the request and response legs."""
        return cls(t_gather=t_cost / 2.0, t_respond=t_cost / 2.0)


ZERO_COST = CostModel()


@dataclass(frozen=True)
class MeanValue:
    waiting: float
    residence: float

    @property
    def completion(self) -> float:
        return self.waiting + self.residence


@dataclass(frozen=True)
class QuadratureConfig:
    rtol: float = 1e-8
    limit: int = 200
    log_spacing: bool = True
    per_decade: int = 4

    def __post_init__(self):
        if not self.rtol > 0:
            raise ValueError("rtol must be positive")


DEFAULT_QUAD = QuadratureConfig()


def _quad(func, a: float, b: float, cfg: QuadratureConfig) -> float:
    if b <= a:
        return 0.0
    if b - a <= 1e-9 * abs(b):
        # sliver between nearly coincident nodes; QUADPACK's error estimate is noise here
        return float(func(0.5 * (a + b))) * (b - a)
    with warnings.catch_warnings():
        warnings.simplefilter("ignore", integrate.IntegrationWarning)
        out = integrate.quad(func, a, b, epsabs=0.0, epsrel=cfg.rtol, limit=cfg.limit, full_output=1)
    value, abserr = out[0], out[1]
    if len(out) > 3 and abserr > 10 * cfg.rtol * abs(value) + 1e-300:
        raise AnalysisError(
            f"quadrature did not converge on [{a:.6g}, {b:.6g}]: value={value:.6g}, "
            f"abserr={abserr:.3g}, rtol={cfg.rtol:g} ({out[3].splitlines()[0]})"
        )
    return value


def _nodes(ctx: TrafficContext, lo: float, hi: float, cfg: QuadratureConfig) -> np.ndarray:
    if cfg.log_spacing:
        return ctx.dist.breakpoints(lo, hi, cfg.per_decade)
    return np.array([lo, hi]) if hi > lo else np.array([lo, lo])


def _check_size(x: float, ctx: TrafficContext, what: str = "x") -> None:
    k, p = ctx.dist.min_size, ctx.dist.max_size
    if not (k * (1 - 1e-12) <= x <= p * (1 + 1e-12)):
        raise AnalysisError(f"{what}={x!r} outside the support [{k!r}, {p!r}]")


def _slowdown(ctx: TrafficContext):
    """1 / (1 - rho(y)), the residence integrand per unit service time."""
    lam, spb, dist = ctx.arrival_rate, ctx.seconds_per_byte, ctx.dist
    return lambda y: 1.0 / (1.0 - lam * spb * dist.partial_moment(y, 1))


def _ideal_wait(x, ctx: TrafficContext) -> float:
    t = ctx.seconds_per_byte * x
    rho_x = ctx.partial_load(x)
    return ctx.arrival_rate * (ctx.m2_time(x) + t * t * (1.0 - ctx.dist.cdf(x))) / (2.0 * (1.0 - rho_x) ** 2)


def srpt_ideal_wait(x: float, ctx: TrafficContext) -> float:
    _check_size(x, ctx)
    return float(_ideal_wait(x, ctx))


def srpt_ideal_residence(x: float, ctx: TrafficContext, cfg: QuadratureConfig = DEFAULT_QUAD) -> float:
    """Mean time from first service to completion for a size-``x`` flow.

    Below the smallest size the load is zero and the integrand is 1, so that
    stretch contributes exactly the transmission time of ``k`` bytes.
    """
    _check_size(x, ctx)
    k = ctx.dist.min_size
    g = _slowdown(ctx)
    nodes = _nodes(ctx, k, x, cfg)
    tail = sum(_quad(g, a, b, cfg) for a, b in zip(nodes[:-1], nodes[1:]))
    return ctx.seconds_per_byte * (k + tail)


def srpt_completion(
    x: float, ctx: TrafficContext, cost: CostModel = ZERO_COST, cfg: QuadratureConfig = DEFAULT_QUAD
) -> MeanValue:
    return MeanValue(
        waiting=srpt_ideal_wait(x, ctx) + cost.t_cost,
        residence=srpt_ideal_residence(x, ctx, cfg),
    )


def fcfs_mean(ctx: TrafficContext) -> MeanValue:
    p = ctx.dist.max_size
    wait = ctx.arrival_rate * ctx.m2_time(p) / (2.0 * (1.0 - ctx.load))
    return MeanValue(waiting=float(wait), residence=float(ctx.m1_time(p)))


def fcfs_completion_for_size(x: float, ctx: TrafficContext) -> float:
    _check_size(x, ctx)
    return fcfs_mean(ctx).waiting + ctx.seconds_per_byte * x


def class1_fcfs_wait(h: float, ctx: TrafficContext) -> float:
    """Mean FCFS wait of flows smaller than ``h`` when they have strict priority.

    The class arrival rate is lambda*F(h) and its conditional second moment
    is m2(h)/F(h); the F(h) factors cancel.
    """
    _check_size(h, ctx, "H")
    return float(ctx.arrival_rate * ctx.m2_time(h) / (2.0 * (1.0 - ctx.partial_load(h))))


def class1_fcfs_completion(h: float, ctx: TrafficContext) -> MeanValue:
    fh = ctx.dist.cdf(h)
    if fh <= 0:
        raise AnalysisError(f"first class is empty at H={h!r} (F(H)=0)")
    return MeanValue(waiting=class1_fcfs_wait(h, ctx), residence=float(ctx.m1_time(h) / fh))


def _srpt_cumulative(nodes: np.ndarray, ctx: TrafficContext, cfg: QuadratureConfig):
    """Cumulative integrals of ideal-SRPT wait and residence against f over ``[k, node]``.

    Within a cell [a, b], R(x) = R(a) + spb * int_a^x g, so by Fubini
    int_a^b R f dx = R(a) (F(b) - F(a)) + spb * int_a^b g(y) (F(b) - F(y)) dy.
    Accumulating cell by cell keeps the nested integral one-dimensional and
    avoids cancellation between large global terms.
    """
    dist, spb = ctx.dist, ctx.seconds_per_byte
    g = _slowdown(ctx)
    wf = lambda x: _ideal_wait(x, ctx) * dist.pdf(x)  # noqa: E731
    n = len(nodes)
    cum_w = np.zeros(n)
    cum_r = np.zeros(n)
    res = np.zeros(n)
    res[0] = spb * nodes[0]
    for i in range(1, n):
        a, b = nodes[i - 1], nodes[i]
        fb = dist.cdf(b)
        cum_w[i] = cum_w[i - 1] + _quad(wf, a, b, cfg)
        inner = _quad(lambda y: g(y) * (fb - dist.cdf(y)), a, b, cfg)
        cum_r[i] = cum_r[i - 1] + res[i - 1] * (fb - dist.cdf(a)) + spb * inner
        res[i] = res[i - 1] + spb * _quad(g, a, b, cfg)
    return cum_w, cum_r, res


def class1_srpt_profile(
    hs, ctx: TrafficContext, cost: CostModel = ZERO_COST, cfg: QuadratureConfig = DEFAULT_QUAD
) -> np.ndarray:
    """Mean delayed-SRPT completion of flows below each threshold in ``hs``."""
    hs = np.asarray(hs, dtype=float)
    for h in hs.ravel():
        _check_size(h, ctx, "H")
    k = ctx.dist.min_size
    hs_c = np.clip(hs, k, ctx.dist.max_size)
    nodes = np.unique(np.concatenate([_nodes(ctx, k, float(hs_c.max()), cfg), hs_c.ravel(), [k]]))
    cum_w, cum_r, _ = _srpt_cumulative(nodes, ctx, cfg)
    idx = np.searchsorted(nodes, hs_c)
    fh = ctx.dist.cdf(hs_c)
    if np.any(fh <= 0):
        raise AnalysisError("first class is empty (F(H)=0) for some requested H")
    return cost.t_cost + (cum_w[idx] + cum_r[idx]) / fh


def _class1_srpt_nested(h: float, ctx: TrafficContext, cost: CostModel, cfg: QuadratureConfig) -> float:
    dist = ctx.dist
    k = dist.min_size
    integrand = lambda x: srpt_completion(x, ctx, cost, cfg).completion * dist.pdf(x)  # noqa: E731
    nodes = _nodes(ctx, k, h, cfg)
    total = sum(_quad(integrand, a, b, cfg) for a, b in zip(nodes[:-1], nodes[1:]))
    return total / dist.cdf(h)


def class1_srpt_completion(
    h: float,
    ctx: TrafficContext,
    cost: CostModel = ZERO_COST,
    cfg: QuadratureConfig = DEFAULT_QUAD,
    nested: bool = False,
) -> float:
    """Mean delayed-SRPT completion time of flows smaller than ``h``.

    ``nested=True`` integrates the per-size completion directly, calling the
    residence quadrature inside the outer one. It is slow and exists to
    check the default path.
    """
    _check_size(h, ctx, "H")
    if ctx.dist.cdf(h) <= 0:
        raise AnalysisError(f"first class is empty at H={h!r} (F(H)=0)")
    if nested:
        return _class1_srpt_nested(h, ctx, cost, cfg)
    return float(class1_srpt_profile([h], ctx, cost, cfg)[0])


def srpt_mean(ctx: TrafficContext, cost: CostModel = ZERO_COST, cfg: QuadratureConfig = DEFAULT_QUAD) -> float:
    return class1_srpt_completion(ctx.dist.max_size, ctx, cost, cfg)


def completion_ratio(
    h: float, ctx: TrafficContext, cost: CostModel = ZERO_COST, cfg: QuadratureConfig = DEFAULT_QUAD
) -> float:
    return class1_fcfs_completion(h, ctx).completion / class1_srpt_completion(h, ctx, cost, cfg)


def completion_ratio_profile(
    hs, ctx: TrafficContext, cost: CostModel = ZERO_COST, cfg: QuadratureConfig = DEFAULT_QUAD
) -> np.ndarray:
    hs = np.asarray(hs, dtype=float)
    fcfs = np.array([class1_fcfs_completion(h, ctx).completion for h in hs])
    return fcfs / class1_srpt_profile(hs, ctx, cost, cfg)
