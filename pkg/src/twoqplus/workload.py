"""Flow-size distributions and the traffic context built on top of them.

Sizes are bytes, time is seconds and link rates are bits/second.  The
conversion from a flow size to its service time lives only in
:class:`TrafficContext`.
"""
from __future__ import annotations

import csv
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable, Sequence, Union

import numpy as np

KB = 1e3
MB = 1e6


class WorkloadError(ValueError):
    pass


@dataclass(frozen=True)
class BoundedPareto:
    """Bounded-Pareto law on ``[k, p]`` with shape ``alpha`` in (0, 1)."""

    k: float
    p: float
    alpha: float

    def __post_init__(self):
        if not (self.k > 0 and self.p > self.k):
            raise WorkloadError(f"need 0 < k < p, got k={self.k}, p={self.p}")
        if not 0 < self.alpha < 1:
            raise WorkloadError(f"alpha must lie in (0, 1), got {self.alpha}")

    @property
    def min_size(self) -> float:
        return self.k

    @property
    def max_size(self) -> float:
        return self.p

    @property
    def _norm(self) -> float:
        return 1.0 - (self.k / self.p) ** self.alpha

    def pdf(self, x):
        x = np.asarray(x, dtype=float)
        a = self.alpha
        inside = (x >= self.k) & (x <= self.p)
        xs = np.where(inside, x, self.k)
        out = np.where(inside, a * self.k**a / self._norm * xs ** (-a - 1.0), 0.0)
        return out if out.ndim else float(out)

    def cdf(self, x):
        x = np.clip(np.asarray(x, dtype=float), self.k, self.p)
        out = (1.0 - (self.k / x) ** self.alpha) / self._norm
        out = np.clip(out, 0.0, 1.0)
        return out if out.ndim else float(out)

    def partial_moment(self, x, order: int):
        # integral of t^r * c * t^(-a-1) over [k, x]; r - a never hits 0 for 0 < a < 1
        if order not in (1, 2):
            raise WorkloadError(f"order must be 1 or 2, got {order}")
        a = self.alpha
        e = order - a
        c = a * self.k**a / self._norm
        x = np.clip(np.asarray(x, dtype=float), self.k, self.p)
        out = c * (x**e - self.k**e) / e
        return out if out.ndim else float(out)

    def ppf(self, u):
        u = np.clip(np.asarray(u, dtype=float), 0.0, 1.0)
        out = self.k * (1.0 - u * self._norm) ** (-1.0 / self.alpha)
        out = np.clip(out, self.k, self.p)
        return out if out.ndim else float(out)

    def breakpoints(self, lo: float, hi: float, per_decade: int = 4) -> np.ndarray:
        """Log-spaced subdivision of ``[lo, hi]`` for heavy-tailed integrands."""
        lo, hi = max(lo, self.k), min(hi, self.p)
        if hi <= lo:
            return np.array([lo, lo])
        n = max(2, int(math.ceil(math.log10(hi / lo) * per_decade)) + 1)
        pts = np.geomspace(lo, hi, n)
        pts[0], pts[-1] = lo, hi
        return pts

    def sample(self, rng: np.random.Generator, n: int | None = None):
        return self.ppf(rng.random(n))


@dataclass(frozen=True)
class EmpiricalDistribution:
    """Tabulated CDF with piecewise-linear interpolation between points."""

    sizes: tuple
    probs: tuple
    _dens: np.ndarray = field(init=False, repr=False, compare=False)
    _cum1: np.ndarray = field(init=False, repr=False, compare=False)
    _cum2: np.ndarray = field(init=False, repr=False, compare=False)

    def __post_init__(self):
        x = np.asarray(self.sizes, dtype=float)
        q = np.asarray(self.probs, dtype=float)
        if x.ndim != 1 or x.size < 2 or x.size != q.size:
            raise WorkloadError("need at least two (size, cdf) points")
        if not np.all(np.isfinite(x)) or x[0] <= 0:
            raise WorkloadError("sizes must be finite and positive")
        if np.any(np.diff(x) <= 0):
            raise WorkloadError("sizes must be strictly increasing")
        if np.any(np.diff(q) < 0):
            raise WorkloadError("cdf values must be non-decreasing")
        if q[0] != 0.0 or q[-1] != 1.0:
            raise WorkloadError("cdf must start at 0 and end at 1")
        dens = np.diff(q) / np.diff(x)
        seg1 = dens * (x[1:] ** 2 - x[:-1] ** 2) / 2.0
        seg2 = dens * (x[1:] ** 3 - x[:-1] ** 3) / 3.0
        object.__setattr__(self, "_dens", dens)
        object.__setattr__(self, "_cum1", np.concatenate([[0.0], np.cumsum(seg1)]))
        object.__setattr__(self, "_cum2", np.concatenate([[0.0], np.cumsum(seg2)]))

    @property
    def min_size(self) -> float:
        return float(self.sizes[0])

    @property
    def max_size(self) -> float:
        return float(self.sizes[-1])

    def _segment(self, x: np.ndarray) -> np.ndarray:
        xs = np.asarray(self.sizes)
        return np.clip(np.searchsorted(xs, x, side="right") - 1, 0, len(xs) - 2)

    def pdf(self, x):
        x = np.asarray(x, dtype=float)
        inside = (x >= self.sizes[0]) & (x <= self.sizes[-1])
        out = np.where(inside, self._dens[self._segment(x)], 0.0)
        return out if out.ndim else float(out)

    def cdf(self, x):
        out = np.interp(np.asarray(x, dtype=float), self.sizes, self.probs)
        return out if out.ndim else float(out)

    def partial_moment(self, x, order: int):
        if order == 1:
            cum = self._cum1
        elif order == 2:
            cum = self._cum2
        else:
            raise WorkloadError(f"order must be 1 or 2, got {order}")
        x = np.clip(np.asarray(x, dtype=float), self.sizes[0], self.sizes[-1])
        i = self._segment(x)
        lo = np.asarray(self.sizes)[i]
        r = order + 1
        out = cum[i] + self._dens[i] * (x**r - lo**r) / r
        return out if out.ndim else float(out)

    def ppf(self, u):
        # generalized inverse inf{x : F(x) >= u}; flat cdf stretches map to their left end
        u = np.clip(np.asarray(u, dtype=float), 0.0, 1.0)
        xs, qs = np.asarray(self.sizes), np.asarray(self.probs)
        i = np.clip(np.searchsorted(qs, u, side="left"), 1, len(qs) - 1)
        dq = qs[i] - qs[i - 1]
        frac = np.where(dq > 0, (u - qs[i - 1]) / np.where(dq > 0, dq, 1.0), 0.0)
        out = xs[i - 1] + np.clip(frac, 0.0, 1.0) * (xs[i] - xs[i - 1])
        return out if out.ndim else float(out)

    def breakpoints(self, lo: float, hi: float, per_decade: int = 4) -> np.ndarray:
        lo, hi = max(lo, self.min_size), min(hi, self.max_size)
        if hi <= lo:
            return np.array([lo, lo])
        xs = np.asarray(self.sizes)
        inner = xs[(xs > lo) & (xs < hi)]
        n = max(2, int(math.ceil(math.log10(hi / lo) * per_decade)) + 1)
        return np.unique(np.concatenate([[lo, hi], inner, np.geomspace(lo, hi, n)]))

    def sample(self, rng: np.random.Generator, n: int | None = None):
        return self.ppf(rng.random(n))


SizeDistribution = Union[BoundedPareto, EmpiricalDistribution]

PRESETS = {
    "websearch-bp": BoundedPareto(k=3 * KB, p=29.2 * MB, alpha=0.125),
    "datamining-bp": BoundedPareto(k=100.0, p=973.34 * MB, alpha=0.26),
}


def preset(name: str) -> BoundedPareto:
    try:
        return PRESETS[name]
    except KeyError:
        raise WorkloadError(f"unknown workload preset {name!r}; known: {sorted(PRESETS)}") from None


def with_alpha(dist: BoundedPareto, alpha: float) -> BoundedPareto:
    """Same support, different shape (synthetic workload families)."""
    return BoundedPareto(k=dist.k, p=dist.p, alpha=alpha)


def empirical_from_points(points: Iterable[Sequence[float]]) -> EmpiricalDistribution:
    pts = [(float(s), float(c)) for s, c in points]
    if not pts:
        raise WorkloadError("empty point list")
    sizes, probs = zip(*pts)
    return EmpiricalDistribution(sizes=tuple(sizes), probs=tuple(probs))


def load_empirical(path: str | Path) -> EmpiricalDistribution:
    """Read a ``size_bytes,cdf`` table (header required)."""
    with open(path, newline="") as fh:
        reader = csv.reader(fh)
        header = next(reader, None)
        if header is None or [h.strip() for h in header] != ["size_bytes", "cdf"]:
            raise WorkloadError(f"{path}: expected header 'size_bytes,cdf', got {header}")
        pts = []
        for lineno, row in enumerate(reader, start=2):
            if not row or not "".join(row).strip():
                continue
            if len(row) != 2:
                raise WorkloadError(f"{path}:{lineno}: expected two columns")
            try:
                pts.append((float(row[0]), float(row[1])))
            except ValueError as exc:
                raise WorkloadError(f"{path}:{lineno}: {exc}") from None
    return empirical_from_points(pts)


def save_empirical(dist: EmpiricalDistribution, path: str | Path) -> None:
    with open(path, "w", newline="") as fh:
        fh.write("size_bytes,cdf\n")
        for s, c in zip(dist.sizes, dist.probs):
            fh.write(f"{s!r},{c!r}\n")


def resolve_workload(spec: str) -> SizeDistribution:
    """Preset name or path to an empirical CDF file."""
    if spec in PRESETS:
        return PRESETS[spec]
    if Path(spec).is_file():
        return load_empirical(spec)
    raise WorkloadError(f"{spec!r} is neither a preset ({', '.join(PRESETS)}) nor a readable file")


@dataclass(frozen=True)
class TrafficContext:
    dist: SizeDistribution
    link_rate: float
    load: float

    def __post_init__(self):
        if not 0 < self.load < 1:
            raise WorkloadError(f"load must lie in (0, 1) for a stable queue, got {self.load}")
        if not self.link_rate > 0:
            raise WorkloadError(f"link_rate must be positive, got {self.link_rate}")

    @property
    def seconds_per_byte(self) -> float:
        return 8.0 / self.link_rate

    @property
    def mean_service_time(self) -> float:
        return self.seconds_per_byte * self.dist.partial_moment(self.dist.max_size, 1)

    @property
    def arrival_rate(self) -> float:
        return self.load / self.mean_service_time

    def service_time(self, x):
        return self.seconds_per_byte * x

    def m1_time(self, x):
        """First partial moment in the service-time domain (seconds)."""
        return self.seconds_per_byte * self.dist.partial_moment(x, 1)

    def m2_time(self, x):
        """Second partial moment in the service-time domain (seconds^2)."""
        return self.seconds_per_byte**2 * self.dist.partial_moment(x, 2)

    def partial_load(self, x):
        return self.arrival_rate * self.m1_time(x)

    def with_load(self, load: float) -> "TrafficContext":
        return TrafficContext(self.dist, self.link_rate, load)


def make_context(dist: SizeDistribution, link_rate: float, load: float) -> TrafficContext:
    return TrafficContext(dist=dist, link_rate=link_rate, load=load)


def pdf(x, dist: SizeDistribution):
    return dist.pdf(x)


def cdf(x, dist: SizeDistribution):
    return dist.cdf(x)


def partial_moment(x, order: int, dist: SizeDistribution):
    return dist.partial_moment(x, order)


def partial_load(x, ctx: TrafficContext):
    return ctx.partial_load(x)


def sample_size(dist: SizeDistribution, rng: np.random.Generator) -> float:
    return float(dist.sample(rng))
