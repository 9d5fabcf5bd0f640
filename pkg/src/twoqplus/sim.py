"""Deterministic flow-level simulator of a single link (big-switch model).

Time is kept internally as integer picosecond ticks so that event arithmetic
is exact: simultaneous events really are simultaneous and a schedule shifted
by a constant delay lands on exactly the same boundaries.  Seconds are
recovered as ``ticks / TICKS_PER_SECOND``, which is correctly rounded.

Policies
--------
fcfs          non-preemptive, arrival order.
srpt-ideal    preempt-resume SRPT with zero scheduling delay.
srpt-delayed  a scheduler that learns of a flow T1 after it arrives and whose
              decisions reach the link T2 after being issued.
two-q-plus    flows below H go to a strict-priority FCFS queue that bypasses
              the scheduler; the rest are handled as in srpt-delayed.
"""
from __future__ import annotations

import csv
import enum
import heapq
import math
from collections import deque
from dataclasses import dataclass
from pathlib import Path
from typing import Iterable, Optional, Sequence

import numpy as np
from scipy import stats

from .analysis import CostModel
from .workload import TrafficContext

TICKS_PER_SECOND = 10**12


def to_ticks(seconds: float) -> int:
    return int(round(seconds * TICKS_PER_SECOND))


def to_seconds(ticks: int) -> float:
    return ticks / TICKS_PER_SECOND


class SimulationError(ValueError):
    pass


class Policy(str, enum.Enum):
    FCFS = "fcfs"
    SRPT_IDEAL = "srpt-ideal"
    SRPT_DELAYED = "srpt-delayed"
    TWO_Q_PLUS = "two-q-plus"


class FlowClass(str, enum.Enum):
    FIRST = "first-class"
    SECOND = "second-class"
    UNCLASSIFIED = "unclassified"


@dataclass(frozen=True)
class Flow:
    id: int
    arrival: float
    size: float

    def service_demand(self, link_rate: float) -> float:
        return 8.0 * self.size / link_rate


@dataclass(frozen=True)
class FlowRecord:
    flow: Flow
    class_label: FlowClass
    first_service: float
    completion: float
    service_demand: float

    @property
    def fct(self) -> float:
        return self.completion - self.flow.arrival

    @property
    def waiting(self) -> float:
        return self.first_service - self.flow.arrival

    @property
    def residence(self) -> float:
        return self.completion - self.first_service


@dataclass(frozen=True)
class Segment:
    start_tick: int
    end_tick: int
    flow_id: Optional[int]

    @property
    def start(self) -> float:
        return to_seconds(self.start_tick)

    @property
    def end(self) -> float:
        return to_seconds(self.end_tick)

    @property
    def idle(self) -> bool:
        return self.flow_id is None


@dataclass(frozen=True)
class SchedulerTimeline:
    segments: tuple

    def busy(self) -> list[Segment]:
        return [s for s in self.segments if not s.idle]

    def shifted(self, ticks: int) -> "SchedulerTimeline":
        segs = [Segment(s.start_tick + ticks, s.end_tick + ticks, s.flow_id) for s in self.busy()]
        return _timeline(segs)

    def per_flow(self) -> dict[int, list[Segment]]:
        out: dict[int, list[Segment]] = {}
        for s in self.busy():
            out.setdefault(s.flow_id, []).append(s)
        return out


@dataclass(frozen=True)
class PolicyConfig:
    policy: Policy
    cost: Optional[CostModel] = None
    h_threshold: Optional[float] = None

    def __post_init__(self):
        object.__setattr__(self, "policy", Policy(self.policy))
        needs_cost = self.policy in (Policy.SRPT_DELAYED, Policy.TWO_Q_PLUS)
        if needs_cost and self.cost is None:
            raise SimulationError(f"policy {self.policy.value} needs a cost model")
        if not needs_cost and self.cost is not None:
            raise SimulationError(f"policy {self.policy.value} takes no cost model")
        if (self.policy is Policy.TWO_Q_PLUS) != (self.h_threshold is not None):
            raise SimulationError("h_threshold is required for two-q-plus and only for it")


def _timeline(busy: Iterable[Segment]) -> SchedulerTimeline:
    """Sort busy segments, merge abutting pieces of one flow, fill idle gaps."""
    busy = sorted((s for s in busy if s.end_tick > s.start_tick), key=lambda s: s.start_tick)
    merged: list[Segment] = []
    for s in busy:
        if merged and merged[-1].flow_id == s.flow_id and merged[-1].end_tick == s.start_tick:
            merged[-1] = Segment(merged[-1].start_tick, s.end_tick, s.flow_id)
        else:
            merged.append(s)
    out: list[Segment] = []
    t = 0
    for s in merged:
        if s.start_tick < t:
            raise SimulationError(f"overlapping service segments at tick {s.start_tick}")
        if s.start_tick > t:
            out.append(Segment(t, s.start_tick, None))
        out.append(s)
        t = s.end_tick
    return SchedulerTimeline(tuple(out))


def _prepare(flows: Sequence[Flow], link_rate: float):
    if not link_rate > 0:
        raise SimulationError("link_rate must be positive")
    arr, dem = [], []
    prev = None
    for f in flows:
        if not f.size > 0:
            raise SimulationError(f"flow {f.id} has non-positive size {f.size!r}")
        key = (f.arrival, f.id)
        if prev is not None and key <= prev:
            raise SimulationError(f"flows must be sorted by (arrival, id); flow {f.id} is out of order")
        if f.arrival < 0:
            raise SimulationError(f"flow {f.id} arrives before time 0")
        prev = key
        d = int(round(8.0 * f.size * TICKS_PER_SECOND / link_rate))
        if d <= 0:
            raise SimulationError(f"flow {f.id} has zero service demand at this link rate")
        arr.append(to_ticks(f.arrival))
        dem.append(d)
    return arr, dem


def _run_fcfs(arr, dem) -> list[Segment]:
    segs = []
    t = 0
    for i, (a, d) in enumerate(zip(arr, dem)):
        start = max(t, a)
        t = start + d
        segs.append(Segment(start, t, i))
    return segs


def _run_srpt_ideal(arr, dem) -> list[Segment]:
    """Preempt-resume SRPT; priority key is (remaining, arrival, index)."""
    n = len(arr)
    segs = []
    waiting: list = []
    cur = None  # [remaining at start, arrival, index, start tick]
    i = 0
    while i < n or cur is not None:
        if cur is not None:
            finish = cur[3] + cur[0]
            if i >= n or finish <= arr[i]:
                segs.append(Segment(cur[3], finish, cur[2]))
                if waiting:
                    rem, a, j = heapq.heappop(waiting)
                    cur = [rem, a, j, finish]
                else:
                    cur = None
                continue
        now = arr[i]
        new = (dem[i], arr[i], i)
        i += 1
        if cur is None:
            cur = [new[0], new[1], new[2], now]
            continue
        left = cur[0] - (now - cur[3])
        if new < (left, cur[1], cur[2]):
            segs.append(Segment(cur[3], now, cur[2]))
            heapq.heappush(waiting, (left, cur[1], cur[2]))
            cur = [new[0], new[1], new[2], now]
        else:
            heapq.heappush(waiting, new)
    return segs


# event kinds, in processing order for equal timestamps
_LINK_DONE, _ORDER, _HP_ARRIVAL, _VISIBLE = range(4)


class _DelayedLink:
    """Scheduler + link with decision lag, optionally fronted by a priority FCFS queue.

    The scheduler hears about a flow ``t1`` after it arrives and answers with
    the full priority order of the flows it knows, which the link receives
    ``t2`` later.  Because the answer carries successors as well, a natural
    completion moves straight on to the next flow without another round
    trip, which is the same as the scheduler issuing the successor decision
    ``t2`` ahead of the completion it can predict.

    To rank a new flow the scheduler projects the link forward to the moment
    its answer lands, replaying the orders already in flight.  It has no
    knowledge of first-class traffic and projects as if none will arrive.
    """

    def __init__(self, arr, dem, t1: int, t2: int, first_class: Sequence[bool]):
        self.arr, self.dem, self.t1, self.t2 = arr, dem, t1, t2
        self.first = first_class
        n = len(arr)
        self.rem = list(dem)
        self.done = [False] * n
        self.serving: Optional[int] = None
        self.serve_start = 0
        self.version = 0
        self.order: list[int] = []
        self.pos = 0
        self.in_flight: deque = deque()  # (effective tick, order)
        self.hp: deque = deque()
        self.events: list = []
        self.seq = 0
        self.segs: list[Segment] = []

    def _push(self, t, kind, payload):
        self.seq += 1
        heapq.heappush(self.events, (t, kind, self.seq, payload))

    def run(self) -> list[Segment]:
        for i, a in enumerate(self.arr):
            if self.first[i]:
                self._push(a, _HP_ARRIVAL, i)
            else:
                self._push(a + self.t1, _VISIBLE, i)
        while self.events:
            t, kind, _, payload = heapq.heappop(self.events)
            if kind == _LINK_DONE:
                j, version = payload
                if version == self.version:
                    self._complete(t, j)
            elif kind == _ORDER:
                eff, order = self.in_flight.popleft()
                assert eff == t and order is payload
                self.order, self.pos = order, 0
                self._dispatch(t)
            elif kind == _HP_ARRIVAL:
                self.hp.append(payload)
                self._dispatch(t)
            else:
                self._decide(t, payload)
        return self.segs

    # link side

    def _stop(self, now):
        j = self.serving
        if j is None:
            return
        self.segs.append(Segment(self.serve_start, now, j))
        self.rem[j] -= now - self.serve_start
        self.serving = None
        self.version += 1

    def _start(self, now, j):
        self.serving, self.serve_start = j, now
        self.version += 1
        self._push(now + self.rem[j], _LINK_DONE, (j, self.version))

    def _next_low(self) -> Optional[int]:
        order, done = self.order, self.done
        while self.pos < len(order) and done[order[self.pos]]:
            self.pos += 1
        return order[self.pos] if self.pos < len(order) else None

    def _dispatch(self, now):
        target = self.hp[0] if self.hp else self._next_low()
        if target == self.serving:
            return
        self._stop(now)
        if target is not None:
            self._start(now, target)

    def _complete(self, now, j):
        self._stop(now)
        self.done[j] = True
        if self.first[j]:
            assert self.hp[0] == j
            self.hp.popleft()
        self._dispatch(now)

    # scheduler side

    def _project(self, now):
        """Remaining demand of second-class flows at ``now + t2``, as the scheduler sees it."""
        horizon = now + self.t2
        rem: dict[int, int] = {}
        finished: set[int] = set()

        def left(j):
            return rem[j] if j in rem else self.rem[j]

        if self.serving is not None and not self.first[self.serving]:
            rem[self.serving] = self.rem[self.serving] - (now - self.serve_start)
        switches = list(self.in_flight)
        order, pos = self.order, 0
        c = now
        s = 0
        while True:
            stop = switches[s][0] if s < len(switches) else horizon
            while c < stop:
                while pos < len(order) and (self.done[order[pos]] or order[pos] in finished):
                    pos += 1
                if pos == len(order):
                    break
                j = order[pos]
                r = left(j)
                if c + r <= stop:
                    c += r
                    rem[j] = 0
                    finished.add(j)
                else:
                    rem[j] = r - (stop - c)
                    c = stop
            c = stop
            if s == len(switches):
                break
            order, pos = switches[s][1], 0
            s += 1
        return order, left

    def _decide(self, now, j):
        base, left = self._project(now)
        # projected-finished flows stay listed (key 0): without first-class
        # traffic the link has finished them by then and skips them, with it
        # they may still need service
        keep = [f for f in base if not self.done[f]]
        keep.append(j)
        keep.sort(key=lambda f: (left(f), self.arr[f], f))
        eff = now + self.t2
        self.in_flight.append((eff, keep))
        self._push(eff, _ORDER, keep)


def _records(flows, segs, dem, link_rate, labels) -> tuple[list[FlowRecord], SchedulerTimeline]:
    timeline = _timeline(segs)
    first = {}
    last = {}
    served = {}
    for s in timeline.busy():
        first.setdefault(s.flow_id, s.start_tick)
        last[s.flow_id] = s.end_tick
        served[s.flow_id] = served.get(s.flow_id, 0) + s.end_tick - s.start_tick
    records = []
    for i, f in enumerate(flows):
        if served.get(i) != dem[i]:
            raise SimulationError(f"flow {f.id} received {served.get(i, 0)} of {dem[i]} ticks")
        records.append(
            FlowRecord(
                flow=f,
                class_label=labels[i],
                first_service=to_seconds(first[i]),
                completion=to_seconds(last[i]),
                service_demand=f.service_demand(link_rate),
            )
        )
    return records, _relabel(timeline, flows)


def _relabel(timeline: SchedulerTimeline, flows) -> SchedulerTimeline:
    segs = tuple(s if s.idle else Segment(s.start_tick, s.end_tick, flows[s.flow_id].id) for s in timeline.segments)
    return SchedulerTimeline(segs)


def run(
    flows: Sequence[Flow], cfg: PolicyConfig, link_rate: float
) -> tuple[list[FlowRecord], SchedulerTimeline]:
    arr, dem = _prepare(flows, link_rate)
    n = len(flows)
    labels = [FlowClass.UNCLASSIFIED] * n
    if cfg.policy is Policy.FCFS:
        segs = _run_fcfs(arr, dem)
    elif cfg.policy is Policy.SRPT_IDEAL:
        segs = _run_srpt_ideal(arr, dem)
    else:
        t1, t2 = to_ticks(cfg.cost.t1), to_ticks(cfg.cost.t2)
        if cfg.policy is Policy.TWO_Q_PLUS:
            first = [f.size < cfg.h_threshold for f in flows]
            labels = [FlowClass.FIRST if x else FlowClass.SECOND for x in first]
        else:
            first = [False] * n
        segs = _DelayedLink(arr, dem, t1, t2, first).run()
    return _records(flows, segs, dem, link_rate, labels)


def shifted_ideal_oracle(flows: Sequence[Flow], cost: CostModel, link_rate: float) -> SchedulerTimeline:
    """Ideal SRPT timeline moved later by the whole scheduling delay."""
    _, timeline = run(flows, PolicyConfig(Policy.SRPT_IDEAL), link_rate)
    return timeline.shifted(to_ticks(cost.t1) + to_ticks(cost.t2))


def records_from_timeline(flows: Sequence[Flow], timeline: SchedulerTimeline, link_rate: float) -> list[FlowRecord]:
    by_id = {f.id: f for f in flows}
    first: dict = {}
    last: dict = {}
    for s in timeline.busy():
        first.setdefault(s.flow_id, s.start)
        last[s.flow_id] = s.end
    return [
        FlowRecord(by_id[i], FlowClass.UNCLASSIFIED, first[i], last[i], by_id[i].service_demand(link_rate))
        for i in sorted(first, key=lambda i: (by_id[i].arrival, i))
    ]


def generate_flows(ctx: TrafficContext, n: int, seed: int) -> list[Flow]:
    """Poisson arrivals at the context's rate with i.i.d. sizes; deterministic per seed."""
    if n < 1:
        raise SimulationError("n must be >= 1")
    rng = np.random.default_rng(seed)
    gaps = rng.exponential(1.0 / ctx.arrival_rate, n)
    sizes = ctx.dist.sample(rng, n)
    ticks = np.round(np.cumsum(gaps) * TICKS_PER_SECOND).astype(np.int64)
    return [Flow(i, int(t) / TICKS_PER_SECOND, float(s)) for i, (t, s) in enumerate(zip(ticks, sizes))]


def label_by_threshold(records: Sequence[FlowRecord], h: float) -> list[FlowRecord]:
    return [
        FlowRecord(r.flow, FlowClass.FIRST if r.flow.size < h else FlowClass.SECOND,
                   r.first_service, r.completion, r.service_demand)
        for r in records
    ]


def afct(records: Sequence[FlowRecord], class_filter: str = "all") -> float:
    if class_filter == "all":
        chosen = list(records)
    else:
        label = FlowClass(class_filter)
        chosen = [r for r in records if r.class_label is label]
    if not chosen:
        raise SimulationError(f"no flows in class {class_filter!r}")
    return math.fsum(r.fct for r in chosen) / len(chosen)


@dataclass(frozen=True)
class AfctRatios:
    ratio_first: float
    ratio_second: float
    ratio_all: float
    n_first: int
    n_second: int


def _class_ratio(a: Sequence[FlowRecord], b: Sequence[FlowRecord], cls: str) -> float:
    # an empty class is served identically by both policies, vacuously
    try:
        return afct(a, cls) / afct(b, cls)
    except SimulationError:
        return 1.0


def compare_records(two_q: Sequence[FlowRecord], srpt: Sequence[FlowRecord], h: float) -> AfctRatios:
    srpt = label_by_threshold(srpt, h)
    n_first = sum(r.class_label is FlowClass.FIRST for r in srpt)
    return AfctRatios(
        ratio_first=_class_ratio(two_q, srpt, "first-class"),
        ratio_second=_class_ratio(two_q, srpt, "second-class"),
        ratio_all=afct(two_q) / afct(srpt),
        n_first=n_first,
        n_second=len(srpt) - n_first,
    )


def compare_2qplus_vs_srpt(ctx: TrafficContext, cost: CostModel, h: float, n: int, seed: int) -> AfctRatios:
    """AFCT of 2QPlus over delayed SRPT, per class, on one common flow trace."""
    flows = generate_flows(ctx, n, seed)
    srpt, _ = run(flows, PolicyConfig(Policy.SRPT_DELAYED, cost=cost), ctx.link_rate)
    two_q, _ = run(flows, PolicyConfig(Policy.TWO_Q_PLUS, cost=cost, h_threshold=h), ctx.link_rate)
    return compare_records(two_q, srpt, h)


def batch_means_ci(values, n_batches: int = 20, confidence: float = 0.95) -> tuple[float, float]:
    """Mean and half-width of a batch-means confidence interval."""
    v = np.asarray(values, dtype=float)
    if v.size < 2 * n_batches:
        raise SimulationError("too few observations for the requested number of batches")
    usable = v[: v.size - v.size % n_batches]
    means = usable.reshape(n_batches, -1).mean(axis=1)
    half = stats.t.ppf(0.5 + confidence / 2, n_batches - 1) * means.std(ddof=1) / math.sqrt(n_batches)
    return float(v.mean()), float(half)


RECORD_HEADER = "flow_id,arrival_s,size_bytes,class,first_service_s,completion_s,fct_s"


def write_records(records: Sequence[FlowRecord], path: str | Path) -> None:
    with open(path, "w", newline="") as fh:
        fh.write(RECORD_HEADER + "\n")
        for r in records:
            fh.write(
                f"{r.flow.id},{r.flow.arrival!r},{r.flow.size!r},{r.class_label.value},"
                f"{r.first_service!r},{r.completion!r},{r.fct!r}\n"
            )


def read_flows(path: str | Path) -> list[Flow]:
    """Load a trace from the first three columns of a record file."""
    flows = []
    with open(path, newline="") as fh:
        reader = csv.reader(fh)
        header = next(reader, None)
        if header is None or header[:3] != ["flow_id", "arrival_s", "size_bytes"]:
            raise SimulationError(f"{path}: expected header starting with flow_id,arrival_s,size_bytes")
        for lineno, row in enumerate(reader, start=2):
            if not row:
                continue
            try:
                flows.append(Flow(int(row[0]), float(row[1]), float(row[2])))
            except (ValueError, IndexError) as exc:
                raise SimulationError(f"{path}:{lineno}: {exc}") from None
    flows.sort(key=lambda f: (f.arrival, f.id))
    return flows
