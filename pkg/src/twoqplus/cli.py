"""Command-line front end.

Config files are flat ``key = value`` text; ``#`` starts a comment.  Keys:

    workload       preset name (websearch-bp, datamining-bp) or empirical CDF path
    bp_k, bp_p, bp_alpha   explicit Bounded-Pareto parameters (instead of workload)
    link_rate      bits/second                      (default 1e10)
    load           offered load                     (default 0.5)
    loads          comma-separated load grid        (default 0.1,...,0.9)
    t_cost_us      total scheduling delay, us       (default 100)
    t_gather_us, t_compute_us, t_respond_us   explicit split (instead of t_cost_us)
    h_bytes        2QPlus threshold
    n, seed        simulation size and seed         (default 40000, 1)
    policy         fcfs | srpt-ideal | srpt-delayed | two-q-plus
    axis, axis_values, criterion   threshold sweep  (default load over loads, exact-ratio)
    grid_points    analyze grid size                (default 200)
    out            output directory                 (default .)

Command-line flags override the file.  The effective configuration is
echoed to ``<out>/config.effective`` and can be fed back with ``--config``.
"""
from __future__ import annotations

import argparse
import logging
import math
import sys
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, fields, replace
from pathlib import Path
from typing import Optional

import numpy as np

from . import analysis, sim, threshold
from .analysis import CostModel
from .workload import PRESETS, BoundedPareto, TrafficContext, WorkloadError, preset, resolve_workload

log = logging.getLogger("twoqplus")

DEFAULT_LOADS = (0.1, 0.2, 0.3, 0.4, 0.5, 0.6, 0.7, 0.8, 0.9)
FIGURES = ("fig4", "fig5", "fig6", "fig7", "fig8", "fig9")
FIG6_TCOSTS_US = (2.4, 20.0, 50.0, 100.0, 200.0, 1000.0)
FIG7_ALPHAS = {
    "websearch-bp": (0.01, 0.125, 0.3, 0.6, 0.9),
    "datamining-bp": (0.01, 0.1, 0.26, 0.6, 0.9),
}
# h grid used when scanning for the simulated H_max (points over [k, p])
FIG8_SCAN_POINTS = 100


class ConfigError(ValueError):
    pass


def _floats(text: str) -> tuple:
    return tuple(float(v) for v in text.split(",") if v.strip())


@dataclass
class ExperimentConfig:
    workload: Optional[str] = None
    bp_k: Optional[float] = None
    bp_p: Optional[float] = None
    bp_alpha: Optional[float] = None
    link_rate: float = 1e10
    load: float = 0.5
    loads: tuple = DEFAULT_LOADS
    t_cost_us: Optional[float] = None
    t_gather_us: Optional[float] = None
    t_compute_us: Optional[float] = None
    t_respond_us: Optional[float] = None
    h_bytes: Optional[float] = None
    n: int = 40000
    seed: int = 1
    policy: str = "two-q-plus"
    axis: str = "load"
    axis_values: Optional[tuple] = None
    criterion: str = "exact-ratio"
    grid_points: int = 200
    out: str = "."

    _parsers = {
        "loads": _floats,
        "axis_values": _floats,
        "n": int,
        "seed": int,
        "grid_points": int,
        "workload": str,
        "policy": str,
        "axis": str,
        "criterion": str,
        "out": str,
    }

    @classmethod
    def keys(cls) -> list[str]:
        return [f.name for f in fields(cls)]

    def set(self, key: str, raw: str, where: str = "") -> None:
        if key not in self.keys():
            raise ConfigError(f"{where}unknown key {key!r}")
        parse = self._parsers.get(key, float)
        try:
            setattr(self, key, parse(raw))
        except ValueError as exc:
            raise ConfigError(f"{where}bad value for {key!r}: {exc}") from None

    @classmethod
    def from_file(cls, path: str | Path) -> "ExperimentConfig":
        cfg = cls()
        with open(path) as fh:
            for lineno, line in enumerate(fh, start=1):
                line = line.split("#", 1)[0].strip()
                if not line:
                    continue
                if "=" not in line:
                    raise ConfigError(f"{path}:{lineno}: expected key = value")
                key, raw = (s.strip() for s in line.split("=", 1))
                cfg.set(key, raw, f"{path}:{lineno}: ")
        return cfg

    def validate(self) -> None:
        bp = [self.bp_k, self.bp_p, self.bp_alpha]
        if self.workload is not None and any(v is not None for v in bp):
            raise ConfigError("give either workload or bp_k/bp_p/bp_alpha, not both")
        if any(v is not None for v in bp) and not all(v is not None for v in bp):
            raise ConfigError("bp_k, bp_p and bp_alpha must be given together")
        split = [self.t_gather_us, self.t_compute_us, self.t_respond_us]
        if self.t_cost_us is not None and any(v is not None for v in split):
            raise ConfigError("give either t_cost_us or the t_gather/t_compute/t_respond split, not both")
        if not self.loads:
            raise ConfigError("loads must be non-empty")
        if self.axis_values is not None and not self.axis_values:
            raise ConfigError("axis_values must be non-empty")
        if self.n < 1:
            raise ConfigError("n must be >= 1")
        if self.grid_points < 2:
            raise ConfigError("grid_points must be >= 2")
        for v in (self.load, *self.loads):
            if not 0 < v < 1:
                raise ConfigError(f"load {v} outside (0, 1)")
        if self.link_rate <= 0:
            raise ConfigError("link_rate must be positive")
        try:
            sim.Policy(self.policy)
            threshold.Criterion(self.criterion)
            threshold.Axis(self.axis)
        except ValueError as exc:
            raise ConfigError(str(exc)) from None

    def resolved(self) -> "ExperimentConfig":
        cfg = replace(self)
        if cfg.workload is None and cfg.bp_k is None:
            cfg.workload = "websearch-bp"
        if cfg.t_cost_us is None and all(v is None for v in (cfg.t_gather_us, cfg.t_compute_us, cfg.t_respond_us)):
            cfg.t_cost_us = 100.0
        cfg.validate()
        return cfg

    def dist(self):
        if self.workload is not None:
            return resolve_workload(self.workload)
        return BoundedPareto(self.bp_k, self.bp_p, self.bp_alpha)

    def cost(self) -> CostModel:
        if self.t_cost_us is not None:
            return CostModel.from_total(self.t_cost_us / 1e6)
        us = lambda v: (v or 0.0) / 1e6  # noqa: E731
        return CostModel(us(self.t_gather_us), us(self.t_compute_us), us(self.t_respond_us))

    def context(self, load: Optional[float] = None) -> TrafficContext:
        return TrafficContext(self.dist(), self.link_rate, self.load if load is None else load)

    def to_text(self) -> str:
        lines = []
        for key in self.keys():
            v = getattr(self, key)
            if v is None:
                continue
            if isinstance(v, tuple):
                v = ",".join(repr(x) for x in v)
            elif isinstance(v, float):
                v = repr(v)
            lines.append(f"{key} = {v}")
        return "\n".join(lines) + "\n"


def _write(path: Path, text: str) -> Path:
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "w", newline="") as fh:
        fh.write(text)
    return path


def _csv(header: str, rows) -> str:
    return header + "\n" + "".join(",".join(_fmt(v) for v in row) + "\n" for row in rows)


def _fmt(v) -> str:
    if isinstance(v, (float, np.floating)):
        return repr(float(v))
    return str(v)


def _pool_map(fn, jobs):
    workers = threshold.worker_count()
    if workers > 1 and len(jobs) > 1:
        with ProcessPoolExecutor(max_workers=workers) as pool:
            return list(pool.map(fn, jobs))
    return [fn(j) for j in jobs]


def _echo(cfg: ExperimentConfig) -> None:
    _write(Path(cfg.out) / "config.effective", cfg.to_text())


ANALYZE_HEADER = "x_bytes,srpt_wait_s,srpt_residence_s,srpt_completion_s,fcfs_completion_s"


def analyze_rows(ctx: TrafficContext, cost: CostModel, grid_points: int = 200):
    xs = np.geomspace(ctx.dist.min_size, ctx.dist.max_size, grid_points)
    xs[0], xs[-1] = ctx.dist.min_size, ctx.dist.max_size
    rows = []
    for x in xs:
        x = float(x)
        mv = analysis.srpt_completion(x, ctx, cost)
        rows.append((x, mv.waiting, mv.residence, mv.completion, analysis.fcfs_completion_for_size(x, ctx)))
    return rows


def cmd_analyze(cfg: ExperimentConfig) -> list[Path]:
    _echo(cfg)
    rows = analyze_rows(cfg.context(), cfg.cost(), cfg.grid_points)
    return [_write(Path(cfg.out) / "analyze.csv", _csv(ANALYZE_HEADER, rows))]


def cmd_threshold(cfg: ExperimentConfig) -> tuple[list[Path], bool]:
    _echo(cfg)
    axis = threshold.Axis(cfg.axis)
    if cfg.axis_values is not None:
        values = cfg.axis_values
    elif axis is threshold.Axis.LOAD:
        values = cfg.loads
    else:
        raise ConfigError(f"axis {axis.value} needs axis_values")
    if axis is threshold.Axis.T_COST:
        values = tuple(v / 1e6 for v in values)  # given in us like t_cost_us
    spec = threshold.SweepSpec(
        dist=cfg.dist(), axis=axis, values=values, load=cfg.load,
        t_cost=cfg.cost().t_cost, link_rate=cfg.link_rate,
    )
    rows = threshold.run_sweep(spec, cfg.criterion)
    path = _write(Path(cfg.out) / "threshold.csv", threshold.format_sweep(rows, cfg.criterion))
    return [path], all(r.error is None for r in rows)


SUMMARY_HEADER = "afct_all_s,afct_first_s,afct_second_s"


def cmd_simulate(cfg: ExperimentConfig, trace: Optional[str] = None) -> list[Path]:
    _echo(cfg)
    ctx = cfg.context()
    policy = sim.Policy(cfg.policy)
    flows = sim.read_flows(trace) if trace else sim.generate_flows(ctx, cfg.n, cfg.seed)
    kwargs = {}
    if policy in (sim.Policy.SRPT_DELAYED, sim.Policy.TWO_Q_PLUS):
        kwargs["cost"] = cfg.cost()
    if policy is sim.Policy.TWO_Q_PLUS:
        if cfg.h_bytes is None:
            raise ConfigError("two-q-plus needs h_bytes")
        kwargs["h_threshold"] = cfg.h_bytes
    records, _ = sim.run(flows, sim.PolicyConfig(policy, **kwargs), ctx.link_rate)
    if cfg.h_bytes is not None and policy is not sim.Policy.TWO_Q_PLUS:
        records = sim.label_by_threshold(records, cfg.h_bytes)
    out = Path(cfg.out)
    rec_path = out / "records.csv"
    out.mkdir(parents=True, exist_ok=True)
    sim.write_records(records, rec_path)

    def maybe(cls):
        try:
            return sim.afct(records, cls)
        except sim.SimulationError:
            return math.nan

    summary = (sim.afct(records), maybe("first-class"), maybe("second-class"))
    text = _csv(SUMMARY_HEADER, [summary])
    print(text.splitlines()[1])
    return [rec_path, _write(out / "summary.csv", text)]


# reproduce


def _fig_threshold_rows(dist, axis, values, criterion, load, t_cost, link_rate):
    spec = threshold.SweepSpec(dist=dist, axis=axis, values=values, load=load, t_cost=t_cost, link_rate=link_rate)
    rows = threshold.run_sweep(spec, criterion)
    out, ok = [], True
    for r in rows:
        if r.result is None:
            ok = False
            out.append((r.axis_value, math.nan, math.nan))
        else:
            out.append((r.axis_value, r.result.h, r.result.coverage))
    return out, ok


def _fig8_cell(job):
    name, load, link_rate, t_cost, n, seed = job
    ctx = TrafficContext(preset(name), link_rate, load)
    cost = CostModel.from_total(t_cost)
    h_star = threshold.exact_hmax(ctx, cost).h
    k, p = ctx.dist.min_size, ctx.dist.max_size
    grid = np.geomspace(k, p, FIG8_SCAN_POINTS)
    window = [float(h) for h in grid if h_star / 2 <= h <= h_star * 2]
    flows = sim.generate_flows(ctx, n, seed)
    srpt, _ = sim.run(flows, sim.PolicyConfig(sim.Policy.SRPT_DELAYED, cost=cost), link_rate)
    best = window[0]
    for h in window:
        two_q, _ = sim.run(flows, sim.PolicyConfig(sim.Policy.TWO_Q_PLUS, cost=cost, h_threshold=h), link_rate)
        if sim.compare_records(two_q, srpt, h).ratio_first <= 1.0:
            best = h
    return (load, best, float(ctx.dist.cdf(best)))


def _fig9_cell(job):
    name, load, link_rate, t_cost, n, seed = job
    ctx = TrafficContext(preset(name), link_rate, load)
    cost = CostModel.from_total(t_cost)
    h = threshold.theorem1_threshold(ctx, cost).h
    r = sim.compare_2qplus_vs_srpt(ctx, cost, h, n, seed)
    return (load, r.ratio_first, r.ratio_second, r.ratio_all)


GNUPLOT = """set datafile separator ','
set key autotitle columnhead
set terminal pngcairo size 800,500
set output '{stem}.png'
set xlabel '{xlabel}'
set ylabel '{ylabel}'
plot '{csv}' using 1:{col} with linespoints
"""


def reproduce_tables(figure: str, cfg: ExperimentConfig) -> tuple[dict, bool]:
    """Return ``{file stem: (header, rows)}`` for one figure."""
    if figure not in FIGURES:
        raise ConfigError(f"unknown figure {figure!r}; choose from {', '.join(FIGURES)}")
    t_cost = 100e-6
    tables, ok = {}, True
    for name in PRESETS:
        dist = preset(name)
        if figure in ("fig4", "fig5"):
            crit = threshold.Criterion.THEOREM1 if figure == "fig4" else threshold.Criterion.EXACT
            rows, good = _fig_threshold_rows(dist, "load", cfg.loads, crit, 0.5, t_cost, cfg.link_rate)
            header = "rho,h_max_bytes,coverage"
        elif figure == "fig6":
            rows, good = _fig_threshold_rows(
                dist, "t_cost", [v / 1e6 for v in FIG6_TCOSTS_US], "exact-ratio", 0.5, t_cost, cfg.link_rate
            )
            header = "t_cost,h_max_bytes,coverage"
        elif figure == "fig7":
            rows, good = _fig_threshold_rows(dist, "alpha", FIG7_ALPHAS[name], "exact-ratio", 0.5, t_cost, cfg.link_rate)
            header = "alpha,h_max_bytes,coverage"
        else:
            jobs = [(name, load, cfg.link_rate, t_cost, cfg.n, cfg.seed) for load in cfg.loads]
            if figure == "fig8":
                rows = _pool_map(_fig8_cell, jobs)
                header = "rho,h_max_bytes,coverage"
            else:
                rows = _pool_map(_fig9_cell, jobs)
                header = "rho,ratio_first,ratio_second,ratio_all"
            good = True
        tables[f"{figure}_{name}"] = (header, rows)
        ok = ok and good
    return tables, ok


def cmd_reproduce(figure: str, cfg: ExperimentConfig, plot_script: bool = False) -> tuple[list[Path], bool]:
    _echo(cfg)
    tables, ok = reproduce_tables(figure, cfg)
    out = Path(cfg.out)
    paths = []
    for stem, (header, rows) in tables.items():
        paths.append(_write(out / f"{stem}.csv", _csv(header, rows)))
        if plot_script:
            cols = header.split(",")
            script = GNUPLOT.format(stem=stem, xlabel=cols[0], ylabel=cols[1], csv=f"{stem}.csv", col=2)
            paths.append(_write(out / f"{stem}.gp", script))
    return paths, ok


def _parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", help="key = value config file")
    common.add_argument("--out", help="output directory")
    common.add_argument("--seed", type=int)
    common.add_argument("--workload", help="preset name or empirical CDF file")
    common.add_argument("--load", type=float)
    common.add_argument("--tcost-us", type=float, dest="t_cost_us")
    common.add_argument("--h-bytes", type=float, dest="h_bytes")
    common.add_argument("--n", type=int)
    common.add_argument("-v", "--verbose", action="store_true")

    parser = argparse.ArgumentParser(
        prog="twoqplus",
        description="Scheduling-delay aware SRPT/FCFS analysis, threshold solving and simulation.",
        epilog=f"Set {threshold.WORKERS_ENV}=N to fan sweep rows and simulation runs out to N processes.",
    )
    sub = parser.add_subparsers(dest="command", required=True)
    sub.add_parser("analyze", parents=[common], help="per-size mean values on a log grid")
    p = sub.add_parser("threshold", parents=[common], help="threshold sweep")
    p.add_argument("--axis", choices=[a.value for a in threshold.Axis])
    p.add_argument("--values", help="comma-separated axis values (t_cost in us)")
    p.add_argument("--criterion", choices=[c.value for c in threshold.Criterion])
    p = sub.add_parser("simulate", parents=[common], help="run one policy on a generated or replayed trace")
    p.add_argument("--policy", choices=[x.value for x in sim.Policy])
    p.add_argument("--trace", help="replay flows from a record CSV instead of generating them")
    p = sub.add_parser("reproduce", parents=[common], help="regenerate a figure's table")
    p.add_argument("figure", choices=FIGURES)
    p.add_argument("--plot-script", action="store_true", help="also emit a gnuplot script per table")
    return parser


def build_config(args: argparse.Namespace) -> ExperimentConfig:
    cfg = ExperimentConfig.from_file(args.config) if args.config else ExperimentConfig()
    for key in ("out", "seed", "workload", "load", "t_cost_us", "h_bytes", "n", "axis", "criterion", "policy"):
        v = getattr(args, key, None)
        if v is not None:
            setattr(cfg, key, v)
    if args.workload is not None:
        cfg.bp_k = cfg.bp_p = cfg.bp_alpha = None
    if args.t_cost_us is not None:
        cfg.t_gather_us = cfg.t_compute_us = cfg.t_respond_us = None
    if getattr(args, "values", None):
        cfg.axis_values = _floats(args.values)
    return cfg.resolved()


def main(argv=None) -> int:
    args = _parser().parse_args(argv)
    logging.basicConfig(level=logging.DEBUG if args.verbose else logging.WARNING, format="%(levelname)s %(message)s")
    try:
        cfg = build_config(args)
        ok = True
        if args.command == "analyze":
            paths = cmd_analyze(cfg)
        elif args.command == "threshold":
            paths, ok = cmd_threshold(cfg)
        elif args.command == "simulate":
            paths = cmd_simulate(cfg, args.trace)
        else:
            paths, ok = cmd_reproduce(args.figure, cfg, args.plot_script)
    except (ConfigError, WorkloadError, sim.SimulationError, analysis.AnalysisError, OSError) as exc:
        print(f"twoqplus: error: {exc}", file=sys.stderr)
        return 2
    for p in paths:
        log.info("wrote %s", p)
    return 0 if ok else 1


if __name__ == "__main__":
    sys.exit(main())
