"""Command-line driver: single runs, sweeps, scheduler comparisons and
theory tables, all written as CSV.

Config files hold ``key = value`` lines; ``#`` starts a comment. Keys are
``SimParams`` fields plus the experiment keys in ``EXPERIMENT_KEYS``.
``--set`` overrides the file, ``--seed`` overrides ``seed``.

Run ``r`` at sweep value ``v`` is seeded with ``split_seed(seed, v, r)``:
the first 8 bytes (little endian) of ``sha256("{seed}|{v}|{r}")``, shifted
right by one bit so the result fits in a signed 64-bit integer.
"""
from __future__ import annotations

import argparse
import hashlib
import math
import os
import sys
import warnings
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field, fields

import numpy as np

from . import analysis, engine
from .channel import InvalidConfigError

EXPERIMENT_KEYS = {
    "sweep": "axis swept by run: K, T, V, B or scheduler (default: none)",
    "values": "comma-separated sweep values",
    "replications": "independent runs per sweep value (default 1)",
    "B_grid": "overflow thresholds, 'start:stop:step' or a comma list",
    "schedulers": "schedulers used by compare",
    "T_values": "Stage-I periods used for the proposed scheme in compare",
    "K_grid": "user counts for analyze (default 10,20,40,80)",
    "T_grid": "refresh periods for analyze (default 1,5,10)",
    "sim_dir": "directory with a summary.csv to merge into analyze output",
    "V_theory": "cost weight in the scaled-buffer theory (default 1.0)",
    "r0_upper": "upper limit of the floor-rate integral, 1 or inf",
    "n_samples": "Monte-Carlo paths for the stale-feedback probability",
}
SWEEP_AXES = ("K", "T", "V", "B", "scheduler")
_SIM_FIELDS = {f.name: f for f in fields(engine.SimParams)}

SUMMARY_COLUMNS = [
    "label", "sweep", "value", "rep", "seed", "scheduler", "K", "T", "V",
    "slots", "qmax_mean", "queue_mean", "feedback_mean", "fb_cost_mean",
    "throughput", "delay_mean", "conserved", "little_max_gap", "decay_rate",
    "decay_r2", "decay_points",
]


class UsageError(Exception):
    """Bad command-line or config input (exit status 2)."""


# -- formatting ------------------------------------------------------------------

def fmt(x) -> str:
    """CSV cell: floats at 9 significant digits, everything else as text."""
    if isinstance(x, (bool, np.bool_)):
        return str(int(x))
    if isinstance(x, (int, np.integer)):
        return str(int(x))
    if isinstance(x, (float, np.floating)):
        if math.isnan(x):
            return "nan"
        if math.isinf(x):
            return "inf" if x > 0 else "-inf"
        return format(float(x), ".9g")
    return str(x)


def write_csv(path: str, header, rows, comments=()) -> None:
    with open(path, "w", newline="\n") as fh:
        for c in comments:
            fh.write(f"# {c}\n")
        fh.write(",".join(header) + "\n")
        for row in rows:
            fh.write(",".join(fmt(v) for v in row) + "\n")


def read_csv(path: str):
    with open(path) as fh:
        lines = [ln.rstrip("\n") for ln in fh if not ln.startswith("#")]
    header = lines[0].split(",")
    return header, [dict(zip(header, ln.split(","))) for ln in lines[1:] if ln]


# -- configuration ---------------------------------------------------------------

def parse_config_text(text: str) -> dict:
    out = {}
    for n, raw in enumerate(text.splitlines(), 1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise UsageError(f"config line {n}: expected key = value, got {raw!r}")
        key, val = (s.strip() for s in line.split("=", 1))
        if not key:
            raise UsageError(f"config line {n}: empty key")
        out[key] = val
    return out


def load_config(path: str | None, overrides=()) -> dict:
    cfg = {}
    if path:
        try:
            with open(path) as fh:
                cfg = parse_config_text(fh.read())
        except OSError as exc:
            raise UsageError(f"cannot read config {path}: {exc}") from None
    for item in overrides:
        if "=" not in item:
            raise UsageError(f"--set expects key=value, got {item!r}")
        k, v = (s.strip() for s in item.split("=", 1))
        cfg[k] = v
    unknown = set(cfg) - set(_SIM_FIELDS) - set(EXPERIMENT_KEYS)
    if unknown:
        raise UsageError(f"unknown config keys: {', '.join(sorted(unknown))}")
    return cfg


def _coerce(name: str, text: str):
    kind = str(_SIM_FIELDS[name].type)
    if text.lower() in ("none", "") and "None" in kind:
        return None
    try:
        if kind.startswith("int"):
            v = float(text)
            if v != int(v):
                raise ValueError
            return int(v)
        if kind.startswith("float"):
            return float(text)
    except ValueError:
        raise UsageError(f"{name}: cannot parse {text!r} as {kind}") from None
    return text


def _floats(text: str) -> list:
    text = text.strip()
    if ":" in text:
        parts = [float(s) for s in text.split(":")]
        if len(parts) != 3 or parts[2] <= 0:
            raise UsageError(f"range must be start:stop:step, got {text!r}")
        start, stop, step = parts
        n = int(math.floor((stop - start) / step + 1e-9)) + 1
        return [start + i * step for i in range(max(n, 0))]
    return [float(s) for s in text.split(",") if s.strip()]


def _words(text: str) -> list:
    return [s.strip() for s in text.split(",") if s.strip()]


def sim_params(cfg: dict, **extra) -> engine.SimParams:
    kw = {k: _coerce(k, v) for k, v in cfg.items() if k in _SIM_FIELDS}
    kw.update(extra)
    try:
        return engine.SimParams(**kw)
    except (InvalidConfigError, TypeError) as exc:
        raise UsageError(str(exc)) from None


def split_seed(master: int, axis_value, rep: int) -> int:
    """Seed of replication ``rep`` at sweep value ``axis_value``."""
    digest = hashlib.sha256(f"{master}|{axis_value}|{rep}".encode()).digest()
    return int.from_bytes(digest[:8], "little") >> 1


@dataclass
class ExperimentSpec:
    base: engine.SimParams
    sweep: str | None = None
    values: list = field(default_factory=list)
    replications: int = 1
    master_seed: int = 0
    out: str = "results"
    B_grid: list = field(default_factory=lambda: _floats("0:60:0.25"))
    trace: bool = False
    workers: int = 1

    def __post_init__(self):
        if self.replications < 1:
            raise UsageError("replications must be >= 1")
        if self.sweep is not None and self.sweep not in SWEEP_AXES:
            raise UsageError(f"sweep axis must be one of {SWEEP_AXES}")
        if self.sweep in ("K", "T", "V", "B") and any(
                not float(v) > 0 and not (self.sweep == "V" and float(v) == 0)
                for v in self.values):
            raise UsageError("sweep values must be positive")
        if self.workers < 1:
            raise UsageError("workers must be >= 1")

    def jobs(self):
        """``(label, axis value, rep, params)`` in sweep order."""
        values = self.values if self.sweep not in (None, "B") else [None]
        out = []
        for v in values:
            for r in range(self.replications):
                seed = split_seed(self.master_seed, "" if v is None else v, r)
                if self.sweep is None or self.sweep == "B":
                    p = self.base.with_(seed=seed)
                    label = self.base.scheduler
                elif self.sweep == "scheduler":
                    sched, _, t = str(v).partition("@T=")
                    kw = {"scheduler": sched, "seed": seed}
                    if t:
                        kw["T"] = int(t)
                    p = _with(self.base, **kw)
                    label = str(v)
                else:
                    val = int(v) if self.sweep in ("K", "T") else float(v)
                    p = _with(self.base, **{self.sweep: val, "seed": seed})
                    label = f"{self.base.scheduler}@{self.sweep}={fmt(val)}"
                if self.replications > 1:
                    label += f"#r{r}"
                out.append((label, v, r, p))
        return out


def _with(p, **kw):
    try:
        return p.with_(**kw)
    except InvalidConfigError as exc:
        raise UsageError(str(exc)) from None


def experiment_spec(cfg: dict, args, sweep=None, values=None) -> ExperimentSpec:
    master = args.seed if args.seed is not None else int(cfg.get("seed", 0))
    sweep = sweep if sweep is not None else cfg.get("sweep")
    if values is None:
        raw = cfg.get("values", "")
        values = _words(raw) if sweep == "scheduler" else (
            [v for v in _floats(raw)] if raw else [])
    if sweep in ("K", "T", "V") and not values:
        raise UsageError(f"sweep over {sweep} needs values=")
    B_grid = _floats(cfg.get("B_grid", "0:60:0.25"))
    if sweep == "B" and values:
        B_grid = [float(v) for v in values]
    return ExperimentSpec(
        base=sim_params(cfg, seed=master), sweep=sweep, values=values,
        replications=int(cfg.get("replications", 1)), master_seed=master,
        out=args.out, B_grid=B_grid,
        trace=args.trace, workers=args.workers)


# -- simulation commands ----------------------------------------------------------

def _simulate(job):
    label, value, rep, params, trace = job
    return engine.run(params, trace=trace)


def _summary_row(label, sweep, value, rep, tr: engine.MetricsTrace, B_grid):
    p = tr.params
    curve = engine.overflow_curve(tr, B_grid)
    try:
        fit = engine.empirical_decay_rate(curve)
        decay = (fit.rate, fit.r2, fit.n_points)
    except engine.InsufficientTailError:
        decay = (math.nan, math.nan, 0)
    gap = tr.little_gap()
    gap = float(np.nanmax(gap)) if np.isfinite(gap).any() else math.nan
    delay = tr.delay
    return [label, sweep or "", "" if value is None else value, rep, p.seed,
            p.scheduler, p.K, p.T, p.V, tr.n_slots, float(tr.qmax.mean()),
            float(tr.q_mean.mean()), tr.feedback_mean, float(tr.fb_cost.mean()),
            tr.throughput,
            float(np.nanmean(delay)) if np.isfinite(delay).any() else math.nan,
            tr.conserved(), gap, *decay], curve


def _safe_name(label: str) -> str:
    return "".join(c if c.isalnum() or c in "-_." else "_" for c in label)


def execute(spec: ExperimentSpec):
    """Run every job of ``spec`` and write its CSV files. Returns the traces."""
    try:
        os.makedirs(spec.out, exist_ok=True)
        probe = os.path.join(spec.out, ".write_test")
        with open(probe, "w"):
            pass
        os.remove(probe)
    except OSError as exc:
        raise OSError(f"output directory {spec.out!r} is not writable: {exc}") from None

    jobs = [(lab, v, r, p, spec.trace) for lab, v, r, p in spec.jobs()]
    if spec.workers > 1 and len(jobs) > 1:
        with ProcessPoolExecutor(max_workers=spec.workers) as pool:
            traces = list(pool.map(_simulate, jobs))  # sweep order, not completion
    else:
        traces = [_simulate(j) for j in jobs]

    rows, curves = [], []
    for (label, value, rep, _, _), tr in zip(jobs, traces):
        row, curve = _summary_row(label, spec.sweep, value, rep, tr, spec.B_grid)
        rows.append(row)
        curves.append(curve)
        _write_run_files(spec, label, tr)
    write_csv(os.path.join(spec.out, "summary.csv"), SUMMARY_COLUMNS, rows)
    labels = [r[0] for r in rows]
    write_csv(os.path.join(spec.out, "overflow.csv"), ["B"] + labels,
              [[b] + [c.prob[i] for c in curves] for i, b in enumerate(spec.B_grid)])
    return traces


def _write_run_files(spec, label, tr):
    name = _safe_name(label)
    lt = tr.little
    K = tr.params.K
    write_csv(os.path.join(spec.out, f"run_{name}.csv"),
              ["user", "queue_mean", "departures_mean", "arrivals_mean",
               "delay_fifo", "little_ratio"],
              [[k, tr.q_mean[k], tr.d_mean[k], tr.a_mean[k], lt["delay"][k],
                lt["q_mean"][k] / lt["d_mean"][k] if lt["d_mean"][k] > 0 else math.nan]
               for k in range(K)])
    if spec.trace:
        w0 = tr.params.n_warmup
        write_csv(os.path.join(spec.out, f"trace_{name}.csv"),
                  ["slot", "qmax", "argmax", "feedback", "s_star"],
                  ([w0 + i, tr.qmax[i], tr.argmax[i], tr.feedback[i], tr.s_star[i]]
                   for i in range(tr.n_slots)))


def cmd_run(args) -> int:
    cfg = load_config(args.config, args.set)
    spec = experiment_spec(cfg, args)
    execute(spec)
    return 0


def cmd_compare(args) -> int:
    cfg = load_config(args.config, args.set)
    scheds = _words(cfg.get("schedulers", ",".join(engine.SCHEDULERS)))
    Ts = [int(t) for t in _floats(cfg.get("T_values", "1"))]
    values = []
    for s in scheds:
        if s not in engine.SCHEDULERS:
            raise UsageError(f"unknown scheduler {s!r}")
        if s == "proposed":
            values += [f"proposed@T={t}" for t in Ts]
        else:
            values.append(s)
    execute(experiment_spec(cfg, args, sweep="scheduler", values=values))
    return 0


# -- theory ------------------------------------------------------------------------

def _rate_params(cfg, K):
    sp = sim_params(cfg)
    r0_upper = float(cfg.get("r0_upper", "inf"))
    return analysis.RateParams(K=K, M=sp.M, N=sp.N, P=sp.P, lam_tot=sp.lam_tot,
                               L=sp.L, BW=sp.BW, tau=sp.tau,
                               V=float(cfg.get("V_theory", 1.0)), r0_upper=r0_upper)


def _theory_row(cfg, K, Ts, n_samples, seed):
    rp = _rate_params(cfg, K)
    row = [K]
    for form in ("exact", "asymptotic"):
        try:
            row.append(analysis.i_baseline(rp, form))
        except analysis.HypothesisError:
            row.append(math.nan)
    with warnings.catch_warnings():
        warnings.simplefilter("ignore", RuntimeWarning)
        try:
            lb, terms = analysis.i_prop_lb(rp, details=True)
            row += [lb, terms["eps"]]
            arrival = sim_params(cfg, K=K).arrival_model()
            rng = np.random.default_rng(split_seed(seed, K, 0))
            p0s = analysis.p0T(max(Ts), arrival, rp, n_samples, rng, return_all=True)
            row += [analysis.i_prop_T(T, rp, p0=float(p0s[T - 1])) for T in Ts]
        except analysis.HypothesisError:
            row += [math.nan] * (2 + len(Ts))
    return row


def cmd_analyze(args) -> int:
    cfg = load_config(args.config, args.set)
    Ks = [int(k) for k in _floats(cfg.get("K_grid", "10,20,40,80"))]
    Ts = [int(t) for t in _floats(cfg.get("T_grid", "1,5,10"))]
    n_samples = int(cfg.get("n_samples", 100_000))
    seed = args.seed if args.seed is not None else int(cfg.get("seed", 0))
    header = ["K", "i_baseline_exact", "i_baseline_asymptotic", "i_prop_lb", "eps"]
    header += [f"i_prop_T{T}" for T in Ts]
    rows = [_theory_row(cfg, K, Ts, n_samples, seed) for K in Ks]

    sim_dir = cfg.get("sim_dir")
    comments = []
    sim_rows = []
    if sim_dir and os.path.exists(os.path.join(sim_dir, "summary.csv")):
        _, sim_rows = read_csv(os.path.join(sim_dir, "summary.csv"))
    if not sim_rows:
        comments.append("warning: theory only, no simulation results found"
                        + (f" in {sim_dir}" if sim_dir else " (set sim_dir)"))
    else:
        keys = sorted({_variant(r) for r in sim_rows})
        header += [f"decay_{k}" for k in keys]
        for row in rows:
            for key in keys:
                vals = [float(r["decay_rate"]) for r in sim_rows
                        if _variant(r) == key and int(r["K"]) == row[0]]
                vals = [v for v in vals if not math.isnan(v)]
                row.append(float(np.mean(vals)) if vals else math.nan)
    os.makedirs(args.out, exist_ok=True)
    write_csv(os.path.join(args.out, "theory.csv"), header, rows, comments)

    if sim_rows and any(r["sweep"] == "V" for r in sim_rows):
        _write_tradeoff(args.out, [r for r in sim_rows if r["sweep"] == "V"])
    return 0


def _variant(row) -> str:
    # scheduler name, plus the refresh period for the proposed scheme
    if row["scheduler"] == "proposed":
        return f"proposed_T{int(row['T'])}"
    return row["scheduler"]


def _write_tradeoff(out, rows):
    by_v = {}
    for r in rows:
        by_v.setdefault(float(r["V"]), []).append(r)
    table = []
    for V in sorted(by_v):
        rs = by_v[V]
        table.append([V, np.mean([float(r["feedback_mean"]) for r in rs]),
                      np.mean([float(r["queue_mean"]) for r in rs]),
                      np.mean([float(r["qmax_mean"]) for r in rs])])
    write_csv(os.path.join(out, "tradeoff.csv"),
              ["V", "feedback_mean", "queue_mean", "qmax_mean"], table)


# -- entry point ---------------------------------------------------------------------

def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="qamimo", description=__doc__.splitlines()[0])
    sub = ap.add_subparsers(dest="command", required=True)
    for name, fn, hlp in (("run", cmd_run, "simulate one configuration or a sweep"),
                          ("analyze", cmd_analyze, "tabulate theoretical decay rates"),
                          ("compare", cmd_compare, "simulate every scheduler on one setup")):
        p = sub.add_parser(name, help=hlp)
        p.add_argument("--config", metavar="PATH", help="key = value config file")
        p.add_argument("--set", metavar="KEY=VALUE", action="append", default=[],
                       help="override one config key (repeatable)")
        p.add_argument("--seed", type=int, help="master seed (overrides seed=)")
        p.add_argument("--out", metavar="DIR", default="results",
                       help="output directory (default: results)")
        p.add_argument("--workers", type=int, default=1,
                       help="parallel processes; output does not depend on it")
        p.add_argument("--trace", action="store_true",
                       help="also write the per-slot trace of every run")
        p.set_defaults(func=fn)
    return ap


def main(argv=None) -> int:
    ap = build_parser()
    args = ap.parse_args(argv)
    try:
        return args.func(args)
    except UsageError as exc:
        ap.error(str(exc))  # exits with status 2
    except OSError as exc:
        print(f"qamimo: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
