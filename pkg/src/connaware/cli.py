"""Command line front end: ``connaware {gen,analyze,run,compare,sweep}``.

Exit codes: 0 success, 2 configuration or usage error, 3 numerical failure.
"""

from __future__ import annotations

import argparse
import csv
import io
import json
import math
import os
import shutil
import sys
import tempfile
import warnings
from contextlib import contextmanager
from dataclasses import replace
from pathlib import Path
from typing import Iterator, Sequence

import numpy as np

from . import spectral
from .analysis import CostModel, cost_to_target, cumulative_cost, rate_fit
from .config import ExperimentConfig, load_config
from .federation import Algorithm, RoundRecord, simulate, theorem_t1
from .objectives import DivergenceError
from .spectral import BoundFallbackWarning, ConvergenceError
from .topology import (
    ConfigError,
    EdgeListFormatError,
    GraphInvariantError,
    assemble_network,
    read_edge_list,
    write_edge_list,
)

OUTPUT_ROOT_ENV = "CONNAWARE_OUTPUT_ROOT"
EXIT_OK, EXIT_USAGE, EXIT_NUMERIC = 0, 2, 3

ROUNDS_FIELDS = ("t", "m_requested", "m_effective", "gap", "phi_exact", "psi_bound", "d2d_tx", "d2s_tx", "cum_cost")


class UsageError(Exception):
    pass


# --- output handling --------------------------------------------------------


def _output_dir(args, cfg: ExperimentConfig | None, command: str) -> Path:
    if args.out:
        return Path(args.out)
    if cfg is not None and cfg.output.dir:
        return Path(cfg.output.dir)
    return Path(os.environ.get(OUTPUT_ROOT_ENV, "runs")) / command


@contextmanager
def atomic_dir(target: Path) -> Iterator[Path]:
    """Yield a scratch directory that replaces ``target`` only if the block succeeds."""
    target = Path(target)
    target.parent.mkdir(parents=True, exist_ok=True)
    tmp = Path(tempfile.mkdtemp(prefix=f".{target.name}.", dir=target.parent))
    try:
        yield tmp
    except BaseException:
        shutil.rmtree(tmp, ignore_errors=True)
        raise
    old = None
    if target.exists():
        old = target.with_name(f".{target.name}.old-{os.getpid()}")
        os.replace(target, old)
    os.replace(tmp, target)
    if old is not None:
        shutil.rmtree(old, ignore_errors=True)


def _fmt(v) -> str:
    if isinstance(v, (float, np.floating)):
        return repr(float(v))
    return str(v)


def rounds_table(records: Sequence[RoundRecord], cost: CostModel) -> str:
    cum = cumulative_cost(records, cost)
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(ROUNDS_FIELDS)
    for r, c in zip(records, cum):
        w.writerow(
            _fmt(v)
            for v in (r.t, r.m_requested, r.m_effective, r.gap, r.phi_exact, r.psi_bound,
                      r.d2d_transmissions, r.d2s_transmissions, c)
        )  # fmt: skip
    return buf.getvalue()


def _write(path: Path, text: str) -> None:
    path.write_text(text, encoding="utf-8")


def _json(obj) -> str:
    return json.dumps(obj, indent=2, sort_keys=True, allow_nan=True) + "\n"


# --- commands ---------------------------------------------------------------


def cmd_gen(args) -> int:
    cfg = _config(args)
    rounds = args.rounds if args.rounds is not None else cfg.output.rounds
    if rounds < 1:
        raise UsageError("--rounds must be >= 1")
    with atomic_dir(_output_dir(args, cfg, "gen")) as out:
        for t in range(rounds):
            net = assemble_network(cfg.topology, t)
            for g in net.clusters:
                buf = io.StringIO()
                write_edge_list(g, buf)
                _write(out / f"r{t:04d}_c{g.cluster_id:02d}.edges", buf.getvalue())
    return EXIT_OK


def cmd_analyze(args) -> int:
    reports = []
    for name in args.graphs:
        try:
            text = Path(name).read_text(encoding="utf-8")
        except OSError as e:
            raise UsageError(f"{name}: {e.strerror}") from None
        try:
            g = read_edge_list(text.splitlines())
        except (EdgeListFormatError, GraphInvariantError) as e:
            raise UsageError(f"{name}: {e}") from None
        rep = spectral.analyze_cluster(g).as_dict()
        rep["file"] = str(name)
        rep["cluster"] = g.cluster_id
        rep["round"] = g.round
        reports.append(rep)
    text = _json(reports)
    if args.out:
        with atomic_dir(Path(args.out)) as out:
            _write(out / "analysis.json", text)
    else:
        sys.stdout.write(text)
    return EXIT_OK


def _run_one(cfg: ExperimentConfig, algorithm: Algorithm | None = None, fixed_m: int | None = None):
    fed = cfg.federation
    if algorithm is not None:
        fed = replace(fed, algorithm=algorithm, fixed_m=fixed_m)
    task, prof, x0, x_star = cfg.build_task()
    records = simulate(fed, cfg.topology, task, x0=x0, x_star=x_star)
    initial_gap = float(np.sum((x0 - x_star) ** 2))
    return records, initial_gap, prof


def cmd_run(args) -> int:
    cfg = _config(args)
    records, initial_gap, prof = _run_one(cfg)
    cost = CostModel(cfg.federation.energy_ratio)
    cum = cumulative_cost(records, cost) if records else np.zeros(0)
    o = cfg.objective
    summary = {
        "algorithm": cfg.federation.algorithm.value,
        "rounds": len(records),
        "initial_gap": initial_gap,
        "final_gap": records[-1].gap if records else initial_gap,
        "total_cost": float(cum[-1]) if records else 0.0,
        "mean_m_effective": float(np.mean([r.m_effective for r in records])) if records else float("nan"),
        "t1": theorem_t1(o.mu, o.beta, cfg.federation.T_local, cfg.federation.phi_max),
        "delta": prof.delta,
        "gamma": prof.gamma,
        "config": cfg.as_dict(),
    }
    if len(records) >= 10:
        _, trend = rate_fit([r.gap for r in records], t1=summary["t1"])
        summary["trend"] = {
            "C_hat": trend.C_hat,
            "sup_scaled": trend.sup_scaled,
            "median_scaled": trend.median_scaled,
            "loglog_slope": trend.loglog_slope,
        }
    with atomic_dir(_output_dir(args, cfg, "run")) as out:
        _write(out / "rounds.csv", rounds_table(records, cost) if records else ",".join(ROUNDS_FIELDS) + "\n")
        _write(out / "summary.json", _json(summary))
    return EXIT_OK


def compare_rows(cfg: ExperimentConfig) -> list[dict]:
    """Seed-averaged relative gap and cost for ConnAware and both baselines."""
    cc = cfg.compare
    cost = CostModel(cfg.federation.energy_ratio)
    plan = (
        (Algorithm.CONN_AWARE, None),
        (Algorithm.FEDAVG, cc.fedavg_m),
        (Algorithm.COLREL, cc.colrel_m),
    )
    rows = []
    for alg, m in plan:
        gaps, costs = [], []
        for s in cc.seeds:
            records, g0, _ = _run_one(cfg.with_seed(s), alg, m)
            gaps.append([r.gap / g0 for r in records])
            costs.append(cumulative_cost(records, cost))
        g = np.mean(gaps, axis=0)
        c = np.mean(costs, axis=0)
        k, ck = cost_to_target(g, c, cc.target)
        rows.append(
            {
                "algorithm": alg.value,
                "fixed_m": "" if m is None else m,
                "reached": int(k is not None),
                "rounds_to_target": "" if k is None else k + 1,
                "cost_to_target": "" if ck is None else ck,
                "final_rel_gap": float(g[-1]),
                "cost_at_t_max": float(c[-1]),
            }
        )
    return rows


def cmd_compare(args) -> int:
    cfg = _config(args)
    if cfg.federation.t_max < 1:
        raise UsageError("compare needs t_max >= 1")
    rows = compare_rows(cfg)
    buf = io.StringIO()
    w = csv.DictWriter(buf, fieldnames=list(rows[0]), lineterminator="\n")
    w.writeheader()
    for r in rows:
        w.writerow({k: _fmt(v) for k, v in r.items()})
    with atomic_dir(_output_dir(args, cfg, "compare")) as out:
        _write(out / "compare.csv", buf.getvalue())
        _write(out / "summary.json", _json({"target": cfg.compare.target, "rows": rows, "config": cfg.as_dict()}))
    return EXIT_OK


def cmd_sweep(args) -> int:
    cfg = _config(args)
    cost = CostModel(cfg.federation.energy_ratio)
    T = cfg.federation.t_max
    fields = ["phi_max", "seed", "final_gap", "total_cost", "mean_m"] + [f"m_{t}" for t in range(T)]
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(fields)
    for phi in cfg.sweep.phi_max:
        for s in cfg.sweep.seeds:
            c = cfg.with_seed(s)
            c = replace(c, federation=replace(c.federation, phi_max=phi, algorithm=Algorithm.CONN_AWARE))
            records, _, _ = _run_one(c)
            ms = [r.m_requested for r in records]
            total = float(cumulative_cost(records, cost)[-1]) if records else 0.0
            final = records[-1].gap if records else float("nan")
            w.writerow([_fmt(phi), s, _fmt(final), _fmt(total), _fmt(float(np.mean(ms)) if ms else math.nan)] + ms)
    with atomic_dir(_output_dir(args, cfg, "sweep")) as out:
        _write(out / "sweep.csv", buf.getvalue())
    return EXIT_OK


# --- entry point ------------------------------------------------------------


def _config(args) -> ExperimentConfig:
    cfg = load_config(args.config)
    if args.seed is not None:
        if args.seed < 0:
            raise UsageError("--seed must be non-negative")
        cfg = cfg.with_seed(args.seed)
    if args.threads is not None:
        if args.threads < 1:
            raise UsageError("--threads must be >= 1")
        cfg = replace(cfg, federation=replace(cfg.federation, threads=args.threads))
    return cfg


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="connaware", description="Connectivity-aware semi-decentralized FL simulator")
    sub = p.add_subparsers(dest="command", required=True)

    def common(sp, config=True):
        if config:
            sp.add_argument("config", help="TOML experiment config")
        sp.add_argument("--seed", type=int, default=None, help="override the config seed")
        sp.add_argument("--out", default=None, help=f"output directory (default: ${OUTPUT_ROOT_ENV}/<command>)")
        sp.add_argument("--threads", type=int, default=None, help="worker threads for graph generation")
        return sp

    g = common(sub.add_parser("gen", help="write edge lists per (round, cluster)"))
    g.add_argument("--rounds", type=int, default=None)
    g.set_defaults(func=cmd_gen)
    a = common(sub.add_parser("analyze", help="spectral reports for edge-list files"), config=False)
    a.add_argument("graphs", nargs="+")
    a.set_defaults(func=cmd_analyze)
    common(sub.add_parser("run", help="simulate one configuration")).set_defaults(func=cmd_run)
    common(sub.add_parser("compare", help="ConnAware against FedAvg and COLREL-like")).set_defaults(func=cmd_compare)
    common(sub.add_parser("sweep", help="grid over phi_max")).set_defaults(func=cmd_sweep)
    return p


def main(argv: Sequence[str] | None = None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as e:
        return EXIT_USAGE if e.code else EXIT_OK
    fmt = warnings.formatwarning
    warnings.formatwarning = lambda msg, cat, *a, **k: f"connaware: warning: {msg}\n"
    try:
        with warnings.catch_warnings():
            warnings.simplefilter("once", BoundFallbackWarning)
            return args.func(args)
    except (ConfigError, UsageError) as e:
        print(f"connaware: error: {e}", file=sys.stderr)
        return EXIT_USAGE
    except (DivergenceError, ConvergenceError, FloatingPointError) as e:
        print(f"connaware: numerical failure: {e}", file=sys.stderr)
        return EXIT_NUMERIC
    finally:
        warnings.formatwarning = fmt


if __name__ == "__main__":
    sys.exit(main())
