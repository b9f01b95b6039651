"""Command-line driver: generate graphs, run constructions, sweep depths.

    gfl generate fc --n 10 --seed 0 --out g.json
    gfl run --task electric_gd --graph fc --n 10 --layers 30 --trials 5 --format csv
    gfl sweep --task electric_fast --graph csl --L 1 2 3 4 --format csv

Exit status is 0 when every applicable bound holds, 1 on a bound violation or
a failed trial, and 2 on a configuration or input error.
"""

from __future__ import annotations

import argparse
import csv
import io
import json
import os
import sys
from dataclasses import dataclass, replace

import numpy as np

from . import constructions as C
from .densela import sym_eig
from .graph import (
    Graph, GraphError, build_incidence, generate_csl, generate_fc, is_connected, laplacian, load_graph,
    random_csl, sample_demands, save_graph,
)
from .transformer import NonFiniteError
from .verify import CSV_HEADER, ErrorReport, run_task

EXIT_OK, EXIT_VIOLATION, EXIT_CONFIG = 0, 1, 2
DEFAULT_TEMP = 0.5
SWEEP_HEADER = ("task", "L", "trial", "error", "bound", "satisfied", "lambda_min", "lambda_max")


class ConfigError(Exception):
    pass


@dataclass(frozen=True)
class RunConfig:
    task: C.TaskSpec
    graph_source: str
    n: int
    skip: int | None
    graph_file: str | None
    trials: int
    seed: int
    project_demands: bool
    engine: str
    fmt: str
    output: str | None

    def __post_init__(self):
        if self.trials < 1:
            raise ConfigError(f"--trials must be at least 1, got {self.trials}")
        if self.graph_source == "file" and not self.graph_file:
            raise ConfigError("--graph file needs --graph-file PATH")


@dataclass
class TrialResult:
    trial: int
    report: ErrorReport | None
    error: str | None = None
    config_error: bool = False

    @property
    def passed(self) -> bool:
        return self.report is not None and self.report.passed


def _spectrum(g: Graph) -> tuple[float, float]:
    w = sym_eig(laplacian(build_incidence(g))).eigenvalues
    return float(w[1]), float(w[-1])


def _make_graph(cfg: RunConfig, seed: int) -> Graph:
    if cfg.graph_source == "fc":
        return generate_fc(cfg.n, seed)
    if cfg.graph_source == "csl":
        return random_csl(cfg.n, seed) if cfg.skip is None else generate_csl(cfg.n, cfg.skip, seed)
    return load_graph(cfg.graph_file)


def _resolve_task(task: C.TaskSpec, lam_max: float) -> C.TaskSpec:
    """Fill graph-dependent defaults: delta = 1/lambda_max and the lambda_max hint."""
    updates = {}
    if task.kind in ("electric_gd", "electric_fast") and task.delta is None:
        updates["delta"] = 1.0 / lam_max
    if task.kind == "sqrt_series" and task.lambda_max_hint is None:
        updates["lambda_max_hint"] = lam_max
    if task.kind in ("heat_series", "heat_fast") and task.s is None:
        updates["s"] = DEFAULT_TEMP
    return replace(task, **updates) if updates else task


def run_trial(cfg: RunConfig, trial: int, task: C.TaskSpec | None = None) -> TrialResult:
    task = task or cfg.task
    seed = cfg.seed + trial
    try:
        g = _make_graph(cfg, seed)
        if not is_connected(g):
            raise GraphError("graph is not connected")
        _, lam_max = _spectrum(g)
        task = _resolve_task(task, lam_max)
        demands = None
        if task.k is not None:
            demands = sample_demands(g.n, task.k, cfg.project_demands, seed)
        report = run_task(g, task, demands, cfg.engine, metadata={"trial": trial, "seed": seed})
        return TrialResult(trial, report)
    except (C.ConstraintError, GraphError, OSError, json.JSONDecodeError) as exc:
        return TrialResult(trial, None, f"{type(exc).__name__}: {exc}", config_error=True)
    except (NonFiniteError, ValueError, RuntimeError, np.linalg.LinAlgError) as exc:
        return TrialResult(trial, None, f"{type(exc).__name__}: {exc}")


def exit_code(results: list[TrialResult]) -> int:
    if any(r.config_error for r in results):
        return EXIT_CONFIG
    if all(r.passed for r in results):
        return EXIT_OK
    return EXIT_VIOLATION


def _na(x) -> str:
    return "NA" if x is None else repr(float(x))


def render_run(task: C.TaskSpec, results: list[TrialResult], fmt: str) -> str:
    if fmt == "json":
        trials = []
        for r in results:
            body = r.report.to_dict() if r.report else {"task": json.loads(task.to_json()), "failure": r.error}
            trials.append({"trial": r.trial, **body})
        return json.dumps({"trials": trials}, indent=2, sort_keys=True) + "\n"
    buf = io.StringIO()
    writer = csv.writer(buf, lineterminator="\n")
    writer.writerow(CSV_HEADER)
    for r in results:
        if r.report:
            writer.writerows(r.report.csv_rows(r.trial))
        else:
            writer.writerow([task.kind, r.trial, "NA", "NA", "NA", "error", "NA", "NA"])
    return buf.getvalue()


def render_sweep(task: C.TaskSpec, rows: list[tuple[int, TrialResult]], fmt: str) -> str:
    """One row per (L, trial) holding the final-layer error and bound."""
    records = []
    for L, r in rows:
        if r.report:
            rep = r.report
            sat = rep.satisfied[-1]
            records.append({
                "task": task.kind, "L": L, "trial": r.trial,
                "error": rep.per_layer_error[-1], "bound": rep.per_layer_bound[-1],
                "satisfied": sat, "lambda_min": rep.metadata["lambda_min"], "lambda_max": rep.metadata["lambda_max"],
            })
        else:
            records.append({"task": task.kind, "L": L, "trial": r.trial, "failure": r.error})
    records.sort(key=lambda rec: (rec["task"], rec["L"], rec["trial"]))
    if fmt == "json":
        return json.dumps({"rows": records}, indent=2, sort_keys=True) + "\n"
    buf = io.StringIO()
    writer = csv.writer(buf, lineterminator="\n")
    writer.writerow(SWEEP_HEADER)
    for rec in records:
        if "failure" in rec:
            writer.writerow([rec["task"], rec["L"], rec["trial"], "NA", "NA", "error", "NA", "NA"])
            continue
        sat = rec["satisfied"]
        writer.writerow([
            rec["task"], rec["L"], rec["trial"], _na(rec["error"]), _na(rec["bound"]),
            "NA" if sat is None else str(sat).lower(), _na(rec["lambda_min"]), _na(rec["lambda_max"]),
        ])
    return buf.getvalue()


def _summary(results: list[TrialResult]) -> str:
    passed = sum(r.passed for r in results)
    margins = [m for r in results if r.report for m in [r.report.worst_margin()] if m is not None]
    worst = "NA" if not margins else f"{max(margins):.6g}"
    lines = [f"pass rate {passed}/{len(results)}; worst error/bound {worst}"]
    lines += [f"trial {r.trial}: {r.error}" for r in results if r.error]
    return "\n".join(lines)


def _emit(text: str, out: str | None) -> None:
    if out is None:
        sys.stdout.write(text)
    else:
        with open(out, "w") as fh:
            fh.write(text)


def cmd_generate(args) -> int:
    if args.kind == "fc":
        g = generate_fc(args.n, args.seed)
    else:
        g = random_csl(args.n, args.seed) if args.skip is None else generate_csl(args.n, args.skip, args.seed)
    save_graph(g, args.out)
    lam_min, lam_max = _spectrum(g)
    print(f"n={g.n} d={g.d} lambda_min={lam_min:.6g} lambda_max={lam_max:.6g}")
    return EXIT_OK


def _config(args, layers: int) -> RunConfig:
    task = C.TaskSpec(args.task, layers, delta=args.delta, s=args.temp, k=args.k, mu=args.mu)
    return RunConfig(
        task=task, graph_source=args.graph, n=args.n, skip=args.skip, graph_file=args.graph_file,
        trials=args.trials, seed=args.seed, project_demands=args.project_demands == "on",
        engine=args.engine, fmt=args.format, output=args.out,
    )


def cmd_run(args) -> int:
    cfg = _config(args, args.layers)
    results = [run_trial(cfg, t) for t in range(cfg.trials)]
    _emit(render_run(cfg.task, results, cfg.fmt), cfg.output)
    print(_summary(results), file=sys.stderr)
    return exit_code(results)


def cmd_sweep(args) -> int:
    cfg = _config(args, 0)
    rows, results = [], []
    for L in args.L:
        task = replace(cfg.task, layers=L)
        for t in range(cfg.trials):
            r = run_trial(cfg, t, task)
            rows.append((L, r))
            results.append(r)
    _emit(render_sweep(cfg.task, rows, cfg.fmt), cfg.output)
    if results:
        print(_summary(results), file=sys.stderr)
    return exit_code(results)


def _add_run_flags(p: argparse.ArgumentParser) -> None:
    p.add_argument("--task", required=True, choices=C.TASK_KINDS)
    p.add_argument("--graph", choices=("fc", "csl", "file"), default="fc")
    p.add_argument("--graph-file", help="graph JSON, used with --graph file")
    p.add_argument("--n", type=int, default=10)
    p.add_argument("--skip", type=int, help="CSL skip length (default: drawn from {2,4,6,8})")
    p.add_argument("--delta", type=float, help="step size (default 1/lambda_max)")
    p.add_argument("--temp", type=float, help=f"heat-kernel temperature s (default {DEFAULT_TEMP})")
    p.add_argument("--k", type=int, help="number of sampled demands, or subspace dimension")
    p.add_argument("--mu", type=float, help="spectral shift for bottom-k iteration (default lambda_max)")
    p.add_argument("--trials", type=int, default=1)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--project-demands", choices=("on", "off"), default="on")
    p.add_argument("--engine", choices=("full", "efficient"), default="full")
    p.add_argument("--format", choices=("json", "csv"), default="csv")
    p.add_argument("--out", help="output file (default stdout)")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="gfl", description=__doc__.split("\n")[0])
    sub = parser.add_subparsers(dest="command", required=True)

    gen = sub.add_parser("generate", help="write a random graph as JSON")
    gen.add_argument("kind", choices=("fc", "csl"))
    gen.add_argument("--n", type=int, default=10)
    gen.add_argument("--skip", type=int)
    gen.add_argument("--seed", type=int, default=0)
    gen.add_argument("--out", required=True)
    gen.set_defaults(func=cmd_generate)

    run = sub.add_parser("run", help="run one construction over several trials")
    _add_run_flags(run)
    run.add_argument("--layers", type=int, required=True)
    run.set_defaults(func=cmd_run)

    sweep = sub.add_parser("sweep", help="run a construction at several depths")
    _add_run_flags(sweep)
    sweep.add_argument("--L", type=int, nargs="*", default=[], metavar="L", help="depths to sweep")
    sweep.set_defaults(func=cmd_sweep)
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    env_seed = os.environ.get("GFL_SEED")
    if env_seed is not None:
        try:
            args.seed = int(env_seed)
        except ValueError:
            print(f"gfl: GFL_SEED must be an integer, got {env_seed!r}", file=sys.stderr)
            return EXIT_CONFIG
    try:
        return args.func(args)
    except (ConfigError, GraphError, C.ConstraintError, ValueError, OSError) as exc:
        print(f"gfl: {exc}", file=sys.stderr)
        return EXIT_CONFIG


if __name__ == "__main__":
    sys.exit(main())
