"""Command-line front end: instance generation, runs, sweeps and reports.

Exit codes: 0 success, 1 usage error, 2 contract violation or oracle mismatch.
"""

from __future__ import annotations

import argparse
import csv
import io
import json
import os
import sys
import time
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .core import (ContractViolation, MaxIterationsExceeded, PicardConfig,
                   make_uniform_time_partition, picard_simulate, sequential_simulate)
from .instgen import Instance, generate_instance, load_instance, make_product_partition, save_instance
from .policies import CapacityPenalizedPolicy, DualNetworkPolicy, GreedyPolicy
from .theory import evaluation_speedup_proxy
from .timewarp import time_warp_simulate
from .toy_linear import make_linear_spec, picard_convergence_curve

COLUMNS = ("seed", "M", "beta", "gamma", "partitioning", "iterations_to_correct",
           "iterations_to_converged", "conflicts", "eval_proxy", "oracle_equal", "wall_time", "algo")
TRACE_COLUMNS = ("seed", "M", "gamma", "partitioning", "algo", "chunk_index", "k",
                 "changed_slots", "max_evals", "t_reset", "window_length")
LINEAR_COLUMNS = ("seed", "rho", "iteration", "relative_rmse")

MODES = ("generate", "simulate", "sweep-batch", "sweep-beta", "sweep-gamma",
         "timewarp-compare", "linear-convergence")


class UsageError(Exception):
    pass


class CheckFailed(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        raise UsageError(message)


def _ints(text: str) -> list[int]:
    try:
        return [int(v) for v in text.split(",") if v.strip()]
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected comma-separated integers, got {text!r}")


def _floats(text: str) -> list[float]:
    try:
        return [float(v) for v in text.split(",") if v.strip()]
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected comma-separated numbers, got {text!r}")


def build_parser() -> argparse.ArgumentParser:
    p = _Parser(prog="picard-sim", description="Parallel trajectory simulation by Picard iteration.")
    p.add_argument("mode", choices=MODES)
    p.add_argument("--J", type=int, default=30)
    p.add_argument("--I", type=int, default=10_000)
    p.add_argument("--T", type=int, default=None, help="horizon (30000; 200 for linear-convergence)")
    p.add_argument("--beta", type=_floats, default=None,
                   help="demand power-law exponent(s), comma separated")
    p.add_argument("--coverage", type=float, default=0.8)
    p.add_argument("--seed", type=_ints, default=[0], help="seed(s), comma separated")
    p.add_argument("--out", type=Path, default=None)
    p.add_argument("--instance", type=Path, default=None)
    p.add_argument("--algo", choices=("sequential", "picard", "timewarp"), default="picard")
    p.add_argument("--partition", choices=("product", "uniform", "both"), default=None)
    p.add_argument("--M", type=_ints, default=None, help="process count(s), comma separated")
    p.add_argument("--gamma", type=_floats, default=None,
                   help="capacity-penalty weight(s); selects the penalized policy")
    p.add_argument("--policy", choices=("greedy", "penalized", "dual-zero", "dual-random"),
                   default=None)
    p.add_argument("--max-steps", type=int, default=None)
    p.add_argument("--max-iterations", type=int, default=None)
    p.add_argument("--threads", type=int, default=1)
    p.add_argument("--window-rule", choices=("all", "live"), default="all")
    p.add_argument("--no-oracle", action="store_true")
    p.add_argument("--trace", action="store_true")
    p.add_argument("--timing", action="store_true", help="fill the wall_time column")
    p.add_argument("--rho", type=_floats, default=[0.3, 0.6, 0.9])
    p.add_argument("--n", type=int, default=4)
    p.add_argument("--tol", type=float, default=1e-3)
    p.add_argument("--normalize", choices=("draft", "reference"), default="draft")
    return p


@dataclass
class _Run:
    seed: int
    M: int
    beta: float
    gamma: float | None
    partitioning: str
    algo: str


def _fmt(v) -> str:
    if v is None:
        return ""
    if isinstance(v, bool):
        return "true" if v else "false"
    if isinstance(v, float):
        return repr(v)
    return str(v)


def _csv_text(header, rows) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(header)
    for r in rows:
        w.writerow([_fmt(v) for v in r])
    return buf.getvalue()


def _make_policy(name: str, gamma: float | None, inst: Instance, seed: int):
    if name == "greedy":
        return GreedyPolicy()
    if name == "penalized":
        return CapacityPenalizedPolicy(0.0 if gamma is None else gamma)
    if name == "dual-zero":
        return DualNetworkPolicy.zeros(inst.x1, inst.c1, inst.T)
    return DualNetworkPolicy.random(inst.x1, inst.c1, inst.T, seed)


def _make_plan(partitioning: str, inst: Instance, M: int, seed: int):
    if partitioning == "product":
        return make_product_partition(inst, M, seed)
    return make_uniform_time_partition(inst.T, M, seed)


class _Runner:
    def __init__(self, args):
        self.args = args
        self._instances: dict = {}
        self._oracles: dict = {}
        self.rows: list[tuple] = []
        self.trace: list[tuple] = []

    def instance(self, seed: int, beta: float) -> Instance:
        a = self.args
        if a.instance is not None:
            key = "file"
            if key not in self._instances:
                if not (a.instance / "manifest.json").is_file():
                    raise UsageError(f"instance directory {a.instance} has no manifest.json")
                self._instances = {key: load_instance(a.instance)}
            return self._instances[key]
        key = (seed, beta)
        if key not in self._instances:
            self._instances = {key: generate_instance(a.J, a.I, a.T, beta, a.coverage, seed)}
            self._oracles = {}
        return self._instances[key]

    def oracle(self, inst, policy_key, policy):
        if policy_key not in self._oracles:
            env = inst.env()
            self._oracles[policy_key] = sequential_simulate(env, policy, inst.orders,
                                                            keep_states=False).actions
        return self._oracles[policy_key]

    def execute(self, run: _Run, policy_name: str) -> None:
        a = self.args
        inst = self.instance(run.seed, run.beta)
        beta = inst.meta.get("beta", run.beta) if a.instance is not None else run.beta
        policy = _make_policy(policy_name, run.gamma, inst, run.seed)
        oracle = None
        if not a.no_oracle:
            oracle = self.oracle(inst, (policy_name, run.gamma, run.seed), policy)
        start = time.perf_counter()
        T = inst.T
        if run.algo == "sequential":
            actions = sequential_simulate(inst.env(), policy, inst.orders,
                                          keep_states=False).actions
            to_correct, converged, conflicts, proxy = 1, 1, 0, 1.0
            trace_rows = []
        elif run.algo == "picard":
            plan = _make_plan(run.partitioning, inst, run.M, run.seed)
            config = PicardConfig(max_steps=a.max_steps, max_iterations=a.max_iterations,
                                  record_trace=a.trace, threads=a.threads)
            res = picard_simulate(inst.env(), policy, inst.orders, plan, config,
                                  oracle_actions=None if a.no_oracle else oracle)
            actions = res.actions
            to_correct, converged, conflicts = (res.iterations_to_correct,
                                                res.iterations_to_converged, res.conflicts)
            proxy = evaluation_speedup_proxy(res, T) if T else 1.0
            trace_rows = [r.as_row() + ("",) for r in res.trace]
        else:
            plan = _make_plan(run.partitioning, inst, run.M, run.seed)
            res = time_warp_simulate(inst, policy, run.M, run.seed, plan=plan,
                                     window_rule=a.window_rule, record_trace=a.trace)
            actions = res.actions
            to_correct, converged, conflicts = None, res.sync_rounds, res.rollbacks
            proxy = evaluation_speedup_proxy(res, T) if T else 1.0
            trace_rows = [r.as_row() for r in res.trace]
        wall = time.perf_counter() - start if a.timing else None
        equal = None
        if not a.no_oracle:
            equal = bool(np.array_equal(np.asarray(actions), np.asarray(oracle)))
        self.rows.append((run.seed, run.M, beta, run.gamma, run.partitioning, to_correct,
                          converged, conflicts, float(proxy), equal, wall, run.algo))
        for tr in trace_rows:
            self.trace.append((run.seed, run.M, run.gamma, run.partitioning, run.algo) + tr)
        if equal is False:
            raise CheckFailed(f"oracle mismatch: {run.algo} seed={run.seed} M={run.M} "
                              f"partition={run.partitioning}")


def _seeds(args) -> list[int]:
    env = os.environ.get("PICARD_SIM_SEED")
    if env:
        try:
            return _ints(env)
        except argparse.ArgumentTypeError as exc:
            raise UsageError(f"PICARD_SIM_SEED: {exc}")
    return args.seed


def _grid(args) -> list[tuple[_Run, str]]:
    mode = args.mode
    seeds = _seeds(args)
    betas = args.beta or [0.0]
    Ms = args.M or [256]
    gammas = args.gamma or [None]
    policy = args.policy or ("penalized" if args.gamma else "greedy")
    partitions = {"product": ["product"], "uniform": ["uniform"], "both": ["product", "uniform"]}
    algos = [args.algo]
    parts_default = "product"
    if mode == "sweep-batch":
        Ms = args.M or [1, 10, 100, 1000]
    elif mode == "sweep-beta":
        betas = args.beta or [0.0, -0.4, -0.8, -1.0]
        parts_default = "both"
    elif mode == "sweep-gamma":
        gammas = args.gamma or [0.0, 0.5, 1.0]
        policy = args.policy or "penalized"
    elif mode == "timewarp-compare":
        algos = ["picard", "timewarp"]
    parts = partitions[args.partition or parts_default]
    if any(m < 1 for m in Ms):
        raise UsageError("M values must be >= 1")
    if any(g is not None and g < 0 for g in gammas):
        raise UsageError("gamma values must be >= 0")
    if mode == "timewarp-compare" and "uniform" in parts:
        raise UsageError("timewarp-compare needs --partition product")
    runs = []
    for seed in seeds:
        for beta in betas:
            for part in parts:
                for M in Ms:
                    for gamma in gammas:
                        for algo in algos:
                            runs.append((_Run(seed, M, beta, gamma, part, algo), policy))
    return runs


def _write(out: Path | None, name: str, text: str) -> None:
    if out is None:
        if name.endswith(".csv") and not name.startswith("trace"):
            sys.stdout.write(text)
        return
    out.mkdir(parents=True, exist_ok=True)
    (out / name).write_bytes(text.encode("utf-8"))


def _summary(rows) -> dict:
    return {
        "runs": len(rows),
        "oracle_equal": all(r[9] is not False for r in rows),
        "max_iterations_to_correct": max((r[5] for r in rows if r[5] is not None), default=None),
        "total_conflicts": sum(r[7] for r in rows),
        "eval_proxy": {"min": min((r[8] for r in rows), default=None),
                       "max": max((r[8] for r in rows), default=None)},
    }


def _generate(args) -> int:
    if args.out is None:
        raise UsageError("generate needs --out")
    seed = _seeds(args)[0]
    beta = (args.beta or [0.0])[0]
    inst = generate_instance(args.J, args.I, args.T, beta, args.coverage, seed)
    path = save_instance(inst, args.out)
    print(path)
    return 0


def _linear(args) -> int:
    rows = []
    summary = []
    for rho in args.rho:
        if not 0 <= rho < 1:
            raise UsageError("rho values must lie in [0, 1)")
        for seed in _seeds(args):
            spec = make_linear_spec(args.n, args.T, rho, seed)
            curve = picard_convergence_curve(spec, tol=args.tol, normalize=args.normalize)
            rows += [(seed, rho, k, v) for k, v in enumerate(curve.rmse)]
            summary.append({"seed": seed, "rho": rho, "measured_rho": spec.rho,
                            "iterations": curve.iterations,
                            "reached_tolerance": curve.reached_tolerance,
                            "max_ratio_after_first": max(curve.ratios()[1:], default=None)})
    _write(args.out, "linear.csv", _csv_text(LINEAR_COLUMNS, rows))
    _write(args.out, "summary.json", json.dumps(summary, indent=2, sort_keys=True) + "\n")
    return 0


def run_cli(argv=None) -> int:
    try:
        args = build_parser().parse_args(argv)
        if args.threads < 1:
            raise UsageError("--threads must be >= 1")
        if args.mode == "generate":
            return _generate(args)
        if args.mode == "linear-convergence":
            args.T = 200 if args.T is None else args.T
            return _linear(args)
        args.T = 30_000 if args.T is None else args.T
        runner = _Runner(args)
        failure = None
        try:
            for run, policy in _grid(args):
                runner.execute(run, policy)
        except (CheckFailed, ContractViolation, MaxIterationsExceeded) as exc:
            failure = exc
        except ValueError as exc:
            failure = CheckFailed(f"precondition failed: {exc}")
        _write(args.out, "results.csv", _csv_text(COLUMNS, runner.rows))
        if args.trace:
            _write(args.out, "trace.csv", _csv_text(TRACE_COLUMNS, runner.trace))
        summary = _summary(runner.rows)
        if failure is not None:
            summary["error"] = str(failure)
        _write(args.out, "summary.json", json.dumps(summary, indent=2, sort_keys=True) + "\n")
        if failure is not None:
            print(f"picard-sim: {failure}", file=sys.stderr)
            return 2
        return 0
    except UsageError as exc:
        print(f"picard-sim: usage error: {exc}", file=sys.stderr)
        return 1


def main() -> None:
    sys.exit(run_cli())
