"""Command-line front end: network generation, clearing, bailout solvers,
default minimisation, stochastic and distributed runs, and the table
harness that regenerates the experiment curves.

Results are JSON records written with sorted keys, so two runs with the
same configuration differ at most in the ``timestamp`` field.  Sweeps and
traces go to CSV.  Exit codes: 0 ok, 2 bad configuration, 3 I/O failure,
4 solver failure, 5 best-effort result after non-convergence.
"""

from __future__ import annotations

import argparse
import csv
import hashlib
import json
import os
import sys
from dataclasses import asdict, dataclass, field
from datetime import datetime, timezone
from pathlib import Path
from typing import Any, Callable

import numba
import numpy as np
import scipy

from . import __version__
from .bailout import (solve_problem1, solve_problem1_aon, solve_problem1_demange,
                      solve_problem1_lagrangian, solve_problem3)
from .clearing import clear_all_or_nothing, clear_proportional, threat_index
from .defaults_min import (ReweightConfig, minimize_defaults_greedy, minimize_defaults_rw,
                           oracle_Nd)
from .distsim import DistConfig, run_algorithm_A, run_algorithm_A_prime, run_algorithm_P
from .errors import (ConfigError, FinRescueError, InvalidParameter, IoError, NetworkError,
                     SolverFailure, UnknownFigure, UnsupportedVariant)
from .generators import DETERMINISTIC, RANDOM, TopologySpec, generate
from .netmodel import FinancialNetwork, InjectionPlan, _jsonable
from .stochastic import (ScenarioBatch, ScenarioSampler, solve_saa_benders, solve_saa_direct,
                         solve_saa_sgd)

OUTPUT_DIR_ENV = "FINRESCUE_OUTPUT_DIR"

EXIT_OK = 0
EXIT_CONFIG = 2
EXIT_IO = 3
EXIT_SOLVER = 4
EXIT_NONCONVERGED = 5

# flags that mean an iteration or search stopped before its own criterion
NONCONVERGENCE_FLAGS = {"max_rounds", "max_iterations", "not_converged", "node_limit", "round_limit"}

FIGURES = ("fig2", "fig4", "fig6", "fig7", "fig8", "fig9", "milp_cp", "dist_fourNode", "dist_cp")


# -- records ----------------------------------------------------------------------

@dataclass
class RunConfig:
    subcommand: str
    inputs: dict[str, str] = field(default_factory=dict)
    params: dict[str, Any] = field(default_factory=dict)
    outputs: dict[str, str] = field(default_factory=dict)
    seed: int = 0
    deterministic: bool = False

    def config_hash(self) -> str:
        """Hash of everything that determines the result (outputs excluded)."""
        body = {"subcommand": self.subcommand, "params": self.params, "seed": self.seed,
                "inputs": {k: _file_digest(v) for k, v in sorted(self.inputs.items())}}
        return hashlib.sha256(_dumps(body).encode()).hexdigest()


@dataclass
class ResultRecord:
    run: dict[str, Any]
    plan: dict[str, Any] | None = None
    clearing: dict[str, Any] | None = None
    diagnostics: dict[str, Any] = field(default_factory=dict)

    def to_json(self) -> str:
        return _dumps(asdict(self), indent=2) + "\n"

    @classmethod
    def from_json(cls, text: str) -> "ResultRecord":
        return cls(**json.loads(text))


def _dumps(obj, indent=None) -> str:
    return json.dumps(_jsonable(obj), sort_keys=True, indent=indent)


def _file_digest(path: str) -> str:
    try:
        return hashlib.sha256(Path(path).read_bytes()).hexdigest()
    except OSError:
        return str(path)


def _versions() -> dict[str, str]:
    return {"finrescue": __version__, "numpy": np.__version__, "scipy": scipy.__version__,
            "numba": numba.__version__}


def make_record(cfg: RunConfig, plan: InjectionPlan | None = None, clearing=None,
                diagnostics: dict | None = None) -> ResultRecord:
    run = {"subcommand": cfg.subcommand, "inputs": cfg.inputs, "params": cfg.params,
           "seed": cfg.seed, "config_hash": cfg.config_hash(), "versions": _versions(),
           "timestamp": None if cfg.deterministic else datetime.now(timezone.utc).isoformat()}
    return ResultRecord(run=run, plan=None if plan is None else plan.to_dict(),
                        clearing=None if clearing is None else clearing.to_dict(),
                        diagnostics=dict(diagnostics or {}))


# -- I/O helpers -------------------------------------------------------------------

def output_dir() -> Path | None:
    d = os.environ.get(OUTPUT_DIR_ENV)
    return Path(d) if d else None


def _resolve_out(path: str | None, default_name: str) -> Path | None:
    if path:
        return Path(path)
    base = output_dir()
    return base / default_name if base else None


def _write_text(path: Path | None, text: str) -> None:
    if path is None:
        sys.stdout.write(text)
        return
    try:
        path.parent.mkdir(parents=True, exist_ok=True)
        path.write_text(text)
    except OSError as exc:
        raise IoError(f"cannot write {path}: {exc}") from exc


def _write_csv(path: Path, header: list[str], rows) -> None:
    try:
        path.parent.mkdir(parents=True, exist_ok=True)
        with open(path, "w", newline="") as fh:
            out = csv.writer(fh)
            out.writerow(header)
            out.writerows(rows)
    except OSError as exc:
        raise IoError(f"cannot write {path}: {exc}") from exc


def load_network(path: str) -> FinancialNetwork:
    p = Path(path)
    if not p.is_file():
        raise ConfigError(f"network file not found: {path}")
    try:
        text = p.read_text()
    except OSError as exc:
        raise IoError(f"cannot read {path}: {exc}") from exc
    try:
        return FinancialNetwork.from_dict(json.loads(text))
    except (json.JSONDecodeError, KeyError, TypeError) as exc:
        raise ConfigError(f"{path}: not a network file ({exc})") from exc


def network_topology(path: str) -> TopologySpec | None:
    """Topology tag that ``gen`` stores next to the network, if any."""
    tag = json.loads(Path(path).read_text()).get("topology")
    if not tag:
        return None
    return TopologySpec(tag["variant"], dict(tag.get("params", {})))


def load_vector(path: str, n: int) -> np.ndarray:
    """Injection vector from JSON (a list, or an object with key ``c``) or a
    one-row CSV."""
    p = Path(path)
    if not p.is_file():
        raise ConfigError(f"file not found: {path}")
    text = p.read_text()
    try:
        if p.suffix == ".json":
            data = json.loads(text)
            data = data["c"] if isinstance(data, dict) else data
        else:
            data = [float(v) for row in csv.reader(text.splitlines()) for v in row if v.strip()]
        vec = np.asarray(data, dtype=np.float64)
    except (ValueError, KeyError, TypeError) as exc:
        raise ConfigError(f"{path}: cannot parse a vector ({exc})") from exc
    if vec.shape != (n,):
        raise ConfigError(f"{path}: expected {n} entries, got {vec.size}")
    return vec


def parse_grid(spec: str) -> np.ndarray:
    """``start:step:end`` with ``end`` included."""
    try:
        start, step, end = (float(v) for v in spec.split(":"))
    except ValueError as exc:
        raise ConfigError(f"budget grid must be start:step:end, got {spec!r}") from exc
    if step <= 0 or end < start:
        raise ConfigError(f"empty budget grid {spec!r}")
    k = int(np.floor((end - start) / step + 1e-9))
    return start + step * np.arange(k + 1)


def parse_params(items: list[str] | None) -> dict[str, Any]:
    out = {}
    for item in items or []:
        key, sep, raw = item.partition("=")
        if not sep or not key:
            raise ConfigError(f"parameters are key=value, got {item!r}")
        try:
            out[key] = json.loads(raw)
        except json.JSONDecodeError:
            out[key] = raw
    return out


def parse_sampler(spec: str, net: FinancialNetwork) -> ScenarioSampler:
    """``uniform:a:b``, ``lognormal:mu:sigma`` or ``constant`` (the network's
    own assets)."""
    kind, *args = spec.split(":")
    try:
        if kind == "constant" and not args:
            return ScenarioSampler("constant", np.array(net.e))
        if kind in ("uniform", "lognormal") and len(args) == 2:
            return ScenarioSampler(kind, float(args[0]), float(args[1]))
    except ValueError as exc:
        raise ConfigError(f"bad sampler {spec!r}: {exc}") from exc
    raise ConfigError(f"sampler must be uniform:a:b, lognormal:mu:sigma or constant, got {spec!r}")


def _flags(*metas) -> list[str]:
    out = []
    for m in metas:
        out.extend(m.get("flags", []))
    return sorted(set(out))


def _finish(cfg: RunConfig, record: ResultRecord, flags: list[str], default_name: str) -> int:
    record.diagnostics["flags"] = flags
    _write_text(_resolve_out(cfg.outputs.get("json"), default_name), record.to_json())
    return EXIT_NONCONVERGED if NONCONVERGENCE_FLAGS & set(flags) else EXIT_OK


def _config(args, name: str, params: dict, inputs=None, **outputs) -> RunConfig:
    return RunConfig(subcommand=name, inputs=dict(inputs or {}),
                     params=params, seed=int(getattr(args, "seed", 0) or 0),
                     outputs={k: v for k, v in {"json": args.out, **outputs}.items() if v},
                     deterministic=bool(args.no_timestamp))


# -- subcommands -------------------------------------------------------------------

def cmd_gen(args) -> int:
    params = parse_params(args.param)
    spec = TopologySpec(args.topology, params)
    net = generate(spec, seed=args.seed)
    doc = net.to_dict()
    doc["topology"] = {"variant": args.topology, "params": params, "seed": args.seed}
    name = f"{args.topology}_{args.seed}.json" if args.topology in RANDOM else f"{args.topology}.json"
    _write_text(_resolve_out(args.out, name), _dumps(doc, indent=2) + "\n")
    return EXIT_OK


def cmd_clear(args) -> int:
    net = load_network(args.net)
    c = load_vector(args.inject, net.n) if args.inject else None
    cfg = _config(args, "clear", {"mechanism": args.mechanism, "method": args.method,
                                  "threat": args.threat},
                  inputs={"net": args.net, **({"inject": args.inject} if args.inject else {})},
                  csv=args.csv)
    if args.mechanism == "prop":
        res = clear_proportional(net, c, args.method)
    else:
        res = clear_all_or_nothing(net, c, args.method)
    diag = {}
    if args.threat:
        if args.mechanism != "prop":
            raise ConfigError("the threat index is defined for the proportional mechanism only")
        diag["threat_index"] = threat_index(net, c)
    if args.csv:
        _write_csv(Path(args.csv), ["node", "p", "pbar", "unpaid", "surplus", "default"],
                   [[i, repr(float(res.p[i])), repr(float(res.pbar[i])), repr(float(res.unpaid[i])),
                     repr(float(res.surplus[i])), int(res.default_flags[i])] for i in range(net.n)])
    record = make_record(cfg, clearing=res, diagnostics=diag)
    return _finish(cfg, record, _flags(res.meta), "clear.json")


def cmd_bailout(args) -> int:
    net = load_network(args.net)
    needs_lambda = args.problem == "p1lag"
    if needs_lambda and args.lam is None:
        raise ConfigError("--problem p1lag needs --lambda")
    if not needs_lambda and args.budget is None:
        raise ConfigError(f"--problem {args.problem} needs --budget")
    params = {"problem": args.problem, "budget": args.budget, "lambda": args.lam,
              "rel_gap": args.rel_gap, "node_limit": args.node_limit, "lp_method": args.lp_method}
    cfg = _config(args, "bailout", params, inputs={"net": args.net})
    diag = {}
    if args.problem == "p1":
        plan, res = solve_problem1(net, args.budget, method=args.lp_method)
    elif args.problem == "p1lag":
        plan, res = solve_problem1_lagrangian(net, args.lam, method=args.lp_method)
    elif args.problem == "demange":
        plan, res = solve_problem1_demange(net, args.budget)
    elif args.problem == "p3":
        plan, res, d = solve_problem3(net, args.budget, rel_gap=args.rel_gap or 1e-6,
                                      node_limit=args.node_limit, keep_incumbent=True)
        diag["default_indicator"] = d
    else:
        plan, res, d = solve_problem1_aon(net, args.budget, rel_gap=args.rel_gap or 1e-4,
                                          node_limit=args.node_limit, keep_incumbent=True)
        diag["default_indicator"] = d
    record = make_record(cfg, plan, res, diag)
    return _finish(cfg, record, _flags(plan.meta, res.meta), "bailout.json")


def _rw_config(args) -> ReweightConfig:
    return ReweightConfig(eps=args.eps, delta=args.delta, restarts=args.restarts,
                          max_iter=args.max_iter, seed=args.seed)


def cmd_mindefaults(args) -> int:
    if (args.budget is None) == (args.budget_grid is None):
        raise ConfigError("give exactly one of --budget and --budget-grid")
    net = load_network(args.net)
    topo = network_topology(args.net)
    rw_cfg = _rw_config(args)
    algos = ["rw", "greedy"] if args.algo == "both" else [args.algo]
    params = {"algo": args.algo, "eps": args.eps, "delta": args.delta, "restarts": args.restarts,
              "max_iter": args.max_iter, "budget": args.budget, "budget_grid": args.budget_grid}
    cfg = _config(args, "mindefaults", params, inputs={"net": args.net}, csv=args.csv)
    oracle = _oracle(topo)
    runners = {"rw": lambda C: minimize_defaults_rw(net, C, rw_cfg),
               "greedy": lambda C: minimize_defaults_greedy(net, C)}
    if args.budget is not None:
        diag, flags = {}, []
        plan = res = None
        for a in algos:
            plan, res = runners[a](args.budget)
            diag[a] = {"N_d": res.n_defaults, "c": plan.c, "meta": plan.meta}
            flags += _flags(plan.meta)
        if oracle:
            diag["oracle"] = oracle(args.budget)
        record = make_record(cfg, plan, res, diag)
        return _finish(cfg, record, sorted(set(flags)), "mindefaults.json")

    grid = parse_grid(args.budget_grid)
    header = ["C", "no_injection"] + (["oracle"] if oracle else []) + algos
    base = clear_proportional(net).n_defaults
    rows, flags = [], []
    for C in grid:
        row = [repr(float(C)), base] + ([oracle(C)] if oracle else [])
        for a in algos:
            plan, res = runners[a](C)
            row.append(res.n_defaults)
            flags += _flags(plan.meta)
        rows.append(row)
    path = Path(args.csv) if args.csv else _resolve_out(None, "mindefaults.csv") or Path("mindefaults.csv")
    _write_csv(path, header, rows)
    record = make_record(cfg, diagnostics={"table": str(path), "header": header, "rows": rows})
    return _finish(cfg, record, sorted(set(flags)), "mindefaults.json")


def _oracle(topo: TopologySpec | None) -> Callable[[float], int] | None:
    if topo is None:
        return None
    try:
        oracle_Nd(topo, 0.0)
    except UnsupportedVariant:
        return None
    return lambda C: oracle_Nd(topo, C)


def cmd_stochastic(args) -> int:
    net = load_network(args.net)
    from_file = Path(args.scenarios).is_file()
    params = {"solver": args.solver, "budget": args.budget, "scenarios": args.scenarios,
              "samples": args.samples, "tol": args.tol, "iters": args.iters, "gamma0": args.gamma0}
    inputs = {"net": args.net, **({"scenarios": args.scenarios} if from_file else {})}
    cfg = _config(args, "stochastic", params, inputs=inputs)
    diag = {}
    if args.solver == "sgd":
        if from_file:
            raise ConfigError("sgd draws fresh scenarios; give a sampler spec, not a file")
        sampler = parse_sampler(args.scenarios, net)
        plan, trace = solve_saa_sgd(net, sampler, args.budget, iters=args.iters,
                                    gamma0=args.gamma0, seed=args.seed)
        diag["sampled_W_tail_mean"] = plan.objective
        diag["budget_trace_last"] = trace["budget"][-1]
    else:
        if from_file:
            batch = ScenarioBatch.from_csv(args.scenarios)
        else:
            batch = ScenarioBatch.sample(parse_sampler(args.scenarios, net), net.n,
                                         args.samples, seed=args.seed)
        if args.write_scenarios:
            try:
                batch.to_csv(args.write_scenarios)
            except OSError as exc:
                raise IoError(f"cannot write {args.write_scenarios}: {exc}") from exc
        if args.solver == "direct":
            plan, W = solve_saa_direct(net, batch, args.budget)
        else:
            plan, state = solve_saa_benders(net, batch, args.budget, tol=args.tol)
            W = None
            diag["history"] = state.history
        if W is not None:
            diag["scenario_W"] = W
    res = clear_proportional(net, plan.c)
    record = make_record(cfg, plan, res, diag)
    return _finish(cfg, record, _flags(plan.meta), "stochastic.json")


def cmd_distsim(args) -> int:
    net = load_network(args.net)
    if args.algo == "Aprime":
        if args.lam is None:
            raise ConfigError("--algo Aprime needs --lambda")
    elif args.budget is None:
        raise ConfigError(f"--algo {args.algo} needs --budget")
    trace_every = args.trace_every if args.trace else 0
    dcfg = DistConfig(alpha=args.alpha, beta=args.beta, delta1=args.tol1, delta2=args.tol2,
                      max_rounds=args.max_rounds, trace_every=trace_every)
    params = {"algo": args.algo, "budget": args.budget, "lambda": args.lam, "alpha": args.alpha,
              "beta": args.beta, "tol1": args.tol1, "tol2": args.tol2,
              "max_rounds": args.max_rounds, "trace_every": trace_every, "engine": args.engine}
    cfg = _config(args, "distsim", params, inputs={"net": args.net}, trace=args.trace)
    diag = {}
    if args.algo == "P":
        plan, trace = run_algorithm_P(net, args.budget, dcfg)
        res = clear_proportional(net, plan.c)
        if args.trace:
            _write_csv(Path(args.trace), ["inner_iteration", "dual_objective"],
                       [[k, repr(v)] for k, v in enumerate(trace.residual)])
    else:
        if args.algo == "A":
            plan, res, trace = run_algorithm_A(net, args.budget, dcfg, engine=args.engine)
        else:
            plan, res, trace = run_algorithm_A_prime(net, args.lam, dcfg, engine=args.engine)
        plan.meta.pop("state", None)
        if args.trace:
            try:
                trace.to_csv(args.trace)
            except OSError as exc:
                raise IoError(f"cannot write {args.trace}: {exc}") from exc
        diag["messages"] = trace.message_counts
    diag["rounds"] = plan.meta["rounds"]
    record = make_record(cfg, plan, res, diag)
    return _finish(cfg, record, _flags(plan.meta), "distsim.json")


# -- figure harness ----------------------------------------------------------------

def _sweep(net, grid, oracle, cfg):
    rows = []
    for C in grid:
        rw = minimize_defaults_rw(net, C, cfg)[1].n_defaults
        gr = minimize_defaults_greedy(net, C)[1].n_defaults
        rows.append([repr(float(C)), oracle(C) if oracle else "", rw, gr])
    return ["C", "oracle", "reweighted", "greedy"], rows


def _mean_se(values):
    a = np.asarray(values, dtype=np.float64)
    se = a.std(ddof=1) / np.sqrt(a.size) if a.size > 1 else 0.0
    return a.mean(), se


def _random_sweep(variant, grid, seeds, cfg):
    per = {C: ([], []) for C in grid}
    for seed in range(seeds):
        net = generate(TopologySpec(variant), seed=seed)
        for C in grid:
            per[C][0].append(minimize_defaults_rw(net, C, cfg)[1].n_defaults)
            per[C][1].append(minimize_defaults_greedy(net, C)[1].n_defaults)
    header = ["C", "reweighted_mean", "reweighted_lo", "reweighted_hi",
              "greedy_mean", "greedy_lo", "greedy_hi"]
    rows = []
    for C in grid:
        row = [repr(float(C))]
        for vals in per[C]:
            m, se = _mean_se(vals)
            row += [repr(float(m)), repr(float(m - 2 * se)), repr(float(m + 2 * se))]
        rows.append(row)
    return header, rows


def _relative_error(a, b):
    return abs(a - b) / max(abs(b), 1e-300)


SWEEPS = {
    "fig2": (TopologySpec("binary_tree", {"S": 10}), "0:16:2048"),
    "fig4": (TopologySpec("cycle_star", {"M": 100, "a": 10.0}), "0:10:1000"),
    "fig6": (TopologySpec("core_periphery_fixed"), "0:10:700"),
}
RANDOM_SWEEPS = {
    "fig7": ("random_dense", "0:2:60"),
    "fig8": ("random_core_periphery", "0:2:80"),
    "fig9": ("random_cp_chains", "0:2:80"),
}


def reproduce(figure: str, seed: int = 0, *, outdir: Path, seeds: int | None = None,
              grid: str | None = None, budget: float | None = None) -> dict[str, Any]:
    """Write the table for ``figure`` under ``outdir`` and return a summary."""
    if figure not in FIGURES:
        raise UnknownFigure(f"unknown figure {figure!r}; choose from {', '.join(FIGURES)}")
    cfg = ReweightConfig(seed=seed)
    csv_path = outdir / f"{figure}.csv"
    try:
        outdir.mkdir(parents=True, exist_ok=True)
    except OSError as exc:
        raise IoError(f"cannot create {outdir}: {exc}") from exc
    summary: dict[str, Any] = {"figure": figure, "table": str(csv_path)}

    if figure in SWEEPS:
        spec, default_grid = SWEEPS[figure]
        net = generate(spec)
        header, rows = _sweep(net, parse_grid(grid or default_grid), lambda C: oracle_Nd(spec, C), cfg)
        summary["points"] = len(rows)
    elif figure in RANDOM_SWEEPS:
        variant, default_grid = RANDOM_SWEEPS[figure]
        seeds = 100 if seeds is None else seeds
        header, rows = _random_sweep(variant, parse_grid(grid or default_grid), seeds, cfg)
        summary.update(points=len(rows), seeds=seeds)
    elif figure == "milp_cp":
        seeds = 100 if seeds is None else seeds
        C = 300.0 if budget is None else budget
        header = ["seed", "objective", "bound", "gap", "nodes"]
        rows = []
        for s in range(seed, seed + seeds):
            net = generate(TopologySpec("cvx_core_periphery", {"w_core": 10.0}), seed=s)
            plan, _, _ = solve_problem1_aon(net, C, 1e-4)
            rows.append([s, repr(plan.objective), repr(plan.meta["bound"]), repr(plan.meta["gap"]),
                         plan.meta["nodes"]])
        summary.update(budget=C, max_gap=max(float(r[3]) for r in rows))
    elif figure == "dist_fourNode":
        net = generate(TopologySpec("four_node", {"w": 0.45}))
        plan, res, trace = run_algorithm_A_prime(net, 1.0, DistConfig(trace_every=10))
        trace.to_csv(csv_path)
        summary.update(rounds=plan.meta["rounds"], c=plan.c, p=res.p, objective=plan.objective)
        return summary
    else:  # dist_cp
        seeds = 10 if seeds is None else seeds
        header = ["seed", "rounds", "distributed_cost", "centralized_cost", "relative_error"]
        rows = []
        dcfg = DistConfig(beta=0.01, delta1=1e-3, delta2=1e-3)
        for s in range(seed, seed + seeds):
            spec = TopologySpec("cvx_core_periphery",
                                {"core": 5, "periphery": 20, "w_core": 0.3, "w_periph": 0.3})
            net = generate(spec, seed=s)
            plan, _, _ = run_algorithm_A_prime(net, 1.0, dcfg)
            central = solve_problem1_lagrangian(net, 1.0)[0].objective
            rows.append([s, plan.meta["rounds"], repr(plan.objective), repr(central),
                         repr(_relative_error(plan.objective, central))])
        summary["max_relative_error"] = max(float(r[4]) for r in rows)
        summary["mean_rounds"] = float(np.mean([r[1] for r in rows]))
    _write_csv(csv_path, header, rows)
    return summary


def cmd_reproduce(args) -> int:
    outdir = Path(args.outdir) if args.outdir else (output_dir() or Path("results"))
    cfg = _config(args, "reproduce", {"figure": args.figure, "seeds": args.seeds, "grid": args.grid,
                                      "budget": args.budget}, outdir=str(outdir))
    summary = reproduce(args.figure, args.seed, outdir=outdir, seeds=args.seeds, grid=args.grid,
                        budget=args.budget)
    record = make_record(cfg, diagnostics=summary)
    record.diagnostics["flags"] = []
    _write_text(Path(args.out) if args.out else outdir / f"{args.figure}.json", record.to_json())
    return EXIT_OK


# -- parser ------------------------------------------------------------------------

def _common(p: argparse.ArgumentParser, seed: bool = True) -> None:
    p.add_argument("--out", help=f"result JSON path (default: ${OUTPUT_DIR_ENV}/<name>.json, "
                                 "or stdout when the variable is unset)")
    p.add_argument("--no-timestamp", action="store_true",
                   help="omit the wall-clock timestamp so output is byte-reproducible")
    if seed:
        p.add_argument("--seed", type=int, default=0, help="random seed (default 0)")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="finrescue",
        description="Clearing and cash-injection tools for interbank networks.",
        epilog=f"Exit codes: 0 ok, 2 configuration error, 3 I/O error, 4 solver failure, "
               f"5 non-convergence (best-effort result still written). "
               f"${OUTPUT_DIR_ENV} sets the default output directory.")
    parser.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    sub = parser.add_subparsers(dest="command", required=True, metavar="COMMAND")

    p = sub.add_parser("gen", help="generate a network file")
    p.add_argument("--topology", required=True, choices=sorted(DETERMINISTIC + RANDOM),
                   help="network family")
    p.add_argument("--param", action="append", metavar="KEY=VALUE",
                   help="generator parameter, repeatable (e.g. S=10, n=200, w_core=10)")
    _common(p)
    p.set_defaults(func=cmd_gen)

    p = sub.add_parser("clear", help="compute a clearing payment vector")
    p.add_argument("--net", required=True, help="network JSON file")
    p.add_argument("--mechanism", choices=["prop", "aon"], default="prop",
                   help="proportional or all-or-nothing payments (default prop)")
    p.add_argument("--method", choices=["fp", "fd", "lp"], default="fp",
                   help="fixed point, fictitious default or LP/MILP (default fp)")
    p.add_argument("--inject", help="injection vector file (.json list or one-row CSV)")
    p.add_argument("--threat", action="store_true",
                   help="also report each node's threat index (proportional only)")
    p.add_argument("--csv", help="per-node table output")
    _common(p, seed=False)
    p.set_defaults(func=cmd_clear)

    p = sub.add_parser("bailout", help="optimal cash injection")
    p.add_argument("--net", required=True, help="network JSON file")
    p.add_argument("--problem", required=True, choices=["p1", "p1lag", "p3", "p1aon", "demange"],
                   help="p1: budgeted LP; p1lag: priced cash; p3: linear bankruptcy costs; "
                        "p1aon: all-or-nothing MILP; demange: threat-index baseline")
    p.add_argument("--budget", type=float, help="total cash C")
    p.add_argument("--lambda", dest="lam", type=float, help="price of one unit of cash")
    p.add_argument("--rel-gap", type=float, help="certified relative gap for the MILPs "
                                                  "(default 1e-6 for p3, 1e-4 for p1aon)")
    p.add_argument("--node-limit", type=int, default=20000, help="branch-and-bound node limit")
    p.add_argument("--lp-method", choices=["highs", "simplex"], default="highs",
                   help="LP backend for p1 and p1lag")
    _common(p, seed=False)
    p.set_defaults(func=cmd_bailout)

    p = sub.add_parser("mindefaults", help="minimise the number of defaulting nodes")
    p.add_argument("--net", required=True, help="network JSON file")
    p.add_argument("--budget", type=float, help="single budget")
    p.add_argument("--budget-grid", metavar="START:STEP:END", help="sweep budgets, write CSV")
    p.add_argument("--algo", choices=["rw", "greedy", "both"], default="both",
                   help="reweighted l1, greedy or both (default both)")
    p.add_argument("--restarts", type=int, default=6, help="reweighting initialisations")
    p.add_argument("--eps", type=float, default=1e-3, help="reweighting epsilon")
    p.add_argument("--delta", type=float, default=1e-6, help="reweighting stop tolerance")
    p.add_argument("--max-iter", type=int, default=200, help="reweighting iterations per start")
    p.add_argument("--csv", help="sweep table path (default $%s/mindefaults.csv)" % OUTPUT_DIR_ENV)
    _common(p)
    p.set_defaults(func=cmd_mindefaults)

    p = sub.add_parser("stochastic", help="injection under random external assets")
    p.add_argument("--net", required=True, help="network JSON file")
    p.add_argument("--budget", type=float, required=True, help="total cash C")
    p.add_argument("--solver", choices=["direct", "benders", "sgd"], default="benders",
                   help="sample-average LP, Benders cuts or stochastic subgradient")
    p.add_argument("--scenarios", required=True,
                   help="CSV file of asset rows, or a sampler: uniform:a:b, lognormal:mu:sigma, "
                        "constant")
    p.add_argument("--samples", type=int, default=50, help="scenarios drawn from a sampler")
    p.add_argument("--tol", type=float, default=1e-8, help="Benders relative gap")
    p.add_argument("--iters", type=int, default=2000, help="subgradient iterations")
    p.add_argument("--gamma0", type=float, help="subgradient step scale (default C/max w)")
    p.add_argument("--write-scenarios", help="save the sampled batch as CSV")
    _common(p)
    p.set_defaults(func=cmd_stochastic)

    p = sub.add_parser("distsim", help="simulate the distributed algorithms")
    p.add_argument("--net", required=True, help="network JSON file")
    p.add_argument("--algo", choices=["P", "A", "Aprime"], required=True,
                   help="P: two-stage reference; A: budgeted; Aprime: priced cash")
    p.add_argument("--budget", type=float, help="total cash C (P and A)")
    p.add_argument("--lambda", dest="lam", type=float, help="cash price (Aprime)")
    p.add_argument("--alpha", type=float, default=0.1, help="budget price step")
    p.add_argument("--beta", type=float, default=0.1, help="node price step")
    p.add_argument("--tol1", type=float, default=1e-6, help="payment anchor stop tolerance")
    p.add_argument("--tol2", type=float, default=1e-6, help="cash anchor stop tolerance")
    p.add_argument("--max-rounds", type=int, default=5_000_000, help="round limit")
    p.add_argument("--engine", choices=["fast", "bus"], default="fast",
                   help="compiled kernel or explicit message bus")
    p.add_argument("--trace", help="trace CSV: round,node,p,c,q,lambda (P: dual objective)")
    p.add_argument("--trace-every", type=int, default=100, help="rounds between trace rows")
    _common(p, seed=False)
    p.set_defaults(func=cmd_distsim)

    p = sub.add_parser("reproduce", help="regenerate an experiment table")
    p.add_argument("figure", help="one of: " + ", ".join(FIGURES))
    p.add_argument("--outdir", help=f"table directory (default ${OUTPUT_DIR_ENV} or ./results)")
    p.add_argument("--seeds", type=int, help="random samples (default 100; dist_cp 10)")
    p.add_argument("--grid", metavar="START:STEP:END", help="override the budget grid")
    p.add_argument("--budget", type=float, help="budget for milp_cp (default 300)")
    _common(p)
    p.set_defaults(func=cmd_reproduce)
    return parser


def run(argv: list[str] | None = None) -> int:
    args = build_parser().parse_args(argv)
    try:
        return args.func(args)
    except (ConfigError, InvalidParameter, NetworkError) as exc:
        code, msg = EXIT_CONFIG, exc
    except (IoError, OSError) as exc:
        code, msg = EXIT_IO, exc
    except SolverFailure as exc:
        code, msg = EXIT_SOLVER, exc
    except FinRescueError as exc:
        code, msg = EXIT_CONFIG, exc
    print(f"finrescue: error: {msg}", file=sys.stderr)
    return code


def main(argv: list[str] | None = None) -> None:
    sys.exit(run(argv))


if __name__ == "__main__":
    main()
