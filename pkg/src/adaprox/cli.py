"""Config-driven experiment runner.

    adaprox solve  --config run.json [--out DIR] [--seed N] [--literal-condition] [--probes K]
    adaprox sweep  --config sweep.json [--out DIR] ...
    adaprox report --out DIR            (or --summary path/to/summary.csv)

Exit codes: 0 ok, 2 config/parse error, 3 a run hit its iteration cap
(artifacts are still written), 4 I/O error, 5 backtracking diverged.
The config schema is documented in README.md.
"""
import argparse
import csv
import json
import math
import os
import sys
import time
from dataclasses import dataclass, field

import numpy as np

from .benchmarks import (
    FTS_DEFAULT_SEED,
    fts_reference_instance,
    fts_saddle,
    holder_vi,
    load_instance,
    matrix_game,
    random_affine_vi,
    random_mixed_vi,
)
from .certificates import equilibrium_residual, saddle_gap, vi_dual_gap
from .geometry import Ball, make_setup
from .models import SaddleModel
from .solver import SmoothnessOverflowError, SolverConfig, run, theoretical_bound

TRACE_FIELDS = ["k", "L_k", "S_k", "prox_calls", "condition_retries"]
SUMMARY_FIELDS = [
    "epsilon",
    "N",
    "total_prox_calls",
    "wall_time",
    "certified_bound",
    "measured_gap",
    "gap_method",
    "stop_reason",
]
EXIT_OK, EXIT_PARSE, EXIT_CAP, EXIT_IO, EXIT_DIVERGED = 0, 2, 3, 4, 5


class ConfigError(ValueError):
    pass


@dataclass
class ExperimentConfig:
    problem: dict
    setup: str = "euclidean"
    epsilons: list = field(default_factory=list)
    L0: float = 1.0
    delta: float = 0.0
    delta_per_epsilon: float = 0.0
    delta_tilde: float = 0.0
    max_outer_iterations: int = 100_000
    seed: int = 0
    literal_condition: bool = False
    probes: int = 10_000
    out: str = "adaprox-out"

    def resolved(self):
        return {
            "problem": self.problem,
            "setup": self.setup,
            "solver": {
                "epsilons": self.epsilons,
                "L0": self.L0,
                "delta": self.delta,
                "delta_per_epsilon": self.delta_per_epsilon,
                "delta_tilde": self.delta_tilde,
                "max_outer_iterations": self.max_outer_iterations,
                "seed": self.seed,
                "literal_condition": self.literal_condition,
            },
            "probes": self.probes,
            "output": {"dir": self.out},
        }


def _num(d, key, default, *, integer=False, minimum=0.0, strict=False):
    v = d.get(key, default)
    kind = int if integer else (int, float)
    if isinstance(v, bool) or not isinstance(v, kind) or not math.isfinite(v):
        raise ConfigError(f"{key} must be a finite number, got {v!r}")
    if v < minimum or (strict and v == minimum):
        raise ConfigError(f"{key} must be {'>' if strict else '>='} {minimum}, got {v!r}")
    return v


def parse_config(raw, *, verb, base_dir=".", overrides=None):
    """Validate a config mapping and return an :class:`ExperimentConfig`."""
    overrides = overrides or {}
    if not isinstance(raw, dict):
        raise ConfigError("config must be a JSON object")
    problem = raw.get("problem")
    if not isinstance(problem, dict) or not ("name" in problem or "file" in problem):
        raise ConfigError("config.problem must be an object with 'name' or 'file'")
    problem = dict(problem)
    if "file" in problem and not os.path.isabs(problem["file"]):
        problem["file"] = os.path.join(base_dir, problem["file"])
    solver = raw.get("solver", {})
    if not isinstance(solver, dict):
        raise ConfigError("config.solver must be an object")

    if verb == "solve":
        if "epsilon" not in solver:
            raise ConfigError("solve needs solver.epsilon")
        epsilons = [_num(solver, "epsilon", None, strict=True)]
    else:
        if "epsilons" not in solver:
            raise ConfigError("sweep needs solver.epsilons")
        epsilons = solver["epsilons"]
        if not isinstance(epsilons, list) or not epsilons:
            raise ConfigError("solver.epsilons must be a non-empty list")
        epsilons = [_num({"epsilon": e}, "epsilon", None, strict=True) for e in epsilons]
        if any(b >= a for a, b in zip(epsilons, epsilons[1:])):
            raise ConfigError("solver.epsilons must be strictly decreasing")

    setup = raw.get("setup", "euclidean")
    if setup not in ("euclidean", "entropy"):
        raise ConfigError(f"unknown setup {setup!r}")
    out = overrides.get("out") or raw.get("output", {}).get("dir", "adaprox-out")
    cfg = ExperimentConfig(
        problem=problem,
        setup=setup,
        epsilons=epsilons,
        L0=_num(solver, "L0", 1.0, strict=True),
        delta=_num(solver, "delta", 0.0),
        delta_per_epsilon=_num(solver, "delta_per_epsilon", 0.0),
        delta_tilde=_num(solver, "delta_tilde", 0.0),
        max_outer_iterations=_num(solver, "max_outer_iterations", 100_000, integer=True, minimum=1),
        seed=_num(solver, "seed", 0, integer=True),
        literal_condition=bool(solver.get("literal_condition", False)),
        probes=_num(raw, "probes", 10_000, integer=True, minimum=1),
        out=out,
    )
    if overrides.get("seed") is not None:
        cfg.seed = overrides["seed"]
    if overrides.get("literal_condition"):
        cfg.literal_condition = True
    if overrides.get("probes") is not None:
        cfg.probes = overrides["probes"]
    return cfg


@dataclass
class Problem:
    model: object
    feasible_set: object
    x0: np.ndarray = None
    gap: callable = None
    meta: dict = field(default_factory=dict)


def build_problem(cfg, delta):
    """Turn ``cfg.problem`` into a model, feasible set and gap evaluator."""
    p = cfg.problem
    seed = p.get("seed", cfg.seed)
    name = p.get("name")
    if "file" in p:
        with open(p["file"]) as fh:
            kind = json.load(fh).get("kind")
        if kind == "fts":
            inst = load_instance(p["file"])
            return _fts_problem(inst, delta, cfg, p)
        if kind == "matrix_game":
            return _game_problem(load_instance(p["file"]), delta)
        raise ConfigError(f"unknown instance kind {kind!r} in {p['file']}")
    if name == "matrix_game":
        if "matrix" not in p:
            raise ConfigError("matrix_game needs 'matrix'")
        return _game_problem(p["matrix"], delta)
    if name == "fts":
        inst = fts_reference_instance(seed=p.get("seed", FTS_DEFAULT_SEED), m=p.get("m", 100))
        return _fts_problem(inst, delta, cfg, p)
    if name == "affine_vi":
        vi = random_affine_vi(
            int(p.get("dim", 10)),
            seed,
            set_kind=p.get("set", "ball"),
            lipschitz=float(p.get("lipschitz", 1.0)),
        )
        model = vi.model(delta)

        def gap(y):
            return vi_dual_gap(vi.operator, vi.feasible_set, y, "exact", affine=(vi.A, vi.b))

        return Problem(model, vi.feasible_set, gap=gap, meta={"lipschitz": vi.lipschitz})
    if name == "holder_vi":
        model = holder_vi(
            float(p.get("nu", 1.0)),
            float(p.get("scale", 1.0)),
            int(p.get("dim", 5)),
            seed,
            skew=float(p.get("skew", 0.0)),
            delta=delta,
        )
        Q = Ball.unit(int(p.get("dim", 5)))
        return Problem(model, Q, gap=_residual_gap(model, Q, cfg))
    if name == "mixed_vi":
        model, Q, _ = random_mixed_vi(
            int(p.get("dim", 5)), seed, l1_weight=float(p.get("l1_weight", 0.3)), delta=delta
        )
        return Problem(model, Q, gap=_residual_gap(model, Q, cfg))
    raise ConfigError(f"unknown problem {name!r}")


def _residual_gap(model, Q, cfg):
    def gap(y):
        return equilibrium_residual(model, Q, y, cfg.probes, rng=cfg.seed)

    return gap


def _game_problem(matrix, delta):
    try:
        game = matrix_game(matrix, delta)
    except ValueError as exc:
        raise ConfigError(str(exc)) from exc

    def gap(y):
        u, v = game.split_point(y)
        return saddle_gap(game, u, v, "exact")

    return Problem(game, game.feasible_set, gap=gap)


def _fts_problem(inst, delta, cfg, p):
    model = fts_saddle(inst, delta, literal_operator=bool(p.get("literal_operator", False)))
    return Problem(
        model,
        model.feasible_set,
        x0=inst.x0,
        gap=_residual_gap(model, model.feasible_set, cfg),
        meta={"n": inst.n, "m": inst.m, "seed": inst.seed},
    )


def _fmt(v):
    if isinstance(v, float):
        return repr(v)
    return str(v)


def write_trace(path, trace):
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(TRACE_FIELDS)
        for r in trace.records:
            w.writerow([r.index, repr(r.L), repr(r.S), r.prox_calls, r.condition_checks - 1])


def write_summary(path, rows):
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(SUMMARY_FIELDS)
        for row in rows:
            w.writerow([_fmt(row[k]) for k in SUMMARY_FIELDS])


_SUMMARY_TYPES = {
    "epsilon": float,
    "N": int,
    "total_prox_calls": int,
    "wall_time": float,
    "certified_bound": float,
    "measured_gap": float,
    "gap_method": str,
    "stop_reason": str,
}


def read_summary(path):
    with open(path, newline="") as fh:
        reader = csv.DictReader(fh)
        if reader.fieldnames != SUMMARY_FIELDS:
            raise ConfigError(f"{path} is not a summary table")
        return [{k: _SUMMARY_TYPES[k](row[k]) for k in SUMMARY_FIELDS} for row in reader]


def solve_one(cfg, epsilon):
    """Run one epsilon; returns ``(trace, summary_row)``."""
    delta = cfg.delta + cfg.delta_per_epsilon * epsilon
    problem = build_problem(cfg, delta)
    setup = make_setup(cfg.setup)
    config = SolverConfig(
        epsilon=epsilon,
        L0=cfg.L0,
        delta_tilde=cfg.delta_tilde,
        max_outer_iterations=cfg.max_outer_iterations,
        x0=problem.x0,
        literal_condition=cfg.literal_condition,
        seed=cfg.seed,
    )
    t0 = time.perf_counter()
    trace = run(problem.model, problem.feasible_set, setup, config)
    wall = time.perf_counter() - t0
    import warnings

    with warnings.catch_warnings():
        warnings.simplefilter("ignore")
        bound = theoretical_bound(trace)
    report = problem.gap(trace.ergodic_point)
    row = {
        "epsilon": float(epsilon),
        "N": trace.n_iter,
        "total_prox_calls": trace.total_prox_calls,
        "wall_time": float(wall),
        "certified_bound": float(bound),
        "measured_gap": float(report.measured_gap),
        "gap_method": report.method,
        "stop_reason": trace.stop_reason,
    }
    return trace, row


def scaling_report(rows):
    """Least-squares slope ``p`` of ``log N`` against ``log(1/epsilon)``."""
    if len(rows) < 3:
        raise ValueError("scaling report needs at least 3 summary rows")
    x = np.log([1.0 / r["epsilon"] for r in rows])
    y = np.log([r["N"] for r in rows])
    p, _ = np.polyfit(x, y, 1)
    return float(p)


def _write_metadata(out, cfg, verb):
    meta = {"verb": verb, "config": cfg.resolved()}
    with open(os.path.join(out, "metadata.json"), "w") as fh:
        json.dump(meta, fh, indent=1, sort_keys=True)
        fh.write("\n")


def run_experiment(config_path, verb="sweep", *, out=None, seed=None, literal_condition=False, probes=None, log=None):
    """Run ``solve`` or ``sweep`` from a config file; returns an exit status."""
    log = log or (lambda msg: print(msg, file=sys.stderr))
    try:
        with open(config_path) as fh:
            raw = json.load(fh)
    except OSError as exc:
        log(f"cannot read config: {exc}")
        return EXIT_IO
    except json.JSONDecodeError as exc:
        log(f"config parse error: {exc}")
        return EXIT_PARSE
    try:
        cfg = parse_config(
            raw,
            verb=verb,
            base_dir=os.path.dirname(os.path.abspath(config_path)),
            overrides={"out": out, "seed": seed, "literal_condition": literal_condition, "probes": probes},
        )
        build_problem(cfg, cfg.delta)  # fail fast on a bad problem spec
    except (ConfigError, ValueError, KeyError, TypeError) as exc:
        log(f"config error: {exc}")
        return EXIT_PARSE
    except OSError as exc:
        log(f"cannot read instance: {exc}")
        return EXIT_IO

    rows = []
    status = EXIT_OK
    try:
        os.makedirs(cfg.out, exist_ok=True)
        _write_metadata(cfg.out, cfg, verb)
        for i, eps in enumerate(cfg.epsilons):
            try:
                trace, row = solve_one(cfg, eps)
            except SmoothnessOverflowError as exc:
                log(f"epsilon={eps!r}: {exc}")
                write_summary(os.path.join(cfg.out, "summary.csv"), rows)
                return EXIT_DIVERGED
            name = "trace.csv" if verb == "solve" else f"trace_{i:02d}.csv"
            write_trace(os.path.join(cfg.out, name), trace)
            rows.append(row)
            log(
                f"epsilon={eps:.6g} N={row['N']} prox_calls={row['total_prox_calls']} "
                f"bound={row['certified_bound']:.4g} gap={row['measured_gap']:.4g} ({row['gap_method']})"
            )
            if trace.stop_reason == "iteration_cap":
                status = EXIT_CAP
        write_summary(os.path.join(cfg.out, "summary.csv"), rows)
    except OSError as exc:
        log(f"I/O error: {exc}")
        return EXIT_IO
    return status


def report(summary_path, *, log=None):
    log = log or print
    try:
        rows = read_summary(summary_path)
    except OSError as exc:
        log(f"cannot read summary: {exc}")
        return EXIT_IO, None
    except (ConfigError, ValueError, KeyError) as exc:
        log(f"summary parse error: {exc}")
        return EXIT_PARSE, None
    try:
        p = scaling_report(rows)
    except ValueError as exc:
        log(str(exc))
        return EXIT_PARSE, None
    result = {"scaling_exponent": p, "rows": len(rows)}
    try:
        with open(os.path.join(os.path.dirname(os.path.abspath(summary_path)), "report.json"), "w") as fh:
            json.dump(result, fh, indent=1, sort_keys=True)
            fh.write("\n")
    except OSError as exc:
        log(f"I/O error: {exc}")
        return EXIT_IO, result
    log(f"N ~ (1/epsilon)^p with p = {p:.4f} over {len(rows)} runs")
    return EXIT_OK, result


def build_parser():
    parser = argparse.ArgumentParser(prog="adaprox", description=__doc__.splitlines()[0])
    sub = parser.add_subparsers(dest="verb", required=True)
    for verb in ("solve", "sweep"):
        sp = sub.add_parser(verb)
        sp.add_argument("--config", required=True)
        sp.add_argument("--out")
        sp.add_argument("--seed", type=int)
        sp.add_argument("--literal-condition", action="store_true")
        sp.add_argument("--probes", type=int)
    rp = sub.add_parser("report")
    rp.add_argument("--out", help="directory containing summary.csv")
    rp.add_argument("--summary", help="path to a summary.csv")
    return parser


def main(argv=None):
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return EXIT_PARSE if exc.code else EXIT_OK
    if args.verb == "report":
        path = args.summary or (os.path.join(args.out, "summary.csv") if args.out else None)
        if path is None:
            print("report needs --out or --summary", file=sys.stderr)
            return EXIT_PARSE
        status, _ = report(path)
        return status
    return run_experiment(
        args.config,
        args.verb,
        out=args.out,
        seed=args.seed,
        literal_condition=args.literal_condition,
        probes=args.probes,
    )


if __name__ == "__main__":
    sys.exit(main())
