"""Command-line front end: ``pmcgd {check,eval,gradient,derive,solve,bench}``."""

from __future__ import annotations

import argparse
import configparser
import csv
import json
import logging
import os
import re
import sys
import time
from pathlib import Path

import numpy as np

from . import __version__
from .descent import METHODS, RESTRICTIONS, DescentConfig, feasibility_search
from .errors import ConfigError, PmcError
from .gradient import PmcObjective, finite_difference, gradient_eqsys, gradient_via_derived, make_pmc_objective
from .linsolve import BACKENDS, DEFAULT_TOL
from .model import GeneratorSpec, Pmc, Region, derived_automaton, generate_synthetic, preprocess, reachability_to_reward
from .textio import PropertyQuery, export_dot, parse_model, parse_property, parse_region, serialize_model

log = logging.getLogger("pmcgd")

EXIT_OK, EXIT_ERROR, EXIT_EXHAUSTED = 0, 1, 2

BENCH_FIELDS = ["model", "method", "restriction", "lr", "seed", "status", "value", "iterations",
                "restarts", "gradient_solves", "wall_time", "final_mu", "verified", "u_found", "message"]
SCATTER_FIELDS = ["model", "seed", "baseline_wall_time", "wall_time", "baseline_status", "status"]
BASELINE = "momentum-sign/projection"
VERIFY_TOL = 1e-8


# -- shared loading -----------------------------------------------------------------


def _read(path: str) -> str:
    try:
        return Path(path).read_text()
    except OSError as exc:
        raise PmcError(f"cannot read {path}: {exc.strerror}") from exc


def load_model(path: str) -> tuple[Pmc, float]:
    """Parse and preprocess; returns the model and the preprocessing time."""
    t0 = time.perf_counter()
    raw, targets = parse_model(_read(path))
    pmc = preprocess(raw, targets, require_almost_sure=False)
    return pmc, time.perf_counter() - t0


def load_region(path: str | None, pmc: Pmc) -> Region:
    if path is None:
        return Region.default(pmc.params)
    return parse_region(_read(path), pmc.params)


def load_property(text: str | None, pmc: Pmc) -> PropertyQuery:
    """A literal query, a path to a ``.prop`` file, or (if absent) a default measure."""
    if text is None:
        return PropertyQuery("P" if pmc.bad is not None else "ER", ">=", 0.0)
    if os.path.exists(text):
        text = _read(text)
    return parse_property(text)


def parse_point(items: list[str] | None, pmc: Pmc, region: Region) -> np.ndarray:
    """``name=value`` pairs (comma separated or repeated); the rest default to the region center."""
    u = region.center()
    seen = set()
    for item in items or []:
        for part in filter(None, (p.strip() for p in item.split(","))):
            name, sep, value = part.partition("=")
            if not sep:
                raise ConfigError(f"expected name=value, got {part!r}")
            name = name.strip()
            if name in seen:
                raise ConfigError(f"parameter {name} given twice")
            seen.add(name)
            try:
                u[pmc.params.index(name)] = float(value)
            except ValueError:
                raise ConfigError(f"not a number: {value!r}") from None
    region.check_point(u)
    return u


def measured_model(pmc: Pmc, query: PropertyQuery) -> Pmc:
    return reachability_to_reward(pmc) if query.reachability else pmc


def _emit(obj) -> None:
    print(json.dumps(obj, indent=2, sort_keys=False))


# -- commands -----------------------------------------------------------------------


def cmd_check(args) -> int:
    pmc, _ = load_model(args.model)
    n_params = len(pmc.params)
    print(f"{pmc.n_states} states, {pmc.n_transitions} transitions, "
          f"{n_params} parameter{'s' if n_params != 1 else ''}")
    unused = sorted(set(pmc.params) - pmc.used_parameters())
    if unused:
        print(f"warning: parameter(s) never used: {', '.join(unused)}", file=sys.stderr)
    if pmc.bad is not None:
        print(f"warning: state {pmc.states[pmc.bad]} cannot reach the target; expected-reward "
              "queries are infinite, only P queries are meaningful", file=sys.stderr)
    if args.region:
        from .model import check_graph_preserving
        region = load_region(args.region, pmc)
        check_graph_preserving(pmc, region)
        print("region is graph-preserving at all checked points")
    return EXIT_OK


def cmd_eval(args) -> int:
    pmc, _ = load_model(args.model)
    region = load_region(args.region, pmc)
    query = load_property(args.property, pmc)
    u = parse_point(args.point, pmc, region)
    obj = make_pmc_objective(pmc, query, region, tol=args.tol, backend=args.backend)
    value = obj.measure(u)
    _emit({"property": str(query), "value": value, "holds": query.holds(value)})
    return EXIT_OK


def cmd_gradient(args) -> int:
    pmc, _ = load_model(args.model)
    region = load_region(args.region, pmc)
    query = load_property(args.property, pmc)
    u = parse_point(args.point, pmc, region)
    names = list(pmc.params) if not args.params else [p.strip() for p in args.params.split(",") if p.strip()]
    idx = [pmc.params.index(n) for n in names]
    if query.kind == "ER" and pmc.bad is not None:
        raise PmcError("model has a reachable bad state; expected rewards are infinite")
    model = measured_model(pmc, query)
    if args.via == "eqsys":
        values = gradient_eqsys(model, u, idx, region=region, tol=args.tol, backend=args.backend)
    elif args.via == "derived":
        values = [gradient_via_derived(model, n, u, region=region, tol=args.tol) for n in names]
    else:
        obj = PmcObjective(model, region=region, tol=args.tol, backend=args.backend)
        values = [finite_difference(obj, u, i, args.h) for i in idx]
    _emit({"property": str(query), "via": args.via,
           "gradient": {n: float(v) for n, v in zip(names, values)}})
    return EXIT_OK


def cmd_derive(args) -> int:
    pmc, _ = load_model(args.model)
    if args.property is not None:
        pmc = measured_model(pmc, load_property(args.property, pmc))
    wfa = derived_automaton(pmc, args.param)
    stem = Path(args.output or f"{Path(args.model).stem}.d_{args.param}.pmc")
    stem.write_text(serialize_model(wfa))
    dot = Path(args.dot) if args.dot else stem.with_suffix(".dot")
    dot.write_text(export_dot(wfa))
    n_cross = sum(1 for s in range(wfa.base, wfa.n_states)
                  for t in wfa.transitions[s] if t < wfa.base)
    _emit({"states": wfa.n_states, "transitions": wfa.n_transitions, "cross_edges": n_cross,
           "model": str(stem), "dot": str(dot)})
    return EXIT_OK


def _method(name: str) -> tuple[str, bool]:
    if name.endswith("-sign"):
        return name[: -len("-sign")], True
    return name, False


def config_from_args(args, query: PropertyQuery) -> DescentConfig:
    return DescentConfig(
        method=args.method, sign=args.sign, restriction=args.restriction, lr=args.lr, gamma=args.gamma,
        beta=args.beta, batch_size=args.batch_size, seed=args.seed, max_iterations=args.max_iterations,
        time_limit=args.time_limit, mu0=args.mu0, logistic_compat=args.logistic_compat,
        bound=query.bound, comparator=query.comparator)


def cmd_solve(args) -> int:
    pmc, prep = load_model(args.model)
    region = load_region(args.region, pmc)
    query = load_property(args.property, pmc)
    config = config_from_args(args, query)
    obj = make_pmc_objective(pmc, query, region, tol=args.tol, backend=args.backend)
    result = feasibility_search(obj, region, config)
    out = result.to_dict()
    out["property"] = str(query)
    out["preprocess_time"] = prep
    _emit(out)
    return EXIT_OK if result.feasible else EXIT_EXHAUSTED


# -- bench --------------------------------------------------------------------------


_TOP_COMMA = re.compile(r",\s*(?![^()]*\))")
_CELL = re.compile(r"^([a-z]+(?:-sign)?)(?:\((.*)\))?$")
_OVERRIDABLE = {"lr": float, "gamma": float, "beta": float, "batch_size": int, "mu0": float}


def _split(value: str) -> list[str]:
    return [v.strip() for v in _TOP_COMMA.split(value.replace("\n", ",")) if v.strip()]


def parse_method_cell(text: str) -> tuple[str, dict]:
    """``momentum-sign`` or ``momentum(gamma=0, lr=0.05)``."""
    m = _CELL.match(text.replace(" ", ""))
    if m is None:
        raise ConfigError(f"bad method cell {text!r}")
    method, sign = _method(m.group(1))
    if method not in METHODS:
        raise ConfigError(f"unknown method {method!r}")
    overrides = {"sign": sign}
    for part in filter(None, (m.group(2) or "").split(",")):
        key, _, value = part.partition("=")
        if key not in _OVERRIDABLE:
            raise ConfigError(f"cannot override {key!r} in a method cell")
        overrides[key] = _OVERRIDABLE[key](value)
    return method, overrides


def _load_bench_model(section: configparser.SectionProxy, base: Path):
    if "generate" in section:
        fields = dict(p.split("=", 1) for p in _split(section["generate"]))
        seed = int(fields.pop("seed", 0))
        casts = {"states": int, "params": int, "branching": int, "max_reward": int}
        spec = GeneratorSpec(**{k.strip(): casts.get(k.strip(), float)(v) for k, v in fields.items()})
        t0 = time.perf_counter()
        pmc, region = generate_synthetic(spec, seed)
        return pmc, region, time.perf_counter() - t0
    pmc, prep = load_model(str(base / section["model"]))
    region = load_region(str(base / section["region"]) if "region" in section else None, pmc)
    return pmc, region, prep


def verify(pmc: Pmc, query: PropertyQuery, region: Region, u: np.ndarray, reported: float) -> bool:
    """Re-evaluate a feasible point with an independent direct solve."""
    if not region.contains(u):
        return False
    fresh = make_pmc_objective(pmc, query, region, tol=DEFAULT_TOL, backend="direct")
    value = fresh.measure(u)
    slack = VERIFY_TOL * max(1.0, abs(value))
    if abs(value - reported) > slack:
        return False
    return query.holds(value + slack) if query.maximize else query.holds(value - slack)


def run_bench(manifest: str, output: str, scatter_dir: str | None = None) -> list[dict]:
    parser = configparser.ConfigParser(interpolation=None)
    if not parser.read(manifest):
        raise PmcError(f"cannot read manifest {manifest}")
    base = Path(manifest).resolve().parent
    suite = parser["suite"] if parser.has_section("suite") else parser[configparser.DEFAULTSECT]
    cells = [parse_method_cell(c) for c in _split(suite.get("methods", "momentum-sign"))]
    names = [c.replace(" ", "") for c in _split(suite.get("methods", "momentum-sign"))]
    restrictions = _split(suite.get("restrictions", "projection"))
    for r in restrictions:
        if r not in RESTRICTIONS:
            raise ConfigError(f"unknown restriction {r!r}")
    reps = suite.getint("repetitions", 5)
    seeds = [int(s) for s in _split(suite.get("seeds", ""))] or list(range(1, reps + 1))
    if len(seeds) < reps:
        raise ConfigError(f"{reps} repetitions need at least {reps} seeds")
    seeds = seeds[:reps]
    common = {"max_iterations": suite.getint("max_iterations", 10_000),
              "time_limit": suite.getfloat("time_limit", fallback=None),
              "lr": suite.getfloat("lr", 0.1), "batch_size": suite.getint("batch_size", 32)}
    baseline = suite.get("baseline", BASELINE)

    rows: list[dict] = []
    for section in (s for s in parser.sections() if s.startswith("model:")):
        model_id = section.split(":", 1)[1].strip()
        spec = parser[section]
        try:
            pmc, region, _ = _load_bench_model(spec, base)
            query = load_property(spec.get("property"), pmc)
        except PmcError as exc:
            rows.append(_row(model_id, "-", "-", None, "-", status="error", message=str(exc)))
            continue
        for name, (method, overrides) in zip(names, cells):
            for restriction in restrictions:
                times = []
                for seed in seeds:
                    settings = {**common, **overrides}
                    try:
                        config = DescentConfig(method=method, restriction=restriction, seed=seed,
                                               bound=query.bound, comparator=query.comparator, **settings)
                        obj = make_pmc_objective(pmc, query, region)
                        res = feasibility_search(obj, region, config)
                    except (PmcError, ValueError, ArithmeticError) as exc:
                        rows.append(_row(model_id, name, restriction, settings["lr"], seed,
                                         status="error", message=str(exc)))
                        continue
                    ok = verify(pmc, query, region, res.u_found, res.value) if res.feasible else ""
                    times.append(res.wall_time)
                    rows.append(_row(model_id, name, restriction, settings["lr"], seed, status=res.status,
                                     value=res.value, iterations=res.iterations, restarts=res.restarts,
                                     gradient_solves=res.gradient_solves, wall_time=res.wall_time,
                                     final_mu=res.final_mu, verified=ok,
                                     u_found=json.dumps(res.u_found.tolist())))
                    log.info("%s %s/%s seed %s: %s in %.3fs", model_id, name, restriction, seed,
                             res.status, res.wall_time)
                rows.append(_row(model_id, name, restriction, common["lr"] if "lr" not in overrides
                                 else overrides["lr"], "mean", status="aggregate",
                                 wall_time=float(np.mean(times)) if times else ""))

    with open(output, "w", newline="") as fh:
        writer = csv.DictWriter(fh, fieldnames=BENCH_FIELDS)
        writer.writeheader()
        writer.writerows(rows)
    if scatter_dir is not None:
        write_scatter(rows, scatter_dir, baseline)
    return rows


def _row(model, method, restriction, lr, seed, **fields) -> dict:
    row = dict.fromkeys(BENCH_FIELDS, "")
    row.update(model=model, method=method, restriction=restriction, lr="" if lr is None else lr, seed=seed)
    row.update({k: ("" if v is None else v) for k, v in fields.items()})
    return row


def write_scatter(rows: list[dict], directory: str, baseline: str = BASELINE) -> list[Path]:
    """One CSV per non-baseline cell pairing its wall time with the baseline's, per model and seed."""
    out_dir = Path(directory)
    out_dir.mkdir(parents=True, exist_ok=True)
    runs = [r for r in rows if r["status"] in ("feasible", "exhausted")]
    base = {(r["model"], r["seed"]): r for r in runs if f"{r['method']}/{r['restriction']}" == baseline}
    cells = sorted({(r["method"], r["restriction"]) for r in runs} - {tuple(baseline.split("/", 1))})
    paths = []
    for method, restriction in cells:
        path = out_dir / f"scatter_{re.sub(r'[^A-Za-z0-9_.=-]+', '_', method)}_{restriction}.csv"
        with open(path, "w", newline="") as fh:
            writer = csv.DictWriter(fh, fieldnames=SCATTER_FIELDS)
            writer.writeheader()
            for r in runs:
                if (r["method"], r["restriction"]) != (method, restriction):
                    continue
                b = base.get((r["model"], r["seed"]))
                if b is None:
                    continue
                writer.writerow({"model": r["model"], "seed": r["seed"], "baseline_wall_time": b["wall_time"],
                                 "wall_time": r["wall_time"], "baseline_status": b["status"], "status": r["status"]})
        paths.append(path)
    return paths


def cmd_bench(args) -> int:
    rows = run_bench(args.manifest, args.output, args.scatter_dir)
    runs = [r for r in rows if r["status"] not in ("aggregate",)]
    bad = [r for r in runs if r["verified"] is False]
    summary = {"rows": len(rows), "runs": len(runs),
               "feasible": sum(r["status"] == "feasible" for r in runs),
               "errors": sum(r["status"] == "error" for r in runs),
               "unverified": len(bad), "output": args.output}
    _emit(summary)
    return EXIT_ERROR if bad else EXIT_OK


# -- argument parsing ---------------------------------------------------------------


def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="pmcgd", description="Gradient-based parameter synthesis for parametric Markov chains.")
    ap.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    ap.add_argument("-v", "--verbose", action="store_true", help="log progress to stderr")
    sub = ap.add_subparsers(dest="command", required=True)

    def model_args(p, point=True):
        p.add_argument("model", help="model file (.pmc)")
        p.add_argument("--region", help="region file; default [1e-6, 1-1e-6] per parameter")
        p.add_argument("--property", help="query such as 'P >= 0.5' or a .prop file")
        if point:
            p.add_argument("--point", action="append", metavar="NAME=VALUE",
                           help="instantiation; unnamed parameters take the region center")
        p.add_argument("--tol", type=float, default=DEFAULT_TOL, help="linear-solver residual tolerance")
        p.add_argument("--backend", choices=BACKENDS, default="auto")

    p = sub.add_parser("check", help="parse, preprocess and summarise a model")
    p.add_argument("model")
    p.add_argument("--region", help="also check graph preservation over this region")
    p.set_defaults(func=cmd_check)

    p = sub.add_parser("eval", help="value of the query at one instantiation")
    model_args(p)
    p.set_defaults(func=cmd_eval)

    p = sub.add_parser("gradient", help="partial derivatives at one instantiation")
    model_args(p)
    p.add_argument("--params", help="comma-separated subset of parameters")
    p.add_argument("--via", choices=("eqsys", "derived", "fd"), default="eqsys")
    p.add_argument("--h", type=float, default=1e-6, help="finite-difference step")
    p.set_defaults(func=cmd_gradient)

    p = sub.add_parser("derive", help="write the derived automaton for one parameter")
    p.add_argument("model")
    p.add_argument("--param", required=True)
    p.add_argument("--property", help="derive the measure of this query (P queries add a sink)")
    p.add_argument("-o", "--output", help="output model file")
    p.add_argument("--dot", help="output DOT file; default next to the model file")
    p.set_defaults(func=cmd_derive)

    p = sub.add_parser("solve", help="search the region for a feasible instantiation")
    model_args(p, point=False)
    p.add_argument("--method", choices=METHODS, default="momentum")
    p.add_argument("--sign", action=argparse.BooleanOptionalAction, default=None,
                   help="sign variant (default on for momentum)")
    p.add_argument("--restriction", choices=RESTRICTIONS, default="projection")
    p.add_argument("--lr", type=float, default=0.1)
    p.add_argument("--gamma", type=float, default=0.9)
    p.add_argument("--beta", type=float, default=0.999)
    p.add_argument("--batch-size", type=int, default=32)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--max-iterations", type=int, default=10_000)
    p.add_argument("--time-limit", type=float, default=None, help="seconds")
    p.add_argument("--mu0", type=float, default=0.1, help="initial barrier weight")
    p.add_argument("--logistic-compat", action="store_true", help="use the uncorrected logistic gradient")
    p.set_defaults(func=cmd_solve)

    p = sub.add_parser("bench", help="run a method x restriction matrix from a manifest")
    p.add_argument("manifest", help="INI manifest")
    p.add_argument("-o", "--output", default="bench.csv")
    p.add_argument("--scatter-dir", help="write baseline-vs-cell scatter CSVs here")
    p.set_defaults(func=cmd_bench)
    return ap


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(message)s")
    if getattr(args, "sign", False) is None:
        args.sign = args.method == "momentum"
    try:
        return args.func(args)
    except (PmcError, ValueError, ArithmeticError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_ERROR


if __name__ == "__main__":
    sys.exit(main())
