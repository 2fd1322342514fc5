"""``nidslab`` command line.

Exit codes: 0 success, 1 usage or configuration error, 2 numerical failure
(including failed certificates and inapplicable rate theory).
"""

from __future__ import annotations

import argparse
import csv
import json
import logging
import sys
import time
from dataclasses import replace
from pathlib import Path

import numpy as np

from . import __version__
from .algorithms import make_step_sizes
from .analysis import certify_point, theoretical_rho
from .errors import ConfigurationError, NidsLabError, NumericalError
from .harness import NIDS_KINDS, ExperimentConfig, _json_safe, export_experiment, run_experiment
from .netgraph import (
    GRAPH_MODELS,
    generate_graph,
    laplacian_weights,
    load_graph,
    metropolis_weights,
    save_graph,
    validate_mixing,
)
from .objectives import generate_lasso_problem, generate_sensing_problem, save_problem

EXIT_OK, EXIT_USAGE, EXIT_NUMERIC = 0, 1, 2
DEFAULT_OUT = "nidslab_out"
SWEEPABLE = ("alpha", "c", "t", "eps", "seed")


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        raise UsageError(f"{self.prog}: {message}")


def _floats(text: str) -> list[float]:
    try:
        return [float(v) for v in text.split(",") if v.strip()]
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected a number or comma-separated numbers, got {text!r}") from None


def _ints(text: str) -> list[int]:
    try:
        return [int(v) for v in text.split(",") if v.strip()]
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected an integer or comma-separated integers, got {text!r}") from None


def _c_values(text: str) -> list:
    out = []
    for v in text.split(","):
        v = v.strip()
        if v in ("half", "spectral", "boundary"):
            out.append(v)
        else:
            try:
                out.append(float(v))
            except ValueError:
                raise argparse.ArgumentTypeError(f"--c expects half, spectral, boundary or a number, got {v!r}") from None
    return out


def _write_json(path: Path, doc) -> Path:
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text(json.dumps(_json_safe(doc), indent=1, sort_keys=True))
    return path


# -- config overrides ----------------------------------------------------------


def _load_config(args) -> ExperimentConfig:
    if not args.config:
        raise UsageError("--config is required")
    cfg = ExperimentConfig.load(args.config)
    return _apply_overrides(cfg, args)


def _apply_overrides(cfg: ExperimentConfig, args, **fixed) -> ExperimentConfig:
    """Apply command-line overrides; `fixed` holds per-sweep scalar values."""
    vals = {k: getattr(args, k, None) for k in SWEEPABLE}
    vals["max_iter"] = getattr(args, "max_iter", None)
    vals["out"] = getattr(args, "out", None)
    vals["algo"] = getattr(args, "algo", None)
    for k, v in fixed.items():
        vals[k] = [v]
    algos = list(cfg.algorithms)
    if vals["algo"]:
        wanted = set(vals["algo"].split(","))
        algos = [a for a in algos if a.name in wanted or a.kind in wanted]
        if not algos:
            raise ConfigurationError(f"--algo {vals['algo']!r} matches no algorithm in the config")
    if vals["alpha"]:
        a = vals["alpha"]
        algos = [replace(s, alpha=a[0] if len(a) == 1 else list(a)) for s in algos]
    if vals["c"]:
        algos = [replace(s, c=vals["c"][0]) if s.kind in NIDS_KINDS else s for s in algos]
    cfg = replace(cfg, algorithms=algos)
    if vals["seed"]:
        cfg = replace(cfg, problem=replace(cfg.problem, params={**cfg.problem.params, "seed": int(vals["seed"][0])}))
    if vals["t"]:
        cfg = replace(cfg, topology=replace(cfg.topology, t=int(vals["t"][0])))
    if vals["eps"]:
        cfg = replace(cfg, stopping=replace(cfg.stopping, eps=float(vals["eps"][0])))
    if vals["max_iter"]:
        cfg = replace(cfg, stopping=replace(cfg.stopping, max_iter=int(vals["max_iter"])))
    if vals["out"]:
        cfg = replace(cfg, output=replace(cfg.output, directory=vals["out"]))
    return cfg.validate()


# -- subcommands ---------------------------------------------------------------


def cmd_gen_problem(args) -> int:
    seed = args.seed[0] if args.seed else 0
    if args.kind == "sensing":
        prob = generate_sensing_problem(
            n=args.n, m=args.m or 60, p=args.p or 50, target_l=args.L, target_mu=args.mu, noise_std=args.noise, seed=seed
        )
    else:
        prob = generate_lasso_problem(n=args.n, m=args.m or 3, p=args.p or 200, noise_std=args.noise, seed=seed)
    path = save_problem(prob, Path(args.out or DEFAULT_OUT))
    print(f"problem: n={prob.n} p={prob.p} generator={args.kind} seed={seed}")
    print(f"manifest: {path}")
    return EXIT_OK


def _mix_for(g, method: str, tau=None):
    return metropolis_weights(g) if method == "metropolis" else laplacian_weights(g, tau)


def cmd_gen_graph(args) -> int:
    seed = args.seed[0] if args.seed else 0
    g = generate_graph(args.n, args.model, seed=seed, prob=args.prob)
    mix = _mix_for(g, args.method)
    out = Path(args.out or DEFAULT_OUT)
    path = save_graph(out / "graph.json" if not out.suffix else out, g, mix)
    print(f"graph: n={g.n} edges={len(g.edges)} model={args.model} seed={seed} mixing={args.method}")
    print(f"manifest: {path}")
    return EXIT_OK


def cmd_validate_mixing(args) -> int:
    g, stored = load_graph(args.graph)
    mix = stored if args.method == "file" else _mix_for(g, args.method, args.tau)
    if mix is None:
        raise ConfigurationError(f"{args.graph} holds no weights; choose --method metropolis or laplacian")
    report = validate_mixing(mix)
    for line in report.lines():
        print(line)
    path = _write_json(Path(args.out or DEFAULT_OUT) / "mixing_report.json", report.to_dict())
    print(f"manifest: {path}")
    return EXIT_OK if report.passed else EXIT_NUMERIC


def cmd_run(args) -> int:
    cfg = _load_config(args)
    t0 = time.time()
    result = run_experiment(cfg)
    path = export_experiment(result, timings={"started_unix": t0, "elapsed_s": time.time() - t0})
    for name, tr in result.items():
        print(f"{name}: {tr.status} at k={tr.iterations} rel_error={tr.rel_error[-1]:.3e}")
    print(f"manifest: {path}")
    return EXIT_OK


def _nids_steps(cfg: ExperimentConfig):
    """Problem, mixing matrix and step sizes of every NIDS entry of `cfg`."""
    prob = cfg.problem.build()
    mu = prob.strong_convexity
    kappa = float(np.max(prob.lipschitz) / np.min(mu)) if np.all(mu > 0) else None
    mix = cfg.topology.build(prob.n, kappa)
    specs = [a for a in cfg.algorithms if a.kind in NIDS_KINDS]
    if not specs:
        raise ConfigurationError("config has no NIDS algorithm to certify")
    return prob, mix, [(s.name, make_step_sizes(prob, mix, s.resolve_alpha(prob), s.c, s.unsafe)) for s in specs]


def cmd_certify(args) -> int:
    cfg = _load_config(args)
    prob, _, steps = _nids_steps(cfg)
    doc = {}
    ok = True
    for name, st in steps:
        cert = certify_point(prob.reference_solution, prob, st, tol=args.tol)
        doc[name] = cert.to_dict()
        ok &= cert.certified
        print(
            f"{name}: stationarity={cert.stationarity_residual:.3e} consensus={cert.consensus_residual:.3e} "
            f"{'CERTIFIED' if cert.certified else 'NOT CERTIFIED'}"
        )
    path = _write_json(Path(cfg.output.directory) / "certificate.json", doc)
    print(f"manifest: {path}")
    return EXIT_OK if ok else EXIT_NUMERIC


def cmd_rho(args) -> int:
    cfg = _load_config(args)
    prob, _, steps = _nids_steps(cfg)
    doc = {}
    for name, st in steps:
        rc = theoretical_rho(prob, st)
        doc[name] = {**rc.to_dict(), "iterations_to_eps": rc.iterations_to(cfg.stopping.eps), "eps": cfg.stopping.eps}
        print(
            f"{name}: rho={rc.rho:.12g} (function {rc.function_branch:.6g}, network {rc.network_branch:.6g}, "
            f"binding {rc.binding}) iterations_to_eps={doc[name]['iterations_to_eps']}"
        )
    path = _write_json(Path(cfg.output.directory) / "rho.json", doc)
    print(f"manifest: {path}")
    return EXIT_OK


def cmd_sweep(args) -> int:
    cfg = ExperimentConfig.load(args.config) if args.config else None
    if cfg is None:
        raise UsageError("--config is required")
    swept = [k for k in SWEEPABLE if getattr(args, k)]
    multi = [k for k in swept if len(getattr(args, k)) > 1]
    if len(multi) != 1:
        raise UsageError(f"sweep needs exactly one list-valued flag among --{', --'.join(SWEEPABLE)}")
    key = multi[0]
    values = getattr(args, key)
    out = Path(args.out or cfg.output.directory)
    rows, runs = [], {}
    for v in values:
        sub = _apply_overrides(cfg, args, **{key: v})
        sub = replace(sub, output=replace(sub.output, directory=str(out / f"{key}={v}")))
        result = run_experiment(sub)
        runs[str(v)] = str(export_experiment(result).relative_to(out))
        for name, tr in result.items():
            rows.append([key, str(v), name, tr.status, tr.iterations, repr(float(tr.rel_error[-1])), int(tr.comm_rounds[-1])])
            print(f"{key}={v} {name}: {tr.status} at k={tr.iterations}")
    out.mkdir(parents=True, exist_ok=True)
    with (out / "sweep.csv").open("w", newline="") as fh:
        wr = csv.writer(fh, lineterminator="\n")
        wr.writerow(["parameter", "value", "algorithm", "status", "iterations", "final_rel_error", "comm_rounds"])
        wr.writerows(rows)
    path = _write_json(out / "manifest.json", {"parameter": key, "values": values, "runs": runs, "table": "sweep.csv"})
    print(f"manifest: {path}")
    return EXIT_OK


# -- parser --------------------------------------------------------------------


def _common(p: argparse.ArgumentParser, config: bool = True) -> None:
    if config:
        p.add_argument("--config", help="experiment config JSON")
    p.add_argument("--seed", type=_ints, help="random seed")
    p.add_argument("--out", help="output directory")


def _overrides(p: argparse.ArgumentParser) -> None:
    p.add_argument("--alpha", type=_floats, help="step size (number or comma list)")
    p.add_argument("--c", type=_c_values, help="coupling: half, spectral, boundary or a number")
    p.add_argument("--algo", help="comma list of algorithm names or kinds to keep")
    p.add_argument("--t", type=_ints, help="consensus power t (W replaced by W^t)")
    p.add_argument("--eps", type=_floats, help="stopping tolerance on ||x - x*||")
    p.add_argument("--max-iter", type=int, help="iteration cap")


def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(prog="nidslab", description="Decentralized optimization with NIDS and baselines.")
    parser.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    parser.add_argument("-v", "--verbose", action="store_true", help="log progress to stderr")
    sub = parser.add_subparsers(dest="command", required=True, parser_class=_Parser)

    p = sub.add_parser("gen-problem", help="generate and save a problem instance")
    _common(p, config=False)
    p.add_argument("--kind", choices=("sensing", "lasso"), default="sensing")
    p.add_argument("--n", type=int, default=40)
    p.add_argument("--m", type=int)
    p.add_argument("--p", type=int)
    p.add_argument("--L", type=float, default=1.0)
    p.add_argument("--mu", type=float, default=0.5)
    p.add_argument("--noise", type=float, default=0.01)
    p.set_defaults(func=cmd_gen_problem)

    p = sub.add_parser("gen-graph", help="generate a connected graph with mixing weights")
    _common(p, config=False)
    p.add_argument("--n", type=int, default=40)
    p.add_argument("--model", choices=GRAPH_MODELS, default="erdos_renyi")
    p.add_argument("--prob", type=float, help="edge probability (Erdos-Renyi)")
    p.add_argument("--method", choices=("metropolis", "laplacian"), default="metropolis")
    p.set_defaults(func=cmd_gen_graph)

    p = sub.add_parser("validate-mixing", help="check a mixing matrix against the four assumptions")
    p.add_argument("--graph", required=True, help="graph JSON")
    p.add_argument("--method", choices=("metropolis", "laplacian", "file"), default="file")
    p.add_argument("--tau", type=float)
    p.add_argument("--out", help="output directory")
    p.set_defaults(func=cmd_validate_mixing)

    for name, func, text in (
        ("run", cmd_run, "run an experiment config"),
        ("certify", cmd_certify, "certify the reference solution as a fixed point"),
        ("rho", cmd_rho, "theoretical linear rate of each NIDS run"),
        ("sweep", cmd_sweep, "rerun a config over a list of values of one flag"),
    ):
        p = sub.add_parser(name, help=text)
        _common(p)
        _overrides(p)
        if name == "certify":
            p.add_argument("--tol", type=float, default=1e-9)
        p.set_defaults(func=func)
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except UsageError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except SystemExit as exc:  # --help / --version
        return int(exc.code or 0)
    if args.verbose:
        logging.basicConfig(level=logging.INFO, format="%(name)s: %(message)s")
    try:
        if args.command != "sweep":
            for key in ("alpha", "seed", "t", "eps", "c"):
                vals = getattr(args, key, None)
                if vals and len(vals) > 1 and key != "alpha":
                    raise UsageError(f"--{key} takes a single value outside sweep")
        return args.func(args)
    except UsageError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except NumericalError as exc:
        print(f"numerical error: {exc}", file=sys.stderr)
        return EXIT_NUMERIC
    except (ConfigurationError, ValueError, FileNotFoundError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except NidsLabError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_NUMERIC


if __name__ == "__main__":  # pragma: no cover
    sys.exit(main())
