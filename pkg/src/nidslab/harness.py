"""Config-driven experiments: build the problem and network, run each algorithm, record traces."""

from __future__ import annotations

import copy
import csv
import json
import logging
import math
import os
import time
from concurrent.futures import ThreadPoolExecutor
from dataclasses import asdict, dataclass, field
from pathlib import Path

import numpy as np

from .algorithms import ALGORITHMS, C_POLICIES, iterate, make_step_sizes, StepSizes
from .analysis import NidsMonitor, certify_point, theoretical_rho
from .errors import ConfigurationError, DivergenceError, NotApplicableError
from .netgraph import (
    MixingMatrix,
    consensus_power,
    generate_graph,
    graph_to_dict,
    laplacian_weights,
    load_graph,
    metropolis_weights,
    spectral_summary,
    suggest_consensus_steps,
    validate_mixing,
)
from .objectives import ProblemInstance, generate_lasso_problem, generate_sensing_problem, load_problem
from .stackmat import consensual

log = logging.getLogger(__name__)

TRACE_COLUMNS = (
    "k",
    "rel_error",
    "consensus_residual",
    "successive_diff",
    "lyapunov_general",
    "lyapunov_strong",
    "comm_rounds",
    "wall_time_s",
)
STATUSES = ("converged", "max_iter", "diverged")
DEFAULT_MAX_ITER = {"sensing": 200_000, "lasso": 100_000}
DIVERGENCE_FACTOR = 1e6
NIDS_KINDS = ("nids", "nids_dz")


# -- configuration -------------------------------------------------------------


@dataclass
class ProblemSpec:
    """Generator name plus its keyword arguments; ``generator="file"`` loads `path`."""

    generator: str = "sensing"
    params: dict = field(default_factory=dict)
    path: str | None = None

    def build(self) -> ProblemInstance:
        if self.generator == "sensing":
            return generate_sensing_problem(**self.params)
        if self.generator == "lasso":
            return generate_lasso_problem(**self.params)
        if self.generator == "file":
            if not self.path:
                raise ConfigurationError("problem.generator 'file' needs problem.path")
            prob = load_problem(self.path)
            if prob.reference_solution is None:
                raise ConfigurationError(f"problem file {self.path} has no reference solution")
            return prob
        raise ConfigurationError(f"unknown problem generator {self.generator!r}; expected sensing, lasso or file")


@dataclass
class TopologySpec:
    """Graph model, mixing construction and consensus power (an integer or ``"auto"``)."""

    model: str = "erdos_renyi"
    prob: float | None = None
    seed: int = 0
    mixing: str = "laplacian"
    tau: float | None = None
    t: int | str = 1
    t_max: int = 20
    path: str | None = None

    def build(self, n: int, kappa: float | None = None) -> MixingMatrix:
        if self.path:
            g, mix = load_graph(self.path)
            if g.n != n:
                raise ConfigurationError(f"graph file has {g.n} agents, problem has {n}")
        else:
            g, mix = generate_graph(n, self.model, seed=self.seed, prob=self.prob), None
        if self.mixing == "metropolis":
            mix = metropolis_weights(g)
        elif self.mixing == "laplacian":
            mix = laplacian_weights(g, self.tau)
        elif self.mixing != "file" or mix is None:
            raise ConfigurationError(f"unknown mixing construction {self.mixing!r} (or graph file has no weights)")
        t = self.t
        if t == "auto":
            t = 1 if kappa is None or n == 1 else suggest_consensus_steps(spectral_summary(mix), kappa, self.t_max)
        return consensus_power(mix, int(t))


@dataclass
class AlgorithmSpec:
    """One algorithm run.

    `alpha` is a number, a per-agent list, or a policy dict
    ``{"policy": "inverse_lipschitz" | "max_lipschitz", "scale": s}`` giving
    ``s / L_i`` or ``s / max_i L_i``.
    """

    name: str
    kind: str
    alpha: object = 1.0
    c: object = "half"
    unsafe: bool = False

    def resolve_alpha(self, prob: ProblemInstance) -> np.ndarray:
        a = self.alpha
        lips = prob.lipschitz
        if isinstance(a, dict):
            policy, scale = a.get("policy"), float(a.get("scale", 1.0))
            if policy == "inverse_lipschitz":
                return scale / lips
            if policy == "max_lipschitz":
                return np.full(prob.n, scale / float(np.max(lips)))
            raise ConfigurationError(f"{self.name}: unknown alpha policy {policy!r}")
        arr = np.atleast_1d(np.asarray(a, dtype=float))
        return np.full(prob.n, float(arr[0])) if arr.size == 1 else arr


@dataclass
class StoppingSpec:
    """Stop when ``||x^k - x*||_F < eps`` (stacked), after `max_iter`, or on divergence."""

    eps: float = 1e-11
    max_iter: int = 200_000
    divergence_factor: float = DIVERGENCE_FACTOR


@dataclass
class OutputSpec:
    directory: str = "runs"
    formats: list = field(default_factory=lambda: ["csv", "json"])
    wall_time: bool = False
    monitor: bool = True
    save_problem: bool = False


@dataclass
class ExperimentConfig:
    name: str
    problem: ProblemSpec
    topology: TopologySpec
    algorithms: list
    stopping: StoppingSpec = field(default_factory=StoppingSpec)
    output: OutputSpec = field(default_factory=OutputSpec)

    def validate(self) -> "ExperimentConfig":
        if not self.algorithms:
            raise ConfigurationError("config lists no algorithms")
        names = [a.name for a in self.algorithms]
        if len(set(names)) != len(names):
            raise ConfigurationError(f"duplicate algorithm names: {names}")
        for a in self.algorithms:
            if a.kind not in ALGORITHMS:
                raise ConfigurationError(f"{a.name}: unknown kind {a.kind!r}; expected one of {sorted(ALGORITHMS)}")
            if isinstance(a.c, str) and a.c not in C_POLICIES:
                raise ConfigurationError(f"{a.name}: unknown c policy {a.c!r}; expected {C_POLICIES} or a number")
        if not self.stopping.eps > 0:
            raise ConfigurationError(f"stopping.eps must be positive, got {self.stopping.eps}")
        if int(self.stopping.max_iter) < 1:
            raise ConfigurationError(f"stopping.max_iter must be >= 1, got {self.stopping.max_iter}")
        for fmt in self.output.formats:
            if fmt not in ("csv", "json"):
                raise ConfigurationError(f"unknown output format {fmt!r}")
        return self

    def to_dict(self) -> dict:
        return asdict(self)

    @classmethod
    def from_dict(cls, doc: dict) -> "ExperimentConfig":
        doc = copy.deepcopy(doc)
        if "preset" in doc:
            name = doc.pop("preset")
            if name not in PRESETS:
                raise ConfigurationError(f"unknown preset {name!r}; available: {sorted(PRESETS)}")
            base = PRESETS[name]().to_dict()
            for key, val in doc.items():
                if isinstance(val, dict) and isinstance(base.get(key), dict):
                    base[key].update(val)
                else:
                    base[key] = val
            doc = base
        try:
            cfg = cls(
                name=doc.get("name", "experiment"),
                problem=ProblemSpec(**doc.get("problem", {})),
                topology=TopologySpec(**doc.get("topology", {})),
                algorithms=[AlgorithmSpec(**a) for a in doc.get("algorithms", [])],
                stopping=StoppingSpec(**doc.get("stopping", {})),
                output=OutputSpec(**doc.get("output", {})),
            )
        except TypeError as exc:
            raise ConfigurationError(f"malformed config: {exc}") from None
        return cfg.validate()

    @classmethod
    def load(cls, path) -> "ExperimentConfig":
        try:
            doc = json.loads(Path(path).read_text())
        except json.JSONDecodeError as exc:
            raise ConfigurationError(f"{path}: invalid JSON ({exc})") from None
        return cls.from_dict(doc)


# -- traces --------------------------------------------------------------------


@dataclass
class RunTrace:
    """Per-iteration records of one run.

    Row ``k`` holds the iterate ``x^k``. ``successive_diff`` in row ``k`` is
    ``||z^{k-1} - z^k||²_{Λ^-1} + ||d^{k-1} - d^k||²_M`` (NaN in the first
    row and for non-NIDS methods); Lyapunov columns are NaN where undefined.
    """

    name: str
    kind: str
    columns: dict = field(default_factory=lambda: {c: [] for c in TRACE_COLUMNS})
    status: str = "max_iter"
    manifest: dict = field(default_factory=dict)

    def __post_init__(self):
        self.columns = {c: list(self.columns.get(c, [])) for c in TRACE_COLUMNS}

    def append(self, **row) -> None:
        for c in TRACE_COLUMNS:
            self.columns[c].append(row.get(c, math.nan))

    def __len__(self) -> int:
        return len(self.columns["k"])

    def __getattr__(self, name):
        cols = self.__dict__.get("columns")
        if cols is not None and name in cols:
            return np.asarray(cols[name], dtype=int if name in ("k", "comm_rounds") else float)
        raise AttributeError(name)

    @property
    def iterations(self) -> int:
        """Index of the last recorded iterate."""
        return int(self.columns["k"][-1]) if len(self) else 0

    @property
    def converged(self) -> bool:
        return self.status == "converged"

    def equals(self, other: "RunTrace") -> bool:
        """Bitwise equality of all columns and the status."""
        if self.status != other.status or len(self) != len(other):
            return False
        for c in TRACE_COLUMNS:
            a, b = np.asarray(self.columns[c], float), np.asarray(other.columns[c], float)
            if not np.array_equal(a, b, equal_nan=True):
                return False
        return True


class ExperimentResult(dict):
    """Mapping from algorithm name to :class:`RunTrace`, plus the shared problem and network."""

    def __init__(self, config: ExperimentConfig, problem: ProblemInstance, mixing: MixingMatrix, traces, manifest):
        super().__init__(traces)
        self.config = config
        self.problem = problem
        self.mixing = mixing
        self.manifest = manifest


def _run_one(
    spec: AlgorithmSpec, prob: ProblemInstance, mix: MixingMatrix, stop: StoppingSpec, out: OutputSpec, x0
) -> RunTrace:
    trace = RunTrace(spec.name, spec.kind)
    steps = make_step_sizes(prob, mix, spec.resolve_alpha(prob), spec.c, unsafe=spec.unsafe)
    x_star = consensual(prob.reference_solution, prob.n)
    x_norm = float(np.linalg.norm(x_star))
    denom = x_norm if x_norm > 0 else 1.0
    manifest = {
        "kind": spec.kind,
        "alpha": steps.alpha.tolist(),
        "c": steps.c,
        "c_max": None if math.isinf(steps.c_max) else steps.c_max,
        "unsafe": spec.unsafe,
        "rel_error_denominator": "norm_x_star" if x_norm > 0 else "absolute",
    }
    monitor = None
    if spec.kind in NIDS_KINDS:
        try:
            manifest["rate_certificate"] = theoretical_rho(prob, steps).to_dict()
        except NotApplicableError as exc:
            manifest["rate_certificate"] = {"not_applicable": str(exc)}
        if out.monitor:
            cert = certify_point(prob.reference_solution, prob, steps)
            manifest["target_certificate"] = cert.to_dict()
            monitor = NidsMonitor(prob, steps, cert)
    trace.manifest = manifest

    w = mix.w
    e0 = None
    prev = None
    t0 = time.perf_counter()
    try:
        for state in iterate(spec.kind, prob, steps, x0, int(stop.max_iter)):
            err = float(np.linalg.norm(state.x - x_star))
            row = {
                "k": state.k,
                "rel_error": err / denom,
                "consensus_residual": float(np.linalg.norm(state.x - w @ state.x)),
                "comm_rounds": state.comm_rounds * mix.power,
                "wall_time_s": time.perf_counter() - t0 if out.wall_time else math.nan,
            }
            if monitor is not None:
                row["lyapunov_general"] = monitor.general(state)
                row["lyapunov_strong"] = monitor.strongly_convex(state)
                if prev is not None:
                    row["successive_diff"] = monitor.delta(prev, state)
            trace.append(**row)
            prev = state
            if e0 is None:
                e0 = max(err, np.finfo(float).tiny)
            if err < stop.eps:
                trace.status = "converged"
                break
            if not math.isfinite(err) or err > stop.divergence_factor * e0:
                trace.status = "diverged"
                break
    except DivergenceError as exc:
        trace.status = "diverged"
        trace.manifest["divergence"] = str(exc)
    log.info("%s: %s after %d iterations", spec.name, trace.status, trace.iterations)
    trace.manifest["status"] = trace.status
    trace.manifest["iterations"] = trace.iterations
    return trace


def _threads() -> int:
    try:
        return max(1, int(os.environ.get("NIDSLAB_THREADS", "1")))
    except ValueError:
        raise ConfigurationError("NIDSLAB_THREADS must be an integer") from None


def run_experiment(cfg: ExperimentConfig, problem: ProblemInstance | None = None) -> ExperimentResult:
    """Run every algorithm of `cfg` on one shared problem, network and ``x0 = 0``.

    Runs are independent; up to ``NIDSLAB_THREADS`` of them execute
    concurrently. A failing reference solution aborts; divergence is
    recorded per trace.
    """
    cfg.validate()
    prob = problem if problem is not None else cfg.problem.build()
    mu = prob.strong_convexity
    kappa = float(np.max(prob.lipschitz) / np.min(mu)) if np.all(mu > 0) else None
    mix = cfg.topology.build(prob.n, kappa)
    x0 = np.zeros((prob.n, prob.p))
    specs = list(cfg.algorithms)
    args = (prob, mix, cfg.stopping, cfg.output, x0)
    workers = min(_threads(), len(specs))
    if workers > 1:
        with ThreadPoolExecutor(max_workers=workers) as pool:
            traces = list(pool.map(lambda s: _run_one(s, *args), specs))
    else:
        traces = [_run_one(s, *args) for s in specs]
    manifest = {
        "format": "nidslab-run/1",
        "config": cfg.to_dict(),
        "problem": {**prob.meta, "n": prob.n, "p": prob.p},
        "graph": graph_to_dict(mix.graph, mix, validate_mixing(mix)),
        "spectral": asdict(spectral_summary(mix)),
        "runs": {t.name: t.manifest for t in traces},
    }
    return ExperimentResult(cfg, prob, mix, {t.name: t for t in traces}, manifest)


def rank_at_budget(result, rounds: int) -> list[tuple[str, float]]:
    """Algorithms ordered by relative error after at most `rounds` communication rounds."""
    ranking = []
    for name, tr in result.items():
        cr = tr.comm_rounds
        idx = np.nonzero(cr <= rounds)[0]
        if idx.size:
            ranking.append((name, float(tr.rel_error[idx[-1]])))
    return sorted(ranking, key=lambda kv: kv[1])


# -- export --------------------------------------------------------------------


def _fmt(v) -> str:
    if isinstance(v, (int, np.integer)):
        return str(int(v))
    return repr(float(v))


def _json_safe(v):
    if isinstance(v, float) and not math.isfinite(v):
        return None if math.isnan(v) else repr(v)
    if isinstance(v, dict):
        return {k: _json_safe(x) for k, x in v.items()}
    if isinstance(v, (list, tuple)):
        return [_json_safe(x) for x in v]
    if isinstance(v, np.ndarray):
        return _json_safe(v.tolist())
    if isinstance(v, np.generic):
        return _json_safe(v.item())
    return v


def _json_float(v):
    if v is None:
        return math.nan
    if isinstance(v, str):
        return float(v)
    return v


def export_trace(trace: RunTrace, path, fmt: str | None = None, manifest: dict | None = None) -> Path:
    """Write `trace` as CSV (the eight trace columns) or JSON (columns, status, manifest).

    Floats are written with ``repr`` so a re-import reproduces them exactly.
    """
    if not len(trace):
        raise ValueError("cannot export an empty trace")
    path = Path(path)
    fmt = fmt or path.suffix.lstrip(".")
    path.parent.mkdir(parents=True, exist_ok=True)
    if fmt == "csv":
        with path.open("w", newline="") as fh:
            wr = csv.writer(fh, lineterminator="\n")
            wr.writerow(TRACE_COLUMNS)
            for row in zip(*(trace.columns[c] for c in TRACE_COLUMNS)):
                wr.writerow([_fmt(v) for v in row])
    elif fmt == "json":
        doc = {
            "name": trace.name,
            "kind": trace.kind,
            "status": trace.status,
            "manifest": _json_safe({**trace.manifest, **(manifest or {})}),
            "columns": _json_safe(trace.columns),
        }
        path.write_text(json.dumps(doc, indent=1, sort_keys=True))
    else:
        raise ValueError(f"unknown trace format {fmt!r}; expected csv or json")
    return path


def load_trace(path) -> RunTrace:
    """Inverse of :func:`export_trace`; a CSV picks up the status from a sibling JSON if present."""
    path = Path(path)
    if path.suffix == ".json":
        doc = json.loads(path.read_text())
        cols = {c: [_json_float(v) for v in doc["columns"][c]] for c in TRACE_COLUMNS}
        cols["k"] = [int(v) for v in cols["k"]]
        cols["comm_rounds"] = [int(v) for v in cols["comm_rounds"]]
        return RunTrace(doc["name"], doc["kind"], cols, doc["status"], doc.get("manifest", {}))
    with path.open(newline="") as fh:
        rd = csv.reader(fh)
        header = next(rd)
        if tuple(header) != TRACE_COLUMNS:
            raise ValueError(f"{path}: unexpected header {header}")
        cols = {c: [] for c in TRACE_COLUMNS}
        for row in rd:
            for c, v in zip(TRACE_COLUMNS, row):
                cols[c].append(int(v) if c in ("k", "comm_rounds") else float(v))
    sibling = path.with_suffix(".json")
    status, manifest, kind = "max_iter", {}, ""
    if sibling.exists():
        doc = json.loads(sibling.read_text())
        status, manifest, kind = doc["status"], doc.get("manifest", {}), doc.get("kind", "")
    return RunTrace(path.stem, kind, cols, status, manifest)


def _safe_name(name: str) -> str:
    return "".join(ch if ch.isalnum() or ch in "-_." else "_" for ch in name)


def export_wide_csv(result: ExperimentResult, path) -> Path:
    """One row per iteration index with ``rel_error`` and ``comm_rounds`` of every algorithm."""
    path = Path(path)
    names = list(result)
    by_k = [dict(zip(result[n].columns["k"], zip(result[n].columns["rel_error"], result[n].columns["comm_rounds"]))) for n in names]
    ks = sorted(set().union(*by_k))
    with path.open("w", newline="") as fh:
        wr = csv.writer(fh, lineterminator="\n")
        wr.writerow(["k"] + [f"{n}:{col}" for n in names for col in ("rel_error", "comm_rounds")])
        for k in ks:
            row = [str(k)]
            for rows in by_k:
                if k in rows:
                    row += [_fmt(rows[k][0]), _fmt(rows[k][1])]
                else:
                    row += ["", ""]
            wr.writerow(row)
    return path


def export_experiment(result: ExperimentResult, directory=None, timings: dict | None = None) -> Path:
    """Write per-run traces, the wide CSV, and ``manifest.json``; returns the manifest path.

    Wall-clock information goes only under the manifest's ``timestamps`` key
    so that everything else is byte-reproducible.
    """
    out = Path(directory or result.config.output.directory)
    out.mkdir(parents=True, exist_ok=True)
    files = {}
    for name, tr in result.items():
        stem = _safe_name(name)
        for fmt in result.config.output.formats:
            files.setdefault(name, []).append(export_trace(tr, out / f"{stem}.{fmt}", fmt).name)
    wide = export_wide_csv(result, out / "traces_wide.csv")
    manifest = dict(result.manifest)
    manifest["files"] = {"traces": files, "wide_csv": wide.name}
    if result.config.output.save_problem:
        from .objectives import save_problem

        manifest["files"]["problem"] = str(save_problem(result.problem, out / "problem").relative_to(out))
    if timings:
        manifest["timestamps"] = timings
    path = out / "manifest.json"
    path.write_text(json.dumps(_json_safe(manifest), indent=1, sort_keys=True))
    return path


# -- presets -------------------------------------------------------------------

SENSING_TOPOLOGIES = {"sparse": 0.12, "dense": 0.5}
GRAPH_SEED = 7


def sensing_config(topology: str = "sparse", seed: int = 0, mixing: str = "laplacian") -> ExperimentConfig:
    """Strongly convex sensing: n=40, m_i=60, p=50, ``L_i = 1``, ``mu_i = 0.5``, ``alpha = 1``."""
    algos = [
        AlgorithmSpec("NIDS", "nids", 1.0, "boundary"),
        AlgorithmSpec("NIDS-c-half", "nids", 1.0, "half"),
        AlgorithmSpec("EXTRA", "extra", 1.0),
        AlgorithmSpec("DIGing-ATC", "diging_atc", 1.0),
    ]
    return ExperimentConfig(
        name=f"sensing_{topology}",
        problem=ProblemSpec("sensing", {"n": 40, "m": 60, "p": 50, "target_l": 1.0, "target_mu": 0.5, "seed": seed}),
        topology=TopologySpec("erdos_renyi", SENSING_TOPOLOGIES[topology], GRAPH_SEED, mixing),
        algorithms=algos,
        stopping=StoppingSpec(1e-11, DEFAULT_MAX_ITER["sensing"]),
        output=OutputSpec(f"runs/sensing_{topology}"),
    ).validate()


def heterogeneous_config(seed: int = 0, topology: str = "dense", mixing: str = "laplacian") -> ExperimentConfig:
    """Two agents with ``L = 2``, ``mu = 0.4``; the rest ``L = 1``, ``mu = 0.2``."""
    n = 40
    lips = [2.0, 2.0] + [1.0] * (n - 2)
    mus = [0.4, 0.4] + [0.2] * (n - 2)
    uniform = {"policy": "max_lipschitz", "scale": 1.0}
    algos = [
        AlgorithmSpec("NIDS-adaptive", "nids", {"policy": "inverse_lipschitz", "scale": 1.0}, "boundary"),
        AlgorithmSpec("NIDS", "nids", uniform, "boundary"),
        AlgorithmSpec("EXTRA", "extra", uniform),
        AlgorithmSpec("DIGing-ATC", "diging_atc", uniform),
    ]
    return ExperimentConfig(
        name=f"heterogeneous_{topology}",
        problem=ProblemSpec("sensing", {"n": n, "m": 60, "p": 50, "target_l": lips, "target_mu": mus, "seed": seed}),
        topology=TopologySpec("erdos_renyi", SENSING_TOPOLOGIES[topology], GRAPH_SEED, mixing),
        algorithms=algos,
        stopping=StoppingSpec(1e-11, DEFAULT_MAX_ITER["sensing"]),
        output=OutputSpec(f"runs/heterogeneous_{topology}"),
    ).validate()


def lasso_config(seed: int = 0, mixing: str = "laplacian") -> ExperimentConfig:
    """Decentralized LASSO: n=40, m_i=3, p=200, ``L_i = 1``; step sizes 1, 1.4 and 1.9."""
    algos = [AlgorithmSpec(f"NIDS-{a:g}", "nids", a, "half") for a in (1.0, 1.4, 1.9)]
    algos += [AlgorithmSpec(f"PG-EXTRA-{a:g}", "pg_extra", a) for a in (1.0, 1.4)]
    return ExperimentConfig(
        name="lasso",
        problem=ProblemSpec("lasso", {"n": 40, "m": 3, "p": 200, "seed": seed}),
        topology=TopologySpec("erdos_renyi", SENSING_TOPOLOGIES["sparse"], GRAPH_SEED, mixing),
        algorithms=algos,
        stopping=StoppingSpec(1e-7, DEFAULT_MAX_ITER["lasso"]),
        output=OutputSpec("runs/lasso"),
    ).validate()


PRESETS = {
    "sensing_sparse": lambda: sensing_config("sparse"),
    "sensing_dense": lambda: sensing_config("dense"),
    "heterogeneous": heterogeneous_config,
    "lasso": lasso_config,
}
