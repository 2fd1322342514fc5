"""Communication graphs, mixing matrices, and their spectra.

Node indices are 0-based everywhere in code and in files. Log messages
print them 1-based.
"""

from __future__ import annotations

import json
import logging
import math
from collections import deque
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .errors import GraphSamplingError, NumericalError

log = logging.getLogger(__name__)

GRAPH_MODELS = ("ring", "complete", "erdos_renyi")
ER_RETRY_BUDGET = 1000

#: Absolute tolerance on eigenvalues of W (its spectrum lives in [-1, 1]).
EIG_TOL = 1e-10
#: Entry-wise tolerance for sparsity, symmetry and row sums.
ENTRY_TOL = 1e-12


@dataclass(frozen=True)
class Graph:
    """Connected undirected simple graph on nodes ``0..n-1``.

    Edges are stored as sorted pairs ``(i, j)`` with ``i < j``.
    """

    n: int
    edges: tuple[tuple[int, int], ...]

    def __post_init__(self):
        if self.n < 1:
            raise ValueError(f"graph needs at least one node, got n={self.n}")
        seen = set()
        for i, j in self.edges:
            if i == j:
                raise ValueError(f"self-loop at node {i + 1}")
            if not (0 <= i < self.n and 0 <= j < self.n):
                raise ValueError(f"edge ({i + 1},{j + 1}) out of range for n={self.n}")
            key = (min(i, j), max(i, j))
            if key in seen:
                raise ValueError(f"duplicate edge ({key[0] + 1},{key[1] + 1})")
            seen.add(key)
        object.__setattr__(self, "edges", tuple(sorted(seen)))
        if not is_connected(self.n, self.edges):
            raise ValueError("graph is not connected")

    @property
    def degrees(self) -> np.ndarray:
        deg = np.zeros(self.n, dtype=int)
        for i, j in self.edges:
            deg[i] += 1
            deg[j] += 1
        return deg

    def adjacency(self) -> np.ndarray:
        a = np.zeros((self.n, self.n))
        for i, j in self.edges:
            a[i, j] = a[j, i] = 1.0
        return a

    def laplacian(self) -> np.ndarray:
        a = self.adjacency()
        return np.diag(a.sum(axis=1)) - a

    def has_edge(self, i: int, j: int) -> bool:
        return (min(i, j), max(i, j)) in set(self.edges)


def is_connected(n: int, edges) -> bool:
    """Breadth-first search from node 0."""
    nbrs = [[] for _ in range(n)]
    for i, j in edges:
        nbrs[i].append(j)
        nbrs[j].append(i)
    seen = {0}
    queue = deque([0])
    while queue:
        u = queue.popleft()
        for v in nbrs[u]:
            if v not in seen:
                seen.add(v)
                queue.append(v)
    return len(seen) == n


def generate_graph(n: int, model: str = "erdos_renyi", seed: int = 0, prob: float | None = None) -> Graph:
    """Build a connected graph.

    Parameters
    ----------
    n : int
        Number of agents.
    model : {"ring", "complete", "erdos_renyi"}
        Graph family.
    seed : int
        Seed for the Erdős–Rényi sampler; ignored by deterministic models.
    prob : float, optional
        Edge probability for ``erdos_renyi``. Must satisfy ``0 < prob <= 1``.

    Notes
    -----
    Erdős–Rényi graphs are resampled until connected, up to
    ``ER_RETRY_BUDGET`` draws from one generator seeded by `seed`.
    """
    if n < 1:
        raise ValueError(f"n must be >= 1, got {n}")
    if model == "complete":
        return Graph(n, tuple((i, j) for i in range(n) for j in range(i + 1, n)))
    if model == "ring":
        edges = {(min(i, (i + 1) % n), max(i, (i + 1) % n)) for i in range(n) if n > 1}
        return Graph(n, tuple(sorted(edges)))
    if model != "erdos_renyi":
        raise ValueError(f"unknown graph model {model!r}; expected one of {GRAPH_MODELS}")
    if prob is None or not (0.0 < prob <= 1.0):
        raise ValueError(f"erdos_renyi needs 0 < prob <= 1, got {prob}")

    rng = np.random.default_rng(seed)
    iu, ju = np.triu_indices(n, k=1)
    for attempt in range(ER_RETRY_BUDGET):
        keep = rng.random(iu.size) < prob
        edges = tuple(zip(iu[keep].tolist(), ju[keep].tolist()))
        if is_connected(n, edges):
            if attempt:
                log.debug("erdos_renyi(n=%d, p=%g) connected after %d resamples", n, prob, attempt)
            return Graph(n, edges)
    raise GraphSamplingError(
        f"could not sample connected graph: erdos_renyi(n={n}, prob={prob}) "
        f"failed {ER_RETRY_BUDGET} times"
    )


@dataclass(frozen=True, eq=False)
class MixingMatrix:
    """Weight matrix on a graph together with its cached spectrum.

    Construction does not enforce the mixing assumptions so that invalid
    matrices can be built and reported on; see :func:`validate_mixing`.
    `power` records ``t`` for matrices produced by :func:`consensus_power`.
    """

    w: np.ndarray
    graph: Graph
    power: int = 1
    construction: str = "custom"
    spectrum: np.ndarray = field(init=False, repr=False)

    def __post_init__(self):
        w = np.array(self.w, dtype=float)
        if w.shape != (self.graph.n, self.graph.n):
            raise ValueError(f"weights have shape {w.shape}, expected {(self.graph.n,) * 2}")
        if not np.all(np.isfinite(w)):
            raise ValueError("weights contain non-finite entries")
        w.setflags(write=False)
        object.__setattr__(self, "w", w)
        try:
            eig = np.linalg.eigvalsh(0.5 * (w + w.T))[::-1].copy()
        except np.linalg.LinAlgError as exc:  # pragma: no cover
            raise NumericalError(f"eigen-decomposition failed: {exc}") from exc
        eig.setflags(write=False)
        object.__setattr__(self, "spectrum", eig)

    @property
    def n(self) -> int:
        return self.graph.n

    def laplacian_part(self) -> np.ndarray:
        """``I - W``."""
        return np.eye(self.n) - self.w


def metropolis_weights(g: Graph) -> MixingMatrix:
    """Metropolis–Hastings weights ``1 / (1 + max(deg_i, deg_j))`` on edges."""
    deg = g.degrees
    w = np.zeros((g.n, g.n))
    for i, j in g.edges:
        w[i, j] = w[j, i] = 1.0 / (1.0 + max(deg[i], deg[j]))
    w[np.diag_indices(g.n)] = 1.0 - w.sum(axis=1)
    return MixingMatrix(w, g, construction="metropolis")


def laplacian_weights(g: Graph, tau: float | None = None) -> MixingMatrix:
    """``W = I - tau * L`` for the graph Laplacian ``L``.

    `tau` defaults to ``1 / lambda_max(L)``; it must lie in
    ``(0, 2 / lambda_max(L))`` so that the smallest eigenvalue of W exceeds -1.
    """
    lap = g.laplacian()
    lmax = float(np.linalg.eigvalsh(lap)[-1]) if g.n > 1 else 0.0
    bound = 2.0 / lmax if lmax > 0 else math.inf
    if tau is None:
        tau = 1.0 / lmax if lmax > 0 else 1.0
    if not (0.0 < tau < bound):
        raise ValueError(f"tau={tau} outside admissible range (0, 2/lambda_1(L)) = (0, {bound})")
    return MixingMatrix(np.eye(g.n) - tau * lap, g, construction=f"laplacian(tau={tau!r})")


@dataclass(frozen=True)
class CheckResult:
    name: str
    passed: bool
    violation: float
    tolerance: float
    detail: str = ""


@dataclass(frozen=True)
class ValidationReport:
    """One entry per mixing-matrix requirement."""

    checks: tuple[CheckResult, ...]

    @property
    def passed(self) -> bool:
        return all(c.passed for c in self.checks)

    def __getitem__(self, name: str) -> CheckResult:
        for c in self.checks:
            if c.name == name:
                return c
        raise KeyError(name)

    def failed(self) -> list[str]:
        return [c.name for c in self.checks if not c.passed]

    def to_dict(self) -> dict:
        return {
            "passed": self.passed,
            "checks": [
                {
                    "name": c.name,
                    "passed": c.passed,
                    "violation": c.violation,
                    "tolerance": c.tolerance,
                    "detail": c.detail,
                }
                for c in self.checks
            ],
        }

    def lines(self) -> list[str]:
        return [
            f"{'PASS' if c.passed else 'FAIL'}  {c.name:<14} violation={c.violation:.3e} tol={c.tolerance:.1e}"
            + (f"  ({c.detail})" if c.detail else "")
            for c in self.checks
        ]


def validate_mixing(mix: MixingMatrix, entry_tol: float = ENTRY_TOL, eig_tol: float = EIG_TOL) -> ValidationReport:
    """Check decentralization, symmetry, null space and spectrum of W.

    Never raises on a bad matrix; failures are entries of the report.
    """
    w, n = mix.w, mix.n
    checks = []

    if mix.power > 1:
        checks.append(CheckResult("decentralized", True, 0.0, entry_tol, f"waived: W^{mix.power} is not sparse"))
    else:
        mask = ~np.eye(n, dtype=bool)
        for i, j in mix.graph.edges:
            mask[i, j] = mask[j, i] = False
        off = float(np.max(np.abs(w[mask]))) if mask.any() else 0.0
        checks.append(CheckResult("decentralized", off <= entry_tol, off, entry_tol))

    asym = float(np.max(np.abs(w - w.T)))
    checks.append(CheckResult("symmetry", asym <= entry_tol, asym, entry_tol))

    # Null(I - W) = span(1): W1 = 1 and eigenvalue 1 is simple.
    row_err = float(np.max(np.abs(w.sum(axis=1) - 1.0)))
    lam2 = float(mix.spectrum[1]) if n > 1 else -math.inf
    simple_margin = max(0.0, lam2 - (1.0 - eig_tol))
    checks.append(
        CheckResult(
            "null_space",
            row_err <= entry_tol and simple_margin == 0.0,
            max(row_err, simple_margin),
            entry_tol,
            f"|W1-1|_inf={row_err:.2e}, lambda_2={lam2:.12g}" if n > 1 else f"|W1-1|_inf={row_err:.2e}",
        )
    )

    lam1, lamn = float(mix.spectrum[0]), float(mix.spectrum[-1])
    upper = max(0.0, lam1 - (1.0 + eig_tol))
    lower = max(0.0, (-1.0 + eig_tol) - lamn)
    checks.append(
        CheckResult(
            "spectral",
            upper == 0.0 and lower == 0.0,
            max(upper, lower),
            eig_tol,
            f"lambda_1={lam1:.12g}, lambda_n={lamn:.12g}",
        )
    )
    return ValidationReport(tuple(checks))


@dataclass(frozen=True)
class SpectralSummary:
    """Second-largest and smallest eigenvalue of W and derived quantities.

    For a single agent there is no second eigenvalue. W = [1] is then the
    exact averaging matrix, so ``lambda2 = lambda_n = 0`` by convention and
    `degenerate` is set.
    """

    lambda2: float
    lambda_n: float
    gap: float
    network_condition: float
    degenerate: bool = False


def spectral_summary(mix: MixingMatrix) -> SpectralSummary:
    if mix.n == 1:
        return SpectralSummary(0.0, 0.0, 1.0, 1.0, degenerate=True)
    lam2, lamn = float(mix.spectrum[1]), float(mix.spectrum[-1])
    gap = 1.0 - lam2
    if gap <= 0:
        raise NumericalError(f"lambda_2={lam2} >= 1: W does not define a connected mixing")
    return SpectralSummary(lam2, lamn, gap, (1.0 - lamn) / gap)


def consensus_power(mix: MixingMatrix, t: int) -> MixingMatrix:
    """``W^t``: t rounds of mixing folded into one matrix."""
    if int(t) != t or t < 1:
        raise ValueError(f"consensus power t must be a positive integer, got {t}")
    t = int(t)
    if t == 1:
        return mix
    wt = np.linalg.matrix_power(mix.w, t)
    wt = 0.5 * (wt + wt.T)
    return MixingMatrix(wt, mix.graph, power=mix.power * t, construction=f"{mix.construction}^{t}")


def suggest_consensus_steps(spec: SpectralSummary, kappa: float, t_max: int) -> int:
    """Number of mixing rounds per iteration suggested by the rate formula.

    When the network is the bottleneck (``lambda_2 > 1 - 1/kappa > 0``) the
    suggestion is the nearest integer to ``log(1 - 1/kappa) / log(lambda_2)``,
    which balances ``lambda_2^t`` against the function contraction
    ``1 - 1/kappa``. Otherwise one round suffices. The result is clipped to
    ``[1, t_max]``.
    """
    if kappa < 1:
        raise ValueError(f"kappa = L/mu must be >= 1, got {kappa}")
    if t_max < 1:
        raise ValueError(f"t_max must be >= 1, got {t_max}")
    lam2 = spec.lambda2
    if not (0.0 <= lam2 < 1.0) and not spec.degenerate:
        raise ValueError(f"need 0 <= lambda_2 < 1, got {lam2}")
    target = 1.0 - 1.0 / kappa
    if lam2 <= 0.0 or target <= 0.0 or target >= lam2:
        return 1
    t = int(math.floor(math.log(target) / math.log(lam2) + 0.5))
    return max(1, min(t, int(t_max)))


# -- serialization -----------------------------------------------------------


def graph_to_dict(g: Graph, mix: MixingMatrix | None = None, report: ValidationReport | None = None) -> dict:
    doc = {"n": g.n, "edges": [[i, j] for i, j in g.edges], "index_base": 0}
    if mix is not None:
        doc["weights"] = mix.w.ravel().tolist()
        doc["construction"] = mix.construction
        doc["power"] = mix.power
        if report is None:
            report = validate_mixing(mix)
    if report is not None:
        doc["tolerance_report"] = report.to_dict()
    return doc


def graph_from_dict(doc: dict) -> tuple[Graph, MixingMatrix | None]:
    g = Graph(int(doc["n"]), tuple((int(i), int(j)) for i, j in doc["edges"]))
    mix = None
    if doc.get("weights") is not None:
        w = np.asarray(doc["weights"], dtype=float).reshape(g.n, g.n)
        mix = MixingMatrix(w, g, power=int(doc.get("power", 1)), construction=doc.get("construction", "custom"))
    return g, mix


def save_graph(path, g: Graph, mix: MixingMatrix | None = None) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text(json.dumps(graph_to_dict(g, mix), indent=2))
    return path


def load_graph(path) -> tuple[Graph, MixingMatrix | None]:
    return graph_from_dict(json.loads(Path(path).read_text()))
