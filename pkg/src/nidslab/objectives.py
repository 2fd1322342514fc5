"""Local objectives, test-problem generators, and centralized reference solvers.

The global problem is ``min_x (1/n) sum_i s_i(x) + r_i(x)`` with smooth
``s_i`` and proximable ``r_i``. Each agent's prox is taken with its own step:
``prox_{alpha_i r_i}``.
"""

from __future__ import annotations

import json
import logging
import math
from dataclasses import dataclass, field, replace
from pathlib import Path
from typing import NamedTuple, Sequence

import numpy as np

from .errors import ConvergenceError, NumericalError

log = logging.getLogger(__name__)

SENSING_REFERENCE_TOL = 1e-13
LASSO_REFERENCE_TOL = 1e-12


# -- smooth terms --------------------------------------------------------------


class SmoothTerm:
    """Convex differentiable local term with ``L``-Lipschitz gradient.

    Subclasses provide :meth:`value`, :meth:`gradient`, and the constants
    `lipschitz` and `strong_convexity`.
    """

    dim: int
    lipschitz: float
    strong_convexity: float

    def value(self, x: np.ndarray) -> float:
        raise NotImplementedError

    def gradient(self, x: np.ndarray) -> np.ndarray:
        raise NotImplementedError


@dataclass(frozen=True, eq=False)
class LeastSquaresTerm(SmoothTerm):
    """``s(x) = ½ ||M x - y||²``."""

    matrix: np.ndarray
    target: np.ndarray
    lipschitz: float = field(init=False)
    strong_convexity: float = field(init=False)

    def __post_init__(self):
        m = np.array(self.matrix, dtype=float)
        y = np.array(self.target, dtype=float).ravel()
        if m.ndim != 2 or m.shape[0] != y.size:
            raise ValueError(f"matrix shape {m.shape} does not match target of length {y.size}")
        m.setflags(write=False)
        y.setflags(write=False)
        object.__setattr__(self, "matrix", m)
        object.__setattr__(self, "target", y)
        # a wide matrix has a nontrivial null space, so mu = 0 exactly
        sv = np.linalg.svd(m, compute_uv=False)
        lip = float(sv[0] ** 2) if sv.size else 0.0
        mu = float(sv[-1] ** 2) if m.shape[0] >= m.shape[1] else 0.0
        object.__setattr__(self, "lipschitz", lip)
        object.__setattr__(self, "strong_convexity", mu)

    @property
    def dim(self) -> int:
        return self.matrix.shape[1]

    def residual(self, x):
        return self.matrix @ np.asarray(x, dtype=float) - self.target

    def value(self, x) -> float:
        r = self.residual(x)
        return 0.5 * float(r @ r)

    def gradient(self, x) -> np.ndarray:
        return self.matrix.T @ self.residual(x)


def least_squares_term(m, y) -> LeastSquaresTerm:
    return LeastSquaresTerm(m, y)


def rescale_matrix(m: np.ndarray, target_l: float, target_mu: float = 0.0) -> np.ndarray:
    """Map the squared singular values of `m` affinely onto ``[target_mu, target_l]``.

    With ``target_mu == 0`` the matrix is only scaled so that its largest
    squared singular value is `target_l`.
    """
    m = np.asarray(m, dtype=float)
    if not (target_l >= target_mu >= 0) or target_l <= 0:
        raise ValueError(f"need target_l >= target_mu >= 0 and target_l > 0, got L={target_l}, mu={target_mu}")
    u, s, vt = np.linalg.svd(m, full_matrices=False)
    s2 = s**2
    if target_mu == 0:
        if s2[0] == 0:
            raise NumericalError("cannot rescale a zero matrix")
        return m * math.sqrt(target_l / s2[0])
    if m.shape[0] < m.shape[1] or s2[-1] <= 1e-14 * s2[0]:
        raise NumericalError(
            f"infeasible target: mu={target_mu} > 0 needs a full-column-rank matrix, got shape {m.shape}"
        )
    spread = s2[0] - s2[-1]
    if spread <= 1e-14 * s2[0]:
        if not math.isclose(target_l, target_mu):
            raise NumericalError("infeasible target: all singular values are equal, cannot separate L and mu")
        new_s2 = np.full_like(s2, target_l)
    else:
        a = (target_l - target_mu) / spread
        b = target_l - a * s2[0]
        new_s2 = a * s2 + b
        new_s2[0], new_s2[-1] = target_l, target_mu
    return (u * np.sqrt(new_s2)) @ vt


def rescale_to_constants(term: LeastSquaresTerm, target_l: float, target_mu: float, signal=None, noise=None):
    """Return a copy of `term` with Lipschitz constant `target_l` and modulus `target_mu`.

    When `signal` is given the measurements are recomputed as
    ``M' signal + noise``; otherwise the old measurements are kept.
    """
    m_new = rescale_matrix(term.matrix, target_l, target_mu)
    if signal is None:
        y_new = term.target
    else:
        y_new = m_new @ np.asarray(signal, dtype=float)
        if noise is not None:
            y_new = y_new + np.asarray(noise, dtype=float)
    return LeastSquaresTerm(m_new, y_new)


# -- proximable terms ------------------------------------------------------------


def prox_l1(v, threshold):
    """Soft thresholding ``sign(v) * max(|v| - threshold, 0)``."""
    threshold = np.asarray(threshold, dtype=float)
    if np.any(threshold < 0):
        raise ValueError("threshold must be nonnegative")
    v = np.asarray(v, dtype=float)
    return np.sign(v) * np.maximum(np.abs(v) - threshold, 0.0)


PROX_KINDS = ("zero", "l1", "box")


@dataclass(frozen=True)
class ProxTerm:
    """Proximable local term: ``0``, ``weight * ||x||_1``, or the indicator of ``[lo, hi]``."""

    kind: str = "zero"
    weight: float = 0.0
    lo: float = -math.inf
    hi: float = math.inf

    def __post_init__(self):
        if self.kind not in PROX_KINDS:
            raise ValueError(f"unknown prox kind {self.kind!r}")
        if self.kind == "l1" and self.weight < 0:
            raise ValueError("l1 weight must be nonnegative")
        if self.kind == "box" and not self.lo <= self.hi:
            raise ValueError(f"empty box [{self.lo}, {self.hi}]")

    @property
    def is_zero(self) -> bool:
        return self.kind == "zero" or (self.kind == "l1" and self.weight == 0)

    def prox(self, v, step: float):
        """``argmin_x step * r(x) + ½ ||x - v||²``."""
        v = np.asarray(v, dtype=float)
        if step == 0:
            return v.copy()
        if self.kind == "l1":
            return prox_l1(v, self.weight * step)
        if self.kind == "box":
            return np.clip(v, self.lo, self.hi)
        return v.copy()

    def value(self, x) -> float:
        x = np.asarray(x, dtype=float)
        if self.kind == "l1":
            return self.weight * float(np.sum(np.abs(x)))
        if self.kind == "box":
            return 0.0 if np.all((x >= self.lo) & (x <= self.hi)) else math.inf
        return 0.0

    def to_dict(self) -> dict:
        d = {"kind": self.kind}
        if self.kind == "l1":
            d["weight"] = self.weight
        if self.kind == "box":
            d["lo"], d["hi"] = self.lo, self.hi
        return d


# -- problem instance ----------------------------------------------------------


@dataclass(frozen=True, eq=False)
class ProblemInstance:
    """``n`` agents, each holding a smooth and a proximable term over ``R^p``."""

    smooth: tuple[SmoothTerm, ...]
    nonsmooth: tuple[ProxTerm, ...]
    ground_truth: np.ndarray | None = None
    reference_solution: np.ndarray | None = None
    meta: dict = field(default_factory=dict)

    def __post_init__(self):
        smooth = tuple(self.smooth)
        nonsmooth = tuple(self.nonsmooth) if self.nonsmooth else tuple(ProxTerm() for _ in smooth)
        if not smooth or len(smooth) != len(nonsmooth):
            raise ValueError("need one smooth and one prox term per agent")
        dims = {t.dim for t in smooth}
        if len(dims) != 1:
            raise ValueError(f"agents disagree on dimension: {sorted(dims)}")
        object.__setattr__(self, "smooth", smooth)
        object.__setattr__(self, "nonsmooth", nonsmooth)
        # batched least squares when shapes agree
        batched = None
        if all(isinstance(t, LeastSquaresTerm) for t in smooth):
            shapes = {t.matrix.shape for t in smooth}
            if len(shapes) == 1:
                batched = (
                    np.stack([t.matrix for t in smooth]),
                    np.stack([t.target for t in smooth]),
                )
        object.__setattr__(self, "_batched", batched)

    @property
    def n(self) -> int:
        return len(self.smooth)

    @property
    def p(self) -> int:
        return self.smooth[0].dim

    @property
    def lipschitz(self) -> np.ndarray:
        return np.array([t.lipschitz for t in self.smooth])

    @property
    def strong_convexity(self) -> np.ndarray:
        return np.array([t.strong_convexity for t in self.smooth])

    @property
    def is_smooth(self) -> bool:
        """True when every proximable term is zero."""
        return all(r.is_zero for r in self.nonsmooth)

    def gradient(self, x: np.ndarray) -> np.ndarray:
        """Stacked gradient: row ``i`` is ``grad s_i(x_i)``."""
        if self._batched is not None:
            m, y = self._batched
            r = np.matmul(m, x[:, :, None])[:, :, 0] - y
            return np.matmul(r[:, None, :], m)[:, 0, :]
        return np.stack([t.gradient(xi) for t, xi in zip(self.smooth, x)])

    def prox(self, z: np.ndarray, alpha: np.ndarray) -> np.ndarray:
        """Row-wise ``prox_{alpha_i r_i}(z_i)``."""
        kinds = {r.kind for r in self.nonsmooth}
        if kinds == {"zero"}:
            return z.copy()
        if kinds == {"l1"}:
            thr = np.array([r.weight for r in self.nonsmooth]) * alpha
            return prox_l1(z, thr[:, None])
        return np.stack([r.prox(zi, a) for r, zi, a in zip(self.nonsmooth, z, alpha)])

    def objective(self, x) -> float:
        """``(1/n) sum_i s_i(x) + r_i(x)`` at a single vector `x`."""
        x = np.asarray(x, dtype=float).ravel()
        return sum(s.value(x) + r.value(x) for s, r in zip(self.smooth, self.nonsmooth)) / self.n

    def aggregate_gradient(self, x) -> np.ndarray:
        """Gradient of ``(1/n) sum_i s_i`` at a single vector."""
        x = np.asarray(x, dtype=float).ravel()
        return self.gradient(np.tile(x, (self.n, 1))).mean(axis=0)

    def aggregate_lipschitz(self) -> float:
        """Lipschitz constant of the averaged smooth part (exact for least squares)."""
        if all(isinstance(t, LeastSquaresTerm) for t in self.smooth):
            gram = sum(t.matrix.T @ t.matrix for t in self.smooth) / self.n
            return float(np.linalg.eigvalsh(gram)[-1])
        return float(np.mean(self.lipschitz))

    def with_reference(self, x_star) -> "ProblemInstance":
        return replace(self, reference_solution=np.asarray(x_star, dtype=float).copy())


def aggregate_prox(prob: ProblemInstance, v: np.ndarray, step: float) -> np.ndarray:
    """Prox of ``step * (1/n) sum_i r_i`` at a single vector."""
    kinds = {r.kind for r in prob.nonsmooth if not r.is_zero}
    if not kinds:
        return v.copy()
    if kinds == {"l1"}:
        lam = sum(r.weight for r in prob.nonsmooth if r.kind == "l1") / prob.n
        return prox_l1(v, lam * step)
    if kinds == {"box"}:
        # sum of box indicators is the indicator of their intersection
        lo = max(r.lo for r in prob.nonsmooth if r.kind == "box")
        hi = min(r.hi for r in prob.nonsmooth if r.kind == "box")
        if lo > hi:
            raise NumericalError("box constraints have empty intersection")
        return np.clip(v, lo, hi)
    raise NotImplementedError("centralized prox for mixed nonsmooth kinds")


class ReferenceResult(NamedTuple):
    x: np.ndarray
    iterations: int
    step_change: float


def centralized_reference(
    prob: ProblemInstance, tol: float = 1e-12, max_iter: int = 1_000_000, x0=None
) -> ReferenceResult:
    """Proximal gradient on the averaged objective with step ``1 / L``.

    Stops once ``||x^{k+1} - x^k|| <= tol``.
    """
    lip = prob.aggregate_lipschitz()
    if not lip > 0:
        raise NumericalError("aggregate smooth part has zero curvature")
    step = 1.0 / lip
    x = np.zeros(prob.p) if x0 is None else np.asarray(x0, dtype=float).ravel().copy()
    change = math.inf
    for k in range(1, max_iter + 1):
        x_new = aggregate_prox(prob, x - step * prob.aggregate_gradient(x), step)
        change = float(np.linalg.norm(x_new - x))
        x = x_new
        if not np.isfinite(change):
            raise NumericalError("centralized proximal gradient produced non-finite values")
        if change <= tol:
            log.debug("centralized reference converged in %d iterations (step change %.2e)", k, change)
            return ReferenceResult(x, k, change)
    raise ConvergenceError(
        f"centralized reference did not reach tol={tol:g} in {max_iter} iterations (last step change {change:.3e})",
        last_residual=change,
        iterations=max_iter,
    )


# -- generators ----------------------------------------------------------------


def _per_agent(value, n: int, name: str) -> np.ndarray:
    arr = np.atleast_1d(np.asarray(value, dtype=float))
    if arr.size == 1:
        return np.full(n, float(arr[0]))
    if arr.size != n:
        raise ValueError(f"{name} must be a scalar or have {n} entries")
    return arr


def generate_sensing_problem(
    n: int = 40,
    m: int = 60,
    p: int = 50,
    target_l: float | Sequence[float] = 1.0,
    target_mu: float | Sequence[float] = 0.5,
    noise_std: float = 0.01,
    seed: int = 0,
    reference_tol: float = SENSING_REFERENCE_TOL,
) -> ProblemInstance:
    """Decentralized least-squares sensing with prescribed ``L_i`` and ``mu_i``.

    Each agent observes ``y_i = M_i x + e_i`` with Gaussian ``M_i`` whose
    spectrum is rescaled so that ``M_i^T M_i`` has extreme eigenvalues
    ``target_l[i]`` and ``target_mu[i]``. Constants may be scalars or per-agent
    sequences.
    """
    if min(n, m, p) < 1:
        raise ValueError("n, m, p must be positive")
    if noise_std < 0:
        raise ValueError("noise_std must be nonnegative")
    ls = _per_agent(target_l, n, "target_l")
    mus = _per_agent(target_mu, n, "target_mu")
    rng = np.random.default_rng(seed)
    signal = rng.standard_normal(p)
    terms = []
    for i in range(n):
        raw = rng.standard_normal((m, p))
        noise = noise_std * rng.standard_normal(m)
        mi = rescale_matrix(raw, ls[i], mus[i])
        terms.append(LeastSquaresTerm(mi, mi @ signal + noise))
    meta = {
        "generator": "sensing",
        "n": n,
        "m": m,
        "p": p,
        "target_l": ls.tolist(),
        "target_mu": mus.tolist(),
        "noise_std": noise_std,
        "seed": seed,
        "reference_tol": reference_tol,
    }
    prob = ProblemInstance(tuple(terms), tuple(ProxTerm() for _ in range(n)), ground_truth=signal, meta=meta)
    ref = centralized_reference(prob, tol=reference_tol)
    meta["reference_iterations"] = ref.iterations
    return prob.with_reference(ref.x)


def default_l1_weight(terms: Sequence[LeastSquaresTerm]) -> float:
    """``0.01 * ||sum_i M_i^T y_i||_inf / n`` (1% of the weight that zeroes the solution)."""
    corr = sum(t.matrix.T @ t.target for t in terms)
    return 0.01 * float(np.max(np.abs(corr))) / len(terms)


def generate_lasso_problem(
    n: int = 40,
    m: int = 3,
    p: int = 200,
    sparsity: int | None = None,
    l1_weight: float | None = None,
    noise_std: float = 0.01,
    seed: int = 0,
    reference_tol: float = LASSO_REFERENCE_TOL,
) -> ProblemInstance:
    """Decentralized compressed sensing with an ``l1`` term on every agent.

    Each ``M_i`` is normalized so that ``L_i = 1``. `sparsity` defaults to
    ``ceil(0.05 p)`` and `l1_weight` to :func:`default_l1_weight`.
    """
    if sparsity is None:
        sparsity = math.ceil(0.05 * p)
    if not 1 <= sparsity <= p:
        raise ValueError(f"sparsity must be in [1, {p}], got {sparsity}")
    rng = np.random.default_rng(seed)
    signal = np.zeros(p)
    support = rng.choice(p, size=sparsity, replace=False)
    signal[support] = rng.standard_normal(sparsity)
    terms = []
    for _ in range(n):
        mi = rescale_matrix(rng.standard_normal((m, p)), 1.0, 0.0)
        noise = noise_std * rng.standard_normal(m)
        terms.append(LeastSquaresTerm(mi, mi @ signal + noise))
    if l1_weight is None:
        l1_weight = default_l1_weight(terms)
    if l1_weight < 0:
        raise ValueError("l1_weight must be nonnegative")
    prox = tuple(ProxTerm("l1", l1_weight) for _ in range(n))
    meta = {
        "generator": "lasso",
        "n": n,
        "m": m,
        "p": p,
        "sparsity": sparsity,
        "l1_weight": l1_weight,
        "noise_std": noise_std,
        "seed": seed,
        "reference_tol": reference_tol,
    }
    prob = ProblemInstance(tuple(terms), prox, ground_truth=signal, meta=meta)
    ref = centralized_reference(prob, tol=reference_tol)
    meta["reference_iterations"] = ref.iterations
    return prob.with_reference(ref.x)


# -- serialization -------------------------------------------------------------


def _write_csv(path: Path, arr) -> None:
    np.savetxt(path, np.atleast_2d(np.asarray(arr, dtype=float)), delimiter=",", fmt="%.17g")


def _read_csv(path: Path) -> np.ndarray:
    return np.loadtxt(path, delimiter=",", ndmin=2)


def save_problem(prob: ProblemInstance, directory) -> Path:
    """Write a manifest JSON plus one CSV per matrix; returns the manifest path."""
    if not all(isinstance(t, LeastSquaresTerm) for t in prob.smooth):
        raise NotImplementedError("only least-squares problems serialize")
    d = Path(directory)
    d.mkdir(parents=True, exist_ok=True)
    agents = []
    for i, (s, r) in enumerate(zip(prob.smooth, prob.nonsmooth)):
        _write_csv(d / f"M_{i}.csv", s.matrix)
        _write_csv(d / f"y_{i}.csv", s.target[None, :])
        agents.append(
            {
                "matrix": f"M_{i}.csv",
                "target": f"y_{i}.csv",
                "lipschitz": s.lipschitz,
                "strong_convexity": s.strong_convexity,
                "prox": r.to_dict(),
            }
        )
    manifest = {"format": "nidslab-problem/1", "n": prob.n, "p": prob.p, "meta": prob.meta, "agents": agents}
    if prob.ground_truth is not None:
        _write_csv(d / "ground_truth.csv", prob.ground_truth[None, :])
        manifest["ground_truth"] = "ground_truth.csv"
    if prob.reference_solution is not None:
        _write_csv(d / "reference.csv", prob.reference_solution[None, :])
        manifest["reference_solution"] = "reference.csv"
    path = d / "problem.json"
    path.write_text(json.dumps(manifest, indent=2))
    return path


def load_problem(path) -> ProblemInstance:
    """Inverse of :func:`save_problem`; `path` is the manifest or its directory."""
    path = Path(path)
    if path.is_dir():
        path = path / "problem.json"
    d = path.parent
    manifest = json.loads(path.read_text())
    smooth, prox = [], []
    for a in manifest["agents"]:
        smooth.append(LeastSquaresTerm(_read_csv(d / a["matrix"]), _read_csv(d / a["target"]).ravel()))
        pd = a.get("prox", {"kind": "zero"})
        prox.append(
            ProxTerm(pd["kind"], pd.get("weight", 0.0), pd.get("lo", -math.inf), pd.get("hi", math.inf))
        )
    gt = _read_csv(d / manifest["ground_truth"]).ravel() if "ground_truth" in manifest else None
    ref = _read_csv(d / manifest["reference_solution"]).ravel() if "reference_solution" in manifest else None
    return ProblemInstance(tuple(smooth), tuple(prox), ground_truth=gt, reference_solution=ref, meta=manifest.get("meta", {}))
