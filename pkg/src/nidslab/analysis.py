"""Fixed-point certificates, Lyapunov quantities, and convergence-rate checks for NIDS."""

from __future__ import annotations

import math
from dataclasses import dataclass, field, replace

import numpy as np

from .algorithms import NidsState, StepSizes
from .errors import InsufficientDataError, NotApplicableError
from .netgraph import spectral_summary
from .objectives import ProblemInstance
from .stackmat import RangeNorm, as_stacked, consensual, range_project, weighted_inner

#: Lyapunov values below this are round-off.
LYAPUNOV_FLOOR = 1e-24
WARMUP = 5
MIN_RATIOS = 10


# -- fixed points --------------------------------------------------------------


@dataclass(frozen=True, eq=False)
class FixedPointCertificate:
    """Optimality evidence for a stacked point ``x``.

    ``q`` is a subgradient of ``r`` at ``x``; ``d`` is the part of
    ``-(grad s(x) + q)`` inside ``range(I - W)`` and ``z = x + Λ q``. The
    discarded consensual part is what ``stationarity_residual`` measures: when
    it vanishes, ``(d, z)`` is a fixed point of the ``(x, d, z)`` iteration.
    """

    x: np.ndarray
    q: np.ndarray
    d: np.ndarray
    z: np.ndarray
    stationarity_residual: float
    consensus_residual: float
    tol: float

    @property
    def p_star_exists(self) -> bool:
        return self.stationarity_residual <= self.tol

    @property
    def certified(self) -> bool:
        return self.p_star_exists and self.consensus_residual <= self.tol

    def to_dict(self) -> dict:
        return {
            "stationarity_residual": self.stationarity_residual,
            "consensus_residual": self.consensus_residual,
            "p_star_exists": self.p_star_exists,
            "certified": self.certified,
            "tol": self.tol,
        }


def _balanced_l1_subgradient(x: np.ndarray, g: np.ndarray, lam: np.ndarray) -> np.ndarray:
    """Pick ``q in lam_i * d|x_ij|`` making each column sum of ``g + q`` as small as possible."""
    fixed = x != 0
    q = np.where(fixed, lam[:, None] * np.sign(x), 0.0)
    free_cap = np.where(fixed, 0.0, lam[:, None]).sum(axis=0)
    need = -(g.sum(axis=0) + q.sum(axis=0))
    with np.errstate(divide="ignore", invalid="ignore"):
        share = np.where(free_cap > 0, np.clip(need / free_cap, -1.0, 1.0), 0.0)
    return np.where(fixed, q, lam[:, None] * share[None, :])


def _subgradient(prob: ProblemInstance, x: np.ndarray, g: np.ndarray, alpha: np.ndarray, z=None) -> np.ndarray:
    kinds = {r.kind for r in prob.nonsmooth}
    if all(r.is_zero for r in prob.nonsmooth):
        return np.zeros_like(x)
    if kinds == {"l1"} and z is None:
        return _balanced_l1_subgradient(x, g, np.array([r.weight for r in prob.nonsmooth]))
    q = np.zeros_like(x)
    for i, r in enumerate(prob.nonsmooth):
        if r.is_zero:
            continue
        if z is not None:
            # the prox step itself certifies (z - x)/alpha in the subdifferential
            qi = (z[i] - x[i]) / alpha[i]
            if r.kind == "l1":
                qi = np.where(x[i] != 0, r.weight * np.sign(x[i]), np.clip(qi, -r.weight, r.weight))
            q[i] = qi
        elif r.kind == "l1":
            q[i] = np.where(x[i] != 0, r.weight * np.sign(x[i]), np.clip(-g[i], -r.weight, r.weight))
        else:  # box
            at_hi, at_lo = x[i] >= r.hi, x[i] <= r.lo
            q[i] = np.where(at_hi, np.maximum(-g[i], 0.0), np.where(at_lo, np.minimum(-g[i], 0.0), 0.0))
    return q


def certify_point(x, prob: ProblemInstance, steps: StepSizes, z=None, tol: float = 1e-9) -> FixedPointCertificate:
    """Build the fixed-point witnesses at `x` and report both optimality residuals.

    `x` may be stacked or a single vector (taken as consensual). Passing the
    iteration's `z` makes the subgradient the prox-consistent one.
    """
    x = np.asarray(x, dtype=float)
    x = consensual(x, prob.n) if x.ndim == 1 else as_stacked(x, prob.n)
    g = prob.gradient(x)
    q = _subgradient(prob, x, g, steps.alpha, None if z is None else np.asarray(z, dtype=float))
    total = g + q
    stationarity = float(np.linalg.norm(total.mean(axis=0)))
    lap_x = x - steps.mix.w @ x
    return FixedPointCertificate(
        x=x,
        q=q,
        d=range_project(-total),
        z=x + steps.col * q,
        stationarity_residual=stationarity,
        consensus_residual=float(np.linalg.norm(lap_x)),
        tol=tol,
    )


# -- Lyapunov quantities -------------------------------------------------------


def range_norm_for(steps: StepSizes) -> RangeNorm:
    return RangeNorm(steps.mix, steps.c, steps.alpha)


def _scale(*arrays) -> float:
    return max(float(np.linalg.norm(a)) for a in arrays)


def lyapunov_value(state: NidsState, target: FixedPointCertificate, rn: RangeNorm, mode: str = "general") -> float:
    """Distance of `state` to the fixed point `target`.

    ``general``: ``||z - z*||²_{Λ^-1} + ||d - d*||²_M``.
    ``strongly_convex``: ``||x - x*||²_{Λ^-1} + ||d - d*||²_{M+Λ}``.
    """
    inv_alpha = 1.0 / rn.alpha
    dd = state.d - target.d
    scale = _scale(state.d, target.d)
    if mode == "general":
        dz = state.z - target.z
        return weighted_inner(dz, dz, inv_alpha) + rn.sq_norm(dd, scale=scale)
    if mode == "strongly_convex":
        dx = state.x - target.x
        return weighted_inner(dx, dx, inv_alpha) + rn.sq_norm(dd, extra=rn.alpha, scale=scale)
    raise ValueError(f"unknown mode {mode!r}; expected 'general' or 'strongly_convex'")


def successive_difference(prev: NidsState, nxt: NidsState, rn: RangeNorm) -> float:
    """``||z^k - z^{k+1}||²_{Λ^-1} + ||d^k - d^{k+1}||²_M``."""
    dz = prev.z - nxt.z
    return weighted_inner(dz, dz, 1.0 / rn.alpha) + rn.sq_norm(prev.d - nxt.d, scale=_scale(prev.d, nxt.d))


def fundamental_inequality_gap(
    prev: NidsState, nxt: NidsState, target: FixedPointCertificate, rn: RangeNorm, prob: ProblemInstance
) -> float:
    """Right side minus left side of the one-step distance inequality; nonnegative when it holds.

    Every term is evaluated explicitly: four weighted distances, the two
    successive differences, and the two gradient inner products.
    """
    inv_alpha = 1.0 / rn.alpha
    sd = _scale(prev.d, nxt.d, target.d)

    def zn(a, b):
        v = a - b
        return weighted_inner(v, v, inv_alpha)

    lhs = zn(nxt.z, target.z) + rn.sq_norm(nxt.d - target.d, scale=sd)
    g_star = prob.gradient(target.x)
    gdiff = prev.grad - g_star
    rhs = (
        zn(prev.z, target.z)
        + rn.sq_norm(prev.d - target.d, scale=sd)
        - zn(prev.z, nxt.z)
        - rn.sq_norm(prev.d - nxt.d, scale=sd)
        + 2.0 * weighted_inner(gdiff, prev.z - nxt.z)
        - 2.0 * weighted_inner(prev.x - target.x, gdiff)
    )
    return rhs - lhs


def descent_factor(prob: ProblemInstance, steps: StepSizes) -> float:
    """``1 - max_i alpha_i L_i / 2``."""
    return 1.0 - float(np.max(steps.alpha * prob.lipschitz)) / 2.0


class NidsMonitor:
    """Per-iteration Lyapunov bookkeeping against a fixed target."""

    def __init__(self, prob: ProblemInstance, steps: StepSizes, target: FixedPointCertificate):
        self.prob = prob
        self.steps = steps
        self.target = target
        self.rn = range_norm_for(steps)
        self.strong = prob.is_smooth and bool(np.all(prob.strong_convexity > 0))

    def general(self, state: NidsState) -> float:
        return lyapunov_value(state, self.target, self.rn, "general")

    def strongly_convex(self, state: NidsState) -> float:
        return lyapunov_value(state, self.target, self.rn, "strongly_convex") if self.strong else math.nan

    def delta(self, prev: NidsState, nxt: NidsState) -> float:
        return successive_difference(prev, nxt, self.rn)

    def inequality_gap(self, prev: NidsState, nxt: NidsState) -> float:
        return fundamental_inequality_gap(prev, nxt, self.target, self.rn, self.prob)


# -- rates ---------------------------------------------------------------------


@dataclass(frozen=True)
class RateCertificate:
    """Theoretical linear rate and, optionally, its empirical counterpart."""

    rho: float
    function_branch: float
    network_branch: float
    function_condition: float
    network_condition: float
    empirical_rho: float = math.nan
    ratios_used: int = 0
    degenerate: bool = False
    presets: dict = field(default_factory=dict)

    @property
    def binding(self) -> str:
        return "function" if self.function_branch >= self.network_branch else "network"

    def iterations_to(self, eps: float) -> int:
        """Iterations for the Lyapunov value to shrink by a factor `eps`."""
        if self.rho <= 0:
            return 1
        return math.ceil(math.log(eps) / math.log(self.rho))

    def respects(self, tol: float = 1e-6) -> bool:
        return self.degenerate or self.empirical_rho <= self.rho + tol

    def to_dict(self) -> dict:
        return {
            "rho": self.rho,
            "function_branch": self.function_branch,
            "network_branch": self.network_branch,
            "binding_branch": self.binding,
            "function_condition": self.function_condition,
            "network_condition": self.network_condition,
            "empirical_rho": None if math.isnan(self.empirical_rho) else self.empirical_rho,
            "ratios_used": self.ratios_used,
            "degenerate": self.degenerate,
            "presets": self.presets,
        }


def _sorted_eigs(a: np.ndarray) -> np.ndarray:
    return np.linalg.eigvalsh(0.5 * (a + a.T))[::-1]


def theoretical_rho(prob: ProblemInstance, steps: StepSizes) -> RateCertificate:
    """Linear contraction factor for smooth, strongly convex problems.

    ``rho = max(1 - (2 - max_i alpha_i L_i) min_i mu_i alpha_i,
    1 - c / lambda_max(Λ^-½ (I-W)^† Λ^-½))``. `presets` carries the closed
    forms for ``Λ = I / max_i L_i`` with ``c = 1/(alpha (1 - lambda_n))`` and
    for ``Λ = L^-1``. The ``Λ = L^-1`` form takes
    ``c = lambda_{n-1}(L^½ (I-W)^† L^½)``, which can exceed the admissible
    ``c_max`` when the ``L_i`` differ; it is then a slight underestimate of
    `rho` at ``c = c_max``.
    """
    mu = prob.strong_convexity
    lips = prob.lipschitz
    if not np.all(mu > 0):
        raise NotApplicableError("linear-rate certificate requires strong convexity (some mu_i = 0)")
    if not prob.is_smooth:
        raise NotApplicableError("linear-rate certificate requires r = 0")
    alpha = steps.alpha
    rn = range_norm_for(steps)
    f_branch = 1.0 - (2.0 - float(np.max(alpha * lips))) * float(np.min(mu * alpha))

    isq = 1.0 / np.sqrt(alpha)
    scaled = isq[:, None] * rn.pinv * isq[None, :]
    lmax = float(_sorted_eigs(scaled)[0])
    n_branch = 1.0 - steps.c / lmax if lmax > 0 else 0.0

    summary = spectral_summary(steps.mix)
    sq = np.sqrt(lips)
    p_l = _sorted_eigs(sq[:, None] * rn.pinv * sq[None, :])
    presets = {
        "uniform_inverse_max_L": max(
            1.0 - float(np.min(mu)) / float(np.max(lips)),
            (summary.lambda2 - summary.lambda_n) / (1.0 - summary.lambda_n),
        ),
        "inverse_L": max(
            1.0 - float(np.min(mu / lips)),
            1.0 - float(p_l[-2]) / float(p_l[0]) if prob.n > 1 else 0.0,
        ),
    }
    return RateCertificate(
        rho=max(f_branch, n_branch),
        function_branch=f_branch,
        network_branch=n_branch,
        function_condition=float(np.max(lips) / np.min(mu)),
        network_condition=summary.network_condition,
        presets=presets,
    )


def contraction_ratios(values, warmup: int = WARMUP, floor: float = LYAPUNOV_FLOOR) -> np.ndarray:
    """``V[k+1] / V[k]`` after `warmup`, stopping once V drops below `floor`."""
    v = np.asarray(values, dtype=float)
    v = v[warmup:]
    usable = []
    for a, b in zip(v[:-1], v[1:]):
        if not (a >= floor and b >= floor):
            break
        usable.append(b / a)
    return np.array(usable)


def empirical_contraction(
    values, theoretical: RateCertificate | None = None, warmup: int = WARMUP, floor: float = LYAPUNOV_FLOOR
) -> RateCertificate:
    """Worst per-iteration contraction of the strongly convex Lyapunov value.

    `values` is a sequence of ``V^k`` or any object with a
    ``lyapunov_strong`` attribute (e.g. a run trace). A run that starts at
    the target (all values below `floor`) is reported as degenerate.
    """
    if hasattr(values, "lyapunov_strong"):
        values = values.lyapunov_strong
    v = np.asarray(values, dtype=float)
    base = theoretical or RateCertificate(math.nan, math.nan, math.nan, math.nan, math.nan)
    v = v[np.isfinite(v)] if v.size else v
    if v.size and np.all(v < floor):
        return replace(base, degenerate=True)
    ratios = contraction_ratios(v, warmup, floor)
    if ratios.size < MIN_RATIOS:
        raise InsufficientDataError(f"only {ratios.size} usable contraction ratios; need {MIN_RATIOS}")
    return replace(base, empirical_rho=float(np.max(ratios)), ratios_used=int(ratios.size))


@dataclass(frozen=True)
class SublinearReport:
    """Checks on the successive-difference sequence of a general convex run."""

    monotone: bool
    max_increase: float
    bound_holds: bool
    worst_bound_ratio: float
    k_delta_final: float
    k_delta_max: float
    trending_to_zero: bool

    @property
    def passed(self) -> bool:
        return self.monotone and self.bound_holds and self.trending_to_zero


def sublinear_certificate(
    deltas, v1: float, factor: float, rtol: float = 1e-10, floor: float = LYAPUNOV_FLOOR, burn_in: int = 10
) -> SublinearReport:
    """Audit ``Δ_k`` (``deltas[0]`` is ``Δ_1``).

    (a) monotone: ``Δ_{k+1} <= Δ_k (1 + rtol)``, ignoring pairs below `floor`;
    (b) ``Δ_k <= v1 / (k * factor)`` with relative slack `rtol`;
    (c) ``k Δ_k`` ends below 1% of its running maximum after `burn_in`.
    """
    d = np.asarray(deltas, dtype=float)
    if d.size < 2:
        raise InsufficientDataError("need at least two successive differences")
    k = np.arange(1, d.size + 1, dtype=float)
    prev, nxt = d[:-1], d[1:]
    live = prev >= floor
    incr = np.where(live, (nxt - prev) / np.where(live, prev, 1.0), -np.inf)
    max_increase = float(np.max(incr)) if live.any() else 0.0
    bound = v1 / (k * factor)
    ratio = d / bound
    kd = k * d
    tail = kd[burn_in:] if kd.size > burn_in else kd
    return SublinearReport(
        monotone=max_increase <= rtol,
        max_increase=max_increase,
        bound_holds=bool(np.all(ratio <= 1.0 + rtol)),
        worst_bound_ratio=float(np.max(ratio)),
        k_delta_final=float(kd[-1]),
        k_delta_max=float(np.max(tail)),
        trending_to_zero=bool(kd[-1] <= 1e-2 * np.max(tail)),
    )
