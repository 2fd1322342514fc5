"""One-iteration steppers for NIDS, EXTRA/PG-EXTRA and DIGing-ATC.

All steppers are pure: they take a state and return the next one. States
hold stacked ``(n, p)`` iterates. ``comm_rounds`` counts neighborhood mixing
rounds (one matrix product with W per round).
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field, replace
from typing import Callable, Iterator

import numpy as np

from .errors import ConfigurationError, DivergenceError
from .netgraph import MixingMatrix
from .objectives import ProblemInstance
from .stackmat import as_stacked, diagonal_weight, max_admissible_c

#: Margin on the strict step-size bound ``alpha_i < 2 / L_i``.
STEP_MARGIN = 1e-12
#: Relative slack allowed above ``c_max`` (the boundary value itself is allowed).
C_BOUNDARY_RTOL = 1e-10
#: ``c = c_max * (1 - SPECTRAL_SHRINK)`` for the "spectral" preset.
SPECTRAL_SHRINK = 1e-8

C_POLICIES = ("half", "spectral", "boundary")


@dataclass(frozen=True, eq=False)
class StepSizes:
    """Per-agent step sizes ``alpha``, coupling ``c``, and ``W~ = I - c Λ (I - W)``."""

    alpha: np.ndarray
    c: float
    mix: MixingMatrix
    c_max: float
    w_tilde: np.ndarray = field(init=False, repr=False)

    def __post_init__(self):
        lap = self.mix.laplacian_part()
        wt = np.eye(self.mix.n) - self.c * self.alpha[:, None] * lap
        wt.setflags(write=False)
        object.__setattr__(self, "w_tilde", wt)

    @property
    def uniform(self) -> bool:
        return bool(np.all(self.alpha == self.alpha[0]))

    @property
    def col(self) -> np.ndarray:
        """Step sizes as a column for row-scaling stacked iterates."""
        return self.alpha[:, None]


def resolve_c(policy, alpha: np.ndarray, mix: MixingMatrix) -> float:
    """Turn a coupling policy into a number.

    ``"half"`` gives ``1 / (2 max_i alpha_i)`` (W~ = (I+W)/2 for uniform
    steps), ``"boundary"`` gives ``c_max`` itself, ``"spectral"`` a hair below it.
    """
    c_max = max_admissible_c(mix, alpha)
    if isinstance(policy, str):
        if policy == "half" or (policy in ("spectral", "boundary") and math.isinf(c_max)):
            return 1.0 / (2.0 * float(np.max(alpha)))
        if policy == "spectral":
            return c_max * (1.0 - SPECTRAL_SHRINK)
        if policy == "boundary":
            return c_max
        try:
            return float(policy)
        except ValueError:
            raise ConfigurationError(f"unknown c policy {policy!r}; expected {C_POLICIES} or a number") from None
    return float(policy)


def make_step_sizes(
    prob: ProblemInstance, mix: MixingMatrix, alpha, c="half", unsafe: bool = False
) -> StepSizes:
    """Validate step sizes against the problem and the network.

    Parameters
    ----------
    alpha : float or array_like
        Uniform or per-agent step sizes.
    c : {"half", "spectral", "boundary"} or float
        Coupling constant or preset.
    unsafe : bool
        Skip the ``alpha_i < 2 / L_i`` check (divergence demonstrations).
    """
    if mix.n != prob.n:
        raise ConfigurationError(f"mixing matrix is {mix.n}x{mix.n} but the problem has {prob.n} agents")
    try:
        alpha = diagonal_weight(alpha, prob.n)
    except ValueError as exc:
        raise ConfigurationError(str(exc)) from None
    if not unsafe:
        lips = prob.lipschitz
        for i, (a, lip) in enumerate(zip(alpha, lips)):
            if lip > 0 and not a < 2.0 / lip - STEP_MARGIN:
                raise ConfigurationError(
                    f"agent {i + 1}: step size {a:g} violates alpha_i < 2/L_i = {2.0 / lip:g}"
                )
    c_val = resolve_c(c, alpha, mix)
    c_max = max_admissible_c(mix, alpha)
    if not c_val > 0:
        raise ConfigurationError(f"coupling constant must be positive, got {c_val}")
    if c_val > c_max * (1.0 + C_BOUNDARY_RTOL):
        raise ConfigurationError(f"coupling constant c={c_val:g} exceeds admissible c_max={c_max:g}")
    return StepSizes(alpha, c_val, mix, c_max)


def _check_finite(k: int, *arrays) -> None:
    for a in arrays:
        if not np.all(np.isfinite(a)):
            raise DivergenceError(f"non-finite iterate at iteration {k}", iteration=k)


# -- NIDS ----------------------------------------------------------------------


@dataclass(frozen=True, eq=False)
class NidsState:
    """NIDS iterate at index ``k``.

    ``d = Λ^{-1}(x_prev - z) - grad_prev`` is carried explicitly by both forms.
    """

    x: np.ndarray
    z: np.ndarray
    d: np.ndarray
    x_prev: np.ndarray
    grad: np.ndarray
    grad_prev: np.ndarray
    k: int = 1
    comm_rounds: int = 0


def nids_init(prob: ProblemInstance, steps: StepSizes, x0) -> NidsState:
    """First NIDS iterate: a local proximal-gradient step from `x0`; ``d = 0``."""
    x0 = as_stacked(x0, prob.n)
    if x0.shape[1] != prob.p:
        raise ValueError(f"x0 has {x0.shape[1]} columns, problem dimension is {prob.p}")
    g0 = prob.gradient(x0)
    z1 = x0 - steps.col * g0
    x1 = prob.prox(z1, steps.alpha)
    _check_finite(1, x1)
    return NidsState(x=x1, z=z1, d=np.zeros_like(x0), x_prev=x0, grad=prob.gradient(x1), grad_prev=g0)


def nids_step_primal(state: NidsState, prob: ProblemInstance, steps: StepSizes) -> NidsState:
    """z-update with ``W~`` applied to the corrected extrapolation, then the prox."""
    a = steps.col
    mixed = steps.w_tilde @ (2.0 * state.x - state.x_prev - a * state.grad + a * state.grad_prev)
    z = state.z - state.x + mixed
    x = prob.prox(z, steps.alpha)
    _check_finite(state.k + 1, x, z)
    d = (state.x - z) / a - state.grad
    return NidsState(
        x=x,
        z=z,
        d=d,
        x_prev=state.x,
        grad=prob.gradient(x),
        grad_prev=state.grad,
        k=state.k + 1,
        comm_rounds=state.comm_rounds + 1,
    )


def nids_step_dz(state: NidsState, prob: ProblemInstance, steps: StepSizes) -> NidsState:
    """Equivalent update in the order x (prox), d, z."""
    a = steps.col
    w = steps.mix.w
    v = 2.0 * state.x - state.z - a * state.grad - a * state.d
    d = state.d + steps.c * (v - w @ v)
    z = state.x - a * state.grad - a * d
    x = prob.prox(z, steps.alpha)
    _check_finite(state.k + 1, x, z, d)
    return NidsState(
        x=x,
        z=z,
        d=d,
        x_prev=state.x,
        grad=prob.gradient(x),
        grad_prev=state.grad,
        k=state.k + 1,
        comm_rounds=state.comm_rounds + 1,
    )


# -- baselines -----------------------------------------------------------------


@dataclass(frozen=True, eq=False)
class BaselineState:
    """Iterate of EXTRA/PG-EXTRA (uses `z`) or DIGing-ATC (uses `y`)."""

    variant: str
    x: np.ndarray
    x_prev: np.ndarray
    grad: np.ndarray
    grad_prev: np.ndarray
    z: np.ndarray | None = None
    y: np.ndarray | None = None
    k: int = 1
    comm_rounds: int = 0


def _uniform_alpha(steps: StepSizes) -> float:
    if not steps.uniform:
        raise ConfigurationError("EXTRA/PG-EXTRA and DIGing-ATC need a uniform step size")
    return float(steps.alpha[0])


def pg_extra_init(prob: ProblemInstance, steps: StepSizes, x0) -> BaselineState:
    alpha = _uniform_alpha(steps)
    x0 = as_stacked(x0, prob.n)
    g0 = prob.gradient(x0)
    z1 = x0 - alpha * g0
    x1 = prob.prox(z1, steps.alpha)
    _check_finite(1, x1)
    variant = "extra" if prob.is_smooth else "pg_extra"
    return BaselineState(variant, x=x1, x_prev=x0, grad=prob.gradient(x1), grad_prev=g0, z=z1)


def pg_extra_step(state: BaselineState, prob: ProblemInstance, steps: StepSizes) -> BaselineState:
    """PG-EXTRA with ``W~ = (I + W)/2``; the gradient difference is not mixed."""
    alpha = _uniform_alpha(steps)
    w = steps.mix.w
    u = 2.0 * state.x - state.x_prev
    z = state.z - state.x + 0.5 * (u + w @ u) - alpha * state.grad + alpha * state.grad_prev
    x = prob.prox(z, steps.alpha)
    _check_finite(state.k + 1, x, z)
    return replace(
        state,
        x=x,
        x_prev=state.x,
        z=z,
        grad=prob.gradient(x),
        grad_prev=state.grad,
        k=state.k + 1,
        comm_rounds=state.comm_rounds + 1,
    )


def diging_init(prob: ProblemInstance, steps: StepSizes, x0) -> BaselineState:
    """``y^0 = grad s(x^0)``, the initialization gradient tracking needs."""
    if not prob.is_smooth:
        raise ConfigurationError("DIGing-ATC supports smooth problems only (all r_i = 0)")
    _uniform_alpha(steps)
    x0 = as_stacked(x0, prob.n)
    g0 = prob.gradient(x0)
    return BaselineState("diging_atc", x=x0, x_prev=x0, grad=g0, grad_prev=g0, y=g0.copy(), k=0)


def diging_atc_step(state: BaselineState, prob: ProblemInstance, steps: StepSizes) -> BaselineState:
    """Adapt-then-combine gradient tracking; two mixing rounds per iteration."""
    if not prob.is_smooth:
        raise ConfigurationError("DIGing-ATC supports smooth problems only (all r_i = 0)")
    alpha = _uniform_alpha(steps)
    w = steps.mix.w
    x = w @ (state.x - alpha * state.y)
    g = prob.gradient(x)
    y = w @ (state.y + g - state.grad)
    _check_finite(state.k + 1, x, y)
    return replace(
        state, x=x, x_prev=state.x, y=y, grad=g, grad_prev=state.grad, k=state.k + 1, comm_rounds=state.comm_rounds + 2
    )


ALGORITHMS: dict[str, tuple[Callable, Callable]] = {
    "nids": (nids_init, nids_step_primal),
    "nids_dz": (nids_init, nids_step_dz),
    "extra": (pg_extra_init, pg_extra_step),
    "pg_extra": (pg_extra_init, pg_extra_step),
    "diging_atc": (diging_init, diging_atc_step),
}


def iterate(kind: str, prob: ProblemInstance, steps: StepSizes, x0, iterations: int) -> Iterator:
    """Yield the initial state and then `iterations` further states."""
    try:
        init, step = ALGORITHMS[kind]
    except KeyError:
        raise ConfigurationError(f"unknown algorithm {kind!r}; expected one of {sorted(ALGORITHMS)}") from None
    state = init(prob, steps, x0)
    yield state
    for _ in range(iterations):
        state = step(state, prob, steps)
        yield state
