"""Algebra on stacked iterates.

A stacked iterate is an ``(n, p)`` array whose row ``i`` is agent ``i``'s
copy of the decision vector. Weighted inner products use an ``(n, n)``
symmetric weight acting on the agent index: ``<x, y>_Q = tr(x^T Q y)``.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .errors import DomainError
from .netgraph import MixingMatrix

#: Relative size of an eigenvalue of I - W below which it counts as zero.
PINV_CUTOFF = 1e-10
#: Relative off-range tolerance for M-norm inputs.
RANGE_RTOL = 1e-8


def as_stacked(x, n: int | None = None) -> np.ndarray:
    """Coerce to a finite 2-D float array (1-D input becomes one column)."""
    a = np.asarray(x, dtype=float)
    if a.ndim == 1:
        a = a[:, None]
    if a.ndim != 2:
        raise ValueError(f"stacked iterate must be 2-D, got shape {a.shape}")
    if n is not None and a.shape[0] != n:
        raise ValueError(f"stacked iterate has {a.shape[0]} rows, expected {n}")
    if not np.all(np.isfinite(a)):
        raise ValueError("stacked iterate has non-finite entries")
    return a


def consensual(v, n: int) -> np.ndarray:
    """Stack `n` copies of the vector `v`."""
    return np.tile(np.asarray(v, dtype=float).ravel(), (n, 1))


def diagonal_weight(entries, n: int | None = None) -> np.ndarray:
    """Validate the diagonal of a positive diagonal weight (step sizes, ``L_i``, ...)."""
    d = np.atleast_1d(np.asarray(entries, dtype=float)).copy()
    if n is not None and d.size == 1:
        d = np.full(n, d[0])
    if d.ndim != 1 or (n is not None and d.size != n):
        raise ValueError(f"diagonal weight must have {n} entries, got shape {d.shape}")
    if not np.all(np.isfinite(d)) or np.any(d <= 0):
        raise ValueError(f"diagonal weight entries must be finite and positive, got {d}")
    return d


def weighted_inner(x, y, q=None) -> float:
    """``tr(x^T Q y)``; `q` may be None (identity), a diagonal vector, or a matrix."""
    x = np.asarray(x, dtype=float)
    y = np.asarray(y, dtype=float)
    if x.shape != y.shape:
        raise ValueError(f"shape mismatch: {x.shape} vs {y.shape}")
    if x.ndim == 1:
        x, y = x[:, None], y[:, None]
    if q is None:
        return float(np.vdot(x, y))
    q = np.asarray(q, dtype=float)
    if q.ndim == 1:
        if q.shape[0] != x.shape[0]:
            raise ValueError(f"weight has {q.shape[0]} entries for {x.shape[0]} rows")
        return float(np.vdot(x, q[:, None] * y))
    if q.shape != (x.shape[0], x.shape[0]):
        raise ValueError(f"weight has shape {q.shape}, expected {(x.shape[0],) * 2}")
    return float(np.vdot(x, q @ y))


def weighted_sq_norm(x, q=None) -> float:
    return weighted_inner(x, x, q)


def range_project(v) -> np.ndarray:
    """Remove the column means: orthogonal projection onto ``1^perp``."""
    v = np.asarray(v, dtype=float)
    return v - v.mean(axis=0, keepdims=True)


def _sym_pinv(a: np.ndarray, cutoff: float = PINV_CUTOFF):
    """Pseudo-inverse of a symmetric PSD matrix and its nonzero eigenvalues."""
    evals, evecs = np.linalg.eigh(0.5 * (a + a.T))
    top = max(float(np.max(np.abs(evals))), 0.0)
    keep = evals > cutoff * top if top > 0 else np.zeros_like(evals, dtype=bool)
    inv = np.where(keep, 1.0 / np.where(keep, evals, 1.0), 0.0)
    return (evecs * inv) @ evecs.T, np.sort(evals[keep])[::-1]


def max_admissible_c(mix: MixingMatrix, alpha) -> float:
    """Supremum of coupling constants keeping ``I - c Λ^½(I-W)Λ^½`` positive definite.

    Equals ``1 / lambda_max(Λ^½ (I - W) Λ^½)``; ``inf`` for a single agent.
    """
    alpha = diagonal_weight(alpha, mix.n)
    sq = np.sqrt(alpha)
    a = sq[:, None] * mix.laplacian_part() * sq[None, :]
    lmax = float(np.linalg.eigvalsh(0.5 * (a + a.T))[-1])
    if lmax <= PINV_CUTOFF:
        return math.inf
    return 1.0 / lmax


@dataclass(frozen=True, eq=False)
class RangeNorm:
    """Quadratic form ``M = c^{-1} (I - W)^† - Λ`` restricted to ``range(I - W)``.

    Parameters
    ----------
    mix : MixingMatrix
        Base mixing matrix (Assumption-compliant).
    c : float
        Coupling constant.
    alpha : array_like
        Diagonal of Λ (per-agent step sizes).
    """

    mix: MixingMatrix
    c: float
    alpha: np.ndarray
    pinv: np.ndarray = field(init=False, repr=False)
    m: np.ndarray = field(init=False, repr=False)
    pinv_eigs: np.ndarray = field(init=False, repr=False)

    def __post_init__(self):
        alpha = diagonal_weight(self.alpha, self.mix.n)
        if not (self.c > 0 and math.isfinite(self.c)):
            raise ValueError(f"coupling constant must be positive and finite, got {self.c}")
        object.__setattr__(self, "alpha", alpha)
        pinv, nz = _sym_pinv(self.mix.laplacian_part())
        object.__setattr__(self, "pinv", pinv)
        object.__setattr__(self, "pinv_eigs", nz)
        object.__setattr__(self, "m", pinv / self.c - np.diag(alpha))

    @property
    def n(self) -> int:
        return self.mix.n

    def check_range(self, v, scale: float = 0.0, rtol: float = RANGE_RTOL) -> np.ndarray:
        """Return the projection of `v` onto ``range(I - W)``.

        Raises :class:`DomainError` if the discarded part exceeds
        ``rtol * max(||v||, scale)``. `scale` lets callers measure round-off
        against the size of the quantities `v` was computed from.
        """
        v = np.asarray(v, dtype=float)
        proj = range_project(v)
        off = float(np.linalg.norm(v - proj))
        ref = max(float(np.linalg.norm(v)), scale)
        if off > rtol * ref:
            raise DomainError(
                f"M-norm undefined off range(I-W): consensual component {off:.3e} "
                f"exceeds {rtol:g} x {ref:.3e}"
            )
        return proj

    def sq_norm(self, v, extra=None, scale: float = 0.0) -> float:
        """``||v||_M^2`` (plus ``||v||_extra^2`` for a diagonal `extra`)."""
        p = self.check_range(v, scale)
        val = weighted_inner(p, p, self.m)
        if extra is not None:
            val += weighted_inner(p, p, extra)
        return val

    def inner(self, u, v, scale: float = 0.0) -> float:
        pu = self.check_range(u, scale)
        pv = self.check_range(v, scale)
        return weighted_inner(pu, pv, self.m)


def m_norm_sq(v, rn: RangeNorm, scale: float = 0.0) -> float:
    """``<v, M v>`` for `v` in ``range(I - W)``; see :meth:`RangeNorm.sq_norm`."""
    return rn.sq_norm(v, scale=scale)
