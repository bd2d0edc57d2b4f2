"""Problem instances, transport plans, and the scalar quantities that drive
every solver in the package.

An instance is a pair of probability distributions ``p`` (sources, length
``l``) and ``q`` (targets, length ``k``) with a nonnegative cost matrix ``C``
of shape ``(k, l)``.  A transport plan is a nonnegative ``(k, l)`` matrix
``X`` whose columns describe how each source coordinate is split across
targets; ``X`` is exactly feasible when ``X p = q`` and every column sums
to one.  Plans can also carry two weaker tags used by the approximate
pipelines: ``uniform`` (both marginals within a ``(1 - eps)`` band of their
targets) and ``mass`` (sub-feasible, moving at least ``1 - eps`` of the
total mass).

All types are immutable after construction and all operations are pure
functions, so everything here is safe to share across threads.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import (
    DimensionMismatchError,
    EpsOutOfRangeError,
    NegativeEntryError,
    NonFiniteError,
    NotADistributionError,
    NotSubFeasibleError,
    NotUniformError,
)

# Feasibility-tag checks allow this much slack; algebraic identities are
# held to the tighter tolerance.
TOL_FEASIBILITY = 1e-9
TOL_ALGEBRA = 1e-12
# Input distributions whose sums deviate from 1 by at most this much are
# renormalized instead of rejected (real datasets carry rounding noise).
RENORMALIZE_LIMIT = 1e-6


def _frozen(a: np.ndarray) -> np.ndarray:
    a = np.array(a, dtype=np.float64, copy=True)
    a.setflags(write=False)
    return a


@dataclass(frozen=True)
class Instance:
    """A validated optimal transport instance.

    Attributes
    ----------
    p : ndarray, shape (l,)
        Source distribution (sums to 1 after validation).
    q : ndarray, shape (k,)
        Target distribution.
    C : ndarray, shape (k, l)
        Nonnegative transport costs; ``C[i, j]`` is the per-unit cost of
        moving mass from source ``j`` to target ``i``.
    p_sum_defect, q_sum_defect : float
        How far the raw inputs' sums were from 1 before renormalization.
    """

    p: np.ndarray
    q: np.ndarray
    C: np.ndarray
    p_sum_defect: float = 0.0
    q_sum_defect: float = 0.0

    @property
    def k(self) -> int:
        return self.q.shape[0]

    @property
    def l(self) -> int:
        return self.p.shape[0]


@dataclass(frozen=True)
class TransportPlan:
    """A plan matrix together with the feasibility contract it satisfies.

    ``kind`` is one of ``"exact"``, ``"uniform"``, ``"mass"``; ``eps`` is
    the slack parameter for the two approximate kinds (0 for exact).
    Instances are produced by the factory functions below, which verify
    the claimed contract before tagging.
    """

    X: np.ndarray
    kind: str
    eps: float = 0.0


@dataclass(frozen=True)
class Residual:
    """Mass left over by a sub-feasible plan.

    ``p_resid[j]`` is source mass not yet shipped, ``q_resid[i]`` target
    mass not yet filled, and ``alpha`` their common total.
    """

    p_resid: np.ndarray
    q_resid: np.ndarray
    alpha: float


def validate_instance(p, q, C) -> Instance:
    """Validate raw arrays and return an immutable :class:`Instance`.

    Sums within ``RENORMALIZE_LIMIT`` of 1 are renormalized; the applied
    defect is recorded on the instance.

    Raises
    ------
    NonFiniteError, NegativeEntryError, DimensionMismatchError,
    NotADistributionError
    """
    p = np.asarray(p, dtype=np.float64)
    q = np.asarray(q, dtype=np.float64)
    C = np.asarray(C, dtype=np.float64)
    if p.ndim != 1 or q.ndim != 1 or C.ndim != 2:
        raise DimensionMismatchError(
            f"expected vectors p, q and matrix C; got shapes {p.shape}, {q.shape}, {C.shape}"
        )
    if p.size < 1 or q.size < 1:
        raise DimensionMismatchError("p and q must each have at least one entry")
    if C.shape != (q.size, p.size):
        raise DimensionMismatchError(
            f"C has shape {C.shape}, expected ({q.size}, {p.size})"
        )
    for name, a in (("p", p), ("q", q), ("C", C)):
        if not np.isfinite(a).all():
            raise NonFiniteError(f"{name} contains a non-finite entry")
        if (a < 0).any():
            raise NegativeEntryError(f"{name} contains a negative entry")
    defects = []
    normalized = []
    for name, a in (("p", p), ("q", q)):
        s = float(a.sum())
        defect = s - 1.0
        if abs(defect) > RENORMALIZE_LIMIT:
            raise NotADistributionError(
                f"{name} sums to {s!r}, more than {RENORMALIZE_LIMIT} away from 1"
            )
        normalized.append(a / s if defect != 0.0 else a)
        defects.append(defect)
    p, q = normalized
    return Instance(
        p=_frozen(p),
        q=_frozen(q),
        C=_frozen(C),
        p_sum_defect=defects[0],
        q_sum_defect=defects[1],
    )


def _plan_matrix(X) -> np.ndarray:
    return X.X if isinstance(X, TransportPlan) else np.asarray(X, dtype=np.float64)


def _check_shape(X: np.ndarray, inst: Instance) -> None:
    if X.shape != (inst.k, inst.l):
        raise DimensionMismatchError(
            f"plan has shape {X.shape}, instance wants ({inst.k}, {inst.l})"
        )


def plan_cost(X, inst: Instance) -> float:
    """Total transport cost ``sum_ij C[i,j] * X[i,j] * p[j]`` of a plan."""
    M = _plan_matrix(X)
    _check_shape(M, inst)
    return float((inst.C * M * inst.p[None, :]).sum())


def marginals(X, inst: Instance) -> tuple[np.ndarray, np.ndarray]:
    """Row marginal ``X p`` and column marginal ``X^T 1`` of a plan matrix.

    Summation order is fixed (row-major accumulation over each axis), so
    repeated calls on the same inputs agree bit for bit.
    """
    M = _plan_matrix(X)
    _check_shape(M, inst)
    row = (M * inst.p[None, :]).sum(axis=1)
    col = M.sum(axis=0)
    return row, col


def avg_cost(inst: Instance) -> float:
    """Cost of sampling a cost entry from the product distribution q x p.

    Equals the cost of the oblivious plan and upper-bounds the optimal
    transport cost.
    """
    return float((inst.C * inst.q[:, None] * inst.p[None, :]).sum())


def max_cost(inst: Instance) -> float:
    """Largest cost entry of the instance."""
    return float(inst.C.max())


def feasibility_residuals(X, inst: Instance) -> tuple[float, float]:
    """Max-norm deviations of a plan's marginals from (q, 1)."""
    row, col = marginals(X, inst)
    return (
        float(np.abs(row - inst.q).max()),
        float(np.abs(col - 1.0).max()),
    )


def exact_plan(X, inst: Instance, tol: float = TOL_FEASIBILITY) -> TransportPlan:
    """Tag ``X`` as an exact plan, verifying marginals within ``tol``."""
    M = _plan_matrix(X)
    _check_shape(M, inst)
    if (M < 0).any():
        raise NegativeEntryError("plan matrix has a negative entry")
    r_row, r_col = feasibility_residuals(M, inst)
    if r_row > tol or r_col > tol:
        raise NotSubFeasibleError(
            f"not an exact plan: row residual {r_row:.3e}, column residual {r_col:.3e}"
        )
    return TransportPlan(X=_frozen(M), kind="exact", eps=0.0)


def uniform_plan(X, eps: float, inst: Instance, tol: float = TOL_FEASIBILITY) -> TransportPlan:
    """Tag ``X`` as a ``(1 - eps)``-uniform plan after checking the band.

    Requires ``(1 - eps) q <= X p <= q`` and ``(1 - eps) <= X^T 1 <= 1``
    entrywise, each side with ``tol`` slack.
    """
    if not (0.0 < eps < 1.0):
        raise EpsOutOfRangeError(f"uniform tag needs eps in (0, 1), got {eps!r}")
    M = _plan_matrix(X)
    _check_shape(M, inst)
    if (M < 0).any():
        raise NegativeEntryError("plan matrix has a negative entry")
    row, col = marginals(M, inst)
    lo_row = (1.0 - eps) * inst.q
    if (
        (row > inst.q + tol).any()
        or (row < lo_row - tol).any()
        or (col > 1.0 + tol).any()
        or (col < (1.0 - eps) - tol).any()
    ):
        raise NotUniformError(f"marginals leave the (1 - {eps!r}) uniform band")
    return TransportPlan(X=_frozen(M), kind="uniform", eps=float(eps))


def mass_plan(X, eps: float, inst: Instance, tol: float = TOL_FEASIBILITY) -> TransportPlan:
    """Tag ``X`` as a sub-feasible plan moving at least ``1 - eps`` mass."""
    if not (0.0 < eps < 1.0):
        raise EpsOutOfRangeError(f"mass tag needs eps in (0, 1), got {eps!r}")
    M = _plan_matrix(X)
    _check_shape(M, inst)
    if (M < 0).any():
        raise NegativeEntryError("plan matrix has a negative entry")
    row, col = marginals(M, inst)
    moved = float(row.sum())
    if (row > inst.q + tol).any() or (col > 1.0 + tol).any():
        raise NotSubFeasibleError("plan exceeds a marginal cap")
    if moved < 1.0 - eps - tol:
        raise NotSubFeasibleError(
            f"plan moves {moved:.6f} of the mass, below 1 - {eps!r}"
        )
    return TransportPlan(X=_frozen(M), kind="mass", eps=float(eps))


def residual_after(X, inst: Instance) -> Residual:
    """Leftover source/target mass after a sub-feasible plan.

    Entries driven slightly negative by floating point (down to -1e-12)
    are clamped to zero; in exact arithmetic both residual vectors are
    nonnegative with a common total.
    """
    M = _plan_matrix(X)
    _check_shape(M, inst)
    row, col = marginals(M, inst)
    p_resid = np.clip((1.0 - col) * inst.p, 0.0, None)
    q_resid = np.clip(inst.q - row, 0.0, None)
    return Residual(
        p_resid=_frozen(p_resid),
        q_resid=_frozen(q_resid),
        alpha=float(q_resid.sum()),
    )
