"""Oblivious transport and the two repairs built on top of it.

The oblivious plan sets every column to the target distribution ``q``.
It is exactly feasible for any source distribution and costs exactly
``avg_cost``, which makes it the universal fallback for shipping
whatever mass an approximate plan left behind:

* :func:`repair_uniform` upgrades a ``(1 - eps)``-uniform plan to an
  exact one, adding at most ``4 * eps * avg_cost``.
* :func:`repair_mass` upgrades any sub-feasible plan, adding at most
  ``alpha * max_cost`` where ``alpha`` is the mass it failed to move.
"""

from __future__ import annotations

import numpy as np

from .core import (
    Instance,
    TOL_FEASIBILITY,
    TransportPlan,
    _frozen,
    _plan_matrix,
    exact_plan,
    marginals,
    residual_after,
)
from .errors import EpsOutOfRangeError, NotSubFeasibleError, NotUniformError

# Residual totals at or below this are treated as "already exact".
ALPHA_FLOOR = 1e-12


def oblivious_plan(q, l: int) -> TransportPlan:
    """The plan with every column equal to ``q``; exact for any ``p``."""
    q = np.asarray(q, dtype=np.float64)
    X = np.repeat(q[:, None], l, axis=1)
    return TransportPlan(X=_frozen(X), kind="exact", eps=0.0)


def _residual_fill(Y: np.ndarray, inst: Instance) -> np.ndarray:
    """Oblivious transport of the mass a partial plan ``Y`` leaves over.

    Builds ``Z`` with every column ``q_resid / alpha`` and returns
    ``Z @ (I - diag(col sums of Y))``, the correction that makes
    ``Y + correction`` exactly feasible.  Assumes ``alpha > ALPHA_FLOOR``.
    """
    resid = residual_after(Y, inst)
    _, col = marginals(Y, inst)
    fill_col = resid.q_resid / resid.alpha
    return fill_col[:, None] * np.clip(1.0 - col, 0.0, None)[None, :]


def repair_uniform(plan, eps: float, inst: Instance) -> TransportPlan:
    """Convert a ``(1 - eps)``-uniform plan into an exact plan.

    Scales the input down by ``1 - eps / (1 - eps)`` and ships the
    resulting residual obliviously.  The added cost is at most
    ``4 * eps * avg_cost(inst)``.

    Parameters
    ----------
    plan : TransportPlan or ndarray
        A plan satisfying the ``(1 - eps)``-uniform band (checked).
    eps : float
        Uniformity deficit, in ``(0, 1/2]``.
    inst : Instance

    Raises
    ------
    EpsOutOfRangeError, NotUniformError
    """
    if not (0.0 < eps <= 0.5):
        raise EpsOutOfRangeError(f"repair_uniform needs eps in (0, 1/2], got {eps!r}")
    X = _plan_matrix(plan)
    row, col = marginals(X, inst)
    tol = TOL_FEASIBILITY
    lo = 1.0 - eps
    if (
        (row > inst.q + tol).any()
        or (row < lo * inst.q - tol).any()
        or (col > 1.0 + tol).any()
        or (col < lo - tol).any()
    ):
        raise NotUniformError("input is not (1 - eps)-uniform within tolerance")

    Y = (1.0 - eps / (1.0 - eps)) * X
    alpha = float(residual_after(Y, inst).alpha)
    if alpha <= ALPHA_FLOOR:
        # Input is already exact to working precision; no mass to move.
        return exact_plan(X, inst)
    return exact_plan(Y + _residual_fill(Y, inst), inst)


def repair_mass(plan, inst: Instance) -> TransportPlan:
    """Extend a sub-feasible plan to an exact plan.

    The input must satisfy ``X p <= q`` and column sums ``<= 1`` (with
    tolerance).  The untransported mass ``alpha`` is shipped obliviously,
    adding at most ``alpha * max_cost(inst)``;  when the input is tagged
    ``mass(eps)`` this is at most ``eps * max_cost(inst)``.  Runs in
    O(k*l) arithmetic.

    Raises
    ------
    NotSubFeasibleError
    """
    X = _plan_matrix(plan)
    row, col = marginals(X, inst)
    tol = TOL_FEASIBILITY
    if (row > inst.q + tol).any() or (col > 1.0 + tol).any():
        raise NotSubFeasibleError("plan exceeds a marginal cap; cannot top up")
    if (X < 0).any():
        raise NotSubFeasibleError("plan matrix has a negative entry")

    alpha = float(residual_after(X, inst).alpha)
    if alpha <= ALPHA_FLOOR:
        return exact_plan(X, inst)
    return exact_plan(X + _residual_fill(X, inst), inst)
