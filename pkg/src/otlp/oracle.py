"""Exact optimal transport at desk scale, used as ground truth in tests.

Solves the transportation problem as a minimum cost flow on the complete
bipartite graph (source nodes carry ``p``, target nodes demand ``q``,
arc costs ``C``) by successive shortest paths with node potentials.
Distances are computed by a dense Dijkstra sweep per augmentation, with
a 1e-12 epsilon on comparisons and first-index tie-breaking so the
result is deterministic.  Bounded to ``k * l <= 10**6``.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .core import (
    Instance,
    TransportPlan,
    _frozen,
    exact_plan,
    feasibility_residuals,
    plan_cost,
)
from .errors import DegenerateFlowError, InstanceTooLargeError

DESK_SCALE_LIMIT = 10**6
# Mass below this is treated as fully routed (supplies are O(1) totals).
DUST = 1e-15
EPS_CMP = 1e-12
# Complementary slackness tolerance of the returned flow.
DUAL_TOL = 1e-10


@dataclass(frozen=True)
class ExactResult:
    """Optimal cost, an optimal plan, and the augmentation count."""

    cost: float
    plan: np.ndarray
    iterations: int


@dataclass(frozen=True)
class PlanCheck:
    """Verdict bundle for a candidate plan against the exact optimum."""

    resid_row: float
    resid_col: float
    cost: float
    oracle_cost: float
    gap: float
    delta: float
    passed: bool


def exact_ot(inst: Instance) -> ExactResult:
    """Exact transport cost and plan via successive shortest paths.

    Raises
    ------
    InstanceTooLargeError
        If ``k * l`` exceeds the desk-scale guard.
    DegenerateFlowError
        If the flow cannot be completed or dual feasibility cannot be
        certified to ``1e-10`` (pathological floating-point input).
    """
    k, l = inst.k, inst.l
    if k * l > DESK_SCALE_LIMIT:
        raise InstanceTooLargeError(f"k*l = {k * l} exceeds {DESK_SCALE_LIMIT}")
    C = inst.C
    supply = inst.p.copy()          # source side, length l
    demand = inst.q.copy()          # target side, length k
    flow = np.zeros((k, l))
    pot_src = np.zeros(l)
    pot_tgt = np.zeros(k)

    max_aug = 4 * k * l + 100
    iterations = 0
    while True:
        roots = supply > DUST
        if not roots.any():
            break
        if iterations >= max_aug:
            raise DegenerateFlowError(
                f"augmentation cap {max_aug} hit with {supply.sum():.3e} mass left"
            )
        dist_src = np.where(roots, 0.0, np.inf)
        dist_tgt = np.full(k, np.inf)
        par_tgt = np.full(k, -1, dtype=np.int64)   # source that reached target i
        par_src = np.full(l, -1, dtype=np.int64)   # target that reached source j
        done_src = np.zeros(l, dtype=bool)
        done_tgt = np.zeros(k, dtype=bool)

        target = -1
        while True:
            ds = np.where(done_src, np.inf, dist_src)
            dt = np.where(done_tgt, np.inf, dist_tgt)
            js = int(np.argmin(ds))
            it = int(np.argmin(dt))
            if ds[js] <= dt[it]:
                if not np.isfinite(ds[js]):
                    break
                done_src[js] = True
                # forward arcs j -> i at reduced cost
                cand = dist_src[js] + (C[:, js] - pot_tgt + pot_src[js])
                better = cand < dist_tgt - EPS_CMP
                if better.any():
                    dist_tgt[better] = cand[better]
                    par_tgt[better] = js
            else:
                if not np.isfinite(dt[it]):
                    break
                done_tgt[it] = True
                if demand[it] > DUST:
                    target = it
                    break
                # backward arcs i -> j where flow remains
                back = flow[it] > DUST
                if back.any():
                    cand = dist_tgt[it] + (pot_tgt[it] - pot_src - C[it])
                    better = back & (cand < dist_src - EPS_CMP)
                    if better.any():
                        dist_src[better] = cand[better]
                        par_src[better] = it
            if done_src.all() and done_tgt.all():
                break

        if target < 0:
            raise DegenerateFlowError("no augmenting path despite remaining supply")
        d_star = dist_tgt[target]
        pot_src += np.minimum(dist_src, d_star)
        pot_tgt += np.minimum(dist_tgt, d_star)

        # Trace the alternating path back to a root source.
        path = []  # forward arcs (i, j); flow increases on these
        backs = []  # backward arcs (i, j); flow decreases
        i = target
        while True:
            j = par_tgt[i]
            path.append((i, j))
            if par_src[j] < 0:
                root = j
                break
            i2 = par_src[j]
            backs.append((i2, j))
            i = i2
        bottleneck = min(supply[root], demand[target])
        for (i, j) in backs:
            bottleneck = min(bottleneck, flow[i, j])
        for (i, j) in path:
            flow[i, j] += bottleneck
        for (i, j) in backs:
            flow[i, j] -= bottleneck
        supply[root] -= bottleneck
        demand[target] -= bottleneck
        supply[supply < DUST] = 0.0
        demand[demand < DUST] = 0.0
        flow[flow < DUST] = 0.0
        iterations += 1

    _certify(C, flow, pot_src, pot_tgt)
    plan = _plan_from_flow(flow, inst)
    result_plan = exact_plan(plan, inst, tol=1e-10)
    return ExactResult(
        cost=plan_cost(result_plan, inst), plan=result_plan.X, iterations=iterations
    )


def _certify(C, flow, pot_src, pot_tgt) -> None:
    """Complementary slackness: reduced costs >= -tol everywhere and
    ~0 on arcs carrying flow; this pins the duality gap to ~1e-10."""
    reduced = C - pot_tgt[:, None] + pot_src[None, :]
    if reduced.min() < -DUAL_TOL:
        raise DegenerateFlowError(
            f"dual infeasibility {reduced.min():.3e} below -{DUAL_TOL}"
        )
    carrying = flow > DUST
    if carrying.any() and np.abs(reduced[carrying]).max() > DUAL_TOL:
        raise DegenerateFlowError("complementary slackness violated beyond tolerance")


def _plan_from_flow(flow: np.ndarray, inst: Instance) -> np.ndarray:
    """Normalize flow columns into plan columns; empty columns (zero or
    dust-level source mass) fall back to the oblivious column q."""
    plan = np.empty_like(flow)
    col_mass = flow.sum(axis=0)
    for j in range(inst.l):
        if col_mass[j] > 0.0:
            plan[:, j] = flow[:, j] / col_mass[j]
        else:
            plan[:, j] = inst.q
    return plan


def check_plan(plan, inst: Instance, delta: float) -> PlanCheck:
    """Marginal residuals, cost, and gap-to-oracle of a candidate plan.

    Passes when both residuals are within 1e-9 and the gap is at most
    ``delta + 1e-9``.
    """
    resid_row, resid_col = feasibility_residuals(plan, inst)
    cost = plan_cost(plan, inst)
    oracle = exact_ot(inst)
    gap = cost - oracle.cost
    passed = resid_row <= 1e-9 and resid_col <= 1e-9 and gap <= delta + 1e-9
    return PlanCheck(
        resid_row=resid_row,
        resid_col=resid_col,
        cost=cost,
        oracle_cost=oracle.cost,
        gap=gap,
        delta=delta,
        passed=passed,
    )
