"""Mixed packing/covering route to additive-approximation transport.

The transport equations ``X p = q`` and ``X^T 1 = 1`` split into packing
rows (``<=``) and covering rows (``>=``) over the ``k * l`` nonnegative
plan entries, giving a positive program with ``2 (k + l)`` rows.  A
relative approximation of that program, scaled down and repaired through
the oblivious scheme, yields an exactly feasible plan whose cost exceeds
the optimum by at most ``delta`` once the relative slack is set to
``delta / (4 * avg_cost)``.

The minimization objective rides along as one extra packing row (a cost
budget) whose bound is driven by binary search, so a single feasibility
solver covers the whole pipeline.
"""

from __future__ import annotations

import time
from dataclasses import dataclass

import numpy as np

from .core import (
    Instance,
    TOL_FEASIBILITY,
    TransportPlan,
    avg_cost,
    feasibility_residuals,
    marginals,
    plan_cost,
    uniform_plan,
)
from .errors import (
    EpsOutOfRangeError,
    InfeasibleProgramError,
    IterationBudgetError,
    NotRelativeApproxError,
    ValidationError,
)
from .mwu import (
    BUDGET,
    INFEASIBLE,
    FeasibilitySystem,
    default_budget,
    feasibility_system,
    fit_start,
    solve_feasibility,
)
from .oblivious import oblivious_plan, repair_uniform
from .report import SolveReport
from .sparse import CsrRows, csr_append_row, csr_from_rows, csr_mask_cols, csr_scale_rows, csr_transpose

# Internal feasibility slack, as a fraction of the requested eps.  The
# solver over-delivers so the scale-down and repair stages downstream
# keep the end-to-end additive budget with provable margin.
INTERNAL_TARGET = 0.5
# Default absolute termination window of the objective search, matching
# the +1e-9 slack the solution contract allows on top of (1+eps)*OPT.
OBJECTIVE_ABS_SLACK = 5e-10


@dataclass(frozen=True)
class PositiveProgram:
    """Nonnegative constraint system ``A x <= b``, ``C x >= d``.

    ``active`` indexes the variables that survived build-time
    elimination (zero-budget packing rows force their incident variables
    to zero); solution vectors are always reported in the full
    ``n``-dimensional space with zeros at eliminated positions.
    """

    n: int
    pack: CsrRows
    pack_budget: np.ndarray
    cover: CsrRows
    cover_demand: np.ndarray
    objective_sense: str | None
    objective: np.ndarray | None
    active: np.ndarray

    @property
    def n_pack(self) -> int:
        return self.pack.n_rows

    @property
    def n_cover(self) -> int:
        return self.cover.n_rows


@dataclass(frozen=True)
class MpcSolution:
    """An eps-relative approximation: ``A x <= (1+eps) b`` and
    ``C x >= (1-eps) d`` entrywise, with ``eps`` the achieved slack."""

    x: np.ndarray
    eps: float
    iterations: int
    objective_value: float | None


def positive_program(pack_rows, cover_rows, n: int, objective=None, sense: str = "min") -> PositiveProgram:
    """Assemble a program from ``(indices, values, bound)`` row triples.

    Zero-demand covering rows are dropped; zero-budget packing rows
    eliminate their incident variables and disappear.
    """
    eliminated = np.zeros(n, dtype=bool)
    kept_pack = []
    budgets = []
    for idx, val, b in pack_rows:
        idx = np.asarray(idx, dtype=np.int64)
        val = np.asarray(val, dtype=np.float64)
        _check_row(idx, val, b, n, "packing")
        if b == 0.0:
            eliminated[idx[val > 0.0]] = True
        else:
            kept_pack.append((idx, val, float(b)))
            budgets.append(float(b))
    kept_cover = []
    demands = []
    for idx, val, d in cover_rows:
        idx = np.asarray(idx, dtype=np.int64)
        val = np.asarray(val, dtype=np.float64)
        _check_row(idx, val, d, n, "covering")
        if d > 0.0:
            kept_cover.append((idx, val, float(d)))
            demands.append(float(d))

    active = ~eliminated
    def compact(rows):
        remap = np.cumsum(active) - 1
        out = []
        for idx, val, _ in rows:
            sel = active[idx] & (val > 0.0)
            out.append((remap[idx[sel]], val[sel]))
        return out

    n_active = int(active.sum())
    pack = csr_from_rows(compact(kept_pack), n_active)
    cover = csr_from_rows(compact(kept_cover), n_active)
    obj = None
    if objective is not None:
        obj = np.asarray(objective, dtype=np.float64).copy()
        if obj.shape != (n,):
            raise ValidationError(f"objective has shape {obj.shape}, expected ({n},)")
        if not np.isfinite(obj).all() or (obj < 0).any():
            raise ValidationError("objective coefficients must be finite and nonnegative")
        if sense not in ("min", "max"):
            raise ValidationError(f"unknown objective sense {sense!r}")
        obj[eliminated] = 0.0
        obj.setflags(write=False)
    return PositiveProgram(
        n=n,
        pack=pack,
        pack_budget=np.asarray(budgets, dtype=np.float64),
        cover=cover,
        cover_demand=np.asarray(demands, dtype=np.float64),
        objective_sense=sense if objective is not None else None,
        objective=obj,
        active=np.flatnonzero(active),
    )


def _check_row(idx, val, bound, n, what):
    if idx.size != val.size:
        raise ValidationError(f"{what} row has {idx.size} indices but {val.size} values")
    if idx.size and (idx.min() < 0 or idx.max() >= n):
        raise ValidationError(f"{what} row indexes outside [0, {n})")
    if not np.isfinite(val).all() or (val < 0).any() or not np.isfinite(bound) or bound < 0:
        raise ValidationError(f"{what} row needs finite nonnegative data and bound")


def from_dense(A, b, C, d, objective=None, sense: str = "min") -> PositiveProgram:
    """Convenience constructor for small dense systems (tests, toys)."""
    A = np.atleast_2d(np.asarray(A, dtype=np.float64))
    C = np.atleast_2d(np.asarray(C, dtype=np.float64))
    b = np.atleast_1d(np.asarray(b, dtype=np.float64))
    d = np.atleast_1d(np.asarray(d, dtype=np.float64))
    n = A.shape[1] if A.size else C.shape[1]
    pack_rows = [(np.flatnonzero(A[r]), A[r][A[r] != 0], b[r]) for r in range(A.shape[0])]
    cover_rows = [(np.flatnonzero(C[r]), C[r][C[r] != 0], d[r]) for r in range(C.shape[0])]
    return positive_program(pack_rows, cover_rows, n, objective=objective, sense=sense)


def transport_mixed_program(inst: Instance) -> PositiveProgram:
    """Encode an instance as packing rows ``Xp <= q``, ``X^T 1 <= 1`` and
    covering rows ``Xp >= q``, ``X^T 1 >= 1`` with cost objective.

    Variables are the plan entries in row-major order.  Rows with zero
    target mass drop their covering row and eliminate their incident
    variables through the zero-budget packing row.
    """
    k, l = inst.k, inst.l
    n = k * l
    pack_rows = []
    cover_rows = []
    p_nz = np.flatnonzero(inst.p)
    for i in range(k):
        idx = i * l + p_nz
        val = inst.p[p_nz]
        pack_rows.append((idx, val, inst.q[i]))
        if inst.q[i] > 0.0:
            cover_rows.append((idx, val, inst.q[i]))
    all_i = np.arange(k, dtype=np.int64) * l
    ones = np.ones(k)
    for j in range(l):
        pack_rows.append((all_i + j, ones, 1.0))
        cover_rows.append((all_i + j, ones, 1.0))
    objective = (inst.C * inst.p[None, :]).reshape(-1)
    return positive_program(pack_rows, cover_rows, n, objective=objective, sense="min")


@dataclass(frozen=True)
class _Normalized:
    """Budget-normalized system for the engine, objective in active space."""

    system: FeasibilitySystem
    objective: np.ndarray | None


def _normalize(prog: PositiveProgram) -> _Normalized:
    pack = csr_scale_rows(prog.pack, _safe_inv(prog.pack_budget))
    cover = csr_scale_rows(prog.cover, _safe_inv(prog.cover_demand))
    obj = prog.objective[prog.active] if prog.objective is not None else None
    return _Normalized(system=feasibility_system(pack, cover), objective=obj)


def _safe_inv(v: np.ndarray) -> np.ndarray:
    out = np.ones_like(v)
    nz = v != 0.0
    out[nz] = 1.0 / v[nz]
    return out


def _with_budget_row(base: _Normalized, lam: float) -> FeasibilitySystem | None:
    """Append the normalized cost row; ``lam == 0`` instead eliminates
    every variable with positive cost (returns None when that leaves an
    unsatisfiable covering row)."""
    obj = base.objective
    sys = base.system
    if lam > 0.0:
        nz = np.flatnonzero(obj)
        pack = csr_append_row(sys.pack, nz, obj[nz] / lam)
        return feasibility_system(pack, sys.cover)
    keep = obj == 0.0
    if not keep.any():
        return None
    pack = csr_mask_cols(sys.pack, keep)
    cover = csr_mask_cols(sys.cover, keep)
    if cover.n_rows and np.diff(cover.indptr).min() == 0:
        return None
    return feasibility_system(pack, cover)


def solve_mpc(
    prog: PositiveProgram,
    eps: float,
    mode: str = "sequential",
    objective_slack: float | None = None,
    budget_factor: int = 64,
) -> MpcSolution:
    """Compute an eps-relative approximation of a positive program.

    Feasibility systems are solved directly; an objective is handled by
    budgeting it as one extra row and binary-searching the budget.  The
    search stops once its bracket is within ``max(eps/4 * lower bound,
    objective_slack)``; pipelines pass a coarser absolute slack because
    their overall guarantee is additive anyway.

    Deterministic for fixed inputs and mode.  Raises
    :class:`InfeasibleProgramError` with the certifying weights when no
    point satisfies the relaxed system, and :class:`IterationBudgetError`
    when the unconstrained system itself exhausts its budget.
    """
    if not (0.0 < eps <= 0.5):
        raise EpsOutOfRangeError(f"eps must lie in (0, 1/2], got {eps!r}")
    slack = INTERNAL_TARGET * eps
    base = _normalize(prog)
    budget = default_budget(base.system.n_rows + 1, slack, budget_factor)

    out = solve_feasibility(base.system, slack, mode, budget=budget)
    if out.status == INFEASIBLE:
        raise InfeasibleProgramError(
            "program is infeasible: every variable's packing gradient "
            "dominates its covering gradient",
            pack_weights=out.pack_weights,
            cover_weights=out.cover_weights,
        )
    if out.status == BUDGET:
        raise IterationBudgetError(
            f"feasibility stage exhausted {out.rounds} rounds at slack {slack:.3g}"
        )
    rounds = out.rounds
    x_best = out.x
    if base.objective is None or prog.objective_sense is None:
        return _finish(prog, base, x_best, rounds, None)

    if prog.objective_sense == "max":
        x_best, rounds = _search_max(base, x_best, slack, mode, eps, objective_slack, budget, rounds)
        return _finish(prog, base, x_best, rounds, prog.objective_sense)

    # Min sense: bisect the smallest cost budget that stays feasible.
    hi = float(base.objective @ x_best)
    lo = 0.0
    abs_slack = objective_slack if objective_slack is not None else OBJECTIVE_ABS_SLACK * max(1.0, hi)

    def probe(lam):
        # Probes start cold: the engine only grows variables, so a warm
        # start shaped by a looser budget poisons tighter ones.
        nonlocal rounds
        sys_lam = _with_budget_row(base, lam)
        if sys_lam is None:
            return None
        r = solve_feasibility(sys_lam, slack, mode, budget=budget)
        rounds += r.rounds
        if r.status != "solved":
            return None
        if sys_lam.n != base.system.n:  # lam == 0 masked the costly variables
            full = np.zeros(base.system.n)
            full[base.objective == 0.0] = r.x
            return full
        return r.x

    zero = probe(0.0)
    if zero is not None:
        return _finish(prog, base, zero, rounds, prog.objective_sense)
    while hi - lo > max(0.25 * eps * lo, abs_slack):
        mid = 0.5 * (lo + hi)
        got = probe(mid)
        if got is None:
            lo = mid
        else:
            hi, x_best = mid, got
    return _finish(prog, base, x_best, rounds, prog.objective_sense)


def _search_max(base, x_feas, slack, mode, eps, objective_slack, budget, rounds):
    """Budget the objective as a covering row and search upward."""
    obj = base.objective
    col_max = np.zeros(base.system.n)
    np.maximum.at(col_max, base.system.pack.indices, base.system.pack.data)
    free = (col_max == 0.0) & (obj > 0.0)
    if free.any():
        raise ValidationError("objective is unbounded: positive coefficient on an unconstrained variable")
    x_cap = np.zeros(base.system.n)
    nz = col_max > 0.0
    x_cap[nz] = 1.0 / col_max[nz]
    hi = float(obj @ x_cap)
    lo = float(obj @ x_feas)
    best = x_feas
    abs_slack = objective_slack if objective_slack is not None else OBJECTIVE_ABS_SLACK * max(1.0, hi)
    while hi - lo > max(0.25 * eps * max(lo, 0.0), abs_slack):
        mid = 0.5 * (lo + hi)
        if mid <= 0.0:
            break
        nzo = np.flatnonzero(obj)
        cover = csr_append_row(base.system.cover, nzo, obj[nzo] / mid)
        r = solve_feasibility(feasibility_system(base.system.pack, cover), slack, mode, budget=budget)
        rounds += r.rounds
        if r.status == "solved":
            lo, best = mid, r.x
        else:
            hi = mid
    return best, rounds


def _finish(prog, base, x_active, rounds, sense) -> MpcSolution:
    x = np.zeros(prog.n)
    x[prog.active] = x_active
    u = np.zeros(prog.n_pack)
    v = np.zeros(prog.n_cover)
    from .sparse import matvec  # local import keeps module init light

    matvec(base.system.pack, x_active, u, "data_parallel")
    matvec(base.system.cover, x_active, v, "data_parallel")
    excess = float((u - 1.0).max()) if u.size else 0.0
    deficit = float((1.0 - v).max()) if v.size else 0.0
    achieved = max(excess, deficit, 0.0) + 1e-12
    value = float(prog.objective @ x) if prog.objective is not None else None
    x.setflags(write=False)
    return MpcSolution(x=x, eps=achieved, iterations=rounds, objective_value=value)


def uniform_plan_from_solution(sol: MpcSolution, eps: float, inst: Instance) -> TransportPlan:
    """Scale an eps-relative transport solution by ``1 - eps``, which
    pulls both marginals under their caps and tags the result as
    ``(1 - eps)^2``-uniform."""
    if not (0.0 < eps < 1.0):
        raise EpsOutOfRangeError(f"eps must lie in (0, 1), got {eps!r}")
    X = np.asarray(sol.x, dtype=np.float64).reshape(inst.k, inst.l)
    row, col = marginals(X, inst)
    tol = TOL_FEASIBILITY
    if (
        (row > (1.0 + eps) * inst.q + tol).any()
        or (row < (1.0 - eps) * inst.q - tol).any()
        or (col > (1.0 + eps) + tol).any()
        or (col < (1.0 - eps) - tol).any()
    ):
        raise NotRelativeApproxError(
            "solution marginals leave the (1 +- eps) band for this instance"
        )
    shrink = 1.0 - (1.0 - eps) ** 2
    return uniform_plan((1.0 - eps) * X, shrink, inst)


def additive_approx_mpc(
    inst: Instance, delta: float, mode: str = "sequential"
) -> tuple[TransportPlan, SolveReport]:
    """End-to-end pipeline: relative solve at ``eps = delta / (4 avg)``,
    uniform scale-down, oblivious repair.  The returned plan is exactly
    feasible with cost at most ``delta`` above optimal."""
    if delta <= 0.0:
        raise ValidationError(f"delta must be positive, got {delta!r}")
    t0 = time.perf_counter()
    avg = avg_cost(inst)
    if avg == 0.0:
        plan = oblivious_plan(inst.q, inst.l)
        return plan, _report(inst, "mpc", delta, None, 0, plan, t0)
    eps = min(delta / (4.0 * avg), 0.5)
    prog = transport_mixed_program(inst)
    sol = solve_mpc(prog, eps, mode, objective_slack=delta / 8.0)
    achieved = min(max(sol.eps, 1e-12), eps)
    shrunk = uniform_plan_from_solution(sol, achieved, inst)
    plan = repair_uniform(shrunk, shrunk.eps, inst)
    return plan, _report(inst, "mpc", delta, eps, sol.iterations, plan, t0)


def _report(inst, pipeline, delta, eps, iterations, plan, t0) -> SolveReport:
    r_row, r_col = feasibility_residuals(plan, inst)
    return SolveReport(
        pipeline=pipeline,
        k=inst.k,
        l=inst.l,
        delta=delta,
        eps=eps,
        iterations=iterations,
        probes=0,
        cost=plan_cost(plan, inst),
        oracle_cost=None,
        gap=None,
        resid_row=r_row,
        resid_col=r_col,
        wall_ms=(time.perf_counter() - t0) * 1e3,
        seed=None,
    )
