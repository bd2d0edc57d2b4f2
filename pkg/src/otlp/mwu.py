"""Width-independent multiplicative-weights solver for positive feasibility
systems ``P x <= 1``, ``K x >= 1`` over ``x >= 0`` (rows pre-normalized).

Every round reweights rows exponentially in their load, selects the
variables whose packing pull does not exceed their covering pull, and
grows the whole selected set multiplicatively.  The step size never lets
a packing row exceed its hard cap ``1 + margin * slack``, so any returned
point is feasible up to the requested relative slack; covering rows
freeze once they reach their demand, so the deficit of a solved system
is zero.  Far from the boundary the step is a fixed aggressive ratio;
near it the step drops to ``slack / eta`` with ``eta = ln(m) / slack``,
which is what makes the iteration count scale like ``log(m) / slack^2``
and keeps the scheme width-independent.

Infeasibility is certified statically: if every variable's packing
gradient strictly dominates its covering gradient by ``1 + slack / 2``,
no nonnegative point can satisfy both row families, regardless of the
trajectory that led to the current weights.

The ``mode`` argument selects the execution backend (see
:mod:`otlp.sparse`); both backends share one compiled code path for all
round arithmetic and therefore produce bitwise identical iterates.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from numba import njit

from .sparse import CsrRows, csr_transpose, gather_max, matvec

# Phase policy: moderately aggressive fill steps until the covering
# minimum gets close to the boundary, then fine steps sized for the
# weight accuracy argument.  Fill steps coarser than the slack scale
# outrun the reweighting and waste tight budgets on badly chosen
# variables, so the fill ratio shrinks with the slack.
FILL_STEP_MAX = 0.05
FILL_STEP_FRACTION = 0.5
FILL_EXIT_COVER = 0.85
# Packing loads are held inside a moving band above the covering
# minimum (Young-style load coupling), so no row can race ahead of the
# rest before the weights steer mass properly; the band ceiling never
# exceeds the static cap ``1 + CAP_MARGIN * slack``.  Steps only ever
# consume HEADROOM_USE of the scarcest row's remaining headroom, so
# loads approach the band asymptotically and tight rows throttle the
# step instead of freezing the system.
CAP_MARGIN = 0.6
BAND_GAP = 3.0
BAND_ABS = 0.06
HEADROOM_USE = 0.8
# Stagnating covering progress ends the solve early with a budget
# status; a deterministic round that cannot grow anything is a deadlock
# and ends it immediately.  A run that is going to succeed crosses the
# endgame at a pace far above the stagnation floor, so probes of
# hopeless budgets die quickly instead of crawling out the full budget.
STAGNATION_TOL = 2e-3
STAGNATION_WINDOW = 2500

SOLVED = "solved"
INFEASIBLE = "infeasible"
BUDGET = "budget"


@dataclass(frozen=True)
class FeasibilitySystem:
    """Normalized system plus precomputed transposes."""

    pack: CsrRows
    pack_t: CsrRows
    cover: CsrRows
    cover_t: CsrRows

    @property
    def n(self) -> int:
        return self.pack.n_cols

    @property
    def n_rows(self) -> int:
        return self.pack.n_rows + self.cover.n_rows


def feasibility_system(pack: CsrRows, cover: CsrRows) -> FeasibilitySystem:
    return FeasibilitySystem(
        pack=pack, pack_t=csr_transpose(pack), cover=cover, cover_t=csr_transpose(cover)
    )


@dataclass
class FeasibilityOutcome:
    status: str
    x: np.ndarray
    rounds: int
    pack_excess: float
    cover_deficit: float
    pack_weights: np.ndarray | None = None
    cover_weights: np.ndarray | None = None


def default_budget(n_rows: int, slack: float, factor: int = 64) -> int:
    return factor * int(np.ceil(np.log(max(n_rows, 3)) / slack**2))


@njit(cache=True, nogil=True)
def _weights(u, v, eta, w_pack, w_cover):
    """Softmax over packing loads, softmin over active covering loads.

    Returns (max packing load, min active covering load, active count).
    """
    m1 = u.size
    m2 = v.size
    umax = -np.inf
    for r in range(m1):
        if u[r] > umax:
            umax = u[r]
    s = 0.0
    for r in range(m1):
        w_pack[r] = np.exp(eta * (u[r] - umax))
        s += w_pack[r]
    for r in range(m1):
        w_pack[r] /= s
    vmin = np.inf
    n_active = 0
    for r in range(m2):
        if v[r] < 1.0:
            n_active += 1
            if v[r] < vmin:
                vmin = v[r]
    if n_active == 0:
        return umax, vmin, 0
    s = 0.0
    for r in range(m2):
        if v[r] < 1.0:
            w_cover[r] = np.exp(-eta * (v[r] - vmin))
            s += w_cover[r]
        else:
            w_cover[r] = 0.0
    for r in range(m2):
        w_cover[r] /= s
    return umax, vmin, n_active


@njit(cache=True, nogil=True)
def _select(g_pack, g_cover, row_max, keep, ratio_gate, exclude_gate, grow, x_grow, x):
    """Mark variables with favorable gradient ratio and cap headroom.

    Returns (count passing the ratio test, count actually selected).
    """
    n_ratio = 0
    n_grow = 0
    for j in range(x.size):
        ok = g_pack[j] <= ratio_gate * g_cover[j]
        if ok:
            n_ratio += 1
        b = ok and (row_max[j] < exclude_gate) and keep[j]
        grow[j] = b
        if b:
            x_grow[j] = x[j]
            n_grow += 1
        else:
            x_grow[j] = 0.0
    return n_ratio, n_grow


@njit(cache=True, nogil=True)
def _step(u, load_grow, x, grow, cap, gamma_phase, fine_increment):
    """Largest safe multiplicative step, applied in place.

    Per row the increment may use most of the remaining headroom while
    that is large, but near the cap it shrinks to ``fine_increment``
    (the weight-accuracy budget), so binding rows move slowly enough
    for the gradients that selected this step to stay valid.
    """
    g = gamma_phase
    for r in range(u.size):
        lb = load_grow[r]
        if lb > 0.0:
            h = cap - u[r]
            coarse = 0.15 * h
            allowed = fine_increment if fine_increment > coarse else coarse
            room = 0.8 * h
            if room < allowed:
                allowed = room
            a = allowed / lb
            if a < g:
                g = a
    if g <= 0.0:
        return 0.0
    for j in range(x.size):
        if grow[j]:
            x[j] *= 1.0 + g
    return g


def initial_point(system: FeasibilitySystem, slack: float) -> np.ndarray:
    """Tiny positive start: per-variable mass inversely scaled by its
    largest packing coefficient, so every packing load begins well below
    its budget and the start contributes negligibly to any budget."""
    col_max = np.zeros(system.n)
    np.maximum.at(col_max, system.pack.indices, system.pack.data)
    theta = 1e-3 * slack
    x0 = np.full(system.n, theta / max(system.n, 1))
    nz = col_max > 0.0
    x0[nz] /= col_max[nz]
    return x0


def fit_start(system: FeasibilitySystem, x0: np.ndarray, slack: float, mode: str) -> np.ndarray:
    """Scale a warm start down so every packing load is at most 1 - slack."""
    u = np.zeros(system.pack.n_rows)
    matvec(system.pack, x0, u, mode)
    top = float(u.max()) if u.size else 0.0
    if top > 1.0 - slack:
        return x0 * ((1.0 - slack) / top)
    return x0.copy()


def solve_feasibility(
    system: FeasibilitySystem,
    slack: float,
    mode: str = "sequential",
    x0: np.ndarray | None = None,
    budget: int | None = None,
    rng: np.random.Generator | None = None,
    sample_keep: float = 1.0,
) -> FeasibilityOutcome:
    """Run the multiplicative-weights loop until covered, certified
    infeasible, or out of budget.

    Parameters
    ----------
    slack : float
        Relative feasibility target; returned packing loads stay below
        ``1 + CAP_MARGIN * slack``.
    x0 : ndarray, optional
        Warm start (scaled down to fit); default is the tiny start.
    rng, sample_keep :
        When ``sample_keep < 1`` and ``rng`` is given, fill-phase rounds
        grow a random subset of the selected variables (the randomized
        flavor used by the sequential packing solver).  The boundary
        phase always uses the full eligible set; sampling there starves
        tight rows at exactly the moment every coordinate matters.
    """
    pack, cover = system.pack, system.cover
    n = system.n
    m1, m2 = pack.n_rows, cover.n_rows
    if m2 == 0:
        x = initial_point(system, slack) if x0 is None else fit_start(system, x0, slack, mode)
        return FeasibilityOutcome(SOLVED, x, 0, 0.0, 0.0)
    if np.diff(cover.indptr).min() == 0:
        # An empty covering row with positive demand is unsatisfiable.
        return FeasibilityOutcome(
            INFEASIBLE, np.zeros(n), 0, 0.0, 1.0,
            pack_weights=np.zeros(m1), cover_weights=np.zeros(m2),
        )

    eta = np.log(max(m1 + m2, 3)) / slack
    cap_static = 1.0 + CAP_MARGIN * slack
    ratio_gate = 1.0 + 0.5 * slack
    gamma_end = slack / eta
    gamma_fill = min(FILL_STEP_MAX, FILL_STEP_FRACTION * slack)
    if budget is None:
        budget = default_budget(m1 + m2, slack)

    x = initial_point(system, slack) if x0 is None else fit_start(system, x0, slack, mode)
    _grow_free_variables(system, x, mode)

    u = np.zeros(m1)
    v = np.zeros(m2)
    w_pack = np.zeros(m1)
    w_cover = np.zeros(m2)
    g_pack = np.zeros(n)
    g_cover = np.zeros(n)
    row_max = np.zeros(n)
    grow = np.zeros(n, dtype=np.bool_)
    x_grow = np.zeros(n)
    load_grow = np.zeros(m1)
    keep = np.ones(n, dtype=np.bool_)
    sampling = rng is not None and sample_keep < 1.0

    rounds = 0
    best_vmin = -np.inf
    last_progress = 0
    no_step = 0
    no_step_limit = 50 if sampling else 1
    while rounds < budget:
        matvec(pack, x, u, mode)
        matvec(cover, x, v, mode)
        umax, vmin, n_active = _weights(u, v, eta, w_pack, w_cover)
        if n_active == 0:
            return FeasibilityOutcome(
                SOLVED, x, rounds, max(0.0, umax - 1.0), 0.0
            )
        # Progress is absolute near the boundary but multiplicative in
        # the fill phase, where loads climb exponentially from a tiny
        # start; either counts.
        if vmin > best_vmin + STAGNATION_TOL or vmin > 1.25 * best_vmin:
            best_vmin = vmin
            last_progress = rounds
        elif rounds - last_progress > STAGNATION_WINDOW:
            break
        matvec(system.pack_t, w_pack, g_pack, mode)
        matvec(system.cover_t, w_cover, g_cover, mode)
        gather_max(system.pack_t, u, row_max, mode)
        fill = vmin < FILL_EXIT_COVER
        if sampling:
            keep = rng.random(n) < sample_keep if fill else np.ones(n, dtype=np.bool_)
        cap = min(cap_static, vmin + min(BAND_GAP * slack, BAND_ABS))
        # Exclusion is soft: variables sit out only while their hottest
        # row is within a hair of the moving cap, and re-enter as the
        # band rises; stepped rows therefore always keep real headroom.
        n_ratio, n_grow = _select(
            g_pack, g_cover, row_max, keep, ratio_gate,
            cap - 0.05 * gamma_end, grow, x_grow, x,
        )
        if n_ratio == 0:
            return FeasibilityOutcome(
                INFEASIBLE, x, rounds, max(0.0, umax - 1.0), max(0.0, 1.0 - vmin),
                pack_weights=w_pack.copy(), cover_weights=w_cover.copy(),
            )
        rounds += 1
        if n_grow == 0:
            # Without sampling the state is a pure function of x, so a
            # round that grows nothing would spin forever.
            no_step += 1
            if no_step >= no_step_limit:
                break
            continue
        no_step = 0
        matvec(pack, x_grow, load_grow, mode)
        _step(u, load_grow, x, grow, cap, gamma_fill if fill else gamma_end, slack / eta)

    matvec(pack, x, u, mode)
    matvec(cover, x, v, mode)
    return FeasibilityOutcome(
        BUDGET,
        x,
        rounds,
        max(0.0, float(u.max()) - 1.0) if m1 else 0.0,
        max(0.0, 1.0 - float(v.min())),
    )


def _grow_free_variables(system: FeasibilitySystem, x: np.ndarray, mode: str) -> None:
    """Variables with no packing coefficient can satisfy their covering
    rows outright; set them high enough up front (no-op for transport
    systems, where every variable sits in a column row)."""
    in_pack = np.zeros(system.n, dtype=bool)
    in_pack[system.pack.indices] = True
    free = ~in_pack
    if not free.any():
        return
    ct = system.cover_t
    for j in np.flatnonzero(free):
        lo, hi = ct.indptr[j], ct.indptr[j + 1]
        if hi > lo:
            x[j] = max(x[j], float((1.0 / ct.data[lo:hi]).max()))
