"""Ground truth: power-shift cycles, exhaustive association search and certification.

A power shift moves power around a cycle of the BS-UE support graph

    (i0, j0) -> (i1, j0) -> (i1, j1) -> (i2, j1) -> ... -> (i0, j_{m-1})

raising the even cells and lowering the odd ones.  Each UE keeps its
received power and every BS but ``i0`` keeps its total power.  After one
lap ``i0`` pays ``t * prod(g_even) / prod(g_odd)`` for the ``t`` it added,
so the shift saves power whenever that product ratio exceeds 1 and is
neutral when it equals 1.  Every cycle is therefore improving in one of
its two directions (or neutral), and an allocation admits no shift iff
its support graph is a forest.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass, field, replace
from typing import Dict, List, Optional, Sequence, Tuple

import networkx as nx
import numpy as np

from .association import Association, enumerate_associations, pairs
from .model import (LN2, TOL_RATE, ZERO_X, Allocation, Instance, check_feasible, evaluate,
                    received_power)
from .solver import FixedAssocProblem, is_globally_optimal, kkt_residuals, solve_fixed

log = logging.getLogger(__name__)

Cell = Tuple[int, int]
BRUTE_MAX_BS = 4
BRUTE_MAX_UE = 6


@dataclass(frozen=True)
class ShiftCycle:
    """Alternating cell list (even cells form group 1, odd cells group 2).

    ``direction = +1`` raises group 1 and lowers group 2; ``-1`` the
    opposite.  ``gains`` holds ``gamma`` of each cell so the shift can be
    applied to an allocation alone.
    """

    cells: Tuple[Cell, ...]
    gains: Tuple[float, ...]
    direction: int = 1
    magnitude: float = 0.0

    def __post_init__(self):
        c = self.cells
        if len(c) < 4 or len(c) % 2:
            raise ValueError("a shift cycle needs an even number (>= 4) of cells")
        for k in range(0, len(c), 2):
            if c[k][1] != c[k + 1][1]:
                raise ValueError("cells 2k and 2k+1 must share a UE")
            if c[k + 1][0] != c[(k + 2) % len(c)][0]:
                raise ValueError("cells 2k+1 and 2k+2 must share a BS")
        for grp in (c[0::2], c[1::2]):
            if len({i for i, _ in grp}) < len(grp) or len({j for _, j in grp}) < len(grp):
                raise ValueError("rows and columns within a group must be distinct")
        if self.direction not in (1, -1):
            raise ValueError("direction must be +1 or -1")
        if self.magnitude < 0:
            raise ValueError("magnitude must be non-negative")

    def oriented(self) -> Tuple[Tuple[Cell, ...], np.ndarray]:
        """Cells and gains with the raised group on the even positions."""
        if self.direction == 1:
            return self.cells, np.array(self.gains)
        return tuple(reversed(self.cells)), np.array(self.gains[::-1])

    @property
    def gain_ratio(self) -> float:
        """``prod(raised gains) / prod(lowered gains)``; above 1 means the shift saves power."""
        _, g = self.oriented()
        return float(np.exp(np.sum(np.log(g[0::2])) - np.sum(np.log(g[1::2]))))

    def deltas(self, t: float) -> np.ndarray:
        """Signed change of each oriented cell for a step of ``t`` on the first cell."""
        _, g = self.oriented()
        d = np.empty(len(g))
        up = t
        for k in range(0, len(g), 2):
            down = up * g[k] / g[k + 1]
            d[k], d[k + 1] = up, -down
            up = down
        return d

    def max_step(self, x: np.ndarray) -> float:
        cells, _ = self.oriented()
        unit = self.deltas(1.0)
        lowered = [x[cells[k]] / -unit[k] for k in range(1, len(cells), 2)]
        return float(max(0.0, min(lowered)))


def _check_rates(inst: Instance, alloc: Allocation, tol: float = TOL_RATE) -> None:
    rep = evaluate(inst, alloc)
    need = received_power(inst.rate, alloc.y)
    bad = np.abs(rep.rate_residuals) > tol * np.maximum(need, 1e-300)
    if np.any(bad):
        raise ValueError(f"allocation misses the rate equality for UE(s) {np.flatnonzero(bad).tolist()}")


def _cycle_cells(inst: Instance, nodes: Sequence) -> Tuple[Cell, ...]:
    """Turn a closed node walk of the bipartite graph into the alternating cell list."""
    k = next(i for i, v in enumerate(nodes) if v[0] == "b")
    walk = list(nodes[k:]) + list(nodes[:k])
    cells = []
    for a in range(0, len(walk), 2):
        bs, ue, nxt = walk[a][1], walk[a + 1][1], walk[(a + 2) % len(walk)][1]
        cells += [(bs, ue), (nxt, ue)]
    return tuple(cells)


def _make_shift(inst: Instance, x: np.ndarray, cells: Tuple[Cell, ...]) -> ShiftCycle:
    gains = tuple(float(inst.gamma[c]) for c in cells)
    cyc = ShiftCycle(cells, gains)
    if cyc.gain_ratio < 1.0:
        cyc = replace(cyc, direction=-1)
    return replace(cyc, magnitude=cyc.max_step(x))


def _support_cycles(inst: Instance, x: np.ndarray):
    """2-cycles first, then cycles of the 2-core of the support graph (shortest first)."""
    sup = x > ZERO_X
    m, n = sup.shape
    for i, k in pairs(m):
        both = np.flatnonzero(sup[i] & sup[k])
        for a in range(len(both)):
            for b in range(a + 1, len(both)):
                j1, j2 = int(both[a]), int(both[b])
                yield ((i, j1), (k, j1), (k, j2), (i, j2))
    g = nx.Graph()
    g.add_edges_from((("b", i), ("u", j)) for i, j in zip(*np.nonzero(sup)))
    # peel UEs and BSs with a single support entry until a 2-regular core remains
    core = nx.k_core(g, 2)
    if core.number_of_edges() == 0:
        return
    for cyc in nx.simple_cycles(core, length_bound=2 * min(m, n)):
        if len(cyc) >= 6:
            yield _cycle_cells(inst, cyc)


def find_improving_shift(inst: Instance, alloc: Allocation) -> Optional[ShiftCycle]:
    """A strictly improving shift, else a neutral one, else ``None`` (support is a forest)."""
    _check_rates(inst, alloc)
    x = alloc.x
    neutral = None
    for cells in _support_cycles(inst, x):
        cyc = _make_shift(inst, x, cells)
        if cyc.magnitude <= 0:
            continue
        if cyc.gain_ratio > 1.0 + 1e-12:
            return cyc
        if neutral is None:
            neutral = cyc
    return neutral


def apply_shift(alloc: Allocation, cycle: ShiftCycle) -> Allocation:
    """Execute ``cycle`` with its magnitude; only the cycle's cells change."""
    x = np.array(alloc.x)
    cells, _ = cycle.oriented()
    limit = cycle.max_step(x)
    if cycle.magnitude > limit * (1 + 1e-12) + 1e-15:
        unit = cycle.deltas(1.0)
        k = min(range(1, len(cells), 2), key=lambda k: x[cells[k]] / -unit[k])
        raise ValueError(f"step {cycle.magnitude:.6g} exceeds the largest feasible step "
                         f"{limit:.6g}; cell {cells[k]} would go negative")
    d = cycle.deltas(cycle.magnitude)
    for c, v in zip(cells, d):
        x[c] += v
    # the step that empties a cell should leave an exact zero
    for k in range(1, len(cells), 2):
        if x[cells[k]] < 1e-15 * max(1.0, abs(d[k])):
            x[cells[k]] = 0.0
    if np.any(x.sum(axis=1) > alloc.x.sum(axis=1) + 1e-12):
        raise ValueError("shift would raise a BS's total power")
    return Allocation(x, alloc.y, alloc.feasible, info={"shifted_from_z": alloc.z})


def improve_by_shifts(inst: Instance, alloc: Allocation, max_steps: int = 1000) -> Allocation:
    """Apply maximal shifts until the support is a forest."""
    for _ in range(max_steps):
        cyc = find_improving_shift(inst, alloc)
        if cyc is None:
            return alloc
        alloc = apply_shift(alloc, cyc)
    raise RuntimeError("shift iteration did not terminate")


# --------------------------------------------------------------------------
# exhaustive search


def convex_reference(inst: Instance) -> Optional[float]:
    """Optimal ``Z`` from a generic conic solver, association-free (``None``: infeasible).

    The rate equality is relaxed to ``>=`` (tight at the optimum), which
    makes the problem an exponential-cone program.
    """
    import cvxpy as cp

    m, n = inst.gamma.shape
    x = cp.Variable((m, n), nonneg=True)
    y = cp.Variable(n, nonneg=True)
    t = cp.Variable(n)
    cons = [cp.sum(y) == 1, cp.sum(x, axis=1) <= 1,
            cp.constraints.ExpCone(inst.rate * LN2, y, t),
            t - y <= cp.sum(cp.multiply(inst.gamma, x), axis=0)]
    prob = cp.Problem(cp.Minimize(cp.sum(x)), cons)
    try:
        prob.solve(solver=cp.CLARABEL)
    except cp.SolverError as exc:
        log.warning("conic reference solve failed: %s", exc)
        return None
    if prob.status not in (cp.OPTIMAL, cp.OPTIMAL_INACCURATE):
        return None
    return float(prob.value)


def brute_force(inst: Instance, cross_check: bool = True) -> Allocation:
    """Best allocation over every association reachable from a CC vector."""
    m, n = inst.gamma.shape
    if m > BRUTE_MAX_BS or n > BRUTE_MAX_UE:
        raise ValueError(f"brute_force is limited to M <= {BRUTE_MAX_BS}, N <= {BRUTE_MAX_UE}; "
                         f"got M={m}, N={n}")
    best: Optional[Allocation] = None
    solved: Dict[tuple, Allocation] = {}
    for _, assoc in enumerate_associations(inst):
        if assoc.key in solved:
            continue
        alloc = solve_fixed(FixedAssocProblem(inst, assoc))
        solved[assoc.key] = alloc
        if alloc.feasible and (best is None or alloc.z < best.z):
            best = alloc
    info = {"n_associations": len(solved)}
    if cross_check and m * n <= 8:
        ref = convex_reference(inst)
        info["reference_z"] = ref
        mine = None if best is None else best.z
        agree = (ref is None) == (mine is None) and (
            ref is None or abs(ref - mine) <= 1e-5 * max(ref, 1e-12))
        info["reference_agrees"] = agree
        if not agree:
            log.warning("exhaustive search (%s) and conic reference (%s) disagree", mine, ref)
    if best is None:
        return Allocation.infeasible(m, n, **info)
    return Allocation(best.x, best.y, True, best.mu, best.weights, info={**best.info, **info})


# --------------------------------------------------------------------------
# certification


@dataclass(frozen=True)
class Certificate:
    lemma1_ok: bool
    lemma2_ok: bool
    no_improving_shift: bool
    kkt_ok: bool
    details: Dict[str, object] = field(default_factory=dict, compare=False)

    @property
    def all_ok(self) -> bool:
        return self.lemma1_ok and self.lemma2_ok and self.no_improving_shift and self.kkt_ok


def clusters_from_support(x: np.ndarray, thresh: float = ZERO_X):
    """Single-BS clusters and multi-BS UE server sets induced by ``x``."""
    sup = x > thresh
    cnt = sup.sum(axis=0)
    single = [set(np.flatnonzero(sup[i] & (cnt == 1)).tolist()) for i in range(x.shape[0])]
    shared = {int(j): tuple(np.flatnonzero(sup[:, j]).tolist()) for j in np.flatnonzero(cnt > 1)}
    return single, shared


def structure_ok(x: np.ndarray) -> Tuple[bool, int, int]:
    """Shared-UE count and zero count against ``M-1`` and ``(M-1)(N-1)``."""
    m, n = x.shape
    n_multi = int(np.sum((x > ZERO_X).sum(axis=0) > 1))
    n_zero = int(np.sum(x <= ZERO_X))
    return n_multi <= m - 1 and n_zero >= (m - 1) * (n - 1), n_multi, n_zero


def cut_consistent(inst: Instance, x: np.ndarray, rtol: float = 1e-9) -> Tuple[bool, List[str]]:
    """Whether every BS pair's clusters can be separated by one cut of the SNR-ratio order.

    For pair ``(i, k)``: every UE only ``i`` serves must rank at or above every
    UE only ``k`` serves, and a UE both serve must sit between the two groups.
    """
    single, shared = clusters_from_support(x)
    g = inst.gamma
    bad = []
    for i, k in pairs(inst.num_bs):
        with np.errstate(divide="ignore"):
            def ratio(j):
                return np.inf if g[k, j] == 0 else g[i, j] / g[k, j]
        top = [ratio(j) for j in single[i]]
        bottom = [ratio(j) for j in single[k]]
        mid = [ratio(j) for j, s in shared.items() if i in s and k in s]
        lo_top = min(top, default=np.inf)
        hi_bottom = max(bottom, default=0.0)
        if lo_top < hi_bottom * (1 - rtol):
            bad.append(f"pair {(i, k)}: clusters interleave in the ratio order")
        for r in mid:
            if r > lo_top * (1 + rtol) or r < hi_bottom * (1 - rtol):
                bad.append(f"pair {(i, k)}: shared UE outside the cut")
    return not bad, bad


def certify(inst: Instance, alloc: Allocation) -> Certificate:
    """Structural and optimality checks for a feasible allocation (report only)."""
    if not alloc.feasible or not check_feasible(inst, alloc, tol_eq=1e-7, tol_rate=1e-6):
        return Certificate(False, False, False, False, {"reason": "allocation infeasible"})
    l1, n_multi, n_zero = structure_ok(alloc.x)
    l2, why = cut_consistent(inst, alloc.x)
    cyc = find_improving_shift(inst, alloc)
    details: Dict[str, object] = {"n_multi": n_multi, "n_zero": n_zero, "cut_issues": why,
                                  "shift": cyc}
    if alloc.mu is not None and alloc.weights is not None:
        rep = kkt_residuals(inst, alloc)
        kkt = rep.ok(1e-6)
        details["kkt"] = rep
    else:
        # no multipliers on file: re-solve on the allocation's own support
        assoc = Association.from_support(inst, alloc.x > ZERO_X)
        ref = solve_fixed(FixedAssocProblem(inst, assoc))
        kkt = bool(ref.feasible and is_globally_optimal(inst, ref)
                   and abs(ref.z - alloc.z) <= 1e-6 * max(ref.z, 1e-12))
        details["kkt_resolve_z"] = ref.z if ref.feasible else None
    return Certificate(l1, l2, cyc is None, kkt, details)
