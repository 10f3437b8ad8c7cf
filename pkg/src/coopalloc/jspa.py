"""Joint spectrum and power allocation over UE-BS associations.

The optimizer walks BS pairs.  For each pair it limits the pair's cut to a
range derived from two relaxed solves (one BS of the pair at a time gets an
unlimited budget), solves the fixed-association problem for every cut in
that range and keeps the cheapest result.  Because the fixed-association
problem is convex, an allocation whose multipliers are dual feasible on
every link is globally optimal; the search stops at the first such
allocation and otherwise falls back to wider enumeration.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass
from typing import Dict, Iterable, Iterator, List, Mapping, Optional, Tuple

import numpy as np

from .association import (Association, AssociationError, CcVector, Cut, Pair, PairOrders,
                          associate, association_violations, cut_options, initial_clusters,
                          pairs)
from .model import TOL_EQ, Allocation, Instance
from .solver import (FixedAssocProblem, feasibility_probe, is_globally_optimal, solve_fixed,
                     solve_relaxed)

# dual-guided moves tried before widening to full enumeration
REPAIR_STEPS = 20

log = logging.getLogger(__name__)


@dataclass(frozen=True)
class PairBounds:
    """Cut range ``[lo, hi]`` (1-based positions in the pair ranking) for one BS pair.

    ``case`` is one of ``"first_over"``, ``"second_over"``, ``"both_over"``,
    ``"neither_over"`` or ``"optimal"`` (the two relaxed solutions coincide).
    """

    pair: Pair
    lo: int
    hi: int
    case: str
    initial: int

    def __post_init__(self):
        if self.lo > self.hi + 1:
            raise ValueError(f"empty range needs lo <= hi + 1, got [{self.lo}, {self.hi}]")

    @property
    def already_optimal(self) -> bool:
        return self.case == "optimal"

    def candidates(self, num_ue: int) -> List[Tuple[int, bool]]:
        """Cut entries in range, boundaries ascending, plain cut before shared cut.

        The UE just past ``hi`` may also be shared, so ``(hi + 1, True)`` closes the list.
        """
        out = []
        for c in range(self.lo, self.hi + 1):
            out.append((c, False))
            if c >= 1:
                out.append((c, True))
        if self.hi + 1 <= num_ue and self.hi + 1 >= 1:
            out.append((self.hi + 1, True))
        return out


class _Search:
    """Shared state of one optimization run: orders, solve cache and counters."""

    def __init__(self, inst: Instance):
        self.inst = inst
        self.orders = PairOrders.of(inst)
        self.initial = initial_clusters(inst)
        self.init_cut = {p: self.orders.initial_cut(p, self.initial) for p in pairs(inst.num_bs)}
        self.cache: Dict[tuple, Allocation] = {}
        self.best: Optional[Allocation] = None
        self.best_cc: Optional[CcVector] = None
        self.certified = False
        self.n_solved = 0
        self.n_candidates = 0

    def cc(self, entries: Mapping[Pair, Cut]) -> CcVector:
        m = self.inst.num_bs
        return CcVector(m, tuple(entries.get(p, (self.init_cut[p], False)) for p in pairs(m)))

    def associate(self, cc: CcVector) -> Optional[Association]:
        if cc.num_shared(self.orders) > self.inst.num_bs - 1:
            return None
        try:
            assoc = associate(self.inst, cc, self.orders)
        except AssociationError:
            return None
        if association_violations(self.inst, assoc, cc, self.orders):
            return None
        return assoc

    def solve(self, assoc: Association, relaxed=frozenset()) -> Allocation:
        key = (assoc.key, frozenset(relaxed))
        if key not in self.cache:
            self.cache[key] = solve_fixed(FixedAssocProblem(self.inst, assoc, relaxed))
            if not relaxed:
                self.n_solved += 1
        return self.cache[key]

    def offer(self, cc: CcVector) -> bool:
        """Solve one candidate; returns True once a certified optimum is held."""
        self.n_candidates += 1
        assoc = self.associate(cc)
        if assoc is None:
            return False
        return self.offer_assoc(assoc, cc)

    def offer_assoc(self, assoc: Association, cc: Optional[CcVector] = None) -> bool:
        alloc = self.solve(assoc)
        if not alloc.feasible:
            return False
        if self.best is None or alloc.z < self.best.z:
            self.best, self.best_cc = alloc, cc
        if is_globally_optimal(self.inst, alloc):
            self.best, self.best_cc = alloc, cc
            self.certified = True
        return self.certified

    def result(self, **info) -> Allocation:
        m, n = self.inst.num_bs, self.inst.num_ue
        stats = dict(n_solved=self.n_solved, n_candidates=self.n_candidates,
                     certified=self.certified, **info)
        if self.best is None:
            return Allocation.infeasible(m, n, **stats)
        b = self.best
        stats.update(b.info)
        if self.best_cc is not None:
            stats["cc"] = self.best_cc.entries
        return Allocation(b.x, b.y, True, mu=b.mu, weights=b.weights, info=stats)


def _repair(search: _Search, steps: int) -> bool:
    """Move or share the UEs whose dual prices are violated most, while Z drops.

    Returns True once the held allocation is certified.
    """
    inst = search.inst
    g = inst.gamma
    m = inst.num_bs
    for _ in range(steps):
        cur = search.best
        if search.certified or cur is None or cur.mu is None:
            break
        with np.errstate(divide="ignore"):
            price = np.where(g > 0, cur.weights[:, None] / np.where(g > 0, g, 1.0), np.inf)
        served = cur.x > 0
        c = np.array([price[served[:, j], j].min() for j in range(inst.num_ue)])
        viol = np.where(g > 0, (c[None, :] - price) / c[None, :], -np.inf)
        links = [tuple(ij) for ij in np.argwhere(viol > 1e-9)]
        links.sort(key=lambda ij: -viol[ij])
        z0 = cur.z
        for i, j in links[:3]:
            for share in (True, False):
                sup = served.copy()
                if not share:
                    sup[:, j] = False
                sup[i, j] = True
                assoc = Association.from_support(inst, sup)
                if len(set().union(*assoc.multi)) > m - 1:
                    continue
                search.n_candidates += 1
                if search.offer_assoc(assoc):
                    return True
        if search.best.z >= z0 * (1 - 1e-12):
            break
    return search.certified


def _power_crossing(x_row: np.ndarray, order: np.ndarray, from_end: bool) -> Optional[int]:
    """First 1-based position where the running power sum passes 1 (``None``: never)."""
    seq = x_row[order]
    if from_end:
        run = np.cumsum(seq[::-1])
        hit = np.flatnonzero(run > 1.0 + TOL_EQ)
        return None if hit.size == 0 else len(seq) - int(hit[0])
    run = np.cumsum(seq)
    hit = np.flatnonzero(run > 1.0 + TOL_EQ)
    return None if hit.size == 0 else int(hit[0]) + 1


def _bounds(search: _Search, pair: Pair, context: Mapping[Pair, Cut]) -> PairBounds:
    inst, orders = search.inst, search.orders
    n = inst.num_ue
    i1, i2 = pair
    b = search.init_cut[pair]
    entries = dict(context)
    entries[pair] = (b, False)
    assoc = search.associate(search.cc(entries))
    if assoc is None:
        return PairBounds(pair, 0, n, "both_over", b)
    fp1 = FixedAssocProblem(inst, assoc, frozenset({i1}))
    fp2 = FixedAssocProblem(inst, assoc, frozenset({i2}))
    a1, s1 = solve_relaxed(fp1, pair)
    a2, s2 = solve_relaxed(fp2, pair)
    if s1 is not None and s2 is not None and np.allclose(s1, s2, rtol=1e-9, atol=1e-12):
        return PairBounds(pair, b, b, "optimal", b)
    # an infeasible relaxed solve means the BS kept on budget cannot carry its own UEs
    over1 = (s1 is not None and s1[0] > 1.0 + TOL_EQ) or s2 is None
    over2 = (s2 is not None and s2[1] > 1.0 + TOL_EQ) or s1 is None
    order = orders.order[pair]
    lo, hi = b, b
    if over1:
        j1 = _power_crossing(a1.x[i1], order, from_end=False) if s1 is not None else None
        lo = 0 if j1 is None else max(0, j1 - 1)
    if over2:
        j2 = _power_crossing(a2.x[i2], order, from_end=True) if s2 is not None else None
        hi = n if j2 is None else j2
    if over1 and over2:
        case = "both_over"
    elif over1:
        case = "first_over"
    elif over2:
        case = "second_over"
    else:
        case = "neither_over"
    lo, hi = min(lo, b), max(hi, b)
    return PairBounds(pair, lo, hi, case, b)


def lemma3_bounds(inst: Instance, pair: Pair, context: Optional[Mapping[Pair, Cut]] = None
                  ) -> PairBounds:
    """Cut range for ``pair`` given the cuts of the other pairs (default: best-BS cuts).

    Both relaxed solves keep every other BS on budget.  When only the first
    BS overruns its budget the range runs from the first ranking position
    where its relaxed power sum passes 1 up to the best-BS cut; the second
    BS is mirrored from the far end; if both overrun both ends move; if
    neither does the best-BS cut is kept.
    """
    if pair[0] >= pair[1]:
        raise ValueError("pair must be (i, k) with i < k")
    return _bounds(_Search(inst), pair, context or {})


def _finish_uncertified(search: _Search, cuts: Iterable[CcVector], **info) -> Allocation:
    """Certification failed inside the pruned range: probe, then enumerate the rest."""
    if search.best is None:
        probe = feasibility_probe(search.inst, stop_above=1.0 + 1e-6)
        if not probe.feasible:
            return search.result(probe=probe.min_max_power, **info)
    if _repair(search, REPAIR_STEPS):
        return search.result(**info)
    log.warning("no certified optimum inside the pruned range; widening the search")
    for cc in cuts:
        if search.offer(cc):
            break
    return search.result(widened=True, **info)


def optimize_two_bs(inst: Instance) -> Allocation:
    """Two-BS optimizer: best-BS start, pruned cut range, then exhaustive fallback."""
    if inst.num_bs != 2:
        raise ValueError("optimize_two_bs needs exactly two BSs")
    search = _Search(inst)
    p = (0, 1)
    n = inst.num_ue
    if search.offer(search.cc({})):
        return search.result(bounds=None)
    bounds = _bounds(search, p, {})
    for cut in bounds.candidates(n):
        if search.offer(search.cc({p: cut})):
            return search.result(bounds=bounds)
    tried = set(bounds.candidates(n))
    rest = (search.cc({p: c}) for c in sorted(cut_options(n), key=lambda o: (o[0], o[1]))
            if c not in tried)
    return _finish_uncertified(search, rest, bounds=bounds)


def _contexts(search: _Search, focus: Pair) -> Iterator[Dict[Pair, Cut]]:
    """Cut assignments of the non-focus pairs, nearest to the best-BS cuts first."""
    others = [p for p in pairs(search.inst.num_bs) if p != focus]
    n = search.inst.num_ue
    opts = [cut_options(n, search.init_cut[p]) for p in others]
    # breadth-first in total distance from the best-BS cuts
    dist = [[abs(o[0] - search.init_cut[p]) + o[1] for o in ol] for p, ol in zip(others, opts)]
    combos = []
    for idx in np.ndindex(*[len(o) for o in opts]):
        combos.append((sum(d[k] for d, k in zip(dist, idx)), idx))
    combos.sort()
    for _, idx in combos:
        yield {p: ol[k] for p, ol, k in zip(others, opts, idx)}


def _all_cc(search: _Search) -> Iterator[CcVector]:
    m, n = search.inst.num_bs, search.inst.num_ue
    ps = pairs(m)
    opts = [cut_options(n, search.init_cut[p]) for p in ps]
    for idx in np.ndindex(*[len(o) for o in opts]):
        yield CcVector(m, tuple(ol[k] for ol, k in zip(opts, idx)))


def optimize(inst: Instance, max_contexts: Optional[int] = None) -> Allocation:
    """Minimum total power allocation, or ``feasible=False`` when none exists.

    ``max_contexts`` caps how many cut assignments of the non-focus pairs are
    visited per pair before the probe/enumeration fallback takes over.
    """
    m = inst.num_bs
    if m == 1:
        assoc = Association((frozenset(range(inst.num_ue)),), (frozenset(),),
                            initial_clusters(inst))
        alloc = solve_fixed(FixedAssocProblem(inst, assoc))
        return Allocation(alloc.x, alloc.y, alloc.feasible, alloc.mu, alloc.weights,
                          info=dict(alloc.info, n_solved=1, n_candidates=1))
    if m == 2:
        return optimize_two_bs(inst)
    search = _Search(inst)
    if search.offer(search.cc({})) or _repair(search, REPAIR_STEPS):
        return search.result()
    probed = False
    for focus in pairs(m):
        for k, ctx in enumerate(_contexts(search, focus)):
            held = search.best
            if max_contexts is not None and k >= max_contexts:
                break
            if k == 1 and not probed and search.best is None:
                # nothing feasible near the best-BS cuts: rule out infeasibility cheaply
                probed = True
                probe = feasibility_probe(inst, stop_above=1.0 + 1e-6)
                if not probe.feasible:
                    return search.result(probe=probe.min_max_power)
            bounds = _bounds(search, focus, ctx)
            for cut in bounds.candidates(inst.num_ue):
                entries = dict(ctx)
                entries[focus] = cut
                if search.offer(search.cc(entries)):
                    return search.result()
            if search.best is not held and _repair(search, REPAIR_STEPS):
                return search.result()
    return _finish_uncertified(search, _all_cc(search))
