"""UE-BS association: SNR-ratio orderings, initial clusters, common-candidate
vectors and the fixed-point clustering loop.

For every BS pair ``(i, k)`` with ``i < k`` the UEs are ranked by descending
SNR ratio ``gamma[i, j] / gamma[k, j]`` (ties by ascending UE index).  A
common-candidate (CC) vector stores, per pair, a cut position ``c`` in that
ranking plus a flag saying whether the UE sitting at position ``c`` is
jointly powered by the two BSs.  Positions are 1-based; ``c = 0`` puts the
cut in front of every UE.
"""

from __future__ import annotations

import itertools
from dataclasses import dataclass
from typing import Dict, FrozenSet, Iterator, List, Mapping, Optional, Sequence, Tuple

import numpy as np

from .model import Instance

Pair = Tuple[int, int]
# (cut position, shared flag); None leaves the pair at its argmax split
Cut = Optional[Tuple[int, bool]]


class AssociationError(RuntimeError):
    """The clustering loop could not settle every UE for the given CC vector."""


def pairs(num_bs: int) -> List[Pair]:
    return list(itertools.combinations(range(num_bs), 2))


def snr_ratio(inst: Instance, i: int, k: int, j: int) -> float:
    """``gamma[i, j] / gamma[k, j]``; ``inf`` when only BS ``i`` covers UE ``j``."""
    a, b = inst.gamma[i, j], inst.gamma[k, j]
    if b == 0:
        if a == 0:
            raise ValueError(f"UE {j} is covered by neither BS {i} nor BS {k}")
        return float("inf")
    return float(a / b)


def _ratio_key(inst: Instance, i: int, k: int) -> np.ndarray:
    a, b = inst.gamma[i], inst.gamma[k]
    with np.errstate(divide="ignore", invalid="ignore"):
        r = a / b
    # UEs covered by neither BS are irrelevant to the pair; park them at ratio 1
    return np.where((a == 0) & (b == 0), 1.0, r)


@dataclass(frozen=True)
class PairOrders:
    """Per-pair descending SNR-ratio rankings of one instance."""

    order: Mapping[Pair, np.ndarray]      # UE ids, best-for-first-BS first
    pos: Mapping[Pair, np.ndarray]        # 1-based rank of each UE
    ratio: Mapping[Pair, np.ndarray]

    @classmethod
    def of(cls, inst: Instance) -> "PairOrders":
        order, pos, ratio = {}, {}, {}
        for p in pairs(inst.num_bs):
            r = _ratio_key(inst, *p)
            o = np.lexsort((np.arange(inst.num_ue), -r))
            ps = np.empty(inst.num_ue, dtype=int)
            ps[o] = np.arange(1, inst.num_ue + 1)
            order[p], pos[p], ratio[p] = o, ps, r
        return cls(order, pos, ratio)

    def initial_cut(self, p: Pair, initial: Sequence[FrozenSet[int]]) -> int:
        """Number of leading UEs in the pair ranking whose best BS of the two is ``p[0]``."""
        i, k = p
        o = self.order[p]
        both = initial[i] | initial[k]
        ranked = [j for j in o if j in both]
        c = 0
        for j in ranked:
            if j in initial[i]:
                c = int(self.pos[p][j])
        return c


def initial_clusters(inst: Instance) -> Tuple[FrozenSet[int], ...]:
    """Best-BS clusters: UE ``j`` joins ``argmax_i gamma[i, j]`` (lowest index on ties)."""
    best = np.argmax(inst.gamma, axis=0)
    return tuple(frozenset(np.flatnonzero(best == i).tolist()) for i in range(inst.num_bs))


@dataclass(frozen=True)
class CcVector:
    """One ``(cut, shared)`` entry (or ``None``) per BS pair, in lexicographic pair order."""

    num_bs: int
    entries: Tuple[Cut, ...]

    def __post_init__(self):
        if len(self.entries) != self.num_bs * (self.num_bs - 1) // 2:
            raise ValueError("CC vector needs one entry per BS pair")

    def as_dict(self) -> Dict[Pair, Cut]:
        return dict(zip(pairs(self.num_bs), self.entries))

    def shared_ues(self, orders: PairOrders) -> Dict[Pair, int]:
        out = {}
        for p, e in self.as_dict().items():
            if e is not None and e[1]:
                out[p] = int(orders.order[p][e[0] - 1])
        return out

    def num_shared(self, orders: PairOrders) -> int:
        """``|UNI(J^CC)|``: distinct UEs designated as jointly powered."""
        return len(set(self.shared_ues(orders).values()))


@dataclass(frozen=True)
class Association:
    """Disjoint single-BS clusters, multi-BS candidate sets and the best-BS start."""

    clusters: Tuple[FrozenSet[int], ...]
    multi: Tuple[FrozenSet[int], ...]
    initial: Tuple[FrozenSet[int], ...]

    @property
    def key(self):
        return (self.clusters, self.multi)

    def serving_sets(self) -> Dict[int, Tuple[int, ...]]:
        """Multi-BS UE -> BSs jointly powering it."""
        out: Dict[int, List[int]] = {}
        for i, m in enumerate(self.multi):
            for j in m:
                out.setdefault(j, []).append(i)
        return {j: tuple(sorted(v)) for j, v in sorted(out.items())}

    def single_bs(self) -> Dict[int, int]:
        return {j: i for i, c in enumerate(self.clusters) for j in c}

    @classmethod
    def from_support(cls, inst: Instance, support: np.ndarray) -> "Association":
        """Clusters induced by a boolean support matrix."""
        m = inst.num_bs
        counts = support.sum(axis=0)
        clusters = tuple(frozenset(np.flatnonzero(support[i] & (counts == 1)).tolist())
                         for i in range(m))
        multi = tuple(frozenset(np.flatnonzero(support[i] & (counts > 1)).tolist())
                      for i in range(m))
        return cls(clusters, multi, initial_clusters(inst))


def _side_ok(orders: PairOrders, p: Pair, cut: Cut, bs: int, j: int) -> bool:
    """Whether UE ``j`` lies on BS ``bs``'s side of pair ``p``'s cut."""
    if cut is None:
        return True
    c, shared = cut
    pos = orders.pos[p][j]
    if bs == p[0]:
        return pos < c if shared else pos <= c
    return pos > c


def associate(inst: Instance, cc: CcVector, orders: Optional[PairOrders] = None) -> Association:
    """Run the clustering fixed point for one CC vector.

    Each round: UEs already in a cluster leave the working set, BSs that
    lost part of their best-BS cluster stop taking UEs, the remaining UEs
    are re-assigned to their best surviving BS, and every surviving BS keeps
    the UEs lying on its side of all its pairwise cuts.  Jointly powered
    candidates are the designated shared UEs not claimed by any cluster.
    """
    m, n = inst.num_bs, inst.num_ue
    if cc.num_bs != m:
        raise ValueError("CC vector built for a different number of BSs")
    orders = orders or PairOrders.of(inst)
    cuts = cc.as_dict()
    shared = cc.shared_ues(orders)
    initial = initial_clusters(inst)

    def cut_for(i, k):
        p = (min(i, k), max(i, k))
        return p, cuts[p]

    j0 = [set(c) for c in initial]
    jbar = {(i, k): set(j0[i]) for i in range(m) for k in range(m) if k != i}
    clusters = [set() for _ in range(m)]
    multi = [set() for _ in range(m)]
    active = set(range(m))
    lost = [False] * m
    everyone = set(range(n))
    for _ in range(m * n + 2):
        settled = set().union(*clusters)
        multi = [{shared[p] for p in shared if i in p} - settled for i in range(m)]
        if settled | set().union(*multi) == everyone:
            break
        # BSs that lost some of their own UEs are being helped and take no more
        for i in sorted(active):
            kept = set().union(*(jbar[i, k] for k in range(m) if k != i)) if m > 1 else j0[i]
            if kept < j0[i]:
                active.discard(i)
        if not active:
            raise AssociationError("every BS stopped taking UEs before all UEs settled")
        loose = everyone - settled - set().union(*multi)
        act = sorted(active)
        g = inst.gamma[act]
        for i in act:
            j0[i] = set()
        for j in sorted(loose):
            j0[act[int(np.argmax(g[:, j]))]].add(j)
        progress = False
        for i in act:
            inter = set(j0[i])
            for k in range(m):
                if k == i:
                    continue
                p, cut = cut_for(i, k)
                jbar[i, k] = {j for j in j0[i] if _side_ok(orders, p, cut, i, j)}
                inter &= jbar[i, k]
            new = inter - clusters[i]
            if new:
                clusters[i] |= new
                progress = True
            lost[i] = inter < j0[i]
        if not progress and not any(
                set().union(*(jbar[i, k] for k in range(m) if k != i)) < j0[i] for i in act):
            # a UE rejected by one cut only: its BS stops taking UEs so it can move on
            blocked = [i for i in act if lost[i]]
            if not blocked or len(blocked) == len(act):
                raise AssociationError("clustering loop stalled")
            active.difference_update(blocked)
    else:
        raise AssociationError(f"clustering did not settle within {m * n + 2} rounds")
    return Association(tuple(frozenset(c) for c in clusters),
                       tuple(frozenset(c) for c in multi), initial)


def association_violations(inst: Instance, assoc: Association,
                           cc: Optional[CcVector] = None,
                           orders: Optional[PairOrders] = None) -> List[str]:
    """Structural checks: partition, disjointness, shared-UE bound and cut ordering."""
    m, n = inst.num_bs, inst.num_ue
    out = []
    seen: set = set()
    for i, c in enumerate(assoc.clusters):
        if c & seen:
            out.append(f"cluster {i} overlaps another cluster")
        seen |= c
        if c & assoc.multi[i]:
            out.append(f"BS {i} has a UE both single and multi")
    shared_all = set().union(*assoc.multi)
    if shared_all & seen:
        out.append("a multi-BS UE is also in a single-BS cluster")
    if seen | shared_all != set(range(n)):
        out.append("clusters do not cover every UE")
    if len(shared_all) > m - 1:
        out.append(f"{len(shared_all)} multi-BS UEs exceed M-1={m - 1}")
    for j, s in assoc.serving_sets().items():
        if len(s) < 2:
            out.append(f"multi-BS UE {j} has a single server")
    if cc is not None:
        orders = orders or PairOrders.of(inst)
        if cc.num_shared(orders) > m - 1:
            out.append("CC vector designates more than M-1 shared UEs")
        for p, cut in cc.as_dict().items():
            i, k = p
            if any(not _side_ok(orders, p, cut, i, j) for j in assoc.clusters[i]):
                out.append(f"cluster {i} crosses the cut of pair {p}")
            if any(not _side_ok(orders, p, cut, k, j) for j in assoc.clusters[k]):
                out.append(f"cluster {k} crosses the cut of pair {p}")
    return out


def cut_options(n: int, first: int = 0) -> List[Tuple[int, bool]]:
    """All ``(cut, shared)`` values for one pair, nearest to ``first`` first."""
    opts = [(c, False) for c in range(n + 1)] + [(c, True) for c in range(1, n + 1)]
    return sorted(opts, key=lambda o: (abs(o[0] - first), o[1], o[0]))


def enumerate_cc(inst: Instance, fixed: Optional[Mapping[Pair, Cut]] = None,
                 orders: Optional[PairOrders] = None) -> Iterator[CcVector]:
    """Every CC vector with at most ``M - 1`` shared UEs whose clustering settles.

    ``fixed`` pins the entries of some pairs.  Pairs are enumerated starting
    from their best-BS cut so that the most plausible vectors come first.
    """
    for cc, _ in enumerate_associations(inst, fixed, orders):
        yield cc


def enumerate_associations(inst: Instance, fixed: Optional[Mapping[Pair, Cut]] = None,
                           orders: Optional[PairOrders] = None
                           ) -> Iterator[Tuple[CcVector, Association]]:
    m, n = inst.num_bs, inst.num_ue
    orders = orders or PairOrders.of(inst)
    fixed = dict(fixed or {})
    init = initial_clusters(inst)
    options = []
    for p in pairs(m):
        if p in fixed:
            options.append([fixed[p]])
        else:
            options.append(cut_options(n, orders.initial_cut(p, init)))
    for entries in itertools.product(*options):
        cc = CcVector(m, tuple(entries))
        if cc.num_shared(orders) > m - 1:
            continue
        try:
            assoc = associate(inst, cc, orders)
        except AssociationError:
            continue
        if association_violations(inst, assoc, cc, orders):
            continue
        yield cc, assoc
