"""Convex core: minimum-power spectrum/power split for a fixed association.

With the association fixed, the problem is convex.  Its Lagrangian prices
spectrum with ``mu`` and BS ``i``'s power with ``w_i = 1 + lambda_i``.  For
a given price pair a UE served at cost ``c_j`` (power price per unit of
received SNR-power) takes the bandwidth ``y_j`` solving

    c_j * f_j'(y_j) + mu = 0,      f_j(y) = (2**(R_j / y) - 1) * y,

which :func:`per_ue_bandwidth` computes.  A UE powered by several BSs ties
their prices (``w_i / gamma_ij`` equal across its servers), so every
connected group of BSs shares one scale factor.  Within a group the
non-root BSs run at full budget and the root absorbs what is left; the
group caps when the root hits its budget too.  The spectrum price is
then found by a monotone 1-D root search on ``sum(y) = 1``.
"""

from __future__ import annotations

import itertools
import logging
import math
from dataclasses import dataclass, field
from typing import Dict, FrozenSet, List, Mapping, Optional, Sequence, Tuple

import numpy as np
from scipy.optimize import brentq
from scipy.special import lambertw

from .association import Association
from .model import (LN2, TOL_EQ, U_MAX, Y_MIN, Allocation, Instance, received_power)

log = logging.getLogger(__name__)

MAX_ITER = 200
XTOL = 1e-13


class SolverError(RuntimeError):
    pass


# k(u) = u e^u - expm1(u) = sum_{n>=2} (n-1) u^n / n!; the series avoids cancellation
_K_SERIES = np.array([(n - 1) / math.factorial(n) for n in range(2, 22)])


def _k(u: np.ndarray) -> np.ndarray:
    with np.errstate(over="ignore"):
        out = u * np.exp(u) - np.expm1(u)
    small = u < 0.5
    if small.any():
        us = u[small]
        acc = np.zeros_like(us)
        for c in _K_SERIES[:15][::-1]:
            acc = acc * us + c
        out[small] = us * us * acc
    return out


def _price_to_u(t: np.ndarray) -> np.ndarray:
    """Solve ``exp(u) * (u - 1) + 1 = t`` for ``u > 0`` (elementwise, ``t > 0``).

    Start from the Lambert-W closed form (a two-term series for small
    ``t``, where the closed form cancels) and polish with three Newton steps.
    """
    t = np.asarray(t, dtype=float)
    s = np.sqrt(2.0 * t)
    u = np.where(t < 1e-3, s - s * s / 3.0,
                 1.0 + lambertw((np.maximum(t, 1e-3) - 1.0) / np.e).real)
    u = np.minimum(u, U_MAX)
    with np.errstate(over="ignore", invalid="ignore"):
        for _ in range(3):
            step = (_k(u) - t) / (u * np.exp(u))
            u = u - np.where(np.isfinite(step), step, 0.0)
    return u


def bandwidth_for_price(rate: np.ndarray, t: np.ndarray) -> np.ndarray:
    """Vectorized optimal bandwidth for price ratios ``t = mu / c``."""
    rate = np.asarray(rate, dtype=float)
    t = np.asarray(t, dtype=float)
    y = np.zeros(np.broadcast(rate, t).shape)
    pos = t > 0
    if np.any(pos):
        u = _price_to_u(np.broadcast_to(t, y.shape)[pos])
        y[pos] = np.broadcast_to(rate, y.shape)[pos] * LN2 / u
    y[~pos] = np.inf
    return np.maximum(y, Y_MIN)


def per_ue_bandwidth(r_prime: float, gamma_eff: float, w_eff: float, mu: float) -> Tuple[float, bool]:
    """Bandwidth ratio minimizing ``w_eff * g(y) + mu * y`` for one UE.

    ``g(y) = (2**(r'/y) - 1) * y / gamma_eff``.  Returns ``(y, saturated)``;
    ``saturated`` is set when the stationary point lies below the
    numerically representable range and the floor was returned instead.
    """
    if min(r_prime, gamma_eff, w_eff, mu) <= 0:
        raise ValueError("per_ue_bandwidth needs positive inputs")
    t = mu * gamma_eff / w_eff
    u = float(_price_to_u(np.array([t]))[0])
    y_floor = max(Y_MIN, r_prime * LN2 / U_MAX)
    y = r_prime * LN2 / u
    if y <= y_floor:
        return y_floor, True
    return y, False


# --------------------------------------------------------------------------
# fixed-association problems


@dataclass(frozen=True)
class FixedAssocProblem:
    """An instance with its association and the BSs whose budget is dropped."""

    inst: Instance
    assoc: Association
    relaxed: FrozenSet[int] = frozenset()

    def __post_init__(self):
        object.__setattr__(self, "relaxed", frozenset(self.relaxed))
        if any(not 0 <= i < self.inst.num_bs for i in self.relaxed):
            raise ValueError("relaxed BS index out of range")


@dataclass(frozen=True)
class DualState:
    mu: float
    w: np.ndarray


@dataclass
class _Group:
    """BSs tied together by jointly powered UEs (a tree rooted at ``root``)."""

    bss: List[int]
    root: int
    a: Dict[int, float]
    budgeted: bool
    child_edges: Dict[int, List[int]] = field(default_factory=dict)
    edge_parent: Dict[int, int] = field(default_factory=dict)
    edge_children: Dict[int, List[int]] = field(default_factory=dict)
    ues: np.ndarray = None
    rho_star: float = np.inf


class _Pattern:
    """One support pattern: every UE's server set is fixed and every split is interior."""

    def __init__(self, inst: Instance, servers: Mapping[int, Tuple[int, ...]],
                 relaxed: FrozenSet[int]):
        self.inst = inst
        self.relaxed = relaxed
        self.servers = servers
        self.reason = None
        g = inst.gamma
        m, n = inst.num_bs, inst.num_ue
        parent = list(range(m))

        def find(a):
            while parent[a] != a:
                parent[a] = parent[parent[a]]
                a = parent[a]
            return a

        self.single = {j: s[0] for j, s in servers.items() if len(s) == 1}
        self.shared = {j: s for j, s in servers.items() if len(s) > 1}
        for j, i in self.single.items():
            if g[i, j] <= 0:
                self.reason = f"UE {j} assigned to BS {i} which does not cover it"
                return
        for j, s in self.shared.items():
            roots = {find(i) for i in s}
            if len(roots) < len(s):
                self.reason = "jointly powered UEs form a cycle"
                return
            for i in s[1:]:
                parent[find(i)] = find(s[0])
        comps: Dict[int, List[int]] = {}
        for i in range(m):
            comps.setdefault(find(i), []).append(i)
        self.groups: List[_Group] = []
        self.group_of_bs = np.zeros(m, dtype=int)
        for bss in comps.values():
            grp = self._build_group(bss)
            if grp is None:
                return
            for i in bss:
                self.group_of_bs[i] = len(self.groups)
            self.groups.append(grp)
        # price-scaling of each UE: t_j = rho_group * scale_j
        self.scale = np.zeros(n)
        self.group_of_ue = np.zeros(n, dtype=int)
        self.ref_bs = np.zeros(n, dtype=int)
        for k, grp in enumerate(self.groups):
            ues = []
            for i in grp.bss:
                ues += [j for j, b in self.single.items() if b == i]
            ues += [j for j, s in self.shared.items() if s[0] in grp.bss]
            grp.ues = np.array(sorted(ues), dtype=int)
            for j in grp.ues:
                i = servers[j][0]
                self.scale[j] = g[i, j] / grp.a[i]
                self.group_of_ue[j] = k
                self.ref_bs[j] = i

    def _build_group(self, bss: List[int]) -> Optional[_Group]:
        g = self.inst.gamma
        edges = {j: s for j, s in self.shared.items() if s[0] in bss}
        start = bss[0]
        a = {start: 1.0}
        frontier = [start]
        while frontier:
            i = frontier.pop()
            for j, s in edges.items():
                if i in s:
                    for k in s:
                        if k not in a:
                            a[k] = a[i] * g[k, j] / g[i, j]
                            frontier.append(k)
        relaxed_here = [i for i in bss if i in self.relaxed]
        if relaxed_here:
            root = min(relaxed_here, key=lambda i: (a[i], i))
            if any(a[i] < a[root] * (1 - 1e-12) for i in bss):
                self.reason = "a relaxed BS would need a negative budget price"
                return None
            if any(abs(a[i] - a[root]) > 1e-12 * a[root] for i in relaxed_here):
                self.reason = "two relaxed BSs with different tied prices"
                return None
        else:
            root = min(bss, key=lambda i: (a[i], i))
        base = a[root]
        a = {i: v / base for i, v in a.items()}
        grp = _Group(bss=sorted(bss), root=root, a=a, budgeted=not relaxed_here)
        # orient the tree away from the root
        seen = {root}
        frontier = [root]
        while frontier:
            i = frontier.pop(0)
            grp.child_edges[i] = []
            for j, s in sorted(edges.items()):
                if i in s and j not in grp.edge_parent:
                    grp.edge_parent[j] = i
                    grp.child_edges[i].append(j)
                    kids = [k for k in s if k != i]
                    grp.edge_children[j] = kids
                    for k in kids:
                        seen.add(k)
                        frontier.append(k)
        return grp

    # -- flows ---------------------------------------------------------------

    def _group_flows(self, grp: _Group, y: np.ndarray, q: np.ndarray):
        """Root power and shared splits when every non-root BS runs at full budget."""
        g = self.inst.gamma
        single_load = {i: 0.0 for i in grp.bss}
        for j in grp.ues:
            if j in self.single:
                i = self.single[j]
                single_load[i] += q[j] / g[i, j]
        x_shared: Dict[Tuple[int, int], float] = {}

        def edge_amount(e):
            rest = q[e]
            for c in grp.edge_children[e]:
                xc = 1.0 - load(c)
                x_shared[c, e] = xc
                rest -= g[c, e] * xc
            p = grp.edge_parent[e]
            xp = rest / g[p, e]
            x_shared[p, e] = xp
            return xp

        def load(i):
            return single_load[i] + sum(edge_amount(e) for e in grp.child_edges.get(i, []))

        return load(grp.root), x_shared

    def _y_q(self, t: np.ndarray, ues: np.ndarray):
        y = bandwidth_for_price(self.inst.rate[ues], t)
        return y, received_power(self.inst.rate[ues], y)

    def _root_power(self, grp: _Group, rho: float) -> float:
        y = np.zeros(self.inst.num_ue)
        q = np.zeros(self.inst.num_ue)
        ues = grp.ues
        if rho == 0.0:
            q[ues] = self.inst.rate[ues] * LN2
        else:
            y[ues], q[ues] = self._y_q(rho * self.scale[ues], ues)
        return self._group_flows(grp, y, q)[0]

    def _cap_price(self, grp: _Group) -> Optional[float]:
        """Price ratio at which the group's root reaches its budget (``inf``: never)."""
        if not grp.budgeted or (len(grp.ues) == 0):
            return np.inf
        if self._root_power(grp, 0.0) >= 1.0:
            return None
        lo, hi = -20.0, 0.0
        while self._root_power(grp, np.exp(hi)) <= 1.0:
            lo, hi = hi, hi + 8.0
            if hi > 700:
                return np.inf
        while self._root_power(grp, np.exp(lo)) > 1.0:
            hi, lo = lo, lo - 8.0
            if lo < -700:
                return None
        s = brentq(lambda s: self._root_power(grp, np.exp(s)) - 1.0, lo, hi,
                   xtol=XTOL, rtol=4 * np.finfo(float).eps, maxiter=MAX_ITER)
        return float(np.exp(s))

    def solve(self) -> Optional[Allocation]:
        if self.reason is not None:
            return None
        inst = self.inst
        m, n = inst.num_bs, inst.num_ue
        caps = []
        for grp in self.groups:
            c = self._cap_price(grp)
            if c is None:
                self.reason = f"BS group {grp.bss} cannot meet its demand even with all spectrum"
                return None
            grp.rho_star = c
            caps.append(c)
        cap_ue = np.array([caps[k] for k in self.group_of_ue])

        def spare(s):
            mu = np.exp(s)
            t = np.minimum(mu, cap_ue) * self.scale
            return float(np.sum(bandwidth_for_price(inst.rate, t))) - 1.0

        finite = np.isfinite(cap_ue)
        if np.all(finite):
            floor = float(np.sum(bandwidth_for_price(inst.rate, cap_ue * self.scale)))
            if floor >= 1.0:
                self.reason = "spectrum exhausted with every budget binding"
                return None
        lo, hi = 0.0, 0.0
        while spare(hi) > 0:
            hi += 8.0
            if hi > 690:
                self.reason = "spectrum price search diverged"
                return None
        while spare(lo) <= 0:
            lo -= 8.0
            if lo < -690:
                self.reason = "spectrum price search diverged"
                return None
        s = brentq(spare, lo, hi, xtol=XTOL, rtol=4 * np.finfo(float).eps, maxiter=MAX_ITER)
        mu = float(np.exp(s))
        rho_ue = np.minimum(mu, cap_ue)
        y = bandwidth_for_price(inst.rate, rho_ue * self.scale)
        q = received_power(inst.rate, y)
        x = np.zeros((m, n))
        w = np.ones(m)
        capped = []
        for grp in self.groups:
            rho = min(mu, grp.rho_star)
            theta = mu / rho
            for i in grp.bss:
                w[i] = 1.0 if i in self.relaxed else theta * grp.a[i]
                if w[i] > 1.0 + 1e-12:
                    capped.append(i)
            _, xs = self._group_flows(grp, y, q)
            for (i, j), v in xs.items():
                tol = 1e-10 * max(1.0, q[j] / inst.gamma[i, j])
                if v < -tol:
                    self.reason = f"negative split {v:.3g} on link ({i}, {j})"
                    return None
                x[i, j] = max(v, 0.0)
        for j, i in self.single.items():
            x[i, j] = q[j] / inst.gamma[i, j]
        if not np.all(np.isfinite(x)):
            self.reason = "required power overflow"
            return None
        budgets = x.sum(axis=1)
        over = [i for i in range(m) if i not in self.relaxed and budgets[i] > 1.0 + TOL_EQ]
        if over:
            self.reason = f"budget exceeded at BS {over}"
            return None
        return Allocation(x, y, feasible=True, mu=mu, weights=w,
                          info={"capped": tuple(sorted(capped)),
                                "servers": dict(self.servers)})


def _servers_from_assoc(inst: Instance, assoc: Association):
    servers: Dict[int, Tuple[int, ...]] = {j: (i,) for j, i in assoc.single_bs().items()}
    multi = {}
    for j, s in assoc.serving_sets().items():
        s = tuple(i for i in s if inst.gamma[i, j] > 0)
        if not s:
            return None, None
        if len(s) == 1:
            servers[j] = s
        else:
            multi[j] = s
    return servers, multi


def _subsets(s: Tuple[int, ...]):
    for r in range(len(s), 0, -1):
        yield from itertools.combinations(s, r)


def _dual_ok_on(inst: Instance, alloc: Allocation, links) -> bool:
    w, g = alloc.weights, inst.gamma
    for i, j in links:
        served = np.flatnonzero(alloc.x[:, j] > 0)
        if served.size == 0:
            return False
        c = np.min(w[served] / g[served, j])
        if w[i] / g[i, j] < c * (1 - 1e-9):
            return False
    return True


def solve_fixed(fp: FixedAssocProblem) -> Allocation:
    """Minimum total power over the links allowed by ``fp.assoc``.

    Jointly powered candidates may end up served by any non-empty subset of
    their candidate BSs; each pattern is solved through its KKT system and
    the first one whose multipliers also certify the dropped links wins
    (falling back to the cheapest valid pattern).
    """
    inst = fp.inst
    m, n = inst.num_bs, inst.num_ue
    servers, multi = _servers_from_assoc(inst, fp.assoc)
    if servers is None:
        return Allocation.infeasible(m, n, reason="multi-BS UE covered by none of its servers")
    if len(servers) + len(multi) != n:
        raise SolverError("association does not cover every UE")
    best = None
    reasons = []
    jm = sorted(multi)
    for choice in itertools.product(*(list(_subsets(multi[j])) for j in jm)):
        srv = dict(servers)
        srv.update(zip(jm, choice))
        pat = _Pattern(inst, srv, fp.relaxed)
        alloc = pat.solve()
        if alloc is None:
            reasons.append(pat.reason)
            continue
        dropped = [(i, j) for j, c in zip(jm, choice) for i in multi[j] if i not in c]
        if _dual_ok_on(inst, alloc, dropped):
            return alloc
        if best is None or alloc.z < best.z:
            best = alloc
    if best is not None:
        return best
    return Allocation.infeasible(m, n, reason="; ".join(r for r in reasons if r))


def solve_relaxed(fp: FixedAssocProblem, pair: Tuple[int, int]):
    """Solve with one BS of ``pair`` relaxed; also return the pair's power point.

    The point is ``(P_a, P_b)`` with ``P_i`` the total power ratio BS ``i``
    spends.  For an infeasible solve the point is ``None``.
    """
    if len(set(pair) & fp.relaxed) != 1:
        raise ValueError("exactly one BS of the pair must be relaxed")
    alloc = solve_fixed(fp)
    if not alloc.feasible:
        return alloc, None
    p = alloc.x.sum(axis=1)
    return alloc, (float(p[pair[0]]), float(p[pair[1]]))


# --------------------------------------------------------------------------
# certificates


@dataclass(frozen=True)
class KktReport:
    stationarity: float
    complementary_slackness: float
    dual_feasibility: float
    primal: float

    def ok(self, tol: float = 1e-6) -> bool:
        return max(self.stationarity, self.complementary_slackness,
                   self.dual_feasibility, self.primal) < tol


def kkt_residuals(inst: Instance, alloc: Allocation, relaxed: Sequence[int] = (),
                  allowed: Optional[np.ndarray] = None) -> KktReport:
    """KKT residuals of ``alloc`` using its stored multipliers.

    ``allowed`` restricts the dual-feasibility check to a link mask
    (default: every covered link, i.e. the unrestricted problem).
    """
    if alloc.mu is None or alloc.weights is None:
        raise ValueError("allocation carries no multipliers")
    g, x, y, w, mu = inst.gamma, alloc.x, alloc.y, alloc.weights, alloc.mu
    m, n = g.shape
    served = x > 0
    with np.errstate(divide="ignore"):
        price = np.where(g > 0, w[:, None] / np.where(g > 0, g, 1.0), np.inf)
    c = np.array([np.min(price[served[:, j], j]) if served[:, j].any() else np.inf
                  for j in range(n)])
    u = inst.rate * LN2 / y
    fprime = np.expm1(u) - u * np.exp(u)
    stat = float(np.max(np.abs(c * fprime + mu)) / mu)
    lam = w - 1.0
    slack = 1.0 - x.sum(axis=1)
    cs = float(np.max(np.abs(np.where(np.isin(np.arange(m), relaxed), 0.0, lam * slack))))
    mask = (g > 0) if allowed is None else (allowed & (g > 0))
    viol = np.where(mask, (c[None, :] - price) / c[None, :], -np.inf)
    spread = np.where(served, (price - c[None, :]) / c[None, :], 0.0)
    dual = float(max(np.max(viol), np.max(np.abs(spread)), np.max(-lam), 0.0))
    resid = np.sum(g * x, axis=0) - received_power(inst.rate, y)
    primal = float(max(np.max(np.abs(resid) / received_power(inst.rate, y)),
                       abs(y.sum() - 1.0),
                       np.max(np.where(np.isin(np.arange(m), relaxed), 0.0, -slack)),
                       0.0))
    return KktReport(stat, cs, dual, primal)


def is_globally_optimal(inst: Instance, alloc: Allocation, tol: float = 1e-7) -> bool:
    """KKT certificate for the unrestricted problem (the problem is convex)."""
    if not alloc.feasible or alloc.mu is None:
        return False
    return kkt_residuals(inst, alloc).ok(tol)


# --------------------------------------------------------------------------
# feasibility


def _weighted_power(inst: Instance, lam: np.ndarray, allowed: np.ndarray) -> float:
    """Dual function of the min-max problem: least ``sum_i lam_i P_i`` over all allocations."""
    g = inst.gamma
    with np.errstate(divide="ignore", invalid="ignore"):
        price = np.where(allowed, lam[:, None] / np.where(allowed, g, 1.0), np.inf)
    c = price.min(axis=0)
    free = c <= 0
    if np.all(free):
        return 0.0
    cc, rr = c[~free], inst.rate[~free]

    def spare(s):
        return float(np.sum(bandwidth_for_price(rr, np.exp(s) / cc))) - 1.0

    lo, hi = -8.0, 8.0
    while spare(hi) > 0:
        hi += 8.0
    while spare(lo) <= 0:
        lo -= 8.0
    s = brentq(spare, lo, hi, xtol=1e-12, maxiter=MAX_ITER)
    y = bandwidth_for_price(rr, np.exp(s) / cc)
    return float(np.sum(cc * received_power(rr, y)))


def _golden_max(fn, lo: float, hi: float, tol: float, stop_above: float):
    """Maximize a unimodal function; returns ``(arg, value)``.  Stops early above ``stop_above``."""
    invphi = (np.sqrt(5.0) - 1.0) / 2.0
    a, b = lo, hi
    c, d = b - invphi * (b - a), a + invphi * (b - a)
    fc, fd = fn(c), fn(d)
    best = max((fc, c), (fd, d))
    while b - a > tol and best[0] <= stop_above:
        if fc >= fd:
            b, d, fd = d, c, fc
            c = b - invphi * (b - a)
            fc = fn(c)
        else:
            a, c, fc = c, d, fd
            d = a + invphi * (b - a)
            fd = fn(d)
        best = max(best, (fc, c), (fd, d))
    for end in (lo, hi):
        if best[0] <= stop_above:
            best = max(best, (fn(end), end))
    return best[1], best[0]


@dataclass(frozen=True)
class Feasibility:
    feasible: bool
    min_max_power: float
    weights: np.ndarray


def feasibility_probe(inst: Instance, assoc: Optional[Association] = None,
                      tol: float = 1e-9, stop_above: float = np.inf) -> Feasibility:
    """Least achievable maximum per-BS power ratio, via its concave dual.

    The dual of ``min max_i P_i`` is ``max`` over budget weights on the
    simplex of the least weighted power, which is concave; it is maximized
    by nested golden-section searches.  Any weight vector with dual value
    above 1 certifies infeasibility, so ``stop_above`` allows an early exit.
    The instance is feasible iff ``min_max_power <= 1 + TOL_EQ``.
    """
    m = inst.num_bs
    allowed = inst.gamma > 0
    if assoc is not None:
        allowed = np.zeros_like(allowed)
        for j, i in assoc.single_bs().items():
            allowed[i, j] = True
        for j, s in assoc.serving_sets().items():
            allowed[list(s), j] = True
        allowed &= inst.gamma > 0

    def best_over(prefix: List[float], remaining: float):
        k = len(prefix)
        if k == m - 1:
            lam = np.array(prefix + [remaining])
            return lam, _weighted_power(inst, lam, allowed)
        if remaining <= 0:
            lam = np.array(prefix + [0.0] * (m - k))
            return lam, _weighted_power(inst, lam, allowed)
        cache = {}

        def inner(s):
            cache[s] = best_over(prefix + [s], remaining - s)
            return cache[s][1]

        s, val = _golden_max(inner, 0.0, remaining, tol * remaining, stop_above)
        return cache[s][0], val

    lam, val = best_over([], 1.0)
    return Feasibility(bool(val <= 1.0 + TOL_EQ), float(val), lam)
