"""Acceptance suite: one test per criterion, each reporting a PASS/FAIL line.

Run alone with ``pytest tests/test_acceptance.py -v``; the summary lines are
printed in the terminal summary section ("acceptance criteria").
"""

import os
import time

import numpy as np
import pytest

from coopalloc.association import (AssociationError, CcVector, PairOrders, associate,
                                   association_violations, cut_options, enumerate_associations,
                                   initial_clusters)
from coopalloc.association import Association
from coopalloc.cli import main as cli_main
from coopalloc.harness import Scenario, generate_snapshot, run_monte_carlo, snapshot_rng
from coopalloc.jspa import lemma3_bounds, optimize
from coopalloc.model import Allocation, Instance, evaluate, received_power
from coopalloc.oracle import apply_shift, brute_force, certify, find_improving_shift, structure_ok
from coopalloc.solver import FixedAssocProblem, kkt_residuals, solve_fixed

from conftest import random_instance

BATCH = 200
SIM_EPS = (0.2, 0.4, 0.6, 0.8, 1.0, 1.2, 1.4, 1.6)


def _report(lines, k, ok, text):
    line = f"criterion {k}: {'PASS' if ok else 'FAIL'} - {text}"
    lines.append(line)
    print(line)


@pytest.fixture(scope="module")
def batch():
    """Feasible random instances with M in {2, 3} and N in 2..5, solved both ways."""
    rng = np.random.default_rng(7100)
    out = []
    t_jspa = 0.0
    while len(out) < BATCH:
        m = int(rng.integers(2, 4))
        n = int(rng.integers(2, 6))
        inst = random_instance(rng, m, n, rate_hi=1.8)
        ref = brute_force(inst, cross_check=False)
        if not ref.feasible:
            continue
        t0 = time.perf_counter()
        got = optimize(inst)
        t_jspa += time.perf_counter() - t0
        out.append((inst, got, ref))
    return out, t_jspa


def test_criterion_1_oracle_equivalence(batch, acceptance_report):
    items, t_jspa = batch
    bad = [k for k, (_, a, b) in enumerate(items)
           if not a.feasible or abs(a.z - b.z) > 1e-6 * b.z]
    ok = not bad and t_jspa < 300
    _report(acceptance_report, 1, ok,
            f"{len(items) - len(bad)}/{len(items)} instances match brute force within 1e-6; "
            f"optimizer time {t_jspa:.1f}s")
    assert ok


def test_criterion_2_lemma1_structure(batch, acceptance_report):
    items, _ = batch
    bad = [k for k, (_, a, _) in enumerate(items) if a.feasible and not structure_ok(a.x)[0]]
    _report(acceptance_report, 2, not bad,
            f"{len(items) - len(bad)}/{len(items)} outputs have <= M-1 shared UEs and "
            f">= (M-1)(N-1) zeros")
    assert not bad


def test_criterion_3_lemma2_structure(batch, acceptance_report):
    items, _ = batch
    bad = [k for k, (inst, a, _) in enumerate(items) if not certify(inst, a).lemma2_ok]
    _report(acceptance_report, 3, not bad,
            f"{len(items) - len(bad)}/{len(items)} optima admit a consistent CC vector")
    assert not bad


def _optimal_cuts(inst):
    o = PairOrders.of(inst)
    zs = {}
    for cut in cut_options(inst.num_ue):
        cc = CcVector(2, (cut,))
        if cc.num_shared(o) > 1:
            continue
        try:
            assoc = associate(inst, cc, o)
        except AssociationError:
            continue
        if association_violations(inst, assoc, cc, o):
            continue
        a = solve_fixed(FixedAssocProblem(inst, assoc))
        if a.feasible:
            zs[cut] = a.z
    best = min(zs.values())
    return {c for c, z in zs.items() if z <= best * (1 + 1e-9)}


def test_criterion_4_lemma3_soundness_and_pruning(batch, acceptance_report):
    items, _ = batch
    two = [inst for inst, _, _ in items if inst.num_bs == 2]
    unsound = 0
    for inst in two:
        b = lemma3_bounds(inst, (0, 1))
        if not _optimal_cuts(inst) & set(b.candidates(inst.num_ue)):
            unsound += 1
    # pruning on N = 20 snapshots over the simulated demand range
    sc = Scenario(num_bs=2, num_ue=20)
    full = 2 * sc.num_ue + 1
    in_range, solved = [], []
    for k in range(40):
        snap = generate_snapshot(sc, snapshot_rng(11, k))
        for eps in SIM_EPS:
            inst = Instance(snap.instance.gamma, eps * snap.demand_base)
            b = lemma3_bounds(inst, (0, 1))
            a = optimize(inst)
            if not a.feasible:
                continue
            in_range.append(len(b.candidates(inst.num_ue)))
            solved.append(a.info["n_solved"])
    cut = 1.0 - np.mean(in_range) / full
    cut_solved = 1.0 - np.mean(solved) / full
    ok = unsound == 0 and cut >= 0.30
    _report(acceptance_report, 4, ok,
            f"{len(two) - unsound}/{len(two)} two-BS optima inside [lo, hi]; range keeps "
            f"{np.mean(in_range):.1f}/{full} cut candidates ({100 * cut:.0f}% pruned), "
            f"{np.mean(solved):.1f} solved with early stopping ({100 * cut_solved:.0f}% pruned)")
    assert ok


def _perturb(inst, alloc, rng):
    """Re-split two UEs' received power over two BSs so a full 2x2 block is positive."""
    m, n = inst.gamma.shape
    i, k = rng.choice(m, 2, replace=False)
    j1, j2 = rng.choice(n, 2, replace=False)
    x = np.array(alloc.x)
    q = received_power(inst.rate, alloc.y)
    for j in (j1, j2):
        alpha = rng.uniform(0.2, 0.8)
        x[:, j] = 0.0
        x[i, j] = alpha * q[j] / inst.gamma[i, j]
        x[k, j] = (1 - alpha) * q[j] / inst.gamma[k, j]
    return Allocation(x, alloc.y, True)


def test_criterion_5_power_shift(batch, acceptance_report):
    items, _ = batch
    rng = np.random.default_rng(55)
    shift_on_optimum = sum(find_improving_shift(inst, a) is not None for inst, a, _ in items)
    tried = found = 0
    worst_resid = 0.0
    z_up = 0
    for inst, a, _ in items:
        if np.any(inst.gamma == 0):
            continue
        p = _perturb(inst, a, rng)
        tried += 1
        cyc = find_improving_shift(inst, p)
        if cyc is None or cyc.gain_ratio <= 1.0:
            continue
        found += 1
        before = evaluate(inst, p).rate_residuals
        q = apply_shift(p, cyc)
        worst_resid = max(worst_resid, float(np.max(np.abs(evaluate(inst, q).rate_residuals - before))))
        z_up += q.z > p.z
    rate = found / tried
    ok = shift_on_optimum == 0 and rate >= 0.95 and worst_resid < 1e-9 and z_up == 0
    _report(acceptance_report, 5, ok,
            f"shifts on optima: {shift_on_optimum}; improving cycle on {found}/{tried} "
            f"perturbed allocations; max residual drift {worst_resid:.1e}; Z increases: {z_up}")
    assert ok


def test_criterion_6_kkt_and_grid(batch, acceptance_report):
    items, _ = batch
    worst, count = 0.0, 0
    for inst, _, _ in items[:60]:
        seen = set()
        for _, assoc in enumerate_associations(inst):
            if assoc.key in seen:
                continue
            seen.add(assoc.key)
            a = solve_fixed(FixedAssocProblem(inst, assoc))
            if not a.feasible:
                continue
            rep = kkt_residuals(inst, a, allowed=a.x > 0)
            worst = max(worst, rep.stationarity, rep.complementary_slackness)
            count += 1
    rng = np.random.default_rng(66)
    grid = np.arange(1, 100000) * 1e-5
    worst_y = 0.0
    for _ in range(10):
        inst = Instance(rng.uniform(0.5, 20.0, (1, 2)), rng.uniform(0.05, 0.6, 2))
        assoc = Association((frozenset({0, 1}),), (frozenset(),), initial_clusters(inst))
        a = solve_fixed(FixedAssocProblem(inst, assoc))
        z = (received_power(inst.rate[0], grid) / inst.gamma[0, 0]
             + received_power(inst.rate[1], 1 - grid) / inst.gamma[0, 1])
        worst_y = max(worst_y, abs(a.y[0] - grid[np.argmin(z)]))
    ok = worst < 1e-6 and worst_y < 1e-4
    _report(acceptance_report, 6, ok,
            f"max stationarity/slackness residual {worst:.1e} over {count} fixed solves; "
            f"max |Y - grid argmin| {worst_y:.1e} on M=1, N=2")
    assert ok


def test_criterion_7_simulation_trends(tmp_path_factory, acceptance_report):
    workers = os.cpu_count() or 1
    t0 = time.perf_counter()
    checks = {}
    for m in (2, 3):
        sc = Scenario(num_bs=m, num_ue=20, snapshots=200, seed=2024)
        res = run_monte_carlo(sc, SIM_EPS, workers=workers)
        z_j, z_m = res.column("jspa", "mean_z"), res.column("jmpc", "mean_z")
        l_j, l_m = res.column("jspa", "loss_rate"), res.column("jmpc", "loss_rate")
        both = np.isfinite(z_j) & np.isfinite(z_m)
        eps = np.array(SIM_EPS)
        checks[m] = {
            "a": bool(np.all(z_j[both] <= z_m[both] + 1e-12)),
            "b": bool(np.all(l_j[eps <= 1.0] == 0.0)),
            "c": bool(np.all(np.diff(l_j) >= 0) and np.all(np.diff(l_m) >= 0)),
            "d": bool(np.all(l_j <= l_m)),
            "loss": l_j.tolist(),
        }
    elapsed = time.perf_counter() - t0
    ok = all(all(v for k, v in c.items() if k != "loss") for c in checks.values()) \
        and elapsed < 900
    detail = "; ".join(f"M={m}: " + ",".join(f"{k}={'ok' if c[k] else 'X'}" for k in "abcd")
                       + f" jspa loss {[round(v, 3) for v in c['loss']]}"
                       for m, c in checks.items())
    _report(acceptance_report, 7, ok, f"{detail}; {elapsed:.0f}s on {workers} worker(s)")
    assert ok


def test_criterion_8_determinism(tmp_path, acceptance_report):
    outs = []
    for k in range(2):
        p = tmp_path / f"run{k}.csv"
        rc = cli_main(["sim", "--bs", "2", "--ue", "8", "--epsilon", "0.6,1.2,1.6",
                       "--snapshots", "20", "--seed", "77", "--out", str(p)])
        assert rc == 0
        outs.append(p.read_bytes())
    ok = outs[0] == outs[1]
    _report(acceptance_report, 8, ok, f"two CLI runs produce {'identical' if ok else 'different'} "
            f"CSV bytes ({len(outs[0])} bytes)")
    assert ok
