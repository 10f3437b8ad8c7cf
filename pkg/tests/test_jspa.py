import numpy as np
import pytest

from coopalloc.association import (CcVector, PairOrders, associate, cut_options,
                                   enumerate_associations)
from coopalloc.association import AssociationError, association_violations
from coopalloc.jspa import PairBounds, lemma3_bounds, optimize, optimize_two_bs
from coopalloc.model import Instance, check_feasible
from coopalloc.oracle import brute_force
from coopalloc.solver import FixedAssocProblem, solve_fixed

from conftest import random_instance

# Z values from an independent exponential-cone solve of the same problems
CONIC_REFERENCE = [
    ([[8, 6, 5, 0.5], [1, 2, 3, 4]], [1.2, 1.0, 0.8, 0.3], 1.6485443570067062),
    ([[8, 6, 5, 0.5], [1, 2, 3, 4]], [0.6, 0.6, 0.5, 0.3], 0.5208052958602316),
    ([[2, 1.5, 1], [1, 1, 3], [0.5, 2, 1]], [0.5, 0.4, 0.6], 0.7890447913618975),
    ([[5, 4, 1], [1, 2, 4], [2, 3, 2]], [0.9, 0.9, 0.8], 1.1758840650910296),
    ([[4, 1, 2], [1, 4, 2]], [0.3, 0.4, 0.5], 0.45455912453152314),
]


@pytest.mark.parametrize("gamma, rate, z_ref", CONIC_REFERENCE)
def test_matches_conic_reference(gamma, rate, z_ref):
    a = optimize(Instance(gamma, rate))
    assert a.feasible
    assert a.z == pytest.approx(z_ref, rel=1e-6)


def test_infeasible_reported():
    a = optimize(Instance([[8, 6, 5, 0.5], [1, 2, 3, 4]], [1.4, 1.2, 0.9, 0.3]))
    assert not a.feasible


def test_single_ue_best_bs_alone():
    inst = Instance([[3.0], [1.0]], [1.0])
    a = optimize_two_bs(inst)
    assert a.z == pytest.approx((2 ** 1.0 - 1) / 3.0)
    assert a.x[1, 0] == 0.0


def test_only_covering_bs_serves():
    inst = Instance([[0.0], [2.0], [0.0]], [0.5])
    a = optimize(inst)
    assert a.z == pytest.approx((2 ** 0.5 - 1) / 2.0)
    assert a.x[1, 0] > 0 and a.x[0, 0] == 0 and a.x[2, 0] == 0


def test_one_bs_dispatch():
    inst = Instance([[2.0, 5.0]], [0.5, 0.3])
    a = optimize(inst)
    assert a.feasible and a.info["n_solved"] == 1


def test_neither_over_budget_keeps_best_bs_cut():
    inst = Instance([[5.0, 4.0, 1.0, 0.5], [1.0, 2.0, 3.0, 4.0]], np.full(4, 0.1))
    b = lemma3_bounds(inst, (0, 1))
    assert b.lo == b.hi == b.initial == 2
    assert b.case in ("optimal", "neither_over")


def test_first_bs_overloaded_range_contains_optimum():
    inst = Instance([[8, 6, 5, 0.5], [1, 2, 3, 4]], [1.2, 1.0, 0.8, 0.3])
    b = lemma3_bounds(inst, (0, 1))
    assert b.case == "first_over"
    assert b.hi == b.initial == 3
    o = PairOrders.of(inst)
    zs = {}
    for cut in cut_options(4):
        cc = CcVector(2, (cut,))
        try:
            assoc = associate(inst, cc, o)
        except AssociationError:
            continue
        if cc.num_shared(o) > 1 or association_violations(inst, assoc, cc, o):
            continue
        a = solve_fixed(FixedAssocProblem(inst, assoc))
        if a.feasible:
            zs[cut] = a.z
    best = min(zs.values())
    winners = {c for c, z in zs.items() if z <= best * (1 + 1e-9)}
    assert winners & set(b.candidates(4))


def test_pair_bounds_validation():
    with pytest.raises(ValueError):
        PairBounds((0, 1), 3, 1, "both_over", 2)
    assert PairBounds((0, 1), 2, 1, "both_over", 2).lo == 2
    assert PairBounds((0, 1), 1, 2, "both_over", 1).candidates(3) == [
        (1, False), (1, True), (2, False), (2, True), (3, True)]


def test_two_bs_entry_points_agree(rng):
    for _ in range(10):
        inst = random_instance(rng, 2, 5, rate_hi=2.0)
        a, b = optimize(inst), optimize_two_bs(inst)
        assert a.feasible == b.feasible
        np.testing.assert_array_equal(a.x, b.x)
        np.testing.assert_array_equal(a.y, b.y)


def test_never_worse_than_any_association(rng):
    for _ in range(6):
        inst = random_instance(rng, 3, 3)
        best = optimize(inst)
        for _, assoc in enumerate_associations(inst):
            a = solve_fixed(FixedAssocProblem(inst, assoc))
            if a.feasible:
                assert best.feasible and best.z <= a.z * (1 + 1e-9)


@pytest.mark.parametrize("m, n", [(2, 4), (3, 3), (3, 4)])
def test_matches_brute_force(m, n):
    rng = np.random.default_rng(100 * m + n)
    for _ in range(5):
        inst = random_instance(rng, m, n)
        a, b = optimize(inst), brute_force(inst, cross_check=False)
        assert a.feasible == b.feasible
        if a.feasible:
            assert check_feasible(inst, a)
            assert a.z == pytest.approx(b.z, rel=1e-6)


def test_z_non_decreasing_in_demand_scale(rng):
    inst = random_instance(rng, 3, 4)
    zs = []
    for eps in np.linspace(0.2, 1.0, 9):
        a = optimize(inst.scaled(eps))
        if not a.feasible:
            break
        zs.append(a.z)
    assert len(zs) >= 2
    assert np.all(np.diff(zs) >= -1e-12)


def test_context_cap_still_exact(rng):
    for _ in range(4):
        inst = random_instance(rng, 3, 4, rate_hi=2.0)
        a, b = optimize(inst, max_contexts=1), optimize(inst)
        assert a.feasible == b.feasible
        if a.feasible:
            assert a.z == pytest.approx(b.z, rel=1e-9)


def test_three_bs_snapshot_certified_without_widening():
    # a snapshot whose optimum needs a UE to pass a BS blocked by one cut only
    from coopalloc.harness import Scenario, generate_snapshot, snapshot_rng
    snap = generate_snapshot(Scenario(num_bs=3, num_ue=20), snapshot_rng(2024, 1))
    a = optimize(Instance(snap.instance.gamma, 1.2 * snap.demand_base))
    assert a.info["certified"] and not a.info.get("widened", False)
    # independent exponential-cone solve
    assert a.z == pytest.approx(2.677091360180024, rel=1e-6)
