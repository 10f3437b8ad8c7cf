import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from coopalloc.association import (Association, CcVector, PairOrders, associate,
                                   association_violations, cut_options, enumerate_associations,
                                   initial_clusters, snr_ratio)
from coopalloc.model import Instance

from conftest import random_instance


def test_snr_ratio():
    inst = Instance([[2.0, 1.0, 0.0], [4.0, 0.0, 1.0]], [0.1, 0.1, 0.1])
    assert snr_ratio(inst, 0, 1, 0) == 0.5
    assert snr_ratio(inst, 0, 1, 1) == np.inf
    assert snr_ratio(inst, 0, 1, 2) == 0.0


def test_order_breaks_ties_by_index():
    inst = Instance([[2.0, 1.0, 2.0, 3.0], [1.0, 1.0, 1.0, 1.0]], np.full(4, 0.1))
    o = PairOrders.of(inst)
    assert o.order[0, 1].tolist() == [3, 0, 2, 1]
    assert o.pos[0, 1].tolist() == [2, 4, 3, 1]


def test_initial_clusters_tie_goes_to_lowest_bs():
    inst = Instance([[1.0, 2.0, 3.0], [1.0, 5.0, 1.0]], np.full(3, 0.1))
    assert initial_clusters(inst) == (frozenset({0, 2}), frozenset({1}))


def test_best_bs_cut_reproduces_initial_clusters():
    inst = Instance([[5.0, 1.0, 3.0, 0.5], [1.0, 4.0, 2.0, 2.0]], np.full(4, 0.1))
    o = PairOrders.of(inst)
    c = o.initial_cut((0, 1), initial_clusters(inst))
    assert c == 2
    a = associate(inst, CcVector(2, ((c, False),)), o)
    assert a.clusters == initial_clusters(inst)
    assert a.multi == (frozenset(), frozenset())


def test_shared_cut_marks_boundary_ue():
    inst = Instance([[5.0, 1.0, 3.0, 0.5], [1.0, 4.0, 2.0, 2.0]], np.full(4, 0.1))
    o = PairOrders.of(inst)
    # position 2 in the ratio order is UE 2
    a = associate(inst, CcVector(2, ((2, True),)), o)
    assert a.serving_sets() == {2: (0, 1)}
    assert a.clusters == (frozenset({0}), frozenset({1, 3}))
    assert association_violations(inst, a, CcVector(2, ((2, True),)), o) == []


def test_cut_options_count_and_order():
    opts = cut_options(3, first=2)
    assert len(opts) == 2 * 3 + 1
    assert opts[0] == (2, False)
    assert len(set(opts)) == len(opts)


def test_two_bs_enumeration_covers_every_cut(rng):
    inst = random_instance(rng, 2, 4)
    found = [cc.entries[0] for cc, _ in enumerate_associations(inst)]
    assert sorted(found) == sorted(cut_options(4))


def test_from_support():
    inst = Instance([[1.0, 1.0, 1.0], [1.0, 1.0, 1.0]], np.full(3, 0.1))
    sup = np.array([[True, True, False], [False, True, True]])
    a = Association.from_support(inst, sup)
    assert a.clusters == (frozenset({0}), frozenset({2}))
    assert a.serving_sets() == {1: (0, 1)}


def test_violations_detect_overlap():
    inst = Instance([[1.0, 2.0], [2.0, 1.0]], np.full(2, 0.1))
    bad = Association((frozenset({0}), frozenset({0, 1})), (frozenset(), frozenset()),
                      initial_clusters(inst))
    assert association_violations(inst, bad)


@settings(max_examples=40, deadline=None)
@given(seed=st.integers(0, 2**31), m=st.integers(2, 3), n=st.integers(1, 4))
def test_enumerated_associations_are_partitions(seed, m, n):
    inst = random_instance(np.random.default_rng(seed), m, n)
    o = PairOrders.of(inst)
    count = 0
    for cc, a in enumerate_associations(inst, orders=o):
        count += 1
        covered = set().union(*a.clusters) | set(a.serving_sets())
        assert covered == set(range(n))
        assert len(a.serving_sets()) <= m - 1
        assert cc.num_shared(o) <= m - 1
    assert count >= 1


def test_associate_rejects_wrong_size():
    inst = Instance([[1.0]], [0.1])
    with pytest.raises(ValueError):
        associate(inst, CcVector(2, ((0, False),)))
