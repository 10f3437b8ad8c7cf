"""Cut ranges for two BSs on simulated snapshots.

UEs are ranked by their SNR ratio between the two BSs.  An optimal
association splits this ranking at one cut, possibly sharing the UE at
the cut.  Two relaxed solves (each BS alone given an unlimited budget)
bound where that cut can be, so only a handful of the 2N + 1 possible
cuts need solving.
"""

import numpy as np

from coopalloc.harness import Scenario, generate_snapshot, snapshot_rng
from coopalloc.jspa import lemma3_bounds, optimize
from coopalloc.model import Instance

sc = Scenario(num_bs=2, num_ue=20)
full = 2 * sc.num_ue + 1
for k in range(5):
    snap = generate_snapshot(sc, snapshot_rng(0, k))
    for eps in (0.8, 1.2):
        inst = Instance(snap.instance.gamma, eps * snap.demand_base)
        b = lemma3_bounds(inst, (0, 1))
        a = optimize(inst)
        z = f"{a.z:.4f}" if a.feasible else "infeasible"
        print(f"snapshot {k} eps={eps}: case={b.case:13s} best-BS cut={b.initial:2d} "
              f"range=[{b.lo:2d},{b.hi:2d}] candidates={len(b.candidates(sc.num_ue)):2d}/{full} "
              f"solved={a.info['n_solved']:2d} Z={z}")
