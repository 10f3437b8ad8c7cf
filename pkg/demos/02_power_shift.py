"""Power shifting: why optimal allocations are sparse.

Start from an allocation where every BS powers every UE at equal bandwidth.
Each cycle in the support can shift power around while every UE keeps its
received power; one direction never costs power.  Repeating until the
support is a forest gives a cheaper allocation with at most M + N - 1
positive entries.
"""

import numpy as np

from coopalloc.model import Allocation, Instance, evaluate
from coopalloc.oracle import apply_shift, find_improving_shift

np.set_printoptions(precision=4, suppress=True)
rng = np.random.default_rng(3)

gamma = rng.uniform(0.5, 5.0, (3, 5))
x = np.full((3, 5), 0.1)
y = np.full(5, 0.2)
# demands chosen so that this dense allocation meets them exactly
rate = y * np.log2(1 + (gamma * x).sum(axis=0) / y)
inst = Instance(gamma, rate)
alloc = Allocation(x, y, True)

print("start: Z =", alloc.z, "positive entries:", int(np.sum(alloc.x > 0)))
step = 0
while (cyc := find_improving_shift(inst, alloc)) is not None:
    alloc = apply_shift(alloc, cyc)
    step += 1
    print(f"step {step}: cycle of {len(cyc.cells)} cells, gain ratio {cyc.gain_ratio:.3f}, "
          f"Z = {alloc.z:.5f}, positive entries {int(np.sum(alloc.x > 1e-12))}")

print("final x:\n", alloc.x)
print("rate residuals:", evaluate(inst, alloc).rate_residuals)
