"""Solve one small instance and look at what the optimum is made of.

Two BSs, four UEs.  BS 0 is strong for the first three UEs but their demand
would exceed its budget, so part of the load moves to BS 1 and one UE ends
up powered by both.
"""

import numpy as np

from coopalloc.jspa import optimize
from coopalloc.model import Instance, evaluate
from coopalloc.oracle import certify

np.set_printoptions(precision=4, suppress=True)

inst = Instance(gamma=[[8, 6, 5, 0.5],
                       [1, 2, 3, 4]],
                rate=[1.2, 1.0, 0.8, 0.3])

alloc = optimize(inst)
print("feasible:", alloc.feasible)
print("Z =", alloc.z)
print("power ratios x:\n", alloc.x)
print("bandwidth ratios y:", alloc.y)
print("per-BS power:", alloc.x.sum(axis=1))

# multipliers: mu prices spectrum, weights[i] = 1 + lambda_i prices BS i's budget
print("spectrum price mu =", alloc.mu)
print("budget prices w =", alloc.weights, "-> binding BSs", alloc.info["capped"])

rep = evaluate(inst, alloc)
print("max rate residual:", np.max(np.abs(rep.rate_residuals)))

cert = certify(inst, alloc)
print("structure ok:", cert.lemma1_ok, "| cut-consistent:", cert.lemma2_ok,
      "| no improving shift:", cert.no_improving_shift, "| KKT:", cert.kkt_ok)

# raising demand eventually makes the instance infeasible
for eps in (1.0, 1.05, 1.1, 1.2):
    a = optimize(inst.scaled(eps))
    print(f"eps={eps:4.2f}:", f"Z={a.z:.6f}" if a.feasible else "infeasible")
