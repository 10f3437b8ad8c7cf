"""A small Monte-Carlo comparison of JSPA, equal-bandwidth JMPC and ESP.

Demands are a multiple eps of what equal spectrum and equal power would
deliver, so every snapshot is feasible for eps <= 1.  The table is the
same one ``coopalloc sim`` writes.
"""

import sys

from coopalloc.harness import Scenario, emit, run_monte_carlo

sc = Scenario(num_bs=2, num_ue=10, snapshots=30, seed=1)
res = run_monte_carlo(sc, [0.4, 0.8, 1.0, 1.2, 1.4])
print(f"{'eps':>5} {'algo':>5} {'mean Z':>10} {'ci95':>9} {'loss':>6}")
for r in res.rows():
    print(f"{r['epsilon']:5.2f} {r['algo']:>5} {r['mean_z']:10.5f} {r['ci95']:9.5f} "
          f"{r['loss_rate']:6.2f}")

out = sys.argv[1] if len(sys.argv) > 1 else "mc_demo.csv"
emit(res, out)
print("table written to", out)
