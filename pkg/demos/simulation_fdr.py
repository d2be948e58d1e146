"""
Empirical FDR and power across effect strengths, with and without the bias
correction, on the S0/C0 benchmark with 20% differential taxa.

    python3 demos/simulation_fdr.py [replicates]
"""

import sys

from linda.simulate import MU_GRID, SimConfig, run_replications

reps = int(sys.argv[1]) if len(sys.argv) > 1 else 20
print(f"{'mu':>5} {'FDR on':>8} {'TPR on':>8} {'FDR off':>8} {'TPR off':>8}")
for k, mu in enumerate(MU_GRID, start=1):
    cfg = SimConfig(m=200, n=50, gamma=0.2, mu_index=k, replicates=reps, seed=1)
    on = run_replications(cfg, bias=True)
    off = run_replications(cfg, bias=False)
    print(f"{mu:5.2f} {on.fdr_mean:8.3f} {on.tpr_mean:8.3f} {off.fdr_mean:8.3f} "
          f"{off.tpr_mean:8.3f}")
