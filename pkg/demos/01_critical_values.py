"""Critical values: exact range law versus Monte Carlo.

For the unweighted E detector in one dimension the limit law is the range
of a Brownian motion, whose distribution function is an alternating series.
Everything else is simulated. This script compares the two routes and then
prints a small table of simulated quantiles.

Run:  python3 demos/01_critical_values.py
"""

import numpy as np

from openend.limits import LimitSpec, MCSettings, borodin_quantile, empirical_quantile, simulate_limit

mc = MCSettings(runs=4000, grid=2000, seed=1)

print("Exact versus simulated quantiles of the range (E, gamma = 0, p = 1)")
sample = simulate_limit(LimitSpec("E"), mc)
for alpha in (0.1, 0.05, 0.01):
    exact = borodin_quantile(1 - alpha)
    sim = empirical_quantile(sample, alpha)
    print(f"  alpha={alpha:<5} exact {exact:.4f}  simulated {sim:.4f}")

# the discretised supremum misses excursions between grid nodes, so the
# simulated quantiles sit slightly below the exact ones
print()
print("Simulated 95% quantiles (open end)")
print("  p  gamma     E       Q       P")
for p in (1, 2):
    for gamma in (0.0, 0.25, 0.45):
        row = [empirical_quantile(simulate_limit(LimitSpec(k, gamma, p), mc), 0.05) for k in "EQP"]
        print(f"  {p}  {gamma:<5} " + "  ".join(f"{v:.4f}" for v in row))

print()
print("A finite horizon of T*m observations lowers every quantile:")
for T in (1.0, 4.0, np.inf):
    print(f"  T={T:<4} E 95% = {borodin_quantile(0.95, T):.4f}")
