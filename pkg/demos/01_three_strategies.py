"""Pre-committed, naive and equilibrium feedback on a mean-field problem.

Run: python3 demos/01_three_strategies.py
"""
import numpy as np

from mfslq import (
    InitialPair,
    SimConfig,
    closed_loop_cost_quadratic,
    equilibrium_gains,
    estimate_cost,
    naive_gains,
    precommitted_gains,
    simulate_closed_loop,
    solve_equilibrium_riccati,
    solve_precommitted_riccati,
)
from mfslq.corpus import corpus_initial, corpus_problem
from mfslq.strategies import gain_difference_report

p = corpus_problem("scalar_meanfield", 400)
xi = corpus_initial("scalar_meanfield", gaussian=True)
tri = solve_precommitted_riccati(p)
eqt = solve_equilibrium_riccati(p)

pre = precommitted_gains(p, tri, 0)
naive = naive_gains(pre)
eq = equilibrium_gains(p, eqt)

print("gains at s = 0, 0.5, 1")
for name, g in (("pre-committed", pre), ("naive", naive), ("equilibrium", eq)):
    ks = [0, 200, 400]
    print(f"  {name:14s} psi={np.round(g.psi[ks, 0, 0], 4)}  psi_bar={np.round(g.psi_bar[ks, 0, 0], 4)}")

# naive and equilibrium come from different Riccati systems once E_t terms are present
print("naive vs equilibrium:", gain_difference_report(naive, eq))

ip = InitialPair(0, xi)
sim = SimConfig(paths=20_000, seed=1)
print("\ncost from (0, xi): analytic and Monte Carlo")
for name, g in (("pre-committed", pre), ("naive", naive), ("equilibrium", eq)):
    exact = closed_loop_cost_quadratic(p, g, ip)
    mc = estimate_cost(p, simulate_closed_loop(p, g, ip, sim))
    print(f"  {name:14s} {exact:.5f}   {mc.value:.5f} +- {mc.std_error:.5f}")

# the plan made at 0 is not the plan one would make at 0.5:
# re-committing at t moves the conditional anchor, so the realized
# controls differ even though the gain values are shared
t = 200
later = precommitted_gains(p, tri, t)
X = np.array([[1.3]])
m = np.array([1.0])
anchored_at_0 = pre.psi[t] @ X[0] + pre.psi_bar[t] @ np.array([0.9]) + pre.psi_tilde[t] @ m
anchored_at_t = later.psi[t] @ X[0] + later.psi_bar[t] @ X[0] + later.psi_tilde[t] @ m
print(f"\nat s=0.5 with X=1.3, E_0[X]=0.9: plan from 0 gives u={anchored_at_0[0]:.4f}, fresh plan gives u={anchored_at_t[0]:.4f}")
