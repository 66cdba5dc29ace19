"""Numerical certificates for a two-dimensional mean-field problem.

Run: python3 demos/03_certificates.py
"""
import numpy as np

from mfslq import InitialPair, SimConfig, Partition
from mfslq import riccati, strategies, verify
from mfslq.corpus import corpus_initial, corpus_problem
from mfslq.game import multiperson_game_solve
from mfslq.simulate import AffineControl, simulate_closed_loop

p = corpus_problem("meanfield_2d", 400)
xi = corpus_initial("meanfield_2d", gaussian=True)
ip = InitialPair(0, xi)
sim = SimConfig(paths=5000, seed=5)
tri = riccati.solve_precommitted_riccati(p)
eqt = riccati.solve_equilibrium_riccati(p)
pre = strategies.precommitted_gains(p, tri)
ens = simulate_closed_loop(p, pre, ip, sim)

reports = [verify.check_stationarity(p, tri, ens)]

for i, v in enumerate(verify.random_perturbations(0, p.m, 3, horizon=1.0)):
    r = verify.check_convexity_perturbation(p, 0, xi, [-1, -0.5, 0.5, 1], v, sim, tri, base=ens)
    r.name = f"convexity_{i}"
    reports.append(r)

inp = riccati.closed_loop_lyapunov_input(p, *strategies.loop_gains(p, pre, 0))
reports.append(verify.check_representation(p, inp, ip, sim))

g = strategies.equilibrium_gains(p, eqt)
t = 100
cands = [verify.equilibrium_control_at(g, t), AffineControl(g.psi[t] + np.eye(2), g.psi_tilde[t], np.ones(2))]
reports.append(verify.check_equilibrium_local_optimality(p, eqt, t, cands, [0.02, 0.01, 0.005], sim, ip))

reports.append(verify.check_game_identities(multiperson_game_solve(p, Partition.uniform(p.grid, 8))))

for r in reports:
    side = ">= -" if r.one_sided else "<= "
    print(f"{'ok  ' if r.passed else 'FAIL'} {r.name:30s} {r.statistic: .3e}  ({side}{r.threshold:.1e})")
