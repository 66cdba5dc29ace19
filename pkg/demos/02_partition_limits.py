"""Partition constructions approaching their limits.

The multi-person game on finer partitions approaches the equilibrium
Riccati solution; the re-committing rollout approaches the naive loop.

Run: python3 demos/02_partition_limits.py
"""
from mfslq import InitialPair, Partition, SimConfig, solve_equilibrium_riccati
from mfslq.corpus import corpus_initial, corpus_problem
from mfslq.game import game_convergence_study, naive_convergence_study

p = corpus_problem("meanfield_2d", 512)
parts = [Partition.uniform(p.grid, c) for c in (2, 4, 8, 16, 32, 64)]
rep = game_convergence_study(p, parts, solve_equilibrium_riccati(p))
print("game: mesh, sup distance to equilibrium, identity residual")
for h, e, r in zip(rep.meshes, rep.errors, rep.details["identity_residuals"]):
    print(f"  {h:8.5f}  {e:.3e}  {r:.1e}")
print(f"  fitted rate {rep.fitted_rate:.3f}")

q = corpus_problem("scalar_meanfield", 256)
parts = [Partition.uniform(q.grid, c) for c in (4, 8, 16, 32, 64)]
ip = InitialPair(0, corpus_initial("scalar_meanfield", gaussian=True))
rep = naive_convergence_study(q, parts, ip, SimConfig(paths=5000, seed=3))
print("\nnaive rollout: mesh, L2 control distance +- se")
for h, e, s in zip(rep.meshes, rep.errors, rep.std_errors):
    print(f"  {h:8.5f}  {e:.4f} +- {s:.4f}")
print(f"  fitted rate {rep.fitted_rate:.3f} (square-root order expected)")
