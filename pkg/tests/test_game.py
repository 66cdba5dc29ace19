import json

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from conftest import start
from mfslq.corpus import corpus_problem
from mfslq.game import (
    Partition,
    distance_to_limit,
    fitted_rate,
    game_convergence_study,
    identity_residual,
    multiperson_game_solve,
    naive_convergence_study,
    naive_partition_rollout,
    uniform_bounds,
)
from mfslq.problem_model import Deterministic, InitialPair, TimeGrid, build_problem
from mfslq.riccati import solve_equilibrium_riccati, solve_precommitted_riccati
from mfslq.simulate import SimConfig, simulate_closed_loop
from mfslq.strategies import naive_gains, precommitted_gains


def test_partition_validation():
    g = TimeGrid(1.0, 10)
    with pytest.raises(ValueError):
        Partition(g, (0, 5))
    with pytest.raises(ValueError):
        Partition(g, (0, 5, 5, 10))
    with pytest.raises(ValueError):
        Partition.uniform(g, 3)
    part = Partition(g, (0, 3, 10))
    assert part.cells == 2
    assert part.mesh == pytest.approx(0.7)


def test_cells_are_right_open_except_the_last():
    part = Partition.uniform(TimeGrid(1.0, 8), 4)
    assert [part.locate_cell(k) for k in range(9)] == [0, 0, 1, 1, 2, 2, 3, 3, 3]
    assert part.anchor_indices().tolist() == [0, 0, 2, 2, 4, 4, 6, 6, 6]
    with pytest.raises(IndexError):
        part.locate_cell(9)


@settings(max_examples=40, deadline=None)
@given(st.integers(2, 60), st.data())
def test_locate_cell_brackets_every_node(N, data):
    inner = data.draw(st.sets(st.integers(1, N - 1), max_size=N - 1))
    part = Partition(TimeGrid(1.0, N), (0, *sorted(inner), N))
    for k in range(N + 1):
        i = part.locate_cell(k)
        lo, hi = part.indices[i], part.indices[i + 1]
        assert lo <= k < hi or (k == hi == N)


def test_single_cell_reduces_to_precommitted(mf2):
    sol = multiperson_game_solve(mf2, Partition(mf2.grid, (0, mf2.grid.N)))
    pre = precommitted_gains(mf2, solve_precommitted_riccati(mf2))
    assert np.array_equal(sol.gains_D.psi, pre.psi)
    assert np.array_equal(sol.gains_D.psi_bar, pre.psi_bar)
    assert np.array_equal(sol.gains_D.psi_tilde, pre.psi_tilde)


@pytest.mark.parametrize("cells", [1, 4, 25])
def test_scalar_problem_is_partition_invariant(cells):
    p = corpus_problem("scalar_plain", 200)
    sol = multiperson_game_solve(p, Partition.uniform(p.grid, cells))
    exact = 1 / (2 - p.grid.nodes)
    for path in sol.paths().values():
        assert np.abs(path.values[:, 0, 0] - exact).max() < 1e-8


def test_identities_and_boundary_matching(mf2):
    for cells in (4, 10, 50):
        part = Partition.uniform(mf2.grid, cells)
        sol = multiperson_game_solve(mf2, part)
        assert sol.identity_residual <= 1e-8
        assert identity_residual(sol) <= sol.identity_residual
        for k in part.indices[1:]:
            assert np.array_equal(sol.P_D[k], sol.Gamma_D[k])
            assert np.array_equal(sol.Pi_D[k], sol.GammaBar_D[k])
            assert np.array_equal(sol.Phi_D[k], sol.GammaTilde_D[k])


def test_ordering(mf2):
    sol = multiperson_game_solve(mf2, Partition.uniform(mf2.grid, 8))
    assert sol.Gamma_D.min_eig() >= -1e-10
    gap = sol.GammaBar_D.values - sol.Gamma_D.values
    assert np.linalg.eigvalsh(gap).min() >= -1e-10


def test_game_convergence_decreases(mf2):
    lim = solve_equilibrium_riccati(mf2)
    parts = [Partition.uniform(mf2.grid, c) for c in (4, 8, 20, 40)]
    rep = game_convergence_study(mf2, parts, lim)
    assert rep.is_monotone()
    assert 0.8 < rep.fitted_rate < 1.2
    assert max(rep.details["identity_residuals"]) <= 1e-8


def test_game_convergence_without_mean_field():
    p = corpus_problem("scalar_noisy", 200)
    lim = solve_equilibrium_riccati(p)
    rep = game_convergence_study(p, [Partition.uniform(p.grid, c) for c in (4, 8, 20)], lim)
    assert max(rep.errors) <= 1e-8


def test_finest_partition_error_is_first_order():
    # one cell per step still freezes the conditional anchor over a step,
    # so the distance to the limit is O(h) rather than at round-off
    errs = []
    for N in (100, 200):
        p = corpus_problem("meanfield_2d", N)
        sol = multiperson_game_solve(p, Partition.uniform(p.grid, N))
        errs.append(distance_to_limit(sol, solve_equilibrium_riccati(p)))
    assert 1.8 < errs[0] / errs[1] < 2.2


def test_meshes_must_decrease(mf2):
    lim = solve_equilibrium_riccati(mf2)
    parts = [Partition.uniform(mf2.grid, c) for c in (8, 4)]
    with pytest.raises(ValueError):
        game_convergence_study(mf2, parts, lim)


def test_uniform_bounds():
    ok, excess = uniform_bounds([2.0, 2.0, 1.99, 2.0, 2.0, 2.0])
    assert ok and excess <= 0
    ok, excess = uniform_bounds([1.0, 1.0, 1.5, 1.6, 1.7, 1.8])
    assert not ok and excess > 0.01


def test_fitted_rate():
    m = [0.25, 0.125, 0.0625]
    assert fitted_rate(m, [3 * x**0.5 for x in m]) == pytest.approx(0.5)


def test_report_files(mf2, tmp_path):
    lim = solve_equilibrium_riccati(mf2)
    rep = game_convergence_study(mf2, [Partition.uniform(mf2.grid, c) for c in (4, 8)], lim)
    rep.write(tmp_path / "game")
    lines = (tmp_path / "game.csv").read_text().splitlines()
    assert lines[0] == "mesh,error" and len(lines) == 3
    doc = json.loads((tmp_path / "game.json").read_text())
    assert doc["fitted_rate"] == rep.fitted_rate and doc["monotone"]


def noise_free():
    c = dict(A=0.2, Abar=0.5, Atilde=0.1, B=1.0, Q=1.0, Qbar=0.6, Qtilde=0.2, R=1.0)
    return build_problem(1, 1, 1.0, 64, c, dict(G=1.0, Gbar=0.3))


def test_noise_free_rollout_is_the_naive_loop():
    p = noise_free()
    ip = InitialPair(0, Deterministic([1.0]))
    ens, u = naive_partition_rollout(p, Partition.uniform(p.grid, 8), ip, SimConfig(paths=2))
    assert np.array_equal(ens.cond_means, ens.states)
    nai = naive_gains(precommitted_gains(p, solve_precommitted_riccati(p)))
    ref = simulate_closed_loop(p, nai, ip, SimConfig(paths=2))
    assert np.abs(ens.states - ref.states).max() < 1e-12
    assert np.abs(u - ref.controls).max() < 1e-12


def test_noise_free_convergence_at_floor():
    p = noise_free()
    ip = InitialPair(0, Deterministic([1.0]))
    parts = [Partition.uniform(p.grid, c) for c in (4, 8, 16)]
    rep = naive_convergence_study(p, parts, ip, SimConfig(paths=2))
    assert max(rep.errors) < 1e-12


def test_single_cell_rollout_is_precommitted(mf1):
    ip = start("scalar_meanfield", True)
    sim = SimConfig(paths=100, seed=3)
    ens, _ = naive_partition_rollout(mf1, Partition(mf1.grid, (0, mf1.grid.N)), ip, sim)
    ref = simulate_closed_loop(mf1, precommitted_gains(mf1, solve_precommitted_riccati(mf1)), ip, sim)
    assert np.array_equal(ens.states, ref.states)


def test_rollout_anchors_restart_at_cells(mf1):
    part = Partition.uniform(mf1.grid, 4)
    ens, _ = naive_partition_rollout(mf1, part, start("scalar_meanfield", True), SimConfig(paths=20))
    for k in part.indices[:-1]:
        assert np.array_equal(ens.cond_means[:, k], ens.states[:, k])


def test_rollout_needs_time_zero(mf1):
    with pytest.raises(ValueError):
        naive_partition_rollout(mf1, Partition.uniform(mf1.grid, 4), start("scalar_meanfield", t=2), SimConfig(paths=2))


def test_naive_errors_stable_under_more_paths():
    p = corpus_problem("scalar_meanfield", 64)
    ip = start("scalar_meanfield", True)
    parts = [Partition.uniform(p.grid, c) for c in (4, 8)]
    a = naive_convergence_study(p, parts, ip, SimConfig(paths=2000, seed=1))
    b = naive_convergence_study(p, parts, ip, SimConfig(paths=4000, seed=2))
    for ea, eb, sa, sb in zip(a.errors, b.errors, a.std_errors, b.std_errors):
        assert abs(ea - eb) <= 3 * np.hypot(sa, sb)
