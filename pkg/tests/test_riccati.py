import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from scipy.integrate import solve_ivp

from mfslq._linalg import FactorizationError, spd_solve
from mfslq.corpus import corpus_problem
from mfslq.problem_model import Deterministic, Gaussian, InitialPair, build_problem
from mfslq.riccati import (
    IntegrationError,
    LyapunovInput,
    closed_loop_cost_quadratic,
    closed_loop_lyapunov_input,
    integrate_backward_matrix_ode,
    read_matrix_path_csv,
    solve_equilibrium_riccati,
    solve_lyapunov_quadruple,
    solve_precommitted_riccati,
    write_matrix_path_csv,
)
from mfslq.strategies import precommitted_gains


def exact_scalar(s):
    return 1.0 / (2.0 - s)


def test_scalar_riccati_matches_closed_form(scalar_plain):
    tri = solve_precommitted_riccati(scalar_plain)
    s = scalar_plain.grid.nodes
    err = np.abs(tri.P.values[:, 0, 0] - exact_scalar(s)).max()
    assert err < 1e-12
    assert abs(tri.P[0][0, 0] - 0.5) <= 1e-8


def test_without_mean_field_all_three_coincide(scalar_plain):
    tri = solve_precommitted_riccati(scalar_plain)
    assert np.array_equal(tri.P.values, tri.Pi.values)
    assert np.array_equal(tri.P.values, tri.Phi.values)


def test_equilibrium_reduces_to_scalar_riccati(scalar_plain):
    eq = solve_equilibrium_riccati(scalar_plain)
    s = scalar_plain.grid.nodes
    for path in eq.paths().values():
        assert np.abs(path.values[:, 0, 0] - exact_scalar(s)).max() < 1e-12


def test_rk4_fourth_order():
    errs = []
    for N in (10, 20, 40):
        p = corpus_problem("scalar_plain", N)
        errs.append(abs(solve_precommitted_riccati(p).P[0][0, 0] - 0.5))
    ratios = np.array(errs[:-1]) / np.array(errs[1:])
    assert np.all((ratios > 12.8) & (ratios < 19.2)), ratios


def test_matches_independent_ode_solver(mf2):
    # scipy integrates the same triple as an oracle for the non-scalar case
    tri = solve_precommitted_riccati(mf2)
    g = mf2.path
    A, Ab, At = g("A")[0], g("Abar")[0], g("Atilde")[0]
    B, C, Cb, Ct, D = g("B")[0], g("C")[0], g("Cbar")[0], g("Ctilde")[0], g("D")[0]
    Q, Qb, Qt, R = g("Q")[0], g("Qbar")[0], g("Qtilde")[0], g("R")[0]
    n = 2

    def f(s, y):
        P, Pi, Phi = y.reshape(3, n, n)
        K = R + D.T @ P @ D
        out = []
        for M, AA, CC, QQ in (
            (P, A, C, Q),
            (Pi, A + Ab, C + Cb, Q + Qb),
            (Phi, A + Ab + At, C + Cb + Ct, Q + Qb + Qt),
        ):
            S = B.T @ M + D.T @ P @ CC
            out.append(-(M @ AA + AA.T @ M + CC.T @ P @ CC + QQ - S.T @ np.linalg.solve(K, S)))
        return np.concatenate([o.ravel() for o in out])

    G, Gb, Gt = mf2.terminal("G"), mf2.terminal("Gbar"), mf2.terminal("Gtilde")
    y1 = np.concatenate([G.ravel(), (G + Gb).ravel(), (G + Gb + Gt).ravel()])
    sol = solve_ivp(f, (1.0, 0.0), y1, rtol=1e-11, atol=1e-12)
    ref = sol.y[:, -1].reshape(3, n, n)
    assert np.abs(ref[0] - tri.P[0]).max() < 1e-8
    assert np.abs(ref[1] - tri.Pi[0]).max() < 1e-8
    assert np.abs(ref[2] - tri.Phi[0]).max() < 1e-8


def test_paths_symmetric_and_psd(mf2):
    for sol in (solve_precommitted_riccati(mf2), solve_equilibrium_riccati(mf2)):
        for path in sol.paths().values():
            assert path.max_asymmetry() == 0.0
            assert path.min_eig() > 0


def test_precommitted_cost_is_the_value_function(mf2):
    tri = solve_precommitted_riccati(mf2)
    g = precommitted_gains(mf2, tri, 0)
    xi = Gaussian([1.0, -0.5], [[0.3, 0.1], [0.1, 0.2]])
    cost = closed_loop_cost_quadratic(mf2, g, InitialPair(0, xi))
    value = xi.mean @ tri.Phi[0] @ xi.mean + np.trace(tri.Pi[0] @ xi.cov)
    assert abs(cost - value) < 1e-5 * value


def test_lyapunov_frozen_state():
    p = corpus_problem("frozen", 50)
    inp = LyapunovInput.from_blocks(1, cQ1=1, cQ2=1, cQ3=1, cQ4=1, cG1=1, cG3=1, cG4=1)
    quad = solve_lyapunov_quadruple(inp, p.grid)
    # with no dynamics and xi = 1 every term is 1: four running plus three terminal
    assert abs(quad.GammaTilde[0][0, 0] - 7.0) < 1e-12


def test_closed_loop_input_rejects_middle_gain_without_conditioning(mf2):
    z = np.zeros((mf2.grid.N + 1, 2, 2))
    with pytest.raises(ValueError):
        closed_loop_lyapunov_input(mf2, z, z + 1, z, conditional=False)


def test_singular_control_weight_reported():
    with pytest.raises(FactorizationError):
        spd_solve(np.zeros((2, 2)), np.ones((2, 1)), time=0.5)
    with pytest.raises(FactorizationError) as info:
        spd_solve(np.array([[1e-14]]), np.ones((1, 1)), time=0.25)
    assert info.value.time == 0.25


@pytest.mark.filterwarnings("ignore::RuntimeWarning")
def test_blow_up_reports_time():
    from mfslq.problem_model import TimeGrid

    grid = TimeGrid(1.0, 10)
    with pytest.raises(IntegrationError) as info:
        integrate_backward_matrix_ode(lambda k, s, Y: -1e300 * np.ones_like(Y) * Y @ Y, np.array([[1e10]]), grid)
    assert 0.0 <= info.value.time <= 1.0


def test_csv_round_trip(mf2, tmp_path):
    tri = solve_precommitted_riccati(mf2)
    f = tmp_path / "P.csv"
    write_matrix_path_csv(tri.P, f)
    s, vals = read_matrix_path_csv(f)
    assert np.array_equal(s, mf2.grid.nodes)
    assert np.array_equal(vals, tri.P.values)


def test_lyapunov_value_quadratic_in_state(mf2):
    tri = solve_precommitted_riccati(mf2)
    g = precommitted_gains(mf2, tri, 0)
    a = closed_loop_cost_quadratic(mf2, g, InitialPair(0, Deterministic([1.0, 2.0])))
    b = closed_loop_cost_quadratic(mf2, g, InitialPair(0, Deterministic([2.0, 4.0])))
    assert abs(b - 4 * a) < 1e-12 * b


coef = st.floats(-1, 1, allow_nan=False)
pos = st.floats(0.0, 2.0, allow_nan=False)


@settings(max_examples=25, deadline=None)
@given(coef, coef, coef, coef, coef, coef, st.floats(-1, 1), pos, pos, pos, st.floats(0.2, 3), pos, pos, pos)
def test_random_scalar_data_give_ordered_psd_paths(a, ab, at, c, cb, ct, d, q, qb, qt, r, g, gb, gt):
    p = build_problem(
        1, 1, 1.0, 40,
        dict(A=a, Abar=ab, Atilde=at, B=1.0, C=c, Cbar=cb, Ctilde=ct, D=d, Q=q, Qbar=qb, Qtilde=qt, R=r),
        dict(G=g, Gbar=gb, Gtilde=gt),
    )
    tri = solve_precommitted_riccati(p)
    eq = solve_equilibrium_riccati(p)
    for path in list(tri.paths().values()) + list(eq.paths().values()):
        assert path.min_eig() >= -1e-10
    # Gamma <= GammaBar when the conditional weights are nonnegative
    assert np.all(eq.GammaBar.values - eq.Gamma.values >= -1e-10)


def refined_gap(solve, build, coarse=1000, fine=10_000):
    a, b = solve(build(coarse)), solve(build(fine))
    step = fine // coarse
    return max(np.abs(pa.values - pb.values[::step]).max() for pa, pb in zip(a.paths().values(), b.paths().values()))


def generic_2d(N):
    c = dict(
        A=[[0.1, 0.3], [-0.2, 0.0]], Abar=0.5, B=[[1.0], [0.4]], C=[[0.2, 0.0], [0.1, 0.3]],
        D=[[0.3], [0.1]], Q=np.eye(2), Qbar=1.0, Qtilde=[[0.2, 0.0], [0.0, 0.1]], R=1.0,
    )
    return build_problem(2, 1, 1.0, N, c, dict(G=np.eye(2), Gbar=1.0, Gtilde=0.5))


def test_precommitted_self_refinement():
    assert refined_gap(solve_precommitted_riccati, generic_2d) <= 1e-8


def test_equilibrium_self_refinement():
    assert refined_gap(solve_equilibrium_riccati, lambda N: corpus_problem("meanfield_2d", N)) <= 1e-8


def test_lyapunov_self_refinement():
    from mfslq.problem_model import TimeGrid

    inp = LyapunovInput.from_blocks(1, cA=0.3, cAbar=-0.2, cAtilde=0.1, cC=0.5, cCbar=0.2, cQ1=1, cQ2=0.5, cQ3=0.2, cQ4=1, cG1=1, cG3=0.5, cG4=0.3)
    assert refined_gap(lambda g: solve_lyapunov_quadruple(inp, g), lambda N: TimeGrid(1.0, N)) <= 1e-8


def test_lyapunov_reductions():
    from mfslq.problem_model import TimeGrid

    g = TimeGrid(1.0, 100)
    quad = solve_lyapunov_quadruple(LyapunovInput.from_blocks(2, cG1=1), g)
    for path in quad.paths().values():
        assert np.all(path.values == np.eye(2))
    inp = LyapunovInput.from_blocks(1, cA=0.3, cC=0.4, cQ1=1, cQ2=0.5, cG1=1, cG4=1)
    quad = solve_lyapunov_quadruple(inp, g)
    assert np.abs(quad.GammaBar.values - quad.Gamma.values).max() <= 1e-12


def test_zero_state_costs_nothing(mf2):
    g = precommitted_gains(mf2, solve_precommitted_riccati(mf2))
    assert closed_loop_cost_quadratic(mf2, g, InitialPair(0, Deterministic([0.0, 0.0]))) == 0.0


def test_frozen_closed_loop_cost():
    p = corpus_problem("frozen", 100)
    g = precommitted_gains(p, solve_precommitted_riccati(p))
    assert closed_loop_cost_quadratic(p, g, InitialPair(0, Deterministic([1.0]))) == pytest.approx(6.0, abs=1e-12)
