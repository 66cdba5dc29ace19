"""Numerical certificates for the optimality and equilibrium properties.

Every check returns a ``CheckReport``.  Residual checks pass when the
statistic is at most the threshold; one-sided checks pass when the
statistic is at least minus the threshold.
"""
from __future__ import annotations

import json
from dataclasses import asdict, dataclass, field, replace
from pathlib import Path
from typing import Sequence

import numpy as np

from ._linalg import sym
from .problem_model import Deterministic, Gaussian, InitialPair, Problem
from .riccati import (
    EquilibriumTriple,
    LyapunovInput,
    RiccatiTriple,
    precommitted_gain_path,
    quadratic_form_value,
    solve_equilibrium_riccati,
    solve_lyapunov_quadruple,
    solve_precommitted_riccati,
)
from .simulate import (
    AffineControl,
    BrownianAffineControl,
    CostObserver,
    Observer,
    PathEnsemble,
    SimConfig,
    _apply,
    _Initial,
    _Loop,
    _quad,
    loop_from_schedule,
    path_costs,
    perturbed_setup,
    run_observed,
    segment_state,
    simulate_closed_loop,
    simulate_open_loop,
)
from .strategies import (
    GainSchedule,
    equilibrium_gains,
    gain_difference_report,
    naive_gains,
    precommitted_gains,
)

__all__ = [
    "PreconditionError",
    "AdjointPath",
    "CheckReport",
    "adjoint_from_ansatz",
    "check_stationarity",
    "check_convexity_perturbation",
    "check_representation",
    "check_equilibrium_local_optimality",
    "check_reductions",
    "random_perturbations",
    "equilibrium_control_at",
    "discrete_representation_value",
    "write_reports",
    "check_psd_invariants",
    "check_game_identities",
]


class PreconditionError(ValueError):
    """A check was called on a problem outside its domain."""


@dataclass
class CheckReport:
    name: str
    statistic: float
    threshold: float
    passed: bool
    details: dict = field(default_factory=dict)
    one_sided: bool = False

    @classmethod
    def residual(cls, name, statistic, threshold, **details):
        statistic, threshold = float(statistic), float(threshold)
        return cls(name, statistic, threshold, bool(statistic <= threshold), details)

    @classmethod
    def lower(cls, name, statistic, threshold, **details):
        statistic, threshold = float(statistic), float(threshold)
        return cls(name, statistic, threshold, bool(statistic >= -threshold), details, one_sided=True)

    def to_dict(self):
        return _jsonable(asdict(self))


def _jsonable(x):
    if isinstance(x, dict):
        return {str(k): _jsonable(v) for k, v in x.items()}
    if isinstance(x, (list, tuple)):
        return [_jsonable(v) for v in x]
    if isinstance(x, np.ndarray):
        return _jsonable(x.tolist())
    if isinstance(x, (np.floating, float)):
        return float(x) if np.isfinite(x) else str(float(x))
    if isinstance(x, (np.integer,)):
        return int(x)
    if isinstance(x, np.bool_):
        return bool(x)
    return x


def write_reports(reports: Sequence[CheckReport], filename):
    doc = {"passed": all(r.passed for r in reports), "checks": [r.to_dict() for r in reports]}
    Path(filename).write_text(json.dumps(doc, indent=1))
    return doc


# stationarity ----------------------------------------------------------------


@dataclass
class AdjointPath:
    Y: np.ndarray  # (paths, nodes, n)
    Z: np.ndarray


def _nodes(p: Problem, ens: PathEnsemble):
    return range(ens.start, p.grid.N + 1)


def adjoint_from_ansatz(p: Problem, tri: RiccatiTriple, ens: PathEnsemble) -> AdjointPath:
    """Y = P(X - E_t X) + Pi(E_t X - E X) + Phi E X and Z = P (C X + Cbar E_t X + Ctilde E X + D u)."""
    gp = p.path
    Y = np.empty_like(ens.states)
    Z = np.empty_like(ens.states)
    for k in _nodes(p, ens):
        j = k - ens.start
        X, E, M, U = ens.states[:, j], ens.start_means[:, j], ens.mean[j], ens.controls[:, j]
        Y[:, j] = _apply(X - E, tri.P[k]) + _apply(E - M, tri.Pi[k]) + tri.Phi[k] @ M
        sigma = _apply(X, gp("C")[k]) + _apply(E, gp("Cbar")[k]) + gp("Ctilde")[k] @ M + _apply(U, gp("D")[k])
        Z[:, j] = _apply(sigma, tri.P[k])
    return AdjointPath(Y, Z)



def check_stationarity(p: Problem, tri: RiccatiTriple, ens: PathEnsemble, threshold: float = 1e-2) -> CheckReport:
    """Residual of the optimality system along a simulated pre-committed loop.

    The adjoint pair comes from the decoupling ansatz, which makes the
    algebraic condition R u + B'Y + D'Z = 0 hold identically.  The
    statistic therefore also measures how well that pair solves the
    backward equation on the simulation grid: per step, the drift defect
    E_k[Y_{k+1}] - Y_k + f_k h (an exact conditional expectation, since
    the state recursion is linear) and the volatility defect
    (P_{k+1} - P_k) sigma_k.  Reported value:
    sqrt(E sum_k h (|alg|^2 + |drift/h|^2 + |vol|^2)), first order in h.
    """
    if np.any(ens.anchors != ens.start):
        raise PreconditionError("stationarity is checked on a loop anchored at its start node")
    if tri.P.grid != p.grid:
        raise PreconditionError("solution grid does not match the problem grid")
    gp = p.path
    h = p.grid.h
    N = p.grid.N
    start = ens.start
    cum = precommitted_gain_path(p, tri.P.values, tri.Pi.values, tri.Phi.values)
    adj = adjoint_from_ansatz(p, tri, ens)
    paths = ens.paths
    alg_sq = np.zeros(paths)
    drift_sq = np.zeros(paths)
    vol_sq = np.zeros(paths)
    control_gap = 0.0
    terminal_gap = 0.0
    for k in _nodes(p, ens):
        j = k - start
        X, E, M, U = ens.states[:, j], ens.start_means[:, j], ens.mean[j], ens.controls[:, j]
        Y, Z = adj.Y[:, j], adj.Z[:, j]
        B, D, R = gp("B")[k], gp("D")[k], gp("R")[k]
        K1, K2, K3 = cum[k]
        feedback = _apply(X, K1) + _apply(E, K2 - K1) + (K3 - K2) @ M
        control_gap = max(control_gap, float(np.abs(feedback - U).max()))
        alg = _apply(U, R) + _apply(Y, B.T) + _apply(Z, D.T)
        w = 0.5 * h if k in (start, N) else h
        alg_sq += w * np.sum(alg**2, axis=1)
        if k == N:
            target = _apply(X, p.terminal("G")) + _apply(E, p.terminal("Gbar")) + p.terminal("Gtilde") @ M
            terminal_gap = float(np.abs(Y - target).max())
            break
        A, Ab, At = gp("A")[k], gp("Abar")[k], gp("Atilde")[k]
        C, Cb, Ct = gp("C")[k], gp("Cbar")[k], gp("Ctilde")[k]
        Q, Qb, Qt = gp("Q")[k], gp("Qbar")[k], gp("Qtilde")[k]
        P, Pi, Phi = tri.P[k], tri.Pi[k], tri.Phi[k]
        EtU = _apply(E, K2) + (K3 - K2) @ M
        EU = K3 @ M
        EtY = _apply(E - M, Pi) + Phi @ M
        EY = Phi @ M
        EtZ = _apply(_apply(E, C + Cb) + Ct @ M + _apply(EtU, D), P)
        EZ = P @ ((C + Cb + Ct) @ M + D @ EU)
        f = (
            _apply(Y, A.T)
            + _apply(EtY, Ab.T)
            + At.T @ EY
            + _apply(Z, C.T)
            + _apply(EtZ, Cb.T)
            + Ct.T @ EZ
            + _apply(X, Q)
            + _apply(E, Qb)
            + Qt @ M
        )
        drift = _apply(X, A) + _apply(E, Ab) + At @ M + _apply(U, B)
        sigma = _apply(X, C) + _apply(E, Cb) + Ct @ M + _apply(U, D)
        En, Mn = ens.start_means[:, j + 1], ens.mean[j + 1]
        Xn = X + h * drift  # E_k[X_{k+1}]
        EkY = _apply(Xn - En, tri.P[k + 1]) + _apply(En - Mn, tri.Pi[k + 1]) + tri.Phi[k + 1] @ Mn
        d = EkY - Y + h * f
        drift_sq += h * np.sum((d / h) ** 2, axis=1)
        vol_sq += h * np.sum(_apply(sigma, tri.P[k + 1] - P) ** 2, axis=1)
    stat = float(np.sqrt((alg_sq + drift_sq + vol_sq).mean()))
    return CheckReport.residual(
        "stationarity",
        stat,
        threshold,
        algebraic=float(np.sqrt(alg_sq.mean())),
        drift=float(np.sqrt(drift_sq.mean())),
        volatility=float(np.sqrt(vol_sq.mean())),
        control_mismatch=control_gap,
        terminal_mismatch=terminal_gap,
        step=h,
        paths=paths,
    )


# convexity ---------------------------------------------------------------------


def random_perturbations(
    seed: int, m: int, count: int, noise: float = 0.5, horizon: float | None = None
) -> list[BrownianAffineControl]:
    """Perturbations v(s) = a + b (s - t) + c (W(s) - W(t)) with standard normal a, b and c scaled by ``noise``.

    With ``horizon`` = L each perturbation is rescaled to E int_0^L |v|^2 ds = 1,
    so the curvature of the cost along v is bounded below by the smallest
    eigenvalue of R and Monte Carlo noise is comparable across directions.
    """
    rng = np.random.default_rng(seed)
    out = []
    for _ in range(count):
        a, b, c = rng.standard_normal(m), rng.standard_normal(m), noise * rng.standard_normal(m)
        if horizon is not None:
            L = float(horizon)
            energy = a @ a * L + a @ b * L**2 + b @ b * L**3 / 3 + c @ c * L**2 / 2
            k = 1.0 / np.sqrt(energy)
            a, b, c = k * a, k * b, k * c
        out.append(BrownianAffineControl(a, b, c))
    return out


def _combine(base: PathEnsemble, delta: PathEnsemble, lam: float) -> PathEnsemble:
    cond = base.start_means + lam * delta.start_means
    return replace(
        base,
        states=base.states + lam * delta.states,
        cond_means=cond,
        start_means=cond,
        mean=base.mean + lam * delta.mean,
        controls=base.controls + lam * delta.controls,
    )


def convexity_curve(p: Problem, base: PathEnsemble, delta: PathEnsemble, lambdas) -> dict:
    """Per-path costs of u* + lam v from the optimal ensemble and the response to v."""
    lams = sorted(set(float(x) for x in lambdas) | {0.0})
    costs = np.stack([path_costs(p, _combine(base, delta, lam), left_control=True) for lam in lams])
    return {"lambdas": lams, "costs": costs}


def check_convexity_perturbation(
    p: Problem,
    t: int,
    xi,
    lambdas: Sequence[float],
    v: BrownianAffineControl,
    sim: SimConfig,
    tri: RiccatiTriple | None = None,
    threshold: float = 0.05,
    base: PathEnsemble | None = None,
) -> CheckReport:
    """Cost along the line u* + lam v through the pre-committed optimum.

    X^lam = X* + lam X~, with X~ the response of the uncontrolled system
    to v from a zero initial state; both runs share their random numbers.
    The control cost uses the left-point rule, exact for the simulated
    piecewise-constant control.
    The per-path cost is exactly quadratic in lam, so the fit is exact
    and its coefficients carry per-path standard errors.  statistic =
    |linear| / quadratic coefficient.  When the quadratic coefficient is
    not distinguishable from zero the fit is reported as degenerate and
    only the one-sided cost comparison decides.
    """
    lams = [float(x) for x in lambdas]
    if sorted(lams) != sorted(-x for x in lams):
        raise PreconditionError("lambdas must be symmetric around zero")
    ip = InitialPair(t, xi)
    if base is None:
        tri = solve_precommitted_riccati(p) if tri is None else tri
        base = simulate_closed_loop(p, precommitted_gains(p, tri, t), ip, sim.with_(t0=t))
    delta = simulate_open_loop(p, None, ip, sim.with_(t0=t), brownian=v, zero_start=True)
    curve = convexity_curve(p, base, delta, lams)
    grid_l = np.asarray(curve["lambdas"])
    costs = curve["costs"]
    i0 = int(np.flatnonzero(grid_l == 0.0)[0])
    diffs = costs - costs[i0]
    means = diffs.mean(axis=1)
    ses = diffs.std(axis=1, ddof=1) / np.sqrt(costs.shape[1])
    gaps = means + 3 * ses  # J(lam) - J(0) + 3 se must be nonnegative
    coef = np.polyfit(grid_l, costs, 2)  # per-path (quad, lin, const)
    a, b = coef[0].mean(), coef[1].mean()
    a_se = coef[0].std(ddof=1) / np.sqrt(coef.shape[1])
    b_se = coef[1].std(ddof=1) / np.sqrt(coef.shape[1])
    degenerate = not (a > 3 * a_se and a > 0)
    if a == 0 and b == 0:
        ratio = 0.0
    elif a > 0:
        ratio = abs(b) / a
    else:
        ratio = float("inf")
    below = bool(np.all(gaps >= 0))
    passed = below and (degenerate or ratio <= threshold)
    return CheckReport(
        "convexity",
        0.0 if degenerate and not np.isfinite(ratio) else float(ratio),
        threshold,
        bool(passed),
        {
            "lambdas": grid_l,
            "cost_differences": means,
            "difference_std_errors": ses,
            "quadratic": float(a),
            "quadratic_std_error": float(a_se),
            "linear": float(b),
            "linear_std_error": float(b_se),
            "degenerate": degenerate,
            "min_gap": float(gaps.min()),
            "cost_at_zero": float(costs[i0].mean()),
        },
    )


# representation ----------------------------------------------------------------


def _lyapunov_loop(inp: LyapunovInput, p: Problem, start: int) -> _Loop:
    grid = p.grid
    zeros = np.zeros((grid.N + 1, p.m, p.n))
    nozero = np.zeros((grid.N + 1, p.n, p.m))
    return _Loop(
        Ax=inp.path("cA", grid),
        Ac=inp.path("cAbar", grid),
        Am=inp.path("cAtilde", grid),
        Cx=inp.path("cC", grid),
        Cc=inp.path("cCbar", grid),
        Cm=inp.path("cCtilde", grid),
        Kx=zeros,
        Kc=zeros,
        Km=zeros,
        B=nozero,
        D=nozero,
        anchors=np.full(grid.N + 1, start, dtype=int),
    )


class _FunctionalObserver(Observer):
    """Streams the functional with weights Q1..Q4 and terminals G1, G3, G4.

    The tau-anchored conditional mean is propagated here from its value
    at the start node, with the collapsed drift of the loop.
    """

    def __init__(self, lo, count, tau0, inp: LyapunovInput, p: Problem, loop: _Loop, start: int):
        super().__init__(lo, count, tau0)
        g = p.grid
        self.h, self.N, self.start = g.h, g.N, start
        self.Q = [inp.path(f"cQ{i}", g) for i in range(1, 5)]
        self.G1, self.G3, self.G4 = (np.asarray(x, dtype=float) for x in (inp.cG1, inp.cG3, inp.cG4))
        self.loop = loop
        self.g = np.array(tau0, dtype=float)
        self.total = np.zeros(count)

    def visit(self, k, j, X, e, f, m, u, dW):
        h = self.h
        w = 0.5 * h if k in (self.start, self.N) else h
        Q1, Q2, Q3, Q4 = (q[k] for q in self.Q)
        self.total += w * (_quad(X, Q1) + _quad(f, Q2) + _quad(self.g, Q3) + float(m @ Q4 @ m))
        if k == self.N:
            self.total += _quad(X, self.G1) + _quad(self.g, self.G3) + float(m @ self.G4 @ m)
            return
        L = self.loop
        self.g = self.g + h * (_apply(self.g, L.Ax[k] + L.Ac[k]) + L.Am[k] @ m)

    def finish(self):
        return {"value": self.total}


def _reference_xi(xi, tau: int, t: int):
    if isinstance(xi, Gaussian) and tau == t:
        return Gaussian(xi.mean, xi.cov)  # everything about xi is known at its own time
    return xi


def discrete_representation_value(inp: LyapunovInput, grid, t: int, xi, refine: int = 1) -> float:
    """Exact expectation of the simulated functional, from second moments.

    The Euler recursion for (X, E_t X, E_tau X) is linear, so its second
    moment matrix obeys a closed recursion.  With ``refine`` > 1 every
    step is split into sub-steps with linearly interpolated coefficients,
    which gives the same quantity on a finer grid.
    """
    names = ("cA", "cAbar", "cAtilde", "cC", "cCbar", "cCtilde", "cQ1", "cQ2", "cQ3", "cQ4")
    co = {name: inp.path(name, grid) for name in names}
    mu = np.asarray(xi.mean, dtype=float)
    n = mu.size
    if isinstance(xi, Gaussian):
        S, St = xi.cov, xi.cov_tau
    else:
        S = St = np.zeros((n, n))
    cov = np.block([[S, S, St], [S, S, St], [St, St, St]])
    z = np.concatenate([mu, mu, mu])
    M2 = cov + np.outer(z, z)
    m = mu.copy()
    G1, G3, G4 = (np.asarray(x, dtype=float) for x in (inp.cG1, inp.cG3, inp.cG4))
    hh = grid.h / refine
    fine = (grid.N - t) * refine
    Z = np.zeros((n, n))
    I3 = np.eye(3 * n)
    total = 0.0

    def coef(name, i):
        k, r = t + i // refine, i % refine
        a = co[name]
        if r == 0:
            return a[k]
        th = r / refine
        return (1 - th) * a[k] + th * a[k + 1]

    def running(i):
        return (
            np.trace(coef("cQ1", i) @ M2[:n, :n])
            + np.trace(coef("cQ2", i) @ M2[n : 2 * n, n : 2 * n])
            + np.trace(coef("cQ3", i) @ M2[2 * n :, 2 * n :])
            + m @ coef("cQ4", i) @ m
        )

    for i in range(fine):
        total += (0.5 * hh if i == 0 else hh) * running(i)
        Ax, Ac, Am = coef("cA", i), coef("cAbar", i), coef("cAtilde", i)
        Cx, Cc, Cm = coef("cC", i), coef("cCbar", i), coef("cCtilde", i)
        col = Ax + Ac
        F = I3 + hh * np.block([[Ax, Ac, Z], [Z, col, Z], [Z, Z, col]])
        b = hh * np.concatenate([Am @ m] * 3)
        G = np.block([[Cx, Cc, Z], [Z, Z, Z], [Z, Z, Z]])
        c = np.concatenate([Cm @ m, np.zeros(2 * n)])
        Fz = F @ z
        Gz = G @ z
        M2 = (
            F @ M2 @ F.T
            + np.outer(Fz, b)
            + np.outer(b, Fz)
            + np.outer(b, b)
            + hh * (G @ M2 @ G.T + np.outer(Gz, c) + np.outer(c, Gz) + np.outer(c, c))
        )
        M2 = 0.5 * (M2 + M2.T)
        z = Fz + b
        m = m + hh * ((col + Am) @ m)
    total += 0.5 * hh * running(fine) if fine else 0.0
    total += np.trace(G1 @ M2[:n, :n]) + np.trace(G3 @ M2[2 * n :, 2 * n :]) + m @ G4 @ m
    return float(total)


def check_representation(
    p: Problem, inp: LyapunovInput, ip: InitialPair, sim: SimConfig, floor: float = 1e-12
) -> CheckReport:
    """Monte Carlo value of the functional against its quadratic-form representation.

    statistic = |MC - representation| / (3 se + allowance), passing at 1.
    The allowance is the discretization bias of the simulated estimator,
    estimated from one refinement: twice the difference of its exact
    expectation on the grid and on the grid with halved step.
    """
    ip.check(p)
    t = ip.t
    if inp.tau > t:
        raise PreconditionError(f"reference node {inp.tau} is after the initial node {t}")
    xi = _reference_xi(ip.xi, inp.tau, t)
    loop = _lyapunov_loop(inp, p, t)
    init = _Initial(mean=np.array(xi.mean, dtype=float), xi=xi)
    out, _ = run_observed(
        p, loop, init, t, sim.with_(t0=t), lambda lo, c, tau0: _FunctionalObserver(lo, c, tau0, inp, p, loop, t)
    )
    values = out["value"]
    mc = float(values.mean())
    se = float(values.std(ddof=1) / np.sqrt(values.size))
    quad = solve_lyapunov_quadruple(inp, p.grid)
    rep = quadratic_form_value(quad, t, xi)
    coarse = discrete_representation_value(inp, p.grid, t, xi, 1)
    fine = discrete_representation_value(inp, p.grid, t, xi, 2)
    allowance = 2.0 * abs(coarse - fine)
    denom = 3.0 * se + allowance + floor * max(1.0, abs(rep))
    stat = abs(mc - rep) / denom
    return CheckReport.residual(
        "representation",
        stat,
        1.0,
        monte_carlo=mc,
        std_error=se,
        representation=rep,
        discrete_expectation=coarse,
        discrete_expectation_refined=fine,
        allowance=allowance,
        allowance_constant=allowance / p.grid.h,
        mc_vs_discrete_z=(mc - coarse) / se if se > 0 else 0.0,
        paths=int(values.size),
        tau=int(inp.tau),
    )


# local optimality of the equilibrium ---------------------------------------------


def equilibrium_control_at(g: GainSchedule, t: int) -> AffineControl:
    """The equilibrium feedback at node t frozen as an F_t-measurable control."""
    return AffineControl(g.psi[t].copy(), g.psi_tilde[t].copy(), np.zeros(g.psi.shape[1]))


def _as_control(u, n) -> AffineControl:
    return u if isinstance(u, AffineControl) else AffineControl.constant(u, n)


def _costs_from(p: Problem, loop, init, t, sim):
    out, _ = run_observed(p, loop, init, t, sim.with_(t0=t), lambda lo, c, tau0: CostObserver(lo, c, tau0, p, t, left_control=True))
    return out["cost"]


def check_equilibrium_local_optimality(
    p: Problem,
    tri: EquilibriumTriple,
    t: int,
    u_candidates: Sequence,
    eps_list: Sequence[float],
    sim: SimConfig,
    ip: InitialPair | None = None,
    slack: float = 1e-3,
    h_allowance: float = 1.0,
) -> CheckReport:
    """Difference quotients of the cost when the equilibrium is abandoned on [t, t+eps).

    For each candidate, D(eps) = (J(u^eps) - J(u_eq)) / eps is estimated
    under common random numbers from the same per-path states X(t), and
    extrapolated linearly to eps = 0 from the two smallest eps.  The
    analytic limit is the sample mean of (u - u_eq)' H (u - u_eq) with
    H = R + D' Gamma D at t, over the same states.  The check passes when
    every extrapolated quotient is at least -slack * scale (scale = the
    largest analytic value) and each agrees with its analytic value
    within 3 se + |D(eps_small) - D(eps_large)| + h_allowance * h * scale.
    """
    if ip is None:
        ip = InitialPair(0, Deterministic(np.ones(p.n)))
    eps = sorted({float(e) for e in eps_list}, reverse=True)
    if len(eps) < 2:
        raise PreconditionError("at least two eps values are needed for extrapolation")
    if eps[-1] <= 0:
        raise PreconditionError("eps values must be positive")
    for e in eps:
        p.grid.steps(e)  # raises unless e is a multiple of h
    g = equilibrium_gains(p, tri)
    init = segment_state(p, g, ip, t, sim.with_(t0=ip.t))
    base_loop = loop_from_schedule(p, g, t)
    base = _costs_from(p, base_loop, init, t, sim)
    gp = p.path
    X = init.values if init.values is not None else init.draw(sim, 0, sim.paths)[0]
    mean_t = init.mean
    H = gp("R")[t] + gp("D")[t].T @ tri.Gamma[t] @ gp("D")[t]
    u_eq = _apply(X, g.psi[t]) + g.psi_tilde[t] @ mean_t
    e_big, e_small = eps[-2], eps[-1]
    results = []
    for u in u_candidates:
        control = _as_control(u, p.n)
        quotients = {}
        for e in eps:
            loop, _ = perturbed_setup(p, g, ip, t, e, control, sim, init=init)
            quotients[e] = (_costs_from(p, loop, init, t, sim) - base) / e
        ext = (e_big * quotients[e_small] - e_small * quotients[e_big]) / (e_big - e_small)
        gap = control.values(X, mean_t) - u_eq
        analytic = float(_quad(gap, H).mean())
        results.append(
            {
                "quotients": {repr(e): float(q.mean()) for e, q in quotients.items()},
                "extrapolated": float(ext.mean()),
                "std_error": float(ext.std(ddof=1) / np.sqrt(ext.size)),
                "analytic": analytic,
                "step_change": float(abs(quotients[e_small].mean() - quotients[e_big].mean())),
            }
        )
    scale = max([r["analytic"] for r in results] + [0.0])
    worst = min(r["extrapolated"] for r in results)
    agree = True
    for r in results:
        tol = 3 * r["std_error"] + r["step_change"] + h_allowance * p.grid.h * scale
        r["tolerance"] = tol
        r["agrees"] = bool(abs(r["extrapolated"] - r["analytic"]) <= tol)
        agree = agree and r["agrees"]
    threshold = slack * scale
    return CheckReport(
        "equilibrium_local_optimality",
        worst,
        threshold,
        bool(worst >= -threshold and agree),
        {"scale": scale, "eps": eps, "candidates": results, "paths": sim.paths, "t": int(t)},
        one_sided=True,
    )


# reductions -------------------------------------------------------------------------


def check_reductions(p: Problem, threshold: float = 1e-8) -> CheckReport:
    """Coincidence of the three strategies without conditional-expectation terms."""
    active = [name for name in ("Abar", "Cbar", "Qbar") if np.any(p.path(name) != 0)]
    if np.any(p.terminal("Gbar") != 0):
        active.append("Gbar")
    if active:
        raise PreconditionError("conditional-expectation terms present: " + ", ".join(active))
    pre_tri = solve_precommitted_riccati(p)
    eq_tri = solve_equilibrium_riccati(p)
    pre = precommitted_gains(p, pre_tri, 0)
    naive = naive_gains(pre)
    eq = equilibrium_gains(p, eq_tri)
    d = {
        "Pi_minus_P": float(np.abs(pre_tri.Pi.values - pre_tri.P.values).max()),
        "GammaBar_minus_Gamma": float(np.abs(eq_tri.GammaBar.values - eq_tri.Gamma.values).max()),
        "Phi_minus_GammaTilde": float(np.abs(pre_tri.Phi.values - eq_tri.GammaTilde.values).max()),
        "P_minus_Gamma": float(np.abs(pre_tri.P.values - eq_tri.Gamma.values).max()),
    }
    for label, (a, b) in {"pre_vs_naive": (pre, naive), "naive_vs_eq": (naive, eq), "pre_vs_eq": (pre, eq)}.items():
        rep = gain_difference_report(a, b)
        d[label] = max(rep["max_psi1"], rep["max_psi2"])
    d["pre_psi_bar"] = float(np.abs(pre.psi_bar).max())
    return CheckReport.residual("reductions", max(d.values()), threshold, **d)


# invariants -------------------------------------------------------------------------


def check_psd_invariants(named_paths: dict, tol: float = 1e-10) -> CheckReport:
    """Smallest eigenvalue over every node of every named matrix path."""
    mins = {name: float(np.linalg.eigvalsh(sym(np.asarray(getattr(v, "values", v)))).min()) for name, v in named_paths.items()}
    worst = min(mins.values()) if mins else 0.0
    return CheckReport.lower("psd_invariants", worst, tol, minimum_eigenvalues=mins)


def check_game_identities(sol, tol: float = 1e-8, psd_tol: float = 1e-10) -> CheckReport:
    """P = GammaCheck, Pi = GammaBar, Phi = GammaTilde on a partition, and 0 <= Gamma <= GammaBar."""
    from .game import identity_residual

    stored = identity_residual(sol)
    residual = max(stored, sol.identity_residual)
    gamma_min = float(np.linalg.eigvalsh(sym(sol.Gamma_D.values)).min())
    order_min = float(np.linalg.eigvalsh(sym(sol.GammaBar_D.values - sol.Gamma_D.values)).min())
    ordered = gamma_min >= -psd_tol and order_min >= -psd_tol
    return CheckReport(
        "game_identities",
        residual,
        tol,
        bool(residual <= tol and ordered),
        {
            "stored_residual": stored,
            "cell_residual": sol.identity_residual,
            "min_eig_Gamma": gamma_min,
            "min_eig_GammaBar_minus_Gamma": order_min,
            "cells": sol.partition.cells,
            "mesh": sol.partition.mesh,
        },
    )
