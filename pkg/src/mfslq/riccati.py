"""Backward matrix ODE solvers.

Every matrix system here is integrated with the classical fixed-step
Runge-Kutta scheme on the problem grid, from T back to 0.  Coefficients
follow the left-value convention: the whole step between nodes k and
k+1 uses the samples at node k.  Coupled blocks (for example the three
pre-committed equations) are stacked into one state so that each block
sees the other blocks' stage values.
"""
from __future__ import annotations

import csv
from dataclasses import dataclass
from pathlib import Path
from typing import Callable, Sequence

import numpy as np

from ._linalg import INV_TOL, FactorizationError, min_eig, spd_solve, sym
from .problem_model import Gaussian, InitialPair, Problem, TimeGrid

__all__ = [
    "IntegrationError",
    "FactorizationError",
    "MatrixPath",
    "RiccatiTriple",
    "EquilibriumTriple",
    "LyapunovInput",
    "LyapunovQuad",
    "integrate_backward_matrix_ode",
    "solve_precommitted_riccati",
    "solve_equilibrium_riccati",
    "solve_lyapunov_quadruple",
    "closed_loop_lyapunov_input",
    "closed_loop_cost_quadratic",
    "quadratic_form_value",
    "write_matrix_path_csv",
    "read_matrix_path_csv",
]


class IntegrationError(ArithmeticError):
    """The backward integration produced non-finite values."""

    def __init__(self, time):
        super().__init__(f"non-finite solution (blow-up) at s={time:.6g}")
        self.time = time


@dataclass(frozen=True)
class MatrixPath:
    """Symmetric matrices sampled at every node of a grid."""

    grid: TimeGrid
    values: np.ndarray  # (N+1, n, n)

    def __getitem__(self, k):
        return self.values[k]

    def at_time(self, s: float):
        return self.values[self.grid.index_of(s)]

    def min_eig(self) -> float:
        return min_eig(self.values)

    def max_asymmetry(self) -> float:
        v = self.values
        return float(np.abs(v - np.swapaxes(v, 1, 2)).max())


@dataclass(frozen=True)
class RiccatiTriple:
    P: MatrixPath
    Pi: MatrixPath
    Phi: MatrixPath

    def paths(self):
        return {"P": self.P, "Pi": self.Pi, "Phi": self.Phi}


@dataclass(frozen=True)
class EquilibriumTriple:
    Gamma: MatrixPath
    GammaBar: MatrixPath
    GammaTilde: MatrixPath

    def paths(self):
        return {"Gamma": self.Gamma, "GammaBar": self.GammaBar, "GammaTilde": self.GammaTilde}


@dataclass(frozen=True)
class LyapunovInput:
    """Closed-loop coefficients and weights of a linear functional.

    Path fields accept a constant (n, n) matrix or an (N+1, n, n) array.
    ``tau`` is the grid index of the reference time of the E_tau terms.
    """

    cA: np.ndarray
    cAbar: np.ndarray
    cAtilde: np.ndarray
    cC: np.ndarray
    cCbar: np.ndarray
    cCtilde: np.ndarray
    cQ1: np.ndarray
    cQ2: np.ndarray
    cQ3: np.ndarray
    cQ4: np.ndarray
    cG1: np.ndarray
    cG3: np.ndarray
    cG4: np.ndarray
    tau: int = 0

    @classmethod
    def from_blocks(cls, n: int, tau: int = 0, **blocks):
        """Missing blocks are zero; scalars become multiples of the identity."""
        fields = [f for f in cls.__dataclass_fields__ if f != "tau"]
        unknown = set(blocks) - set(fields)
        if unknown:
            raise KeyError(f"unknown blocks: {sorted(unknown)}")
        values = {}
        for f in fields:
            v = np.asarray(blocks.get(f, 0.0), dtype=float)
            values[f] = v * np.eye(n) if v.ndim == 0 else v
        return cls(tau=tau, **values)

    def path(self, name, grid: TimeGrid):
        value = np.asarray(getattr(self, name), dtype=float)
        if value.ndim == 2:
            return np.broadcast_to(value, (grid.N + 1,) + value.shape)
        if value.shape[0] != grid.N + 1:
            raise ValueError(f"{name} has {value.shape[0]} samples, grid has {grid.N + 1} nodes")
        return value


@dataclass(frozen=True)
class LyapunovQuad:
    GammaCheck: MatrixPath
    Gamma: MatrixPath
    GammaBar: MatrixPath
    GammaTilde: MatrixPath

    def paths(self):
        return {
            "GammaCheck": self.GammaCheck,
            "Gamma": self.Gamma,
            "GammaBar": self.GammaBar,
            "GammaTilde": self.GammaTilde,
        }


# Integrator -----------------------------------------------------------------

Rhs = Callable[[int, float, np.ndarray], np.ndarray]


def rk4_backward(rhs: Rhs, terminal, grid: TimeGrid, start: int = 0, stop: int | None = None) -> np.ndarray:
    """Integrate a stacked matrix ODE backward from node ``stop`` to ``start``.

    ``rhs(k, s, Y)`` returns dY/ds for the stack ``Y`` of shape (b, n, n);
    ``k`` is the index of the step interval [s_k, s_{k+1}] being crossed,
    used for coefficient lookup.  Returns the solution at nodes
    start..stop as an array of shape (stop - start + 1, b, n, n).
    """
    stop = grid.N if stop is None else stop
    h = grid.h
    Y = sym(np.array(terminal, dtype=float))
    out = np.empty((stop - start + 1,) + Y.shape)
    out[-1] = Y
    for k in range(stop - 1, start - 1, -1):
        s1 = (k + 1) * h
        sm = s1 - 0.5 * h
        s0 = k * h
        k1 = rhs(k, s1, Y)
        k2 = rhs(k, sm, Y - 0.5 * h * k1)
        k3 = rhs(k, sm, Y - 0.5 * h * k2)
        k4 = rhs(k, s0, Y - h * k3)
        Y = sym(Y - (h / 6.0) * (k1 + 2.0 * k2 + 2.0 * k3 + k4))
        if not np.isfinite(Y).all():
            raise IntegrationError(s0)
        out[k - start] = Y
    return out


def integrate_backward_matrix_ode(rhs: Rhs, terminal, grid: TimeGrid) -> list[MatrixPath]:
    """Backward RK4 over the whole grid; one MatrixPath per stacked block.

    ``terminal`` is a single (n, n) matrix or a stack (b, n, n).
    """
    terminal = np.asarray(terminal, dtype=float)
    single = terminal.ndim == 2
    stack = terminal[None] if single else terminal
    if single:
        values = rk4_backward(lambda k, s, Y: rhs(k, s, Y[0])[None], stack, grid)
    else:
        values = rk4_backward(rhs, stack, grid)
    return [MatrixPath(grid, np.ascontiguousarray(values[:, i])) for i in range(stack.shape[0])]


# Pre-committed Riccati triple ------------------------------------------------


class _Coefficients:
    """Per-node coefficient arrays with the cumulative sums used by the solvers."""

    def __init__(self, p: Problem):
        g = p.path
        self.A, self.B, self.C, self.D = g("A"), g("B"), g("C"), g("D")
        self.Cbar, self.Ctilde = g("Cbar"), g("Ctilde")
        self.R = g("R")
        self.A2 = _cached_sum(self.A, g("Abar"))
        self.A3 = _cached_sum(self.A2, g("Atilde"))
        self.C2 = _cached_sum(self.C, self.Cbar)
        self.C3 = _cached_sum(self.C2, self.Ctilde)
        self.Q1 = g("Q")
        self.Q2 = _cached_sum(self.Q1, g("Qbar"))
        self.Q3 = _cached_sum(self.Q2, g("Qtilde"))
        self.grid = p.grid
        self._constant = all(getattr(self, name).strides[0] == 0 for name in _Node.__slots__)
        self._last = (None, None)

    def at(self, k):
        # the four stages of a step share one node; constant data share one for all steps
        key = 0 if self._constant else k
        if self._last[0] != key:
            self._last = (key, _Node(self, key))
        return self._last[1]


def _cached_sum(a, b):
    # keep the broadcast (constant) representation when both are constant
    if a.strides[0] == 0 and b.strides[0] == 0:
        return np.broadcast_to(a[0] + b[0], a.shape)
    return a + b


class _Node:
    __slots__ = ("A", "A2", "A3", "B", "C", "C2", "C3", "Cbar", "Ctilde", "D", "R", "Q1", "Q2", "Q3")

    def __init__(self, c: _Coefficients, k):
        for name in self.__slots__:
            setattr(self, name, getattr(c, name)[k])


def _precommitted_pieces(c: _Node, P, Pi, Phi, time=None):
    """Factor-solve shared by the Riccati right-hand sides and the gains.

    Returns (K, S, X) with K = R + D'PD, S the three stacked numerators
    B'P + D'PC, B'Pi + D'P(C+Cbar), B'Phi + D'P(C+Cbar+Ctilde), and
    X = K^{-1} S.  The cumulative gains are -X.
    """
    DtP = c.D.T @ P
    K = c.R + DtP @ c.D
    Bt = c.B.T
    S = np.stack((Bt @ P + DtP @ c.C, Bt @ Pi + DtP @ c.C2, Bt @ Phi + DtP @ c.C3))
    m = K.shape[0]
    X = spd_solve(K, S.transpose(1, 0, 2).reshape(m, -1), INV_TOL, time).reshape(m, 3, -1).transpose(1, 0, 2)
    return K, S, X


def _precommitted_rhs(c: _Node, Y, time=None):
    P, Pi, Phi = Y[0], Y[1], Y[2]
    _, S, X = _precommitted_pieces(c, P, Pi, Phi, time)
    dP = P @ c.A
    dP = dP + dP.T + c.C.T @ P @ c.C + c.Q1 - S[0].T @ X[0]
    dPi = Pi @ c.A2
    dPi = dPi + dPi.T + c.C2.T @ P @ c.C2 + c.Q2 - S[1].T @ X[1]
    dPhi = Phi @ c.A3
    dPhi = dPhi + dPhi.T + c.C3.T @ P @ c.C3 + c.Q3 - S[2].T @ X[2]
    return -np.stack((dP, dPi, dPhi))


def precommitted_terminal(p: Problem):
    G = p.terminal("G")
    G2 = G + p.terminal("Gbar")
    return np.stack((G, G2, G2 + p.terminal("Gtilde")))


def solve_precommitted_riccati(p: Problem) -> RiccatiTriple:
    """Solve the three pre-committed Riccati equations.

    The first equation is autonomous; the second and third use the first
    solution in their quadratic terms and are linear-quadratic in their
    own unknown.  All three are advanced together so the coupling is
    evaluated at the same stage values.
    """
    coeffs = _Coefficients(p)
    values = rk4_backward(lambda k, s, Y: _precommitted_rhs(coeffs.at(k), Y, s), precommitted_terminal(p), p.grid)
    return RiccatiTriple(*(MatrixPath(p.grid, np.ascontiguousarray(values[:, i])) for i in range(3)))


def precommitted_gain_path(p: Problem, P, Pi, Phi, start: int = 0, stop: int | None = None) -> np.ndarray:
    """Cumulative pre-committed gains at nodes start..stop.

    Returns an array of shape (nodes, 3, m, n) holding Psi, Psi + PsiBar
    and Psi + PsiBar + PsiTilde; ``P``, ``Pi``, ``Phi`` are indexed from
    ``start``.
    """
    stop = p.grid.N if stop is None else stop
    coeffs = _Coefficients(p)
    out = np.empty((stop - start + 1, 3, p.m, p.n))
    for j, k in enumerate(range(start, stop + 1)):
        _, _, X = _precommitted_pieces(coeffs.at(k), P[j], Pi[j], Phi[j], k * p.grid.h)
        out[j] = -X
    return out


# Equilibrium Riccati triple --------------------------------------------------


def _equilibrium_gains(c: _Node, Gam, GamBar, GamTilde, time=None):
    """Return (Psi1, Psi1 + Psi2) for the equilibrium feedback."""
    DtG = c.D.T @ Gam
    H = c.R + DtG @ c.D
    Bt = c.B.T
    L = np.concatenate((Bt @ GamBar + DtG @ c.C2, Bt @ GamTilde + DtG @ c.C3), axis=1)
    X = -spd_solve(H, L, INV_TOL, time)
    n = Gam.shape[0]
    return X[:, :n], X[:, n:]


def _equilibrium_rhs(c: _Node, Y, time=None):
    Gam, GamBar, GamTilde = Y[0], Y[1], Y[2]
    K1, K3 = _equilibrium_gains(c, Gam, GamBar, GamTilde, time)
    M1 = c.A2 + c.B @ K1
    N1 = c.C2 + c.D @ K1
    M3 = c.A3 + c.B @ K3
    N3 = c.C3 + c.D @ K3
    quad1 = N1.T @ Gam @ N1 + K1.T @ c.R @ K1
    d1 = Gam @ M1
    d1 = d1 + d1.T + quad1 + c.Q1
    d2 = GamBar @ M1
    d2 = d2 + d2.T + quad1 + c.Q2
    d3 = GamTilde @ M3
    d3 = d3 + d3.T + N3.T @ Gam @ N3 + K3.T @ c.R @ K3 + c.Q3
    return -np.stack((d1, d2, d3))


def solve_equilibrium_riccati(p: Problem) -> EquilibriumTriple:
    """Solve the coupled equilibrium Riccati system as one stacked ODE.

    The feedback gains are recomputed from the current iterate at every
    Runge-Kutta stage.
    """
    coeffs = _Coefficients(p)
    values = rk4_backward(lambda k, s, Y: _equilibrium_rhs(coeffs.at(k), Y, s), precommitted_terminal(p), p.grid)
    return EquilibriumTriple(*(MatrixPath(p.grid, np.ascontiguousarray(values[:, i])) for i in range(3)))


def equilibrium_gain_path(p: Problem, tri: EquilibriumTriple) -> np.ndarray:
    """Gains (Psi1, Psi1 + Psi2) at every node, shape (N+1, 2, m, n)."""
    coeffs = _Coefficients(p)
    out = np.empty((p.grid.N + 1, 2, p.m, p.n))
    for k in range(p.grid.N + 1):
        K1, K3 = _equilibrium_gains(coeffs.at(k), tri.Gamma[k], tri.GammaBar[k], tri.GammaTilde[k], k * p.grid.h)
        out[k, 0], out[k, 1] = K1, K3
    return out


# Lyapunov quadruple ----------------------------------------------------------


def _lyapunov_rhs(A1, A2, A3, C1, C2, C3, Q1, Q2, Q3, Q4, Y):
    """Right-hand side for the stack (GammaCheck, Gamma, GammaBar, GammaTilde).

    A1 = cA, A2 = cA + cAbar, A3 = A2 + cAtilde and likewise for C; the
    Q arguments are the individual weights.
    """
    Gc, Gm, Gb, Gt = Y[0], Y[1], Y[2], Y[3]
    d0 = Gc @ A1
    d0 = d0 + d0.T + C1.T @ Gc @ C1 + Q1
    quad2 = C2.T @ Gc @ C2 + Q1 + Q2
    d1 = Gm @ A2
    d1 = d1 + d1.T + quad2
    d2 = Gb @ A2
    d2 = d2 + d2.T + quad2 + Q3
    d3 = Gt @ A3
    d3 = d3 + d3.T + C3.T @ Gc @ C3 + Q1 + Q2 + Q3 + Q4
    return -np.stack((d0, d1, d2, d3))


def lyapunov_terminal(G1, G3, G4):
    return np.stack((G1, G1, G1 + G3, G1 + G3 + G4))


def solve_lyapunov_quadruple(inp: LyapunovInput, grid: TimeGrid) -> LyapunovQuad:
    """Solve the four linear matrix equations of a fixed linear loop."""
    A1 = inp.path("cA", grid)
    A2 = A1 + inp.path("cAbar", grid)
    A3 = A2 + inp.path("cAtilde", grid)
    C1 = inp.path("cC", grid)
    C2 = C1 + inp.path("cCbar", grid)
    C3 = C2 + inp.path("cCtilde", grid)
    Qs = [inp.path(f"cQ{i}", grid) for i in range(1, 5)]

    def rhs(k, s, Y):
        return _lyapunov_rhs(A1[k], A2[k], A3[k], C1[k], C2[k], C3[k], Qs[0][k], Qs[1][k], Qs[2][k], Qs[3][k], Y)

    G1, G3, G4 = (np.asarray(x, dtype=float) for x in (inp.cG1, inp.cG3, inp.cG4))
    values = rk4_backward(rhs, lyapunov_terminal(G1, G3, G4), grid)
    return LyapunovQuad(*(MatrixPath(grid, np.ascontiguousarray(values[:, i])) for i in range(4)))


# Closed-loop costs -------------------------------------------------------------


def closed_loop_lyapunov_input(p: Problem, Kx, Kc, Km, conditional: bool, tau: int = 0) -> LyapunovInput:
    """Lyapunov data for the loop u = Kx X + Kc E_t[X] + Km E[X].

    With ``conditional`` the conditional-mean coefficients of the state
    equation act on E_t[X] (the pre-committed loop structure); otherwise
    they act on X itself (the naive and equilibrium loop structure, where
    ``Kc`` must be zero).  The control cost is split by expanding
    <R u, u> and moving each cross term onto the coarser of its two
    arguments, which leaves expectations unchanged.
    """
    g = p.path
    A, Abar, Atilde = g("A"), g("Abar"), g("Atilde")
    C, Cbar, Ctilde = g("C"), g("Cbar"), g("Ctilde")
    B, D, R = g("B"), g("D"), g("R")
    Kx, Kc, Km = (np.asarray(x, dtype=float) for x in (Kx, Kc, Km))
    if conditional:
        cA, cAbar = A + B @ Kx, Abar + B @ Kc
        cC, cCbar = C + D @ Kx, Cbar + D @ Kc
    else:
        if np.any(Kc != 0):
            raise ValueError("a loop without conditional-mean feedback must have a zero middle gain")
        cA, cAbar = A + Abar + B @ Kx, np.zeros_like(A)
        cC, cCbar = C + Cbar + D @ Kx, np.zeros_like(C)
    cAtilde = Atilde + B @ Km
    cCtilde = Ctilde + D @ Km
    K1 = Kx
    K2 = Kx + Kc
    K3 = K2 + Km
    W1 = np.swapaxes(K1, 1, 2) @ R @ K1
    W2 = np.swapaxes(K2, 1, 2) @ R @ K2
    W3 = np.swapaxes(K3, 1, 2) @ R @ K3
    return LyapunovInput(
        cA=cA,
        cAbar=cAbar,
        cAtilde=cAtilde,
        cC=cC,
        cCbar=cCbar,
        cCtilde=cCtilde,
        cQ1=g("Q") + W1,
        cQ2=W2 - W1,
        cQ3=np.array(g("Qbar")),
        cQ4=g("Qtilde") + W3 - W2,
        cG1=p.terminal("G"),
        cG3=p.terminal("Gbar"),
        cG4=p.terminal("Gtilde"),
        tau=tau,
    )


def quadratic_form_value(quad: LyapunovQuad, t: int, xi) -> float:
    """Evaluate the representation of the functional at node ``t``.

    For a Gaussian state with covariance S of which S_tau is known at the
    reference time, the value is tr(Gamma (S - S_tau)) + tr(GammaBar S_tau)
    + <GammaTilde mu, mu>.
    """
    mu = xi.mean
    value = float(mu @ quad.GammaTilde[t] @ mu)
    if isinstance(xi, Gaussian):
        value += float(np.trace(quad.Gamma[t] @ (xi.cov - xi.cov_tau)))
        value += float(np.trace(quad.GammaBar[t] @ xi.cov_tau))
    return value


def closed_loop_cost_quadratic(p: Problem, gains, ip: InitialPair) -> float:
    """Analytic cost of running a gain schedule from the initial pair."""
    from .strategies import loop_gains  # local import: strategies depends on this module

    ip.check(p)
    Kx, Kc, Km, conditional = loop_gains(p, gains, ip.t)
    quad = solve_lyapunov_quadruple(closed_loop_lyapunov_input(p, Kx, Kc, Km, conditional, ip.t), p.grid)
    xi = ip.xi
    if isinstance(xi, Gaussian):
        # the state is fully known at its own initial time
        xi = Gaussian(xi.mean, xi.cov)
    return quadratic_form_value(quad, ip.t, xi)


# CSV export -------------------------------------------------------------------


def _format(x: float) -> str:
    return format(float(x), ".17g")


def write_matrix_path_csv(path: MatrixPath | np.ndarray, filename, grid: TimeGrid | None = None):
    """Write one row per node: time followed by the row-major entries."""
    if isinstance(path, MatrixPath):
        values, grid = path.values, path.grid
    else:
        values = np.asarray(path)
    r, c = values.shape[1:]
    header = ["s"] + [f"M_{i}{j}" if max(r, c) <= 10 else f"M_{i}_{j}" for i in range(r) for j in range(c)]
    nodes = grid.nodes
    with open(filename, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(header)
        for k in range(values.shape[0]):
            w.writerow([_format(nodes[k])] + [_format(x) for x in values[k].ravel()])


def read_matrix_path_csv(filename, shape: Sequence[int] | None = None) -> tuple[np.ndarray, np.ndarray]:
    """Read a file written by ``write_matrix_path_csv``; returns (times, values)."""
    data = np.loadtxt(Path(filename), delimiter=",", skiprows=1, ndmin=2)
    times, flat = data[:, 0], data[:, 1:]
    if shape is None:
        n = int(round(np.sqrt(flat.shape[1])))
        shape = (n, n)
    return times, flat.reshape((-1,) + tuple(shape))
