"""Partition-based constructions of the time-consistent solutions.

Two constructions live here.  The naive rollout re-commits to the
pre-committed feedback at the start of every cell of a partition.  The
multi-person game lets the controller of each cell optimize against the
known behavior of all later controllers; its value functions converge to
the equilibrium Riccati solution as the mesh vanishes.
"""
from __future__ import annotations

import json
from dataclasses import dataclass, field
from pathlib import Path
from typing import Sequence

import numpy as np

from ._linalg import INV_TOL, spd_solve, spectral_norm
from .problem_model import InitialPair, Problem, TimeGrid
from .riccati import (
    EquilibriumTriple,
    MatrixPath,
    RiccatiTriple,
    _Coefficients,
    _Node,
    precommitted_gain_path,
    rk4_backward,
    solve_precommitted_riccati,
)
from .simulate import ControlObserver, SimConfig, initial_from_pair, loop_from_schedule, run_observed, simulate_closed_loop
from .strategies import GainSchedule, PiecewiseGame, naive_gains, precommitted_gains

__all__ = [
    "Partition",
    "PartitionSolution",
    "ConvergenceReport",
    "multiperson_game_solve",
    "game_convergence_study",
    "uniform_bounds",
    "naive_partition_rollout",
    "naive_convergence_study",
]


@dataclass(frozen=True)
class Partition:
    """Cell boundaries given as indices into the master grid."""

    grid: TimeGrid
    indices: tuple

    def __post_init__(self):
        idx = tuple(int(i) for i in self.indices)
        if len(idx) < 2 or idx[0] != 0 or idx[-1] != self.grid.N:
            raise ValueError("a partition must start at node 0 and end at node N")
        if any(b <= a for a, b in zip(idx, idx[1:])):
            raise ValueError("partition indices must be strictly increasing")
        object.__setattr__(self, "indices", idx)

    @classmethod
    def uniform(cls, grid: TimeGrid, cells: int) -> "Partition":
        if grid.N % cells:
            raise ValueError(f"{cells} cells do not divide the {grid.N}-step grid")
        step = grid.N // cells
        return cls(grid, tuple(range(0, grid.N + 1, step)))

    @property
    def cells(self) -> int:
        return len(self.indices) - 1

    @property
    def mesh(self) -> float:
        return max(b - a for a, b in zip(self.indices, self.indices[1:])) * self.grid.h

    def locate_cell(self, k: int) -> int:
        """Cell containing node k; cells are [t_i, t_{i+1}) except the last, which is closed."""
        if not (0 <= k <= self.grid.N):
            raise IndexError(k)
        i = int(np.searchsorted(self.indices, k, side="right")) - 1
        return min(i, self.cells - 1)

    def anchor_indices(self) -> np.ndarray:
        """Start node of the cell containing each grid node."""
        idx = np.asarray(self.indices)
        cell = np.searchsorted(idx, np.arange(self.grid.N + 1), side="right") - 1
        return idx[np.minimum(cell, self.cells - 1)]


@dataclass(frozen=True)
class PartitionSolution:
    """Piecewise paths of the multi-person construction.

    At an interior partition node the per-cell paths P, Pi, Phi and
    GammaCheck store the value from the cell on the left, which equals the
    imposed boundary data; the gains use the cell on the right.
    """

    partition: Partition
    P_D: MatrixPath
    Pi_D: MatrixPath
    Phi_D: MatrixPath
    GammaCheck_D: MatrixPath
    Gamma_D: MatrixPath
    GammaBar_D: MatrixPath
    GammaTilde_D: MatrixPath
    gains_D: GainSchedule
    identity_residual: float  # max over all cells and nodes, right-cell values included

    def paths(self):
        return {
            "P_D": self.P_D,
            "Pi_D": self.Pi_D,
            "Phi_D": self.Phi_D,
            "GammaCheck_D": self.GammaCheck_D,
            "Gamma_D": self.Gamma_D,
            "GammaBar_D": self.GammaBar_D,
            "GammaTilde_D": self.GammaTilde_D,
        }


@dataclass
class ConvergenceReport:
    meshes: list
    errors: list
    fitted_rate: float
    std_errors: list | None = None
    details: dict = field(default_factory=dict)

    def is_monotone(self) -> bool:
        return all(b < a for a, b in zip(self.errors, self.errors[1:]))

    def write(self, stem):
        """Write <stem>.csv (mesh, error[, std_error]) and <stem>.json."""
        stem = Path(stem)
        with open(stem.with_suffix(".csv"), "w") as fh:
            cols = ["mesh", "error"] + (["std_error"] if self.std_errors is not None else [])
            fh.write(",".join(cols) + "\n")
            for i, (h, e) in enumerate(zip(self.meshes, self.errors)):
                row = [format(h, ".17g"), format(e, ".17g")]
                if self.std_errors is not None:
                    row.append(format(self.std_errors[i], ".17g"))
                fh.write(",".join(row) + "\n")
        summary = {
            "fitted_rate": self.fitted_rate,
            "monotone": self.is_monotone(),
            "meshes": self.meshes,
            "errors": self.errors,
        }
        summary.update(self.details)
        stem.with_suffix(".json").write_text(json.dumps(summary, indent=1))


def fitted_rate(meshes, errors) -> float:
    """Least-squares slope of log(error) against log(mesh)."""
    x = np.log(np.asarray(meshes, dtype=float))
    y = np.log(np.maximum(np.asarray(errors, dtype=float), np.finfo(float).tiny))
    return float(np.polyfit(x, y, 1)[0])


# multi-person game -------------------------------------------------------------


def _game_rhs(c: _Node, Y, time=None):
    """Stacked right-hand side for (P, Pi, Phi, GammaCheck, Gamma, GammaBar, GammaTilde).

    The cell's Riccati triple fixes the local cumulative gains; the four
    Lyapunov equations then price the loop those gains generate.
    """
    P, Pi, Phi = Y[0], Y[1], Y[2]
    Gc, Gm, Gb, Gt = Y[3], Y[4], Y[5], Y[6]
    DtP = c.D.T @ P
    K = c.R + DtP @ c.D
    Bt = c.B.T
    S = np.concatenate((Bt @ P + DtP @ c.C, Bt @ Pi + DtP @ c.C2, Bt @ Phi + DtP @ c.C3), axis=1)
    X = spd_solve(K, S, INV_TOL, time)
    n = P.shape[0]
    S1, S2, S3 = S[:, :n], S[:, n : 2 * n], S[:, 2 * n :]
    X1, X2, X3 = X[:, :n], X[:, n : 2 * n], X[:, 2 * n :]
    dP = P @ c.A
    dP = dP + dP.T + c.C.T @ P @ c.C + c.Q1 - S1.T @ X1
    dPi = Pi @ c.A2
    dPi = dPi + dPi.T + c.C2.T @ P @ c.C2 + c.Q2 - S2.T @ X2
    dPhi = Phi @ c.A3
    dPhi = dPhi + dPhi.T + c.C3.T @ P @ c.C3 + c.Q3 - S3.T @ X3
    # cumulative gains K1 = Psi, K2 = Psi + PsiBar, K3 = K2 + PsiTilde
    K1, K2, K3 = -X1, -X2, -X3
    M1, N1 = c.A + c.B @ K1, c.C + c.D @ K1
    M2, N2 = c.A2 + c.B @ K2, c.C2 + c.D @ K2
    M3, N3 = c.A3 + c.B @ K3, c.C3 + c.D @ K3
    RK2 = K2.T @ c.R @ K2
    d0 = Gc @ M1
    d0 = d0 + d0.T + N1.T @ Gc @ N1 + c.Q1 + K1.T @ c.R @ K1
    quad2 = N2.T @ Gc @ N2 + RK2
    d1 = Gm @ M2
    d1 = d1 + d1.T + quad2 + c.Q1
    d2 = Gb @ M2
    d2 = d2 + d2.T + quad2 + c.Q2
    d3 = Gt @ M3
    d3 = d3 + d3.T + N3.T @ Gc @ N3 + K3.T @ c.R @ K3 + c.Q3
    return -np.stack((dP, dPi, dPhi, d0, d1, d2, d3))


def multiperson_game_solve(p: Problem, part: Partition) -> PartitionSolution:
    """Solve the cell-by-cell game backward in time."""
    if part.grid != p.grid:
        raise ValueError("partition grid does not match the problem grid")
    N = p.grid.N
    n, m = p.n, p.m
    coeffs = _Coefficients(p)
    values = np.empty((N + 1, 7, n, n))
    gains = np.empty((N + 1, 3, m, n))
    G = p.terminal("G")
    G2 = G + p.terminal("Gbar")
    G3 = G2 + p.terminal("Gtilde")
    boundary = (G, G2, G3)  # (Gamma, GammaBar, GammaTilde) at the right end of the current cell
    residual = 0.0
    for i in range(part.cells - 1, -1, -1):
        start, stop = part.indices[i], part.indices[i + 1]
        gm, gb, gt = boundary
        terminal = np.stack((gm, gb, gt, gm, gm, gb, gt))
        cell = rk4_backward(lambda k, s, Y: _game_rhs(coeffs.at(k), Y, s), terminal, p.grid, start, stop)
        residual = max(
            residual,
            float(np.abs(cell[:, 0] - cell[:, 3]).max()),
            float(np.abs(cell[:, 1] - cell[:, 5]).max()),
            float(np.abs(cell[:, 2] - cell[:, 6]).max()),
        )
        last = stop if i == part.cells - 1 else stop - 1
        cum = precommitted_gain_path(p, cell[:, 0], cell[:, 1], cell[:, 2], start, last)
        gains[start : last + 1] = cum
        values[start : stop + 1] = cell
        boundary = (cell[0, 4], cell[0, 5], cell[0, 6])
    psi = gains[:, 0]
    schedule = GainSchedule(PiecewiseGame(part), p.grid, psi, gains[:, 1] - psi, gains[:, 2] - gains[:, 1])
    paths = [MatrixPath(p.grid, np.ascontiguousarray(values[:, j])) for j in range(7)]
    return PartitionSolution(part, *paths, schedule, residual)


def identity_residual(sol: PartitionSolution) -> float:
    """Max entrywise gap in P = GammaCheck, Pi = GammaBar, Phi = GammaTilde on stored paths."""
    return max(
        float(np.abs(sol.P_D.values - sol.GammaCheck_D.values).max()),
        float(np.abs(sol.Pi_D.values - sol.GammaBar_D.values).max()),
        float(np.abs(sol.Phi_D.values - sol.GammaTilde_D.values).max()),
    )


def distance_to_limit(sol: PartitionSolution, limit: EquilibriumTriple) -> float:
    d = [
        spectral_norm(sol.Gamma_D.values - limit.Gamma.values),
        spectral_norm(sol.GammaBar_D.values - limit.GammaBar.values),
        spectral_norm(sol.GammaTilde_D.values - limit.GammaTilde.values),
    ]
    return float(max(x.max() for x in d))


def game_convergence_study(p: Problem, parts: Sequence[Partition], limit: EquilibriumTriple) -> ConvergenceReport:
    meshes = [part.mesh for part in parts]
    if any(b >= a for a, b in zip(meshes, meshes[1:])):
        raise ValueError("meshes must be strictly decreasing")
    errors, residuals, bounds = [], [], []
    for part in parts:
        sol = multiperson_game_solve(p, part)
        errors.append(distance_to_limit(sol, limit))
        residuals.append(sol.identity_residual)
        bounds.append(max_norm(sol))
    return ConvergenceReport(
        meshes,
        errors,
        fitted_rate(meshes, errors),
        details={"identity_residuals": residuals, "max_norms": bounds},
    )


def max_norm(sol: PartitionSolution) -> float:
    return float(max(spectral_norm(path.values).max() for path in sol.paths().values()))


def uniform_bounds(norms: Sequence[float], finest: int = 4) -> tuple[bool, float]:
    """Whether the finest meshes stay within 1% of the overall maximum norm.

    Returns (passed, relative excess of the finest-mesh maximum over the
    maximum of the coarser meshes).
    """
    norms = list(norms)
    overall = max(norms)
    fine = max(norms[-finest:])
    coarse = max(norms[:-finest]) if len(norms) > finest else fine
    excess = (fine - coarse) / coarse if coarse > 0 else 0.0
    return fine <= overall * 1.01 and excess < 0.01, excess


# naive rollout ---------------------------------------------------------------------


def rollout_schedule(p: Problem, part: Partition, tri: RiccatiTriple | None = None) -> GainSchedule:
    """Pre-committed gains re-anchored at the start of every cell."""
    tri = solve_precommitted_riccati(p) if tri is None else tri
    pre = precommitted_gains(p, tri, 0)
    return GainSchedule(PiecewiseGame(part), p.grid, pre.psi, pre.psi_bar, pre.psi_tilde)


def naive_partition_rollout(p: Problem, part: Partition, ip: InitialPair, sim: SimConfig, tri: RiccatiTriple | None = None):
    """Simulate the re-committing controller; returns (ensemble, controls)."""
    if ip.t != 0:
        raise ValueError("the rollout starts at time 0")
    ens = simulate_closed_loop(p, rollout_schedule(p, part, tri), ip, sim)
    return ens, ens.controls


def _controls(p: Problem, g: GainSchedule, ip: InitialPair, sim: SimConfig):
    nodes = p.grid.N + 1
    out, _ = run_observed(
        p,
        loop_from_schedule(p, g, 0),
        initial_from_pair(p, ip),
        0,
        sim,
        lambda lo, c, tau0: ControlObserver(lo, c, tau0, nodes, p.m),
    )
    return out["controls"]


def naive_convergence_study(
    p: Problem, parts: Sequence[Partition], ip: InitialPair, sim: SimConfig, tri: RiccatiTriple | None = None
) -> ConvergenceReport:
    """L2 distance between rollout controls and the limit naive loop.

    errors[k] = (E int_0^T |u_D - u|^2 ds)^{1/2} with the time integral by
    the trapezoid rule; all runs share the same random numbers.
    """
    meshes = [part.mesh for part in parts]
    if any(b >= a for a, b in zip(meshes, meshes[1:])):
        raise ValueError("meshes must be strictly decreasing")
    tri = solve_precommitted_riccati(p) if tri is None else tri
    limit = _controls(p, naive_gains(precommitted_gains(p, tri, 0)), ip, sim)
    h = p.grid.h
    w = np.full(p.grid.N + 1, h)
    w[0] = w[-1] = 0.5 * h
    errors, ses, squared = [], [], []
    for part in parts:
        u = _controls(p, rollout_schedule(p, part, tri), ip, sim)
        per_path = np.sum(np.sum((u - limit) ** 2, axis=2) * w, axis=1)
        mean_sq = float(per_path.mean())
        se_sq = float(per_path.std(ddof=1) / np.sqrt(per_path.size))
        err = np.sqrt(mean_sq)
        errors.append(float(err))
        ses.append(float(se_sq / (2 * err)) if err > 0 else 0.0)
        squared.append(mean_sq)
    return ConvergenceReport(
        meshes, errors, fitted_rate(meshes, errors), ses, details={"squared_errors": squared, "paths": sim.paths}
    )
