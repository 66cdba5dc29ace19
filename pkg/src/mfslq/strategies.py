"""Feedback gain schedules and the feedback operators they induce."""
from __future__ import annotations

from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .problem_model import Problem, TimeGrid
from .riccati import (
    EquilibriumTriple,
    RiccatiTriple,
    equilibrium_gain_path,
    precommitted_gain_path,
    write_matrix_path_csv,
)

__all__ = [
    "ScheduleError",
    "PreCommitted",
    "Naive",
    "Equilibrium",
    "PiecewiseGame",
    "GainSchedule",
    "precommitted_gains",
    "naive_gains",
    "equilibrium_gains",
    "apply_feedback",
    "loop_gains",
    "gain_difference_report",
    "write_gain_csvs",
]


class ScheduleError(ValueError):
    """A schedule was used outside its domain or with the wrong grid."""


@dataclass(frozen=True)
class PreCommitted:
    t: int  # grid index of the initial time the controller committed at
    name = "precommitted"


@dataclass(frozen=True)
class Naive:
    name = "naive"


@dataclass(frozen=True)
class Equilibrium:
    name = "equilibrium"


@dataclass(frozen=True)
class PiecewiseGame:
    partition: object  # game.Partition; kept untyped to avoid an import cycle
    name = "game"


@dataclass(frozen=True)
class GainSchedule:
    """Feedback gains on the grid.

    Pre-committed and piecewise schedules act as psi X + psi_bar E_a[X] +
    psi_tilde E[X] with a conditional anchor a; naive and equilibrium
    schedules act as psi X + psi_tilde E[X] and keep psi_bar at zero.
    """

    kind: PreCommitted | Naive | Equilibrium | PiecewiseGame
    grid: TimeGrid
    psi: np.ndarray  # (N+1, m, n)
    psi_bar: np.ndarray
    psi_tilde: np.ndarray

    @property
    def start(self) -> int:
        return self.kind.t if isinstance(self.kind, PreCommitted) else 0

    @property
    def uses_conditional_mean(self) -> bool:
        return isinstance(self.kind, (PreCommitted, PiecewiseGame))

    def components(self):
        return {"psi": self.psi, "psiBar": self.psi_bar, "psiTilde": self.psi_tilde}

    def anchors(self) -> np.ndarray:
        """Anchor node of the conditional mean used at each grid node."""
        N = self.grid.N
        if isinstance(self.kind, PiecewiseGame):
            return self.kind.partition.anchor_indices()
        return np.full(N + 1, self.start, dtype=int)


def _check_triple_grid(p: Problem, path):
    if path.grid != p.grid:
        raise ScheduleError("solution grid does not match the problem grid")


def precommitted_gains(p: Problem, tri: RiccatiTriple, t: int = 0) -> GainSchedule:
    """Optimal feedback for the problem started at node ``t``.

    The triple does not depend on the initial time, so the same values
    serve every ``t``; the kind records the commitment time, which fixes
    the anchor of the conditional mean.
    """
    _check_triple_grid(p, tri.P)
    cum = precommitted_gain_path(p, tri.P.values, tri.Pi.values, tri.Phi.values)
    psi = cum[:, 0]
    return GainSchedule(PreCommitted(int(t)), p.grid, psi, cum[:, 1] - psi, cum[:, 2] - cum[:, 1])


def naive_gains(pre: GainSchedule) -> GainSchedule:
    if not isinstance(pre.kind, PreCommitted) or pre.kind.t != 0:
        raise ScheduleError("naive gains are built from the pre-committed schedule at t=0")
    return GainSchedule(Naive(), pre.grid, pre.psi + pre.psi_bar, np.zeros_like(pre.psi_bar), pre.psi_tilde.copy())


def equilibrium_gains(p: Problem, tri: EquilibriumTriple) -> GainSchedule:
    _check_triple_grid(p, tri.Gamma)
    cum = equilibrium_gain_path(p, tri)
    psi1 = cum[:, 0]
    return GainSchedule(Equilibrium(), p.grid, psi1, np.zeros_like(psi1), cum[:, 1] - psi1)


def apply_feedback(g: GainSchedule, k: int, X, m_cond, m):
    """Control at grid node ``k``; X and m_cond may carry leading path axes."""
    if not (g.start <= k <= g.grid.N):
        raise ScheduleError(f"node {k} outside the schedule domain [{g.start}, {g.grid.N}]")
    X = np.asarray(X, dtype=float)
    u = X @ g.psi[k].T + np.asarray(m, dtype=float) @ g.psi_tilde[k].T
    if g.uses_conditional_mean:
        u = u + np.asarray(m_cond, dtype=float) @ g.psi_bar[k].T
    return u


def loop_gains(p: Problem, g: GainSchedule, t: int):
    """(Kx, Kc, Km, conditional) describing the loop started at node ``t``."""
    if g.grid != p.grid:
        raise ScheduleError("schedule grid does not match the problem grid")
    if isinstance(g.kind, PreCommitted):
        if g.kind.t != t:
            raise ScheduleError(f"schedule committed at node {g.kind.t} cannot be run from node {t}")
        return g.psi, g.psi_bar, g.psi_tilde, True
    if isinstance(g.kind, PiecewiseGame):
        if len(g.kind.partition.indices) == 2 and t == 0:
            return g.psi, g.psi_bar, g.psi_tilde, True
        raise ScheduleError("no closed-form cost for a loop whose anchor moves")
    return g.psi, np.zeros_like(g.psi_bar), g.psi_tilde, False


def gain_difference_report(a: GainSchedule, b: GainSchedule) -> dict:
    """Largest entrywise differences between the (Psi1, Psi2) forms of two schedules.

    For pre-committed or piecewise schedules Psi1 = psi + psi_bar.
    """

    def pair(g):
        if g.uses_conditional_mean:
            return g.psi + g.psi_bar, g.psi_tilde
        return g.psi, g.psi_tilde

    a1, a2 = pair(a)
    b1, b2 = pair(b)
    d1 = np.abs(a1 - b1).max(axis=(1, 2))
    d2 = np.abs(a2 - b2).max(axis=(1, 2))
    return {
        "max_psi1": float(d1.max()),
        "max_psi2": float(d2.max()),
        "argmax_psi1_time": float(a.grid.time(int(d1.argmax()))),
        "argmax_psi2_time": float(a.grid.time(int(d2.argmax()))),
    }


def write_gain_csvs(g: GainSchedule, out_dir, prefix: str):
    """One CSV per gain component, named <prefix>_<component>.csv."""
    out = Path(out_dir)
    files = []
    for name, values in g.components().items():
        f = out / f"{prefix}_{name}.csv"
        write_matrix_path_csv(values, f, g.grid)
        files.append(f)
    return files
