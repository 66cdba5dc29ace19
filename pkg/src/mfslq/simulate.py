"""Monte Carlo simulation of linear mean-field closed loops.

The state is advanced by Euler-Maruyama on the problem grid.  The mean
E[X] and the conditional means E_a[X] (anchored at a node a) are not
estimated from the sample: they are propagated by the Euler recursion of
their own drift equations, which is exactly the expectation of the
discrete state recursion.  A path with no noise therefore coincides with
the mean path bit for bit.

All per-path arithmetic is elementwise (no BLAS calls), so results do not
depend on how the paths are split into chunks or threads.
"""
from __future__ import annotations

import json
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from . import _rng
from ._linalg import sqrtm_psd
from .problem_model import Deterministic, Gaussian, InitialPair, Problem, ProblemError
from .strategies import Equilibrium, GainSchedule, Naive, PreCommitted, ScheduleError

__all__ = [
    "SimulationError",
    "SimConfig",
    "PathEnsemble",
    "CostEstimate",
    "AffineControl",
    "BrownianAffineControl",
    "simulate_closed_loop",
    "simulate_perturbed",
    "simulate_open_loop",
    "estimate_cost",
    "path_costs",
    "write_summary_csv",
    "dump_ensemble",
]


class SimulationError(ArithmeticError):
    def __init__(self, message, path=None, step=None):
        super().__init__(message)
        self.path = path
        self.step = step


@dataclass(frozen=True)
class SimConfig:
    """Monte Carlo settings.

    ``t0`` is the start node; ``workers`` and ``chunk`` control how paths
    are split for execution and never change the numbers produced.
    """

    paths: int = 1000
    seed: int = 0
    t0: int = 0
    antithetic: bool = False
    workers: int = 1
    chunk: int | None = None

    def __post_init__(self):
        if self.paths < 2:
            raise ValueError("at least two paths are required")
        if self.antithetic and self.paths % 2:
            raise ValueError("antithetic sampling needs an even path count")
        if not (0 <= self.seed < 2**64):
            raise ValueError("seed must fit in 64 bits")

    def with_(self, **changes) -> "SimConfig":
        values = {k: getattr(self, k) for k in ("paths", "seed", "t0", "antithetic", "workers", "chunk")}
        values.update(changes)
        return SimConfig(**values)


@dataclass
class PathEnsemble:
    """Simulated paths on nodes start..N (local index j = k - start).

    ``cond_means`` holds E_a[X] for the anchor a = anchors[k] that the loop
    uses; ``start_means`` holds E_start[X], the conditional mean entering
    the cost from the start node (the same array when the anchor is fixed).
    """

    grid: object
    start: int
    states: np.ndarray  # (paths, nodes, n)
    cond_means: np.ndarray
    start_means: np.ndarray
    mean: np.ndarray  # (nodes, n)
    controls: np.ndarray  # (paths, nodes, m)
    increments: np.ndarray  # (paths, nodes - 1)
    anchors: np.ndarray  # (nodes,) anchor node per node
    seed: int = 0
    tau_means: np.ndarray | None = None
    meta: dict = field(default_factory=dict)

    @property
    def paths(self) -> int:
        return self.states.shape[0]

    @property
    def times(self) -> np.ndarray:
        return self.grid.nodes[self.start :]

    def at(self, k: int):
        return self.states[:, k - self.start]


@dataclass(frozen=True)
class CostEstimate:
    value: float
    std_error: float
    paths: int


@dataclass(frozen=True)
class AffineControl:
    """F_t-measurable control u = Kx X(t) + Km E[X(t)] + c, frozen over a window."""

    Kx: np.ndarray
    Km: np.ndarray
    c: np.ndarray

    @classmethod
    def constant(cls, value, n):
        value = np.atleast_1d(np.asarray(value, dtype=float))
        m = value.size
        return cls(np.zeros((m, n)), np.zeros((m, n)), value)

    def values(self, X, mean):
        return _apply(X, self.Kx) + (self.Km @ mean + self.c)

    def expectation(self, mean):
        return (self.Kx + self.Km) @ mean + self.c


@dataclass(frozen=True)
class BrownianAffineControl:
    """u(s) = offset + slope (s - t) + noise (W(s) - W(t)) for s >= t.

    Its conditional mean given the information at t, and its mean, are
    offset + slope (s - t).
    """

    offset: np.ndarray
    slope: np.ndarray
    noise: np.ndarray


# elementwise helpers -----------------------------------------------------------


def _apply(X, M):
    """X @ M.T for a stack of row vectors, computed without BLAS."""
    out = X[..., 0:1] * M[:, 0]
    for j in range(1, M.shape[1]):
        out = out + X[..., j : j + 1] * M[:, j]
    return out


def _quad(X, M):
    """<M x, x> for each row x of X."""
    return np.sum(_apply(X, M) * X, axis=-1)


# loop description --------------------------------------------------------------


@dataclass
class _Loop:
    """Per-node closed-loop coefficients.

    drift = Ax X + Ac E_a[X] + Am E[X] + B w, diffusion likewise with the
    C-matrices and D, control = Kx X + Kc E_a[X] + Km E[X] + w, where w is
    an optional open-loop term.
    """

    Ax: np.ndarray
    Ac: np.ndarray
    Am: np.ndarray
    Cx: np.ndarray
    Cc: np.ndarray
    Cm: np.ndarray
    Kx: np.ndarray
    Kc: np.ndarray
    Km: np.ndarray
    B: np.ndarray
    D: np.ndarray
    anchors: np.ndarray
    window: AffineControl | None = None  # active on nodes [window_start, window_stop)
    window_start: int = 0
    window_stop: int = 0
    window_mean: np.ndarray | None = None
    brownian: BrownianAffineControl | None = None
    scale: float = 1.0  # multiplier on the Brownian open-loop term


def loop_from_schedule(p: Problem, g: GainSchedule, start: int) -> _Loop:
    if g.grid != p.grid:
        raise ScheduleError("schedule grid does not match the problem grid")
    if start < g.start:
        raise ScheduleError(f"schedule starts at node {g.start}, simulation at {start}")
    gp = p.path
    B, D = gp("B"), gp("D")
    if g.uses_conditional_mean:
        Ax, Ac = gp("A") + B @ g.psi, gp("Abar") + B @ g.psi_bar
        Cx, Cc = gp("C") + D @ g.psi, gp("Cbar") + D @ g.psi_bar
        Kc = g.psi_bar
    else:
        Ax, Ac = gp("A") + gp("Abar") + B @ g.psi, np.zeros((p.grid.N + 1, p.n, p.n))
        Cx, Cc = gp("C") + gp("Cbar") + D @ g.psi, np.zeros((p.grid.N + 1, p.n, p.n))
        Kc = np.zeros_like(g.psi_bar)
    anchors = g.anchors().copy()
    if isinstance(g.kind, (PreCommitted, Naive, Equilibrium)):
        anchors[:] = start
    return _Loop(
        Ax=Ax,
        Ac=Ac,
        Am=gp("Atilde") + B @ g.psi_tilde,
        Cx=Cx,
        Cc=Cc,
        Cm=gp("Ctilde") + D @ g.psi_tilde,
        Kx=g.psi,
        Kc=Kc,
        Km=g.psi_tilde,
        B=B,
        D=D,
        anchors=anchors,
    )


def uncontrolled_loop(p: Problem, start: int) -> _Loop:
    gp = p.path
    zeros = np.zeros((p.grid.N + 1, p.m, p.n))
    return _Loop(
        Ax=np.array(gp("A")),
        Ac=np.array(gp("Abar")),
        Am=np.array(gp("Atilde")),
        Cx=np.array(gp("C")),
        Cc=np.array(gp("Cbar")),
        Cm=np.array(gp("Ctilde")),
        Kx=zeros,
        Kc=zeros,
        Km=zeros,
        B=gp("B"),
        D=gp("D"),
        anchors=np.full(p.grid.N + 1, start, dtype=int),
    )


# initial states ----------------------------------------------------------------


@dataclass(frozen=True)
class _Initial:
    """Initial state at the start node.

    Either a distribution (``xi``) or explicit per-path values carried over
    from an earlier simulation segment.
    """

    mean: np.ndarray
    xi: Deterministic | Gaussian | None = None
    values: np.ndarray | None = None

    def draw(self, sim: SimConfig, lo: int, count: int):
        """Return (X0, E_tau[X0]) for paths lo..lo+count-1."""
        if self.values is not None:
            x = self.values[lo : lo + count]
            return x, x
        xi = self.xi
        n = self.mean.size
        if isinstance(xi, Deterministic):
            x = np.broadcast_to(xi.value, (count, n)).copy()
            return x, x
        z1 = _rng.path_normals(sim.seed, _rng.INITIAL_STREAM, lo, count, n, sim.antithetic)
        known = xi.mean + _apply(z1, sqrtm_psd(xi.cov_tau))
        rest = xi.cov - xi.cov_tau
        if np.any(rest != 0):
            z2 = _rng.path_normals(sim.seed, _rng.INITIAL_STREAM + 1, lo, count, n, sim.antithetic)
            return known + _apply(z2, sqrtm_psd(rest)), known
        return known, known


def initial_from_pair(p: Problem, ip: InitialPair) -> _Initial:
    ip.check(p)
    return _Initial(mean=np.array(ip.xi.mean, dtype=float), xi=ip.xi)


# core recursion -----------------------------------------------------------------


def _mean_path(p: Problem, loop: _Loop, start: int, mean0, stop=None):
    h = p.grid.h
    N = p.grid.N if stop is None else stop
    m = np.empty((N - start + 1, p.n))
    m[0] = mean0
    for k in range(start, N):
        j = k - start
        drift = (loop.Ax[k] + loop.Ac[k] + loop.Am[k]) @ m[j]
        w = _open_loop_mean(loop, k, m[j], start, p.grid)
        if w is not None:
            drift = drift + loop.B[k] @ w
        m[j + 1] = m[j] + h * drift
    return m


def _open_loop_mean(loop: _Loop, k, mean_k, start, grid):
    w = None
    if loop.window is not None and loop.window_start <= k < loop.window_stop:
        w = loop.window_mean
    if loop.brownian is not None:
        b = loop.brownian
        wb = loop.scale * (b.offset + b.slope * (grid.time(k) - grid.time(start)))
        w = wb if w is None else w + wb
    return w


class Observer:
    """Receives the per-node quantities of one chunk of paths.

    ``visit`` is called at every node k = start..stop with the state X,
    the conditional mean at the loop anchor ``e``, the conditional mean at
    the start node ``f``, the mean ``m``, the control ``u`` and the
    Brownian increment ``dW`` of the step leaving node k (None at the last
    node).  ``finish`` returns a dict of arrays whose first axis is the
    path axis; chunks are joined by concatenation.
    """

    def __init__(self, lo, count, tau0):
        self.lo, self.count, self.tau0 = lo, count, tau0

    def visit(self, k, j, X, e, f, m, u, dW):
        raise NotImplementedError

    def finish(self) -> dict:
        raise NotImplementedError


class _Recorder(Observer):
    def __init__(self, lo, count, tau0, nodes, n, mdim, moving):
        super().__init__(lo, count, tau0)
        self.states = np.empty((count, nodes, n))
        self.conds = np.empty((count, nodes, n))
        self.starts = np.empty((count, nodes, n)) if moving else self.conds
        self.controls = np.empty((count, nodes, mdim))
        self.incs = np.empty((count, nodes - 1))
        self.moving = moving

    def visit(self, k, j, X, e, f, m, u, dW):
        self.states[:, j] = X
        self.conds[:, j] = e
        if self.moving:
            self.starts[:, j] = f
        self.controls[:, j] = u
        if dW is not None:
            self.incs[:, j] = dW[:, 0]

    def finish(self):
        return {
            "states": self.states,
            "conds": self.conds,
            "starts": self.starts,
            "controls": self.controls,
            "incs": self.incs,
            "tau0": self.tau0,
        }


class _FinalState(Observer):
    def visit(self, k, j, X, e, f, m, u, dW):
        self.X = X

    def finish(self):
        return {"X": self.X}


class CostObserver(Observer):
    """Accumulates the realized cost of each path from the start node.

    State terms use the trapezoid rule.  The control term uses the same
    rule by default; with ``left_control`` it uses the left-point rule,
    which is exact for the simulated control (held constant over each
    step) and avoids an O(h) error where the control jumps.
    """

    def __init__(self, lo, count, tau0, p: Problem, start: int, left_control: bool = False):
        super().__init__(lo, count, tau0)
        self.p, self.start = p, start
        self.left_control = left_control
        self.total = np.zeros(count)

    def visit(self, k, j, X, e, f, m, u, dW):
        p = self.p
        gp = p.path
        h = p.grid.h
        N = p.grid.N
        w = 0.5 * h if (k == self.start or k == N) else h
        running = _quad(X, gp("Q")[k]) + _quad(f, gp("Qbar")[k]) + float(m @ gp("Qtilde")[k] @ m)
        if self.left_control:
            running = w * running + (h * _quad(u, gp("R")[k]) if k < N else 0.0)
        else:
            running = w * (running + _quad(u, gp("R")[k]))
        self.total += running
        if k == N:
            self.total += _quad(X, p.terminal("G")) + _quad(f, p.terminal("Gbar")) + float(m @ p.terminal("Gtilde") @ m)

    def finish(self):
        return {"cost": self.total}


class ControlObserver(Observer):
    """Keeps only the controls, shape (paths, nodes, m)."""

    def __init__(self, lo, count, tau0, nodes, mdim):
        super().__init__(lo, count, tau0)
        self.u = np.empty((count, nodes, mdim))

    def visit(self, k, j, X, e, f, m, u, dW):
        self.u[:, j] = u

    def finish(self):
        return {"controls": self.u}


def _block(p: Problem, loop: _Loop, init: _Initial, mean, start, stop, sim: SimConfig, lo, count, make_observer):
    grid = p.grid
    h = grid.h
    mdim = p.m
    X, tau0 = init.draw(sim, lo, count)
    X = np.array(X, dtype=float)
    obs = make_observer(lo, count, tau0)
    anchors = loop.anchors
    moving = bool(np.any(anchors[start : stop + 1] != start))
    e = X.copy()  # conditional mean at the current anchor
    f = X.copy() if moving else e  # conditional mean at the start node
    window_u = None
    if loop.window is not None:
        window_u = loop.window.values(X, mean[0])
    W = np.zeros((count, 1))
    sqrt_h = np.sqrt(h)
    for k in range(start, stop + 1):
        j = k - start
        if k > start and anchors[k] == k:
            e = X.copy()
        mk = mean[j]
        u = _apply(X, loop.Kx[k]) + _apply(e, loop.Kc[k]) + loop.Km[k] @ mk
        open_u = None  # open-loop part of the control
        u_cond = None  # its conditional mean given the anchor
        if window_u is not None and loop.window_start <= k < loop.window_stop:
            open_u, u_cond = window_u, window_u
        if loop.brownian is not None:
            b = loop.brownian
            level = loop.scale * (b.offset + b.slope * (grid.time(k) - grid.time(start)))
            wb = level + loop.scale * W * b.noise
            open_u = wb if open_u is None else open_u + wb
            u_cond = level if u_cond is None else u_cond + level
        if open_u is not None:
            u = u + open_u
        if k == stop:
            obs.visit(k, j, X, e, f, mk, u, None)
            break
        dW = sqrt_h * _rng.path_normals(sim.seed, k, lo, count, 1, sim.antithetic)
        obs.visit(k, j, X, e, f, mk, u, dW)
        drift = _apply(X, loop.Ax[k]) + _apply(e, loop.Ac[k]) + loop.Am[k] @ mk
        diff = _apply(X, loop.Cx[k]) + _apply(e, loop.Cc[k]) + loop.Cm[k] @ mk
        collapsed = loop.Ax[k] + loop.Ac[k]
        e_next = e + h * (_apply(e, collapsed) + loop.Am[k] @ mk)
        if open_u is not None:
            drift = drift + _apply(open_u, loop.B[k])
            diff = diff + _apply(open_u, loop.D[k])
            e_next = e_next + h * _apply(np.broadcast_to(u_cond, (count, mdim)), loop.B[k])
        if moving:
            f = f + h * (_apply(f, collapsed) + loop.Am[k] @ mk)
        X = X + h * drift + diff * dW
        e = e_next
        if not moving:
            f = e
        W = W + dW
        if not np.isfinite(X).all():
            bad = int(np.argwhere(~np.isfinite(X).all(axis=1))[0, 0])
            raise SimulationError(f"non-finite state on path {lo + bad} at step {k}", lo + bad, k)
    return obs.finish()


def _chunks(sim: SimConfig):
    size = sim.chunk or sim.paths
    if sim.antithetic and size % 2:
        size += 1
    return [(lo, min(size, sim.paths - lo)) for lo in range(0, sim.paths, size)]


def run_observed(p: Problem, loop: _Loop, init: _Initial, start: int, sim: SimConfig, make_observer, stop=None):
    """Run the recursion on nodes start..stop; returns (joined observer output, mean path)."""
    stop = p.grid.N if stop is None else stop
    mean = _mean_path(p, loop, start, init.mean, stop)
    chunks = _chunks(sim)

    def job(c):
        return _block(p, loop, init, mean, start, stop, sim, c[0], c[1], make_observer)

    if sim.workers > 1 and len(chunks) > 1:
        with ThreadPoolExecutor(max_workers=sim.workers) as pool:
            parts = list(pool.map(job, chunks))
    else:
        parts = [job(c) for c in chunks]
    joined = {key: np.concatenate([q[key] for q in parts]) for key in parts[0]}
    return joined, mean


def _run(p: Problem, loop: _Loop, init: _Initial, start: int, sim: SimConfig) -> PathEnsemble:
    N = p.grid.N
    moving = bool(np.any(loop.anchors[start:] != start))
    nodes = N - start + 1

    def make(lo, count, tau0):
        return _Recorder(lo, count, tau0, nodes, p.n, p.m, moving)

    out, mean = run_observed(p, loop, init, start, sim, make)
    return PathEnsemble(
        grid=p.grid,
        start=start,
        states=out["states"],
        cond_means=out["conds"],
        start_means=out["starts"] if moving else out["conds"],
        mean=mean,
        controls=out["controls"],
        increments=out["incs"],
        anchors=loop.anchors[start:].copy(),
        seed=sim.seed,
        tau_means=out["tau0"],
    )


# public simulations ---------------------------------------------------------------


def simulate_closed_loop(p: Problem, g: GainSchedule, ip: InitialPair, sim: SimConfig) -> PathEnsemble:
    """Simulate the loop induced by ``g`` from the initial pair."""
    if ip.t != sim.t0:
        raise ProblemError(f"initial node {ip.t} differs from the simulation start {sim.t0}")
    loop = loop_from_schedule(p, g, ip.t)
    return _run(p, loop, initial_from_pair(p, ip), ip.t, sim)


def segment_state(p: Problem, g: GainSchedule, ip: InitialPair, t: int, sim: SimConfig) -> _Initial:
    """Per-path state at node t after running ``g`` from the initial pair."""
    if t == ip.t:
        return initial_from_pair(p, ip)
    if t < ip.t:
        raise ProblemError("perturbation time precedes the initial time")
    loop = loop_from_schedule(p, g, ip.t)
    out, mean = run_observed(
        p, loop, initial_from_pair(p, ip), ip.t, sim.with_(t0=ip.t), lambda lo, c, tau0: _FinalState(lo, c, tau0), stop=t
    )
    return _Initial(mean=mean[-1], values=out["X"])


def perturbed_setup(
    p: Problem, g: GainSchedule, ip: InitialPair, t: int, eps: float, u_const, sim: SimConfig, init: _Initial | None = None
):
    """Loop and initial state of the perturbed system; see ``simulate_perturbed``.

    ``init`` reuses a state at t computed earlier by ``segment_state``.
    """
    if not isinstance(g.kind, Equilibrium):
        raise ScheduleError("perturbation analysis applies to the equilibrium schedule")
    steps = p.grid.steps(eps)
    if t + steps > p.grid.N:
        raise ProblemError("perturbation window extends past the horizon")
    control = u_const if isinstance(u_const, AffineControl) else AffineControl.constant(u_const, p.n)
    if control.c.shape != (p.m,):
        raise ProblemError(f"control has length {control.c.size}, expected {p.m}")
    if init is None:
        init = segment_state(p, g, ip, t, sim.with_(t0=ip.t))
    loop = loop_from_schedule(p, g, t)
    if steps:
        free = uncontrolled_loop(p, t)
        window = slice(t, t + steps)
        for name in ("Ax", "Ac", "Am", "Cx", "Cc", "Cm", "Kx", "Kc", "Km"):
            arr = np.array(getattr(loop, name))
            arr[window] = getattr(free, name)[window]
            setattr(loop, name, arr)
        loop.window = control
        loop.window_start, loop.window_stop = t, t + steps
        loop.window_mean = control.expectation(init.mean)
    return loop, init


def simulate_perturbed(
    p: Problem,
    g: GainSchedule,
    ip: InitialPair,
    t: int,
    eps: float,
    u_const,
    sim: SimConfig,
) -> PathEnsemble:
    """Hold an F_t-measurable control on [t, t+eps), then follow ``g``.

    ``u_const`` is a constant vector or an ``AffineControl`` evaluated at
    the state X(t).  During the window the uncontrolled dynamics keep
    their E_t and E terms (anchor t).  The state at t is produced by
    running ``g`` from the initial pair with the same random numbers, so
    results are directly comparable with the unperturbed loop.
    """
    loop, init = perturbed_setup(p, g, ip, t, eps, u_const, sim)
    return _run(p, loop, init, t, sim.with_(t0=t))


def simulate_open_loop(
    p: Problem,
    g: GainSchedule | None,
    ip: InitialPair,
    sim: SimConfig,
    brownian: BrownianAffineControl | None = None,
    scale: float = 1.0,
    zero_start: bool = False,
) -> PathEnsemble:
    """Simulate the state under a feedback schedule plus an open-loop term.

    With ``g`` None the feedback part is absent.  With ``zero_start`` the
    initial state is zero, which gives the response to the open-loop term
    alone (the difference process of a perturbed control).
    """
    start = ip.t
    loop = uncontrolled_loop(p, start) if g is None else loop_from_schedule(p, g, start)
    loop.brownian = brownian
    loop.scale = scale
    init = _Initial(mean=np.zeros(p.n), xi=Deterministic(np.zeros(p.n))) if zero_start else initial_from_pair(p, ip)
    return _run(p, loop, init, start, sim.with_(t0=start))


# costs ------------------------------------------------------------------------------


def path_costs(p: Problem, ens: PathEnsemble, t: int | None = None, left_control: bool = False) -> np.ndarray:
    """Per-path realized cost from node t (default: the ensemble start).

    E_t[X] is taken from the conditional means anchored at the start node,
    so t must be that node.  ``left_control`` integrates the control term
    with the left-point rule, as in ``CostObserver``.
    """
    t = ens.start if t is None else t
    if t != ens.start:
        raise ProblemError(f"costs from node {t} need an ensemble started at {t}, got {ens.start}")
    h = p.grid.h
    N = p.grid.N
    X, E, M, U = ens.states, ens.start_means, ens.mean, ens.controls
    nodes = N - t + 1
    if X.shape[1] != nodes:
        raise ProblemError("ensemble does not cover [t, T]")
    gp = p.path
    sl = slice(t, N + 1)

    def form(V, W):
        return np.einsum("pji,jik,pjk->pj", V, W[sl], V)

    running = form(X, gp("Q")) + form(E, gp("Qbar"))
    running += np.einsum("ji,jik,jk->j", M, gp("Qtilde")[sl], M)
    weights = np.full(nodes, h)
    weights[0] = weights[-1] = 0.5 * h
    control = form(U, gp("R"))
    if left_control:
        left = np.full(nodes, h)
        left[-1] = 0.0
        control_cost = np.sum(control * left, axis=1)
    else:
        control_cost = np.sum(control * weights, axis=1)
    mT = M[-1]
    terminal = (
        _quad(X[:, -1], p.terminal("G")) + _quad(E[:, -1], p.terminal("Gbar")) + float(mT @ p.terminal("Gtilde") @ mT)
    )
    return np.sum(running * weights, axis=1) + control_cost + terminal


def summarize(values: np.ndarray) -> CostEstimate:
    values = np.asarray(values, dtype=float)
    n = values.size
    return CostEstimate(float(np.mean(values)), float(np.std(values, ddof=1) / np.sqrt(n)) if n > 1 else 0.0, n)


def estimate_cost(p: Problem, ens: PathEnsemble, t: int | None = None) -> CostEstimate:
    return summarize(path_costs(p, ens, t))


# export --------------------------------------------------------------------------------


def write_summary_csv(ens: PathEnsemble, filename, quantiles=(0.05, 0.5, 0.95)):
    """Per node and state component: analytic mean, sample mean, std, quantiles."""
    X = ens.states
    sample_mean = X.mean(axis=0)
    sample_std = X.std(axis=0, ddof=1)
    qs = np.quantile(X, quantiles, axis=0)
    fmt = lambda x: format(float(x), ".17g")  # noqa: E731
    with open(filename, "w") as fh:
        cols = ["s"]
        for i in range(X.shape[2]):
            cols += [f"mean_{i}", f"sample_mean_{i}", f"std_{i}"] + [f"q{int(round(100 * q)):02d}_{i}" for q in quantiles]
        fh.write(",".join(cols) + "\n")
        for j, s in enumerate(ens.times):
            row = [fmt(s)]
            for i in range(X.shape[2]):
                row += [fmt(ens.mean[j, i]), fmt(sample_mean[j, i]), fmt(sample_std[j, i])]
                row += [fmt(qs[q, j, i]) for q in range(len(quantiles))]
            fh.write(",".join(row) + "\n")


def dump_ensemble(ens: PathEnsemble, stem):
    """Write states as little-endian float64 binary plus a JSON sidecar."""
    stem = Path(stem)
    data = np.ascontiguousarray(ens.states, dtype="<f8")
    data.tofile(stem.with_suffix(".bin"))
    side = {
        "shape": list(data.shape),
        "dtype": "float64-le",
        "order": "paths, nodes, components",
        "seed": ens.seed,
        "start_time": float(ens.grid.time(ens.start)),
        "step": ens.grid.h,
    }
    stem.with_suffix(".json").write_text(json.dumps(side, indent=1))
    return stem.with_suffix(".bin"), stem.with_suffix(".json")
