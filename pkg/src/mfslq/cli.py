"""Command-line front end.

    mfslq <subcommand> --problem cfg.json --out DIR [options]

Subcommands: solve, gains, simulate, cost, verify, converge, compare.
Time series go to CSV, reports to JSON.  Failures print one JSON object
per line on stderr.  Exit status: 0 when every requested check passes,
1 when a check fails, 2 on errors.
"""
from __future__ import annotations

import argparse
import json
import sys
from dataclasses import asdict, dataclass, field
from pathlib import Path

import numpy as np

from . import game, riccati, strategies, verify
from .problem_model import InitialPair, Problem, initial_from_dict, load_problem, validate_assumptions
from .simulate import (
    AffineControl,
    SimConfig,
    estimate_cost,
    simulate_closed_loop,
    write_summary_csv,
)

SUBCOMMANDS = ("solve", "gains", "simulate", "cost", "verify", "converge", "compare")
KINDS = ("pre", "naive", "eq", "game")


@dataclass
class RunSpec:
    subcommand: str
    problem_path: str
    out_dir: str
    overrides: dict = field(default_factory=dict)


def _floats(text):
    return [float(x) for x in text.split(",") if x.strip()]


def _meshes(text):
    """Comma list of mesh sizes; "T/k" means k equal cells."""
    out = []
    for item in text.split(","):
        item = item.strip()
        if not item:
            continue
        out.append(("cells", int(item[2:])) if item.upper().startswith("T/") else ("mesh", float(item)))
    return out


def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="mfslq", description="LQ mean-field control with conditional expectations")
    ap.add_argument("subcommand", choices=SUBCOMMANDS)
    ap.add_argument("--problem", required=True, help="problem config (JSON)")
    ap.add_argument("--out", default="out", help="output directory")
    ap.add_argument("--seed", type=int, default=0)
    ap.add_argument("--paths", type=int, default=2000)
    ap.add_argument("--steps", type=int, default=None, help="override the number of grid steps N")
    ap.add_argument("--t", type=float, default=0.0, help="initial (or perturbation) time")
    ap.add_argument("--eps", type=_floats, default=None, help="comma list of window lengths")
    ap.add_argument("--meshes", type=_meshes, default=None, help="comma list, e.g. T/4,T/8 or 0.25,0.125")
    ap.add_argument("--kind", choices=KINDS, default=None)
    ap.add_argument("--workers", type=int, default=1, help="threads for path simulation")
    return ap


def _spec_from_args(args) -> RunSpec:
    over = {k: getattr(args, k) for k in ("seed", "paths", "steps", "t", "eps", "meshes", "kind", "workers")}
    return RunSpec(args.subcommand, args.problem, args.out, over)


# shared setup --------------------------------------------------------------------


class _Context:
    def __init__(self, spec: RunSpec):
        self.spec = spec
        self.o = spec.overrides
        path = Path(spec.problem_path)
        if not path.exists():
            raise FileNotFoundError(f"problem config not found: {path}")
        doc = json.loads(path.read_text())
        p = load_problem(doc)
        if self.o.get("steps"):
            p = p.with_steps(int(self.o["steps"]))
        self.p: Problem = p
        self.out = Path(spec.out_dir)
        self.out.mkdir(parents=True, exist_ok=True)
        self.t = p.grid.index_of(float(self.o.get("t") or 0.0))
        self.xi = initial_from_dict(doc.get("initial"), p.n)
        self._pre = self._eq = None

    def sim(self, t0=0):
        paths = int(self.o.get("paths") or 2000)
        workers = int(self.o.get("workers") or 1)
        chunk = -(-paths // workers) if workers > 1 else None
        return SimConfig(paths=paths, seed=int(self.o.get("seed") or 0), t0=t0, workers=workers, chunk=chunk)

    @property
    def pre(self):
        if self._pre is None:
            self._pre = riccati.solve_precommitted_riccati(self.p)
        return self._pre

    @property
    def eq(self):
        if self._eq is None:
            self._eq = riccati.solve_equilibrium_riccati(self.p)
        return self._eq

    def partitions(self):
        grid = self.p.grid
        spec = self.o.get("meshes") or [("cells", c) for c in (4, 8, 16, 32) if grid.N % c == 0]
        parts = []
        for how, value in spec:
            cells = value if how == "cells" else int(round(grid.T / value))
            parts.append(game.Partition.uniform(grid, cells))
        return parts

    def schedule(self, kind, t=0):
        p = self.p
        if kind == "pre":
            return strategies.precommitted_gains(p, self.pre, t)
        if kind == "naive":
            return strategies.naive_gains(strategies.precommitted_gains(p, self.pre, 0))
        if kind == "eq":
            return strategies.equilibrium_gains(p, self.eq)
        return game.multiperson_game_solve(p, self.partitions()[-1]).gains_D

    def write_json(self, name, doc):
        (self.out / name).write_text(json.dumps(verify._jsonable(doc), indent=1) + "\n")


def _fmt(x) -> str:
    return format(float(x), ".17g")


# subcommands ----------------------------------------------------------------------


def cmd_solve(c: _Context):
    for name, path in list(c.pre.paths().items()) + list(c.eq.paths().items()):
        riccati.write_matrix_path_csv(path, c.out / f"{name}.csv")
    c.write_json("validation.json", asdict(validate_assumptions(c.p)))
    return []


def cmd_gains(c: _Context):
    pre = strategies.precommitted_gains(c.p, c.pre, 0)
    naive = strategies.naive_gains(pre)
    eq = strategies.equilibrium_gains(c.p, c.eq)
    for prefix, g in (("pre", pre), ("naive", naive), ("eq", eq)):
        strategies.write_gain_csvs(g, c.out, prefix)
    c.write_json("gain_differences.json", {"naive_vs_eq": strategies.gain_difference_report(naive, eq)})
    return []


def cmd_simulate(c: _Context):
    kind = c.o.get("kind") or "pre"
    if kind != "pre" and c.t != 0:
        raise ValueError(f"the {kind} loop is simulated from time 0")
    g = c.schedule(kind, c.t)
    ens = simulate_closed_loop(c.p, g, InitialPair(c.t, c.xi), c.sim(c.t))
    write_summary_csv(ens, c.out / f"summary_{kind}.csv")
    est = estimate_cost(c.p, ens)
    c.write_json(f"summary_{kind}.json", {"kind": kind, "cost": est.value, "std_error": est.std_error, "paths": est.paths})
    return []


def _cost_row(c: _Context, kind, t):
    g = c.schedule(kind, t)
    ip = InitialPair(t, c.xi)
    est = estimate_cost(c.p, simulate_closed_loop(c.p, g, ip, c.sim(t)))
    try:
        analytic = riccati.closed_loop_cost_quadratic(c.p, g, ip)
    except strategies.ScheduleError:
        analytic = float("nan")  # the anchor moves between cells: no closed form
    return est, analytic


def cmd_cost(c: _Context):
    kinds = [c.o["kind"]] if c.o.get("kind") else ["pre", "naive", "eq"]
    lines = ["kind,mc_cost,std_error,analytic_cost,paths"]
    for kind in kinds:
        est, analytic = _cost_row(c, kind, c.t if kind == "pre" else 0)
        lines.append(f"{kind},{_fmt(est.value)},{_fmt(est.std_error)},{_fmt(analytic)},{est.paths}")
    (c.out / "cost.csv").write_text("\n".join(lines) + "\n")
    return []


def cmd_compare(c: _Context):
    rows = {}
    for kind in ("pre", "naive", "eq"):
        rows[kind] = _cost_row(c, kind, 0)
    base = rows["pre"][1]
    lines = ["kind,mc_cost,std_error,analytic_cost,excess_over_precommitted"]
    for kind, (est, analytic) in rows.items():
        lines.append(f"{kind},{_fmt(est.value)},{_fmt(est.std_error)},{_fmt(analytic)},{_fmt(analytic - base)}")
    (c.out / "compare.csv").write_text("\n".join(lines) + "\n")
    return []


def cmd_verify(c: _Context):
    p = c.p
    t = c.t
    reports = []
    psd = {**{f"pre_{k}": v for k, v in c.pre.paths().items()}, **{f"eq_{k}": v for k, v in c.eq.paths().items()}}
    reports.append(verify.check_psd_invariants(psd))
    if p.has_conditional_terms():
        reports.append(verify.CheckReport("reductions", 0.0, 0.0, True, {"skipped": "conditional-expectation terms present"}))
    else:
        reports.append(verify.check_reductions(p))
    ip = InitialPair(t, c.xi)
    sim = c.sim(t)
    pre_t = strategies.precommitted_gains(p, c.pre, t)
    ens = simulate_closed_loop(p, pre_t, ip, sim)
    reports.append(verify.check_stationarity(p, c.pre, ens))
    lams = [-1.0, -0.5, -0.25, 0.25, 0.5, 1.0]
    for i, v in enumerate(verify.random_perturbations(int(c.o.get("seed") or 0), p.m, 3, horizon=p.grid.T - p.grid.time(t))):
        r = verify.check_convexity_perturbation(p, t, c.xi, lams, v, sim, c.pre, base=ens)
        r.name = f"convexity_{i}"
        reports.append(r)
    Kx, Kc, Km, cond = strategies.loop_gains(p, pre_t, t)
    inp = riccati.closed_loop_lyapunov_input(p, Kx, Kc, Km, cond, t)
    reports.append(verify.check_representation(p, inp, ip, sim))
    eps = c.o.get("eps") or [4 * p.grid.h, 2 * p.grid.h]
    t_loc = t if t + p.grid.steps(max(eps)) <= p.grid.N else 0
    g_eq = strategies.equilibrium_gains(p, c.eq)
    cands = [
        verify.equilibrium_control_at(g_eq, t_loc),
        AffineControl(g_eq.psi[t_loc] + np.eye(p.m, p.n), g_eq.psi_tilde[t_loc], np.ones(p.m)),
        np.ones(p.m),
    ]
    reports.append(
        verify.check_equilibrium_local_optimality(p, c.eq, t_loc, cands, eps, sim.with_(t0=0), InitialPair(0, c.xi))
    )
    for part in c.partitions():
        r = verify.check_game_identities(game.multiperson_game_solve(p, part))
        r.name = f"game_identities_{part.cells}"
        reports.append(r)
    verify.write_reports(reports, c.out / "verify.json")
    return reports


def cmd_converge(c: _Context):
    kind = c.o.get("kind")
    parts = c.partitions()
    reports = []
    if kind in (None, "pre", "game", "eq"):
        rep = game.game_convergence_study(c.p, parts, c.eq)
        rep.write(c.out / "game_convergence")
        reports.append(verify.CheckReport("game_convergence_monotone", rep.fitted_rate, 0.0, rep.is_monotone(), rep.details))
    if kind in (None, "pre", "naive"):
        rep = game.naive_convergence_study(c.p, parts, InitialPair(0, c.xi), c.sim(0), c.pre)
        rep.write(c.out / "naive_convergence")
        reports.append(verify.CheckReport("naive_convergence_monotone", rep.fitted_rate, 0.0, rep.is_monotone(), rep.details))
    return reports


COMMANDS = {
    "solve": cmd_solve,
    "gains": cmd_gains,
    "simulate": cmd_simulate,
    "cost": cmd_cost,
    "verify": cmd_verify,
    "converge": cmd_converge,
    "compare": cmd_compare,
}


def run(spec: RunSpec) -> int:
    """Execute one subcommand; returns the process exit status."""
    try:
        if spec.subcommand not in COMMANDS:
            raise ValueError(f"unknown subcommand {spec.subcommand!r}")
        reports = COMMANDS[spec.subcommand](_Context(spec))
    except Exception as exc:  # every failure becomes one structured line
        err = {"subcommand": spec.subcommand, "error": type(exc).__name__, "message": str(exc)}
        for attr in ("time", "path", "step"):
            if getattr(exc, attr, None) is not None:
                err[attr] = getattr(exc, attr)
        print(json.dumps(verify._jsonable(err)), file=sys.stderr)
        return 2
    failed = [r for r in reports if not r.passed]
    for r in failed:
        print(json.dumps({"subcommand": spec.subcommand, "check": r.name, "statistic": r.statistic, "threshold": r.threshold}), file=sys.stderr)
    return 1 if failed else 0


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    return run(_spec_from_args(args))


if __name__ == "__main__":
    sys.exit(main())
