"""Reference problems used by the tests, the demos and the shipped configs."""
from __future__ import annotations

import numpy as np

import json
from pathlib import Path

from .problem_model import Deterministic, Gaussian, Problem, build_problem, problem_to_dict

__all__ = ["NAMES", "corpus_problem", "corpus_initial", "write_configs"]


def _scalar_plain(N):
    # P(s) = 1 / (2 - s) on [0, 1]
    return build_problem(1, 1, 1.0, N, dict(B=1.0, R=1.0), dict(G=1.0))


def _scalar_noisy(N):
    c = dict(A=0.2, B=1.0, C=0.4, D=0.3, Q=1.0, R=1.0)
    return build_problem(1, 1, 1.0, N, c, dict(G=1.0))


def _scalar_meanfield(N):
    c = dict(
        A=0.1, Abar=0.6, Atilde=0.2, B=1.0,
        C=0.4, Cbar=0.3, Ctilde=0.1, D=0.2,
        Q=1.0, Qbar=0.8, Qtilde=0.3, R=1.0,
    )
    return build_problem(1, 1, 1.0, N, c, dict(G=1.0, Gbar=0.5, Gtilde=0.2))


def _frozen(N):
    c = dict(Q=1.0, Qbar=1.0, Qtilde=1.0, R=1.0)
    return build_problem(1, 1, 1.0, N, c, dict(G=1.0, Gbar=1.0, Gtilde=1.0))


def _meanfield_2d(N):
    c = dict(
        A=[[0.1, 0.2], [-0.1, 0.0]],
        Abar=[[0.4, 0.0], [0.1, 0.3]],
        Atilde=[[0.1, 0.0], [0.05, -0.1]],
        B=[[1.0, 0.0], [0.5, 1.0]],
        C=[[0.3, 0.0], [0.0, 0.2]],
        Cbar=[[0.2, 0.0], [0.0, 0.1]],
        Ctilde=[[0.05, 0.0], [0.0, 0.05]],
        D=[[0.3, 0.0], [0.0, 0.2]],
        Q=np.eye(2),
        Qbar=0.5 * np.eye(2),
        Qtilde=0.3 * np.eye(2),
        R=np.eye(2),
    )
    return build_problem(2, 2, 1.0, N, c, dict(G=np.eye(2), Gbar=0.5 * np.eye(2), Gtilde=0.2 * np.eye(2)))


def _expectation_only(N):
    c = dict(
        A=[[0.0, 0.3], [-0.2, 0.1]],
        Atilde=[[0.3, 0.0], [0.1, 0.2]],
        B=[[1.0], [0.5]],
        C=[[0.2, 0.0], [0.1, 0.3]],
        Ctilde=[[0.1, 0.0], [0.0, 0.1]],
        D=[[0.2], [0.1]],
        Q=np.eye(2),
        Qtilde=[[0.5, 0.1], [0.1, 0.4]],
        R=1.0,
    )
    return build_problem(2, 1, 1.0, N, c, dict(G=np.eye(2), Gtilde=0.3 * np.eye(2)))


_BUILDERS = {
    "scalar_plain": _scalar_plain,
    "scalar_noisy": _scalar_noisy,
    "scalar_meanfield": _scalar_meanfield,
    "frozen": _frozen,
    "meanfield_2d": _meanfield_2d,
    "expectation_only": _expectation_only,
}
NAMES = tuple(_BUILDERS)


def corpus_problem(name: str, N: int = 1000) -> Problem:
    return _BUILDERS[name](N)


def corpus_initial(name: str, gaussian: bool = False):
    n = 2 if name in ("meanfield_2d", "expectation_only") else 1
    if not gaussian:
        return Deterministic(np.ones(n))
    cov = 0.25 * np.eye(n)
    return Gaussian(np.ones(n), cov, 0.5 * cov)


def write_configs(directory, N: int = 1000):
    """Write every corpus problem as <name>.json with a deterministic initial state."""
    out = Path(directory)
    out.mkdir(parents=True, exist_ok=True)
    files = []
    for name in NAMES:
        doc = problem_to_dict(corpus_problem(name, N))
        doc["initial"] = {"xi": corpus_initial(name).value.tolist()}
        f = out / f"{name}.json"
        f.write_text(json.dumps(doc, indent=1) + "\n")
        files.append(f)
    return files
