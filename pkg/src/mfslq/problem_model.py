"""Problem data for mean-field stochastic linear-quadratic control.

A problem is a set of coefficient paths on a uniform time grid.  Each
coefficient is either a single constant matrix or one matrix per grid
node; on the interval [s_k, s_{k+1}) the value at node k is used.
"""
from __future__ import annotations

import json
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Mapping

import numpy as np

__all__ = [
    "ProblemError",
    "Dimensions",
    "TimeGrid",
    "CoefficientSet",
    "Problem",
    "Deterministic",
    "Gaussian",
    "InitialPair",
    "ValidationReport",
    "STATE_SQUARE",
    "STATE_CONTROL",
    "WEIGHTS",
    "TERMINAL",
    "load_problem",
    "problem_from_dict",
    "problem_to_dict",
    "dump_problem",
    "validate_assumptions",
    "coefficient_at",
]

DEFAULT_DELTA = 1e-6
DEFAULT_PSD_TOL = 1e-10
SYMMETRY_RTOL = 1e-12

# coefficient families, keyed by the shape they must have
STATE_SQUARE = ("A", "Abar", "Atilde", "C", "Cbar", "Ctilde")
STATE_CONTROL = ("B", "D")
WEIGHTS = ("Q", "Qbar", "Qtilde")
TERMINAL = ("G", "Gbar", "Gtilde")
PATH_NAMES = STATE_SQUARE + STATE_CONTROL + WEIGHTS + ("R",)
SYMMETRIC = WEIGHTS + ("R",) + TERMINAL


class ProblemError(ValueError):
    """Raised for malformed problem data."""


@dataclass(frozen=True)
class Dimensions:
    n: int
    m: int

    def __post_init__(self):
        if int(self.n) < 1 or int(self.m) < 1:
            raise ProblemError(f"dimensions must be positive, got n={self.n}, m={self.m}")


@dataclass(frozen=True)
class TimeGrid:
    """Uniform grid 0 = s_0 < ... < s_N = T."""

    T: float
    N: int

    def __post_init__(self):
        if not (math.isfinite(self.T) and self.T > 0):
            raise ProblemError(f"horizon must be positive and finite, got {self.T}")
        if int(self.N) != self.N or self.N < 2:
            raise ProblemError(f"step count must be an integer >= 2, got {self.N}")

    @property
    def h(self) -> float:
        return self.T / self.N

    @property
    def nodes(self) -> np.ndarray:
        # k*h rather than cumulative sums keeps the spacing uniform to rounding
        return np.arange(self.N + 1) * self.h

    def time(self, k: int) -> float:
        return k * self.h

    def index_of(self, s: float, atol: float = 1e-9) -> int:
        """Grid index of time ``s``; raises if ``s`` is not a node."""
        k = int(round(s / self.h))
        if k < 0 or k > self.N or abs(k * self.h - s) > atol * max(1.0, self.T):
            raise ProblemError(f"time {s} is not a node of the grid (h={self.h})")
        return k

    def steps(self, duration: float, atol: float = 1e-9) -> int:
        """Number of steps spanning ``duration``; raises if not a multiple of h."""
        q = duration / self.h
        k = int(round(q))
        if k < 0 or abs(k - q) > atol * max(1.0, abs(q)):
            raise ProblemError(f"duration {duration} is not a multiple of h={self.h}")
        return k


def _as_matrix(name, value, rows, cols, n_nodes=None):
    """Convert scalar / matrix / path input to an array.

    Scalars become ``value * eye(rows, cols)``.  Returns a 2-D array for a
    constant coefficient, or a 3-D array of shape (n_nodes, rows, cols).
    """
    arr = np.asarray(value, dtype=float)
    if arr.ndim == 0:
        return float(arr) * np.eye(rows, cols)
    if arr.ndim == 1 and rows == 1 and cols == 1 and n_nodes is not None and arr.shape[0] == n_nodes:
        # scalar path written as a flat list
        return arr.reshape(n_nodes, 1, 1).copy()
    if arr.ndim == 2:
        if arr.shape != (rows, cols):
            raise ProblemError(f"{name}: expected shape {(rows, cols)}, got {arr.shape}")
        return arr.copy()
    if arr.ndim == 3:
        if n_nodes is None:
            raise ProblemError(f"{name}: must be a constant matrix")
        if arr.shape[1:] != (rows, cols):
            raise ProblemError(f"{name}: expected samples of shape {(rows, cols)}, got {arr.shape[1:]}")
        if arr.shape[0] == 1:
            return arr[0].copy()
        if arr.shape[0] != n_nodes:
            raise ProblemError(f"{name}: path has {arr.shape[0]} samples, grid has {n_nodes} nodes")
        return arr.copy()
    raise ProblemError(f"{name}: cannot interpret value of shape {arr.shape}")


def _check_symmetric(name, arr):
    asym = np.abs(arr - np.swapaxes(arr, -1, -2)).max(initial=0.0)
    scale = max(np.abs(arr).max(initial=0.0), 1.0)
    if asym > SYMMETRY_RTOL * scale:
        raise ProblemError(f"{name} is not symmetric (max asymmetry {asym:.3e})")


@dataclass(frozen=True)
class CoefficientSet:
    """Coefficient and weight data.

    ``paths`` maps each time-dependent coefficient name to either a 2-D
    constant matrix or a 3-D array with one matrix per grid node;
    ``terminal`` holds the three terminal weights.
    """

    paths: Mapping[str, np.ndarray]
    terminal: Mapping[str, np.ndarray]

    def __getitem__(self, name):
        if name in self.paths:
            return self.paths[name]
        if name in self.terminal:
            return self.terminal[name]
        raise KeyError(name)

    def is_constant(self, name) -> bool:
        return np.ndim(self[name]) == 2


@dataclass(frozen=True)
class Problem:
    dims: Dimensions
    grid: TimeGrid
    coeffs: CoefficientSet
    delta: float = DEFAULT_DELTA
    _cache: dict = field(default_factory=dict, repr=False, compare=False)

    @property
    def n(self) -> int:
        return self.dims.n

    @property
    def m(self) -> int:
        return self.dims.m

    def path(self, name) -> np.ndarray:
        """Coefficient as a read-only (N+1, r, c) array; constants are broadcast."""
        if name in self._cache:
            return self._cache[name]
        value = self.coeffs.paths[name]
        if value.ndim == 2:
            out = np.broadcast_to(value, (self.grid.N + 1,) + value.shape)
        else:
            out = value.view()
            out.flags.writeable = False
        self._cache[name] = out
        return out

    def terminal(self, name) -> np.ndarray:
        return self.coeffs.terminal[name]

    def has_conditional_terms(self, atol: float = 0.0) -> bool:
        """True when any coefficient acting on E_t[X] is nonzero."""
        names = ("Abar", "Cbar", "Qbar")
        if any(np.abs(self.coeffs.paths[k]).max() > atol for k in names):
            return True
        return bool(np.abs(self.terminal("Gbar")).max() > atol)

    def with_steps(self, N: int) -> "Problem":
        """Same problem on a grid with ``N`` steps; only for constant coefficients."""
        if N == self.grid.N:
            return self
        varying = [k for k in PATH_NAMES if not self.coeffs.is_constant(k)]
        if varying:
            raise ProblemError(f"cannot regrid time-varying coefficients {varying}")
        return Problem(self.dims, TimeGrid(self.grid.T, N), self.coeffs, self.delta)

    def replace(self, **changes) -> "Problem":
        """Copy of the problem with some coefficients replaced."""
        paths = dict(self.coeffs.paths)
        terminal = dict(self.coeffs.terminal)
        for name, value in changes.items():
            if name in TERMINAL:
                terminal[name] = _as_matrix(name, value, self.n, self.n)
            elif name in PATH_NAMES:
                rows, cols = _shape_of(name, self.n, self.m)
                paths[name] = _as_matrix(name, value, rows, cols, self.grid.N + 1)
            else:
                raise ProblemError(f"unknown coefficient {name!r}")
        return build_problem(self.n, self.m, self.grid.T, self.grid.N, paths, terminal, self.delta)


def _shape_of(name, n, m):
    if name in STATE_CONTROL:
        return n, m
    if name == "R":
        return m, m
    return n, n


def build_problem(n, m, T, N, coefficients: Mapping, terminal: Mapping, delta=DEFAULT_DELTA) -> Problem:
    """Construct a problem; missing coefficients default to zero."""
    dims = Dimensions(int(n), int(m))
    grid = TimeGrid(float(T), int(N))
    unknown = set(coefficients) - set(PATH_NAMES)
    if unknown:
        raise ProblemError(f"unknown coefficients {sorted(unknown)}")
    unknown = set(terminal) - set(TERMINAL)
    if unknown:
        raise ProblemError(f"unknown terminal weights {sorted(unknown)}")
    if "R" not in coefficients:
        raise ProblemError("control weight R is required")
    paths = {}
    for name in PATH_NAMES:
        rows, cols = _shape_of(name, dims.n, dims.m)
        paths[name] = _as_matrix(name, coefficients.get(name, 0.0), rows, cols, grid.N + 1)
    terms = {name: _as_matrix(name, terminal.get(name, 0.0), dims.n, dims.n) for name in TERMINAL}
    for name, arr in list(paths.items()) + list(terms.items()):
        if not np.all(np.isfinite(arr)):
            raise ProblemError(f"{name} has non-finite entries")
        if name in SYMMETRIC:
            _check_symmetric(name, arr)
    if not (delta > 0 and math.isfinite(delta)):
        raise ProblemError(f"delta must be positive, got {delta}")
    return Problem(dims, grid, CoefficientSet(paths, terms), float(delta))


# Initial pairs -------------------------------------------------------------


@dataclass(frozen=True)
class Deterministic:
    value: np.ndarray

    def __post_init__(self):
        object.__setattr__(self, "value", np.atleast_1d(np.asarray(self.value, dtype=float)))

    @property
    def mean(self):
        return self.value

    @property
    def cov(self):
        return np.zeros((self.value.size, self.value.size))

    @property
    def cov_tau(self):
        return self.cov


@dataclass(frozen=True)
class Gaussian:
    """Gaussian initial state.

    ``cov_tau`` is the covariance of the part of the state already known at
    an earlier reference time tau (so that E_tau[xi] = mean + that part).
    It defaults to the full covariance, i.e. tau equal to the initial time.
    """

    mean: np.ndarray
    cov: np.ndarray
    cov_tau: np.ndarray | None = None

    def __post_init__(self):
        mean = np.atleast_1d(np.asarray(self.mean, dtype=float))
        cov = np.atleast_2d(np.asarray(self.cov, dtype=float))
        n = mean.size
        if cov.shape != (n, n):
            raise ProblemError(f"covariance shape {cov.shape} does not match mean of length {n}")
        _check_symmetric("cov", cov)
        if np.linalg.eigvalsh(cov).min() < -DEFAULT_PSD_TOL * max(1.0, np.abs(cov).max()):
            raise ProblemError("covariance is not positive semidefinite")
        cov_tau = cov if self.cov_tau is None else np.atleast_2d(np.asarray(self.cov_tau, dtype=float))
        if cov_tau.shape != (n, n):
            raise ProblemError("cov_tau shape mismatch")
        _check_symmetric("cov_tau", cov_tau)
        gap = np.linalg.eigvalsh(cov - cov_tau).min() if n else 0.0
        if np.linalg.eigvalsh(cov_tau).min() < -DEFAULT_PSD_TOL or gap < -DEFAULT_PSD_TOL:
            raise ProblemError("cov_tau must satisfy 0 <= cov_tau <= cov")
        object.__setattr__(self, "mean", mean)
        object.__setattr__(self, "cov", cov)
        object.__setattr__(self, "cov_tau", cov_tau)


@dataclass(frozen=True)
class InitialPair:
    """Initial time (as a grid index) and initial state distribution."""

    t: int
    xi: Deterministic | Gaussian

    def check(self, p: Problem):
        if not (0 <= self.t < p.grid.N):
            raise ProblemError(f"initial index {self.t} outside [0, N)")
        if self.xi.mean.size != p.n:
            raise ProblemError(f"initial state has length {self.xi.mean.size}, expected {p.n}")


# Validation ----------------------------------------------------------------


@dataclass
class ValidationReport:
    h1_ok: bool
    h2_ok: bool
    min_R_eig: float
    min_Q_eigs: dict
    min_G_eigs: dict
    messages: list


def validate_assumptions(p: Problem, delta: float | None = None, psd_tol: float = DEFAULT_PSD_TOL) -> ValidationReport:
    """Check boundedness of the data and definiteness of the weights."""
    delta = p.delta if delta is None else delta
    messages = []
    h1_ok = True
    for name in PATH_NAMES + TERMINAL:
        if not np.all(np.isfinite(p.coeffs[name])):
            h1_ok = False
            messages.append(f"{name} has non-finite entries")

    def min_eig(arr):
        if not np.all(np.isfinite(arr)):
            return -np.inf
        sym = 0.5 * (arr + np.swapaxes(arr, -1, -2))
        return float(np.linalg.eigvalsh(sym).min())

    min_q = {name: min_eig(p.coeffs[name]) for name in WEIGHTS}
    min_g = {name: min_eig(p.coeffs[name]) for name in TERMINAL}
    min_r = min_eig(p.coeffs["R"])
    h2_ok = True
    for name, lam in list(min_q.items()) + list(min_g.items()):
        if lam < -psd_tol:
            h2_ok = False
            messages.append(f"{name} is not positive semidefinite (min eigenvalue {lam:.6g})")
    if min_r < delta:
        h2_ok = False
        messages.append(f"R is not uniformly positive definite (min eigenvalue {min_r:.6g} < {delta:.6g})")
    return ValidationReport(h1_ok, h2_ok and h1_ok, min_r, min_q, min_g, messages)


def coefficient_at(p: Problem, which: str, k: int) -> np.ndarray:
    if which in TERMINAL:
        return p.terminal(which)
    if which not in PATH_NAMES:
        raise KeyError(f"unknown coefficient {which!r}")
    if not (0 <= k <= p.grid.N):
        raise IndexError(f"grid index {k} outside [0, {p.grid.N}]")
    value = p.coeffs.paths[which]
    return value if value.ndim == 2 else value[k]


# Serialization -------------------------------------------------------------


def problem_from_dict(doc: Mapping) -> Problem:
    required = ("n", "m", "T", "N", "coefficients")
    missing = [k for k in required if k not in doc]
    if missing:
        raise ProblemError(f"config is missing fields {missing}")
    if not isinstance(doc["coefficients"], Mapping):
        raise ProblemError("coefficients must be an object")
    terminal = doc.get("terminal", {})
    if not isinstance(terminal, Mapping):
        raise ProblemError("terminal must be an object")
    return build_problem(
        doc["n"], doc["m"], doc["T"], doc["N"], doc["coefficients"], terminal, doc.get("delta", DEFAULT_DELTA)
    )


def load_problem(source) -> Problem:
    """Load a problem from a JSON file path, a JSON string, or a dict."""
    if isinstance(source, Mapping):
        return problem_from_dict(source)
    if isinstance(source, Path) or (isinstance(source, str) and not source.lstrip().startswith("{")):
        text = Path(source).read_text()
    else:
        text = source
    try:
        doc = json.loads(text)
    except json.JSONDecodeError as exc:
        raise ProblemError(f"invalid JSON: {exc}") from exc
    return problem_from_dict(doc)


def problem_to_dict(p: Problem) -> dict:
    # floats go through repr, which round-trips exactly
    return {
        "n": p.n,
        "m": p.m,
        "T": p.grid.T,
        "N": p.grid.N,
        "delta": p.delta,
        "coefficients": {name: p.coeffs.paths[name].tolist() for name in PATH_NAMES},
        "terminal": {name: p.terminal(name).tolist() for name in TERMINAL},
    }


def dump_problem(p: Problem, path=None) -> str:
    text = json.dumps(problem_to_dict(p), indent=1)
    if path is not None:
        Path(path).write_text(text)
    return text


def problems_equal(a: Problem, b: Problem) -> bool:
    """Bitwise equality of all problem data."""
    if (a.dims, a.grid, a.delta) != (b.dims, b.grid, b.delta):
        return False
    for name in PATH_NAMES + TERMINAL:
        x, y = a.coeffs[name], b.coeffs[name]
        if x.shape != y.shape or x.tobytes() != y.tobytes():
            return False
    return True


def initial_from_dict(doc: Mapping | None, n: int) -> Deterministic | Gaussian:
    """Initial state from a config block: {"xi": [...]} or {"mean", "cov"[, "cov_tau"]}."""
    if not doc:
        return Deterministic(np.ones(n))
    if "xi" in doc:
        return Deterministic(np.asarray(doc["xi"], dtype=float).reshape(n))
    mean = np.asarray(doc["mean"], dtype=float).reshape(n)
    cov = np.asarray(doc["cov"], dtype=float).reshape(n, n)
    cov_tau = doc.get("cov_tau")
    return Gaussian(mean, cov, None if cov_tau is None else np.asarray(cov_tau, dtype=float).reshape(n, n))
