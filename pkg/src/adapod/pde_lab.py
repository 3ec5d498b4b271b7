"""Full-order 1D advection-diffusion solver used to generate snapshots.

The scheme is explicit Euler in time, centered second differences for the
diffusion term and a one-sided (upwind) difference for the advection term.
Both boundary nodes are clamped to zero (homogeneous Dirichlet).
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

_COMMENSURATE_TOL = 1e-9


class StabilityError(ValueError):
    """Raised when the explicit scheme would violate its stability bound."""


class DivergenceError(RuntimeError):
    """Raised when a simulation produces non-finite values."""


@dataclass(frozen=True)
class Grid1D:
    """Uniform space-time grid on ``[a, b] x [0, T]``."""

    a: float
    b: float
    dx: float
    T: float
    dt: float
    nodes: int
    steps: int

    @property
    def x(self) -> np.ndarray:
        return self.a + self.dx * np.arange(self.nodes)

    @property
    def times(self) -> np.ndarray:
        return self.dt * np.arange(self.steps + 1)


@dataclass(frozen=True)
class PdeParams:
    epsilon: float
    c: float

    def __post_init__(self):
        if not self.epsilon >= 0:
            raise ValueError(f"diffusion coefficient must be >= 0, got {self.epsilon}")


@dataclass
class ControlSignal:
    """Piecewise-constant scalar control, ``values[n]`` acts on ``[t_n, t_{n+1})``."""

    values: np.ndarray

    def __post_init__(self):
        self.values = np.asarray(self.values, dtype=float).reshape(-1)

    def __len__(self) -> int:
        return self.values.size

    @classmethod
    def constant(cls, grid: Grid1D, value: float) -> "ControlSignal":
        return cls(np.full(grid.steps, float(value)))

    @classmethod
    def from_function(cls, grid: Grid1D, func) -> "ControlSignal":
        return cls(np.array([func(t) for t in grid.times[:-1]], dtype=float))


@dataclass
class SnapshotMatrix:
    """Full-order states stored column-wise, ``data[:, j]`` at ``times[j]``."""

    data: np.ndarray
    times: np.ndarray = field(default=None)

    def __post_init__(self):
        self.data = np.asarray(self.data, dtype=float)
        if self.data.ndim != 2:
            raise ValueError("snapshot data must be a 2D array")
        if self.times is None:
            self.times = np.arange(self.data.shape[1], dtype=float)
        self.times = np.asarray(self.times, dtype=float).reshape(-1)
        if self.times.size != self.data.shape[1]:
            raise ValueError(
                f"{self.data.shape[1]} columns but {self.times.size} time stamps"
            )
        if self.times.size > 1 and np.any(np.diff(self.times) <= 0):
            raise ValueError("snapshot times must be strictly increasing")

    @property
    def shape(self) -> tuple[int, int]:
        return self.data.shape

    def window(self, start: int, stop: int) -> "SnapshotMatrix":
        """Columns ``start..stop`` inclusive."""
        return SnapshotMatrix(self.data[:, start:stop + 1], self.times[start:stop + 1])

    def to_csv(self, path) -> None:
        """First row holds the time stamps, then one row per spatial node."""
        rows = np.vstack([self.times[None, :], self.data])
        np.savetxt(Path(path), rows, delimiter=",", fmt="%.17g")

    @classmethod
    def from_csv(cls, path) -> "SnapshotMatrix":
        rows = np.loadtxt(Path(path), delimiter=",", ndmin=2)
        return cls(rows[1:], rows[0])


def _as_count(span: float, step: float, what: str) -> int:
    ratio = span / step
    count = round(ratio)
    if abs(ratio - count) > _COMMENSURATE_TOL * max(1.0, abs(ratio)):
        raise ValueError(f"{what} is not an integer multiple of its step: {span}/{step} = {ratio!r}")
    return int(count)


def make_grid(a: float, b: float, dx: float, T: float, dt: float) -> Grid1D:
    """Build a :class:`Grid1D`, rejecting non-commensurate steps.

    Examples
    --------
    >>> g = make_grid(-1, 4, 0.1, 3, 0.008)
    >>> g.nodes, g.steps
    (51, 375)
    """
    if not a < b:
        raise ValueError(f"need a < b, got a={a}, b={b}")
    if not (dx > 0 and dt > 0 and T > 0):
        raise ValueError(f"dx, dt and T must be positive (dx={dx}, dt={dt}, T={T})")
    cells = _as_count(b - a, dx, f"(b-a, dx) = ({b - a}, {dx})")
    steps = _as_count(T, dt, f"(T, dt) = ({T}, {dt})")
    if cells < 1 or steps < 2:
        raise ValueError(f"grid too small: nodes={cells + 1}, steps={steps}")
    return Grid1D(float(a), float(b), float(dx), float(T), float(dt), cells + 1, steps)


def commensurate_dt(T: float, dt: float) -> tuple[float, int]:
    """Largest step ``<= dt`` that divides ``T`` exactly, with its step count."""
    steps = math.ceil(T / dt - _COMMENSURATE_TOL)
    return T / steps, steps


def stability_bound(params: PdeParams, dx: float) -> float:
    rate = 2.0 * params.epsilon / dx**2 + abs(params.c) / dx
    return math.inf if rate == 0 else 1.0 / rate


def check_stability(params: PdeParams, grid: Grid1D) -> None:
    bound = stability_bound(params, grid.dx)
    if grid.dt > bound * (1 + 1e-12):
        raise StabilityError(
            f"dt={grid.dt} exceeds the explicit stability bound "
            f"1/(2*eps/dx^2 + |c|/dx) = {bound} (eps={params.epsilon}, c={params.c}, dx={grid.dx})"
        )


def fd_step(state, params: PdeParams, u: float, grid: Grid1D) -> np.ndarray:
    """Advance one explicit Euler step of ``y_s = eps*y_xx - c*y_x + u``."""
    y = np.asarray(state, dtype=float)
    if y.shape != (grid.nodes,):
        raise ValueError(f"state has shape {y.shape}, expected ({grid.nodes},)")
    check_stability(params, grid)
    dx = grid.dx
    left, mid, right = y[:-2], y[1:-1], y[2:]
    diffusion = params.epsilon * (right - 2.0 * mid + left) / dx**2
    if params.c >= 0:
        advection = params.c * (mid - left) / dx
    else:
        advection = params.c * (right - mid) / dx
    out = np.zeros_like(y)
    out[1:-1] = mid + grid.dt * (diffusion - advection + u)
    return out


def fd_operator(params: PdeParams, grid: Grid1D) -> np.ndarray:
    """Dense matrix ``A`` with ``fd_step(y) = y + dt*(A y + u*1_interior)`` on interior rows.

    Boundary rows are zero, matching the Dirichlet clamp of :func:`fd_step`.
    """
    n = grid.nodes
    dx = grid.dx
    A = np.zeros((n, n))
    i = np.arange(1, n - 1)
    d = params.epsilon / dx**2
    A[i, i - 1] += d
    A[i, i] += -2.0 * d
    A[i, i + 1] += d
    k = params.c / dx
    if params.c >= 0:
        A[i, i] -= k
        A[i, i - 1] += k
    else:
        A[i, i + 1] -= k
        A[i, i] += k
    return A


def interior_indicator(grid: Grid1D) -> np.ndarray:
    """Spatial profile of the control input (space-constant on interior nodes)."""
    e = np.ones(grid.nodes)
    e[0] = e[-1] = 0.0
    return e


def simulate(y0, u, params: PdeParams, grid: Grid1D) -> SnapshotMatrix:
    """Roll the scheme forward from ``y0`` and collect every time level."""
    check_stability(params, grid)
    if not isinstance(u, ControlSignal):
        u = ControlSignal(np.broadcast_to(np.asarray(u, dtype=float), (grid.steps,)))
    if len(u) != grid.steps:
        raise ValueError(f"control has {len(u)} values, grid has {grid.steps} steps")
    y = np.asarray(y0, dtype=float)
    if y.shape != (grid.nodes,):
        raise ValueError(f"initial state has shape {y.shape}, expected ({grid.nodes},)")
    Y = np.empty((grid.nodes, grid.steps + 1))
    Y[:, 0] = y
    for n in range(grid.steps):
        y = fd_step(y, params, u.values[n], grid)
        if not np.all(np.isfinite(y)):
            raise DivergenceError(f"non-finite state after step {n + 1}")
        Y[:, n + 1] = y
    return SnapshotMatrix(Y, grid.times)


def initial_parabola(grid: Grid1D) -> np.ndarray:
    """``5x - 5x^2`` on ``[0, 1]``, zero elsewhere."""
    x = grid.x
    return np.where((x >= 0) & (x <= 1), 5 * x - 5 * x**2, 0.0)


def initial_hat(grid: Grid1D) -> np.ndarray:
    """``max(1 - |x|, 0)``."""
    return np.maximum(1.0 - np.abs(grid.x), 0.0)
