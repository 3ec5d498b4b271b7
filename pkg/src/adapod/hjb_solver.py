"""Semi-Lagrangian value iteration on a reduced coordinate box.

The value function is stored on a tensor-product lattice over a
:class:`~adapod.galerkin_rom.BoxDomain`. One backward step reads

    v^n_i = min_u [ dt * exp(-lambda t_n) * L(x_i, u, t_n) + I[v^{n+1}](x_i + dt F(x_i, u)) ]

with ``I`` the multilinear interpolant, clamped to the box. Level ``N``
holds the terminal cost.
"""

from __future__ import annotations

import itertools
import logging
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Callable

import numpy as np
import scipy.sparse as sp

from adapod.galerkin_rom import BoxDomain, ReducedModel, compute_box
from adapod.pde_lab import ControlSignal
from adapod.pod_reduce import PodBasis, SubIntervalPlan

logger = logging.getLogger(__name__)

_GOLDEN = (math.sqrt(5.0) - 1.0) / 2.0


class HJBError(RuntimeError):
    pass


@dataclass
class ValueGrid:
    box: BoxDomain
    nodes_per_dim: tuple[int, ...]

    def __post_init__(self):
        if np.isscalar(self.nodes_per_dim):
            self.nodes_per_dim = (int(self.nodes_per_dim),) * self.box.dim
        self.nodes_per_dim = tuple(int(n) for n in self.nodes_per_dim)
        if len(self.nodes_per_dim) != self.box.dim:
            raise ValueError(f"{len(self.nodes_per_dim)} node counts for a {self.box.dim}-D box")
        if min(self.nodes_per_dim) < 2:
            raise ValueError("need at least 2 nodes per dimension")
        shape = np.array(self.nodes_per_dim)
        self.spacing = self.box.widths / (shape - 1)
        # row-major: last dimension varies fastest
        self.strides = np.array([int(np.prod(shape[d + 1:])) for d in range(self.dim)])

    @property
    def dim(self) -> int:
        return self.box.dim

    @property
    def size(self) -> int:
        return int(np.prod(self.nodes_per_dim))

    @property
    def axes(self) -> list[np.ndarray]:
        return [np.linspace(lo, hi, n) for lo, hi, n in zip(self.box.lower, self.box.upper, self.nodes_per_dim)]

    def nodes(self) -> np.ndarray:
        mesh = np.meshgrid(*self.axes, indexing="ij")
        return np.stack([m.ravel() for m in mesh], axis=1)

    def stencil(self, points: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
        """Flat corner indices and weights, each ``(2**dim, len(points))``."""
        P = self.box.clamp(np.atleast_2d(points))
        s = (P - self.box.lower) / self.spacing
        top = np.array(self.nodes_per_dim) - 2
        base = np.clip(np.floor(s).astype(np.int64), 0, top)
        frac = np.clip(s - base, 0.0, 1.0)
        flat = base @ self.strides
        idx, wts = [], []
        for corner in itertools.product((0, 1), repeat=self.dim):
            c = np.array(corner)
            wts.append(np.prod(np.where(c == 1, frac, 1.0 - frac), axis=1))
            idx.append(flat + int(c @ self.strides))
        return np.array(idx), np.array(wts)

    def interpolation_matrix(self, points: np.ndarray) -> sp.csr_matrix:
        idx, wts = self.stencil(points)
        rows = np.broadcast_to(np.arange(idx.shape[1]), idx.shape)
        return sp.csr_matrix((wts.ravel(), (rows.ravel(), idx.ravel())), shape=(idx.shape[1], self.size))


def interpolate_many(grid: ValueGrid, values, points) -> np.ndarray:
    idx, wts = grid.stencil(points)
    return np.sum(wts * np.asarray(values)[idx], axis=0)


def interpolate(grid: ValueGrid, values, point) -> float:
    """Multilinear interpolation at one point; outside points are clamped to the box."""
    return float(interpolate_many(grid, values, np.asarray(point, dtype=float)[None, :])[0])


def _zero_terminal(W: np.ndarray) -> np.ndarray:
    return np.zeros(len(W))


@dataclass
class ReducedCost:
    """Running and terminal cost in reduced coordinates.

    ``running(W, u, t)`` gets states stacked as rows and returns one value per
    row; ``u`` is a scalar or a per-row array.
    """

    running: Callable[[np.ndarray, object, float], np.ndarray]
    terminal: Callable[[np.ndarray], np.ndarray] = _zero_terminal
    discount: float = 0.0

    def weight(self, t: float) -> float:
        return math.exp(-self.discount * t) if self.discount else 1.0

    def scaled(self, factor: float) -> "ReducedCost":
        return ReducedCost(
            running=lambda W, u, t: factor * self.running(W, u, t),
            terminal=lambda W: factor * self.terminal(W),
            discount=self.discount,
        )


@dataclass
class CostSpec:
    """Tracking functional ``int ||y - yhat||^2 + R u^2 ds`` (+ optional terminal term).

    ``yhat`` is sampled on the full grid, one column per entry of ``times``;
    the spatial norm is the ``dx``-weighted discrete L2 norm. ``terminal`` is
    ``"zero"`` or ``"tracking"`` (the same squared distance at the final time).
    """

    R: float
    yhat: np.ndarray
    times: np.ndarray
    dx: float
    discount: float = 0.0
    terminal: str = "zero"

    def __post_init__(self):
        self.yhat = np.asarray(self.yhat, dtype=float)
        self.times = np.asarray(self.times, dtype=float)
        if not self.R > 0:
            raise ValueError(f"control penalty R must be positive, got {self.R}")
        if self.discount < 0:
            raise ValueError(f"discount must be >= 0, got {self.discount}")
        if self.yhat.shape[1] != self.times.size:
            raise ValueError("reference must have one column per time stamp")
        if self.terminal not in ("zero", "tracking"):
            raise ValueError(f"unknown terminal cost {self.terminal!r}")

    def time_index(self, t: float) -> int:
        """Nearest reference column for time ``t``."""
        j = int(np.searchsorted(self.times, t))
        if j == 0:
            return 0
        if j >= self.times.size:
            return self.times.size - 1
        return j if self.times[j] - t < t - self.times[j - 1] else j - 1

    def reduced(self, basis: PodBasis, final: bool = True) -> ReducedCost:
        """Bind the functional to ``basis``; intermediate windows get a zero terminal cost."""
        P = basis.vectors
        M = P.T @ P
        proj = P.T @ self.yhat
        sq = np.sum(self.yhat**2, axis=0)
        dx, R = self.dx, self.R

        def distance(W, j):
            W = np.atleast_2d(W)
            d = np.einsum("ij,jk,ik->i", W, M, W) - 2.0 * W @ proj[:, j] + sq[j]
            return dx * np.maximum(d, 0.0)

        def running(W, u, t):
            return distance(W, self.time_index(t)) + R * np.asarray(u, dtype=float) ** 2

        terminal = _zero_terminal
        if final and self.terminal == "tracking":
            terminal = lambda W: distance(W, self.times.size - 1)  # noqa: E731
        return ReducedCost(running=running, terminal=terminal, discount=self.discount)

    def running_full(self, y: np.ndarray, u: float, j: int) -> float:
        return self.dx * float(np.sum((y - self.yhat[:, j]) ** 2)) + self.R * u * u


@dataclass
class ValueStack:
    """Value arrays ``values[n]`` at ``t0 + n*dt`` and the minimising controls."""

    grid: ValueGrid
    values: np.ndarray
    policy: np.ndarray
    policy_index: np.ndarray
    controls: np.ndarray
    dt: float
    t0: float = 0.0

    @property
    def N(self) -> int:
        return self.values.shape[0] - 1

    def value(self, n: int, w) -> float:
        return interpolate(self.grid, self.values[n], w)

    def lookahead(self, s: float, points) -> np.ndarray:
        """Values at local time ``s`` (offset from ``t0``), linear between levels.

        Times past the horizon read the terminal level.
        """
        q = s / self.dt
        n = int(math.floor(q + 1e-9))
        if n >= self.N:
            return interpolate_many(self.grid, self.values[self.N], points)
        theta = q - n
        v = interpolate_many(self.grid, self.values[n], points)
        if theta <= 1e-9:
            return v
        return (1.0 - theta) * v + theta * interpolate_many(self.grid, self.values[n + 1], points)

    def write_level(self, directory, n: int, prefix: str = "value") -> list[Path]:
        """Persist a single level plus the manifest."""
        return self.write(directory, prefix, levels=[n])

    def write(self, directory, prefix: str = "value", levels=None) -> list[Path]:
        """One CSV per level (columns ``value,control``) plus a key=value manifest."""
        directory = Path(directory)
        directory.mkdir(parents=True, exist_ok=True)
        written = []
        for n in range(self.N + 1) if levels is None else levels:
            ctrl = self.policy[n] if n < self.N else np.full(self.grid.size, np.nan)
            path = directory / f"{prefix}_level{n:04d}.csv"
            np.savetxt(path, np.column_stack([self.values[n], ctrl]), delimiter=",",
                       fmt="%.17g", header="value,control", comments="")
            written.append(path)
        manifest = directory / f"{prefix}_manifest.txt"
        lines = [
            "box.lower=" + ",".join(repr(float(v)) for v in self.grid.box.lower),
            "box.upper=" + ",".join(repr(float(v)) for v in self.grid.box.upper),
            "nodes_per_dim=" + ",".join(str(n) for n in self.grid.nodes_per_dim),
            f"dt={self.dt!r}",
            f"t0={self.t0!r}",
            f"N={self.N}",
            "controls=" + ",".join(repr(float(u)) for u in self.controls),
            "ordering=row-major",
            "levels_written=" + ("all" if levels is None else ",".join(str(n) for n in levels)),
        ]
        manifest.write_text("\n".join(lines) + "\n")
        written.append(manifest)
        return written


def _golden_refine(objective, lo: float, hi: float, size: int, iters: int = 40):
    """Vectorised golden-section search of ``objective(u_array)`` on ``[lo, hi]``."""
    a = np.full(size, lo, dtype=float)
    b = np.full(size, hi, dtype=float)
    c = b - _GOLDEN * (b - a)
    d = a + _GOLDEN * (b - a)
    fc, fd = objective(c), objective(d)
    for _ in range(iters):
        left = fc < fd
        b = np.where(left, d, b)
        a = np.where(left, a, c)
        new_c = b - _GOLDEN * (b - a)
        new_d = a + _GOLDEN * (b - a)
        c_next = np.where(left, new_c, d)
        d_next = np.where(left, c, new_d)
        f_new = objective(np.where(left, new_c, new_d))
        fc, fd = np.where(left, f_new, fd), np.where(left, fc, f_new)
        c, d = c_next, d_next
    u = 0.5 * (a + b)
    return u, objective(u)


def sl_backward_solve(
    model: ReducedModel,
    grid: ValueGrid,
    cost: ReducedCost,
    controls,
    dt: float,
    N: int,
    t0: float = 0.0,
    refine: bool = False,
) -> ValueStack:
    """Backward semi-Lagrangian recursion from the terminal cost.

    Ties in the discrete minimisation go to the lowest control index. With
    ``refine=True`` each node additionally runs a golden-section search over
    ``[min(U), max(U)]`` and keeps the result when it beats the discrete best.
    """
    U = np.asarray(controls, dtype=float).reshape(-1)
    if U.size == 0:
        raise ValueError("control set is empty")
    if N < 1 or not dt > 0:
        raise ValueError(f"need N >= 1 and dt > 0, got N={N}, dt={dt}")
    X = grid.nodes()
    size = grid.size
    # the flow is autonomous, so every foot point and its stencil is fixed
    feet = [grid.interpolation_matrix(X + dt * model.rhs(X, u)) for u in U]
    values = np.empty((N + 1, size))
    policy = np.empty((N, size))
    index = np.empty((N, size), dtype=np.int64)
    values[N] = cost.terminal(X)
    _check_finite(values[N], N)
    cand = np.empty((U.size, size))
    for n in range(N - 1, -1, -1):
        t = t0 + n * dt
        w = dt * cost.weight(t)
        nxt = values[n + 1]
        for j, u in enumerate(U):
            cand[j] = w * cost.running(X, u, t) + feet[j] @ nxt
        best = np.argmin(cand, axis=0)
        index[n] = best
        policy[n] = U[best]
        values[n] = cand[best, np.arange(size)]
        if refine:
            def objective(u_arr):
                foot = X + dt * model.rhs(X, u_arr)
                return w * cost.running(X, u_arr, t) + interpolate_many(grid, nxt, foot)

            u_star, v_star = _golden_refine(objective, U.min(), U.max(), size)
            better = v_star < values[n]
            values[n] = np.where(better, v_star, values[n])
            policy[n] = np.where(better, u_star, policy[n])
            index[n] = np.where(better, -1, index[n])
        _check_finite(values[n], n)
    return ValueStack(grid, values, policy, index, U, float(dt), float(t0))


def _check_finite(v: np.ndarray, level: int) -> None:
    bad = np.flatnonzero(~np.isfinite(v))
    if bad.size:
        raise HJBError(f"non-finite value at level {level}, node {int(bad[0])}")


@dataclass
class SynthesisResult:
    times: np.ndarray
    states: np.ndarray
    controls: np.ndarray
    cost: float
    step_costs: np.ndarray
    warnings: list[str] = field(default_factory=list)

    @property
    def signal(self) -> ControlSignal:
        return ControlSignal(self.controls)


def synthesize_feedback(
    stack: ValueStack,
    model: ReducedModel,
    w_start,
    controls,
    dt: float,
    cost: ReducedCost,
    dt_sim: float | None = None,
    steps: int | None = None,
    refine: bool = False,
) -> SynthesisResult:
    """March forward choosing the control that minimises the one-step lookahead.

    The lookahead spans one value step ``dt`` (cut short at the horizon) and
    reads the value function linearly interpolated in time at the landing
    time; the state is advanced with ``dt_sim`` (defaults to ``dt``), so
    trajectories can be resolved more finely than the value function. With
    ``dt_sim == dt`` this is the plain one-step lookahead on level ``n + 1``.
    States leaving the box are clamped and a warning is kept.
    """
    U = np.asarray(controls, dtype=float).reshape(-1)
    dt_sim = dt if dt_sim is None else dt_sim
    if steps is None:
        steps = int(round(stack.N * dt / dt_sim))
    box = stack.grid.box
    horizon = stack.N * dt
    w = np.asarray(w_start, dtype=float).copy()
    notes: list[str] = []
    if not box.contains(w):
        notes.append(f"start state outside the box at t={stack.t0!r}; clamped")
        w = box.clamp(w)
    states = np.empty((steps + 1, model.dim))
    states[0] = w
    us = np.empty(steps)
    step_costs = np.empty(steps)
    for j in range(steps):
        tau = j * dt_sim
        t = stack.t0 + tau
        # never look past the horizon: land on it with a shortened step
        h = min(dt, horizon - tau)
        weight = h * cost.weight(t)
        W = np.repeat(w[None, :], U.size, axis=0)
        feet = W + h * model.rhs(W, U)
        cand = weight * cost.running(W, U, t) + stack.lookahead(tau + h, feet)
        k = int(np.argmin(cand))
        u = U[k]
        if refine:
            def objective(u_arr):
                Wr = np.repeat(w[None, :], u_arr.size, axis=0)
                return weight * cost.running(Wr, u_arr, t) + stack.lookahead(
                    tau + h, Wr + h * model.rhs(Wr, u_arr))

            u_star, v_star = _golden_refine(objective, U.min(), U.max(), 1)
            if v_star[0] < cand[k]:
                u = float(u_star[0])
        step_costs[j] = dt_sim * cost.weight(t) * float(cost.running(w[None, :], u, t)[0])
        us[j] = u
        w = w + dt_sim * model.rhs(w, u)
        if not box.contains(w):
            notes.append(f"trajectory left the box at t={t + dt_sim!r}; clamped")
            w = box.clamp(w)
        states[j + 1] = w
    total = float(np.sum(step_costs)) + float(cost.terminal(w[None, :])[0])
    for msg in notes[:5]:
        logger.warning(msg)
    times = stack.t0 + dt_sim * np.arange(steps + 1)
    return SynthesisResult(times, states, us, total, step_costs, notes)


@dataclass
class ChainResult:
    """Concatenated output of the per-window solves.

    ``trajectory`` has one column per snapshot time; at a shared boundary the
    column holds the start state of the later window. ``jumps[k]`` is the
    Euclidean size of the re-projection at the start of window ``k + 1``.
    """

    trajectory: np.ndarray | None
    control: ControlSignal | None
    reduced: list[SynthesisResult]
    stacks: list[ValueStack]
    boxes: list[BoxDomain]
    jumps: list[float]
    cost: float
    warnings: list[str] = field(default_factory=list)


def window_steps(length: float, dt: float) -> tuple[int, float]:
    """Value-function step count for a window and the adjusted step."""
    N = max(1, int(round(length / dt)))
    return N, length / N


def solve_window(
    model: ReducedModel,
    box: BoxDomain,
    cost: ReducedCost,
    controls,
    t_start: float,
    t_end: float,
    dt: float,
    nodes_per_dim,
    refine: bool = False,
) -> ValueStack:
    N, dt_w = window_steps(t_end - t_start, dt)
    grid = ValueGrid(box, nodes_per_dim)
    return sl_backward_solve(model, grid, cost, controls, dt_w, N, t0=t_start, refine=refine)


def coupled_terminal(next_stack: ValueStack, next_basis: PodBasis, basis: PodBasis):
    """Terminal cost reading the next window's initial value after re-projection."""
    transfer = next_basis.vectors.T @ basis.vectors

    def terminal(W):
        return interpolate_many(next_stack.grid, next_stack.values[0], np.atleast_2d(W) @ transfer.T)

    return terminal


def chain_subintervals(
    plan: SubIntervalPlan,
    models: list[ReducedModel],
    cost: CostSpec,
    controls,
    dt: float,
    *,
    nodes_per_dim,
    y_start=None,
    box_margin: float = 0.1,
    boxes: list[BoxDomain] | None = None,
    stacks: list[ValueStack] | None = None,
    coupling: str = "zero",
    refine: bool = False,
    synthesize: bool = True,
) -> ChainResult:
    """Solve and synthesise window by window, handing the state across boundaries.

    Each window gets its own value function and a feedback trajectory at the
    snapshot time step. The final lifted state of window ``k`` is projected
    onto the basis of window ``k + 1`` to start the next solve.

    ``coupling`` sets the terminal cost of every window but the last:
    ``"zero"`` uses no terminal cost, ``"value"`` solves the windows from
    last to first and uses the next window's initial value function,
    composed with the re-projection, as terminal cost.

    With ``synthesize=False`` only the value functions are computed and the
    result carries no trajectory.
    """
    if len(models) != plan.K:
        raise ValueError(f"{len(models)} models for {plan.K} windows")
    if coupling not in ("zero", "value"):
        raise ValueError(f"unknown coupling {coupling!r}")
    U = np.asarray(controls, dtype=float).reshape(-1)
    windows = plan.windows()
    spans = list(zip(plan.boundaries[:-1], plan.boundaries[1:]))
    if boxes is None:
        boxes = []
        for model, (t0, t1) in zip(models, spans):
            _, dt_w = window_steps(t1 - t0, dt)
            boxes.append(compute_box(model, U, t1 - t0, dt_w, box_margin))
    costs = [cost.reduced(m.basis, final=(k == plan.K - 1)) for k, m in enumerate(models)]
    solve = stacks is None
    stacks = [None] * plan.K if solve else list(stacks)
    for k in range(plan.K - 1, -1, -1):
        if coupling == "value" and k < plan.K - 1:
            costs[k] = ReducedCost(costs[k].running,
                                   coupled_terminal(stacks[k + 1], models[k + 1].basis, models[k].basis),
                                   costs[k].discount)
        if solve:
            t0, t1 = spans[k]
            stacks[k] = solve_window(models[k], boxes[k], costs[k], U, t0, t1, dt, nodes_per_dim, refine)
    if not synthesize:
        return ChainResult(None, None, [], stacks, list(boxes), [], float("nan"))

    first = models[0].basis
    y = first.vectors @ models[0].w0 if y_start is None else np.asarray(y_start, dtype=float)
    last_index = plan.indices[-1]
    traj = np.empty((first.size, last_index + 1))
    u_all = np.empty(last_index)
    reduced, jumps, notes = [], [], []
    total = 0.0
    for k, ((i0, i1), model) in enumerate(zip(windows, models)):
        t0, t1 = spans[k]
        basis = model.basis
        w = basis.vectors.T @ y
        if k > 0:
            jumps.append(float(np.linalg.norm(y - basis.vectors @ w)))
        rcost = costs[k]
        if coupling == "value" and k < plan.K - 1:
            # the next window accounts for the remaining cost itself
            rcost = ReducedCost(rcost.running, _zero_terminal, rcost.discount)
        syn = synthesize_feedback(stacks[k], model, w, U, stacks[k].dt, costs[k],
                                  dt_sim=(t1 - t0) / (i1 - i0), steps=i1 - i0, refine=refine)
        if rcost is not costs[k]:
            syn.cost -= float(costs[k].terminal(syn.states[-1:])[0])
        traj[:, i0:i1 + 1] = basis.vectors @ syn.states.T
        u_all[i0:i1] = syn.controls
        y = traj[:, i1].copy()
        total += syn.cost
        notes.extend(f"window {k}: {m}" for m in syn.warnings)
        reduced.append(syn)
    return ChainResult(traj, ControlSignal(u_all), reduced, list(stacks), list(boxes), jumps, total, notes)
