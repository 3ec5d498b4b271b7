"""Galerkin projection of the finite-difference dynamics onto a POD basis."""

from __future__ import annotations

import logging
from dataclasses import dataclass, field

import numpy as np

from adapod.pde_lab import Grid1D, PdeParams, fd_operator, interior_indicator
from adapod.pod_reduce import PodBasis

logger = logging.getLogger(__name__)


@dataclass
class ReducedModel:
    """Reduced dynamics ``w' = M^{-1} (A w + b u)``.

    Attributes
    ----------
    A : (ell, ell) ndarray
        Galerkin compression ``psi_i^T A psi_j`` of the full operator.
    b : (ell,) ndarray
        Image of the unit control, so ``b(u) = u * b``.
    M : (ell, ell) ndarray
        Gramian of the basis; the identity for POD bases.
    basis : PodBasis or None
        Basis used for lifting. Hand-built models may omit it.
    w0 : (ell,) ndarray
        Projected initial condition.
    """

    A: np.ndarray
    b: np.ndarray
    M: np.ndarray | None = None
    basis: PodBasis | None = None
    w0: np.ndarray | None = None
    _A_eff: np.ndarray = field(init=False, repr=False)
    _b_eff: np.ndarray = field(init=False, repr=False)

    def __post_init__(self):
        self.A = np.atleast_2d(np.asarray(self.A, dtype=float))
        ell = self.A.shape[0]
        self.b = np.asarray(self.b, dtype=float).reshape(ell)
        self.M = np.eye(ell) if self.M is None else np.atleast_2d(np.asarray(self.M, dtype=float))
        self.w0 = np.zeros(ell) if self.w0 is None else np.asarray(self.w0, dtype=float).reshape(ell)
        if self.A.shape != (ell, ell) or self.M.shape != (ell, ell):
            raise ValueError(f"inconsistent reduced blocks: A {self.A.shape}, M {self.M.shape}")
        if self.basis is not None and self.basis.rank != ell:
            raise ValueError(f"basis rank {self.basis.rank} does not match dimension {ell}")
        if np.allclose(self.M, np.eye(ell), rtol=0, atol=1e-10):
            self._A_eff, self._b_eff = self.A, self.b
        else:
            if np.linalg.cond(self.M) > 1e12:
                raise np.linalg.LinAlgError("mass matrix is singular")
            self._A_eff = np.linalg.solve(self.M, self.A)
            self._b_eff = np.linalg.solve(self.M, self.b)

    @property
    def dim(self) -> int:
        return self.A.shape[0]

    @property
    def S(self) -> np.ndarray:
        """Stiffness-like block, ``-A``."""
        return -self.A

    def rhs(self, W: np.ndarray, u) -> np.ndarray:
        """Vectorised ``F`` for states stacked along the first axis."""
        W = np.asarray(W, dtype=float)
        return W @ self._A_eff.T + np.multiply.outer(np.asarray(u, dtype=float), self._b_eff)

    def manifest_lines(self, prefix: str = "model") -> list[str]:
        return [
            f"{prefix}.dim={self.dim}",
            f"{prefix}.A=" + ";".join(",".join(repr(float(v)) for v in row) for row in self.A),
            f"{prefix}.b=" + ",".join(repr(float(v)) for v in self.b),
            f"{prefix}.w0=" + ",".join(repr(float(v)) for v in self.w0),
        ]


@dataclass
class BoxDomain:
    """Coordinate box; ``lower/upper`` include the margin, ``raw_*`` do not."""

    lower: np.ndarray
    upper: np.ndarray
    raw_lower: np.ndarray | None = None
    raw_upper: np.ndarray | None = None

    def __post_init__(self):
        self.lower = np.asarray(self.lower, dtype=float).reshape(-1)
        self.upper = np.asarray(self.upper, dtype=float).reshape(-1)
        if self.lower.shape != self.upper.shape or np.any(self.lower > self.upper):
            raise ValueError("box needs lower <= upper in every dimension")
        if self.raw_lower is None:
            self.raw_lower, self.raw_upper = self.lower.copy(), self.upper.copy()

    @property
    def dim(self) -> int:
        return self.lower.size

    @property
    def widths(self) -> np.ndarray:
        return self.upper - self.lower

    def contains(self, w, tol: float = 0.0) -> bool:
        w = np.asarray(w, dtype=float)
        return bool(np.all(w >= self.lower - tol) and np.all(w <= self.upper + tol))

    def clamp(self, W: np.ndarray) -> np.ndarray:
        return np.clip(W, self.lower, self.upper)


def assemble_reduced(basis: PodBasis, params: PdeParams, grid: Grid1D, y0=None) -> ReducedModel:
    """Compress the full finite-difference operator onto ``basis``."""
    if basis.size != grid.nodes:
        raise ValueError(f"basis has {basis.size} rows but the grid has {grid.nodes} nodes")
    P = basis.vectors
    A = P.T @ fd_operator(params, grid) @ P
    b = P.T @ interior_indicator(grid)
    M = P.T @ P
    w0 = None if y0 is None else P.T @ np.asarray(y0, dtype=float)
    return ReducedModel(A=A, b=b, M=M, basis=basis, w0=w0)


def project(y, basis: PodBasis) -> np.ndarray:
    y = np.asarray(y, dtype=float)
    if y.shape[0] != basis.size:
        raise ValueError(f"vector has length {y.shape[0]}, basis has {basis.size} rows")
    return basis.vectors.T @ y


def lift(w, basis: PodBasis) -> np.ndarray:
    w = np.asarray(w, dtype=float)
    if w.shape[0] != basis.rank:
        raise ValueError(f"coefficients have length {w.shape[0]}, basis rank is {basis.rank}")
    return basis.vectors @ w


def reduced_rhs(model: ReducedModel, w, u: float, s: float | None = None) -> np.ndarray:
    """``F(w, u)``; the time argument is accepted for autonomous models and ignored."""
    return model.rhs(np.asarray(w, dtype=float), u)


def reduced_flow(model: ReducedModel, w, u: float, dt: float) -> np.ndarray:
    """One explicit Euler step of the reduced dynamics."""
    if not dt > 0:
        raise ValueError(f"dt must be positive, got {dt}")
    w = np.asarray(w, dtype=float)
    return w + dt * model.rhs(w, u)


def rollout(model: ReducedModel, w_start, controls, dt: float) -> np.ndarray:
    """Euler trajectory under a control sequence; row ``n`` is the state at step ``n``."""
    controls = np.asarray(controls, dtype=float).reshape(-1)
    W = np.empty((controls.size + 1, model.dim))
    W[0] = w_start
    for n, u in enumerate(controls):
        W[n + 1] = W[n] + dt * model.rhs(W[n], u)
    return W


def compute_box(
    model: ReducedModel,
    controls,
    horizon: float,
    dt: float,
    margin: float = 0.1,
    min_width: float = 1e-6,
    w_start=None,
) -> BoxDomain:
    """Bounding box of the constant-control reduced trajectories.

    Each control in ``controls`` is held constant over ``[0, horizon]`` and
    integrated from ``w_start`` (default ``model.w0``) with the Euler flow at
    step ``dt``. Coordinate-wise extremes over all trajectories give the raw
    box, which is then widened by ``margin`` times its width on both sides.
    """
    U = np.asarray(controls, dtype=float).reshape(-1)
    if U.size == 0:
        raise ValueError("control set is empty")
    if not np.allclose(np.sort(U), np.sort(-U)):
        logger.warning("control set %s is not symmetric", U.tolist())
    w_start = model.w0 if w_start is None else np.asarray(w_start, dtype=float)
    steps = max(1, int(round(horizon / dt)))
    lo = np.full(model.dim, np.inf)
    hi = np.full(model.dim, -np.inf)
    for u in U:
        traj = rollout(model, w_start, np.full(steps, u), horizon / steps)
        scale = 1e10 * (1.0 + np.max(np.abs(w_start)))
        if not np.all(np.isfinite(traj)) or np.max(np.abs(traj)) > scale:
            raise ValueError(f"constant-control trajectory diverges for u={float(u)!r}")
        lo = np.minimum(lo, traj.min(axis=0))
        hi = np.maximum(hi, traj.max(axis=0))
    width = hi - lo
    lower = lo - margin * width
    upper = hi + margin * width
    thin = (upper - lower) < min_width
    centre = 0.5 * (lo + hi)
    lower[thin] = centre[thin] - 0.5 * min_width
    upper[thin] = centre[thin] + 0.5 * min_width
    logger.debug("box widths %s", (upper - lower).tolist())
    return BoxDomain(lower, upper, lo, hi)
