"""POD bases from snapshot SVDs and greedy time-window splitting."""

from __future__ import annotations

import logging
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from adapod.pde_lab import SnapshotMatrix

logger = logging.getLogger(__name__)

RANK_CUTOFF = 1e-12
MIN_WINDOW = 3


@dataclass
class SvdResult:
    left_vectors: np.ndarray
    singular_values: np.ndarray
    right_vectors: np.ndarray

    @property
    def rank(self) -> int:
        return self.singular_values.size


@dataclass
class PodBasis:
    """Orthonormal columns ``vectors[:, :rank]`` plus the spectrum they came from.

    ``window`` is the ``(t_start, t_end)`` pair of the snapshots used.
    """

    vectors: np.ndarray
    singular_values: np.ndarray
    window: tuple[float, float] = (0.0, 0.0)

    @property
    def rank(self) -> int:
        return self.vectors.shape[1]

    @property
    def size(self) -> int:
        return self.vectors.shape[0]

    def to_csv(self, path) -> None:
        np.savetxt(Path(path), self.vectors, delimiter=",", fmt="%.17g")


@dataclass
class SubIntervalPlan:
    """Partition of the snapshot times into windows sharing their end snapshots.

    ``indices[k]`` and ``indices[k + 1]`` are the first and last snapshot
    columns of window ``k``; ``boundaries`` holds the matching times.
    """

    indices: list[int]
    boundaries: list[float]
    bases: list[PodBasis]
    threshold: float
    rank: int
    attained: list[float]
    squared: bool = False
    warnings: list[str] = field(default_factory=list)

    @property
    def K(self) -> int:
        return len(self.bases)

    @property
    def unattainable(self) -> bool:
        return any(e < self.threshold for e in self.attained)

    def windows(self):
        return list(zip(self.indices[:-1], self.indices[1:]))

    def lengths(self) -> list[float]:
        return [float(v) for v in np.diff(self.boundaries)]

    def manifest_lines(self) -> list[str]:
        lines = [
            f"split.K={self.K}",
            f"split.rank={self.rank}",
            f"split.tau={self.threshold!r}",
            f"split.energy_variant={'squared' if self.squared else 'linear'}",
            "split.boundaries=" + ",".join(repr(float(t)) for t in self.boundaries),
            "split.indices=" + ",".join(str(i) for i in self.indices),
        ]
        for k, e in enumerate(self.attained):
            lines.append(f"split.window{k}.energy={e!r}")
        for w in self.warnings:
            lines.append(f"split.warning={w}")
        return lines


def _matrix(Y) -> np.ndarray:
    return Y.data if isinstance(Y, SnapshotMatrix) else np.asarray(Y, dtype=float)


def _fix_signs(vectors: np.ndarray, right: np.ndarray | None = None) -> None:
    """Make the first non-negligible entry of each column positive, in place."""
    for j in range(vectors.shape[1]):
        col = vectors[:, j]
        big = np.abs(col) > 1e-8 * np.max(np.abs(col))
        if col[np.argmax(big)] < 0:
            vectors[:, j] = -col
            if right is not None:
                right[:, j] = -right[:, j]


def compute_svd(Y) -> SvdResult:
    """Thin SVD truncated to the numerical rank.

    Singular values below ``1e-12 * sigma_1`` are dropped; left vectors follow
    the positive-first-entry sign convention.
    """
    data = _matrix(Y)
    if data.size == 0:
        raise ValueError("empty snapshot matrix")
    if not np.all(np.isfinite(data)):
        raise ValueError("snapshot matrix contains non-finite entries")
    U, s, Vt = np.linalg.svd(data, full_matrices=False)
    if s.size == 0 or s[0] == 0.0:
        d = 0
    else:
        d = int(np.count_nonzero(s > RANK_CUTOFF * s[0]))
    U = U[:, :d].copy()
    V = Vt[:d].T.copy()
    _fix_signs(U, V)
    return SvdResult(U, s[:d].copy(), V)


def pod_basis(Y, ell: int, svd: SvdResult | None = None) -> PodBasis:
    """First ``ell`` left singular vectors of ``Y``."""
    svd = compute_svd(Y) if svd is None else svd
    if not 1 <= ell <= svd.rank:
        raise ValueError(f"requested rank {ell} but the snapshot matrix has rank d={svd.rank}")
    if isinstance(Y, SnapshotMatrix):
        window = (float(Y.times[0]), float(Y.times[-1]))
    else:
        window = (0.0, 0.0)
    return PodBasis(svd.left_vectors[:, :ell].copy(), svd.singular_values.copy(), window)


def energy_ratio(sigma, ell: int, squared: bool = False) -> float:
    """Share of the singular-value sum captured by the first ``ell`` values.

    With ``squared=True`` the squares are summed instead (the usual energy).
    """
    s = np.asarray(sigma, dtype=float)
    if s.size == 0:
        raise ValueError("empty singular value vector")
    if not 1 <= ell <= s.size:
        raise ValueError(f"ell={ell} outside 1..{s.size}")
    if squared:
        s = s**2
    partial = np.cumsum(s)
    return float(partial[ell - 1] / partial[-1])


def truncation_error(Y, basis: PodBasis) -> float:
    """Squared Frobenius norm of the snapshots' residual after projection."""
    data = _matrix(Y)
    if data.shape[0] != basis.size:
        raise ValueError(f"snapshots have {data.shape[0]} rows, basis has {basis.size}")
    P = basis.vectors
    R = data - P @ (P.T @ data)
    return float(np.sum(R * R))


def projection_functional(Y, vectors) -> float:
    """Same quantity as :func:`truncation_error` for an arbitrary orthonormal set."""
    return truncation_error(Y, PodBasis(np.asarray(vectors, dtype=float), np.empty(0)))


def _window_energy(data: np.ndarray, ell: int, squared: bool) -> tuple[float, SvdResult]:
    svd = compute_svd(data)
    if svd.rank <= ell:
        return 1.0, svd
    return energy_ratio(svd.singular_values, ell, squared), svd


def adaptive_split(Y: SnapshotMatrix, ell: int, tau: float, squared: bool = False) -> SubIntervalPlan:
    """Greedy left-to-right windowing driven by the energy ratio.

    Starting from the current boundary the window grows one snapshot at a
    time. When the window's energy ratio first drops below ``tau`` the window
    is closed at the previous snapshot, which also opens the next window.
    Windows never hold fewer than three snapshots, and a remainder too short
    to form its own window is absorbed into the last one.
    """
    if not isinstance(Y, SnapshotMatrix):
        Y = SnapshotMatrix(Y)
    n = Y.shape[1]
    if n < MIN_WINDOW:
        raise ValueError(f"need at least {MIN_WINDOW} snapshots, got {n}")
    if not 0 < tau < 1:
        raise ValueError(f"threshold must lie in (0, 1), got {tau}")
    if ell < 1:
        raise ValueError(f"rank must be positive, got {ell}")

    last = n - 1
    indices = [0]
    notes: list[str] = []
    start = 0
    while True:
        stop = None
        for end in range(start + MIN_WINDOW - 1, last + 1):
            energy, _ = _window_energy(Y.data[:, start:end + 1], ell, squared)
            if energy < tau:
                if end == start + MIN_WINDOW - 1:
                    notes.append(
                        f"threshold not reached on the minimal window starting at t={float(Y.times[start])!r}"
                    )
                    stop = end
                else:
                    stop = end - 1
                break
        if stop is None or last - stop < MIN_WINDOW - 1:
            if stop is not None:
                notes.append(f"short remainder after t={float(Y.times[stop])!r} merged into final window")
            indices.append(last)
            break
        indices.append(stop)
        start = stop

    bases, attained = [], []
    for i0, i1 in zip(indices[:-1], indices[1:]):
        block = Y.window(i0, i1)
        energy, svd = _window_energy(block.data, ell, squared)
        rank = min(ell, svd.rank)
        if rank < ell:
            notes.append(f"window [{float(block.times[0])!r}, {float(block.times[-1])!r}] has rank {svd.rank} < {ell}")
        bases.append(pod_basis(block, rank, svd))
        attained.append(energy)
    for msg in notes:
        logger.warning(msg)
    return SubIntervalPlan(
        indices=indices,
        boundaries=[float(Y.times[i]) for i in indices],
        bases=bases,
        threshold=float(tau),
        rank=ell,
        attained=attained,
        squared=squared,
        warnings=notes,
    )


def single_window_plan(Y: SnapshotMatrix, ell: int, tau: float = 0.5, squared: bool = False) -> SubIntervalPlan:
    """One global basis over all snapshots (the non-adaptive reference)."""
    energy, svd = _window_energy(Y.data, ell, squared)
    basis = pod_basis(Y, min(ell, svd.rank), svd)
    last = Y.shape[1] - 1
    return SubIntervalPlan(
        indices=[0, last],
        boundaries=[float(Y.times[0]), float(Y.times[last])],
        bases=[basis],
        threshold=float(tau),
        rank=ell,
        attained=[energy],
        squared=squared,
    )


def last_window_longest(plan: SubIntervalPlan) -> bool:
    lengths = plan.lengths()
    return plan.K >= 2 and lengths[-1] == max(lengths)


def calibrate_threshold(Y: SnapshotMatrix, ell: int, candidates, accept=last_window_longest,
                        squared: bool = False) -> SubIntervalPlan | None:
    """First plan, scanning ``candidates`` in order, that ``accept`` approves."""
    for tau in candidates:
        plan = adaptive_split(Y, ell, float(tau), squared)
        if accept(plan):
            return plan
    return None
