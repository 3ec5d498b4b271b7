import numpy as np
import pytest
from hypothesis import given, settings, strategies as st
from hypothesis.extra.numpy import arrays

from adapod.pde_lab import PdeParams, SnapshotMatrix, commensurate_dt, initial_parabola, make_grid, simulate
from adapod.pod_reduce import (
    adaptive_split,
    calibrate_threshold,
    compute_svd,
    energy_ratio,
    pod_basis,
    projection_functional,
    single_window_plan,
    truncation_error,
)

matrices = arrays(np.float64, st.tuples(st.integers(2, 12), st.integers(2, 10)),
                  elements=st.floats(-10, 10, allow_nan=False, width=64))


@pytest.fixture(scope="module")
def heat_snapshots():
    dt, _ = commensurate_dt(5.0, 0.012)
    g = make_grid(0, 1, 0.02, 5, dt)
    return simulate(initial_parabola(g), 0.0, PdeParams(1 / 60, 0.0), g)


@pytest.fixture(scope="module")
def advection_snapshots():
    g = make_grid(-1, 4, 0.1, 3, 0.008)
    return simulate(initial_parabola(g), 0.0, PdeParams(0.05, 1.0), g)


def test_svd_small_cases():
    svd = compute_svd(np.eye(3))
    np.testing.assert_allclose(svd.singular_values, [1, 1, 1])
    svd = compute_svd(np.array([[2.0, 2.0], [0.0, 0.0]]))
    assert svd.rank == 1
    assert svd.singular_values[0] == pytest.approx(2 * np.sqrt(2))
    np.testing.assert_allclose(svd.left_vectors[:, 0], [1, 0])
    svd = compute_svd(np.diag([3.0, 1.0]))
    np.testing.assert_allclose(svd.singular_values, [3, 1])
    np.testing.assert_allclose(np.abs(svd.left_vectors), np.eye(2))


def test_svd_rejects_bad_input():
    with pytest.raises(ValueError):
        compute_svd(np.empty((0, 3)))
    with pytest.raises(ValueError):
        compute_svd(np.array([[np.nan, 1.0]]))


@settings(max_examples=60, deadline=None)
@given(matrices)
def test_svd_invariants(Y):
    svd = compute_svd(Y)
    if svd.rank == 0:
        assert not np.any(Y)
        return
    s = svd.singular_values
    assert np.all(np.diff(s) <= 0) and s[-1] > 1e-12 * s[0]
    np.testing.assert_allclose(svd.left_vectors.T @ svd.left_vectors, np.eye(svd.rank), atol=1e-10)
    np.testing.assert_allclose(svd.right_vectors.T @ svd.right_vectors, np.eye(svd.rank), atol=1e-10)
    recon = svd.left_vectors @ np.diag(s) @ svd.right_vectors.T
    assert np.linalg.norm(recon - Y) <= 1e-10 * np.linalg.norm(Y)
    for col in svd.left_vectors.T:
        first = col[np.abs(col) > 1e-8 * np.abs(col).max()][0]
        assert first > 0


@settings(max_examples=60, deadline=None)
@given(matrices, st.integers(1, 10))
def test_truncation_identity(Y, ell):
    svd = compute_svd(Y)
    if svd.rank == 0:
        return
    ell = min(ell, svd.rank)
    J = truncation_error(Y, pod_basis(Y, ell, svd))
    tail = float(np.sum(svd.singular_values[ell:] ** 2))
    assert J == pytest.approx(tail, rel=1e-8, abs=1e-9 * np.sum(Y**2))


@settings(max_examples=40, deadline=None)
@given(matrices, st.integers(0, 10000))
def test_pod_beats_random_subspaces(Y, seed):
    svd = compute_svd(Y)
    if svd.rank < 2:
        return
    ell = svd.rank - 1
    J = truncation_error(Y, pod_basis(Y, ell, svd))
    Q, _ = np.linalg.qr(np.random.default_rng(seed).normal(size=(Y.shape[0], ell)))
    assert J <= projection_functional(Y, Q) + 1e-10 * (1 + np.sum(Y**2))


@settings(max_examples=60, deadline=None)
@given(arrays(np.float64, st.integers(1, 12), elements=st.floats(1e-3, 100)), st.booleans())
def test_energy_ratio_monotone(sigma, squared):
    sigma = np.sort(sigma)[::-1]
    values = [energy_ratio(sigma, ell, squared) for ell in range(1, sigma.size + 1)]
    assert all(b >= a for a, b in zip(values, values[1:]))
    assert values[-1] == 1.0


def test_energy_ratio_examples():
    assert energy_ratio([3, 1], 1) == 0.75
    assert energy_ratio([3, 1], 1, squared=True) == 0.9
    with pytest.raises(ValueError):
        energy_ratio([3, 1], 3)


def test_pod_basis_examples():
    b = pod_basis(np.diag([3.0, 1.0]), 1)
    np.testing.assert_allclose(np.abs(b.vectors[:, 0]), [1, 0])
    assert truncation_error(np.diag([3.0, 1.0]), b) == pytest.approx(1.0)
    with pytest.raises(ValueError, match="d=2"):
        pod_basis(np.diag([3.0, 1.0]), 3)
    rank_one = np.outer([1.0, 2.0, 2.0], [1.0, -1.0, 0.5])
    b = pod_basis(rank_one, 1)
    np.testing.assert_allclose(b.vectors[:, 0], np.array([1, 2, 2]) / 3)
    assert truncation_error(rank_one, b) == pytest.approx(0.0, abs=1e-20)


def test_heat_snapshots_need_three_modes(heat_snapshots):
    Y = heat_snapshots
    svd = compute_svd(Y)
    assert energy_ratio(svd.singular_values, 3) >= 0.99
    assert truncation_error(Y, pod_basis(Y, 3, svd)) / np.sum(Y.data**2) <= 1e-3
    assert adaptive_split(Y, 3, 0.99).K == 1


def test_tiny_snapshot_set_is_one_window():
    Y = SnapshotMatrix(np.random.default_rng(0).normal(size=(6, 3)))
    for tau in (0.1, 0.5, 0.999):
        assert adaptive_split(Y, 1, tau).K == 1


def test_split_reproduces_three_windows(advection_snapshots):
    plan = calibrate_threshold(advection_snapshots, 4, [0.99, 0.993, 0.995, 0.997],
                               accept=lambda p: p.K == 3 and p.lengths()[-1] == max(p.lengths()))
    assert plan is not None and plan.K == 3
    assert plan.lengths()[-1] == max(plan.lengths())


def test_split_first_boundary_at_tau_099(advection_snapshots):
    plan = adaptive_split(advection_snapshots, 4, 0.99)
    assert plan.boundaries[1] == pytest.approx(0.744)


@settings(max_examples=25, deadline=None)
@given(st.floats(0.9, 0.9999), st.integers(1, 4), st.booleans())
def test_split_invariants(tau, ell, squared):
    g = make_grid(-1, 4, 0.1, 1.0, 0.008)
    Y = simulate(initial_parabola(g), 0.0, PdeParams(0.05, 1.0), g)
    plan = adaptive_split(Y, ell, tau, squared)
    assert plan.indices[0] == 0 and plan.indices[-1] == Y.shape[1] - 1
    assert all(b - a >= 2 for a, b in plan.windows())
    assert np.all(np.diff(plan.boundaries) > 0)
    for (a, b), basis, energy in zip(plan.windows(), plan.bases, plan.attained):
        assert basis.window == (Y.times[a], Y.times[b])
        assert energy >= tau or plan.warnings
        np.testing.assert_allclose(basis.vectors.T @ basis.vectors, np.eye(basis.rank), atol=1e-10)


def test_split_manifest_and_single_plan(advection_snapshots):
    plan = single_window_plan(advection_snapshots, 4)
    assert plan.K == 1 and plan.indices == [0, 375]
    lines = plan.manifest_lines()
    assert "split.K=1" in lines and any(line.startswith("split.window0.energy=") for line in lines)


def test_split_rejects_bad_threshold(advection_snapshots):
    with pytest.raises(ValueError):
        adaptive_split(advection_snapshots, 4, 1.5)
