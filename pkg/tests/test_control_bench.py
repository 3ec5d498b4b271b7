import numpy as np
import pytest
from hypothesis import given, settings, strategies as st
from hypothesis.extra.numpy import arrays

from adapod.control_bench import (
    Diagnostics,
    brute_force_dp,
    error_norms,
    evaluate_cost,
    make_reference,
    reference_control,
    residual,
    riccati_lqr,
)
from adapod.galerkin_rom import ReducedModel, assemble_reduced, rollout
from adapod.hjb_solver import ReducedCost
from adapod.pde_lab import ControlSignal, PdeParams, commensurate_dt, initial_parabola, make_grid, simulate
from adapod.pod_reduce import single_window_plan

U3 = np.array([-1.0, 0.0, 1.0])
finite = st.floats(-100, 100, allow_nan=False)


@pytest.fixture(scope="module")
def adv():
    return make_grid(-1, 4, 0.1, 3, 0.008), PdeParams(0.05, 1.0)


def test_cost_examples(adv):
    g, _ = adv
    y = np.random.default_rng(0).normal(size=(g.nodes, g.steps + 1))
    assert evaluate_cost(y, np.zeros(g.steps), y, 0.01, g.dt, g.dx) == 0.0
    assert evaluate_cost(y, np.ones(g.steps), y, 0.01, g.dt, g.dx) == pytest.approx(0.03)
    z = np.zeros_like(y)
    u = np.linspace(-1, 1, g.steps)
    one = evaluate_cost(y, u, z, 0.01, g.dt, g.dx) - evaluate_cost(y, 0 * u, z, 0.01, g.dt, g.dx)
    two = evaluate_cost(y, u, z, 0.02, g.dt, g.dx) - evaluate_cost(y, 0 * u, z, 0.02, g.dt, g.dx)
    assert two == pytest.approx(2 * one, rel=1e-12)
    with pytest.raises(ValueError):
        evaluate_cost(y, u, z[:, :-1], 0.01, g.dt, g.dx)


def test_residual_vanishes_on_solver_output(adv):
    g, p = adv
    u = reference_control("test4", g)
    Y = simulate(initial_parabola(g), u, p, g)
    assert residual(Y.data, u, p, g) <= 1e-10
    assert residual(np.zeros((g.nodes, g.steps + 1)), np.zeros(g.steps), p, g) == 0.0
    assert residual(Y.data, np.zeros(g.steps), p, g) > 0.1


def test_residual_of_projected_trajectory_is_order_one(adv):
    g, p = adv
    Y = simulate(initial_parabola(g), 0.0, p, g)
    basis = single_window_plan(Y, 4).bases[0]
    model = assemble_reduced(basis, p, g, Y.data[:, 0])
    W = rollout(model, model.w0, np.zeros(g.steps), g.dt)
    assert 1e-3 < residual(basis.vectors @ W.T, np.zeros(g.steps), p, g) < 10


def test_error_norm_examples():
    g = make_grid(0, 1, 0.01, 1, 0.1)
    assert error_norms(np.ones(g.nodes), np.ones(g.nodes), g.dx) == (0.0, 0.0)
    l1, l2 = error_norms(np.ones(g.nodes), np.zeros(g.nodes), g.dx)
    assert l1 == pytest.approx(1.0) and l2 == pytest.approx(1.0)


@settings(max_examples=60, deadline=None)
@given(arrays(np.float64, 3 * 11, elements=finite), st.floats(-5, 5))
def test_error_norms_are_norms(data, alpha):
    a, b, c = data.reshape(3, 11)
    for k in (0, 1):
        ab, bc, ac = error_norms(a, b, 0.1)[k], error_norms(b, c, 0.1)[k], error_norms(a, c, 0.1)[k]
        assert ac <= ab + bc + 1e-12 * (1 + ab + bc)
        scaled = error_norms(alpha * a, alpha * b, 0.1)[k]
        assert scaled == pytest.approx(abs(alpha) * ab, rel=1e-12, abs=1e-12)


def test_diagnostics_validation():
    d = Diagnostics(1.0, 0.5, 0.1, 0.2, {"K": 3})
    assert "residual=0.5" in d.report() and "residual_norm=" in d.report()
    assert d.csv_header().split(",")[-1] == "K" and d.csv_row().endswith(",3")
    with pytest.raises(ValueError):
        Diagnostics(float("nan"), 0.0, 0.0, 0.0)
    with pytest.raises(ValueError):
        Diagnostics(1.0, -1.0, 0.0, 0.0)


def _scalar():
    model = ReducedModel([[-1.0]], [1.0], w0=[0.8])
    cost = ReducedCost(lambda W, u, t: np.sum(np.atleast_2d(W) ** 2, axis=1) + 0.01 * np.asarray(u) ** 2)
    return model, cost


def test_brute_force_examples():
    model, cost = _scalar()
    best, seq = brute_force_dp(model, cost, U3, 0.1, 1, model.w0)
    one_step = [0.1 * cost.running(model.w0[None], u, 0.0)[0] for u in U3]
    assert best == pytest.approx(min(one_step)) and seq.size == 1
    zero = ReducedCost(lambda W, u, t: np.zeros(len(W)))
    best, seq = brute_force_dp(model, zero, U3, 0.1, 4, model.w0)
    assert best == 0.0 and np.all(seq == -1.0)
    with pytest.raises(ValueError, match=r"3\^13"):
        brute_force_dp(model, cost, U3, 0.1, 13, model.w0)


def test_brute_force_beats_random_sequences():
    model, cost = _scalar()
    best, seq = brute_force_dp(model, cost, U3, 0.1, 6, model.w0)
    rng = np.random.default_rng(1)

    def total(us):
        W = rollout(model, model.w0, us, 0.1)
        return sum(0.1 * cost.running(W[n:n + 1], u, 0)[0] for n, u in enumerate(us))

    assert total(seq) == pytest.approx(best, rel=1e-12)
    for _ in range(100):
        assert best <= total(rng.choice(U3, 6)) + 1e-14


def test_lqr_zero_weight_gives_zero_control():
    model = ReducedModel(-np.eye(2), np.ones(2))
    res = riccati_lqr(model, np.zeros((2, 2)), 1.0, 0.1, 10, np.ones(2))
    assert not res.gains.any() and not res.controls.any()
    with pytest.raises(ValueError):
        riccati_lqr(model, np.zeros((2, 2)), 0.0, 0.1, 10, np.ones(2))


def test_lqr_scalar_gain_tends_to_are_solution():
    # w' = u, q = r = 1: the algebraic Riccati equation gives p = 1 and gain 1
    res = riccati_lqr(ReducedModel([[0.0]], [1.0]), [[1.0]], 1.0, 1e-3, 20000, [1.0])
    assert res.gains[0, 0] == pytest.approx(1.0, abs=2e-3)


def test_lqr_not_worse_than_discrete_controls_inside_hull():
    model = ReducedModel([[-0.2]], [1.0], w0=[0.05])
    cost = ReducedCost(lambda W, u, t: np.sum(np.atleast_2d(W) ** 2, axis=1) + 1.0 * np.asarray(u) ** 2)
    res = riccati_lqr(model, [[1.0]], 1.0, 0.1, 6, model.w0)
    assert np.all(np.abs(res.controls) <= 1.0)
    best, _ = brute_force_dp(model, cost, U3, 0.1, 6, model.w0)
    assert res.cost <= best + 1e-12


def test_lqr_regulates_heat():
    dt, _ = commensurate_dt(5.0, 0.012)
    g = make_grid(0, 1, 0.02, 5, dt)
    p = PdeParams(1 / 60, 0.0)
    Y = simulate(initial_parabola(g), 0.0, p, g)
    basis = single_window_plan(Y, 3).bases[0]
    model = assemble_reduced(basis, p, g, Y.data[:, 0])
    res = riccati_lqr(model, g.dx * np.eye(3), 0.01, g.dt, g.steps, model.w0)
    free = rollout(model, model.w0, np.zeros(g.steps), g.dt)
    assert np.linalg.norm(res.states[-1]) < np.linalg.norm(free[-1])


def test_references(adv):
    g, p = adv
    assert not make_reference("zero", p, g).any()
    u = reference_control("test4", g).values
    t = g.times[:-1]
    assert np.all(u[t < 1 - 1e-9] == -1) and np.all(u[(t > 1 + 1e-9) & (t < 2 - 1e-9)] == 0)
    assert np.all(u[t > 2 + 1e-9] == 1) and u[125] == 0 and u[250] == 1
    y0 = initial_parabola(g)
    np.testing.assert_array_equal(make_reference("from_control:zero", p, g, y0),
                                  simulate(y0, ControlSignal.constant(g, 0.0), p, g).data)
    with pytest.raises(ValueError):
        make_reference("from_control:zero", p, g)
    with pytest.raises(ValueError):
        make_reference("sine", p, g)
