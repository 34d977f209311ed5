import numpy as np
import pytest
import scipy.sparse as sp
from sklearn.base import clone

from ultraweak.analysis import l2_error
from ultraweak.exceptions import ConfigError, NotSPD, OrderTooLow, PointOutOfDomain
from ultraweak.problem import ConstantAdvection, TransportProblem, catalog
from ultraweak.solver import (
    TransportSolver,
    discretize,
    evaluate,
    factorize,
    post_process,
    solve_full,
    solve_spd,
)


def test_decay_reference_value():
    est = TransportSolver("1d-decay", n_cells=8).fit()
    assert est.l2_error() == pytest.approx(0.01664, abs=1e-4)


def test_homogeneous_problem_gives_zero():
    prob = TransportProblem("zero", 2, ConstantAdvection([1.0, 0.5]))
    op, rhs = discretize(prob, 4, 2)
    sol = solve_full(op, rhs)
    assert np.all(sol.w == 0) and np.all(sol.u == 0)
    assert np.all(evaluate(sol, np.random.default_rng(0).random((5, 2))) == 0)


def test_cell_averages_of_linear_solution():
    op, rhs = discretize(catalog("1d-linear"), 2, 1)
    sol = solve_full(op, rhs)
    # dense oracle
    w = np.linalg.solve(op.gram.toarray(), rhs)
    assert np.allclose(sol.w, w)
    assert np.allclose(evaluate(sol, [[0.1], [0.4], [0.6], [0.9]]), [0.25, 0.25, 0.75, 0.75])


def test_residual_and_reconstruction():
    op, rhs = discretize(catalog("2d-g2"), 8, 2)
    sol = solve_full(op, rhs)
    assert sol.diagnostics["relative_residual"] < 1e-10
    assert np.array_equal(sol.u, op.bstar @ sol.w)


def test_cg_agrees_with_direct():
    op, rhs = discretize(catalog("2d-g1"), 8, 1)
    wd, _ = solve_spd(op.gram, rhs, "direct")
    wc, info = solve_spd(op.gram, rhs, "cg")
    assert info["method"] == "cg"
    assert np.allclose(wd, wc, rtol=1e-8, atol=1e-10)


def test_not_spd():
    with pytest.raises(NotSPD):
        factorize(sp.csr_matrix(np.array([[1.0, 2.0], [2.0, 1.0]])))
    with pytest.raises(NotSPD):
        solve_spd(sp.csr_matrix(np.diag([1.0, -1.0])), np.ones(2), "cg")


def test_general_mode_evaluation_matches_constant():
    prob = catalog("2d-g1")
    pts = np.random.default_rng(2).random((40, 2))
    vals = []
    for mode in ("constant", "general"):
        op, rhs = discretize(prob, 6, 2, mode=mode)
        vals.append(evaluate(solve_full(op, rhs), pts))
    assert np.allclose(vals[0], vals[1], atol=1e-12)


def test_pw_constant_equals_constant_for_constant_data():
    prob = catalog("2d-g3")
    a, rhs = discretize(prob, 4, 2, mode="constant")
    b, _ = discretize(prob, 4, 2, mode="pwconstant")
    assert abs(a.gram - b.gram).max() < 1e-12 * abs(a.gram).max()


def test_evaluate_out_of_domain():
    est = TransportSolver("1d-decay", n_cells=4).fit()
    with pytest.raises(PointOutOfDomain):
        est.predict([[1.5]])


def test_post_process_properties():
    op, rhs = discretize(catalog("2d-g3"), 8, 2)
    sol = solve_full(op, rhs)
    full = post_process(sol)
    none = post_process(sol, np.zeros(op.grid.n_cells, bool))
    assert np.array_equal(none.u, sol.u)
    half = post_process(sol, lambda pts: pts[:, 0] < 0.5)
    assert half.cells.sum() == 32
    # unprocessed cells are untouched
    pts = np.array([[0.8, 0.3], [0.9, 0.9]])
    assert np.allclose(half.evaluate(pts), sol.evaluate(pts))
    assert not np.allclose(full.evaluate(pts), sol.evaluate(pts))
    # idempotent: applying the projection to an already processed field is a no-op
    from ultraweak.solver import projection_matrix

    P = projection_matrix(op.spaces)
    v = P @ np.random.default_rng(0).standard_normal(op.n_x)
    assert np.allclose(P @ v, v)
    with pytest.raises(OrderTooLow):
        post_process(solve_full(*discretize(catalog("2d-g3"), 4, 1)))


def test_post_process_leaves_reaction_term():
    prob = TransportProblem("react", 1, ConstantAdvection([1.0]), reaction=3.0, inflow=1.0,
                            exact=lambda p: np.exp(-3 * np.atleast_2d(p)[:, 0]))
    op, rhs = discretize(prob, 4, 2)
    sol = solve_full(op, rhs)
    pp = post_process(sol)
    D = op.derivative_maps[0]
    from ultraweak.solver import projection_matrix

    expected = -(projection_matrix(op.spaces) @ (D @ sol.w)) + 3.0 * (op.value_map @ sol.w)
    assert np.allclose(pp.u, expected)


def test_estimator_api():
    est = TransportSolver("2d-g3", n_cells=4, order=2)
    params = est.get_params()
    assert params["order"] == 2 and params["postprocess"] is False
    twin = clone(est).set_params(postprocess=True).fit()
    assert twin.predict(np.array([[0.5, 0.5]])).shape == (1,)
    with pytest.raises(ConfigError):
        twin.predict(np.ones((2, 3)))
    with pytest.raises(ConfigError):
        TransportSolver("1d-decay", order=0).fit()


def test_parametric_problem_in_estimator():
    est = TransportSolver("tc2", n_cells=4, mu=[0.5]).fit()
    assert est.problem_.advection.vector[0] == pytest.approx(np.cos(0.5))
