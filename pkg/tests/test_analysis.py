import numpy as np
import pytest

from ultraweak.analysis import (
    ErrorReport,
    best_approximation,
    check_optimality,
    convergence_study,
    dual_residual_norm,
    expand_levels,
    l2_error,
    linf_error,
    rates,
    trial_norm,
)
from ultraweak.assembly import assemble_adjoint_general, build_spaces
from ultraweak.exceptions import ConfigError
from ultraweak.grid import classify_faces
from ultraweak.problem import catalog
from ultraweak.solver import discretize, solve_full


def solved(name, n, p, **kw):
    op, rhs = discretize(catalog(name), n, p, **kw)
    return op, rhs, solve_full(op, rhs)


def test_self_error_is_zero():
    _, _, sol = solved("2d-g2", 4, 2)
    assert l2_error(sol, sol.evaluate) == pytest.approx(0.0, abs=1e-14)


def test_reproduced_exact_solution():
    # u = x is -w' for w = (1 - x^2)/2, a member of the quadratic test space
    _, _, sol = solved("1d-linear", 3, 2)
    ex = catalog("1d-linear").exact
    assert linf_error(sol, ex) < 1e-12
    assert l2_error(sol, ex) < 1e-12


def test_known_values():
    _, _, sol = solved("1d-decay", 16, 2)
    assert l2_error(sol, catalog("1d-decay").exact) == pytest.approx(0.00016, rel=0.05)
    _, _, sol = solved("2d-g3", 32, 2)
    assert l2_error(sol, catalog("2d-g3").exact, 4, 4) == pytest.approx(0.08484, rel=0.02)


def test_quadrature_convergence_g3():
    _, _, sol = solved("2d-g3", 32, 2)
    ex = catalog("2d-g3").exact
    a, b = l2_error(sol, ex, 4, 4), l2_error(sol, ex, 8, 4)
    assert abs(a - b) / b < 0.005


def test_linf_standard_vs_extended():
    _, _, std = solved("2d-const", 16, 2)
    _, _, ext = solved("2d-const", 16, 2, extend=1)
    ex = catalog("2d-const").exact
    assert linf_error(std, ex) == pytest.approx(1.0, abs=1e-10)
    assert linf_error(ext, ex) < 0.2


def test_rates_and_csv():
    r = rates([1.0, 0.5, 0.25])
    assert np.isnan(r[0]) and np.allclose(r[1:], 1.0)
    rep = ErrorReport([4], [0.0331046])
    assert rep.to_csv() == "inv_h,l2_error,rate\n4,0.0331046,\n"
    assert expand_levels("16:128") == [16, 32, 64, 128]
    assert expand_levels("4,8") == [4, 8]
    with pytest.raises(ConfigError):
        expand_levels("8:4")
    with pytest.raises(ConfigError):
        convergence_study(catalog("1d-decay"), [8, 4])


def test_convergence_study_1d():
    rep = convergence_study(catalog("1d-decay"), "4:32", order=1)
    assert rep.inv_h == [4, 8, 16, 32]
    assert rep.rate[-1] == pytest.approx(1.0, abs=0.01)


def test_optimality_constant_and_general():
    op, _, _ = solved("2d-g1", 6, 2)
    assert check_optimality(op, 100).max_deviation < 1e-10
    prob = catalog("2d-circle")
    grid = prob.grid(4)
    faces = classify_faces(grid, prob.advection)
    gop = assemble_adjoint_general(prob, grid, build_spaces(grid, faces, 2), faces)
    rep = check_optimality(gop, 20)
    assert rep.max_deviation < 1e-10
    one, _, _ = solved("1d-decay", 1, 1)
    assert check_optimality(one, 5).max_deviation < 1e-14


def test_error_residual_identity():
    op, rhs, sol = solved("2d-g2", 6, 2)
    rng = np.random.default_rng(4)
    for _ in range(5):
        dw = rng.standard_normal(op.n_y) * 1e-2
        assert dual_residual_norm(op, rhs, sol.w + dw) == pytest.approx(trial_norm(op, dw), rel=1e-10)


@pytest.mark.parametrize("name,n,p", [("1d-decay", 8, 1), ("1d-decay", 6, 3), ("2d-g1", 7, 2)])
def test_best_approximation_oracle(name, n, p):
    op, rhs, sol = solved(name, n, p)
    assert op.n_y <= 200
    best, coef = best_approximation(catalog(name), op.grid, op.spaces, q=p + 6)
    err = l2_error(sol, catalog(name).exact, 1, p + 6)
    assert err == pytest.approx(best, rel=1e-8)
    # coefficients are only as accurate as the Gram conditioning allows
    assert np.max(np.abs(coef - sol.w)) <= 1e-4 * np.max(np.abs(sol.w))
