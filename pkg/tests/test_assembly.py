import math

import numpy as np
import pytest
import scipy.sparse as sp

from ultraweak.assembly import (
    assemble_adjoint,
    assemble_adjoint_general,
    assemble_affine,
    assemble_rhs,
    build_spaces,
    tensor_apply,
    kron_all,
)
from ultraweak.exceptions import InconsistentSpaces, QuadratureOrderTooLow
from ultraweak.fe1d import Fe1D, composite_gauss, eval_basis, eval_broken
from ultraweak.grid import TensorGrid, classify_faces
from ultraweak.problem import ConstantAdvection, TransportProblem, catalog
from ultraweak.solver import eval_broken_nd


def setup(problem, n, p):
    grid = problem.grid(n)
    faces = classify_faces(grid, problem.advection)
    return grid, build_spaces(grid, faces, p), faces


def simple(b, c=0.0, f=0.0, g=0.0):
    return TransportProblem("t", len(b), ConstantAdvection(b), reaction=c, source=f, inflow=g)


def test_single_cell_adjoint():
    prob = simple([1.0])
    op = assemble_adjoint(prob, *setup(prob, 1, 1))
    assert np.allclose(op.bstar.toarray(), [[1.0], [1.0]])


def test_two_cells_by_hand():
    prob = simple([1.0], c=2.0)
    op = assemble_adjoint(prob, *setup(prob, 2, 1))
    h = 0.5
    # hats at x=0 and x=1/2 written on the broken nodal basis
    I = np.array([[1, 0], [0, 1], [0, 1], [0, 0]], float)
    dphi = np.array([[-1, 1], [-1, 1], [0, -1], [0, -1]], float) / h
    assert np.allclose(op.bstar.toarray(), -dphi + 2 * I)


def test_2d_kronecker_formula():
    b1, b2, c = 0.3, 0.8, 0.5
    prob = simple([b1, b2], c=c)
    grid, spaces, faces = setup(prob, (3, 4), 1)
    op = assemble_adjoint(prob, grid, spaces, faces)
    from ultraweak.fe1d import build_1d_matrices

    m0, m1 = (build_1d_matrices(s) for s in spaces)
    ref = -b1 * sp.kron(m0.A, m1.I) - b2 * sp.kron(m0.I, m1.A) + c * sp.kron(m0.I, m1.I)
    assert abs(op.bstar - ref).max() < 1e-14


def test_gram_identity_and_symmetry():
    prob = catalog("2d-g3")
    op = assemble_adjoint(prob, *setup(prob, 6, 2))
    Y = op.gram
    ref = (op.bstar.T @ op.mass @ op.bstar).tocsr()
    assert abs(Y - ref).max() <= 1e-12 * abs(Y).max()
    assert abs(Y - Y.T).max() <= 1e-12 * abs(Y).max()
    rng = np.random.default_rng(0)
    for _ in range(100):
        v = rng.standard_normal(op.n_y)
        assert v @ Y @ v > 0


def test_kronecker_pointwise_identity():
    prob = simple([0.6, -0.4], c=0.7)
    grid, spaces, faces = setup(prob, (3, 5), 2)
    op = assemble_adjoint(prob, grid, spaces, faces)
    rng = np.random.default_rng(1)
    v = rng.standard_normal(op.n_y)
    pts = rng.random((50, 2))
    V = v.reshape(spaces[0].n_y, spaces[1].n_y)

    def field(dx, dy):
        a = eval_basis(spaces[0], np.eye(spaces[0].n_y), pts[:, 0], derivative=dx)
        b = eval_basis(spaces[1], np.eye(spaces[1].n_y), pts[:, 1], derivative=dy)
        return np.einsum("ki,ij,kj->k", a, V, b)

    direct = -0.6 * field(True, False) + 0.4 * field(False, True) + 0.7 * field(False, False)
    assert np.allclose(eval_broken_nd(spaces, op.bstar @ v, pts), direct, atol=1e-12)


def test_general_matches_constant_mode():
    prob = catalog("2d-g1")
    grid, spaces, faces = setup(prob, 5, 2)
    a = assemble_adjoint(prob, grid, spaces, faces).gram
    b = assemble_adjoint_general(prob, grid, spaces, faces).gram
    assert abs(a - b).max() <= 1e-12 * abs(a).max()


def test_general_circle_spd():
    prob = catalog("2d-circle")
    op = assemble_adjoint_general(prob, *setup(prob, 4, 2))
    from ultraweak.solver import factorize

    factorize(op.gram)
    with pytest.raises(QuadratureOrderTooLow):
        assemble_adjoint_general(prob, *setup(prob, 4, 2), q=2)


def test_inconsistent_spaces():
    prob = simple([1.0, 1.0])
    grid, _, faces = setup(prob, 2, 1)
    bad = (Fe1D(2, 1, constrained_end="left"), Fe1D(2, 1))
    with pytest.raises(InconsistentSpaces):
        assemble_adjoint(prob, grid, bad, faces)


def test_rhs_point_inflow():
    prob = simple([1.0], g=1.0)
    grid, spaces, faces = setup(prob, 4, 1)
    assert np.allclose(assemble_rhs(prob, grid, spaces, faces), [1, 0, 0, 0])


def test_rhs_bottom_edge_weight():
    b = [math.cos(math.radians(30)), math.sin(math.radians(30))]
    g = lambda p: np.where(np.atleast_2d(p)[:, 1] <= 1e-12, 1.0, 0.0)
    prob = simple(b, g=g)
    grid, spaces, faces = setup(prob, 4, 1)
    rhs = assemble_rhs(prob, grid, spaces, faces).reshape(4, 4)
    # only test functions with phi(y=0) != 0 (first y index) see the bottom edge
    edge_mass = np.array([1 / 8, 1 / 4, 1 / 4, 1 / 4])
    assert np.allclose(rhs[:, 0], 0.5 * edge_mass)
    assert np.allclose(rhs[:, 1:], 0)


def test_rhs_matches_midpoint_oracle():
    prob = catalog("2d-g3")
    grid, spaces, faces = setup(prob, 8, 1)
    rhs = assemble_rhs(prob, grid, spaces, faces)
    b = prob.advection.vector
    s = (np.arange(1000) + 0.5) / 1000
    ref = np.zeros((8, 8))
    phi = [eval_basis(sp_, np.eye(sp_.n_y), s) for sp_ in spaces]
    left = prob.inflow(np.stack([np.zeros_like(s), s], axis=1)) * b[0] / 1000
    bottom = prob.inflow(np.stack([s, np.zeros_like(s)], axis=1)) * b[1] / 1000
    e0 = [eval_basis(sp_, np.eye(sp_.n_y), [0.0])[0] for sp_ in spaces]
    ref += np.outer(e0[0], phi[1].T @ left)
    ref += np.outer(phi[0].T @ bottom, e0[1])
    assert np.allclose(rhs, ref.ravel(), atol=1e-10)


def test_volume_rhs_constant_and_field():
    prob = simple([1.0, 1.0], f=2.0)
    grid, spaces, faces = setup(prob, 3, 2)
    r1 = assemble_rhs(prob, grid, spaces, faces)
    prob2 = simple([1.0, 1.0], f=lambda p: np.full(len(p), 2.0))
    r2 = assemble_rhs(prob2, grid, spaces, faces)
    assert np.allclose(r1, r2, atol=1e-14)


def test_empty_dimension_products():
    assert kron_all([sp.eye(2), sp.eye(3)]).shape == (6, 6)
    rng = np.random.default_rng(0)
    mats = [sp.random(3, 2, 0.8, random_state=1), sp.random(4, 5, 0.8, random_state=2)]
    v = rng.standard_normal(10)
    assert np.allclose(tensor_apply(mats, v), kron_all(mats) @ v)


def test_affine_components_reproduce_direct_assembly():
    prob = catalog("tc3")
    grid = prob.grid(6)
    faces = classify_faces(grid, prob.at([0.7]).advection)
    spaces = build_spaces(grid, faces, 1)
    aff = assemble_affine(prob, grid, spaces, faces)
    for mu in (0.2, 0.9, math.pi / 2 - 0.2):
        fixed = prob.at([mu])
        th = prob.affine.thetas([mu])
        direct = assemble_adjoint(fixed, grid, spaces, faces)
        assert abs(aff.bstar(th) - direct.bstar).max() < 1e-13
        assert np.allclose(aff.rhs(th), assemble_rhs(fixed, grid, spaces, faces), atol=1e-13)
