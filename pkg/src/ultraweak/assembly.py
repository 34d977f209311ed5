"""Discrete adjoint, broken mass, Gram matrix and right-hand side.

Tensor index convention: dimension 0 varies slowest, so a vector on a
``(n_0, n_1, ...)`` tensor space is ``coeffs.reshape(n_0, n_1, ...)``.
"""

from dataclasses import dataclass, field
from functools import reduce

import numpy as np
import scipy.sparse as sp

from .exceptions import ConfigError, InconsistentSpaces, QuadratureOrderTooLow
from .fe1d import Fe1D, basis_eval_matrix, build_1d_matrices, composite_gauss
from .grid import LOWER, TensorGrid, classify_faces
from .problem import TransportProblem, constant_value

MODES = ("constant", "pw-constant", "general")


def kron_all(mats):
    """Kronecker product of a list of sparse matrices, CSR, dimension 0 slowest."""
    return reduce(lambda a, b: sp.kron(a, b, format="csr"), mats).tocsr()


def tensor_points(axes):
    """Tensor lattice of per-dimension coordinates, shape ``(prod, dim)``."""
    mesh = np.meshgrid(*axes, indexing="ij")
    return np.stack([m.ravel() for m in mesh], axis=1)


def tensor_apply(mats, vec):
    """``kron(mats) @ vec`` without forming the Kronecker product."""
    shape = tuple(m.shape[1] for m in mats)
    out = np.asarray(vec, dtype=float).reshape(shape)
    for d, m in enumerate(mats):
        out = np.moveaxis(out, d, 0)
        rest = out.shape[1:]
        out = (m @ out.reshape(out.shape[0], -1)).reshape((m.shape[0],) + rest)
        out = np.moveaxis(out, 0, d)
    return out.ravel()


def build_spaces(grid: TensorGrid, faces, p: int):
    """One constrained 1D space per dimension, zero at that dimension's outflow end."""
    spaces = []
    for d in range(grid.dim):
        end = faces.constrained_end(d)
        if end == "both":
            raise InconsistentSpaces(
                f"both sides of dimension {d} are outflow; no tensor test space vanishes there"
            )
        a, b = grid.bounds[d]
        spaces.append(Fe1D(grid.n_cells[d], p, a, b, end))
    return tuple(spaces)


def check_spaces(grid, faces, spaces):
    if len(spaces) != grid.dim:
        raise InconsistentSpaces("need one 1D space per grid dimension")
    for d, s in enumerate(spaces):
        if faces.constrained_end(d) != s.constrained_end:
            raise InconsistentSpaces(
                f"dimension {d}: space constrained at {s.constrained_end!r}, "
                f"faces require {faces.constrained_end(d)!r}"
            )
        if s.n_h != grid.n_cells[d] or not np.isclose(s.a, grid.bounds[d][0]) or not np.isclose(s.b, grid.bounds[d][1]):
            raise InconsistentSpaces(f"dimension {d}: space does not match the grid")
    if len({s.p for s in spaces}) != 1:
        raise InconsistentSpaces("all 1D spaces must share the polynomial order")


@dataclass(frozen=True)
class QuadratureData:
    """Tensor Gauss rule and the adjoint sampled at its points (general mode)."""

    axes: tuple          # per-dim (points, weights, cells)
    points: np.ndarray   # (n_q, dim)
    weights: np.ndarray  # (n_q,)
    bstar: sp.csr_matrix  # (n_q, n_y): values of B* phi_j at the points


@dataclass(frozen=True)
class DiscreteOperator:
    """Assembled discrete operator.

    Constant and pw-constant modes carry ``bstar`` (broken coefficients of
    ``B* phi_j`` in its columns) and the broken ``mass``. General mode carries
    ``quadrature`` instead, plus the derivative maps needed to evaluate the
    reconstruction pointwise.
    """

    gram: sp.csr_matrix
    mode: str
    grid: TensorGrid
    spaces: tuple
    problem: TransportProblem
    bstar: sp.csr_matrix = None
    mass: sp.csr_matrix = None
    value_map: sp.csr_matrix = None
    derivative_maps: tuple = ()
    quadrature: QuadratureData = None
    faces: object = None
    info: dict = field(default_factory=dict)

    @property
    def n_y(self):
        return self.gram.shape[0]

    @property
    def n_x(self):
        return int(np.prod([s.n_broken for s in self.spaces]))

    @property
    def order(self):
        return self.spaces[0].p

    def norm_matrices(self):
        """``(B, W)`` with ``Y = B^T W B``; W diagonal quadrature weights or mass."""
        if self.quadrature is not None:
            return self.quadrature.bstar, sp.diags(self.quadrature.weights).tocsr()
        return self.bstar, self.mass


def _one_d(spaces):
    return [build_1d_matrices(s) for s in spaces]


def _kron_maps(mats):
    dim = len(mats)
    ident = kron_all([m.I for m in mats])
    derivs = tuple(
        kron_all([mats[k].A if k == d else mats[k].I for k in range(dim)]) for d in range(dim)
    )
    return ident, derivs


def _broken_cell_values(grid, spaces, values):
    """Expand per-cell values (grid shape) to a per-broken-DOF vector."""
    out = np.asarray(values, dtype=float).reshape(grid.n_cells)
    for d, s in enumerate(spaces):
        out = np.repeat(out, s.p + 1, axis=d)
    return out.ravel()


def _resolve_faces(problem, grid, faces):
    if faces is None:
        faces = classify_faces(grid, problem.advection)
    return faces


def assemble_adjoint(problem: TransportProblem, grid: TensorGrid, spaces, faces=None, mode="constant"):
    """Kronecker assembly for constant or piecewise-constant data.

    In ``pw-constant`` mode b and ``c - div b`` are frozen at cell midpoints.
    """
    if mode not in ("constant", "pw-constant"):
        raise ConfigError(f"Kronecker assembly supports constant/pw-constant, got {mode!r}")
    faces = _resolve_faces(problem, grid, faces)
    check_spaces(grid, faces, spaces)
    mats = _one_d(spaces)
    ident, derivs = _kron_maps(mats)
    mass = kron_all([m.M for m in mats])
    if mode == "constant":
        if not problem.is_constant:
            raise ConfigError(f"problem {problem.name!r} has non-constant data; use pw-constant or general mode")
        b = problem.advection.vector
        c = constant_value(problem.reaction)
        bstar = c * ident
        for d in range(grid.dim):
            if b[d] != 0.0:
                bstar = bstar - b[d] * derivs[d]
        n_x = ident.shape[0]
        adv_dofs = tuple(np.full(n_x, b[d]) for d in range(grid.dim))
    else:
        mid = tensor_points([grid.cell_midpoints(d) for d in range(grid.dim)])
        bvals = problem.advection(mid)
        react = problem.reaction_fn(mid) - problem.advection.divergence(mid)
        bstar = sp.diags(_broken_cell_values(grid, spaces, react)) @ ident
        adv_dofs = tuple(_broken_cell_values(grid, spaces, bvals[:, d]) for d in range(grid.dim))
        for d in range(grid.dim):
            bstar = bstar - sp.diags(adv_dofs[d]) @ derivs[d]
    bstar = sp.csr_matrix(bstar)
    bstar.eliminate_zeros()
    gram = (bstar.T @ mass @ bstar).tocsr()
    gram = (0.5 * (gram + gram.T)).tocsr()
    return DiscreteOperator(
        gram=gram,
        mode=mode,
        grid=grid,
        spaces=tuple(spaces),
        problem=problem,
        bstar=bstar,
        mass=mass,
        value_map=ident,
        derivative_maps=derivs,
        faces=faces,
        info={"advection_dofs": adv_dofs},
    )


def volume_rule(grid, spaces, q, breaks=None, subdivisions=1):
    """Per-dimension composite Gauss rules aligned with cells and data breaks."""
    breaks = breaks or {}
    return tuple(
        composite_gauss(s, q, subdivisions, breaks.get(d, ())) for d, s in enumerate(spaces)
    )


def assemble_adjoint_general(problem: TransportProblem, grid: TensorGrid, spaces, faces=None, q=None):
    """Gram matrix by tensor Gauss quadrature of ``(B* phi_i)(B* phi_j)``."""
    faces = _resolve_faces(problem, grid, faces)
    check_spaces(grid, faces, spaces)
    p = spaces[0].p
    q = p + 2 if q is None else int(q)
    if q < p + 1:
        raise QuadratureOrderTooLow(f"need at least p+1 = {p + 1} Gauss points, got {q}")
    axes = volume_rule(grid, spaces, q)
    vals = [basis_eval_matrix(s, x, c) for s, (x, _, c) in zip(spaces, axes)]
    ders = [basis_eval_matrix(s, x, c, derivative=True) for s, (x, _, c) in zip(spaces, axes)]
    pts = tensor_points([x for x, _, _ in axes])
    wts = reduce(np.multiply.outer, [w for _, w, _ in axes]).ravel()
    bvals = problem.advection(pts)
    react = problem.reaction_fn(pts) - problem.advection.divergence(pts)
    dim = grid.dim
    bq = sp.diags(react) @ kron_all(vals)
    for d in range(dim):
        grad_d = kron_all([ders[k] if k == d else vals[k] for k in range(dim)])
        bq = bq - sp.diags(bvals[:, d]) @ grad_d
    bq = sp.csr_matrix(bq)
    bq.eliminate_zeros()
    gram = (bq.T @ sp.diags(wts) @ bq).tocsr()
    gram = (0.5 * (gram + gram.T)).tocsr()
    mats = _one_d(spaces)
    ident, derivs = _kron_maps(mats)
    return DiscreteOperator(
        gram=gram,
        mode="general",
        grid=grid,
        spaces=tuple(spaces),
        problem=problem,
        value_map=ident,
        derivative_maps=derivs,
        quadrature=QuadratureData(axes, pts, wts, bq),
        faces=faces,
        info={"q": q},
    )


def _face_rule(grid, spaces, d, side, q, breaks):
    """Tensor rule on one box side: per-dim factors, coordinate d fixed."""
    coord = grid.bounds[d][side]
    factors, axes = [], []
    for k, s in enumerate(spaces):
        if k == d:
            factors.append(basis_eval_matrix(s, np.array([coord])))
            axes.append((np.array([coord]), np.ones(1)))
        else:
            x, w, c = composite_gauss(s, q, 1, breaks.get(k, ()))
            factors.append(basis_eval_matrix(s, x, c))
            axes.append((x, w))
    pts = tensor_points([x for x, _ in axes])
    wts = reduce(np.multiply.outer, [w for _, w in axes]).ravel()
    return factors, pts, wts


def _volume_rhs(problem, grid, spaces, q, subdivisions):
    f0 = constant_value(problem.source)
    if f0 == 0.0:
        return np.zeros(int(np.prod([s.n_y for s in spaces])))
    axes = volume_rule(grid, spaces, q, problem.breaks, subdivisions)
    vals = [basis_eval_matrix(s, x, c) for s, (x, _, c) in zip(spaces, axes)]
    if f0 is not None:
        ones = [v.T @ w for v, (_, w, _) in zip(vals, axes)]
        return f0 * reduce(np.multiply.outer, ones).ravel()
    pts = tensor_points([x for x, _, _ in axes])
    wts = reduce(np.multiply.outer, [w for _, w, _ in axes]).ravel()
    return tensor_apply([v.T.tocsr() for v in vals], wts * problem.source_fn(pts))


def face_flux_rhs(problem, grid, spaces, faces, q, flux):
    """Sum over inflow sides of ``int g phi_i flux ds``.

    ``flux(points, d, side)`` returns the weight at side points; the physical
    right-hand side uses ``|b.n|``.
    """
    n_y = int(np.prod([s.n_y for s in spaces]))
    out = np.zeros(n_y)
    for d, side in faces.inflow:
        factors, pts, wts = _face_rule(grid, spaces, d, side, q, problem.breaks)
        vals = problem.inflow_fn(pts) * flux(pts, d, side) * wts
        if not np.any(vals):
            continue
        out += tensor_apply([f.T.tocsr() for f in factors], vals)
    return out


def _abs_normal_flux(problem):
    def flux(pts, d, side):
        sign = -1.0 if side == LOWER else 1.0
        return np.abs(sign * problem.advection(pts)[:, d])

    return flux


def assemble_rhs(problem: TransportProblem, grid: TensorGrid, spaces, faces=None, q=None, subdivisions=1):
    """Load vector ``(f0, phi_i) + int_{inflow} g phi_i |b.n| ds``."""
    faces = _resolve_faces(problem, grid, faces)
    q = spaces[0].p + 2 if q is None else int(q)
    rhs = _volume_rhs(problem, grid, spaces, q, subdivisions)
    return rhs + face_flux_rhs(problem, grid, spaces, faces, q, _abs_normal_flux(problem))


def assemble(problem, grid, spaces, faces=None, mode="constant", q=None):
    """Operator in the requested mode (``constant``, ``pw-constant``, ``general``)."""
    if mode not in MODES:
        raise ConfigError(f"mode must be one of {MODES}, got {mode!r}")
    if mode == "general":
        return assemble_adjoint_general(problem, grid, spaces, faces, q)
    return assemble_adjoint(problem, grid, spaces, faces, mode)


# ---------------------------------------------------------------------------
# affine components


@dataclass(frozen=True)
class AffineOperator:
    """Parameter-independent operator and load parts.

    ``bstar_parts[q]`` is the broken-coefficient matrix of the q-th operator
    term (without its coefficient function); ``rhs_parts[q]`` the matching
    inflow load (zero for reaction terms); ``rhs_fixed`` the source load.
    """

    bstar_parts: tuple
    rhs_parts: tuple
    rhs_fixed: np.ndarray
    mass: sp.csr_matrix
    grid: TensorGrid
    spaces: tuple
    faces: object

    def bstar(self, thetas):
        return sum(t * b for t, b in zip(thetas, self.bstar_parts)).tocsr()

    def rhs(self, thetas):
        return self.rhs_fixed + sum(t * r for t, r in zip(thetas, self.rhs_parts))


def assemble_affine(problem: TransportProblem, grid: TensorGrid, spaces, faces=None, q=None):
    """Per-term adjoint matrices and loads of an affinely parametrised problem."""
    if problem.affine is None:
        raise ConfigError(f"problem {problem.name!r} has no affine decomposition")
    if faces is None:
        faces = classify_faces(grid, problem.at(problem.affine.midpoint()).advection)
    check_spaces(grid, faces, spaces)
    q = spaces[0].p + 2 if q is None else int(q)
    mats = _one_d(spaces)
    ident, derivs = _kron_maps(mats)
    mass = kron_all([m.M for m in mats])
    parts, loads = [], []
    for term in problem.affine.terms:
        if term.is_reaction:
            parts.append((term.value * ident).tocsr())
            loads.append(np.zeros(ident.shape[1]))
            continue
        v = np.asarray(term.direction, dtype=float)
        mat = sp.csr_matrix(ident.shape)
        for d in range(grid.dim):
            if v[d] != 0.0:
                mat = mat - v[d] * derivs[d]
        parts.append(sp.csr_matrix(mat))

        def flux(pts, d, side, v=v):
            sign = -1.0 if side == LOWER else 1.0
            return np.full(pts.shape[0], -sign * v[d])

        loads.append(face_flux_rhs(problem, grid, spaces, faces, q, flux))
    fixed = _volume_rhs(problem, grid, spaces, q, 1)
    return AffineOperator(tuple(parts), tuple(loads), fixed, mass, grid, tuple(spaces), faces)
