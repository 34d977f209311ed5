"""Normal-equation solve, reconstruction ``u = B* w``, evaluation, post-processing."""

from dataclasses import dataclass, field

import numpy as np
import scipy.sparse as sp
import scipy.sparse.linalg as spla
from sklearn.base import BaseEstimator
from sklearn.utils.validation import check_is_fitted

from .assembly import (
    DiscreteOperator,
    assemble,
    assemble_rhs,
    build_spaces,
    kron_all,
    _broken_cell_values,
)
from .exceptions import ConfigError, NoConvergence, NotSPD, OrderTooLow
from .fe1d import lagrange_values, reference_projection
from .grid import classify_faces, extend_grid
from .problem import TransportProblem, load_problem, validate
from ._validation import check_points, check_positive_int

DIRECT_MAX_UNKNOWNS = 2_000_000
CG_RTOL = 1e-12


# ---------------------------------------------------------------------------
# linear algebra


def factorize(gram):
    """Sparse LU with a symmetric fill-reducing ordering and no pivoting.

    With diagonal pivots only the factorization is the LDL^T of an SPD matrix
    up to scaling, so non-positive pivots reveal a matrix that is not SPD.
    """
    try:
        lu = spla.splu(
            sp.csc_matrix(gram),
            permc_spec="MMD_AT_PLUS_A",
            diag_pivot_thresh=0.0,
            options={"SymmetricMode": True},
        )
    except RuntimeError as exc:
        raise NotSPD(f"factorization failed: {exc}") from exc
    pivots = lu.U.diagonal()
    if pivots.size and not np.all(pivots > 0):
        raise NotSPD(f"non-positive pivot {pivots.min():.3g}; Gram matrix is not SPD")
    return lu


def solve_spd(gram, rhs, method="auto", maxiter=None):
    """Solve ``gram @ w = rhs``. Returns ``(w, info)``."""
    n = gram.shape[0]
    if method == "auto":
        method = "direct" if n <= DIRECT_MAX_UNKNOWNS else "cg"
    if n == 0:
        return np.zeros(0), {"method": method}
    if method == "direct":
        lu = factorize(gram)
        w = lu.solve(rhs)
        info = {"method": "direct", "fill_nnz": int(lu.L.nnz + lu.U.nnz)}
    elif method == "cg":
        diag = gram.diagonal()
        if np.any(diag <= 0):
            raise NotSPD("non-positive diagonal entry in Gram matrix")
        precond = sp.diags(1.0 / diag)
        count = [0]

        def tick(_):
            count[0] += 1

        maxiter = maxiter or 20 * n
        w, flag = spla.cg(gram, rhs, rtol=CG_RTOL, atol=0.0, maxiter=maxiter, M=precond, callback=tick)
        if flag != 0:
            raise NoConvergence(f"CG did not reach rtol {CG_RTOL} in {maxiter} iterations")
        info = {"method": "cg", "iterations": count[0]}
    else:
        raise ConfigError(f"unknown solver {method!r}; use auto, direct or cg")
    scale = np.linalg.norm(rhs)
    res = np.linalg.norm(gram @ w - rhs)
    info["relative_residual"] = float(res / scale) if scale > 0 else float(res)
    return w, info


# ---------------------------------------------------------------------------
# broken-field evaluation


def eval_broken_nd(spaces, coeffs, points):
    """Evaluate a tensor broken polynomial (dimension 0 slowest) at points."""
    points = np.atleast_2d(np.asarray(points, dtype=float))
    coeffs = np.asarray(coeffs, dtype=float)
    idx = np.zeros((points.shape[0], 1), dtype=np.int64)
    wts = np.ones((points.shape[0], 1))
    for d, s in enumerate(spaces):
        cell, xi = s.locate(points[:, d])
        loc = cell[:, None] * (s.p + 1) + np.arange(s.p + 1)[None, :]
        vals = lagrange_values(s.p, xi)
        idx = (idx[:, :, None] * s.n_broken + loc[:, None, :]).reshape(points.shape[0], -1)
        wts = (wts[:, :, None] * vals[:, None, :]).reshape(points.shape[0], -1)
    return np.sum(wts * coeffs[idx], axis=1)


@dataclass(frozen=True)
class Solution:
    """Test coefficients ``w`` and the reconstruction ``u = B* w``.

    ``u`` holds broken coefficients in constant / pw-constant mode. In general
    mode ``u`` is ``None`` and the reconstruction is evaluated from the broken
    coefficients of ``w`` (``values``) and its partial derivatives
    (``derivatives``) together with the problem data.
    """

    w: np.ndarray
    operator: DiscreteOperator
    u: np.ndarray = None
    values: np.ndarray = None
    derivatives: tuple = ()
    diagnostics: dict = field(default_factory=dict)

    @property
    def mode(self):
        return self.operator.mode

    @property
    def spaces(self):
        return self.operator.spaces

    @property
    def grid(self):
        return self.operator.grid

    def evaluate(self, points):
        return evaluate(self, points)


def reconstruct(op: DiscreteOperator, w, diagnostics=None):
    w = np.asarray(w, dtype=float)
    if op.mode == "general":
        return Solution(
            w=w,
            operator=op,
            values=op.value_map @ w,
            derivatives=tuple(D @ w for D in op.derivative_maps),
            diagnostics=diagnostics or {},
        )
    return Solution(w=w, operator=op, u=op.bstar @ w, diagnostics=diagnostics or {})


def solve_full(op: DiscreteOperator, rhs, method="auto") -> Solution:
    """Solve the normal equations ``Y w = f`` and reconstruct ``u = B* w``."""
    rhs = np.asarray(rhs, dtype=float)
    if rhs.shape != (op.n_y,):
        raise ConfigError(f"rhs has shape {rhs.shape}, expected ({op.n_y},)")
    w, info = solve_spd(op.gram, rhs, method)
    return reconstruct(op, w, info)


def evaluate(sol: Solution, points):
    """Pointwise values of the reconstruction (left-closed cells)."""
    points = np.atleast_2d(np.asarray(points, dtype=float))
    spaces = sol.spaces
    if sol.u is not None:
        return eval_broken_nd(spaces, sol.u, points)
    prob = sol.operator.problem
    b = prob.advection(points)
    react = prob.reaction_fn(points) - prob.advection.divergence(points)
    out = react * eval_broken_nd(spaces, sol.values, points)
    for d, dw in enumerate(sol.derivatives):
        out -= b[:, d] * eval_broken_nd(spaces, dw, points)
    return out


# ---------------------------------------------------------------------------
# post-processing


@dataclass(frozen=True)
class PostProcessedSolution:
    """Limited reconstruction; ``cells`` marks the processed cells (grid shape)."""

    u: np.ndarray
    cells: np.ndarray
    source: Solution

    @property
    def spaces(self):
        return self.source.spaces

    @property
    def grid(self):
        return self.source.grid

    @property
    def mode(self):
        return self.source.mode

    def evaluate(self, points):
        return eval_broken_nd(self.spaces, self.u, points)


def projection_matrix(spaces):
    """Cellwise L2 projection of the broken space onto degree p-1 per variable."""
    return kron_all(
        [sp.block_diag([reference_projection(s.p)] * s.n_h, format="csr") for s in spaces]
    )


def post_process(sol: Solution, cells=None) -> PostProcessedSolution:
    """Project each derivative term to one degree lower on the selected cells.

    ``cells`` is ``None`` (all cells), a boolean array of grid shape, or a
    predicate on cell-midpoint coordinates ``(k, dim) -> (k,) bool``. The
    reaction term is left untouched.
    """
    op = sol.operator
    if op.order < 2:
        raise OrderTooLow(f"post-processing needs p >= 2, got p = {op.order}")
    if sol.u is None:
        raise ConfigError("post-processing supports constant and pw-constant modes only")
    grid = op.grid
    if cells is None:
        mask = np.ones(grid.n_cells, dtype=bool)
    elif callable(cells):
        mids = np.meshgrid(*[grid.cell_midpoints(d) for d in range(grid.dim)], indexing="ij")
        pts = np.stack([m.ravel() for m in mids], axis=1)
        mask = np.asarray(cells(pts), dtype=bool).reshape(grid.n_cells)
    else:
        mask = np.asarray(cells, dtype=bool).reshape(grid.n_cells)
    proj = projection_matrix(op.spaces)
    dof_mask = _broken_cell_values(grid, op.spaces, mask) > 0.5
    u = sol.u.copy()
    for d, D in enumerate(op.derivative_maps):
        dw = D @ sol.w
        # u contains -b_d * dw; swap in -b_d * P(dw)
        delta = op.info["advection_dofs"][d] * (dw - proj @ dw)
        u[dof_mask] += delta[dof_mask]
    return PostProcessedSolution(u=u, cells=mask, source=sol)


# ---------------------------------------------------------------------------
# estimator front end


def resolve_mode(problem: TransportProblem, mode: str):
    if mode == "auto":
        return "constant" if problem.is_constant else "general"
    if mode in ("pwconstant", "pw-constant"):
        return "pw-constant"
    if mode in ("constant", "general"):
        return mode
    raise ConfigError(f"unknown mode {mode!r}; use auto, constant, pwconstant or general")


def discretize(problem: TransportProblem, n_cells, order=1, extend=0, mode="auto", quad_points=None, check=True):
    """Grid, faces, spaces and assembled operator for ``problem``.

    Returns ``(operator, rhs)``.
    """
    grid = problem.grid(n_cells)
    faces = classify_faces(grid, problem.advection)
    grid = extend_grid(grid, extend, faces)
    if check:
        validate(problem, grid)
    if extend:
        faces = classify_faces(grid, problem.advection)
    spaces = build_spaces(grid, faces, order)
    mode = resolve_mode(problem, mode)
    op = assemble(problem, grid, spaces, faces, mode, quad_points)
    rhs = assemble_rhs(problem, grid, spaces, faces, quad_points)
    return op, rhs


class TransportSolver(BaseEstimator):
    """Optimal-trial-space solver for a single transport problem.

    Parameters
    ----------
    problem : str or TransportProblem
        Catalog name, JSON path or problem instance.
    n_cells : int or tuple of int
        Cells per dimension of the unextended grid.
    order : int
        Polynomial order of the test space.
    extend : int
        Cell layers added beyond every outflow side.
    mode : {"auto", "constant", "pwconstant", "general"}
        Assembly path; ``auto`` uses Kronecker products for constant data.
    quad_points : int, optional
        Gauss points per cell and dimension, default ``order + 2``.
    solver : {"auto", "direct", "cg"}
    postprocess : bool
        Apply the derivative limiter on all cells after solving.
    mu : array-like, optional
        Parameter value for parametric problems (default: box midpoint).

    Examples
    --------
    >>> est = TransportSolver("1d-decay", n_cells=8).fit()
    >>> round(est.l2_error(), 5)
    0.01664
    """

    def __init__(
        self,
        problem="1d-decay",
        n_cells=8,
        order=1,
        extend=0,
        mode="auto",
        quad_points=None,
        solver="auto",
        postprocess=False,
        mu=None,
    ):
        self.problem = problem
        self.n_cells = n_cells
        self.order = order
        self.extend = extend
        self.mode = mode
        self.quad_points = quad_points
        self.solver = solver
        self.postprocess = postprocess
        self.mu = mu

    def _problem(self):
        prob = load_problem(self.problem) if isinstance(self.problem, str) else self.problem
        if not isinstance(prob, TransportProblem):
            raise ConfigError("problem must be a catalog name, JSON path or TransportProblem")
        if prob.is_parametric:
            mu = prob.affine.midpoint() if self.mu is None else self.mu
            prob = prob.at(mu)
        return prob

    def fit(self, X=None, y=None):
        """Assemble and solve. ``X`` and ``y`` are ignored."""
        check_positive_int(self.order, "order")
        prob = self._problem()
        op, rhs = discretize(prob, self.n_cells, self.order, int(self.extend), self.mode, self.quad_points)
        sol = solve_full(op, rhs, self.solver)
        self.problem_ = prob
        self.operator_ = op
        self.rhs_ = rhs
        self.grid_ = op.grid
        self.faces_ = op.faces
        self.solution_ = sol
        self.result_ = post_process(sol) if self.postprocess else sol
        self.n_features_in_ = prob.dim
        return self

    def predict(self, X):
        """Evaluate the (post-processed) reconstruction at the rows of ``X``."""
        check_is_fitted(self, "result_")
        X = check_points(X, self.n_features_in_)
        return self.result_.evaluate(X)

    def l2_error(self, exact=None, subdivisions=1, q=None):
        """L2 error on the unextended box against ``exact`` (default: problem's)."""
        from .analysis import l2_error

        check_is_fitted(self, "result_")
        exact = exact or self.problem_.exact
        if exact is None:
            raise ConfigError(f"problem {self.problem_.name!r} has no exact solution")
        return l2_error(self.result_, exact, subdivisions, q)
