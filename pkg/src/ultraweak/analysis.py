"""Error norms, convergence studies and structural optimality checks."""

import io
import math
from dataclasses import dataclass, field
from functools import reduce

import numpy as np
import scipy.sparse as sp

from .assembly import DiscreteOperator, tensor_apply, tensor_points
from .exceptions import ConfigError
from .fe1d import broken_eval_matrix, composite_gauss, eval_basis
from .problem import TransportProblem
from .solver import discretize, factorize, post_process, solve_full


# ---------------------------------------------------------------------------
# lattice evaluation


def _core_axes(grid, spaces, q, subdivisions):
    """Per-dimension composite Gauss rules restricted to the unextended cells."""
    axes = []
    for d, s in enumerate(spaces):
        x, w, c = composite_gauss(s, q, subdivisions)
        sl = grid.core_cell_slices()[d]
        keep = (c >= sl.start) & (c < sl.stop)
        axes.append((x[keep], w[keep], c[keep]))
    return axes


def field_on_lattice(sol, axes):
    """Reconstruction values on the tensor lattice of ``axes`` = [(x, w, cells)]."""
    spaces = sol.spaces
    evals = [broken_eval_matrix(s, x, c) for s, (x, _, c) in zip(spaces, axes)]
    u = getattr(sol, "u", None)
    if u is not None:
        return tensor_apply(evals, u)
    pts = tensor_points([x for x, _, _ in axes])
    prob = sol.operator.problem
    b = prob.advection(pts)
    react = prob.reaction_fn(pts) - prob.advection.divergence(pts)
    out = react * tensor_apply(evals, sol.values)
    for d, dw in enumerate(sol.derivatives):
        out -= b[:, d] * tensor_apply(evals, dw)
    return out


def l2_norm(sol, subdivisions=1, q=None):
    return l2_error(sol, lambda pts: np.zeros(np.atleast_2d(pts).shape[0]), subdivisions, q)


def l2_error(sol, exact, subdivisions=1, q=None):
    """L2 distance to ``exact`` on the unextended box.

    Each cell is split into ``subdivisions`` parts per dimension with ``q``
    Gauss points per part and dimension (default ``p + 2``).
    """
    if subdivisions < 1:
        raise ConfigError("subdivisions must be >= 1")
    p = sol.spaces[0].p
    q = p + 2 if q is None else int(q)
    if q < 2:
        raise ConfigError("need q >= 2 Gauss points")
    axes = _core_axes(sol.grid, sol.spaces, q, subdivisions)
    vals = field_on_lattice(sol, axes)
    pts = tensor_points([x for x, _, _ in axes])
    wts = reduce(np.multiply.outer, [w for _, w, _ in axes]).ravel()
    diff = vals - exact(pts)
    return float(math.sqrt(max(np.dot(wts, diff * diff), 0.0)))


def linf_error(sol, exact, refine=4):
    """Max deviation on a per-cell lattice of ``refine + 1`` points per dimension.

    The lattice includes cell edges; each cell is sampled with its own
    polynomial, so both one-sided limits at interfaces and the box corners
    are covered.
    """
    grid, spaces = sol.grid, sol.spaces
    axes = []
    xi = np.arange(refine + 1) / refine
    for d, s in enumerate(spaces):
        sl = grid.core_cell_slices()[d]
        cells = np.repeat(np.arange(sl.start, sl.stop), refine + 1)
        x = s.a + (cells + np.tile(xi, sl.stop - sl.start)) * s.h
        axes.append((x, None, cells))
    vals = field_on_lattice(sol, axes)
    pts = tensor_points([x for x, _, _ in axes])
    return float(np.max(np.abs(vals - exact(pts))))


# ---------------------------------------------------------------------------
# convergence studies


def rates(errors):
    """log2 ratios of consecutive errors; first entry is ``nan``."""
    e = np.asarray(errors, dtype=float)
    out = np.full(e.shape, np.nan)
    with np.errstate(divide="ignore", invalid="ignore"):
        out[1:] = np.log2(e[:-1] / e[1:])
    return out


@dataclass
class ErrorReport:
    inv_h: list
    l2_error: list
    linf_error: list = None
    info: dict = field(default_factory=dict)

    @property
    def rate(self):
        return rates(self.l2_error)

    def to_csv(self):
        """CSV text with header ``inv_h,l2_error,rate`` (6 significant digits)."""
        buf = io.StringIO()
        cols = ["inv_h", "l2_error", "rate"]
        if self.linf_error is not None:
            cols.append("linf_error")
        buf.write(",".join(cols) + "\n")
        for k, (n, e, r) in enumerate(zip(self.inv_h, self.l2_error, self.rate)):
            row = [f"{n:.6g}", f"{e:.6g}", "" if np.isnan(r) else f"{r:.6g}"]
            if self.linf_error is not None:
                row.append(f"{self.linf_error[k]:.6g}")
            buf.write(",".join(row) + "\n")
        return buf.getvalue()


def expand_levels(spec):
    """``"a:b"`` doubles from a up to b; a comma list is taken verbatim."""
    if isinstance(spec, str):
        if ":" in spec:
            lo, hi = (int(t) for t in spec.split(":"))
            if lo < 1 or hi < lo:
                raise ConfigError(f"bad level range {spec!r}")
            levels = []
            n = lo
            while n <= hi:
                levels.append(n)
                n *= 2
            return levels
        return [int(t) for t in spec.split(",") if t.strip()]
    return [int(n) for n in spec]


def convergence_study(
    problem: TransportProblem,
    levels,
    order=1,
    extend=0,
    mode="auto",
    postprocess=False,
    subdivisions=1,
    q=None,
    with_linf=False,
    solver="auto",
):
    """Solve on each level and measure the L2 (and optionally L-inf) error."""
    levels = expand_levels(levels)
    if not levels or any(b <= a for a, b in zip(levels, levels[1:])):
        raise ConfigError(f"levels must be strictly increasing, got {levels}")
    if problem.exact is None:
        raise ConfigError(f"problem {problem.name!r} has no exact solution")
    l2, linf = [], []
    for n in levels:
        op, rhs = discretize(problem, n, order, extend, mode)
        sol = solve_full(op, rhs, solver)
        res = post_process(sol) if postprocess else sol
        l2.append(l2_error(res, problem.exact, subdivisions, q))
        if with_linf:
            linf.append(linf_error(res, problem.exact))
    width = problem.bounds[0][1] - problem.bounds[0][0]
    inv_h = [n / width for n in levels]
    return ErrorReport(inv_h, l2, linf if with_linf else None, {"problem": problem.name, "order": order})


# ---------------------------------------------------------------------------
# structural checks


@dataclass
class OptimalityReport:
    trials: int
    max_deviation: float
    max_supremizer_error: float
    ratios: np.ndarray


def supremizer_ratios(gram_solve, B, W, vs):
    """Inf-sup quotients at the supremizers of ``w = B v`` for columns v of ``vs``.

    ``gram_solve`` applies the inverse Gram matrix. Returns the ratios and the
    relative distance of each supremizer to its generating v.
    """
    ratios, errs = [], []
    for v in vs.T:
        w = B @ v
        s = gram_solve(B.T @ (W @ w))
        num = w @ (W @ (B @ s))
        bs = B @ s
        den = math.sqrt(w @ (W @ w)) * math.sqrt(bs @ (W @ bs))
        ratios.append(num / den)
        errs.append(np.linalg.norm(s - v) / np.linalg.norm(v))
    return np.asarray(ratios), np.asarray(errs)


def check_optimality(op: DiscreteOperator, trials=100, seed=0):
    """Supremizer-ratio test for ``trials`` random test-space directions."""
    rng = np.random.default_rng(seed)
    B, W = op.norm_matrices()
    lu = factorize(op.gram)
    vs = rng.standard_normal((op.n_y, trials))
    ratios, errs = supremizer_ratios(lu.solve, B, W, vs)
    dev = float(np.max(np.abs(ratios - 1.0))) if trials else 0.0
    return OptimalityReport(trials, dev, float(errs.max()) if trials else 0.0, ratios)


def dual_residual_norm(op: DiscreteOperator, rhs, w):
    """``sqrt(r^T Y^{-1} r)`` for ``r = rhs - Y w``."""
    r = rhs - op.gram @ w
    return float(math.sqrt(max(r @ factorize(op.gram).solve(r), 0.0)))


def trial_norm(op: DiscreteOperator, v):
    """``||B* v||_{L2}``."""
    B, W = op.norm_matrices()
    bv = B @ v
    return float(math.sqrt(max(bv @ (W @ bv), 0.0)))


def _dense_trial_basis(problem, spaces, pts):
    """Columns ``B* phi_j`` evaluated at ``pts`` by direct basis evaluation."""
    dim = len(spaces)
    vals, ders = [], []
    for d, s in enumerate(spaces):
        eye = np.eye(s.n_y)
        vals.append(eval_basis(s, eye, pts[:, d]))
        ders.append(eval_basis(s, eye, pts[:, d], derivative=True))
    b = problem.advection(pts)
    react = problem.reaction_fn(pts) - problem.advection.divergence(pts)

    def tensor_rows(factors):
        out = factors[0]
        for f in factors[1:]:
            out = (out[:, :, None] * f[:, None, :]).reshape(out.shape[0], -1)
        return out

    psi = react[:, None] * tensor_rows(vals)
    for d in range(dim):
        psi -= b[:, d][:, None] * tensor_rows([ders[k] if k == d else vals[k] for k in range(dim)])
    return psi


def best_approximation(problem: TransportProblem, grid, spaces, q=8, subdivisions=1):
    """Dense L2 best approximation of ``problem.exact`` in ``B*(Y)``.

    Independent of the Kronecker path: basis values come from direct
    evaluation, the normal equations from quadrature moments of the exact
    solution. Returns ``(error, coefficients)``.
    """
    if problem.exact is None:
        raise ConfigError(f"problem {problem.name!r} has no exact solution")
    axes = _core_axes(grid, spaces, q, subdivisions)
    pts = tensor_points([x for x, _, _ in axes])
    wts = reduce(np.multiply.outer, [w for _, w, _ in axes]).ravel()
    psi = _dense_trial_basis(problem, spaces, pts)
    u = problem.exact(pts)
    gram = psi.T @ (wts[:, None] * psi)
    moments = psi.T @ (wts * u)
    coef = np.linalg.solve(gram, moments)
    diff = psi @ coef - u
    return float(math.sqrt(max(np.dot(wts, diff * diff), 0.0))), coef
