"""One-dimensional continuous and broken Lagrange spaces.

A continuous space of order ``p`` on a uniform grid of ``n_h`` cells uses
equispaced nodes ``a + k*h/p``; one endpoint may be constrained to zero (that
node is dropped). The broken space carries ``p+1`` equispaced nodes per cell,
ordered cell-major then local node. With this numbering the ``p=1`` matrices
reproduce the textbook embedding/differentiation/mass triple verbatim.
"""

from dataclasses import dataclass
from functools import lru_cache

import numpy as np
import scipy.sparse as sp

from .exceptions import ConfigError, PointOutOfDomain

CONSTRAINED_ENDS = ("left", "right", "none")


def gauss_rule(q):
    """Gauss-Legendre points and weights on the reference cell [0, 1]."""
    x, w = np.polynomial.legendre.leggauss(q)
    return 0.5 * (x + 1.0), 0.5 * w


@lru_cache(maxsize=None)
def _lagrange_coefficients(p):
    nodes = np.linspace(0.0, 1.0, p + 1)
    vander = np.vander(nodes, p + 1, increasing=True)
    # column l holds the monomial coefficients of L_l
    return np.linalg.inv(vander)


def lagrange_values(p, xi):
    """Values of the ``p+1`` reference Lagrange polynomials at ``xi``.

    Returns an array of shape ``(len(xi), p+1)``.
    """
    xi = np.asarray(xi, dtype=float)
    powers = np.vander(xi, p + 1, increasing=True)
    return powers @ _lagrange_coefficients(p)


def lagrange_derivatives(p, xi):
    """Reference derivatives d/dxi of the Lagrange polynomials at ``xi``."""
    xi = np.asarray(xi, dtype=float)
    coef = _lagrange_coefficients(p)
    k = np.arange(1, p + 1)
    dcoef = coef[1:] * k[:, None]
    powers = np.vander(xi, p, increasing=True)
    return powers @ dcoef


@lru_cache(maxsize=None)
def reference_mass(p):
    xi, w = gauss_rule(p + 1)
    vals = lagrange_values(p, xi)
    return (vals * w[:, None]).T @ vals


@lru_cache(maxsize=None)
def reference_differentiation(p):
    """Nodal differentiation on [0, 1]: D[j, l] = L_l'(xi_j)."""
    return lagrange_derivatives(p, np.linspace(0.0, 1.0, p + 1))


@lru_cache(maxsize=None)
def reference_projection(p):
    """L2 projection P^p -> P^(p-1) on [0, 1], acting on nodal coefficients."""
    if p < 1:
        raise ConfigError("projection needs p >= 1")
    xi, w = gauss_rule(p + 1)
    nodes = np.linspace(0.0, 1.0, p + 1)
    leg_q = np.polynomial.legendre.legvander(2.0 * xi - 1.0, p - 1)
    leg_n = np.polynomial.legendre.legvander(2.0 * nodes - 1.0, p - 1)
    norm = 2.0 * np.arange(p) + 1.0
    vals = lagrange_values(p, xi)
    return leg_n @ (norm[:, None] * (leg_q * w[:, None]).T) @ vals


@dataclass(frozen=True)
class Fe1D:
    """Continuous order-``p`` Lagrange space on a uniform grid of [a, b]."""

    n_h: int
    p: int = 1
    a: float = 0.0
    b: float = 1.0
    constrained_end: str = "right"

    def __post_init__(self):
        if int(self.n_h) < 1:
            raise ConfigError(f"n_h must be positive, got {self.n_h}")
        if not 1 <= int(self.p) <= 8:
            raise ConfigError(f"order p must be in 1..8, got {self.p}")
        if not self.b > self.a:
            raise ConfigError(f"empty interval [{self.a}, {self.b}]")
        if self.constrained_end not in CONSTRAINED_ENDS:
            raise ConfigError(f"constrained_end must be one of {CONSTRAINED_ENDS}")

    @property
    def h(self):
        return (self.b - self.a) / self.n_h

    @property
    def n_nodes(self):
        return self.p * self.n_h + 1

    @property
    def n_y(self):
        return self.n_nodes - (self.constrained_end != "none")

    @property
    def n_broken(self):
        return (self.p + 1) * self.n_h

    @property
    def free_nodes(self):
        """Indices of global nodes carrying a basis function."""
        idx = np.arange(self.n_nodes)
        if self.constrained_end == "left":
            return idx[1:]
        if self.constrained_end == "right":
            return idx[:-1]
        return idx

    def node_coordinates(self):
        return self.a + np.arange(self.n_nodes) * (self.h / self.p)

    def breakpoints(self):
        return self.a + np.arange(self.n_h + 1) * self.h

    def locate(self, x):
        """Cell index and local coordinate, left-closed cells, last cell closed."""
        x = np.asarray(x, dtype=float)
        tol = 1e-12 * (self.b - self.a)
        if np.any(x < self.a - tol) or np.any(x > self.b + tol):
            raise PointOutOfDomain(f"points outside [{self.a}, {self.b}]")
        t = (x - self.a) / self.h
        cell = np.clip(np.floor(t).astype(np.int64), 0, self.n_h - 1)
        return cell, t - cell

    def full_coefficients(self, coeffs):
        """Scatter basis coefficients onto all global nodes (constrained -> 0)."""
        coeffs = np.asarray(coeffs, dtype=float)
        if coeffs.shape[0] != self.n_y:
            raise ConfigError(f"expected {self.n_y} coefficients, got {coeffs.shape[0]}")
        full = np.zeros((self.n_nodes,) + coeffs.shape[1:])
        full[self.free_nodes] = coeffs
        return full


@dataclass(frozen=True)
class OneDMatrices:
    I: sp.csr_matrix
    A: sp.csr_matrix
    M: sp.csr_matrix


def _cell_node_map(space):
    """Global node index of each broken DOF, shape (n_broken,)."""
    cells = np.repeat(np.arange(space.n_h), space.p + 1)
    local = np.tile(np.arange(space.p + 1), space.n_h)
    return cells * space.p + local


def build_1d_matrices(space: Fe1D) -> OneDMatrices:
    """Embedding, differentiation and broken mass matrices of ``space``."""
    p, h = space.p, space.h
    node_of = _cell_node_map(space)
    column = np.full(space.n_nodes, -1, dtype=np.int64)
    column[space.free_nodes] = np.arange(space.n_y)
    col = column[node_of]
    keep = col >= 0
    rows = np.arange(space.n_broken)
    I = sp.csr_matrix(
        (np.ones(keep.sum()), (rows[keep], col[keep])),
        shape=(space.n_broken, space.n_y),
    )
    blocks_d = sp.block_diag([reference_differentiation(p) / h] * space.n_h, format="csr")
    A = (blocks_d @ I).tocsr()
    A.eliminate_zeros()
    M = sp.block_diag([reference_mass(p) * h] * space.n_h, format="csr")
    return OneDMatrices(I=I, A=A, M=M)


def eval_basis(space: Fe1D, coeffs, points, derivative=False):
    """Evaluate ``sum_i coeffs_i phi_i`` (or its derivative) at ``points``."""
    full = space.full_coefficients(coeffs)
    cell, xi = space.locate(points)
    p = space.p
    nodes = cell[:, None] * p + np.arange(p + 1)[None, :]
    if derivative:
        vals = lagrange_derivatives(p, xi) / space.h
    else:
        vals = lagrange_values(p, xi)
    return np.einsum("kj,kj...->k...", vals, full[nodes])


def eval_broken(space: Fe1D, bcoeffs, points):
    """Evaluate a broken (per-cell) polynomial with coefficients ``bcoeffs``."""
    bcoeffs = np.asarray(bcoeffs, dtype=float)
    cell, xi = space.locate(points)
    p = space.p
    dofs = cell[:, None] * (p + 1) + np.arange(p + 1)[None, :]
    return np.einsum("kj,kj...->k...", lagrange_values(p, xi), bcoeffs[dofs])


def broken_eval_matrix(space: Fe1D, points, cells=None):
    """Sparse matrix mapping broken coefficients to values at ``points``.

    ``cells`` forces the cell used for each point (for sampling both one-sided
    limits at interfaces); by default the left-closed convention applies.
    """
    points = np.asarray(points, dtype=float)
    if cells is None:
        cells, xi = space.locate(points)
    else:
        cells = np.asarray(cells, dtype=np.int64)
        xi = (points - space.a) / space.h - cells
    p = space.p
    vals = lagrange_values(p, xi)
    rows = np.repeat(np.arange(points.size), p + 1)
    cols = (cells[:, None] * (p + 1) + np.arange(p + 1)[None, :]).ravel()
    return sp.csr_matrix((vals.ravel(), (rows, cols)), shape=(points.size, space.n_broken))


def composite_gauss(space: Fe1D, q, subdivisions=1, breaks=()):
    """Composite Gauss rule on [a, b] aligned with the cells.

    Every cell is split into ``subdivisions`` equal parts and additionally at
    any of ``breaks`` falling strictly inside it. Returns ``(points, weights,
    cells)``.
    """
    xq, wq = gauss_rule(q)
    edges = space.breakpoints()
    brk = np.asarray(sorted(breaks), dtype=float)
    pts, wts, cls = [], [], []
    for c in range(space.n_h):
        lo, hi = edges[c], edges[c + 1]
        cuts = np.linspace(lo, hi, subdivisions + 1)
        inner = brk[(brk > lo + 1e-14) & (brk < hi - 1e-14)]
        if inner.size:
            cuts = np.unique(np.concatenate([cuts, inner]))
        lengths = np.diff(cuts)
        pts.append((cuts[:-1, None] + lengths[:, None] * xq[None, :]).ravel())
        wts.append((lengths[:, None] * wq[None, :]).ravel())
        cls.append(np.full(lengths.size * q, c))
    return np.concatenate(pts), np.concatenate(wts), np.concatenate(cls)


def basis_eval_matrix(space: Fe1D, points, cells=None, derivative=False):
    """Sparse (n_points x n_y) matrix of basis values (or derivatives)."""
    points = np.asarray(points, dtype=float)
    if cells is None:
        cells, xi = space.locate(points)
    else:
        cells = np.asarray(cells, dtype=np.int64)
        xi = (points - space.a) / space.h - cells
    p = space.p
    if derivative:
        vals = lagrange_derivatives(p, xi) / space.h
    else:
        vals = lagrange_values(p, xi)
    column = np.full(space.n_nodes, -1, dtype=np.int64)
    column[space.free_nodes] = np.arange(space.n_y)
    cols = column[cells[:, None] * p + np.arange(p + 1)[None, :]]
    rows = np.repeat(np.arange(points.size), p + 1).reshape(cols.shape)
    keep = cols >= 0
    return sp.csr_matrix(
        (vals[keep], (rows[keep], cols[keep])), shape=(points.size, space.n_y)
    )
