"""Reduced basis layer for affinely parametrised transport problems.

The reduced test space is spanned by full-order test coefficients ``W``
(n_y x N): the greedy snapshots, orthonormalised in the test norm of the
parameter box midpoint. Everything the online stage needs is stored in parameter-free
blocks:

* ``b[q] = B*_q W`` (broken coefficients, n_x x N),
* ``A[q1, q2] = b[q1]^T M b[q2]`` (N x N),
* ``f[k] = W^T f_k`` with ``f_0`` the source load and ``f_{q+1}`` the inflow
  load of operator term q.

For a parameter mu, ``A_mu = sum theta_q1 theta_q2 A[q1, q2]`` and
``f_mu = f_0 + sum theta_q f_{q+1}``.
"""

import json
import math
import struct
from dataclasses import dataclass, field

import numpy as np
import scipy.linalg as sla
from sklearn.base import BaseEstimator
from sklearn.utils.validation import check_is_fitted

from ._validation import check_parameters, check_positive_int
from .assembly import assemble_affine, build_spaces
from .exceptions import (
    BasisDegenerate,
    ConfigError,
    NotNested,
    SingularReducedSystem,
)
from .grid import classify_faces
from .problem import TransportProblem, load_problem, validate
from .solver import solve_spd

MAGIC = b"UWRB\x00\x01"
FORMAT_VERSION = 1
COND_CAP = 1e12


# ---------------------------------------------------------------------------
# full-order parametric model


@dataclass(frozen=True)
class FullSolution:
    mu: np.ndarray
    w: np.ndarray
    u: np.ndarray
    norm2: float


class FullOrderModel:
    """Affine full-order discretisation with precomputed Gram blocks."""

    def __init__(self, problem: TransportProblem, n_cells, order=1, check=True):
        if problem.affine is None:
            raise ConfigError(f"problem {problem.name!r} is not parametric")
        self.problem = problem
        self.order = order
        self.n_cells = n_cells
        grid = problem.grid(n_cells)
        if check:
            validate(problem, grid)
        faces = classify_faces(grid, problem.at(problem.affine.midpoint()).advection)
        self.spaces = build_spaces(grid, faces, order)
        self.grid = grid
        self.affine_op = assemble_affine(problem, grid, self.spaces, faces)
        parts = self.affine_op.bstar_parts
        M = self.affine_op.mass
        self.mass = M
        self.gram_blocks = [[(p1.T @ M @ p2).tocsr() for p2 in parts] for p1 in parts]
        self.loads = (self.affine_op.rhs_fixed,) + self.affine_op.rhs_parts

    @property
    def n_terms(self):
        return len(self.affine_op.bstar_parts)

    @property
    def n_y(self):
        return self.affine_op.bstar_parts[0].shape[1]

    def thetas(self, mu):
        return self.problem.affine.thetas(self.problem.affine.check_parameter(mu))

    def gram(self, mu):
        th = self.thetas(mu)
        out = None
        for q1 in range(self.n_terms):
            for q2 in range(self.n_terms):
                term = (th[q1] * th[q2]) * self.gram_blocks[q1][q2]
                out = term if out is None else out + term
        out = out.tocsr()
        return (0.5 * (out + out.T)).tocsr()

    def rhs(self, mu):
        th = self.thetas(mu)
        return self.loads[0] + sum(t * f for t, f in zip(th, self.loads[1:]))

    def bstar(self, mu):
        return self.affine_op.bstar(self.thetas(mu))

    def solve(self, mu, method="auto"):
        mu = np.atleast_1d(np.asarray(mu, dtype=float))
        f = self.rhs(mu)
        w, _ = solve_spd(self.gram(mu), f, method)
        u = self.bstar(mu) @ w
        return FullSolution(mu, w, u, float(u @ (self.mass @ u)))

    def l2_norm(self, u):
        return float(math.sqrt(max(u @ (self.mass @ u), 0.0)))


# ---------------------------------------------------------------------------
# reduced model


@dataclass
class ReducedModel:
    """Reduced basis, parameter-free blocks and provenance.

    ``A`` has shape ``(Q, Q, N, N)``, ``f`` shape ``(Q + 1, N)``, ``b`` shape
    ``(Q, n_x, N)``. ``selected`` holds the greedy parameters row-wise.
    """

    W: np.ndarray
    A: np.ndarray
    f: np.ndarray
    b: np.ndarray
    selected: np.ndarray
    theta_b: tuple
    eps: float
    meta: dict = field(default_factory=dict)
    full: FullOrderModel = field(default=None, repr=False, compare=False)

    @property
    def N(self):
        return self.W.shape[1]

    @property
    def Q(self):
        return len(self.theta_b)

    @property
    def theta_f(self):
        return ("const",) + tuple(self.theta_b)

    def thetas(self, mu):
        from .problem import theta

        return np.array([theta(t, mu) for t in self.theta_b])

    def gram(self, mu):
        th = self.thetas(mu)
        return np.einsum("p,q,pqij->ij", th, th, self.A)

    def load(self, mu):
        th = np.concatenate([[1.0], self.thetas(mu)])
        return th @ self.f

    def prefix(self, n):
        """The nested model spanned by the first ``n`` basis vectors."""
        if not 0 <= n <= self.N:
            raise ConfigError(f"prefix size {n} outside 0..{self.N}")
        return ReducedModel(
            W=self.W[:, :n].copy(),
            A=self.A[:, :, :n, :n].copy(),
            f=self.f[:, :n].copy(),
            b=self.b[:, :, :n].copy(),
            selected=self.selected[:n].copy(),
            theta_b=self.theta_b,
            eps=self.eps,
            meta=dict(self.meta),
            full=self.full,
        )


def _empty_model(full: FullOrderModel, eps):
    Q = full.n_terms
    n_x = full.affine_op.bstar_parts[0].shape[0]
    n_p = len(full.problem.affine.parameter_box)
    return ReducedModel(
        W=np.zeros((full.n_y, 0)),
        A=np.zeros((Q, Q, 0, 0)),
        f=np.zeros((Q + 1, 0)),
        b=np.zeros((Q, n_x, 0)),
        selected=np.zeros((0, n_p)),
        theta_b=tuple(t.theta for t in full.problem.affine.terms),
        eps=float(eps),
        meta=_meta(full),
        full=full,
    )


def _meta(full: FullOrderModel):
    g = full.grid
    return {
        "problem": full.problem.name,
        "grid": {"n_cells": list(g.n_cells), "bounds": [list(b) for b in g.bounds]},
        "spaces": {"order": full.order, "constrained_ends": [s.constrained_end for s in full.spaces]},
        "parameter_box": [list(b) for b in full.problem.affine.parameter_box],
    }


def offline_assemble(full: FullOrderModel, W, eps=0.0, selected=None):
    """All reduced blocks for the basis ``W`` (columns are test coefficients)."""
    W = np.asarray(W, dtype=float).reshape(full.n_y, -1)
    model = _empty_model(full, eps)
    for k in range(W.shape[1]):
        mu = None if selected is None else selected[k]
        model = extend_model(model, W[:, k], mu)
    return model


def _orthonormalise(model: ReducedModel, w, min_ratio):
    """``w`` made orthonormal to ``model.W`` in the midpoint test norm.

    The inner product is ``(B*_mid v, B*_mid w)_{L2}`` at the parameter box
    midpoint. Two Gram-Schmidt passes; the span of the basis is unchanged but
    the reduced Gram matrices stay well conditioned.
    """
    full = model.full
    M = full.mass
    mid = np.array([0.5 * (lo + hi) for lo, hi in model.meta["parameter_box"]])
    th = model.thetas(mid)
    parts = full.affine_op.bstar_parts

    def applied(v):
        return sum(t * (part @ v) for t, part in zip(th, parts))

    w = np.asarray(w, dtype=float).copy()
    norm0 = full.l2_norm(applied(w))
    if norm0 == 0.0:
        raise BasisDegenerate("snapshot has zero norm")
    if model.N:
        basis = np.einsum("q,qxi->xi", th, model.b)
        for _ in range(2):
            w -= model.W @ (basis.T @ (M @ applied(w)))
    norm = full.l2_norm(applied(w))
    if norm < min_ratio * norm0:
        raise BasisDegenerate(
            f"snapshot is numerically dependent on the basis (remainder {norm / norm0:.3g})"
        )
    return w / norm


def extend_model(model: ReducedModel, w, mu=None, min_ratio=None):
    """Append one basis vector, updating the blocks incrementally.

    ``w`` is first orthonormalised against the current basis; ``BasisDegenerate``
    is raised if less than ``min_ratio`` of its norm remains.
    """
    full = model.full
    M = full.mass
    if min_ratio is None:
        min_ratio = 1.0 / math.sqrt(COND_CAP)
    w = _orthonormalise(model, w, min_ratio)
    new_b = np.stack([part @ w for part in full.affine_op.bstar_parts])  # (Q, n_x)
    b = np.concatenate([model.b, new_b[:, :, None]], axis=2)
    Mb_new = np.stack([M @ v for v in new_b])  # (Q, n_x)
    N = model.N
    A = np.zeros((model.Q, model.Q, N + 1, N + 1))
    A[:, :, :N, :N] = model.A
    # cross terms: A[q1, q2, i, new] = b[q1, :, i] . M b_new[q2]
    A[:, :, :, N] = np.einsum("pxi,qx->pqi", b, Mb_new)
    A[:, :, N, :] = np.einsum("px,qxi->pqi", Mb_new, b)
    f_new = np.array([load @ w for load in full.loads])
    f = np.concatenate([model.f, f_new[:, None]], axis=1)
    n_p = model.selected.shape[1]
    mu_row = np.full((1, n_p), np.nan) if mu is None else np.atleast_1d(mu).reshape(1, n_p)
    return ReducedModel(
        W=np.concatenate([model.W, w[:, None]], axis=1),
        A=A,
        f=f,
        b=b,
        selected=np.concatenate([model.selected, mu_row], axis=0),
        theta_b=model.theta_b,
        eps=model.eps,
        meta=model.meta,
        full=full,
    )


def _cho(A):
    try:
        return sla.cho_factor(A, lower=True, check_finite=True)
    except (np.linalg.LinAlgError, ValueError) as exc:
        raise SingularReducedSystem(f"reduced Gram matrix is not SPD: {exc}") from exc


def online_solve(model: ReducedModel, mu, reconstruct=True):
    """Reduced coefficients ``w^N`` and (optionally) broken ``u^N`` at ``mu``."""
    if model.N == 0:
        raise SingularReducedSystem("empty reduced basis (N = 0)")
    A = model.gram(mu)
    c = sla.cho_solve(_cho(A), model.load(mu))
    if not reconstruct:
        return c, None
    th = model.thetas(mu)
    u = np.einsum("q,qxi,i->x", th, model.b, c)
    return c, u


def reduced_error(model: ReducedModel, mu, full_norm2):
    """``||u^delta - u^N||`` from ``||u^delta||^2`` and reduced quantities.

    ``u^N`` is the L2 projection of ``u^delta`` onto the reduced trial space,
    so the squared error is ``||u^delta||^2 - f_N . c``.
    """
    if model.N == 0:
        return math.sqrt(max(full_norm2, 0.0))
    c, _ = online_solve(model, mu, reconstruct=False)
    return math.sqrt(max(full_norm2 - model.load(mu) @ c, 0.0))


def basis_condition(model: ReducedModel):
    """Condition number of the Jacobi-scaled Gram at the box midpoint."""
    if model.N == 0:
        return 1.0
    mid = np.array([0.5 * (lo + hi) for lo, hi in model.meta["parameter_box"]])
    A = model.gram(mid)
    d = np.sqrt(np.diag(A))
    if np.any(d <= 0):
        return np.inf
    return float(np.linalg.cond(A / np.outer(d, d)))


@dataclass
class GreedyTrace:
    N: list = field(default_factory=list)
    mu_star: list = field(default_factory=list)
    max_error: list = field(default_factory=list)
    status: str = ""

    def to_csv(self):
        lines = ["N,mu_star,max_train_error"]
        for n, mu, e in zip(self.N, self.mu_star, self.max_error):
            mu_txt = "" if mu is None else ";".join(f"{m:.17g}" for m in np.atleast_1d(mu))
            lines.append(f"{n},{mu_txt},{e:.6g}")
        return "\n".join(lines) + "\n"


def strong_greedy(full: FullOrderModel, train, eps, max_basis=None, cond_cap=COND_CAP, solutions=None):
    """Greedy basis selection by the true error over the training set.

    All training solutions are computed first. In each step the parameter with
    the largest error (lowest index on ties) contributes its test
    coefficients, orthonormalised against the basis. Stops when the largest
    error is at most ``eps`` or the basis has ``max_basis`` vectors. Returns ``(model, trace, solutions)``.
    """
    if eps <= 0:
        raise ConfigError(f"tolerance must be positive, got {eps}")
    train = check_parameters(train, len(full.problem.affine.parameter_box))
    if solutions is None:
        solutions = [full.solve(mu) for mu in train]
    model = _empty_model(full, eps)
    trace = GreedyTrace()
    chosen = set()
    while True:
        errs = np.array([reduced_error(model, s.mu, s.norm2) for s in solutions])
        k = int(np.argmax(errs))
        emax = float(errs[k])
        if emax <= eps:
            trace.N.append(model.N), trace.mu_star.append(None), trace.max_error.append(emax)
            trace.status = "converged"
            break
        if max_basis is not None and model.N >= max_basis:
            trace.N.append(model.N), trace.mu_star.append(None), trace.max_error.append(emax)
            trace.status = "max_basis"
            break
        if k in chosen:
            raise BasisDegenerate(f"parameter {train[k]} selected twice; basis has lost accuracy")
        trace.N.append(model.N), trace.mu_star.append(train[k].copy()), trace.max_error.append(emax)
        chosen.add(k)
        model = extend_model(model, solutions[k].w, train[k], 1.0 / math.sqrt(cond_cap))
        cond = basis_condition(model)
        if cond > cond_cap:
            raise BasisDegenerate(f"basis Gram condition {cond:.3g} exceeds {cond_cap:.3g} at N={model.N}")
    return model, trace, solutions


def hierarchical_estimate(model_n: ReducedModel, model_m: ReducedModel, mu):
    """``||u^N - u^M||`` evaluated with the larger model's Gram blocks."""
    check_nested(model_n, model_m)
    if model_m.N == 0:
        return 0.0
    c_m, _ = online_solve(model_m, mu, reconstruct=False)
    d = -c_m
    if model_n.N:
        c_n, _ = online_solve(model_n, mu, reconstruct=False)
        d[: model_n.N] += c_n
    return float(math.sqrt(max(d @ model_m.gram(mu) @ d, 0.0)))


def check_nested(model_n, model_m):
    if model_n.N > model_m.N:
        raise NotNested(f"N = {model_n.N} exceeds M = {model_m.N}")
    if model_n.meta.get("problem") != model_m.meta.get("problem") or model_n.meta.get("grid") != model_m.meta.get("grid"):
        raise NotNested("models belong to different problems or grids")
    if model_n.theta_b != model_m.theta_b:
        raise NotNested("models use different parameter functions")
    if not np.array_equal(model_n.W, model_m.W[:, : model_n.N]):
        raise NotNested("the smaller basis is not a prefix of the larger one")


def reduced_optimality(model: ReducedModel, mu, trials=100, seed=0):
    """Supremizer-ratio test in the reduced space at ``mu``."""
    from .analysis import supremizer_ratios

    rng = np.random.default_rng(seed)
    th = model.thetas(mu)
    B = np.einsum("q,qxi->xi", th, model.b)
    cho = _cho(model.gram(mu))
    vs = rng.standard_normal((model.N, trials))
    ratios, errs = supremizer_ratios(lambda r: sla.cho_solve(cho, r), B, model.full.mass, vs)
    return float(np.max(np.abs(ratios - 1.0))), float(errs.max())


# ---------------------------------------------------------------------------
# serialisation


def _arrays(model):
    return [("W", model.W), ("A", model.A), ("f", model.f), ("b", model.b), ("selected", model.selected)]


def save_model(model: ReducedModel, path):
    """Write ``MAGIC | uint64 header length | JSON header | raw <f8 arrays``."""
    table, offset = [], 0
    blobs = []
    for name, arr in _arrays(model):
        data = np.ascontiguousarray(arr, dtype="<f8").tobytes()
        table.append({"name": name, "shape": list(arr.shape), "offset": offset, "nbytes": len(data)})
        blobs.append(data)
        offset += len(data)
    header = {
        "version": FORMAT_VERSION,
        "problem": model.meta.get("problem"),
        "problem_source": model.meta.get("problem_source"),
        "grid": model.meta.get("grid"),
        "spaces": model.meta.get("spaces"),
        "parameter_box": model.meta.get("parameter_box"),
        "N": model.N,
        "Q_b": model.Q,
        "Q_f": model.Q + 1,
        "theta_b": list(model.theta_b),
        "theta_f": list(model.theta_f),
        "S_N": [[float(m) for m in row] for row in model.selected],
        "eps": model.eps,
        "dtype": "<f8",
        "arrays": table,
    }
    text = json.dumps(header, sort_keys=True, separators=(",", ":")).encode("utf-8")
    with open(path, "wb") as fh:
        fh.write(MAGIC)
        fh.write(struct.pack("<Q", len(text)))
        fh.write(text)
        for blob in blobs:
            fh.write(blob)


def load_model(path, attach_full=True):
    """Read a model file. With ``attach_full`` the full-order model is rebuilt."""
    with open(path, "rb") as fh:
        raw = fh.read()
    if raw[: len(MAGIC)] != MAGIC:
        raise ConfigError(f"{path} is not a reduced model file")
    (hlen,) = struct.unpack("<Q", raw[len(MAGIC): len(MAGIC) + 8])
    start = len(MAGIC) + 8
    try:
        header = json.loads(raw[start: start + hlen].decode("utf-8"))
    except (UnicodeDecodeError, json.JSONDecodeError) as exc:
        raise ConfigError(f"corrupt model header in {path}: {exc}") from exc
    if header.get("version") != FORMAT_VERSION:
        raise ConfigError(f"unsupported model version {header.get('version')}")
    base = start + hlen
    arrays = {}
    for entry in header["arrays"]:
        lo = base + entry["offset"]
        buf = raw[lo: lo + entry["nbytes"]]
        arrays[entry["name"]] = np.frombuffer(buf, dtype="<f8").reshape(entry["shape"]).astype(float)
    meta = {k: header[k] for k in ("problem", "grid", "spaces", "parameter_box")}
    if header.get("problem_source") is not None:
        meta["problem_source"] = header["problem_source"]
    full = None
    if attach_full:
        problem = load_problem(header.get("problem_source") or header["problem"])
        full = FullOrderModel(problem, tuple(header["grid"]["n_cells"]), header["spaces"]["order"], check=False)
    return ReducedModel(
        W=arrays["W"],
        A=arrays["A"],
        f=arrays["f"],
        b=arrays["b"],
        selected=arrays["selected"],
        theta_b=tuple(header["theta_b"]),
        eps=float(header["eps"]),
        meta=meta,
        full=full,
    )


# ---------------------------------------------------------------------------
# estimator front end


def equidistant(box, n):
    """``n`` equidistant samples of a one-parameter box (endpoints included)."""
    (lo, hi), = box
    return np.linspace(lo, hi, n)[:, None]


def random_parameters(box, n, seed):
    """``n`` uniform samples from the box using PCG64 seeded with ``seed``."""
    rng = np.random.default_rng(np.random.PCG64(seed))
    lo = np.array([b[0] for b in box])
    hi = np.array([b[1] for b in box])
    return lo + (hi - lo) * rng.random((n, len(box)))


class ReducedBasisSolver(BaseEstimator):
    """Strong-greedy reduced basis model.

    ``fit(X)`` takes training parameters as rows of ``X``; ``transform(X)``
    returns reduced coefficients and ``predict(X)`` broken coefficients of the
    reduced reconstruction for each parameter row.

    Parameters
    ----------
    problem : str or TransportProblem
        Parametric problem (catalog name such as ``"tc1"`` or JSON path).
    n_cells : int
    order : int
    tol : float
        Greedy stopping tolerance on the L2 error.
    max_basis : int, optional
    """

    def __init__(self, problem="tc1", n_cells=32, order=1, tol=1e-4, max_basis=None):
        self.problem = problem
        self.n_cells = n_cells
        self.order = order
        self.tol = tol
        self.max_basis = max_basis

    def fit(self, X, y=None):
        check_positive_int(self.order, "order")
        prob = load_problem(self.problem) if isinstance(self.problem, str) else self.problem
        full = FullOrderModel(prob, self.n_cells, self.order)
        model, trace, sols = strong_greedy(full, X, self.tol, self.max_basis)
        if isinstance(self.problem, str) and self.problem.endswith(".json"):
            model.meta["problem_source"] = self.problem
        self.full_ = full
        self.model_ = model
        self.trace_ = trace
        self.n_features_in_ = len(prob.affine.parameter_box)
        return self

    def transform(self, X):
        check_is_fitted(self, "model_")
        X = check_parameters(X, self.n_features_in_)
        return np.stack([online_solve(self.model_, mu, reconstruct=False)[0] for mu in X])

    def predict(self, X):
        check_is_fitted(self, "model_")
        X = check_parameters(X, self.n_features_in_)
        return np.stack([online_solve(self.model_, mu)[1] for mu in X])

    def errors(self, X):
        """True L2 errors against fresh full-order solves."""
        check_is_fitted(self, "model_")
        X = check_parameters(X, self.n_features_in_)
        return np.array([reduced_error(self.model_, mu, self.full_.solve(mu).norm2) for mu in X])
