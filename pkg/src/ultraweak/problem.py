"""Transport problem data, the built-in catalog and well-posedness checks.

Data functions take an ``(k, dim)`` array of points and return ``(k,)``
values (``(k, dim)`` for the advection field). Scalars are accepted wherever a
function is expected and mark the datum as constant.
"""

import json
import math
from dataclasses import dataclass, field, replace
from itertools import product

import numpy as np

from .exceptions import ConfigError, MixedSignFace, UnknownProblem, ValidationFailed
from .grid import TensorGrid, classify_faces

# ---------------------------------------------------------------------------
# advection fields


class ConstantAdvection:
    is_constant = True

    def __init__(self, vector):
        self.vector = np.atleast_1d(np.asarray(vector, dtype=float))

    @property
    def dim(self):
        return self.vector.size

    def __call__(self, pts):
        pts = np.atleast_2d(pts)
        return np.broadcast_to(self.vector, (pts.shape[0], self.dim)).copy()

    def divergence(self, pts):
        return np.zeros(np.atleast_2d(pts).shape[0])

    def __repr__(self):
        return f"ConstantAdvection({self.vector.tolist()})"


class TensorFactorAdvection:
    """Component ``d`` depends on coordinate ``d`` only: b_d(z) = beta_d(z_d)."""

    is_constant = False

    def __init__(self, factors, derivatives):
        if len(factors) != len(derivatives):
            raise ConfigError("need one derivative per factor")
        self.factors = tuple(factors)
        self.derivatives = tuple(derivatives)

    @property
    def dim(self):
        return len(self.factors)

    def __call__(self, pts):
        pts = np.atleast_2d(pts)
        return np.stack([f(pts[:, d]) for d, f in enumerate(self.factors)], axis=1)

    def divergence(self, pts):
        pts = np.atleast_2d(pts)
        return sum(df(pts[:, d]) for d, df in enumerate(self.derivatives))


class FieldAdvection:
    is_constant = False

    def __init__(self, func, divergence, dim):
        self._func = func
        self._div = divergence
        self.dim = dim

    def __call__(self, pts):
        return np.asarray(self._func(np.atleast_2d(pts)), dtype=float)

    def divergence(self, pts):
        pts = np.atleast_2d(pts)
        return np.broadcast_to(np.asarray(self._div(pts), dtype=float), (pts.shape[0],))


def as_function(value):
    """Wrap a scalar into a vectorised constant function."""
    if callable(value):
        return value
    v = float(value)
    return lambda pts: np.full(np.atleast_2d(pts).shape[0], v)


def constant_value(value):
    """The float value of a constant datum, ``None`` for functions."""
    if callable(value):
        return getattr(value, "constant", None)
    return float(value)


# ---------------------------------------------------------------------------
# affine parametrisation

THETA_FORMS = {
    "mu": lambda mu: mu[0],
    "cos_mu": lambda mu: math.cos(mu[0]),
    "sin_mu": lambda mu: math.sin(mu[0]),
    "const": lambda mu: 1.0,
}


def theta(form, mu):
    try:
        return float(THETA_FORMS[form](np.atleast_1d(np.asarray(mu, dtype=float))))
    except KeyError:
        raise ConfigError(f"unknown theta form {form!r}; known: {sorted(THETA_FORMS)}")


@dataclass(frozen=True)
class AffineTerm:
    """One operator part: advection along ``direction`` or reaction ``value``."""

    theta: str
    direction: tuple = None
    value: float = None

    @property
    def is_reaction(self):
        return self.direction is None


@dataclass(frozen=True)
class AffineDecomposition:
    terms: tuple
    parameter_box: tuple

    @property
    def n_terms(self):
        return len(self.terms)

    @property
    def advection_terms(self):
        return [q for q, t in enumerate(self.terms) if not t.is_reaction]

    def thetas(self, mu):
        return np.array([theta(t.theta, mu) for t in self.terms])

    def check_parameter(self, mu):
        mu = np.atleast_1d(np.asarray(mu, dtype=float))
        if mu.size != len(self.parameter_box):
            raise ConfigError(f"expected {len(self.parameter_box)} parameters, got {mu.size}")
        for m, (lo, hi) in zip(mu, self.parameter_box):
            if not lo - 1e-12 <= m <= hi + 1e-12:
                raise ConfigError(f"parameter {m} outside [{lo}, {hi}]")
        return mu

    def advection_vector(self, mu):
        th = self.thetas(mu)
        dim = len(next(t.direction for t in self.terms if not t.is_reaction))
        b = np.zeros(dim)
        for q, t in enumerate(self.terms):
            if not t.is_reaction:
                b += th[q] * np.asarray(t.direction, dtype=float)
        return b

    def reaction_value(self, mu):
        th = self.thetas(mu)
        return float(sum(th[q] * t.value for q, t in enumerate(self.terms) if t.is_reaction))

    def midpoint(self):
        return np.array([0.5 * (lo + hi) for lo, hi in self.parameter_box])


# ---------------------------------------------------------------------------
# problem


@dataclass(frozen=True)
class TransportProblem:
    """Stationary transport ``b.grad(u) + c u = f`` with ``u = g`` on inflow.

    ``breaks`` maps a dimension to coordinates where the inflow or source data
    jump; face quadrature is split there. ``omega_filling_time`` records a
    known finite filling time for fields that fail the coordinate-direction
    check.
    """

    name: str
    dim: int
    advection: object
    reaction: object = 0.0
    source: object = 0.0
    inflow: object = 0.0
    exact: object = None
    bounds: tuple = None
    is_spacetime: bool = False
    breaks: dict = field(default_factory=dict)
    omega_filling_time: float = None
    affine: AffineDecomposition = None

    def __post_init__(self):
        if self.bounds is None:
            object.__setattr__(self, "bounds", ((0.0, 1.0),) * self.dim)
        if self.advection.dim != self.dim:
            raise ConfigError("advection dimension does not match problem dimension")

    @property
    def is_constant(self):
        """Constant advection and reaction: exact Kronecker assembly applies."""
        return bool(self.advection.is_constant) and constant_value(self.reaction) is not None

    @property
    def is_parametric(self):
        return self.affine is not None

    def reaction_fn(self, pts):
        return as_function(self.reaction)(pts)

    def source_fn(self, pts):
        return as_function(self.source)(pts)

    def inflow_fn(self, pts):
        return as_function(self.inflow)(pts)

    def grid(self, n):
        n = tuple(np.broadcast_to(np.atleast_1d(n), (self.dim,)).tolist())
        return TensorGrid(n, self.bounds)

    def at(self, mu):
        """The non-parametric problem for parameter ``mu``."""
        if self.affine is None:
            raise ConfigError(f"problem {self.name!r} is not parametric")
        mu = self.affine.check_parameter(mu)
        b = self.affine.advection_vector(mu)
        c = self.affine.reaction_value(mu)
        exact = None
        fval = constant_value(self.source)
        if fval is not None:
            exact = traceback_solution(b, c, fval, self.inflow_fn, self.bounds)
        return replace(
            self,
            name=f"{self.name}@{','.join(f'{m:.17g}' for m in mu)}",
            advection=ConstantAdvection(b),
            reaction=c,
            exact=exact,
            affine=None,
        )


def traceback_solution(b, c, f0, g, bounds):
    """Exact solution for constant b, c, f0 by tracing characteristics back.

    For each point the characteristic is followed backwards to the first box
    side it hits; then ``u = e^{-c t} g(z0) + int_0^t e^{-c s} f0 ds``.
    """
    b = np.asarray(b, dtype=float)
    lo = np.array([a for a, _ in bounds])
    hi = np.array([z for _, z in bounds])

    def u(pts):
        pts = np.atleast_2d(np.asarray(pts, dtype=float))
        times = np.full(pts.shape, np.inf)
        for d in range(b.size):
            if b[d] > 0:
                times[:, d] = (pts[:, d] - lo[d]) / b[d]
            elif b[d] < 0:
                times[:, d] = (pts[:, d] - hi[d]) / b[d]
        hit = np.argmin(times, axis=1)
        t = np.maximum(times[np.arange(pts.shape[0]), hit], 0.0)
        foot = pts - t[:, None] * b[None, :]
        for d in range(b.size):
            sel = hit == d
            foot[sel, d] = lo[d] if b[d] > 0 else hi[d]
        decay = np.exp(-c * t)
        src = f0 * t if c == 0 else f0 * (1.0 - decay) / c
        return decay * g(foot) + src

    return u


# ---------------------------------------------------------------------------
# validation


@dataclass
class ValidationReport:
    min_reaction_margin: float
    min_advection_norm: float
    filling_direction: tuple
    filling_alpha: float
    filling_source: str
    faces: object
    passed: bool
    reasons: list

    def as_dict(self):
        return {
            "passed": self.passed,
            "reasons": list(self.reasons),
            "min_reaction_margin": self.min_reaction_margin,
            "min_advection_norm": self.min_advection_norm,
            "filling_direction": None if self.filling_direction is None else list(self.filling_direction),
            "filling_alpha": self.filling_alpha,
            "filling_source": self.filling_source,
            "faces": None if self.faces is None else {
                f"{d}:{'lower' if s == 0 else 'upper'}": lab
                for (d, s), lab in sorted(self.faces.labels.items())
            },
        }


def sample_box(grid, n_samples, interior=False):
    if interior:
        axes = [a + (np.arange(n_samples) + 0.5) * (b - a) / n_samples for a, b in grid.bounds]
    else:
        axes = [np.linspace(a, b, n_samples) for a, b in grid.bounds]
    mesh = np.meshgrid(*axes, indexing="ij")
    return np.stack([m.ravel() for m in mesh], axis=1)


def _problems_to_check(problem):
    if problem.affine is None:
        return [problem]
    box = problem.affine.parameter_box
    corners = [np.array(c) for c in product(*box)]
    return [problem.at(c) for c in corners] + [problem.at(problem.affine.midpoint())]


def validate(problem: TransportProblem, grid: TensorGrid = None, n_samples=17, raise_on_fail=True):
    """Sample the well-posedness conditions on the closed (extended) box.

    Checks ``c - div(b)/2 >= 0`` on the closed box, ``|b| > 0`` on an interior
    lattice (isolated boundary stagnation points are allowed), a sufficient
    filling condition
    (some coordinate direction k with ``b.k >= alpha > 0``, a catalogued
    filling time, or ``c - div(b)/2 >= kappa > 0``) and that every box side
    has a uniform sign of ``b.n``. Parametric problems are checked at the
    parameter-box corners and midpoint, and the side labels must agree.
    """
    if grid is None:
        grid = problem.grid(1)
    pts = sample_box(grid, n_samples)
    inner = sample_box(grid, n_samples, interior=True)
    reasons = []
    margin, bnorm, alpha, direction = np.inf, np.inf, np.inf, None
    source = None
    faces = None
    labels_seen = None
    for prob in _problems_to_check(problem):
        b = prob.advection(pts)
        m = prob.reaction_fn(pts) - 0.5 * prob.advection.divergence(pts)
        margin = min(margin, float(m.min()))
        bnorm = min(bnorm, float(np.linalg.norm(prob.advection(inner), axis=1).min()))
        best, best_k = -np.inf, None
        for d, s in product(range(prob.dim), (1.0, -1.0)):
            val = float((s * b[:, d]).min())
            if val > best:
                best, best_k = val, tuple(s if k == d else 0.0 for k in range(prob.dim))
        if direction is None or best < alpha:
            alpha, direction = best, best_k
        try:
            faces = classify_faces(grid, prob.advection, n_samples)
        except MixedSignFace as exc:
            reasons.append(str(exc))
            faces = None
        if faces is not None:
            if labels_seen is not None and faces.labels != labels_seen:
                reasons.append("inflow/outflow sides change with the parameter")
            labels_seen = faces.labels
    if margin < -1e-12:
        reasons.append(f"c - div(b)/2 = {margin:.3g} < 0 somewhere")
    if bnorm < 1e-12:
        reasons.append(f"|b| = {bnorm:.3g} vanishes somewhere")
    if alpha > 0:
        source = "direction"
    elif problem.omega_filling_time is not None:
        source = "catalog"
    elif margin > 0:
        source = "reaction"
    else:
        reasons.append("no sufficient filling condition found")
    if alpha <= 0:
        direction, alpha = None, None
    report = ValidationReport(
        min_reaction_margin=margin,
        min_advection_norm=bnorm,
        filling_direction=direction,
        filling_alpha=alpha,
        filling_source=source,
        faces=faces,
        passed=not reasons,
        reasons=reasons,
    )
    if raise_on_fail and reasons:
        raise ValidationFailed("; ".join(reasons), report)
    return report


# ---------------------------------------------------------------------------
# catalog

_DEG30 = math.radians(30.0)
_DEG225 = math.radians(22.5)
_EDGE = 1e-12


def _left_bottom(left, bottom):
    """Inflow data on the sides x=0 (function of y) and y=0 (function of x)."""

    def g(pts):
        pts = np.atleast_2d(pts)
        x, y = pts[:, 0], pts[:, 1]
        on_left = x <= _EDGE
        return np.where(on_left, left(y), bottom(x))

    return g


def _const(v):
    return lambda s: np.full_like(np.asarray(s, dtype=float), v)


def _g1_left(y):
    return np.where(y <= 0.4, 31.25 * y**3 - 18.75 * y**2 + 1.0, 0.0)


def _g2_left(y):
    return np.where(y < 0.2, 1.0, np.where(y < 0.4, 2.0 - 5.0 * y, 0.0))


def _g3_left(y):
    return np.where(y < 0.25, 1.0, 0.0)


def _g4_left(y):
    poly = 256 * y**4 - 512 * y**3 + 352 * y**2 - 96 * y + 9
    return np.where((y >= 0.25) & (y <= 0.75), poly, 0.0)


def _shift(f, s):
    return lambda t: f(t) + s


def _smoothness_problem(name, left, breaks, angle=_DEG30, shift=0.0):
    b = (math.cos(angle), math.sin(angle))
    g = _left_bottom(_shift(left, shift), _const(1.0 + shift))
    return TransportProblem(
        name=name,
        dim=2,
        advection=ConstantAdvection(b),
        inflow=g,
        exact=traceback_solution(b, 0.0, 0.0, g, ((0.0, 1.0),) * 2),
        breaks={1: tuple(breaks)},
    )


def _circle_exact(pts):
    pts = np.atleast_2d(pts)
    r = np.hypot(pts[:, 0], pts[:, 1] - 1.0)
    y0 = 1.0 - r
    return np.where((y0 >= 0.0) & (y0 <= 1.0), _g4_left(np.clip(y0, 0.0, 1.0)), 0.0)


def _circle():
    adv = FieldAdvection(
        lambda p: np.stack([1.0 - p[:, 1], p[:, 0]], axis=1), lambda p: 0.0, dim=2
    )
    return TransportProblem(
        name="2d-circle",
        dim=2,
        advection=adv,
        inflow=_left_bottom(_g4_left, _const(0.0)),
        exact=_circle_exact,
        breaks={1: (0.25, 0.75)},
        omega_filling_time=math.pi / 2,
    )


def _decay():
    g = lambda pts: np.ones(np.atleast_2d(pts).shape[0])
    return TransportProblem(
        name="1d-decay",
        dim=1,
        advection=ConstantAdvection([1.0]),
        reaction=2.0,
        inflow=g,
        exact=lambda pts: np.exp(-2.0 * np.atleast_2d(pts)[:, 0]),
    )


def _linear():
    return TransportProblem(
        name="1d-linear",
        dim=1,
        advection=ConstantAdvection([1.0]),
        source=1.0,
        exact=lambda pts: np.atleast_2d(pts)[:, 0].copy(),
    )


def _spacetime():
    b = (1.0, 0.5)

    def g(pts):
        pts = np.atleast_2d(pts)
        t, x = pts[:, 0], pts[:, 1]
        return np.where(t <= _EDGE, np.sin(np.pi * x), 0.0)

    return TransportProblem(
        name="st-1d",
        dim=2,
        advection=ConstantAdvection(b),
        inflow=g,
        exact=traceback_solution(b, 0.0, 0.0, g, ((0.0, 1.0),) * 2),
        is_spacetime=True,
    )


def _tc1():
    affine = AffineDecomposition(
        terms=(AffineTerm("mu", direction=(1.0, 0.0)), AffineTerm("const", direction=(0.0, 1.0))),
        parameter_box=((0.01, 1.0),),
    )
    return TransportProblem(
        name="tc1",
        dim=2,
        advection=ConstantAdvection(affine.advection_vector(affine.midpoint())),
        inflow=_left_bottom(_const(1.0), _const(0.0)),
        affine=affine,
    )


def _tc23(name):
    affine = AffineDecomposition(
        terms=(
            AffineTerm("cos_mu", direction=(1.0, 0.0)),
            AffineTerm("sin_mu", direction=(0.0, 1.0)),
            AffineTerm("const", value=1.0),
        ),
        parameter_box=((0.2, math.pi / 2 - 0.2),),
    )
    common = dict(
        dim=2,
        advection=ConstantAdvection(affine.advection_vector(affine.midpoint())),
        reaction=1.0,
        affine=affine,
    )
    if name == "tc2":
        return TransportProblem(name="tc2", source=1.0, inflow=0.0, **common)

    def f(pts):
        pts = np.atleast_2d(pts)
        return np.where(pts[:, 0] < pts[:, 1], 0.5, 1.0)

    def g(pts):
        pts = np.atleast_2d(pts)
        x, y = pts[:, 0], pts[:, 1]
        return np.where(x <= 0.5, 1.0 - y, 0.0)

    return TransportProblem(name="tc3", source=f, inflow=g, breaks={0: (0.5,)}, **common)


_CATALOG = {
    "1d-decay": _decay,
    "1d-linear": _linear,
    "2d-g1": lambda: _smoothness_problem("2d-g1", _g1_left, (0.4,)),
    "2d-g2": lambda: _smoothness_problem("2d-g2", _g2_left, (0.2, 0.4)),
    "2d-g3": lambda: _smoothness_problem("2d-g3", _g3_left, (0.25,)),
    "2d-g3-22.5": lambda: _smoothness_problem("2d-g3-22.5", _g3_left, (0.25,), angle=_DEG225),
    "2d-const": lambda: _smoothness_problem("2d-const", _const(1.0), ()),
    "2d-g1-shift": lambda: _smoothness_problem("2d-g1-shift", _g1_left, (0.4,), shift=-1.0),
    "2d-g2-shift": lambda: _smoothness_problem("2d-g2-shift", _g2_left, (0.2, 0.4), shift=-1.0),
    "2d-g3-shift": lambda: _smoothness_problem("2d-g3-shift", _g3_left, (0.25,), shift=-1.0),
    "2d-circle": _circle,
    "st-1d": _spacetime,
    "tc1": _tc1,
    "tc2": lambda: _tc23("tc2"),
    "tc3": lambda: _tc23("tc3"),
}
_ALIASES = {"2d-const-restricted": "2d-const"}


def catalog_names():
    return sorted(_CATALOG) + sorted(_ALIASES)


def catalog(name: str) -> TransportProblem:
    """Built-in problem by name (see :func:`catalog_names`)."""
    key = _ALIASES.get(name, name)
    try:
        factory = _CATALOG[key]
    except KeyError:
        raise UnknownProblem(f"unknown problem {name!r}; known: {', '.join(catalog_names())}")
    prob = factory()
    return prob if prob.name == name else replace(prob, name=name)


# ---------------------------------------------------------------------------
# JSON problem files


def _piecewise_1d(spec):
    """``number`` or list of ``{"from", "to", "value" | "poly"}`` on one axis."""
    if isinstance(spec, (int, float)):
        return _const(float(spec)), ()
    pieces = list(spec)
    breaks = set()
    for piece in pieces:
        for key in ("from", "to"):
            if key in piece:
                breaks.add(float(piece[key]))

    def f(s):
        s = np.asarray(s, dtype=float)
        out = np.zeros_like(s)
        done = np.zeros(s.shape, dtype=bool)
        for piece in pieces:
            lo = piece.get("from", -np.inf)
            hi = piece.get("to", np.inf)
            sel = (s >= lo) & (s < hi) & ~done
            if "poly" in piece:
                vals = np.polynomial.polynomial.polyval(s, piece["poly"])
            else:
                vals = np.full_like(s, float(piece["value"]))
            out[sel] = vals[sel]
            done |= sel
        return out

    return f, tuple(sorted(breaks))


def _parse_side(key):
    d, side = key.split(":")
    return int(d), {"lower": 0, "upper": 1}[side]


def _inflow_from_json(spec, dim, bounds):
    if isinstance(spec, (int, float)):
        return float(spec), {}
    sides = {}
    breaks = {}
    for key, val in spec.items():
        d, side = _parse_side(key)
        if dim == 1:
            sides[(d, side)] = (None, _const(float(val)))
            continue
        axis = int(val.get("axis", 1 - d if dim == 2 else 0)) if isinstance(val, dict) else (1 - d if dim == 2 else 0)
        pieces = val["pieces"] if isinstance(val, dict) else val
        fn, brk = _piecewise_1d(pieces)
        sides[(d, side)] = (axis, fn)
        if brk:
            breaks.setdefault(axis, set()).update(brk)

    def g(pts):
        pts = np.atleast_2d(pts)
        out = np.zeros(pts.shape[0])
        done = np.zeros(pts.shape[0], dtype=bool)
        for (d, side), (axis, fn) in sorted(sides.items()):
            target = bounds[d][side]
            sel = (np.abs(pts[:, d] - target) <= _EDGE) & ~done
            vals = fn(pts[:, axis]) if axis is not None else fn(pts[:, 0])
            out[sel] = vals[sel]
            done |= sel
        return out

    return g, {k: tuple(sorted(v)) for k, v in breaks.items()}


def _source_from_json(spec):
    if isinstance(spec, (int, float)):
        return float(spec)
    default = float(spec.get("default", 0.0))
    pieces = spec.get("pieces", [])

    def f(pts):
        pts = np.atleast_2d(pts)
        out = np.full(pts.shape[0], default)
        done = np.zeros(pts.shape[0], dtype=bool)
        for piece in pieces:
            coef = np.asarray(piece["halfspace"], dtype=float)
            sel = (pts @ coef[:-1] + coef[-1] < 0) & ~done
            out[sel] = float(piece["value"])
            done |= sel
        return out

    return f


def problem_from_dict(data: dict) -> TransportProblem:
    """Build a problem from the JSON schema documented in the README."""
    try:
        dim = int(data["dim"])
        bounds = tuple(tuple(map(float, b)) for b in data.get("bounds", [[0.0, 1.0]] * dim))
        affine = None
        if "b_components" in data:
            terms = [
                AffineTerm(t.get("theta", "const"), direction=tuple(map(float, t["direction"])))
                for t in data["b_components"]
            ]
            c_spec = data.get("c", 0.0)
            if isinstance(c_spec, list):
                terms += [AffineTerm(t.get("theta", "const"), value=float(t["value"])) for t in c_spec]
                reaction = 0.0
            else:
                reaction = float(c_spec)
                if reaction != 0.0:
                    terms.append(AffineTerm("const", value=reaction))
            box = tuple(tuple(map(float, p)) for p in data["parameter_box"])
            affine = AffineDecomposition(tuple(terms), box)
            advection = ConstantAdvection(affine.advection_vector(affine.midpoint()))
            reaction = affine.reaction_value(affine.midpoint())
        else:
            advection = ConstantAdvection(data["b"])
            reaction = float(data.get("c", 0.0))
        source = _source_from_json(data.get("f", 0.0))
        inflow, breaks = _inflow_from_json(data.get("g", 0.0), dim, bounds)
    except (KeyError, TypeError, ValueError) as exc:
        raise ConfigError(f"malformed problem description: {exc}") from exc
    exact = None
    if affine is None and constant_value(source) is not None:
        exact = traceback_solution(advection.vector, reaction, float(source), as_function(inflow), bounds)
    return TransportProblem(
        name=str(data.get("name", "json-problem")),
        dim=dim,
        advection=advection,
        reaction=reaction,
        source=source,
        inflow=inflow,
        exact=exact,
        bounds=bounds,
        is_spacetime=bool(data.get("spacetime", False)),
        breaks=breaks,
        affine=affine,
    )


def load_problem(spec: str) -> TransportProblem:
    """Catalog name, or path to a ``.json`` problem file."""
    if spec.endswith(".json"):
        try:
            with open(spec, encoding="utf-8") as fh:
                data = json.load(fh)
        except OSError as exc:
            raise ConfigError(f"cannot read problem file {spec}: {exc}") from exc
        except json.JSONDecodeError as exc:
            raise ConfigError(f"invalid JSON in {spec}: {exc}") from exc
        return problem_from_dict(data)
    return catalog(spec)
