"""Tensor-product box grids, inflow/outflow classification, outflow extension."""

from dataclasses import dataclass, field, replace
from itertools import product

import numpy as np

from .exceptions import ConfigError, MixedSignFace

LOWER, UPPER = 0, 1
INFLOW, OUTFLOW, CHARACTERISTIC = "inflow", "outflow", "characteristic"


@dataclass(frozen=True)
class TensorGrid:
    """Uniform axis-aligned grid on a box.

    ``n_cells`` and ``bounds`` describe the computational box (including any
    outflow layers). ``core_lower`` counts the layers added below the original
    box per dimension and ``core_n_cells`` the original cell counts, so the
    original box is recovered by :meth:`core_bounds`.

    Examples
    --------
    >>> g = TensorGrid((4,))
    >>> g.h
    (0.25,)
    """

    n_cells: tuple
    bounds: tuple = None
    extension: int = 0
    core_lower: tuple = None
    core_n_cells: tuple = None

    def __post_init__(self):
        n = tuple(int(k) for k in np.atleast_1d(self.n_cells))
        if not n or min(n) < 1:
            raise ConfigError(f"cell counts must be positive, got {self.n_cells}")
        object.__setattr__(self, "n_cells", n)
        bounds = self.bounds
        if bounds is None:
            bounds = ((0.0, 1.0),) * len(n)
        bounds = tuple((float(a), float(b)) for a, b in bounds)
        if len(bounds) != len(n):
            raise ConfigError("bounds and n_cells differ in length")
        if any(b <= a for a, b in bounds):
            raise ConfigError(f"degenerate box {bounds}")
        object.__setattr__(self, "bounds", bounds)
        if self.core_lower is None:
            object.__setattr__(self, "core_lower", (0,) * len(n))
        if self.core_n_cells is None:
            object.__setattr__(self, "core_n_cells", n)

    @property
    def dim(self):
        return len(self.n_cells)

    @property
    def h(self):
        return tuple((b - a) / k for (a, b), k in zip(self.bounds, self.n_cells))

    @property
    def n_total_cells(self):
        return int(np.prod(self.n_cells))

    def breakpoints(self, d):
        a, b = self.bounds[d]
        return np.linspace(a, b, self.n_cells[d] + 1)

    def core_bounds(self):
        out = []
        for d, (a, _) in enumerate(self.bounds):
            lo = a + self.core_lower[d] * self.h[d]
            out.append((lo, lo + self.core_n_cells[d] * self.h[d]))
        return tuple(out)

    def core_cell_slices(self):
        return tuple(
            slice(lo, lo + k) for lo, k in zip(self.core_lower, self.core_n_cells)
        )

    def core(self):
        """The unextended grid."""
        return TensorGrid(self.core_n_cells, self.core_bounds())

    def cell_midpoints(self, d):
        e = self.breakpoints(d)
        return 0.5 * (e[:-1] + e[1:])


@dataclass(frozen=True)
class FaceClassification:
    """Label and sampled b.n range for each box side ``(dim, LOWER|UPPER)``."""

    labels: dict
    flux_min: dict = field(default_factory=dict)
    flux_max: dict = field(default_factory=dict)

    def sides(self, label):
        return sorted(k for k, v in self.labels.items() if v == label)

    @property
    def inflow(self):
        return self.sides(INFLOW)

    @property
    def outflow(self):
        return self.sides(OUTFLOW)

    @property
    def characteristic(self):
        return self.sides(CHARACTERISTIC)

    def constrained_end(self, d):
        """Which end of the 1D test space along ``d`` must vanish."""
        lo = self.labels[(d, LOWER)] == OUTFLOW
        hi = self.labels[(d, UPPER)] == OUTFLOW
        if lo and hi:
            return "both"
        return "left" if lo else "right" if hi else "none"


def face_sample_points(grid, d, side, n_samples):
    """Closed tensor lattice of ``n_samples`` points per tangential dimension."""
    axes = []
    for k, (a, b) in enumerate(grid.bounds):
        if k == d:
            axes.append(np.array([a if side == LOWER else b]))
        else:
            axes.append(np.linspace(a, b, n_samples))
    mesh = np.meshgrid(*axes, indexing="ij")
    return np.stack([m.ravel() for m in mesh], axis=1)


def classify_faces(grid: TensorGrid, advection, n_samples=9) -> FaceClassification:
    """Label every box side as inflow, outflow or characteristic.

    ``advection`` is any object with ``__call__(points) -> (k, dim)`` values.
    """
    if n_samples < 2:
        raise ConfigError("need at least 2 samples per face dimension")
    fluxes = {}
    for d, side in product(range(grid.dim), (LOWER, UPPER)):
        pts = face_sample_points(grid, d, side, n_samples)
        normal_sign = -1.0 if side == LOWER else 1.0
        fluxes[(d, side)] = normal_sign * np.asarray(advection(pts))[:, d]
    scale = max(np.max(np.abs(v)) for v in fluxes.values())
    tol = 1e-12 * max(scale, np.finfo(float).tiny)
    labels, fmin, fmax = {}, {}, {}
    for key, v in fluxes.items():
        lo, hi = float(v.min()), float(v.max())
        fmin[key], fmax[key] = lo, hi
        if hi <= tol and lo < -tol:
            labels[key] = INFLOW
        elif lo >= -tol and hi > tol:
            labels[key] = OUTFLOW
        elif hi <= tol and lo >= -tol:
            labels[key] = CHARACTERISTIC
        else:
            raise MixedSignFace(
                f"b.n changes sign on side {key}: sampled range [{lo:.3g}, {hi:.3g}]"
            )
    return FaceClassification(labels, fmin, fmax)


def extend_grid(grid: TensorGrid, m: int, faces: FaceClassification) -> TensorGrid:
    """Add ``m`` cell layers beyond every outflow side."""
    if m < 0:
        raise ConfigError(f"extension must be non-negative, got {m}")
    if m == 0:
        return grid
    n = list(grid.n_cells)
    bounds = [list(b) for b in grid.bounds]
    lower = list(grid.core_lower)
    for d, side in faces.outflow:
        n[d] += m
        if side == LOWER:
            bounds[d][0] -= m * grid.h[d]
            lower[d] += m
        else:
            bounds[d][1] += m * grid.h[d]
    return replace(
        grid,
        n_cells=tuple(n),
        bounds=tuple(tuple(b) for b in bounds),
        extension=grid.extension + m,
        core_lower=tuple(lower),
    )
