"""Domain geometry and probability measures.

Three charts are supported:

* ``euclidean``: coordinates are points of R^n, n in {1,2,3}.
* ``sphere_embedded``: coordinates are unit vectors of R^m (the sphere
  S^{m-1}); tangent data is expressed in a deterministic orthonormal
  frame attached to each base point.
* ``poincare_disk``: coordinates are points of the open unit ball with
  the hyperbolic metric 4|dx|^2/(1-|x|^2)^2.

Measures come in two flavours: weighted atom clouds (``DiscreteMeasure``)
and cell densities on axis-aligned boxes (``GridMeasure``).  Both are
immutable after construction and validate their invariants eagerly.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field

import numpy as np

from .errors import DomainError

CHARTS = ("euclidean", "sphere_embedded", "poincare_disk")

_UNIT_NORM_TOL = 1e-12
_WEIGHT_TOL = 1e-12
_GRID_MASS_TOL = 1e-9


# ---------------------------------------------------------------------------
# chart geometry helpers (array-first; Points wrap single rows)
# ---------------------------------------------------------------------------

def chart_dim(chart: str, ambient_dim: int) -> int:
    """Intrinsic dimension of the chart given the coordinate length."""
    if chart == "sphere_embedded":
        return ambient_dim - 1
    return ambient_dim


def check_chart(chart: str, coords: np.ndarray) -> None:
    """Raise DomainError unless every row satisfies the chart constraint."""
    if chart not in CHARTS:
        raise DomainError(f"unknown chart {chart!r}")
    c = np.atleast_2d(coords)
    if chart == "sphere_embedded":
        if c.shape[-1] < 2:
            raise DomainError("sphere_embedded needs ambient dimension >= 2")
        err = np.abs(np.linalg.norm(c, axis=-1) - 1.0)
        if np.any(err > _UNIT_NORM_TOL):
            raise DomainError(
                f"sphere point off the unit sphere by {err.max():.3e}")
    elif chart == "poincare_disk":
        r = np.linalg.norm(c, axis=-1)
        if np.any(r >= 1.0):
            raise DomainError("poincare_disk point has |x| >= 1")


def chart_distance(chart: str, x: np.ndarray, y: np.ndarray) -> np.ndarray:
    """Geodesic distance between coordinate arrays (broadcasting)."""
    x = np.asarray(x, dtype=float)
    y = np.asarray(y, dtype=float)
    if chart == "euclidean":
        return np.linalg.norm(x - y, axis=-1)
    if chart == "sphere_embedded":
        dots = np.sum(x * y, axis=-1)
        crosses = np.linalg.norm(np.cross(x, y), axis=-1) if x.shape[-1] == 3 \
            else np.abs(x[..., 0] * y[..., 1] - x[..., 1] * y[..., 0])
        return np.arctan2(crosses, dots)
    if chart == "poincare_disk":
        a = np.sum((x - y) ** 2, axis=-1)
        bx = 1.0 - np.sum(x * x, axis=-1)
        by = 1.0 - np.sum(y * y, axis=-1)
        return np.arccosh(1.0 + 2.0 * a / (bx * by))
    raise DomainError(f"unknown chart {chart!r}")


def volume_element(chart: str, coords: np.ndarray) -> np.ndarray:
    """Riemannian volume density relative to the chart's Lebesgue measure.

    For the Poincare disk in dimension d this is (2/(1-|x|^2))^d, the usual
    4/(1-|x|^2)^2 in the plane.  ``sphere_embedded`` grids live in the
    exponential chart at the north pole, where the density in dimension 2
    is sin(r)/r.
    """
    c = np.asarray(coords, dtype=float)
    if chart == "euclidean":
        return np.ones(c.shape[:-1])
    if chart == "poincare_disk":
        d = c.shape[-1]
        return (2.0 / (1.0 - np.sum(c * c, axis=-1))) ** d
    if chart == "sphere_embedded":
        # tangent-chart convention: coords are normal coordinates at the pole
        r = np.linalg.norm(c, axis=-1)
        out = np.ones_like(r)
        mask = r > 1e-12
        out[mask] = np.sin(r[mask]) / r[mask]
        return out
    raise DomainError(f"unknown chart {chart!r}")


def sphere_frame(x: np.ndarray) -> np.ndarray:
    """Deterministic orthonormal tangent frame at unit vectors ``x``.

    Returns an array of shape (..., m, m-1) whose columns span the tangent
    plane.  The frame is a fixed function of the point (Gram-Schmidt against
    the least-aligned coordinate axis), so repeated evaluations agree.
    """
    x = np.atleast_2d(np.asarray(x, dtype=float))
    b, m = x.shape
    frames = np.zeros((b, m, m - 1))
    axis = np.argmin(np.abs(x), axis=1)
    e1 = -x * x[np.arange(b), axis][:, None]
    e1[np.arange(b), axis] += 1.0
    e1 /= np.linalg.norm(e1, axis=1, keepdims=True)
    frames[:, :, 0] = e1
    if m == 3:
        frames[:, :, 1] = np.cross(x, e1)
    elif m > 3:  # pragma: no cover - charts cap at S^2
        raise DomainError("sphere_embedded supports ambient dimension <= 3")
    return frames


def sphere_exp(base: np.ndarray, xi: np.ndarray) -> np.ndarray:
    """Riemannian exponential on the unit sphere, tangent given in R^m."""
    r = np.linalg.norm(xi, axis=-1, keepdims=True)
    small = r < 1e-14
    rsafe = np.where(small, 1.0, r)
    out = np.cos(r) * base + np.sin(r) * (xi / rsafe)
    out = np.where(small, base, out)
    return out / np.linalg.norm(out, axis=-1, keepdims=True)


def sphere_log(base: np.ndarray, y: np.ndarray) -> np.ndarray:
    """Inverse of ``sphere_exp``; tangent vector in R^m, undefined at -base."""
    dots = np.clip(np.sum(base * y, axis=-1, keepdims=True), -1.0, 1.0)
    theta = np.arccos(dots)
    perp = y - dots * base
    nrm = np.linalg.norm(perp, axis=-1, keepdims=True)
    safe = np.where(nrm < 1e-14, 1.0, nrm)
    return np.where(nrm < 1e-14, 0.0, theta * perp / safe)


# ---------------------------------------------------------------------------
# points and measures
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class Point:
    """A chart-tagged coordinate vector (immutable)."""

    coords: tuple
    chart: str = "euclidean"

    def __post_init__(self):
        coords = tuple(float(v) for v in np.atleast_1d(np.asarray(self.coords, dtype=float)))
        object.__setattr__(self, "coords", coords)
        arr = np.array(coords)
        if self.chart == "sphere_embedded":
            if not (2 <= arr.size <= 3):
                raise DomainError("sphere_embedded points live in R^2 or R^3")
        elif arr.size not in (1, 2, 3):
            raise DomainError("supported dimensions are 1, 2, 3")
        check_chart(self.chart, arr)

    @property
    def array(self) -> np.ndarray:
        return np.array(self.coords, dtype=float)

    @property
    def dim(self) -> int:
        """Intrinsic (chart) dimension."""
        return chart_dim(self.chart, len(self.coords))


def _as_point_array(atoms) -> tuple[np.ndarray, str]:
    """Stack atoms into (B, m), checking they share a single chart."""
    if len(atoms) == 0:
        raise DomainError("measure needs at least one atom")
    charts = {a.chart for a in atoms}
    if len(charts) != 1:
        raise DomainError(f"atoms mix charts {sorted(charts)}")
    dims = {len(a.coords) for a in atoms}
    if len(dims) != 1:
        raise DomainError("atoms mix coordinate dimensions")
    return np.array([a.coords for a in atoms], dtype=float), charts.pop()


@dataclass(frozen=True)
class DiscreteMeasure:
    """Weighted atom cloud; weights nonnegative and summing to one."""

    atoms: tuple
    weights: tuple

    def __post_init__(self):
        atoms = tuple(self.atoms)
        weights = tuple(float(w) for w in self.weights)
        object.__setattr__(self, "atoms", atoms)
        object.__setattr__(self, "weights", weights)
        coords, _ = _as_point_array(atoms)
        w = np.array(weights)
        if len(atoms) != w.size:
            raise DomainError("atom/weight length mismatch")
        if np.any(w < 0):
            raise DomainError("weights must be nonnegative")
        if abs(w.sum() - 1.0) > _WEIGHT_TOL:
            raise DomainError(f"weights sum to {w.sum()!r}, not 1")
        if len(atoms) > 1:
            d2 = np.sum((coords[:, None, :] - coords[None, :, :]) ** 2, axis=-1)
            np.fill_diagonal(d2, np.inf)
            if d2.min() < _UNIT_NORM_TOL ** 2:
                raise DomainError("atoms are not pairwise distinct")

    @classmethod
    def from_arrays(cls, coords, weights, chart="euclidean") -> "DiscreteMeasure":
        coords = np.atleast_2d(np.asarray(coords, dtype=float))
        pts = tuple(Point(tuple(row), chart) for row in coords)
        return cls(pts, tuple(np.asarray(weights, dtype=float)))

    @property
    def chart(self) -> str:
        return self.atoms[0].chart

    @property
    def coords(self) -> np.ndarray:
        return np.array([a.coords for a in self.atoms], dtype=float)

    @property
    def weight_array(self) -> np.ndarray:
        return np.array(self.weights, dtype=float)

    def __len__(self) -> int:
        return len(self.atoms)

    def to_json_dict(self) -> dict:
        return {
            "chart": self.chart,
            "atoms": [list(a.coords) for a in self.atoms],
            "weights": list(self.weights),
        }

    @classmethod
    def from_json_dict(cls, obj: dict) -> "DiscreteMeasure":
        return cls.from_arrays(obj["atoms"], obj["weights"], chart=obj["chart"])


@dataclass(frozen=True)
class GridMeasure:
    """Cell densities on an axis-aligned box; masses sum to one.

    ``density`` holds per-cell values on the tensor grid of cell centers,
    row-major with the last axis fastest.  Cell mass is density times cell
    volume times the chart's volume element at the cell center.
    """

    box: tuple           # ((lo, hi), ...) per axis
    shape: tuple         # cells per axis
    density: tuple       # flattened nonnegative cell values, row-major
    chart: str = "euclidean"

    def __post_init__(self):
        box = tuple((float(lo), float(hi)) for lo, hi in self.box)
        shape = tuple(int(s) for s in self.shape)
        dens = np.asarray(self.density, dtype=float).ravel()
        object.__setattr__(self, "box", box)
        object.__setattr__(self, "shape", shape)
        object.__setattr__(self, "density", tuple(dens))
        if len(box) != len(shape):
            raise DomainError("box/shape rank mismatch")
        if any(hi <= lo for lo, hi in box):
            raise DomainError("box axes must have hi > lo")
        if any(s < 1 for s in shape):
            raise DomainError("resolution must be >= 1 per axis")
        if dens.size != int(np.prod(shape)):
            raise DomainError("density length does not match shape")
        if np.any(dens < 0):
            raise DomainError("density must be nonnegative")
        total = self.cell_masses().sum()
        if abs(total - 1.0) > _GRID_MASS_TOL:
            raise DomainError(f"grid mass {total!r} is not 1")

    # geometry -------------------------------------------------------------
    @property
    def dim(self) -> int:
        return len(self.shape)

    @property
    def steps(self) -> np.ndarray:
        return np.array([(hi - lo) / s for (lo, hi), s in zip(self.box, self.shape)])

    def axes(self) -> list[np.ndarray]:
        """Cell-center coordinates per axis."""
        out = []
        for (lo, hi), s in zip(self.box, self.shape):
            h = (hi - lo) / s
            out.append(lo + h * (np.arange(s) + 0.5))
        return out

    def centers(self) -> np.ndarray:
        """All cell centers, shape (prod(shape), dim), row-major order."""
        grids = np.meshgrid(*self.axes(), indexing="ij")
        return np.stack([g.ravel() for g in grids], axis=-1)

    def density_array(self) -> np.ndarray:
        return np.array(self.density, dtype=float).reshape(self.shape)

    def cell_masses(self) -> np.ndarray:
        dens = np.asarray(self.density, dtype=float)
        vol = float(np.prod(self.steps))
        elem = volume_element(self.chart, self.centers())
        return dens * vol * elem

    # construction helpers ---------------------------------------------------
    @classmethod
    def from_density(cls, box, shape, density, chart="euclidean") -> "GridMeasure":
        """Build a normalized grid measure from raw nonnegative cell values."""
        box = tuple((float(lo), float(hi)) for lo, hi in box)
        shape = tuple(int(s) for s in shape)
        dens = np.asarray(density, dtype=float).ravel().copy()
        if np.any(dens < 0):
            raise DomainError("density must be nonnegative")
        h = np.array([(hi - lo) / s for (lo, hi), s in zip(box, shape)])
        vol = float(np.prod(h))
        axes = [lo + hh * (np.arange(s) + 0.5) for (lo, _), hh, s in zip(box, h, shape)]
        grids = np.meshgrid(*axes, indexing="ij")
        centers = np.stack([g.ravel() for g in grids], axis=-1)
        total = float(np.sum(dens * vol * volume_element(chart, centers)))
        if total <= 0:
            raise DomainError("grid measure has zero total mass")
        return cls(box, shape, tuple(dens / total), chart)

    @classmethod
    def uniform(cls, box, shape, chart="euclidean") -> "GridMeasure":
        n = int(np.prod([int(s) for s in shape]))
        return cls.from_density(box, shape, np.ones(n), chart=chart)

    def refined(self, factor: int = 2) -> "GridMeasure":
        """Same measure at ``factor`` times the resolution (cellwise copy)."""
        dens = self.density_array()
        for ax in range(self.dim):
            dens = np.repeat(dens, factor, axis=ax)
        new_shape = tuple(s * factor for s in self.shape)
        return GridMeasure.from_density(self.box, new_shape, dens, chart=self.chart)

    def to_discrete(self, mass_floor: float = 0.0) -> DiscreteMeasure:
        """Atomize cells at their centers (cells with tiny mass dropped)."""
        masses = self.cell_masses()
        keep = masses > mass_floor
        coords = self.centers()[keep]
        w = masses[keep]
        return DiscreteMeasure.from_arrays(coords, w / w.sum(), chart=self.chart)

    # serialization ---------------------------------------------------------
    def to_json_dict(self) -> dict:
        return {
            "chart": self.chart,
            "box": [list(b) for b in self.box],
            "shape": list(self.shape),
            "density": list(self.density),
        }

    @classmethod
    def from_json_dict(cls, obj: dict) -> "GridMeasure":
        return cls(tuple(tuple(b) for b in obj["box"]), tuple(obj["shape"]),
                   tuple(obj["density"]), obj["chart"])


# ---------------------------------------------------------------------------
# JSON file helpers
# ---------------------------------------------------------------------------

def save_json(obj: dict, path) -> None:
    """Deterministic JSON emission (sorted keys, fixed separators)."""
    with open(path, "w") as fh:
        json.dump(obj, fh, sort_keys=True, separators=(",", ": "), indent=1)
        fh.write("\n")


def load_measure(path) -> DiscreteMeasure | GridMeasure:
    with open(path) as fh:
        obj = json.load(fh)
    if "atoms" in obj:
        return DiscreteMeasure.from_json_dict(obj)
    if "density" in obj:
        return GridMeasure.from_json_dict(obj)
    raise DomainError(f"{path}: not a measure JSON file")
