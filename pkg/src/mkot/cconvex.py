"""c-convex analysis over finite atom and grid sets.

Transforms are exact discrete suprema, so the double-transform fixpoint
u = (u^{c~})^c holds in exact arithmetic (and bitwise in floats, since max
and rounding are monotone).  The map extraction and Monge-Ampere residual
operate on grids in euclidean charts.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .costs import CostFunction
from .errors import DomainError, EmptyDomainError, NoConvergenceError
from .kantorovich import TransportSolution, pairwise_cost, solve_plan
from .measures import DiscreteMeasure, GridMeasure, chart_dim, sphere_frame


# ---------------------------------------------------------------------------
# potential fields
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class PotentialField:
    """Scalar potential sampled on a finite atom set or a grid."""

    values: tuple
    kind: str                      # "atoms" or "grid"
    chart: str = "euclidean"
    coords: np.ndarray | None = field(default=None, repr=False)
    box: tuple | None = None
    shape: tuple | None = None

    def __post_init__(self):
        vals = np.asarray(self.values, dtype=float).ravel()
        if vals.size == 0:
            raise EmptyDomainError("potential field has no nodes")
        if not np.all(np.isfinite(vals)):
            raise DomainError("potential values must be finite")
        object.__setattr__(self, "values", tuple(vals))
        if self.kind == "grid":
            if self.box is None or self.shape is None:
                raise DomainError("grid field needs box and shape")
            if vals.size != int(np.prod(self.shape)):
                raise DomainError("values length does not match grid shape")
        elif self.kind == "atoms":
            if self.coords is None:
                raise DomainError("atom field needs coordinates")
            c = np.atleast_2d(np.asarray(self.coords, dtype=float))
            object.__setattr__(self, "coords", c)
            if c.shape[0] != vals.size:
                raise DomainError("values/coords length mismatch")
        else:
            raise DomainError(f"unknown field kind {self.kind!r}")

    # constructors ----------------------------------------------------------
    @classmethod
    def on_atoms(cls, coords, values, chart="euclidean") -> "PotentialField":
        return cls(values=tuple(np.asarray(values, dtype=float)),
                   kind="atoms", chart=chart,
                   coords=np.atleast_2d(np.asarray(coords, dtype=float)))

    @classmethod
    def on_grid(cls, box, shape, values, chart="euclidean") -> "PotentialField":
        return cls(values=tuple(np.asarray(values, dtype=float).ravel()),
                   kind="grid", chart=chart,
                   box=tuple(tuple(b) for b in box),
                   shape=tuple(int(s) for s in shape))

    @classmethod
    def from_callable(cls, geom: GridMeasure, fn) -> "PotentialField":
        vals = fn(geom.centers())
        return cls.on_grid(geom.box, geom.shape, vals, chart=geom.chart)

    # geometry ----------------------------------------------------------------
    def nodes(self) -> np.ndarray:
        if self.kind == "atoms":
            return self.coords
        axes = []
        for (lo, hi), s in zip(self.box, self.shape):
            h = (hi - lo) / s
            axes.append(lo + h * (np.arange(s) + 0.5))
        grids = np.meshgrid(*axes, indexing="ij")
        return np.stack([g.ravel() for g in grids], axis=-1)

    @property
    def steps(self) -> np.ndarray:
        return np.array([(hi - lo) / s for (lo, hi), s in zip(self.box, self.shape)])

    def values_array(self) -> np.ndarray:
        v = np.array(self.values)
        return v.reshape(self.shape) if self.kind == "grid" else v

    def gradient(self) -> np.ndarray:
        """Centered-difference gradient on grids (one-sided at the edges),
        shape (*grid_shape, dim)."""
        if self.kind != "grid":
            raise DomainError("gradient needs a grid field")
        u = self.values_array()
        return np.stack(np.gradient(u, *self.steps, edge_order=2), axis=-1) \
            if u.ndim > 1 else np.gradient(u, self.steps[0], edge_order=2)[..., None]

    def to_json_dict(self) -> dict:
        if self.kind != "grid":
            raise DomainError("only grid fields serialize to JSON")
        return {
            "chart": self.chart,
            "box": [list(b) for b in self.box],
            "shape": list(self.shape),
            "values": list(self.values),
        }

    @classmethod
    def from_json_dict(cls, obj) -> "PotentialField":
        return cls.on_grid(obj["box"], obj["shape"], obj["values"], obj["chart"])


def _target_nodes(target, fallback) -> np.ndarray:
    if target is None:
        return fallback
    if isinstance(target, PotentialField):
        return target.nodes()
    if isinstance(target, DiscreteMeasure):
        return target.coords
    if isinstance(target, GridMeasure):
        return target.centers()
    return np.atleast_2d(np.asarray(target, dtype=float))


# ---------------------------------------------------------------------------
# transforms
# ---------------------------------------------------------------------------

def c_transform(values: PotentialField, cost: CostFunction,
                direction: str = "x_to_y", target=None) -> PotentialField:
    """Exact discrete c-transform.

    ``x_to_y`` computes u^{c~}(y) = max_x -c(x,y) - u(x) over the field's
    nodes; ``y_to_x`` computes v^c(x) = max_y -c(x,y) - v(y).  The output
    lives on ``target`` (defaults to the same node set).
    """
    if direction not in ("x_to_y", "y_to_x"):
        raise DomainError(f"bad transform direction {direction!r}")
    src = values.nodes()
    tgt = _target_nodes(target, src)
    if src.shape[0] == 0 or tgt.shape[0] == 0:
        raise EmptyDomainError("transform over an empty node set")
    u = np.array(values.values)
    if direction == "x_to_y":
        C = pairwise_cost(cost, src, tgt)            # c(x_i, y_j)
        out = np.max(-C - u[:, None], axis=0)
    else:
        C = pairwise_cost(cost, tgt, src)            # c(x_t, y_s)
        out = np.max(-C - u[None, :], axis=1)
    if target is None and values.kind == "grid":
        return PotentialField.on_grid(values.box, values.shape, out,
                                      chart=values.chart)
    return PotentialField.on_atoms(tgt, out, chart=values.chart)


def is_c_convex(values: PotentialField, cost: CostFunction,
                tol: float = 1e-12, target=None) -> bool:
    """True iff u equals its double transform on the field's own nodes.

    The default tolerance allows one rounding of the discrete suprema; the
    fixpoint is exact in exact arithmetic.
    """
    back = c_transform(c_transform(values, cost, "x_to_y", target=target),
                       cost, "y_to_x", target=values.nodes())
    gap = np.max(np.abs(np.array(values.values) - np.array(back.values)))
    return bool(gap <= tol)


# ---------------------------------------------------------------------------
# c-exponential: solve D_x c(x, y) + p = 0 for y
# ---------------------------------------------------------------------------

def _retract(chart, Y, dY):
    if chart == "sphere_embedded":
        frames = sphere_frame(Y)
        amb = Y + np.einsum("bmi,bi->bm", frames, dY)
        return amb / np.linalg.norm(amb, axis=-1, keepdims=True)
    out = Y + dY
    if chart == "poincare_disk":
        r = np.linalg.norm(out, axis=-1, keepdims=True)
        out = np.where(r >= 0.999999, out / r * 0.999999, out)
    return out


def c_exponential(cost: CostFunction, x, p, tol: float = 1e-10,
                  max_iter: int = 60):
    """The map Y(x, p): damped Newton on y -> D_x c(x, y) + p.

    ``x`` is a Point or coordinate row, ``p`` a covector in the chart
    coordinates at x.  Closed forms are used for the bilinear and quadratic
    kinds; other costs iterate from y = x.
    """
    X = np.atleast_2d(getattr(x, "array", x)).astype(float)
    p = np.atleast_2d(np.asarray(p, dtype=float))
    if cost.kind == "bilinear":
        return p[0] if p.shape[0] == 1 else p
    if cost.kind == "quadratic":
        out = X + p
        return out[0] if out.shape[0] == 1 else out

    out = np.empty_like(X if cost.chart != "sphere_embedded"
                        else np.zeros((p.shape[0], X.shape[1])))
    Xrep = np.broadcast_to(X, (p.shape[0], X.shape[1])).copy() \
        if X.shape[0] == 1 else X
    for row in range(p.shape[0]):
        out[row] = _newton_cexp(cost, Xrep[row], p[row], tol, max_iter)
    return out[0] if p.shape[0] == 1 else out


def _newton_cexp(cost, x, p, tol, max_iter):
    X = x[None, :]
    Y = X.copy()
    res = cost.grad_x(X, Y)[0] + p
    rn = np.linalg.norm(res)
    for _ in range(max_iter):
        if rn <= tol:
            return Y[0]
        M = cost.hess_xy(X, Y)[0]
        try:
            dy = np.linalg.solve(M, -res)
        except np.linalg.LinAlgError:
            raise NoConvergenceError("singular mixed Hessian in c-exponential",
                                     residual=float(rn))
        step = 1.0
        for _ in range(40):
            Ytry = _retract(cost.chart, Y, step * dy[None, :])
            try:
                res_try = cost.grad_x(X, Ytry)[0] + p
            except DomainError:
                step *= 0.5
                continue
            rn_try = np.linalg.norm(res_try)
            if rn_try < rn:
                Y, res, rn = Ytry, res_try, rn_try
                break
            step *= 0.5
        else:
            raise NoConvergenceError(
                "c-exponential stalled (outside range or near cut locus)",
                residual=float(rn))
    if rn <= tol:
        return Y[0]
    raise NoConvergenceError("c-exponential did not reach tolerance",
                             residual=float(rn))


# ---------------------------------------------------------------------------
# map extraction
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class MapTable:
    """Monge map read off a plan: one target per source row."""

    source_index: tuple
    target_index: tuple
    split_rows: tuple          # rows where secondary mass exceeded tolerance
    split_tol: float

    def as_dict(self) -> dict:
        return dict(zip(self.source_index, self.target_index))


def extract_map(solution: TransportSolution, cost: CostFunction = None,
                split_tol: float = 1e-6) -> MapTable:
    rows: dict[int, list] = {}
    for i, j, w in solution.plan:
        rows.setdefault(i, []).append((j, w))
    src, tgt, split = [], [], []
    for i in sorted(rows):
        entries = sorted(rows[i], key=lambda t: -t[1])
        total = sum(w for _, w in entries)
        src.append(i)
        tgt.append(entries[0][0])
        if len(entries) > 1 and entries[1][1] > split_tol * total:
            split.append(i)
    return MapTable(source_index=tuple(src), target_index=tuple(tgt),
                    split_rows=tuple(split), split_tol=split_tol)


# ---------------------------------------------------------------------------
# Monge-Ampere residual on grids
# ---------------------------------------------------------------------------

def grid_interpolate(gm: GridMeasure, points: np.ndarray):
    """Multilinear interpolation of cell-center densities at query points.

    Returns (values, inside_mask); queries outside the cell-center hull are
    flagged and evaluated by clamping (callers mask them out).
    """
    pts = np.atleast_2d(np.asarray(points, dtype=float))
    dens = gm.density_array()
    axes = gm.axes()
    d = gm.dim
    idx0 = []
    frac = []
    inside = np.ones(pts.shape[0], dtype=bool)
    for ax in range(d):
        a = axes[ax]
        t = (pts[:, ax] - a[0]) / (a[1] - a[0]) if a.size > 1 else np.zeros(pts.shape[0])
        inside &= (t >= -1e-12) & (t <= a.size - 1 + 1e-12)
        t = np.clip(t, 0.0, a.size - 1)
        i0 = np.minimum(t.astype(int), a.size - 2) if a.size > 1 else np.zeros(pts.shape[0], int)
        idx0.append(i0)
        frac.append(t - i0)
    vals = np.zeros(pts.shape[0])
    for corner in range(1 << d):
        w = np.ones(pts.shape[0])
        ix = []
        for ax in range(d):
            if corner >> ax & 1:
                w = w * frac[ax]
                ix.append(np.minimum(idx0[ax] + 1, dens.shape[ax] - 1))
            else:
                w = w * (1.0 - frac[ax])
                ix.append(idx0[ax])
        vals += w * dens[tuple(ix)]
    return vals, inside


def _hessian_9pt(u: np.ndarray, h: np.ndarray) -> np.ndarray:
    """Interior Hessian by centered differences (cross terms by the 4-corner
    stencil); boundary entries are left as NaN."""
    if u.ndim == 1:
        H = np.full(u.shape + (1, 1), np.nan)
        H[1:-1, 0, 0] = (u[2:] - 2 * u[1:-1] + u[:-2]) / h[0] ** 2
        return H
    H = np.full(u.shape + (2, 2), np.nan)
    H[1:-1, :, 0, 0] = (u[2:, :] - 2 * u[1:-1, :] + u[:-2, :]) / h[0] ** 2
    H[:, 1:-1, 1, 1] = (u[:, 2:] - 2 * u[:, 1:-1] + u[:, :-2]) / h[1] ** 2
    cross = (u[2:, 2:] + u[:-2, :-2] - u[2:, :-2] - u[:-2, 2:]) / (4 * h[0] * h[1])
    H[1:-1, 1:-1, 0, 1] = cross
    H[1:-1, 1:-1, 1, 0] = cross
    return H


@dataclass(frozen=True)
class ResidualField:
    box: tuple
    shape: tuple
    values: np.ndarray = field(repr=False)   # NaN where masked
    mask: np.ndarray = field(repr=False)     # True where the residual counts
    median_abs: float = 0.0
    max_abs: float = 0.0
    masked_fraction: float = 0.0

    def to_grid_json_dict(self) -> dict:
        vals = np.where(self.mask, self.values, 0.0)
        return {"box": [list(b) for b in self.box], "shape": list(self.shape),
                "chart": "euclidean", "values": [float(v) for v in vals.ravel()]}


def monge_ampere_residual(u: PotentialField, cost: CostFunction,
                          f_plus: GridMeasure, f_minus: GridMeasure
                          ) -> ResidualField:
    """Pointwise defect of the transport equation for the potential u.

    r(x) = det(D^2 u + D^2_xx c(x, Y)) f^-(Y) / |det D^2_xy c| - f^+(x)
    with Y = Y(x, Du(x)); reduces to det(D^2 u) f^-(Du) - f^+ for the
    bilinear cost.  Cells in the one-node boundary layer, and cells whose
    image leaves the target grid, are masked.
    """
    if u.kind != "grid":
        raise DomainError("residual needs a grid potential")
    if u.chart != "euclidean" or f_plus.chart != "euclidean":
        raise DomainError("residual evaluation is supported on euclidean grids")
    if tuple(u.shape) != tuple(f_plus.shape) or \
            any(abs(a - b) > 1e-12 for (a, _), (b, _) in zip(u.box, f_plus.box)):
        raise DomainError("potential and source grids must coincide")
    h = u.steps
    uv = u.values_array()
    d = uv.ndim
    nodes = u.nodes()
    grad = u.gradient().reshape(-1, d)
    H = _hessian_9pt(uv, h).reshape(-1, d, d)

    Y = c_exponential(cost, nodes, grad)
    Y = np.atleast_2d(Y)
    fm, inside = grid_interpolate(f_minus, Y)
    Hxx = cost.hess_xx(nodes, Y)
    M = cost.hess_xy(nodes, Y)
    detM = np.abs(np.linalg.det(M))
    interior = np.all(np.isfinite(H.reshape(-1, d * d)), axis=1)
    mask = interior & inside & (detM > 1e-14)

    dets = np.full(nodes.shape[0], np.nan)
    ok = mask
    dets[ok] = np.linalg.det(H[ok] + Hxx[ok])
    fplus_vals = np.asarray(f_plus.density, dtype=float)
    r = np.full(nodes.shape[0], np.nan)
    r[ok] = dets[ok] * fm[ok] / detM[ok] - fplus_vals[ok]

    vals = r.reshape(u.shape)
    m = mask.reshape(u.shape)
    good = vals[m]
    return ResidualField(
        box=u.box, shape=u.shape, values=vals, mask=m,
        median_abs=float(np.median(np.abs(good))) if good.size else math.nan,
        max_abs=float(np.max(np.abs(good))) if good.size else math.nan,
        masked_fraction=float(1.0 - m.mean()))


# ---------------------------------------------------------------------------
# isoperimetric demonstration
# ---------------------------------------------------------------------------

def _aggregate_atoms(gm: GridMeasure, cap: int):
    """Block-average a grid measure to at most ``cap`` atoms (centroids)."""
    masses = gm.cell_masses().reshape(gm.shape)
    centers = gm.centers().reshape(gm.shape + (gm.dim,))
    pos = int((masses > 0).sum())
    k = max(1, int(math.ceil(math.sqrt(pos / cap))))
    while _count_blocks(masses, k) > cap:
        k += 1
    s0, s1 = masses.shape
    coords, wts = [], []
    for b0 in range(0, s0, k):
        for b1 in range(0, s1, k):
            blk = masses[b0:b0 + k, b1:b1 + k]
            w = blk.sum()
            if w <= 0:
                continue
            ctr = centers[b0:b0 + k, b1:b1 + k].reshape(-1, 2)
            coords.append((ctr * blk.reshape(-1, 1)).sum(axis=0) / w)
            wts.append(w)
    coords = np.array(coords)
    wts = np.array(wts)
    return coords, wts / wts.sum()


def _count_blocks(masses, k):
    s0, s1 = masses.shape
    cnt = 0
    for b0 in range(0, s0, k):
        for b1 in range(0, s1, k):
            if masses[b0:b0 + k, b1:b1 + k].sum() > 0:
                cnt += 1
    return cnt


@dataclass(frozen=True)
class IsoperimetricReport:
    lhs: float                 # n * Vol(M+), equals 2*pi after rescaling
    transport_bound: float     # discrete flux of the Brenier map across dM+
    staircase_perimeter: float
    ratio: float               # transport_bound / (2*pi)
    rescale: float


def isoperimetric_check(shape: GridMeasure, lp_atom_cap: int = 1200,
                        disk_resolution: int | None = None
                        ) -> IsoperimetricReport:
    """Transport the shape onto the unit disk and integrate the map's flux
    through the shape boundary, producing the two-sided perimeter bound."""
    if shape.dim != 2 or shape.chart != "euclidean":
        raise DomainError("isoperimetric check expects a planar euclidean grid")
    masses = shape.cell_masses().reshape(shape.shape)
    cellvol = float(np.prod(shape.steps))
    area = float((masses > 0).sum() * cellvol)
    lam = math.sqrt(math.pi / area)
    if abs(area - math.pi) > 0.01 * math.pi:
        box = tuple((lo * lam, hi * lam) for lo, hi in shape.box)
        shape = GridMeasure.from_density(box, shape.shape,
                                         np.array(shape.density), chart="euclidean")
        masses = shape.cell_masses().reshape(shape.shape)
        cellvol = float(np.prod(shape.steps))
        area = float((masses > 0).sum() * cellvol)

    res = disk_resolution or max(shape.shape)
    pad = 1.0 + 2.0 / res
    ax = np.linspace(-pad + pad / res, pad - pad / res, res)
    gx, gy = np.meshgrid(ax, ax, indexing="ij")
    disk_dens = ((gx ** 2 + gy ** 2) <= 1.0).astype(float)
    disk = GridMeasure.from_density(((-pad, pad), (-pad, pad)), (res, res),
                                    disk_dens)

    from .costs import make_cost
    quad = make_cost("quadratic")
    src_pts, src_w = _aggregate_atoms(shape, lp_atom_cap)
    tgt_pts, tgt_w = _aggregate_atoms(disk, lp_atom_cap)
    sol = solve_plan(DiscreteMeasure.from_arrays(src_pts, src_w),
                     DiscreteMeasure.from_arrays(tgt_pts, tgt_w), quad)
    v = np.array(sol.dual_v)

    # relabel every fine cell by the semi-discrete rule with the LP prices
    centers = shape.centers()
    pos = masses.ravel() > 0
    fine = centers[pos]
    lab = np.empty(fine.shape[0], dtype=int)
    blk = max(1, (1 << 22) // max(tgt_pts.shape[0], 1))
    for s in range(0, fine.shape[0], blk):
        e = min(fine.shape[0], s + blk)
        d2 = ((fine[s:e, None, :] - tgt_pts[None, :, :]) ** 2).sum(-1)
        lab[s:e] = np.argmin(0.5 * d2 + v[None, :], axis=1)
    G = np.zeros((centers.shape[0], 2))
    G[pos] = tgt_pts[lab]

    inside = pos.reshape(shape.shape)
    h = shape.steps
    Gx = G[:, 0].reshape(shape.shape)
    Gy = G[:, 1].reshape(shape.shape)
    flux = 0.0
    stair = 0.0
    for axis, hperp in ((0, h[1]), (1, h[0])):
        for sgn in (+1, -1):
            shifted = np.zeros_like(inside)
            if axis == 0 and sgn > 0:
                shifted[:-1, :] = inside[1:, :]
            elif axis == 0:
                shifted[1:, :] = inside[:-1, :]
            elif sgn > 0:
                shifted[:, :-1] = inside[:, 1:]
            else:
                shifted[:, 1:] = inside[:, :-1]
            edges = inside & ~shifted
            stair += int(edges.sum()) * hperp
            gn = Gx if axis == 0 else Gy
            flux += sgn * float(gn[edges].sum()) * hperp
    return IsoperimetricReport(
        lhs=2.0 * area, transport_bound=flux, staircase_perimeter=stair,
        ratio=flux / (2.0 * math.pi), rescale=lam)
