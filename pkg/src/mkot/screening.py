"""Principal-agent screening with bilinear benefit on a grid of agent types.

The monopolist's net losses for a menu with indirect utility u are

    L(u) = integral of  a(Du) - <x, Du> + u  over the agent measure,

minimized over u >= u_null with u discretely convex.  For the standard
instance (quadratic manufacturing cost, uniform types on the unit square,
null product at the origin) this is the Dirichlet-energy screening problem;
its minimizer exhibits an excluded region, a bunched band mapped to a
one-dimensional product set, and a fully screened remainder.

Discretization: cell-centered grid, forward-difference gradients co-located
on the trimmed grid, convexity as nonnegative second differences along the
axes and both diagonals (an outer relaxation of convexity), projections by
Dykstra sweeps over node-disjoint constraint batches.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field, replace

import numpy as np
from numba import njit

from .cconvex import PotentialField
from .errors import DomainError, NoConvergenceError

_DIRECTIONS_2D = ((1, 0), (0, 1), (1, 1), (1, -1))
_DIRECTIONS_1D = ((1,),)


def quadratic_cost(Y):
    return 0.5 * np.sum(Y * Y, axis=-1)


def quadratic_cost_grad(Y):
    return Y.copy()


@dataclass(frozen=True)
class ScreeningProblem:
    """Data for the screening solve: agent box, manufacturing cost, outside
    option.  The benefit is bilinear, b(x, y) = <x, y>."""

    box: tuple = ((0.0, 1.0), (0.0, 1.0))
    a_fn: callable = quadratic_cost
    da_fn: callable = quadratic_cost_grad
    y_null: tuple = None            # defaults to the origin
    product_box: tuple = None       # optional per-axis (lo, hi) for products
    label: str = "rochet_chone"

    @property
    def dim(self) -> int:
        return len(self.box)

    def null_product(self) -> np.ndarray:
        if self.y_null is None:
            return np.zeros(self.dim)
        return np.asarray(self.y_null, dtype=float)

    def reservation_utility(self, X) -> np.ndarray:
        """u_null(x) = b(x, y_null) - a(y_null)."""
        y0 = self.null_product()
        a0 = float(self.a_fn(y0[None, :])[0])
        return X @ y0 - a0


def _axes(box, shape):
    out = []
    for (lo, hi), s in zip(box, shape):
        h = (hi - lo) / s
        out.append(lo + h * (np.arange(s) + 0.5))
    return out


def _centers(box, shape):
    grids = np.meshgrid(*_axes(box, shape), indexing="ij")
    return np.stack([g.ravel() for g in grids], axis=-1)


# ---------------------------------------------------------------------------
# energy / losses quadrature (shared by the solver and principal_losses)
# ---------------------------------------------------------------------------

def _forward_gradient(u: np.ndarray, h: np.ndarray):
    """Forward differences, co-located on the (R-1)^d trimmed grid."""
    if u.ndim == 1:
        g = (u[1:] - u[:-1]) / h[0]
        return g[:, None]
    gx = (u[1:, :-1] - u[:-1, :-1]) / h[0]
    gy = (u[:-1, 1:] - u[:-1, :-1]) / h[1]
    return np.stack([gx, gy], axis=-1)


def _loss_parts(u: np.ndarray, problem: ScreeningProblem, box, shape):
    h = np.array([(hi - lo) / s for (lo, hi), s in zip(box, shape)])
    cellvol = float(np.prod(h))
    G = _forward_gradient(u, h)
    d = len(shape)
    axes = _axes(box, shape)
    if d == 1:
        X = axes[0][:-1, None]
    else:
        gx, gy = np.meshgrid(axes[0][:-1], axes[1][:-1], indexing="ij")
        X = np.stack([gx, gy], axis=-1)
    Gflat = G.reshape(-1, d)
    Xflat = X.reshape(-1, d)
    grad_term = cellvol * float(np.sum(problem.a_fn(Gflat)
                                       - np.sum(Xflat * Gflat, axis=-1)))
    u_term = cellvol * float(np.sum(u))
    return grad_term + u_term, G, Xflat


def screening_energy(u: np.ndarray, problem: ScreeningProblem, box, shape
                     ) -> float:
    return _loss_parts(u, problem, box, shape)[0]


def screening_energy_grad(u: np.ndarray, problem: ScreeningProblem, box,
                          shape) -> np.ndarray:
    h = np.array([(hi - lo) / s for (lo, hi), s in zip(box, shape)])
    cellvol = float(np.prod(h))
    _, G, Xflat = _loss_parts(u, problem, box, shape)
    d = len(shape)
    dA = problem.da_fn(G.reshape(-1, d)) - Xflat
    dA = dA.reshape(G.shape)
    grad = np.full(u.shape, cellvol)
    if d == 1:
        contrib = cellvol * dA[:, 0] / h[0]
        grad[1:] += contrib
        grad[:-1] -= contrib
    else:
        cx = cellvol * dA[..., 0] / h[0]
        cy = cellvol * dA[..., 1] / h[1]
        grad[1:, :-1] += cx
        grad[:-1, :-1] -= cx
        grad[:-1, 1:] += cy
        grad[:-1, :-1] -= cy
    return grad


def principal_losses(u, problem: ScreeningProblem,
                     product_tol: float = 1e-6) -> float:
    """L(u) by grid quadrature; for the bilinear benefit Y(x, p) = p.

    Raises DomainError when the gradient leaves the declared product box.
    """
    if isinstance(u, PotentialField):
        if u.kind != "grid":
            raise DomainError("principal_losses needs a grid potential")
        box, shape, vals = u.box, u.shape, u.values_array()
    else:
        raise DomainError("principal_losses expects a PotentialField")
    if problem.product_box is not None:
        h = np.array([(hi - lo) / s for (lo, hi), s in zip(box, shape)])
        G = _forward_gradient(vals, h).reshape(-1, len(shape))
        for ax, (lo, hi) in enumerate(problem.product_box):
            if G[:, ax].min() < lo - product_tol or \
                    G[:, ax].max() > hi + product_tol:
                raise DomainError("product map leaves the declared box")
    return screening_energy(vals, problem, box, shape)


# ---------------------------------------------------------------------------
# the feasible cone: u >= u_null, second differences >= 0
# ---------------------------------------------------------------------------

@njit(cache=True)
def _dykstra_kernel(u, lower, bm, bc, bp, ptr, lam_low, lams, sweeps,
                    tol):  # pragma: no cover - jit
    n = u.size
    nb = ptr.size - 1
    for _ in range(sweeps):
        worst = 0.0
        for i in range(n):
            nl = lam_low[i] - (u[i] - lower[i])
            if nl < 0.0:
                nl = 0.0
            u[i] += nl - lam_low[i]
            lam_low[i] = nl
        for b in range(nb):
            for k in range(ptr[b], ptr[b + 1]):
                m = bm[k]
                c = bc[k]
                p = bp[k]
                av = u[m] - 2.0 * u[c] + u[p]
                if -av > worst:
                    worst = -av
                nl = lams[k] - av / 6.0
                if nl < 0.0:
                    nl = 0.0
                dl = nl - lams[k]
                if dl != 0.0:
                    u[m] += dl
                    u[c] -= 2.0 * dl
                    u[p] += dl
                lams[k] = nl
        ld = 0.0
        for i in range(n):
            d = lower[i] - u[i]
            if d > ld:
                ld = d
        if worst <= tol and ld <= tol:
            break
    # feasibility cleanup: clip and repair only violated constraints
    for _ in range(200):
        for i in range(n):
            if u[i] < lower[i]:
                u[i] = lower[i]
        worst = 0.0
        for b in range(nb):
            for k in range(ptr[b], ptr[b + 1]):
                m = bm[k]
                c = bc[k]
                p = bp[k]
                av = u[m] - 2.0 * u[c] + u[p]
                if av < 0.0:
                    if -av > worst:
                        worst = -av
                    corr = -av / 6.0
                    u[m] += corr
                    u[c] -= 2.0 * corr
                    u[p] += corr
        ld = 0.0
        for i in range(n):
            d = lower[i] - u[i]
            if d > ld:
                ld = d
        if worst <= 1e-12 and ld <= 0.0:
            break
    return u


class _Cone:
    """Precomputed constraint batches for Dykstra projection sweeps."""

    def __init__(self, shape, lower):
        self.shape = tuple(shape)
        self.lower = np.ascontiguousarray(lower, dtype=float).ravel()
        d = len(shape)
        dirs = _DIRECTIONS_1D if d == 1 else _DIRECTIONS_2D
        idx = np.arange(int(np.prod(shape))).reshape(shape)
        self.batches = []          # (minus, center, plus) flat index arrays
        for dvec in dirs:
            centers = self._valid_centers(shape, dvec)
            if centers.size == 0:
                continue
            key = sum(c * dv for c, dv in zip(centers.T, dvec)) % 3
            for cls in range(3):
                sel = centers[key == cls]
                if sel.shape[0] == 0:
                    continue
                minus = idx[tuple((sel - dvec).T)]
                cent = idx[tuple(sel.T)]
                plus = idx[tuple((sel + dvec).T)]
                self.batches.append((minus, cent, plus))
        # flat layout for the jit kernel
        self._bm = np.concatenate([b[0] for b in self.batches]).astype(np.int64)
        self._bc = np.concatenate([b[1] for b in self.batches]).astype(np.int64)
        self._bp = np.concatenate([b[2] for b in self.batches]).astype(np.int64)
        sizes = [0] + [b[1].size for b in self.batches]
        self._ptr = np.cumsum(sizes).astype(np.int64)

    @staticmethod
    def _valid_centers(shape, dvec):
        # centers v with v - d and v + d inside the grid
        slices = [np.arange(abs(dv), s - abs(dv)) for s, dv in zip(shape, dvec)]
        if len(shape) == 1:
            return slices[0][:, None]
        aa, bb = np.meshgrid(slices[0], slices[1], indexing="ij")
        return np.stack([aa.ravel(), bb.ravel()], axis=-1)

    def project(self, v: np.ndarray, sweeps: int = 80,
                tol: float = 1e-13) -> np.ndarray:
        """Dykstra sweeps toward the cone projection, then feasibility
        cleanup so the result satisfies every constraint to 1e-12."""
        u = np.ascontiguousarray(v, dtype=float).copy()
        lam_low = np.zeros_like(u)
        lams = np.zeros(self._bc.size)
        _dykstra_kernel(u, self.lower, self._bm, self._bc, self._bp,
                        self._ptr, lam_low, lams, sweeps, tol)
        return u

    def max_defect(self, u: np.ndarray) -> tuple[float, float]:
        worst = 0.0
        for m, c, p in self.batches:
            av = u[m] - 2.0 * u[c] + u[p]
            if av.size:
                worst = max(worst, float(max(0.0, -(av.min()))))
        return worst, float((self.lower - u).max())


# ---------------------------------------------------------------------------
# solutions
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class ScreeningSolution:
    u: np.ndarray = field(repr=False)
    box: tuple = ()
    shape: tuple = ()
    energy: float = 0.0
    energy_trace: tuple = field(repr=False, default=())
    iterations: int = 0
    converged: bool = True
    convexity_defect: float = 0.0
    lower_defect: float = 0.0
    kkt_worst_decrease: float = 0.0
    labels: np.ndarray | None = field(repr=False, default=None)
    strata: tuple | None = None        # (f0, f1, f2)
    eps_u: float = 0.0
    eps_rank: float = 0.0
    boundary_flagged: bool = True
    unbounded: bool = False

    @property
    def resolution(self) -> int:
        return int(self.shape[0])

    def potential(self) -> PotentialField:
        return PotentialField.on_grid(self.box, self.shape, self.u.ravel())

    def gradient_map(self) -> np.ndarray:
        """Centered-difference product map y(x) = Du(x), shape grid + (d,)."""
        h = [(hi - lo) / s for (lo, hi), s in zip(self.box, self.shape)]
        u = self.u
        if u.ndim == 1:
            return np.gradient(u, h[0], edge_order=2)[:, None]
        return np.stack(np.gradient(u, *h, edge_order=2), axis=-1)

    def to_json_dict(self) -> dict:
        out = {
            "box": [list(b) for b in self.box],
            "shape": list(self.shape),
            "u": [float(v) for v in self.u.ravel()],
            "energy": self.energy,
            "iterations": self.iterations,
            "converged": self.converged,
            "convexity_defect": self.convexity_defect,
            "energy_trace": [float(v) for v in self.energy_trace],
        }
        if self.labels is not None:
            out["labels"] = [int(v) for v in self.labels.ravel()]
            out["strata"] = list(self.strata)
            out["eps_u"] = self.eps_u
            out["eps_rank"] = self.eps_rank
        return out


def _prolong(u_coarse: np.ndarray, shape) -> np.ndarray:
    from scipy.ndimage import zoom
    factors = [t / s for t, s in zip(shape, u_coarse.shape)]
    return zoom(u_coarse, factors, order=1, mode="nearest", grid_mode=True)


def _minimize_on_cone(grad_fn, energy_fn, u0, cone, tol, max_iter,
                      window: int = 50):
    """Monotone accelerated projected gradient (FISTA with restart).

    Accepted iterates are always feasible and the energy trace is strictly
    non-increasing: extrapolated steps are only kept when they decrease the
    energy, otherwise the momentum restarts and a plain backtracked step is
    taken.  Stops when the energy decrease over a 50-iteration window falls
    under ``tol`` relative, on stall, or at the iteration cap.
    """
    u = cone.project(u0.ravel())
    e = energy_fn(u)
    u_prev = u
    t_mom = 1.0
    trace = [e]
    eta = 0.125
    it = 0
    stopped = "cap"
    while it < max_iter:
        it += 1
        t_new = 0.5 * (1.0 + math.sqrt(1.0 + 4.0 * t_mom * t_mom))
        beta = (t_mom - 1.0) / t_new
        y = u + beta * (u - u_prev)
        accepted = False
        for attempt in range(40):
            trial = cone.project(y - eta * grad_fn(y).ravel())
            et = energy_fn(trial)
            if et < e:
                u_prev, u, e = u, trial, et
                t_mom = t_new
                accepted = True
                eta = min(eta * 1.1, 2.0)
                break
            if beta != 0.0:
                # momentum overshoot: restart and retry from u itself
                y = u
                beta = 0.0
                t_mom = 1.0
                t_new = 1.0
                continue
            eta *= 0.5
        if not accepted:
            stopped = "stall"
            break
        trace.append(e)
        if len(trace) > window:
            drop = trace[-window - 1] - trace[-1]
            if drop < tol * (1.0 + abs(trace[-1])):
                stopped = "window"
                break
    return u, e, trace, it, stopped


def solve_rochet_chone(problem: ScreeningProblem, resolution: int = 64,
                       tol: float = 1e-9, max_iter: int = 20000,
                       kkt_trials: int = 100, seed: int = 0
                       ) -> ScreeningSolution:
    """Minimize the principal's losses over the feasible cone.

    Coarse-to-fine initialization (from resolution 16 upward) warm-starts
    the projected gradient; the energy trace is non-increasing by
    construction.  Terminates when the relative energy decrease over 50
    iterations falls below ``tol``.
    """
    if resolution < 16:
        raise DomainError("resolution must be >= 16")
    d = problem.dim
    shape_of = lambda r: (r,) * d
    box = problem.box

    levels = [resolution]
    while levels[-1] // 2 >= 16:
        levels.append(levels[-1] // 2)
    levels.reverse()

    u = None
    trace_all = []
    iters = 0
    for lev in levels:
        shape = shape_of(lev)
        X = _centers(box, shape)
        lower = problem.reservation_utility(X).reshape(shape)
        cone = _Cone(shape, lower)
        if u is None:
            u0 = lower.copy()
        else:
            u0 = _prolong(u.reshape(shape_of(levels[levels.index(lev) - 1])),
                          shape)
        lev_tol = tol if lev == resolution else max(tol, 1e-7)
        lev_iter = max_iter if lev == resolution else 2000
        grad_fn = lambda v: screening_energy_grad(
            v.reshape(shape), problem, box, shape)
        energy_fn = lambda v: screening_energy(
            v.reshape(shape), problem, box, shape)
        u, e, trace, its, stopped = _minimize_on_cone(
            grad_fn, energy_fn, u0, cone, lev_tol, lev_iter)
        iters += its
        trace_all = trace if lev == resolution else trace_all
    shape = shape_of(resolution)
    if stopped == "cap":
        raise NoConvergenceError("screening solve hit the iteration cap",
                                 residual=float(trace_all[-1]))

    X = _centers(box, shape)
    lower = problem.reservation_utility(X).reshape(shape)
    cone = _Cone(shape, lower)
    cvx_def, low_def = cone.max_defect(u)

    rng = np.random.default_rng(seed)
    worst = 0.0
    for _ in range(kkt_trials):
        xi = rng.normal(size=u.size)
        xi *= 1e-4 / np.abs(xi).max()
        trial = cone.project(u + xi)
        worst = min(worst, screening_energy(trial.reshape(shape), problem,
                                            box, shape)
                    - screening_energy(u.reshape(shape), problem, box, shape))
    return ScreeningSolution(
        u=u.reshape(shape), box=box, shape=shape,
        energy=float(trace_all[-1]), energy_trace=tuple(trace_all),
        iterations=iters, converged=True,
        convexity_defect=cvx_def, lower_defect=max(low_def, 0.0),
        kkt_worst_decrease=float(-worst))


# ---------------------------------------------------------------------------
# region classification
# ---------------------------------------------------------------------------

LABEL_EXCLUSION = 0
LABEL_BUNCHING = 1
LABEL_FULL_RANK = 2


def _hessian_singvals(u: np.ndarray, h) -> np.ndarray:
    """Singular values of the local Hessian estimate (one-sided at edges),
    shape grid + (d,), sorted descending."""
    if u.ndim == 1:
        uxx = np.gradient(np.gradient(u, h[0], edge_order=2), h[0],
                          edge_order=2)
        return np.abs(uxx)[:, None]
    ux, uy = np.gradient(u, *h, edge_order=2)
    uxx, uxy = np.gradient(ux, *h, edge_order=2)
    _, uyy = np.gradient(uy, *h, edge_order=2)
    H = np.stack([np.stack([uxx, uxy], -1), np.stack([uxy, uyy], -1)], -2)
    sv = np.linalg.svd(H.reshape(-1, 2, 2), compute_uv=False)
    return sv.reshape(u.shape + (2,))


def classify_regions(solution: ScreeningSolution, problem: ScreeningProblem,
                     eps_u: float | None = None,
                     eps_rank: float | None = None) -> ScreeningSolution:
    """Label nodes as exclusion / bunching / full_rank.

    Exclusion: u within eps_u of the reservation utility.  Bunching: the
    smaller singular value of the Hessian estimate below eps_rank.  Boundary
    nodes are classified with one-sided stencils (flagged on the solution).
    """
    u = solution.u
    shape = solution.shape
    h = [(hi - lo) / s for (lo, hi), s in zip(solution.box, shape)]
    X = _centers(solution.box, shape)
    lower = problem.reservation_utility(X).reshape(shape)
    rng_u = float(u.max() - u.min())
    if eps_u is None:
        eps_u = 1e-6 * rng_u if rng_u > 0 else 1e-12
    sv = _hessian_singvals(u, h)
    if eps_rank is None:
        eps_rank = 0.05 * float(np.median(sv[..., 0]))
    labels = np.full(shape, LABEL_FULL_RANK, dtype=np.int8)
    small = sv[..., -1] <= eps_rank
    labels[small] = LABEL_BUNCHING
    excl = (u - lower) <= eps_u
    labels[excl] = LABEL_EXCLUSION
    f = [float((labels == k).mean()) for k in range(3)]
    return replace(solution, labels=labels, strata=tuple(f),
                   eps_u=float(eps_u), eps_rank=float(eps_rank))


def bunched_image_diagonal_fraction(solution: ScreeningSolution,
                                    grid_tol: float | None = None) -> float:
    """Fraction of bunched nodes whose product has equal coordinates within
    the grid tolerance (the one-dimensional menu of the standard instance)."""
    if solution.labels is None:
        raise DomainError("classify_regions first")
    if len(solution.shape) != 2:
        raise DomainError("diagonal check is two-dimensional")
    G = solution.gradient_map()
    h = max((hi - lo) / s for (lo, hi), s in zip(solution.box, solution.shape))
    if grid_tol is None:
        grid_tol = 3.0 * h
    bunched = solution.labels == LABEL_BUNCHING
    if not bunched.any():
        return 0.0
    gap = np.abs(G[..., 0] - G[..., 1])
    return float((gap[bunched] <= grid_tol).mean())


@dataclass(frozen=True)
class ExclusionReport:
    excluded_fraction: float
    threshold: float
    verdict: bool


def check_exclusion(solution: ScreeningSolution) -> ExclusionReport:
    """Is a positive fraction (more than a boundary layer) priced out?"""
    if solution.labels is None or solution.strata is None:
        raise DomainError("classify_regions first")
    f0 = solution.strata[0]
    thr = 2.0 / solution.resolution
    return ExclusionReport(excluded_fraction=f0, threshold=thr,
                           verdict=bool(f0 > thr))


# ---------------------------------------------------------------------------
# welfare variant
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class WelfareSolution:
    solution: ScreeningSolution
    lam: float
    objective: float
    losses: float
    unbounded: bool
    concavity_ok: bool


def solve_welfare(problem: ScreeningProblem, w, lam: float,
                  resolution: int = 64, tol: float = 1e-9,
                  max_iter: int = 20000) -> WelfareSolution:
    """Maximize -lam * L(u) + integral of w(x, u(x)) over the same cone.

    ``w`` maps (X, s) -> array, concave nondecreasing in s (checked by
    sampled second differences).  If raising u uniformly improves the
    objective without bound, the run is flagged and returns early.
    """
    if lam < 0:
        raise DomainError("lam must be >= 0")
    d = problem.dim
    shape = (resolution,) * d
    box = problem.box
    X = _centers(box, shape)
    cellvol = float(np.prod([(hi - lo) / s for (lo, hi), s in zip(box, shape)]))

    svals = np.linspace(0.0, 2.0, 9)
    wmat = np.stack([np.asarray(w(X, np.full(X.shape[0], s))) for s in svals])
    second = wmat[2:] - 2 * wmat[1:-1] + wmat[:-2]
    concave_ok = bool(second.max() <= 1e-8)
    nondecreasing = bool((wmat[1:] - wmat[:-1]).min() >= -1e-8)
    if not (concave_ok and nondecreasing):
        raise DomainError("welfare function must be concave nondecreasing")

    def w_term(uflat):
        return cellvol * float(np.sum(w(X, uflat)))

    def w_slope(uflat, eps=1e-6):
        return (np.asarray(w(X, uflat + eps)) - np.asarray(w(X, uflat))) / eps

    # unbounded direction: d/dt of the objective along u + t at large t
    probe = np.full(X.shape[0], 1e6)
    d_inf = -lam + cellvol * float(np.sum(w_slope(probe)))
    if d_inf > 1e-9:
        lower = problem.reservation_utility(X).reshape(shape)
        sol = ScreeningSolution(u=lower, box=box, shape=shape,
                                energy=screening_energy(lower, problem, box,
                                                        shape),
                                unbounded=True)
        return WelfareSolution(solution=sol, lam=lam, objective=math.inf,
                               losses=sol.energy, unbounded=True,
                               concavity_ok=concave_ok)

    lower = problem.reservation_utility(X).reshape(shape)
    cone = _Cone(shape, lower)

    def objective_neg(uflat):
        return lam * screening_energy(uflat.reshape(shape), problem, box,
                                      shape) - w_term(uflat)

    def grad_neg(uflat):
        g = lam * screening_energy_grad(uflat.reshape(shape), problem, box,
                                        shape)
        return g - cellvol * w_slope(uflat).reshape(shape)

    u, e, trace, its, _ = _minimize_on_cone(grad_neg, objective_neg,
                                            lower.ravel(), cone, tol, max_iter)
    cvx_def, low_def = cone.max_defect(u)
    sol = ScreeningSolution(u=u.reshape(shape), box=box, shape=shape,
                            energy=screening_energy(u.reshape(shape), problem,
                                                    box, shape),
                            energy_trace=tuple(trace), iterations=its,
                            convexity_defect=cvx_def,
                            lower_defect=max(low_def, 0.0))
    return WelfareSolution(solution=sol, lam=lam, objective=float(-e),
                           losses=sol.energy, unbounded=False,
                           concavity_ok=concave_ok)
