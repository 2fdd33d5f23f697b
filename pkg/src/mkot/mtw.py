"""Cross-curvature of cost functions and regularity-condition certification.

The central quantity is the contraction

    cross(p, q) = (-c_{ij,kl} + c_{ij,r} c^{r,m} c_{m,kl}) p^i p^j q^k q^l

evaluated by directional finite differences: the fourth-order term is the
mixed (2,2) derivative of (s,t) -> c(x(s), y(t)) along chart rays through
(x, y), and the correction term contracts second s- and t-derivatives of
the analytic gradients against the inverse mixed Hessian.  Steps use one
Richardson halving, so truncation error is O(step^4).

Conditions: (A2) nondegeneracy of c_{i,j}; (A3) cross >= 0 on c-orthogonal
pairs (p^i c_{i,j} q^j = 0); (A3)s strict positivity with a margin; (B3)
cross >= 0 for all pairs.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .cconvex import c_exponential
from .costs import CostFunction, chart_perturb, local_scale
from .errors import DegenerateError, DomainError, NoConvergenceError
from .measures import Point, chart_dim, sphere_exp, sphere_frame, sphere_log

_DET_FLOOR = 1e-8
_ZERO_TOL = 1e-6        # FD noise allowance for sign verdicts on unit vectors
_DEFAULT_MARGIN = 1e-4
_DEFAULT_STEP = 1e-2


def _coords(x) -> np.ndarray:
    return np.atleast_2d(getattr(x, "array", x)).astype(float)


# ---------------------------------------------------------------------------
# cross-curvature evaluation
# ---------------------------------------------------------------------------

def _second_diff(fn, h, richardson=True):
    """Second derivative at 0 of a callable fn(s); fn maps scalar arrays of
    offsets to stacked evaluations."""
    def d2(step):
        return (fn(-step) - 2.0 * fn(0.0) + fn(step)) / step ** 2
    if not richardson:
        return d2(h)
    return (4.0 * d2(h / 2.0) - d2(h)) / 3.0


def cross_curvature_batch(cost, X, Y, P, Q, step: float = _DEFAULT_STEP,
                          richardson: bool = True) -> np.ndarray:
    """cross(p, q) for batches of base pairs and directions.

    Directions are used as given (the value is 2-homogeneous in each); the
    finite-difference rays are normalized internally so the spatial step
    stays O(step) regardless of |p|, |q|.
    """
    X = np.atleast_2d(np.asarray(X, dtype=float))
    Y = np.atleast_2d(np.asarray(Y, dtype=float))
    P = np.atleast_2d(np.asarray(P, dtype=float))
    Q = np.atleast_2d(np.asarray(Q, dtype=float))
    b = X.shape[0]
    pn = np.linalg.norm(P, axis=1)
    qn = np.linalg.norm(Q, axis=1)
    if np.any(pn < 1e-14) or np.any(qn < 1e-14):
        raise DomainError("directions must be nonzero")
    Ph = P / pn[:, None]
    Qh = Q / qn[:, None]

    M = cost.hess_xy(X, Y)
    det = np.abs(np.linalg.det(M))

    if getattr(cost, "kind", None) in ("bilinear", "quadratic"):
        # third and fourth derivatives vanish identically; the tensor is 0
        return np.where(det < _DET_FLOOR, np.nan, np.zeros(b))

    fx = sphere_frame(X) if cost.chart == "sphere_embedded" else None
    fy = sphere_frame(Y) if cost.chart == "sphere_embedded" else None
    hx = step * local_scale(cost.chart, X)
    hy = step * local_scale(cost.chart, Y)

    # fourth-order term: d^2/ds^2 d^2/dt^2 c(x + s p, y + t q)
    def d4(scale):
        sten = (1.0, -2.0, 1.0)
        offs = (-1.0, 0.0, 1.0)
        acc = np.zeros(b)
        for ws, so in zip(sten, offs):
            Xs = chart_perturb(cost.chart, X, fx,
                               (so * scale * hx)[:, None] * Ph)
            for wt, to in zip(sten, offs):
                Ys = chart_perturb(cost.chart, Y, fy,
                                   (to * scale * hy)[:, None] * Qh)
                acc += ws * wt * cost.value(Xs, Ys)
        return acc / ((scale * hx) ** 2 * (scale * hy) ** 2)

    if richardson:
        fourth = (4.0 * d4(0.5) - d4(1.0)) / 3.0
    else:
        fourth = d4(1.0)

    # A_r = d^2/ds^2 D_y c, B_m = d^2/dt^2 D_x c (3-point, Richardson)
    def a_of(scale):
        acc = (cost.grad_y(chart_perturb(cost.chart, X, fx,
                                         (-scale * hx)[:, None] * Ph), Y)
               - 2.0 * cost.grad_y(X, Y)
               + cost.grad_y(chart_perturb(cost.chart, X, fx,
                                           (scale * hx)[:, None] * Ph), Y))
        return acc / ((scale * hx) ** 2)[:, None]

    def b_of(scale):
        acc = (cost.grad_x(X, chart_perturb(cost.chart, Y, fy,
                                            (-scale * hy)[:, None] * Qh))
               - 2.0 * cost.grad_x(X, Y)
               + cost.grad_x(X, chart_perturb(cost.chart, Y, fy,
                                              (scale * hy)[:, None] * Qh)))
        return acc / ((scale * hy) ** 2)[:, None]

    if richardson:
        A = (4.0 * a_of(0.5) - a_of(1.0)) / 3.0
        B = (4.0 * b_of(0.5) - b_of(1.0)) / 3.0
    else:
        A = a_of(1.0)
        B = b_of(1.0)

    Minv = np.linalg.inv(M)
    correction = np.einsum("br,brm,bm->b", A, Minv, B)
    vals = (-fourth + correction) * (pn ** 2) * (qn ** 2)
    vals = np.where(det < _DET_FLOOR, np.nan, vals)
    return vals


def cross_from_tensors(cost, X, Y, P, Q) -> np.ndarray:
    """cross(p, q) assembled from the full derivative tensors.

    Slower than the directional path but exact when the cost exposes
    closed-form tensors; the two routes agree to FD tolerance otherwise.
    """
    X = np.atleast_2d(np.asarray(X, dtype=float))
    Y = np.atleast_2d(np.asarray(Y, dtype=float))
    P = np.atleast_2d(np.asarray(P, dtype=float))
    Q = np.atleast_2d(np.asarray(Q, dtype=float))
    c4 = cost.fourth_tensor(X, Y)
    c3x = cost.third_tensor(X, Y, twice_on="x")      # (b, i, j, r)
    c3y = cost.third_tensor(X, Y, twice_on="y")      # (b, k, l, m)
    M = cost.hess_xy(X, Y)
    Minv = np.linalg.inv(M)
    fourth = np.einsum("bijkl,bi,bj,bk,bl->b", c4, P, P, Q, Q)
    A = np.einsum("bijr,bi,bj->br", c3x, P, P)
    B = np.einsum("bklm,bk,bl->bm", c3y, Q, Q)
    return -fourth + np.einsum("br,brm,bm->b", A, Minv, B)


def cross_curvature(cost: CostFunction, x, y, p, q,
                    step: float = _DEFAULT_STEP) -> float:
    """Single-pair cross-curvature; DegenerateError when (A2) fails."""
    X, Y = _coords(x), _coords(y)
    P = np.atleast_2d(np.asarray(p, dtype=float))
    Q = np.atleast_2d(np.asarray(q, dtype=float))
    det = abs(float(np.linalg.det(cost.hess_xy(X, Y)[0])))
    if det < _DET_FLOOR:
        raise DegenerateError(f"|det c_i,j| = {det:.3e} below floor at sample")
    return float(cross_curvature_batch(cost, X, Y, P, Q, step=step)[0])


def orthogonality_defect(cost, X, Y, P, Q) -> np.ndarray:
    """The pairing p^i c_{i,j} q^j (zero for A3-admissible pairs)."""
    M = cost.hess_xy(np.atleast_2d(X), np.atleast_2d(Y))
    return np.einsum("bi,bij,bj->b", np.atleast_2d(P), M, np.atleast_2d(Q))


# ---------------------------------------------------------------------------
# pseudo-metric h on the product space
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class MetricHReport:
    matrix: np.ndarray
    signature: tuple
    eigenvalues: np.ndarray


def metric_tensor_h(cost: CostFunction, x, y) -> MetricHReport:
    """The symmetric tensor cm_{i,j}(dx dy + dy dx) as a 2n x 2n matrix.

    Its signature is (n, n) whenever the mixed Hessian is nondegenerate;
    block structure [[0, M], [M^T, 0]].
    """
    X, Y = _coords(x), _coords(y)
    M = cost.hess_xy(X, Y)[0]
    det = abs(float(np.linalg.det(M)))
    if det < _DET_FLOOR:
        raise DegenerateError(f"|det c_i,j| = {det:.3e}: h is degenerate")
    n = M.shape[0]
    H = np.zeros((2 * n, 2 * n))
    H[:n, n:] = M
    H[n:, :n] = M.T
    ev = np.linalg.eigvalsh(H)
    sig = (int((ev > 0).sum()), int((ev < 0).sum()))
    return MetricHReport(matrix=H, signature=sig, eigenvalues=ev)


# ---------------------------------------------------------------------------
# c-segments
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class CSegment:
    """The curve y_t with D_x c(x0, y_t) interpolating linearly in t."""

    x0: np.ndarray
    y0: np.ndarray
    y1: np.ndarray
    ts: np.ndarray
    ys: np.ndarray
    chart: str
    max_residual: float
    p0: np.ndarray = field(repr=False, default=None)
    p1: np.ndarray = field(repr=False, default=None)


def trace_c_segment(cost: CostFunction, x0, y0, y1, n_t: int = 21,
                    residual_tol: float = 1e-9) -> CSegment:
    """Sample the c-segment through momenta interpolation and Newton solves."""
    X0, Y0, Y1 = _coords(x0), _coords(y0), _coords(y1)
    p0 = -cost.grad_x(X0, Y0)[0]
    p1 = -cost.grad_x(X0, Y1)[0]
    ts = np.linspace(0.0, 1.0, int(n_t))
    ys = np.empty((ts.size, X0.shape[1]))
    worst = 0.0
    for k, t in enumerate(ts):
        pt = (1.0 - t) * p0 + t * p1
        try:
            ys[k] = c_exponential(cost, X0[0], pt)
        except NoConvergenceError as exc:
            raise NoConvergenceError(
                f"c-segment solve failed at t={t:.4f}", residual=exc.residual)
        res = float(np.linalg.norm(cost.grad_x(X0, ys[k][None, :])[0] + pt))
        worst = max(worst, res)
    if worst > residual_tol:
        raise NoConvergenceError("c-segment residual above tolerance",
                                 residual=worst)
    return CSegment(x0=X0[0], y0=Y0[0], y1=Y1[0], ts=ts, ys=ys,
                    chart=cost.chart, max_residual=worst, p0=p0, p1=p1)


def segment_point(cost: CostFunction, seg: CSegment, t: float) -> np.ndarray:
    """y_t for arbitrary t (also outside [0,1]) by momenta interpolation."""
    pt = (1.0 - t) * seg.p0 + t * seg.p1
    return c_exponential(cost, seg.x0, pt)


def segment_velocity(cost: CostFunction, seg: CSegment, t: float,
                     ht: float = 1e-4) -> np.ndarray:
    """Chart-coordinate velocity dy_t/dt by central difference."""
    yp = segment_point(cost, seg, t + ht)
    ym = segment_point(cost, seg, t - ht)
    if cost.chart == "sphere_embedded":
        y0 = segment_point(cost, seg, t)[None, :]
        dp = sphere_log(y0, yp[None, :])[0]
        dm = sphere_log(y0, ym[None, :])[0]
        amb = (dp - dm) / (2.0 * ht)
        E = sphere_frame(y0)[0]
        return E.T @ amb
    return (yp - ym) / (2.0 * ht)


def nontensorial_check(cost: CostFunction, seg: CSegment, p,
                       t0: float = 0.5, hs: float = _DEFAULT_STEP,
                       ht: float = 0.02) -> tuple[float, float]:
    """Along a c-segment, cross(x', y') equals the negative mixed fourth
    derivative -d^4/ds^2 dt^2 c(x(s), y(t)).  Returns (cross, -fourth)."""
    X0 = seg.x0[None, :]
    y_t0 = segment_point(cost, seg, t0)
    v = segment_velocity(cost, seg, t0, ht=ht)
    P = np.atleast_1d(np.asarray(p, dtype=float))
    cr = float(cross_curvature_batch(cost, X0, y_t0[None, :], P[None, :],
                                     v[None, :])[0])

    fx = sphere_frame(X0) if cost.chart == "sphere_embedded" else None
    hx = float(hs * local_scale(cost.chart, X0)[0])
    Pn = P / np.linalg.norm(P)

    def val(so, to):
        Xs = chart_perturb(cost.chart, X0, fx, (so * hx) * Pn[None, :])
        Ys = segment_point(cost, seg, t0 + to)[None, :]
        return float(cost.value(Xs, Ys)[0])

    sten = (1.0, -2.0, 1.0)
    offs = (-1.0, 0.0, 1.0)

    def d4(scale):
        acc = 0.0
        for ws, so in zip(sten, offs):
            for wt, to in zip(sten, offs):
                acc += ws * wt * val(so * scale, to * scale * ht)
        return acc / ((scale * hx) ** 2 * (scale * ht) ** 2)

    fourth = (4.0 * d4(0.5) - d4(1.0)) / 3.0
    # d4 is taken against a unit-chart-speed x-ray; restore |p|^2
    return cr, -fourth * float(np.dot(P, P))


# ---------------------------------------------------------------------------
# Loeper maximum principle along c-segments
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class MaxPrincipleReport:
    max_principle_defect: float
    convexity_defect: float
    witness_x: np.ndarray | None
    witness_t: float | None
    n_x: int
    n_t: int


def loeper_max_principle_check(cost: CostFunction, seg: CSegment,
                               x_grid) -> MaxPrincipleReport:
    """Evaluate f(x,t) = -c(x, y_t) + c(x0, y_t) on a grid of x samples.

    Reports the worst excess of f over max(f(x,0), f(x,1)) (nonpositive when
    the maximum principle holds) and the worst discrete concavity pocket of
    t -> f(x,t) (zero when the cost is non-negatively cross-curved).
    """
    Xg = np.atleast_2d(np.asarray(x_grid, dtype=float))
    T = seg.ts.size
    B = Xg.shape[0]
    F = np.empty((B, T))
    X0 = np.broadcast_to(seg.x0, Xg.shape)
    for k in range(T):
        Yk = np.broadcast_to(seg.ys[k], Xg.shape)
        F[:, k] = -cost.value(Xg, Yk) + cost.value(X0, Yk)
    ends = np.maximum(F[:, 0], F[:, -1])
    excess = F - ends[:, None]
    mp_defect = float(excess.max())
    bi, ti = np.unravel_index(np.argmax(excess), excess.shape)

    dt = float(seg.ts[1] - seg.ts[0])
    second = (F[:, 2:] - 2.0 * F[:, 1:-1] + F[:, :-2]) / dt ** 2
    cvx_defect = float(max(0.0, -second.min())) if second.size else 0.0
    return MaxPrincipleReport(
        max_principle_defect=mp_defect, convexity_defect=cvx_defect,
        witness_x=Xg[bi].copy(), witness_t=float(seg.ts[ti]),
        n_x=B, n_t=T)


# ---------------------------------------------------------------------------
# samplers and certification
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class BoxSampler:
    """Uniform pairs in a euclidean box, a share biased to the boundary."""

    box: tuple = ((-1.0, 1.0), (-1.0, 1.0))
    boundary_frac: float = 0.3
    min_separation: float = 0.0

    chart = "euclidean"

    def sample_pairs(self, rng, n):
        lo = np.array([b[0] for b in self.box])
        hi = np.array([b[1] for b in self.box])
        d = lo.size
        X = lo + (hi - lo) * rng.random((n, d))
        Y = lo + (hi - lo) * rng.random((n, d))
        nb = int(self.boundary_frac * n)
        if nb:
            # push a share of the y samples to a random face
            faces = rng.integers(0, d, size=nb)
            sides = rng.integers(0, 2, size=nb)
            eps = 0.02 * (hi - lo)
            for r in range(nb):
                ax = faces[r]
                Y[r, ax] = (hi[ax] - eps[ax]) if sides[r] else (lo[ax] + eps[ax])
        if self.min_separation > 0:
            bad = np.linalg.norm(X - Y, axis=1) < self.min_separation
            Y[bad] += self.min_separation
        return X, Y


@dataclass(frozen=True)
class SphereCapSampler:
    """Pairs inside a geodesic ball around the north pole of S^2."""

    radius: float = np.pi / 4.0
    boundary_frac: float = 0.3

    chart = "sphere_embedded"

    def _points(self, rng, n, rad_lo, rad_hi):
        pole = np.array([0.0, 0.0, 1.0])
        r = np.sqrt(rng.uniform(rad_lo ** 2, rad_hi ** 2, size=n))
        phi = rng.uniform(0.0, 2.0 * np.pi, size=n)
        xi = np.stack([r * np.cos(phi), r * np.sin(phi), np.zeros(n)], axis=1)
        return sphere_exp(np.broadcast_to(pole, (n, 3)), xi)

    def sample_pairs(self, rng, n):
        nb = int(self.boundary_frac * n)
        X = self._points(rng, n, 0.0, self.radius)
        Y = np.concatenate([
            self._points(rng, n - nb, 0.0, self.radius),
            self._points(rng, nb, 0.9 * self.radius, self.radius)])
        return X, Y


@dataclass(frozen=True)
class DiskBallSampler:
    """Pairs inside a hyperbolic ball (radius in metric units) at the origin."""

    radius: float = 2.0
    boundary_frac: float = 0.3

    chart = "poincare_disk"

    def _points(self, rng, n, rad_lo, rad_hi):
        # uniform in hyperbolic area: cosh(r)-1 uniform on the radial part
        u = rng.uniform(np.cosh(rad_lo) - 1.0, np.cosh(rad_hi) - 1.0, size=n)
        rho = np.arccosh(1.0 + u)
        re = np.tanh(rho / 2.0)
        phi = rng.uniform(0.0, 2.0 * np.pi, size=n)
        return np.stack([re * np.cos(phi), re * np.sin(phi)], axis=1)

    def sample_pairs(self, rng, n):
        nb = int(self.boundary_frac * n)
        X = self._points(rng, n, 0.0, self.radius)
        Y = np.concatenate([
            self._points(rng, n - nb, 0.0, self.radius),
            self._points(rng, nb, 0.9 * self.radius, self.radius)])
        return X, Y


def default_sampler(cost: CostFunction, radius: float | None = None):
    if cost.chart == "euclidean":
        return BoxSampler(min_separation=0.05 if cost.kind == "log_distance" else 0.0)
    if cost.chart == "sphere_embedded":
        return SphereCapSampler(radius=radius or np.pi / 4.0)
    return DiskBallSampler(radius=radius or 2.0)


@dataclass(frozen=True)
class Verdict:
    status: str                 # "holds" | "violated" | "inconclusive"
    margin: float               # achieved min of the tested quantity
    witness: dict | None = None

    @property
    def holds(self) -> bool:
        return self.status == "holds"


@dataclass(frozen=True)
class CrossCurvatureReport:
    cost_kind: str
    n_samples: int
    seed: int
    margin_required: float
    verdicts: dict
    min_orthogonal: float
    max_orthogonal: float
    min_general: float
    max_general: float
    orthogonality_defect_max: float
    n_degenerate: int

    def to_json_dict(self) -> dict:
        out = {
            "cost_kind": self.cost_kind,
            "n_samples": self.n_samples,
            "seed": self.seed,
            "margin_required": self.margin_required,
            "min_orthogonal": self.min_orthogonal,
            "max_orthogonal": self.max_orthogonal,
            "min_general": self.min_general,
            "max_general": self.max_general,
            "orthogonality_defect_max": self.orthogonality_defect_max,
            "n_degenerate": self.n_degenerate,
            "verdicts": {},
        }
        for k, v in sorted(self.verdicts.items()):
            out["verdicts"][k] = {
                "status": v.status, "margin": v.margin,
                "witness": v.witness if v.witness is None else
                {kk: (list(map(float, vv)) if isinstance(vv, np.ndarray) else float(vv))
                 for kk, vv in v.witness.items()},
            }
        return out


def certify_conditions(cost: CostFunction, sampler=None, n_samples: int = 2000,
                       margin: float = _DEFAULT_MARGIN, seed: int = 0,
                       zero_tol: float = _ZERO_TOL) -> CrossCurvatureReport:
    """Monte Carlo certification of (A2), (A3), (A3)s and (B3).

    Directions are unit vectors in chart coordinates; c-orthogonal partners
    are produced by projecting out the image of p under c_{i,j}.  Margins
    are reported against that normalization.  Deterministic given the seed.
    """
    if n_samples < 1:
        raise DomainError("n_samples must be >= 1")
    if sampler is None:
        sampler = default_sampler(cost)
    rng = np.random.default_rng(seed)
    X, Y = sampler.sample_pairs(rng, n_samples)
    d = chart_dim(cost.chart, X.shape[1])

    P = rng.normal(size=(n_samples, d))
    P /= np.linalg.norm(P, axis=1, keepdims=True)
    Qg = rng.normal(size=(n_samples, d))
    Qg /= np.linalg.norm(Qg, axis=1, keepdims=True)

    M = cost.hess_xy(X, Y)
    det = np.abs(np.linalg.det(M))
    nondeg = det >= _DET_FLOOR
    n_degen = int((~nondeg).sum())

    W = np.einsum("bij,bi->bj", M, P)
    wn = np.linalg.norm(W, axis=1, keepdims=True)
    wn = np.where(wn < 1e-14, 1.0, wn)
    What = W / wn
    Qo = Qg - np.sum(Qg * What, axis=1, keepdims=True) * What
    qn = np.linalg.norm(Qo, axis=1)
    ok_orth = nondeg & (qn >= 1e-6) if d > 1 else np.zeros(n_samples, bool)
    Qo = np.where(qn[:, None] >= 1e-6, Qo / np.where(qn[:, None] < 1e-6, 1.0,
                                                     qn[:, None]), Qo)

    cross_gen = np.full(n_samples, np.nan)
    cross_orth = np.full(n_samples, np.nan)
    if nondeg.any():
        cross_gen[nondeg] = cross_curvature_batch(
            cost, X[nondeg], Y[nondeg], P[nondeg], Qg[nondeg])
    if ok_orth.any():
        cross_orth[ok_orth] = cross_curvature_batch(
            cost, X[ok_orth], Y[ok_orth], P[ok_orth], Qo[ok_orth])
    defects = np.full(n_samples, np.nan)
    if ok_orth.any():
        defects[ok_orth] = np.abs(np.einsum(
            "bi,bij,bj->b", P[ok_orth], M[ok_orth], Qo[ok_orth]))

    def _witness(idx):
        return {"x": X[idx], "y": Y[idx], "p": P[idx],
                "q": Qo[idx] if ok_orth[idx] else Qg[idx],
                "cross": cross_orth[idx] if ok_orth[idx] else cross_gen[idx]}

    verdicts = {}
    if not nondeg.any():
        for cond in ("A2", "A3", "A3s", "B3"):
            verdicts[cond] = Verdict("inconclusive", math.nan)
    else:
        dmin = float(det[nondeg].min())
        verdicts["A2"] = Verdict("holds" if n_degen == 0 else "violated",
                                 float(det.min()),
                                 None if n_degen == 0 else
                                 {"x": X[int(np.argmin(det))],
                                  "y": Y[int(np.argmin(det))],
                                  "cross": det.min()})
        if ok_orth.any():
            o = np.where(ok_orth)[0]
            om = cross_orth[o]
            imin = int(o[np.argmin(om)])
            min_o = float(np.min(om))
            verdicts["A3"] = Verdict(
                "holds" if min_o >= -zero_tol else "violated", min_o,
                None if min_o >= -zero_tol else _witness(imin))
            verdicts["A3s"] = Verdict(
                "holds" if min_o >= margin else "violated", min_o,
                None if min_o >= margin else _witness(imin))
        else:
            verdicts["A3"] = Verdict("inconclusive", math.nan)
            verdicts["A3s"] = Verdict("inconclusive", math.nan)
        pool_idx = list(np.where(nondeg)[0])
        pool_val = list(cross_gen[nondeg])
        if ok_orth.any():
            pool_idx += list(np.where(ok_orth)[0])
            pool_val += list(cross_orth[ok_orth])
        k_min = int(np.argmin(pool_val))
        min_g = float(pool_val[k_min])
        imin_g = int(pool_idx[k_min])
        verdicts["B3"] = Verdict(
            "holds" if min_g >= -zero_tol else "violated", min_g,
            None if min_g >= -zero_tol else _witness(imin_g))

    orth_vals = cross_orth[np.isfinite(cross_orth)]
    gen_vals = cross_gen[np.isfinite(cross_gen)]
    return CrossCurvatureReport(
        cost_kind=cost.kind, n_samples=n_samples, seed=seed,
        margin_required=margin, verdicts=verdicts,
        min_orthogonal=float(orth_vals.min()) if orth_vals.size else math.nan,
        max_orthogonal=float(orth_vals.max()) if orth_vals.size else math.nan,
        min_general=float(gen_vals.min()) if gen_vals.size else math.nan,
        max_general=float(gen_vals.max()) if gen_vals.size else math.nan,
        orthogonality_defect_max=float(np.nanmax(defects))
        if np.isfinite(defects).any() else math.nan,
        n_degenerate=n_degen)
