"""Transport cost catalogue with analytic and finite-difference derivatives.

Derivatives are reported in chart coordinates: plain partial derivatives for
``euclidean`` and ``poincare_disk``, components in the deterministic
orthonormal tangent frame of each base point for ``sphere_embedded``.
Subscript convention for mixed tensors: indices before the comma derive with
respect to the first argument, indices after it with respect to the second.

All evaluation methods are batched: ``X`` and ``Y`` are (B, m) coordinate
arrays, scalars come back as (B,), gradients as (B, d), Hessians as
(B, d, d) with d the chart dimension.
"""

from __future__ import annotations

import itertools
from dataclasses import dataclass, replace

import numpy as np

from .errors import DomainError, StencilError
from .measures import chart_dim, check_chart, sphere_frame

SYMMETRIC_KINDS = ("quadratic", "power_distance", "sphere_sq", "hyperbolic_sq")

_KIND_CHART = {
    "bilinear": "euclidean",
    "quadratic": "euclidean",
    "log_distance": "euclidean",
    "power_distance": "euclidean",
    "sphere_sq": "sphere_embedded",
    "hyperbolic_sq": "poincare_disk",
}

DEFAULT_CUT_MARGIN = np.pi / 20.0
DEFAULT_EXCLUSION_RADIUS = 1e-6
DEFAULT_FD_STEP = 1e-3

# centered stencils keyed by (derivative order, accuracy order)
_STENCILS = {
    (1, 2): ((-1, 1), (-0.5, 0.5)),
    (1, 4): ((-2, -1, 1, 2), (1 / 12, -2 / 3, 2 / 3, -1 / 12)),
    (2, 2): ((-1, 0, 1), (1.0, -2.0, 1.0)),
    (2, 4): ((-2, -1, 0, 1, 2), (-1 / 12, 4 / 3, -5 / 2, 4 / 3, -1 / 12)),
}


def _norm2(v):
    return np.sum(v * v, axis=-1)


@dataclass(frozen=True)
class CostFunction:
    """A catalogue cost with chart-aware derivative evaluation."""

    kind: str
    derivative_mode: str = "analytic"
    p: float = 2.0                      # exponent of power_distance
    cut_margin: float = DEFAULT_CUT_MARGIN
    exclusion_radius: float = DEFAULT_EXCLUSION_RADIUS
    fd_step: float = DEFAULT_FD_STEP

    def __post_init__(self):
        if self.kind not in _KIND_CHART:
            raise DomainError(f"unknown cost kind {self.kind!r}")
        if self.derivative_mode not in ("analytic", "finite_difference"):
            raise DomainError(f"bad derivative_mode {self.derivative_mode!r}")
        if self.kind == "power_distance" and self.p <= 0:
            raise DomainError("power_distance needs p > 0")

    # ------------------------------------------------------------------
    @property
    def chart(self) -> str:
        return _KIND_CHART[self.kind]

    @property
    def symmetric(self) -> bool:
        return self.kind in SYMMETRIC_KINDS

    def with_mode(self, mode: str, step: float | None = None) -> "CostFunction":
        return replace(self, derivative_mode=mode,
                       fd_step=self.fd_step if step is None else step)

    # ------------------------------------------------------------------
    # admissibility
    # ------------------------------------------------------------------
    def check_pair(self, X, Y) -> None:
        X = np.atleast_2d(np.asarray(X, dtype=float))
        Y = np.atleast_2d(np.asarray(Y, dtype=float))
        check_chart(self.chart, X)
        check_chart(self.chart, Y)
        if self.kind == "sphere_sq":
            dots = np.clip(np.sum(X * Y, axis=-1), -1.0, 1.0)
            theta = np.arccos(dots)
            if np.any(theta > np.pi - self.cut_margin):
                raise DomainError(
                    "pair within the cut-locus margin of antipodality")
        elif self.kind == "log_distance":
            if np.any(_norm2(X - Y) < self.exclusion_radius ** 2):
                raise DomainError("log_distance pair inside exclusion radius")

    def _check_derivative_ok(self) -> None:
        if self.kind == "power_distance" and self.p < 1.0:
            raise DomainError(
                "power_distance with p < 1 is excluded from derivative ops")

    # ------------------------------------------------------------------
    # values
    # ------------------------------------------------------------------
    def value(self, X, Y) -> np.ndarray:
        """c(x, y) rowwise; raises DomainError on inadmissible pairs."""
        X = np.atleast_2d(np.asarray(X, dtype=float))
        Y = np.atleast_2d(np.asarray(Y, dtype=float))
        self.check_pair(X, Y)
        return self._value(X, Y)

    def _value(self, X, Y) -> np.ndarray:
        k = self.kind
        if k == "bilinear":
            return -np.sum(X * Y, axis=-1)
        if k == "quadratic":
            return 0.5 * _norm2(X - Y)
        if k == "log_distance":
            return -0.5 * np.log(_norm2(X - Y))
        if k == "power_distance":
            return _norm2(X - Y) ** (self.p / 2.0)
        if k == "sphere_sq":
            return 0.5 * _sphere_theta(X, Y) ** 2
        if k == "hyperbolic_sq":
            return 0.5 * _hyper_dist(X, Y) ** 2
        raise AssertionError(k)

    # ------------------------------------------------------------------
    # first and second derivatives (chart coordinates)
    # ------------------------------------------------------------------
    def grad_x(self, X, Y) -> np.ndarray:
        return self._first(X, Y, side="x")

    def grad_y(self, X, Y) -> np.ndarray:
        return self._first(X, Y, side="y")

    def _first(self, X, Y, side):
        X = np.atleast_2d(np.asarray(X, dtype=float))
        Y = np.atleast_2d(np.asarray(Y, dtype=float))
        self.check_pair(X, Y)
        self._check_derivative_ok()
        if self.derivative_mode == "analytic":
            return self._grad_analytic(X, Y, side)
        d = chart_dim(self.chart, X.shape[1])
        out = np.empty((X.shape[0], d))
        for i in range(d):
            ax = _unit_orders(d, i, 1) if side == "x" else _zero_orders(d)
            ay = _zero_orders(d) if side == "x" else _unit_orders(d, i, 1)
            out[:, i] = fd_mixed_partial(self, X, Y, ax, ay, step=self.fd_step)
        return out

    def hess_xy(self, X, Y) -> np.ndarray:
        """The mixed Hessian c_{i,j} (x-index first)."""
        X = np.atleast_2d(np.asarray(X, dtype=float))
        Y = np.atleast_2d(np.asarray(Y, dtype=float))
        self.check_pair(X, Y)
        self._check_derivative_ok()
        if self.derivative_mode == "analytic":
            return self._hess_xy_analytic(X, Y)
        return self._hess_fd(X, Y, mixed=True)

    def hess_xx(self, X, Y) -> np.ndarray:
        X = np.atleast_2d(np.asarray(X, dtype=float))
        Y = np.atleast_2d(np.asarray(Y, dtype=float))
        self.check_pair(X, Y)
        self._check_derivative_ok()
        if self.derivative_mode == "analytic":
            return self._hess_xx_analytic(X, Y)
        return self._hess_fd(X, Y, mixed=False)

    def _hess_fd(self, X, Y, mixed):
        d = chart_dim(self.chart, X.shape[1])
        out = np.empty((X.shape[0], d, d))
        for i in range(d):
            for j in range(d):
                if mixed:
                    ax, ay = _unit_orders(d, i, 1), _unit_orders(d, j, 1)
                else:
                    ax = _unit_orders(d, i, 1)
                    ax = tuple(a + b for a, b in zip(ax, _unit_orders(d, j, 1)))
                    ay = _zero_orders(d)
                out[:, i, j] = fd_mixed_partial(self, X, Y, ax, ay,
                                                step=self.fd_step)
        return out

    # ------------------------------------------------------------------
    # analytic kernels
    # ------------------------------------------------------------------
    def _grad_analytic(self, X, Y, side):
        k = self.kind
        w = X - Y
        if k == "bilinear":
            return -Y.copy() if side == "x" else -X.copy()
        if k == "quadratic":
            return w.copy() if side == "x" else -w
        if k == "log_distance":
            a = _norm2(w)[:, None]
            return -w / a if side == "x" else w / a
        if k == "power_distance":
            a = _norm2(w)
            coef = (self.p * a ** (self.p / 2.0 - 1.0))[:, None]
            return coef * w if side == "x" else -coef * w
        if k == "sphere_sq":
            theta, ux, uy, _ = _sphere_tangents(X, Y)
            if side == "x":
                E = sphere_frame(X)
                return -theta[:, None] * np.einsum("bmi,bm->bi", E, ux)
            E = sphere_frame(Y)
            return -theta[:, None] * np.einsum("bmi,bm->bi", E, uy)
        if k == "hyperbolic_sq":
            d, sinh_d, gx, gy = _hyper_parts(X, Y)
            k2 = _safe_ratio(d, sinh_d)
            return k2[:, None] * (gx if side == "x" else gy)
        raise AssertionError(k)

    def _hess_xy_analytic(self, X, Y):
        k = self.kind
        b, m = X.shape
        if k == "bilinear":
            return np.broadcast_to(-np.eye(m), (b, m, m)).copy()
        if k == "quadratic":
            return np.broadcast_to(-np.eye(m), (b, m, m)).copy()
        if k == "log_distance":
            w = X - Y
            a = _norm2(w)
            eye = np.broadcast_to(np.eye(m), (b, m, m))
            ww = np.einsum("bi,bj->bij", w, w)
            return eye / a[:, None, None] - 2.0 * ww / (a ** 2)[:, None, None]
        if k == "power_distance":
            w = X - Y
            a = _norm2(w)
            eye = np.broadcast_to(np.eye(m), (b, m, m))
            ww = np.einsum("bi,bj->bij", w, w)
            c1 = (self.p * a ** (self.p / 2.0 - 1.0))[:, None, None]
            c2 = (self.p * (self.p - 2.0) * a ** (self.p / 2.0 - 2.0))[:, None, None]
            return -c1 * eye - c2 * ww
        if k == "sphere_sq":
            return _sphere_hess_xy(X, Y)
        if k == "hyperbolic_sq":
            return _hyper_hess(X, Y, mixed=True)
        raise AssertionError(k)

    # third/fourth mixed tensors ----------------------------------------
    def third_tensor(self, X, Y, twice_on: str) -> np.ndarray:
        """c_{ij,r} (twice_on='x', y-index last) or c_{m,kl} (twice_on='y',
        x-index last as returned; see cost_derivatives for the moved axis).

        Closed forms exist for costs that depend on x - y only with vanishing
        or rational derivatives; other kinds fall back to differencing the
        analytic gradients.
        """
        X = np.atleast_2d(np.asarray(X, dtype=float))
        Y = np.atleast_2d(np.asarray(Y, dtype=float))
        self.check_pair(X, Y)
        self._check_derivative_ok()
        if self.kind in ("bilinear", "quadratic"):
            d = X.shape[1]
            return np.zeros((X.shape[0], d, d, d))
        if self.kind == "log_distance" and self.derivative_mode == "analytic":
            D3 = _log_third(X - Y)
            return D3 if twice_on == "x" else -D3
        return fd_third_tensor(self, X, Y, twice_on=twice_on)

    def fourth_tensor(self, X, Y) -> np.ndarray:
        """The full c_{ij,kl} tensor (x-pair first, y-pair last)."""
        X = np.atleast_2d(np.asarray(X, dtype=float))
        Y = np.atleast_2d(np.asarray(Y, dtype=float))
        self.check_pair(X, Y)
        self._check_derivative_ok()
        if self.kind in ("bilinear", "quadratic"):
            d = X.shape[1]
            return np.zeros((X.shape[0], d, d, d, d))
        if self.kind == "log_distance" and self.derivative_mode == "analytic":
            return _log_fourth(X - Y)
        return fd_fourth_tensor(self, X, Y)

    def _hess_xx_analytic(self, X, Y):
        k = self.kind
        b, m = X.shape
        if k == "bilinear":
            return np.zeros((b, m, m))
        if k == "quadratic":
            return np.broadcast_to(np.eye(m), (b, m, m)).copy()
        if k == "log_distance":
            return -self._hess_xy_analytic(X, Y)
        if k == "power_distance":
            return -self._hess_xy_analytic(X, Y)
        if k == "sphere_sq":
            return _sphere_hess_xx(X, Y)
        if k == "hyperbolic_sq":
            return _hyper_hess(X, Y, mixed=False)
        raise AssertionError(k)


# ---------------------------------------------------------------------------
# closed-form higher tensors for the logarithmic cost
# ---------------------------------------------------------------------------

def _log_third(W):
    """D3[i,j,k] = -2(d_ij w_k + d_ik w_j + d_jk w_i)/A^2 + 8 w_i w_j w_k/A^3
    with A = |w|^2; equals c_{ij,r} for c = -log|x-y| (and -c_{m,kl})."""
    W = np.atleast_2d(W)
    b, d = W.shape
    A = _norm2(W)
    eye = np.eye(d)
    sym = (np.einsum("ij,bk->bijk", eye, W)
           + np.einsum("ik,bj->bijk", eye, W)
           + np.einsum("jk,bi->bijk", eye, W))
    www = np.einsum("bi,bj,bk->bijk", W, W, W)
    return -2.0 * sym / (A ** 2)[:, None, None, None] \
        + 8.0 * www / (A ** 3)[:, None, None, None]


def _log_fourth(W):
    """c_{ij,kl} for c = -log|x-y| (two x then two y derivatives)."""
    W = np.atleast_2d(W)
    b, d = W.shape
    A = _norm2(W)
    eye = np.eye(d)
    dd = (np.einsum("ik,jl->ijkl", eye, eye)
          + np.einsum("ij,kl->ijkl", eye, eye)
          + np.einsum("kj,il->ijkl", eye, eye))
    s_w = (np.einsum("ik,bj,bl->bijkl", eye, W, W)
           + np.einsum("ij,bk,bl->bijkl", eye, W, W)
           + np.einsum("kj,bi,bl->bijkl", eye, W, W)
           + np.einsum("il,bj,bk->bijkl", eye, W, W)
           + np.einsum("jl,bi,bk->bijkl", eye, W, W)
           + np.einsum("kl,bi,bj->bijkl", eye, W, W))
    wwww = np.einsum("bi,bj,bk,bl->bijkl", W, W, W, W)
    return (2.0 * dd[None, :, :, :, :] / (A ** 2)[:, None, None, None, None]
            - 8.0 * s_w / (A ** 3)[:, None, None, None, None]
            + 48.0 * wwww / (A ** 4)[:, None, None, None, None])


# ---------------------------------------------------------------------------
# sphere kernels
# ---------------------------------------------------------------------------

def _sphere_theta(X, Y):
    dots = np.sum(X * Y, axis=-1)
    if X.shape[-1] == 3:
        cr = np.linalg.norm(np.cross(X, Y), axis=-1)
    else:
        cr = np.abs(X[..., 0] * Y[..., 1] - X[..., 1] * Y[..., 0])
    return np.arctan2(cr, dots)


def _sphere_tangents(X, Y):
    """(theta, unit tangent at x toward y, unit tangent at y toward x, sin)."""
    theta = _sphere_theta(X, Y)
    dots = np.cos(theta)
    s = np.sin(theta)
    safe = np.where(s < 1e-14, 1.0, s)[:, None]
    ux = (Y - dots[:, None] * X) / safe
    uy = (X - dots[:, None] * Y) / safe
    zero = (s < 1e-14)[:, None]
    ux = np.where(zero, 0.0, ux)
    uy = np.where(zero, 0.0, uy)
    return theta, ux, uy, s


def _sphere_hess_xy(X, Y):
    """Mixed Hessian of half the squared great-circle distance.

    In frames aligned with the geodesic the matrix is
    -diag(1, theta/sin(theta), ...): the first direction points along the
    geodesic, the rest are parallel-transported transversals.
    """
    b, m = X.shape
    d = m - 1
    theta, ux, uy, s = _sphere_tangents(X, Y)
    Ex = sphere_frame(X)
    Ey = sphere_frame(Y)
    close = theta < 1e-6
    ratio = np.where(s > 1e-14, theta / np.where(s > 1e-14, s, 1.0), 1.0)
    a = np.einsum("bmi,bm->bi", Ex, ux)            # geodesic dir at x
    wbar = np.einsum("bmi,bm->bi", Ey, -uy)        # away-from-x dir at y
    H = -np.einsum("bi,bj->bij", a, wbar)
    if m == 3:
        v = np.cross(X, Y)
        nv = np.linalg.norm(v, axis=-1, keepdims=True)
        v = np.where(nv > 1e-14, v / np.where(nv > 1e-14, nv, 1.0), 0.0)
        va = np.einsum("bmi,bm->bi", Ex, v)
        vb = np.einsum("bmi,bm->bi", Ey, v)
        H -= ratio[:, None, None] * np.einsum("bi,bj->bij", va, vb)
    if np.any(close):
        # coincident points: the Hessian is minus the frame change matrix
        F = -np.einsum("bmi,bmj->bij", Ex, Ey)
        H[close] = F[close]
    return H.reshape(b, d, d)


def _sphere_hess_xx(X, Y):
    """Hessian in x of half the squared distance: 1 radially, theta*cot(theta)
    transversally."""
    b, m = X.shape
    d = m - 1
    theta, ux, _, s = _sphere_tangents(X, Y)
    Ex = sphere_frame(X)
    a = np.einsum("bmi,bm->bi", Ex, ux)
    eye = np.broadcast_to(np.eye(d), (b, d, d)).copy()
    close = theta < 1e-6
    cot = np.where(s > 1e-14, theta * np.cos(theta) / np.where(s > 1e-14, s, 1.0), 1.0)
    aa = np.einsum("bi,bj->bij", a, a)
    H = aa + cot[:, None, None] * (eye - aa)
    H[close] = eye[close]
    return H


# ---------------------------------------------------------------------------
# hyperbolic kernels (Poincare disk chart, plain partial derivatives)
# ---------------------------------------------------------------------------

def _hyper_dist(X, Y):
    a = _norm2(X - Y)
    bx = 1.0 - _norm2(X)
    by = 1.0 - _norm2(Y)
    return np.arccosh(1.0 + 2.0 * a / (bx * by))


def _hyper_parts(X, Y):
    """distance, sinh(distance), and the partials of g = cosh(distance)."""
    w = X - Y
    a = _norm2(w)
    bx = 1.0 - _norm2(X)
    by = 1.0 - _norm2(Y)
    g = 1.0 + 2.0 * a / (bx * by)
    d = np.arccosh(np.maximum(g, 1.0))
    sinh_d = np.sqrt(np.maximum(g * g - 1.0, 0.0))
    gx = 4.0 / (bx * by)[:, None] * (w + (a / bx)[:, None] * X)
    gy = 4.0 / (bx * by)[:, None] * (-w + (a / by)[:, None] * Y)
    return d, sinh_d, gx, gy


def _hyper_k1k2(d, sinh_d):
    """k1 = (sinh d - d cosh d)/sinh^3 d and k2 = d/sinh d, series near 0."""
    small = d < 1e-4
    dsafe = np.where(small, 1.0, d)
    ssafe = np.where(small, 1.0, sinh_d)
    k1 = (ssafe - dsafe * np.cosh(dsafe)) / ssafe ** 3
    k2 = dsafe / ssafe
    k1 = np.where(small, -1.0 / 3.0 - d * d / 30.0, k1)
    k2 = np.where(small, 1.0 - d * d / 6.0, k2)
    return k1, k2


def _hyper_hess(X, Y, mixed):
    b, m = X.shape
    w = X - Y
    a = _norm2(w)
    bx = 1.0 - _norm2(X)
    by = 1.0 - _norm2(Y)
    g = 1.0 + 2.0 * a / (bx * by)
    d = np.arccosh(np.maximum(g, 1.0))
    sinh_d = np.sqrt(np.maximum(g * g - 1.0, 0.0))
    k1, k2 = _hyper_k1k2(d, sinh_d)
    gx = 4.0 / (bx * by)[:, None] * (w + (a / bx)[:, None] * X)
    eye = np.broadcast_to(np.eye(m), (b, m, m))
    if mixed:
        gy = 4.0 / (bx * by)[:, None] * (-w + (a / by)[:, None] * Y)
        gxy = (8.0 * np.einsum("bi,bj->bij", w + (a / bx)[:, None] * X, Y)
               / (bx * by * by)[:, None, None]
               - 4.0 / (bx * by)[:, None, None]
               * (eye + 2.0 * np.einsum("bi,bj->bij", X, w) / bx[:, None, None]))
        second = np.einsum("bi,bj->bij", gx, gy)
        return k1[:, None, None] * second + k2[:, None, None] * gxy
    gxx = 4.0 / by[:, None, None] * (
        eye * (1.0 / bx + a / bx ** 2)[:, None, None]
        + 2.0 / (bx ** 2)[:, None, None]
        * (np.einsum("bi,bj->bij", w, X) + np.einsum("bi,bj->bij", X, w))
        + 4.0 * (a / bx ** 3)[:, None, None] * np.einsum("bi,bj->bij", X, X))
    second = np.einsum("bi,bj->bij", gx, gx)
    return k1[:, None, None] * second + k2[:, None, None] * gxx


def _safe_ratio(d, sinh_d):
    small = d < 1e-6
    return np.where(small, 1.0, d / np.where(small, 1.0, sinh_d))


# ---------------------------------------------------------------------------
# finite differences in chart coordinates
# ---------------------------------------------------------------------------

def _zero_orders(d):
    return (0,) * d


def _unit_orders(d, i, order):
    v = [0] * d
    v[i] = order
    return tuple(v)


def local_scale(chart, X):
    """Coordinate scale used to size finite-difference steps."""
    X = np.atleast_2d(np.asarray(X, dtype=float))
    if chart == "poincare_disk":
        return np.maximum((1.0 - _norm2(X)) / 2.0, 1e-3)
    return np.ones(X.shape[0])


def chart_perturb(chart, X, frames, xi):
    """Move each base point by the chart-coordinate offset ``xi``.

    For flat charts this is plain addition (with a StencilError if a
    Poincare point leaves the disk); on the sphere the offset is applied in
    the fixed tangent frame and retracted by normalization.
    """
    if chart == "sphere_embedded":
        amb = X + np.einsum("bmi,bi->bm", frames, xi)
        return amb / np.linalg.norm(amb, axis=-1, keepdims=True)
    out = X + xi
    if chart == "poincare_disk" and np.any(_norm2(out) >= 1.0):
        raise StencilError("finite-difference stencil left the Poincare disk")
    return out


def fd_mixed_partial(cost, X, Y, ax_orders, ay_orders, step=None, acc=None,
                     richardson=False):
    """Mixed partial of the cost by centered product stencils.

    ``ax_orders``/``ay_orders`` give the derivative order per chart axis.
    Total orders up to 2 per axis are supported; accuracy defaults to 2 for
    total derivative order below 4 and to 4 (5-point per axis) otherwise.
    ``richardson`` adds one step-halving extrapolation.
    """
    X = np.atleast_2d(np.asarray(X, dtype=float))
    Y = np.atleast_2d(np.asarray(Y, dtype=float))
    total = sum(ax_orders) + sum(ay_orders)
    if acc is None:
        acc = 4 if total >= 4 else 2
    if step is None:
        step = cost.fd_step

    def eval_at(h):
        hx = h * local_scale(cost.chart, X)
        hy = h * local_scale(cost.chart, Y)
        fx = sphere_frame(X) if cost.chart == "sphere_embedded" else None
        fy = sphere_frame(Y) if cost.chart == "sphere_embedded" else None
        axes = []
        for i, o in enumerate(ax_orders):
            if o:
                offs, wts = _STENCILS[(o, acc)]
                axes.append(("x", i, o, offs, wts))
        for i, o in enumerate(ay_orders):
            if o:
                offs, wts = _STENCILS[(o, acc)]
                axes.append(("y", i, o, offs, wts))
        dx = len(ax_orders)
        dy = len(ay_orders)
        acc_val = np.zeros(X.shape[0])
        for combo in itertools.product(*[range(len(a[3])) for a in axes]):
            wt = 1.0
            xix = np.zeros((X.shape[0], dx))
            xiy = np.zeros((Y.shape[0], dy))
            for (side, i, o, offs, wts), ci in zip(axes, combo):
                if side == "x":
                    xix[:, i] += offs[ci] * hx
                    wt_axis = wts[ci] / hx ** o
                else:
                    xiy[:, i] += offs[ci] * hy
                    wt_axis = wts[ci] / hy ** o
                wt = wt * wt_axis
            Xs = chart_perturb(cost.chart, X, fx, xix)
            Ys = chart_perturb(cost.chart, Y, fy, xiy)
            acc_val = acc_val + wt * cost.value(Xs, Ys)
        return acc_val

    if not richardson:
        return eval_at(step)
    # one halving; exact for the leading error term of the given accuracy
    coarse = eval_at(step)
    fine = eval_at(step / 2.0)
    k = 2 ** acc
    return (k * fine - coarse) / (k - 1.0)


def fd_third_tensor(cost, X, Y, twice_on: str, step=None, richardson=True):
    """c_{ij,r} (twice_on='x') or c_{m,kl} (twice_on='y') by differencing the
    analytic gradient of the other side with centered 3-point stencils."""
    X = np.atleast_2d(np.asarray(X, dtype=float))
    Y = np.atleast_2d(np.asarray(Y, dtype=float))
    b = X.shape[0]
    d = chart_dim(cost.chart, X.shape[1])
    if step is None:
        step = 1e-2

    def second_diff(h):
        hv = h * local_scale(cost.chart, X if twice_on == "x" else Y)
        frames = sphere_frame(X if twice_on == "x" else Y) \
            if cost.chart == "sphere_embedded" else None
        out = np.zeros((b, d, d, d))
        for i in range(d):
            for j in range(i, d):
                vals = np.zeros((b, d))
                if i == j:
                    offs, wts = _STENCILS[(2, 2)]
                    for o, w in zip(offs, wts):
                        xi = np.zeros((b, d))
                        xi[:, i] = o * hv
                        vals += w * _grad_other(cost, X, Y, twice_on, frames, xi)
                    vals /= (hv ** 2)[:, None]
                else:
                    offs, wts = _STENCILS[(1, 2)]
                    for oi, wi in zip(offs, wts):
                        for oj, wj in zip(offs, wts):
                            xi = np.zeros((b, d))
                            xi[:, i] = oi * hv
                            xi[:, j] = oj * hv
                            vals += wi * wj * _grad_other(cost, X, Y, twice_on,
                                                          frames, xi)
                    vals /= (hv ** 2)[:, None]
                out[:, i, j, :] = vals
                out[:, j, i, :] = vals
        return out

    if not richardson:
        return second_diff(step)
    coarse = second_diff(step)
    fine = second_diff(step / 2.0)
    return (4.0 * fine - coarse) / 3.0


def _grad_other(cost, X, Y, twice_on, frames, xi):
    if twice_on == "x":
        Xs = chart_perturb(cost.chart, X, frames, xi)
        return cost.grad_y(Xs, Y)
    Ys = chart_perturb(cost.chart, Y, frames, xi)
    return cost.grad_x(X, Ys)


def fd_fourth_tensor(cost, X, Y, step=None, richardson=True):
    """The full c_{ij,kl} tensor by product stencils on the value."""
    X = np.atleast_2d(np.asarray(X, dtype=float))
    Y = np.atleast_2d(np.asarray(Y, dtype=float))
    b = X.shape[0]
    d = chart_dim(cost.chart, X.shape[1])
    if step is None:
        step = 1e-2
    out = np.zeros((b, d, d, d, d))
    for i in range(d):
        for j in range(i, d):
            ax = [0] * d
            ax[i] += 1
            ax[j] += 1
            for k in range(d):
                for l in range(k, d):
                    ay = [0] * d
                    ay[k] += 1
                    ay[l] += 1
                    val = fd_mixed_partial(cost, X, Y, tuple(ax), tuple(ay),
                                           step=step, acc=2,
                                           richardson=richardson)
                    out[:, i, j, k, l] = val
                    out[:, j, i, k, l] = val
                    out[:, i, j, l, k] = val
                    out[:, j, i, l, k] = val
    return out


# ---------------------------------------------------------------------------
# public catalogue operations
# ---------------------------------------------------------------------------

def make_cost(kind, derivative_mode="analytic", **opts) -> CostFunction:
    return CostFunction(kind=kind, derivative_mode=derivative_mode, **opts)


def cost_eval(cost: CostFunction, x, y) -> float:
    """Evaluate c(x, y) on a pair of Points (or coordinate rows)."""
    X = np.atleast_2d(getattr(x, "array", x))
    Y = np.atleast_2d(getattr(y, "array", y))
    return float(cost.value(X, Y)[0])


_ORDER_TOKENS = ("D_x", "D_y", "D2_xy", "D2_xx", "c_ij,r", "c_m,kl", "c_ij,kl")


def cost_derivatives(cost: CostFunction, x, y, order: str) -> np.ndarray:
    """Derivative tensors in chart coordinates for a single pair.

    ``order`` is one of D_x, D_y, D2_xy, D2_xx (gradients and Hessians,
    honoring the cost's derivative_mode) or c_ij,r / c_m,kl / c_ij,kl
    (third and fourth mixed tensors, always finite-difference).
    """
    if order not in _ORDER_TOKENS:
        raise DomainError(f"unknown derivative spec {order!r}; "
                          f"expected one of {_ORDER_TOKENS}")
    X = np.atleast_2d(getattr(x, "array", x))
    Y = np.atleast_2d(getattr(y, "array", y))
    if order == "D_x":
        return cost.grad_x(X, Y)[0]
    if order == "D_y":
        return cost.grad_y(X, Y)[0]
    if order == "D2_xy":
        return cost.hess_xy(X, Y)[0]
    if order == "D2_xx":
        return cost.hess_xx(X, Y)[0]
    if order == "c_ij,r":
        return cost.third_tensor(X, Y, twice_on="x")[0]
    if order == "c_m,kl":
        # returned with the x index first: tensor[m, k, l]
        t = cost.third_tensor(X, Y, twice_on="y")[0]
        return np.moveaxis(t, -1, 0)
    return cost.fourth_tensor(X, Y)[0]


# ---------------------------------------------------------------------------
# linear reparametrization of the second argument (testing aid)
# ---------------------------------------------------------------------------

class LinearYReparamCost:
    """View of a euclidean-chart cost through new coordinates y~ = L y.

    Used to exercise coordinate invariance of curvature quantities; exposes
    the same evaluation surface as CostFunction with derivatives taken in
    the new chart (exact chain rule on the analytic kernels).
    """

    def __init__(self, base: CostFunction, L: np.ndarray):
        if base.chart == "sphere_embedded":
            raise DomainError("linear reparametrization needs a coordinate chart")
        L = np.asarray(L, dtype=float)
        if abs(np.linalg.det(L)) < 1e-12:
            raise DomainError("reparametrization matrix is singular")
        self.base = base
        self.L = L
        self.Linv = np.linalg.inv(L)
        self.kind = base.kind + "+linear_y"
        self.chart = "euclidean"
        self.derivative_mode = base.derivative_mode
        self.fd_step = base.fd_step

    def map_y(self, Y):
        return Y @ self.L.T

    def _pull(self, Yt):
        return np.atleast_2d(np.asarray(Yt, dtype=float)) @ self.Linv.T

    def check_pair(self, X, Yt):
        self.base.check_pair(X, self._pull(Yt))

    def value(self, X, Yt):
        return self.base.value(X, self._pull(Yt))

    def grad_x(self, X, Yt):
        return self.base.grad_x(X, self._pull(Yt))

    def grad_y(self, X, Yt):
        return self.base.grad_y(X, self._pull(Yt)) @ self.Linv

    def hess_xy(self, X, Yt):
        return np.einsum("bik,kj->bij", self.base.hess_xy(X, self._pull(Yt)),
                         self.Linv)

    def hess_xx(self, X, Yt):
        return self.base.hess_xx(X, self._pull(Yt))

    def third_tensor(self, X, Yt, twice_on):
        t = self.base.third_tensor(X, self._pull(Yt), twice_on)
        if twice_on == "x":          # (i, j, r): one y-index
            return np.einsum("bijr,rs->bijs", t, self.Linv)
        # twice_on == 'y': raw layout (k, l, m) with m the x-index
        return np.einsum("bklm,ku,lv->buvm", t, self.Linv, self.Linv)

    def fourth_tensor(self, X, Yt):
        t = self.base.fourth_tensor(X, self._pull(Yt))
        return np.einsum("bijkl,ku,lv->bijuv", t, self.Linv, self.Linv)
