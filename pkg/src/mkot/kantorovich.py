"""Exact discrete transport: LP solver, duals, metrics, structure checks.

The solver returns vertex solutions of the transportation polytope together
with tree potentials, so the duality gap and the complementary slackness
defect are certificates computed from the output rather than assumptions.

Sign convention for the duals follows the pair (u, v) with
c(x,y) + u(x) + v(y) >= 0 and equality on the support; the dual objective is
-sum u dmu - sum v dnu.
"""

from __future__ import annotations

import csv
import itertools
import math
from dataclasses import dataclass, field

import numpy as np

from . import _simplex
from .costs import CostFunction
from .errors import DomainError, InfeasibleError, NumericalError
from .measures import DiscreteMeasure, chart_distance, save_json

_BALANCE_TOL = 1e-9
_DEFAULT_CYCLE_CAP = 5000


def pairwise_cost(cost, X, Y, block: int = 1 << 16) -> np.ndarray:
    """Dense cost matrix c(x_i, y_j), evaluated in row blocks."""
    X = np.atleast_2d(np.asarray(X, dtype=float))
    Y = np.atleast_2d(np.asarray(Y, dtype=float))
    m, n = X.shape[0], Y.shape[0]
    C = np.empty((m, n))
    rows_per = max(1, block // max(n, 1))
    for start in range(0, m, rows_per):
        stop = min(m, start + rows_per)
        xs = np.repeat(X[start:stop], n, axis=0)
        ys = np.tile(Y, (stop - start, 1))
        C[start:stop] = cost.value(xs, ys).reshape(stop - start, n)
    return C


def solve_matrix(C, a, b, max_pivots=None):
    """Network simplex on an explicit cost matrix.

    Returns (plan_i, plan_j, plan_mass, alpha, beta) with alpha_i + beta_j
    <= C_ij up to rounding and equality on basic arcs.
    """
    C = np.ascontiguousarray(C, dtype=np.float64)
    a = np.ascontiguousarray(a, dtype=np.float64)
    b = np.ascontiguousarray(b, dtype=np.float64)
    m, n = C.shape
    if a.size != m or b.size != n:
        raise DomainError("marginal sizes do not match the cost matrix")
    if abs(a.sum() - b.sum()) > _BALANCE_TOL * (1.0 + abs(a.sum())):
        raise InfeasibleError(
            f"marginal totals differ: {a.sum()!r} vs {b.sum()!r}")
    if np.any(a < 0) or np.any(b < 0):
        raise InfeasibleError("negative weights")
    if max_pivots is None:
        max_pivots = 200 * (m + n) + 1000
    pivot_tol = 1e-12 * (1.0 + float(np.abs(C).max(initial=0.0)))
    bi, bj, bf, alpha, beta, status, pivots = _simplex.solve_transport(
        C, a, b, pivot_tol, max_pivots)
    if status != _simplex.OPTIMAL:
        raise NumericalError(
            f"network simplex hit the pivot safeguard ({pivots} pivots)")
    keep = bf > 0.0
    return bi[keep], bj[keep], bf[keep], alpha, beta


@dataclass(frozen=True)
class TransportSolution:
    """Optimal plan with dual certificate.

    ``plan`` lists (source index, target index, mass) over the original atom
    indexing; ``dual_u``/``dual_v`` satisfy -u(x)-v(y) <= c(x,y) with
    equality on the support.
    """

    plan: tuple
    dual_u: tuple
    dual_v: tuple
    primal_cost: float
    dual_value: float
    gap: float
    source_coords: np.ndarray = field(repr=False)
    target_coords: np.ndarray = field(repr=False)
    chart: str = "euclidean"
    dropped_sources: tuple = ()
    dropped_targets: tuple = ()
    pivots: int = 0

    @property
    def support(self) -> np.ndarray:
        """(k, 2) integer array of support pairs."""
        return np.array([(i, j) for i, j, _ in self.plan], dtype=int)

    def plan_matrix(self) -> np.ndarray:
        m = len(self.dual_u)
        n = len(self.dual_v)
        P = np.zeros((m, n))
        for i, j, w in self.plan:
            P[i, j] = w
        return P

    def marginal_errors(self, mu: DiscreteMeasure, nu: DiscreteMeasure):
        P = self.plan_matrix()
        return (np.abs(P.sum(axis=1) - mu.weight_array).max(),
                np.abs(P.sum(axis=0) - nu.weight_array).max())

    def slackness_defect(self, C: np.ndarray | None = None,
                         cost: CostFunction | None = None) -> float:
        """max over support pairs of c(x,y) + u(x) + v(y) (>= 0 ideally 0)."""
        u = np.array(self.dual_u)
        v = np.array(self.dual_v)
        worst = 0.0
        for i, j, _ in self.plan:
            if C is not None:
                cij = C[i, j]
            else:
                cij = float(cost.value(self.source_coords[i][None, :],
                                       self.target_coords[j][None, :])[0])
            worst = max(worst, abs(cij + u[i] + v[j]))
        return worst

    def to_json_dict(self) -> dict:
        return {
            "plan": [[int(i), int(j), float(w)] for i, j, w in self.plan],
            "dual_u": list(self.dual_u),
            "dual_v": list(self.dual_v),
            "primal_cost": self.primal_cost,
            "dual_value": self.dual_value,
            "gap": self.gap,
            "chart": self.chart,
            "dropped_sources": list(self.dropped_sources),
            "dropped_targets": list(self.dropped_targets),
        }

    def save_plan_csv(self, path) -> None:
        with open(path, "w", newline="") as fh:
            writer = csv.writer(fh)
            for i, j, w in self.plan:
                writer.writerow([int(i), int(j), repr(float(w))])


def solve_plan(mu_plus: DiscreteMeasure, mu_minus: DiscreteMeasure,
               cost: CostFunction, max_pivots=None) -> TransportSolution:
    """Optimal Kantorovich plan between two atom clouds.

    Zero-mass atoms are dropped before solving and reported on the solution;
    their dual values are filled in by the transform against the other side
    so the returned pair stays feasible on every atom.
    """
    if mu_plus.chart != cost.chart or mu_minus.chart != cost.chart:
        raise DomainError(
            f"measures on chart {mu_plus.chart}/{mu_minus.chart} are not "
            f"compatible with a {cost.kind} cost (chart {cost.chart})")
    X = mu_plus.coords
    Y = mu_minus.coords
    a = mu_plus.weight_array
    b = mu_minus.weight_array

    keep_i = np.flatnonzero(a > 0)
    keep_j = np.flatnonzero(b > 0)
    C = pairwise_cost(cost, X, Y)
    Ck = C[np.ix_(keep_i, keep_j)]
    bi, bj, bf, alpha_k, beta_k = solve_matrix(Ck, a[keep_i], b[keep_j],
                                               max_pivots=max_pivots)

    # dual potentials in the paper sign (u = -alpha, v = -beta)
    u = np.empty(len(a))
    v = np.empty(len(b))
    u[keep_i] = -alpha_k
    v[keep_j] = -beta_k
    if keep_j.size and keep_i.size != len(a):
        drop = np.setdiff1d(np.arange(len(a)), keep_i)
        u[drop] = np.max(-C[np.ix_(drop, keep_j)] - v[keep_j][None, :], axis=1)
    if keep_i.size and keep_j.size != len(b):
        drop = np.setdiff1d(np.arange(len(b)), keep_j)
        v[drop] = np.max(-C[np.ix_(keep_i, drop)] - u[keep_i][:, None], axis=0)

    plan = tuple((int(keep_i[i]), int(keep_j[j]), float(w))
                 for i, j, w in zip(bi, bj, bf))
    primal = float(sum(w * C[i, j] for i, j, w in plan))
    dual = float(-(u * a).sum() - (v * b).sum())
    return TransportSolution(
        plan=plan, dual_u=tuple(u), dual_v=tuple(v),
        primal_cost=primal, dual_value=dual, gap=primal - dual,
        source_coords=X, target_coords=Y, chart=mu_plus.chart,
        dropped_sources=tuple(int(i) for i in np.flatnonzero(a == 0)),
        dropped_targets=tuple(int(j) for j in np.flatnonzero(b == 0)))


def brute_force_assignment_cost(C: np.ndarray) -> float:
    """Exhaustive minimum over permutation matchings (equal uniform weights)."""
    m, n = C.shape
    if m != n:
        raise DomainError("brute force oracle needs m = n")
    best = math.inf
    for perm in itertools.permutations(range(n)):
        tot = sum(C[i, perm[i]] for i in range(n))
        best = min(best, tot)
    return best / n


# ---------------------------------------------------------------------------
# Wasserstein metrics
# ---------------------------------------------------------------------------

def wasserstein_p(mu_plus: DiscreteMeasure, mu_minus: DiscreteMeasure,
                  p: float, chart_metric=None) -> float:
    """d_p distance: W_{d^p}^{1/p} for p >= 1, W_{d^p} itself for 0 < p < 1."""
    if p <= 0:
        raise DomainError("wasserstein_p needs p > 0")
    if mu_plus.chart != mu_minus.chart:
        raise DomainError("measures live on different charts")
    X = mu_plus.coords
    Y = mu_minus.coords
    if chart_metric is None:
        chart = mu_plus.chart
        metric = lambda A, B: chart_distance(chart, A, B)
    else:
        metric = chart_metric
    D = metric(X[:, None, :], Y[None, :, :]) ** p
    bi, bj, bf, _, _ = solve_matrix(D, mu_plus.weight_array,
                                    mu_minus.weight_array)
    primal = float(sum(w * D[i, j] for i, j, w in zip(bi, bj, bf)))
    w = max(primal, 0.0)
    return w ** (1.0 / p) if p >= 1.0 else w


# ---------------------------------------------------------------------------
# optimality structure checks
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class CycleReport:
    worst_violation: float
    worst_subset: tuple
    n_exhaustive: int
    n_random: int
    k_max: int

    @property
    def passed(self) -> bool:
        return self.worst_violation <= 1e-8


def _support_cost_matrix(solution: TransportSolution, cost: CostFunction):
    sup = solution.support
    Xs = solution.source_coords[sup[:, 0]]
    Ys = solution.target_coords[sup[:, 1]]
    return sup, pairwise_cost(cost, Xs, Ys)


def worst_cycle_violation_23(solution: TransportSolution,
                             cost: CostFunction) -> float:
    """Exact worst 2- and 3-cycle violation over the whole support.

    Uses the min-plus square of D_ab = c(x_a, y_b) - c(x_a, y_a): the most
    profitable reassignment over 2-cycles is min(D + D^T) and over 3-cycles
    the tropical diagonal of D*D plus the closing arc.
    """
    _, Cs = _support_cost_matrix(solution, cost)
    diag = np.diag(Cs)
    D = Cs - diag[:, None]
    two = (D + D.T).min()
    k = D.shape[0]
    best3 = np.inf
    for i in range(k):
        through = D[i][:, None] + D           # (j, l): i->j then j->l
        best3 = min(best3, (through + D[:, i][None, :]).min())
    return float(max(0.0, -min(two, best3)))


def check_cyclical_monotonicity(solution: TransportSolution,
                                cost: CostFunction, k_max: int = 3,
                                trials: int = 2000, seed: int = 0,
                                exhaustive_cap: int = _DEFAULT_CYCLE_CAP
                                ) -> CycleReport:
    """Search k-subsets of the support for cyclic reassignments that lower
    total cost (there should be none on an optimal plan)."""
    if k_max < 2:
        raise DomainError("k_max must be >= 2")
    sup, Cs = _support_cost_matrix(solution, cost)
    S = Cs.shape[0]
    if S == 0:
        raise DomainError("empty support")
    worst = 0.0
    worst_subset = ()
    n_exh = 0
    n_rand = 0

    def subset_violation(idx):
        base = sum(Cs[t, t] for t in idx)
        best = math.inf
        for perm in itertools.permutations(idx):
            if tuple(perm) == tuple(idx):
                continue
            best = min(best, sum(Cs[t, pt] for t, pt in zip(idx, perm)))
        return base - best if best < math.inf else -math.inf

    rng = np.random.default_rng(seed)
    for k in range(2, k_max + 1):
        n_subsets = math.comb(S, k)
        if n_subsets <= exhaustive_cap:
            for idx in itertools.combinations(range(S), k):
                n_exh += 1
                v = subset_violation(idx)
                if v > worst:
                    worst = v
                    worst_subset = tuple(int(sup[t, 0]) for t in idx)
        else:
            for _ in range(trials):
                idx = tuple(sorted(rng.choice(S, size=k, replace=False)))
                n_rand += 1
                v = subset_violation(idx)
                if v > worst:
                    worst = v
                    worst_subset = tuple(int(sup[t, 0]) for t in idx)
    return CycleReport(worst_violation=float(max(worst, 0.0)),
                       worst_subset=worst_subset, n_exhaustive=n_exh,
                       n_random=n_rand, k_max=k_max)


@dataclass(frozen=True)
class SpacelikeReport:
    worst_two_point: float          # max of c00+c11-c01-c10 over pairs
    worst_rotated: float | None     # bilinear only: max |dw| - |dz|
    n_pairs: int

    @property
    def passed(self) -> bool:
        ok = self.worst_two_point <= 1e-8
        if self.worst_rotated is not None:
            ok = ok and self.worst_rotated <= 1e-8
        return ok


def minty_spacelike_check(solution: TransportSolution,
                          cost: CostFunction) -> SpacelikeReport:
    """Two-point spacelike inequality on all support pairs.

    c(x0,y0) + c(x1,y1) <= c(x0,y1) + c(x1,y0); for the bilinear cost this
    is <dx, dy> >= 0, and rotated coordinates z = (x+y)/sqrt2,
    w = (x-y)/sqrt2 must satisfy |dw| <= |dz| (a 1-Lipschitz graph).
    """
    sup, Cs = _support_cost_matrix(solution, cost)
    diag = np.diag(Cs)
    V = diag[:, None] + diag[None, :] - Cs - Cs.T
    np.fill_diagonal(V, -np.inf)
    worst_two = float(max(0.0, V.max())) if V.size > 1 else 0.0

    worst_rot = None
    if cost.kind == "bilinear":
        Xs = solution.source_coords[sup[:, 0]]
        Ys = solution.target_coords[sup[:, 1]]
        Z = (Xs + Ys) / math.sqrt(2.0)
        W = (Xs - Ys) / math.sqrt(2.0)
        dz = np.linalg.norm(Z[:, None, :] - Z[None, :, :], axis=-1)
        dw = np.linalg.norm(W[:, None, :] - W[None, :, :], axis=-1)
        worst_rot = float(max(0.0, (dw - dz).max())) if dz.size else 0.0
    return SpacelikeReport(worst_two_point=worst_two, worst_rotated=worst_rot,
                           n_pairs=int(Cs.shape[0]))


def save_solution_json(solution: TransportSolution, path) -> None:
    save_json(solution.to_json_dict(), path)
