"""Lasso by cyclic coordinate descent with BIC selection over a 2^g grid.

The objective is the unnormalised

    sum_i (y_i - x_i' b)^2 + lam * sum_j |b_j|

on standardised data (columns and response centred, unit sample variance),
so the all-zero threshold is ``lam_max = 2 * max_j |x_j' y|``.
"""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
from numba import njit

DEFAULT_TOL = 1e-7
DEFAULT_MAX_ITER = 100_000
DEFAULT_GRID_SIZE = 30
DEFAULT_SPAN_EXPONENT = 20.0
KKT_SLACK = 5.0  # KKT residual allowed at convergence, in units of tol
DEFAULT_BIC_MARGIN = 20.0
NEWTON_EVERY = 10  # active-set sweeps between exact sign-pattern solves


class LassoError(ValueError):
    pass


@dataclass(frozen=True)
class LassoConfig:
    tol: float = DEFAULT_TOL
    max_iter: int = DEFAULT_MAX_ITER
    grid_size: int = DEFAULT_GRID_SIZE
    span_exponent: float = DEFAULT_SPAN_EXPONENT
    early_stop: bool = True
    bic_margin: float = DEFAULT_BIC_MARGIN


@dataclass(frozen=True)
class ScalingParams:
    """Column/response moments; ``keep`` marks columns with nonzero variance."""

    x_mean: np.ndarray
    x_sd: np.ndarray
    y_mean: float
    y_sd: float
    keep: np.ndarray

    @property
    def dropped(self) -> np.ndarray:
        return np.flatnonzero(~self.keep)


def standardize(X: np.ndarray, y: np.ndarray):
    """Centre and scale to unit sample variance; drop constant columns.

    Returns ``(Xs, ys, params)`` where ``Xs`` holds only the retained
    columns, in Fortran order.
    """
    X = np.asarray(X, dtype=float)
    y = np.asarray(y, dtype=float)
    n = X.shape[0]
    if n < 2:
        raise LassoError(f"need at least 2 rows to standardise, got {n}")
    x_mean = X.mean(axis=0)
    x_sd = X.std(axis=0, ddof=1)
    # constant columns: exact zero spread, or spread at rounding level
    keep = x_sd > 1e-12 * np.maximum(1.0, np.abs(x_mean))
    if X.shape[1] and not keep.any():
        raise LassoError("all columns have zero variance")
    y_mean = float(y.mean())
    y_sd = float(y.std(ddof=1))
    if not y_sd > 1e-12 * max(1.0, abs(y_mean)):
        y_sd = 1.0
    Xs = np.asfortranarray((X[:, keep] - x_mean[keep]) / x_sd[keep])
    ys = (y - y_mean) / y_sd
    safe_sd = np.where(keep, x_sd, 1.0)
    return Xs, ys, ScalingParams(x_mean, safe_sd, y_mean, y_sd, keep)


# --------------------------------------------------------------------------
# kernels
#
# All kernels work on the covariance form of the problem: the Gram matrix
# G = X'X, the vector c = X'y and the partial gradient g = X'r = c - G beta.


@njit(cache=True)
def _refresh_gradient(G, xty, beta, g):
    p = G.shape[0]
    for j in range(p):
        g[j] = xty[j]
    for k in range(p):
        b = beta[k]
        if b != 0.0:
            for j in range(p):
                g[j] -= G[k, j] * b


@njit(cache=True)
def _kkt_ok(g, beta, lam, slack):
    for j in range(g.shape[0]):
        grad = 2.0 * g[j]
        b = beta[j]
        if b == 0.0:
            if abs(grad) > lam + slack:
                return False
        elif b > 0.0:
            if abs(grad - lam) > slack:
                return False
        elif abs(grad + lam) > slack:
            return False
    return True


@njit(cache=True)
def _update(G, j, beta, g, half_lam, targets):
    """Soft-threshold coordinate j; propagate the change to g[targets]."""
    cs = G[j, j]
    if cs == 0.0:
        return 0.0
    old = beta[j]
    rho = g[j] + cs * old
    if rho > half_lam:
        new = (rho - half_lam) / cs
    elif rho < -half_lam:
        new = (rho + half_lam) / cs
    else:
        new = 0.0
    d = new - old
    if d != 0.0:
        beta[j] = new
        for k in targets:
            g[k] -= G[j, k] * d
    return abs(d)


@njit(cache=True)
def _cholesky_solve(A, rhs, out):
    """Solve A x = rhs for symmetric A; False when A is numerically singular."""
    n = A.shape[0]
    L = np.zeros((n, n))
    top = 0.0
    for i in range(n):
        top = max(top, A[i, i])
    floor = 1e-10 * max(top, 1e-300)
    for j in range(n):
        s = A[j, j]
        for k in range(j):
            s -= L[j, k] * L[j, k]
        if s <= floor:
            return False
        L[j, j] = np.sqrt(s)
        for i in range(j + 1, n):
            s = A[i, j]
            for k in range(j):
                s -= L[i, k] * L[j, k]
            L[i, j] = s / L[j, j]
    for i in range(n):
        s = rhs[i]
        for k in range(i):
            s -= L[i, k] * out[k]
        out[i] = s / L[i, i]
    for i in range(n - 1, -1, -1):
        s = out[i]
        for k in range(i + 1, n):
            s -= L[k, i] * out[k]
        out[i] = s / L[i, i]
    return True


@njit(cache=True)
def _flat_direction_step(G, xty, beta, g, lam, idx, A, w, V):
    """Slide along an exact null direction of the support Gram matrix.

    ``w, V`` is the eigendecomposition of `A`, the Gram matrix on `idx`. Along such a direction only the penalty changes, linearly, so the best
    move is to the first point where a coefficient reaches zero. Returns 1
    when a move was made, 0 otherwise.
    """
    a = idx.shape[0]
    cut = 1e-12 * max(w[-1], 0.0)
    for u in range(a):
        if w[u] > cut:
            break
        slope = 0.0
        for q in range(a):
            slope += np.sign(beta[idx[q]]) * V[q, u]
        if abs(slope) <= 1e-10:
            continue
        direction = -1.0 if slope > 0.0 else 1.0
        t_hit = np.inf
        hit = -1
        for q in range(a):
            step = direction * V[q, u]
            if beta[idx[q]] * step < 0.0:
                t = -beta[idx[q]] / step
                if t < t_hit:
                    t_hit = t
                    hit = q
        if hit < 0:
            continue
        lin = 0.0
        quad = 0.0
        l1_change = 0.0
        for q in range(a):
            step = t_hit * direction * V[q, u]
            lin += step * g[idx[q]]
            zq = 0.0
            for r in range(a):
                zq += A[q, r] * direction * V[r, u]
            quad += direction * V[q, u] * zq
            new = 0.0 if q == hit else beta[idx[q]] + step
            l1_change += abs(new) - abs(beta[idx[q]])
        change = -2.0 * lin + t_hit * t_hit * quad + lam * l1_change
        if change < 0.0:
            for q in range(a):
                beta[idx[q]] = 0.0 if q == hit else beta[idx[q]] + t_hit * direction * V[q, u]
            _refresh_gradient(G, xty, beta, g)
            return 1
    return 0


@njit(cache=True)
def _newton_step(G, xty, beta, g, lam, slack):
    """Line search towards the exact solution for the current sign pattern.

    Solves the stationarity equations on the support of `beta` with its
    signs held fixed, then moves to whichever point of the segment (its end
    or a zero crossing) has the lowest objective; a crossing coordinate is
    set to exactly zero. Needs g current on the support. Returns 2 when the
    end point was reached and the KKT conditions hold, 1 when the objective
    decreased, 0 otherwise. On return g is current everywhere.
    """
    p = G.shape[0]
    idx = np.flatnonzero(beta)
    a = idx.shape[0]
    if a == 0:
        return 0
    half = 0.5 * lam
    A = np.empty((a, a))
    rhs = np.empty(a)
    for u in range(a):
        rhs[u] = xty[idx[u]] - half * np.sign(beta[idx[u]])
        for v in range(a):
            A[u, v] = G[idx[u], idx[v]]
    sol = np.empty(a)
    if not _cholesky_solve(A, rhs, sol):
        # singular support: weekday dummies and season splines are exactly
        # collinear with the intercept
        w, V = np.linalg.eigh(A)
        if _flat_direction_step(G, xty, beta, g, lam, idx, A, w, V):
            return 1
        cut = 1e-12 * max(w[-1], 0.0)
        proj = V.T @ rhs
        for u in range(a):
            proj[u] = proj[u] / w[u] if w[u] > cut else 0.0
        sol = V @ proj
    for u in range(a):
        if not np.isfinite(sol[u]):
            return 0
    b0 = np.empty(a)
    d = np.empty(a)
    for u in range(a):
        b0[u] = beta[idx[u]]
        d[u] = sol[u] - b0[u]
    lin = 0.0
    quad = 0.0
    for u in range(a):
        lin += d[u] * g[idx[u]]
        s = 0.0
        for v in range(a):
            s += A[u, v] * d[v]
        quad += d[u] * s
    cand = np.empty(a + 1)
    cand[0] = 1.0
    m = 1
    for u in range(a):
        if b0[u] * sol[u] <= 0.0 and d[u] != 0.0:
            t = -b0[u] / d[u]
            if 0.0 < t < 1.0:
                cand[m] = t
                m += 1
    l1_0 = 0.0
    for u in range(a):
        l1_0 += abs(b0[u])
    best_t = 0.0
    best_f = 0.0  # objective change relative to the current point
    for c in range(m):
        t = cand[c]
        l1 = 0.0
        for u in range(a):
            l1 += abs(b0[u] + t * d[u])
        f = -2.0 * t * lin + t * t * quad + lam * (l1 - l1_0)
        if f < best_f:
            best_f = f
            best_t = t
    if best_t == 0.0:
        return 0
    for u in range(a):
        nb = b0[u] + best_t * d[u]
        if best_t < 1.0 and d[u] != 0.0 and -b0[u] / d[u] == best_t:
            nb = 0.0
        beta[idx[u]] = nb
    _refresh_gradient(G, xty, beta, g)
    if best_t == 1.0 and _kkt_ok(g, beta, lam, slack):
        return 2
    return 1


@njit(cache=True)
def _newton_chain(G, xty, beta, g, lam, slack):
    """Repeat sign-pattern steps while each one makes progress.

    A step that stops where a coefficient crosses zero leaves a smaller
    support whose own optimum is usually close, so the next step is taken
    at once. At most one step per support coordinate plus one.
    """
    status = _newton_step(G, xty, beta, g, lam, slack)
    reps = np.count_nonzero(beta)
    while status == 1 and reps > 0:
        status = _newton_step(G, xty, beta, g, lam, slack)
        reps -= 1
    return status


@njit(cache=True)
def _cd(G, xty, lam, beta, tol, max_iter, newton_every):
    """Cyclic coordinate descent with active-set cycling; returns (sweeps, converged)."""
    p = G.shape[0]
    g = np.empty(p)
    half = 0.5 * lam
    slack = KKT_SLACK * tol
    everything = np.arange(p)
    active = np.zeros(p, dtype=np.bool_)
    sweeps = 0
    converged = False
    while sweeps < max_iter:
        _refresh_gradient(G, xty, beta, g)
        dmax = 0.0
        for j in range(p):
            d = _update(G, j, beta, g, half, everything)
            if d > dmax:
                dmax = d
            if beta[j] != 0.0:
                active[j] = True
        sweeps += 1
        if dmax < tol:
            _refresh_gradient(G, xty, beta, g)
            if _kkt_ok(g, beta, lam, slack):
                converged = True
                break
            # stalled along a flat direction: jump to the sign-pattern optimum
            if _newton_chain(G, xty, beta, g, lam, slack) == 2:
                converged = True
                break
            continue
        idx = np.flatnonzero(active)
        inner = 0
        while sweeps < max_iter:
            dmax = 0.0
            for j in idx:
                d = _update(G, j, beta, g, half, idx)
                if d > dmax:
                    dmax = d
            sweeps += 1
            inner += 1
            if dmax < tol:
                break
            if newton_every > 0 and inner % newton_every == 0:
                status = _newton_chain(G, xty, beta, g, lam, slack)
                if status == 2:
                    converged = True
                    break
        if converged:
            break
    return sweeps, converged


# --------------------------------------------------------------------------
# public API


@dataclass
class LassoFit:
    beta: np.ndarray  # coefficients on the standardised columns
    lam: float
    df: int
    rss: float
    iterations: int
    converged: bool
    beta_original: np.ndarray | None = None  # full-width, raw units
    intercept: float | None = None

    def objective(self) -> float:
        return self.rss + self.lam * float(np.abs(self.beta).sum())


def objective(X: np.ndarray, y: np.ndarray, beta: np.ndarray, lam: float) -> float:
    r = y - X @ beta
    return float(r @ r + lam * np.abs(beta).sum())


@dataclass(frozen=True)
class GramProblem:
    """Sufficient statistics of a least-squares problem: X'X, X'y, y'y, n."""

    gram: np.ndarray
    xty: np.ndarray
    yty: float
    n: int

    @classmethod
    def from_data(cls, X: np.ndarray, y: np.ndarray) -> "GramProblem":
        X = np.asarray(X, dtype=float)
        y = np.asarray(y, dtype=float)
        return cls(np.ascontiguousarray(X.T @ X), np.ascontiguousarray(X.T @ y), float(y @ y), X.shape[0])

    def rss(self, beta: np.ndarray) -> float:
        val = self.yty - 2.0 * float(beta @ self.xty) + float(beta @ self.gram @ beta)
        return max(val, 0.0)


def _solve(problem: GramProblem, lam: float, beta: np.ndarray, tol: float, max_iter: int):
    return _cd(problem.gram, problem.xty, float(lam), beta, float(tol), int(max_iter), NEWTON_EVERY)


def coordinate_descent(X: np.ndarray, y: np.ndarray, lam: float,
                       warm_start: np.ndarray | None = None,
                       tol: float = DEFAULT_TOL, max_iter: int = DEFAULT_MAX_ITER) -> LassoFit:
    """Minimise ``||y - X b||^2 + lam * ||b||_1`` by cyclic coordinate descent.

    Sweeps stop once the largest coefficient change in a full sweep is below
    `tol` and the KKT conditions hold to within ``5 * tol``. Between full
    sweeps only the active set is cycled, with an occasional exact solve on
    the current sign pattern. When `max_iter` sweeps are spent the current
    iterate is returned with ``converged=False``.
    """
    if lam < 0:
        raise LassoError(f"lambda must be >= 0, got {lam}")
    X = np.asarray(X, dtype=float)
    y = np.asarray(y, dtype=float)
    problem = GramProblem.from_data(X, y)
    beta = np.zeros(X.shape[1]) if warm_start is None else np.array(warm_start, dtype=float)
    sweeps, converged = _solve(problem, lam, beta, tol, max_iter)
    r = y - X @ beta
    return LassoFit(beta, float(lam), int(np.count_nonzero(beta)), float(r @ r), int(sweeps), bool(converged))


def lambda_max(X: np.ndarray, y: np.ndarray) -> float:
    """Smallest penalty with an all-zero solution: ``2 max_j |x_j' y|``."""
    X = np.asarray(X, dtype=float)
    if X.shape[1] == 0:
        return 0.0
    return float(2.0 * np.abs(X.T @ np.asarray(y, dtype=float)).max())


def _grid(top: float, grid_size: int, span_exponent: float) -> np.ndarray:
    if grid_size < 2:
        raise LassoError("grid_size must be >= 2")
    if top <= 0.0:
        top = 1.0  # nothing to explain; every fit on the grid is zero anyway
    return top * 2.0 ** np.linspace(0.0, -span_exponent, grid_size)


def lambda_grid(X: np.ndarray, y: np.ndarray, grid_size: int = DEFAULT_GRID_SIZE,
                span_exponent: float = DEFAULT_SPAN_EXPONENT) -> np.ndarray:
    """``lam_max * 2**g`` for `grid_size` equidistant g from 0 down to -span."""
    return _grid(lambda_max(X, y), grid_size, span_exponent)


def bic(rss: float, df: int, n: int) -> float:
    """``n ln(RSS/n) + df ln(n)``."""
    return n * np.log(max(rss, np.finfo(float).tiny) / n) + df * np.log(n)


@dataclass
class PathResult:
    grid: np.ndarray
    fits: list[LassoFit]
    bic: np.ndarray
    selected_index: int
    scaling: ScalingParams = field(repr=False)

    @property
    def selected(self) -> LassoFit:
        return self.fits[self.selected_index]

    @property
    def lam(self) -> float:
        return float(self.grid[self.selected_index])

    @property
    def coef(self) -> np.ndarray:
        """Raw-unit coefficients of the selected fit, zeros for dropped columns."""
        return self.selected.beta_original

    @property
    def intercept(self) -> float:
        return self.selected.intercept

    @property
    def truncated(self) -> bool:
        return len(self.fits) < len(self.grid)

    def predict(self, X: np.ndarray) -> np.ndarray:
        return np.asarray(X) @ self.coef + self.intercept


def to_original(beta_scaled: np.ndarray, scaling: ScalingParams) -> tuple[np.ndarray, float]:
    """Map standardised coefficients back to raw units (with intercept)."""
    full = np.zeros(scaling.keep.shape[0])
    full[scaling.keep] = beta_scaled * scaling.y_sd / scaling.x_sd[scaling.keep]
    intercept = scaling.y_mean - float(full @ scaling.x_mean)
    return full, intercept


def select_bic(scores: np.ndarray) -> int:
    """Index of the minimum score; ties go to the earliest (largest-lambda) entry."""
    return int(np.argmin(scores))


def solve_path(problem: GramProblem, scaling: ScalingParams,
               config: LassoConfig = LassoConfig()) -> PathResult:
    """Warm-started path over the 2^g grid on a standardised problem.

    With ``config.early_stop`` the path ends once the BIC sits more than
    ``config.bic_margin`` above its running minimum; the remaining grid
    points are not fitted.
    """
    n = problem.n
    grid = _grid(float(2.0 * np.abs(problem.xty).max()) if problem.xty.size else 0.0,
                 config.grid_size, config.span_exponent)
    beta = np.zeros(problem.xty.shape[0])
    fits = []
    scores = []
    best = np.inf
    for lam in grid:
        sweeps, converged = _solve(problem, lam, beta, config.tol, config.max_iter)
        rss = problem.rss(beta)
        df = int(np.count_nonzero(beta))
        full, intercept = to_original(beta, scaling)
        fits.append(LassoFit(beta.copy(), float(lam), df, rss, int(sweeps), bool(converged), full, intercept))
        score = bic(rss, df, n)
        scores.append(score)
        best = min(best, score)
        if config.early_stop and score > best + config.bic_margin:
            break
    scores = np.array(scores)
    return PathResult(grid, fits, scores, select_bic(scores), scaling)


def fit_path_bic(X: np.ndarray, y: np.ndarray, config: LassoConfig = LassoConfig()) -> PathResult:
    """Standardise, run the warm-started path and pick lambda by BIC."""
    Xs, ys, scaling = standardize(X, y)
    return solve_path(GramProblem.from_data(Xs, ys), scaling, config)
