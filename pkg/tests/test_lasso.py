import itertools

import numpy as np
import pytest

from futures_epf.lasso import (
    GramProblem,
    LassoConfig,
    LassoError,
    bic,
    coordinate_descent,
    fit_path_bic,
    lambda_grid,
    lambda_max,
    objective,
    select_bic,
    solve_path,
    standardize,
    to_original,
)


def soft_threshold(b, t):
    return np.sign(b) * np.maximum(np.abs(b) - t, 0.0)


def orthonormal_problem(rng, n=40, p=5):
    Q, _ = np.linalg.qr(rng.normal(size=(n, p)))
    y = rng.normal(size=n) * 2
    return Q, y


def kkt_residual(X, y, beta, lam):
    grad = 2.0 * X.T @ (y - X @ beta)
    active = beta != 0
    out = np.zeros_like(beta)
    out[active] = np.abs(grad[active] - lam * np.sign(beta[active]))
    out[~active] = np.maximum(np.abs(grad[~active]) - lam, 0.0)
    return out.max() if out.size else 0.0


def grid_search(X, y, lam, lo=-4.0, hi=4.0, points=41, rounds=12):
    """Minimum of the lasso objective by repeatedly refined grid search."""
    p = X.shape[1]
    centre = np.zeros(p)
    half = (hi - lo) / 2
    best = None
    for _ in range(rounds):
        axes = [np.linspace(c - half, c + half, points) for c in centre]
        B = np.array(list(itertools.product(*axes)))
        R = y[None, :] - B @ X.T
        f = (R * R).sum(axis=1) + lam * np.abs(B).sum(axis=1)
        i = int(np.argmin(f))
        best = f[i]
        centre = B[i]
        half = half * 4 / (points - 1)
    return best, centre


class TestStandardize:
    def test_unit_sd_column(self):
        Xs, ys, params = standardize(np.array([[1.0], [2.0], [3.0]]), np.array([1.0, 2.0, 4.0]))
        assert Xs[:, 0].tolist() == [-1.0, 0.0, 1.0]
        assert params.x_mean[0] == 2.0 and params.x_sd[0] == 1.0

    def test_moments(self):
        rng = np.random.default_rng(0)
        Xs, ys, _ = standardize(rng.normal(3, 7, (50, 4)), rng.normal(size=50))
        np.testing.assert_allclose(Xs.mean(axis=0), 0, atol=1e-12)
        np.testing.assert_allclose(Xs.std(axis=0, ddof=1), 1, atol=1e-12)
        assert abs(ys.mean()) < 1e-12 and abs(ys.std(ddof=1) - 1) < 1e-12

    def test_constant_column_dropped(self):
        X = np.column_stack([np.arange(5.0), np.full(5, 2.0)])
        Xs, _, params = standardize(X, np.arange(5.0))
        assert Xs.shape == (5, 1)
        assert params.dropped.tolist() == [1]
        full, _ = to_original(np.array([0.5]), params)
        assert full[1] == 0.0

    def test_idempotent(self):
        rng = np.random.default_rng(1)
        Xs, ys, _ = standardize(rng.normal(size=(30, 3)), rng.normal(size=30))
        X2, y2, _ = standardize(Xs, ys)
        np.testing.assert_allclose(X2, Xs, atol=1e-12)
        np.testing.assert_allclose(y2, ys, atol=1e-12)

    def test_errors(self):
        with pytest.raises(LassoError):
            standardize(np.ones((5, 2)), np.arange(5.0))
        with pytest.raises(LassoError):
            standardize(np.ones((1, 2)), np.ones(1))


class TestCoordinateDescent:
    def test_documented_soft_threshold_case(self):
        Q, _ = np.linalg.qr(np.random.default_rng(2).normal(size=(10, 2)))
        y = Q @ np.array([3.0, -0.5])
        fit = coordinate_descent(Q, y, 2.0)
        np.testing.assert_allclose(fit.beta, [2.0, 0.0], atol=1e-9)
        assert fit.beta[1] == 0.0 and fit.df == 1

    def test_orthonormal_oracle(self):
        rng = np.random.default_rng(3)
        for _ in range(20):
            X, y = orthonormal_problem(rng)
            b = X.T @ y
            lam = rng.uniform(0, 2 * np.abs(b).max())
            np.testing.assert_allclose(coordinate_descent(X, y, lam).beta, soft_threshold(b, lam / 2), atol=1e-6)

    def test_zero_at_lambda_max(self):
        rng = np.random.default_rng(4)
        X, y = rng.normal(size=(30, 6)), rng.normal(size=30)
        top = lambda_max(X, y)
        assert top == pytest.approx(2 * np.abs(X.T @ y).max())
        for lam in (top, top * 1.5):
            fit = coordinate_descent(X, y, lam)
            assert np.all(fit.beta == 0.0) and fit.df == 0
        assert np.count_nonzero(coordinate_descent(X, y, top * 0.99).beta) > 0

    def test_ols_limit(self):
        rng = np.random.default_rng(5)
        X, y = rng.normal(size=(40, 5)), rng.normal(size=40)
        ols = np.linalg.lstsq(X, y, rcond=None)[0]
        np.testing.assert_allclose(coordinate_descent(X, y, 0.0, tol=1e-12).beta, ols, atol=1e-6)

    def test_kkt_on_random_problems(self):
        rng = np.random.default_rng(6)
        tol = 1e-7
        for _ in range(20):
            n, p = rng.integers(15, 60), rng.integers(2, 30)
            Xs, ys, _ = standardize(rng.normal(size=(n, p)), rng.normal(size=n))
            lam = lambda_max(Xs, ys) * rng.uniform(0.01, 0.9)
            fit = coordinate_descent(Xs, ys, lam, tol=tol)
            assert fit.converged
            assert kkt_residual(Xs, ys, fit.beta, lam) <= 10 * tol

    def test_collinear_groups_converge(self):
        # one-hot weekday block plus a column that is a mix of them: the
        # centred Gram matrix is singular, as in the price models
        rng = np.random.default_rng(7)
        n = 120
        dummies = np.eye(7)[np.arange(n) % 7]
        X = np.column_stack([dummies, dummies @ rng.normal(size=7), rng.normal(size=(n, 5))])
        y = dummies @ rng.normal(size=7) * 3 + X[:, -1] + rng.normal(size=n) * 0.1
        Xs, ys, _ = standardize(X, y)
        top = lambda_max(Xs, ys)
        for scale in 2.0 ** -np.arange(1, 16):
            fit = coordinate_descent(Xs, ys, top * scale)
            assert fit.converged
            assert kkt_residual(Xs, ys, fit.beta, top * scale) <= 1e-6

    def test_objective_never_increases(self):
        rng = np.random.default_rng(8)
        Xs, ys, _ = standardize(rng.normal(size=(50, 20)) @ rng.normal(size=(20, 20)), rng.normal(size=50))
        lam = lambda_max(Xs, ys) * 0.05
        prev = np.inf
        for sweeps in range(1, 40):
            val = objective(Xs, ys, coordinate_descent(Xs, ys, lam, max_iter=sweeps).beta, lam)
            assert val <= prev + 1e-9
            prev = val

    def test_max_iter_reports_non_convergence(self):
        rng = np.random.default_rng(9)
        Xs, ys, _ = standardize(rng.normal(size=(50, 30)) @ rng.normal(size=(30, 30)), rng.normal(size=50))
        fit = coordinate_descent(Xs, ys, lambda_max(Xs, ys) * 1e-4, max_iter=1)
        assert not fit.converged and fit.iterations == 1

    def test_negative_lambda(self):
        with pytest.raises(LassoError):
            coordinate_descent(np.eye(3), np.ones(3), -1.0)


class TestBruteForce:
    @pytest.mark.parametrize("p", [1, 2, 3])
    def test_path_matches_grid_search(self, p):
        rng = np.random.default_rng(100 + p)
        for _ in range(3):
            Xs, ys, _ = standardize(rng.normal(size=(10, p)), rng.normal(size=10))
            result = fit_path_bic(Xs, ys, LassoConfig(grid_size=8, span_exponent=8, early_stop=False))
            for fit in result.fits:
                f_grid, _ = grid_search(Xs, ys, fit.lam)
                assert abs(objective(Xs, ys, fit.beta, fit.lam) - f_grid) <= 1e-3


class TestGridAndPath:
    def test_grid_multipliers(self):
        X = np.array([[1.0], [-1.0]])
        y = np.array([1.0, -1.0])
        grid = lambda_grid(X, y, grid_size=3, span_exponent=2)
        np.testing.assert_allclose(grid / grid[0], [1.0, 0.5, 0.25], rtol=0, atol=1e-15)
        assert grid[0] == 4.0

    def test_path_starts_empty_and_decreases(self):
        rng = np.random.default_rng(10)
        result = fit_path_bic(rng.normal(size=(60, 8)), rng.normal(size=60), LassoConfig(early_stop=False))
        assert result.fits[0].df == 0
        assert np.all(np.diff(result.grid) < 0)
        assert len(result.fits) == 30 and not result.truncated

    def test_bic_formula_and_selection(self):
        rng = np.random.default_rng(11)
        X = rng.normal(size=(80, 6))
        y = X[:, 0] * 2 + rng.normal(size=80)
        result = fit_path_bic(X, y, LassoConfig(early_stop=False))
        for fit, score in zip(result.fits, result.bic):
            assert score == pytest.approx(80 * np.log(fit.rss / 80) + fit.df * np.log(80))
        assert result.selected_index == int(np.argmin(result.bic))

    def test_ties_go_to_larger_lambda(self):
        assert select_bic(np.array([3.0, 1.0, 1.0, 2.0])) == 1
        assert bic(1.0, 0, 1) == 0.0

    def test_null_response_is_sparse(self):
        rng = np.random.default_rng(12)
        result = fit_path_bic(rng.normal(size=(200, 50)), rng.normal(size=200))
        assert result.selected.df <= 3

    def test_planted_column_recovered(self):
        rng = np.random.default_rng(13)
        X = rng.normal(3, 2, size=(100, 10))
        result = fit_path_bic(X, X[:, 4].copy())
        assert 4 in np.flatnonzero(result.coef)
        assert result.selected.df <= 2
        assert result.coef[4] == pytest.approx(1.0, abs=0.05)

    def test_prediction_invariant_under_rescaling(self):
        rng = np.random.default_rng(14)
        X = rng.normal(5, 3, size=(70, 6))
        y = X @ rng.normal(size=6) + 10 + rng.normal(size=70)
        result = fit_path_bic(X, y)
        Xs, _, s = standardize(X, y)
        scaled = (Xs @ result.selected.beta) * s.y_sd + s.y_mean
        np.testing.assert_allclose(result.predict(X), scaled, atol=1e-10)

    def test_warm_equals_cold(self):
        rng = np.random.default_rng(15)
        Xs, ys, _ = standardize(rng.normal(size=(60, 12)), rng.normal(size=60) + rng.normal(size=(60, 12))[:, 0])
        result = fit_path_bic(Xs, ys, LassoConfig(early_stop=False, tol=1e-10))
        for fit in result.fits:
            cold = coordinate_descent(Xs, ys, fit.lam, tol=1e-10)
            np.testing.assert_allclose(fit.beta, cold.beta, atol=1e-6)

    def test_early_stop_keeps_selected_fit(self):
        rng = np.random.default_rng(16)
        X = rng.normal(size=(100, 20))
        y = X[:, :3] @ [1.0, -2.0, 0.5] + rng.normal(size=100)
        full = fit_path_bic(X, y, LassoConfig(early_stop=False))
        short = fit_path_bic(X, y, LassoConfig())
        assert short.lam == full.lam
        np.testing.assert_allclose(short.coef, full.coef, atol=1e-8)

    def test_gram_problem_matches_data(self):
        rng = np.random.default_rng(17)
        Xs, ys, s = standardize(rng.normal(size=(40, 5)), rng.normal(size=40))
        a = solve_path(GramProblem.from_data(Xs, ys), s)
        b = fit_path_bic(*standardize(Xs, ys)[:2])
        assert a.selected_index == b.selected_index
        beta = a.selected.beta
        assert GramProblem.from_data(Xs, ys).rss(beta) == pytest.approx(float(((ys - Xs @ beta) ** 2).sum()))
