import numpy as np
import pytest

from harmonicgp import (
    DomainGrid,
    HarmonicBasis,
    KernelSpec,
    ReducedRankModel,
    approx_covariance,
    covariance,
    evaluate_basis,
    fit_hyperparameters,
    nlml,
    predict,
    prior_draw,
    spectral_density,
)
from oracles import central_difference, dense_nlml, dense_predict, first_modes_sorted, sine_basis_unit_square


def _random_problem(basis, seed, n=30, family="matern32"):
    rng = np.random.default_rng(seed)
    kern = KernelSpec(
        family,
        variance=float(rng.uniform(0.5, 2.0)),
        lengthscale=float(rng.uniform(0.15, 0.4)),
    )
    model = ReducedRankModel(basis, kern, float(rng.uniform(0.01, 0.2)))
    X = rng.uniform(0.1, 0.9, (n, 2))
    y = rng.standard_normal(n)
    Xs = rng.uniform(0.1, 0.9, (8, 2))
    return model, X, y, Xs


def _dense_pieces(model, X, Xs):
    lam = model.spectral_weights()
    P = evaluate_basis(model.basis, X)
    Ps = evaluate_basis(model.basis, Xs)
    K = (P * lam) @ P.T
    ks = (Ps * lam) @ P.T
    kss = np.einsum("ij,j,ij->i", Ps, lam, Ps)
    return K, ks, kss


class TestPredict:
    def test_matches_dense_oracle(self, square_basis):
        for seed in (0, 1, 2):
            model, X, y, Xs = _random_problem(square_basis, seed)
            mean, var = predict(model, X, y, Xs)
            K, ks, kss = _dense_pieces(model, X, Xs)
            mean_o, var_o = dense_predict(K, ks, kss, y, model.noise_variance)
            assert np.abs(mean - mean_o).max() < 1e-8
            assert np.abs(var - var_o).max() < 1e-8

    def test_no_data_gives_prior_marginals(self, square_basis, kernel):
        model = ReducedRankModel(square_basis, kernel, 0.1)
        Xs = np.array([[0.3, 0.4], [0.6, 0.6]])
        mean, var = predict(model, np.zeros((0, 2)), np.zeros(0), Xs)
        assert np.array_equal(mean, np.zeros(2))
        lam = model.spectral_weights()
        Ps = evaluate_basis(square_basis, Xs)
        assert np.allclose(var, np.einsum("ij,j,ij->i", Ps, lam, Ps), rtol=1e-12)

    def test_boundary_point_predicts_zero(self, square_basis, kernel):
        model = ReducedRankModel(square_basis, kernel, 0.1)
        rng = np.random.default_rng(4)
        X = rng.uniform(0.2, 0.8, (12, 2))
        y = rng.standard_normal(12)
        # a grid-exterior location and a far-outside one
        mean, var = predict(model, X, y, np.array([[0.0, 0.5], [2.0, 2.0]]))
        assert np.array_equal(mean, np.zeros(2))
        assert np.array_equal(var, np.zeros(2))

    def test_variance_non_negative(self, square_basis):
        model, X, y, _ = _random_problem(square_basis, 9)
        Xs = np.random.default_rng(10).uniform(0.0, 1.0, (200, 2))
        _, var = predict(model, X, y, Xs)
        assert (var >= 0).all()

    def test_interpolates_at_tiny_noise(self, square_basis, kernel):
        # m = 32 >= n = 9 well-separated points: the posterior mean passes
        # through arbitrary targets as the noise variance goes to zero
        model = ReducedRankModel(square_basis, kernel, 1e-8)
        g = np.linspace(0.2, 0.8, 3)
        X = np.array([[a, b] for a in g for b in g])
        y = np.random.default_rng(11).standard_normal(9)
        mean, _ = predict(model, X, y, X)
        assert np.abs(mean - y).max() < 1e-3

    def test_non_finite_inputs_rejected(self, square_basis, kernel):
        model = ReducedRankModel(square_basis, kernel, 0.1)
        with pytest.raises(ValueError):
            predict(model, np.array([[np.nan, 0.5]]), np.array([1.0]), np.zeros((1, 2)))
        with pytest.raises(ValueError):
            predict(model, np.array([[0.5, 0.5]]), np.array([np.inf]), np.zeros((1, 2)))


class TestNlml:
    def test_matches_dense_oracle(self, square_basis):
        for seed in (3, 4):
            model, X, y, _ = _random_problem(square_basis, seed)
            K, _, _ = _dense_pieces(model, X, X)
            assert nlml(model, X, y) == pytest.approx(
                dense_nlml(K, y, model.noise_variance), abs=1e-8
            )

    def test_single_zero_observation(self, square_basis, kernel):
        model = ReducedRankModel(square_basis, kernel, 0.3)
        x = np.array([[0.41, 0.57]])
        ktilde = approx_covariance(model, x[0], x[0])
        expected = 0.5 * np.log(2 * np.pi) + 0.5 * np.log(0.3 + ktilde)
        assert nlml(model, x, np.zeros(1)) == pytest.approx(expected, rel=1e-12)

    def test_zero_targets_drop_data_term(self, square_basis):
        model, X, y, _ = _random_problem(square_basis, 5)
        K, _, _ = _dense_pieces(model, X, X)
        n = len(y)
        logdet_part = dense_nlml(K, np.zeros(n), model.noise_variance)
        assert nlml(model, X, np.zeros(n)) == pytest.approx(logdet_part, abs=1e-9)

    def test_requires_data(self, square_basis, kernel):
        model = ReducedRankModel(square_basis, kernel, 0.1)
        with pytest.raises(ValueError):
            nlml(model, np.zeros((0, 2)), np.zeros(0))


class TestGradientsAndFit:
    def test_gradient_matches_finite_differences(self, square_basis):
        for seed in (6, 7):
            model, X, y, _ = _random_problem(square_basis, seed)
            bound = model.bind(X, y)
            _, grad = bound.nlml_gradient()
            fd = central_difference(
                lambda t: bound._rebound(model.with_theta(t)).nlml(), model.theta
            )
            assert np.abs(grad - fd).max() / np.abs(fd).max() < 1e-4

    def test_fit_never_increases_nlml(self, square_basis):
        model, X, y, _ = _random_problem(square_basis, 8)
        before = nlml(model, X, y)
        fitted = fit_hyperparameters(model, X, y)
        assert nlml(fitted, X, y) <= before + 1e-12

    def test_stationary_point_stays(self, square_basis):
        model, X, y, _ = _random_problem(square_basis, 12, n=20)
        fitted = fit_hyperparameters(model, X, y)
        refit = fit_hyperparameters(fitted, X, y)
        assert np.abs(refit.theta - fitted.theta).max() < 1e-3

    def test_non_finite_start_rejected(self, square_basis, kernel):
        model = ReducedRankModel(square_basis, kernel, 0.1)
        X = np.array([[0.5, 0.5], [0.6, 0.6]])
        with np.errstate(over="ignore"), pytest.raises(ValueError):
            fit_hyperparameters(model, X, np.array([1.0, 2.0]), init_theta=[800.0, 0.0, 0.0])


class TestApproxCovariance:
    def test_zero_on_boundary(self, square_basis, kernel):
        model = ReducedRankModel(square_basis, kernel, 0.1)
        assert approx_covariance(model, np.array([0.0, 0.3]), np.array([0.5, 0.5])) == 0.0

    def test_symmetric(self, square_basis, kernel):
        model = ReducedRankModel(square_basis, kernel, 0.1)
        a, b = np.array([0.3, 0.35]), np.array([0.62, 0.5])
        assert approx_covariance(model, a, b) == pytest.approx(
            approx_covariance(model, b, a), rel=1e-15
        )

    def test_stationary_limit_deep_inside(self):
        # closed-form unit-square eigenpairs, m = 1000, lengthscale 0.05:
        # truncated expansion reproduces the stationary kernel to 2% in the bulk
        modes = first_modes_sorted(1000)
        lam, eval_fn = sine_basis_unit_square(modes)
        kern = KernelSpec("se", variance=1.0, lengthscale=0.05)
        weights = spectral_density(kern, np.sqrt(lam))
        centers = np.array([[0.5, 0.5], [0.45, 0.55], [0.52, 0.48], [0.56, 0.5]])
        P = eval_fn(centers)
        approx = (P * weights) @ P.T
        for i in range(len(centers)):
            for j in range(len(centers)):
                exact = covariance(kern, centers[i] - centers[j])
                assert abs(approx[i, j] - exact) < 0.02 * kern.variance


class TestPriorDraw:
    def test_deterministic_per_seed(self, square_basis, kernel):
        a = prior_draw(square_basis, kernel, 42)
        b = prior_draw(square_basis, kernel, 42)
        c = prior_draw(square_basis, kernel, 43)
        assert np.array_equal(a, b)
        assert not np.array_equal(a, c)

    def test_draws_vanish_outside(self, blob_basis, blob_grid, kernel):
        # evaluating the drawn coefficients anywhere outside gives exactly 0
        from harmonicgp import prior_coefficients

        rng = np.random.default_rng(0)
        w = prior_coefficients(blob_basis, kernel, rng)
        jj, ii = np.nonzero(~blob_grid.mask)
        x0, y0 = blob_grid.origin
        pts = np.column_stack([x0 + ii * blob_grid.h, y0 + jj * blob_grid.h])
        vals = evaluate_basis(blob_basis, pts) @ w
        assert np.array_equal(vals, np.zeros(len(pts)))

    def test_monte_carlo_variance(self, square_basis, kernel):
        # empirical variance over 10k draws vs analytic prior variance
        lam = spectral_density(kernel, square_basis.frequencies())
        rng = np.random.default_rng(123)
        eps = rng.standard_normal((square_basis.m, 10_000))
        node = square_basis.grid.n_int // 2
        draws = square_basis.phi[:, node] @ (np.sqrt(lam)[:, None] * eps)
        analytic = float(square_basis.phi[:, node] ** 2 @ lam)
        assert np.var(draws) == pytest.approx(analytic, rel=0.05)


def test_cached_products_reused_across_theta(square_basis, kernel):
    # rebinding with new hyperparameters must not recompute the features
    model = ReducedRankModel(square_basis, kernel, 0.1)
    rng = np.random.default_rng(1)
    X = rng.uniform(0.2, 0.8, (15, 2))
    bound = model.bind(X, rng.standard_normal(15))
    rebound = bound._rebound(model.with_theta([0.1, -1.0, -2.0]))
    assert rebound.phi is bound.phi
    assert rebound._gram is bound._gram
