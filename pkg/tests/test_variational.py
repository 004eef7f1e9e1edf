import numpy as np
import pytest

from harmonicgp import (
    BernoulliLikelihood,
    FitOptions,
    GaussianLikelihood,
    GaussianVariational,
    KernelSpec,
    PoissonLikelihood,
    ReducedRankModel,
    bernoulli_probability,
    elbo,
    evaluate_basis,
    expected_loglik,
    expected_loglik_quadrature,
    fit_variational,
    kl_to_prior,
    latent_marginals,
    nlml,
    optimal_gaussian_q,
    predict,
    predict_latent,
    prior_variational,
    spectral_density,
)
from harmonicgp.variational import _ElboProblem
from oracles import central_difference, gaussian_logpdf


def _training_setup(basis, kernel, seed=0, n=25, noise=0.05):
    rng = np.random.default_rng(seed)
    X = rng.uniform(0.15, 0.85, (n, 2))
    y = rng.standard_normal(n)
    phi = evaluate_basis(basis, X)
    lam = spectral_density(kernel, basis.frequencies())
    return X, y, phi, lam, noise


class TestLatentMarginals:
    def test_prior_marginals(self, square_basis, kernel):
        lam = spectral_density(kernel, square_basis.frequencies())
        q = prior_variational(lam)
        phi = np.random.default_rng(0).standard_normal((7, square_basis.m))
        mu, v = latent_marginals(q, phi)
        assert np.array_equal(mu, np.zeros(7))
        assert np.allclose(v, phi**2 @ lam, rtol=1e-12)

    def test_zero_feature_row_gives_exact_zero(self):
        q = GaussianVariational(np.array([1.0, -2.0]), np.array([[1.0, 0.0], [0.3, 0.5]]))
        mu, v = latent_marginals(q, np.zeros((3, 2)))
        assert np.array_equal(mu, np.zeros(3))
        assert np.array_equal(v, np.zeros(3))

    def test_rank_one_arithmetic(self):
        q = GaussianVariational(np.array([3.0]), np.array([[0.5]]))
        mu, v = latent_marginals(q, np.array([[2.0]]))
        assert mu[0] == 6.0
        assert v[0] == 1.0

    def test_dimension_mismatch(self):
        q = GaussianVariational(np.zeros(3), np.eye(3))
        with pytest.raises(ValueError):
            latent_marginals(q, np.zeros((2, 4)))


class TestGaussianVariationalInvariants:
    def test_rejects_upper_triangle(self):
        with pytest.raises(ValueError):
            GaussianVariational(np.zeros(2), np.array([[1.0, 0.5], [0.0, 1.0]]))

    def test_rejects_non_positive_diagonal(self):
        with pytest.raises(ValueError):
            GaussianVariational(np.zeros(2), np.array([[1.0, 0.0], [0.5, 0.0]]))

    def test_covariance_is_spd(self):
        rng = np.random.default_rng(1)
        L = np.tril(rng.standard_normal((4, 4)))
        L[np.diag_indices(4)] = np.abs(L[np.diag_indices(4)]) + 0.1
        q = GaussianVariational(rng.standard_normal(4), L)
        w = np.linalg.eigvalsh(q.covariance())
        assert (w > 0).all()


class TestExpectedLoglik:
    def test_poisson_single_point(self):
        lik = PoissonLikelihood(exposure=1.0)
        val = expected_loglik(lik, np.array([0.0]), np.array([0.0]), np.array([0.0]))
        assert val == pytest.approx(-1.0, rel=1e-15)

    def test_gaussian_at_mean_no_variance(self):
        lik = GaussianLikelihood(1.0)
        val = expected_loglik(lik, np.array([0.7]), np.array([0.7]), np.array([0.0]))
        assert val == pytest.approx(-0.5 * np.log(2 * np.pi), rel=1e-15)

    def test_bernoulli_logit_matches_monte_carlo(self):
        # E[log sigmoid(f)], f ~ N(0,1): frozen 1e7-sample Monte-Carlo result
        # -0.80622086 with standard error 1.65e-4 (generator PCG64, seed
        # 20240814); the quadrature value must land within 3 standard errors
        lik = BernoulliLikelihood("logit")
        val = expected_loglik(lik, np.array([1.0]), np.array([0.0]), np.array([1.0]))
        assert abs(val - (-0.80622086)) < 3 * 1.65e-4

    def test_poisson_closed_form_equals_quadrature(self):
        rng = np.random.default_rng(2)
        lik = PoissonLikelihood(exposure=rng.uniform(0.5, 2.0, 50))
        y = rng.poisson(2.0, 50).astype(float)
        mu = rng.uniform(-2, 2, 50)
        v = rng.uniform(0, 2, 50)
        closed = expected_loglik(lik, y, mu, v)
        quad = expected_loglik_quadrature(lik, y, mu, v)
        assert closed == pytest.approx(quad, abs=1e-6)

    def test_gaussian_closed_form_equals_quadrature(self):
        rng = np.random.default_rng(3)
        lik = GaussianLikelihood(0.3)
        y, mu, v = rng.standard_normal(20), rng.standard_normal(20), rng.uniform(0, 1.5, 20)
        assert expected_loglik(lik, y, mu, v) == pytest.approx(
            expected_loglik_quadrature(lik, y, mu, v), abs=1e-8
        )

    def test_poisson_validation(self):
        lik = PoissonLikelihood()
        with pytest.raises(ValueError):
            expected_loglik(lik, np.array([-1.0]), np.zeros(1), np.zeros(1))
        with pytest.raises(ValueError):
            expected_loglik(lik, np.array([1.5]), np.zeros(1), np.zeros(1))
        with pytest.raises(ValueError):
            PoissonLikelihood(exposure=0.0)

    def test_bernoulli_validation(self):
        with pytest.raises(ValueError):
            expected_loglik(BernoulliLikelihood(), np.array([2.0]), np.zeros(1), np.zeros(1))
        with pytest.raises(ValueError):
            BernoulliLikelihood("cauchit")

    def test_negative_variance_rejected(self):
        with pytest.raises(ValueError):
            expected_loglik(GaussianLikelihood(1.0), np.zeros(1), np.zeros(1), np.array([-0.1]))


class TestKl:
    def test_prior_gives_zero(self):
        lam = np.array([0.5, 1.5, 4.0])
        assert abs(kl_to_prior(prior_variational(lam), lam)) < 1e-12

    def test_scalar_case(self):
        q = GaussianVariational(np.array([1.0]), np.array([[1.0]]))
        assert kl_to_prior(q, np.array([1.0])) == pytest.approx(0.5, rel=1e-14)

    def test_non_negative_over_random_q(self):
        rng = np.random.default_rng(7)
        for _ in range(25):
            m = rng.integers(1, 6)
            L = np.tril(rng.standard_normal((m, m)))
            L[np.diag_indices(m)] = np.abs(L[np.diag_indices(m)]) + 0.05
            q = GaussianVariational(rng.standard_normal(m), L)
            assert kl_to_prior(q, rng.uniform(0.1, 3.0, m)) >= -1e-12


class TestElboAndOptimalQ:
    def test_optimal_q_scalar_case(self):
        q = optimal_gaussian_q(np.array([[1.0]]), np.array([1.0]), 1.0, np.array([1.0]))
        assert q.mean[0] == pytest.approx(0.5, rel=1e-12)
        assert q.covariance()[0, 0] == pytest.approx(0.5, rel=1e-12)

    def test_optimal_q_zero_targets(self, square_basis, kernel):
        _, y, phi, lam, noise = _training_setup(square_basis, kernel, seed=5)
        q = optimal_gaussian_q(phi, np.zeros_like(y), noise, lam)
        assert np.array_equal(q.mean, np.zeros(square_basis.m))
        sigma_oracle = np.linalg.inv(np.diag(1 / lam) + phi.T @ phi / noise)
        assert np.abs(q.covariance() - sigma_oracle).max() < 1e-10

    def test_posterior_mean_reproduces_regression_predictions(self, square_basis, kernel):
        X, y, phi, lam, noise = _training_setup(square_basis, kernel, seed=6)
        model = ReducedRankModel(square_basis, kernel, noise)
        q = optimal_gaussian_q(phi, y, noise, lam)
        mean, _ = predict(model, X, y, X)
        assert np.abs(phi @ q.mean - mean).max() < 1e-9

    def test_elbo_at_optimum_equals_collapsed_bound(self, square_basis, kernel):
        _, y, phi, lam, noise = _training_setup(square_basis, kernel, seed=7)
        q = optimal_gaussian_q(phi, y, noise, lam)
        bound = elbo(q, phi, y, GaussianLikelihood(noise), lam)
        # collapsed bound: log N(y | 0, Phi Lambda Phi^T + noise I); the
        # trace term vanishes because K_ff is exactly the low-rank product
        collapsed = gaussian_logpdf(y, (phi * lam) @ phi.T + noise * np.eye(len(y)))
        assert bound == pytest.approx(collapsed, abs=1e-8)

    def test_elbo_never_exceeds_log_evidence(self, square_basis, kernel):
        X, y, phi, lam, noise = _training_setup(square_basis, kernel, seed=8)
        model = ReducedRankModel(square_basis, kernel, noise)
        evidence = -nlml(model, X, y)
        rng = np.random.default_rng(9)
        for _ in range(20):
            L = np.tril(rng.standard_normal((square_basis.m, square_basis.m)) * 0.1)
            L[np.diag_indices(square_basis.m)] = rng.uniform(0.05, 1.0, square_basis.m)
            q = GaussianVariational(rng.standard_normal(square_basis.m) * 0.5, L)
            assert elbo(q, phi, y, GaussianLikelihood(noise), lam) <= evidence + 1e-10

    def test_zero_data_elbo_is_zero_at_prior(self, kernel):
        lam = np.array([1.0, 0.3, 0.07])
        q = prior_variational(lam)
        val = elbo(q, np.zeros((0, 3)), np.zeros(0), GaussianLikelihood(0.1), lam)
        assert abs(val) < 1e-12


class TestPredictLatent:
    def test_boundary_is_exactly_zero(self, blob_basis, blob_grid):
        q = GaussianVariational(
            np.random.default_rng(0).standard_normal(blob_basis.m), np.eye(blob_basis.m)
        )
        jj, ii = np.nonzero(~blob_grid.mask)
        x0, y0 = blob_grid.origin
        pts = np.column_stack([x0 + ii * blob_grid.h, y0 + jj * blob_grid.h])
        mu, v = predict_latent(q, blob_basis, pts)
        assert np.array_equal(mu, np.zeros(len(pts)))
        assert np.array_equal(v, np.zeros(len(pts)))

    def test_matches_regression_predictions(self, square_basis, kernel):
        X, y, phi, lam, noise = _training_setup(square_basis, kernel, seed=10)
        model = ReducedRankModel(square_basis, kernel, noise)
        q = optimal_gaussian_q(phi, y, noise, lam)
        Xs = np.random.default_rng(11).uniform(0.1, 0.9, (9, 2))
        mu, v = predict_latent(q, square_basis, Xs)
        mean, var = predict(model, X, y, Xs)
        assert np.abs(mu - mean).max() < 1e-8
        assert np.abs(v - var).max() < 1e-8

    def test_prior_q_gives_prior_marginals(self, square_basis, kernel):
        lam = spectral_density(kernel, square_basis.frequencies())
        q = prior_variational(lam)
        Xs = np.array([[0.5, 0.5], [0.3, 0.7]])
        mu, v = predict_latent(q, square_basis, Xs)
        Ps = evaluate_basis(square_basis, Xs)
        assert np.array_equal(mu, np.zeros(2))
        assert np.allclose(v, Ps**2 @ lam, rtol=1e-12)


class TestFitVariational:
    def test_gaussian_reaches_closed_form_optimum(self, square_basis, kernel):
        _, y, phi, lam, noise = _training_setup(square_basis, kernel, seed=12)
        lik = GaussianLikelihood(noise)
        fit = fit_variational(phi, y, lik, lam)
        target = elbo(optimal_gaussian_q(phi, y, noise, lam), phi, y, lik, lam)
        assert target - fit.elbo < 1e-6
        assert fit.elbo <= target + 1e-9

    def test_elbo_not_below_start(self, square_basis, kernel):
        _, y, phi, lam, noise = _training_setup(square_basis, kernel, seed=13)
        lik = GaussianLikelihood(noise)
        start = elbo(prior_variational(lam), phi, y, lik, lam)
        fit = fit_variational(phi, y, lik, lam)
        assert fit.elbo >= start - 1e-12

    def test_separated_labels_on_interval(self):
        # 1D interval domain with analytic sine features: predictive class
        # probabilities must side with the labels after convergence
        m = 8
        j = np.arange(1, m + 1)
        lam_sq = (j * np.pi) ** 2
        kern = KernelSpec("matern32", variance=4.0, lengthscale=0.3, d=1)
        lam = spectral_density(kern, np.sqrt(lam_sq))
        x = np.array([0.15, 0.25, 0.35, 0.65, 0.75, 0.85])
        y = np.array([0.0, 0.0, 0.0, 1.0, 1.0, 1.0])
        phi = np.sqrt(2.0) * np.sin(np.outer(x, j * np.pi))
        fit = fit_variational(phi, y, BernoulliLikelihood("logit"), lam)
        mu, v = latent_marginals(fit.q, phi)
        probs = bernoulli_probability(mu, v)
        assert (probs[y == 1] > 0.5).all()
        assert (probs[y == 0] < 0.5).all()

    def test_poisson_fit_improves_elbo(self, square_basis, kernel):
        rng = np.random.default_rng(14)
        X = rng.uniform(0.1, 0.9, (40, 2))
        phi = evaluate_basis(square_basis, X)
        lam = spectral_density(kernel, square_basis.frequencies())
        y = rng.poisson(1.0, 40).astype(float)
        lik = PoissonLikelihood(exposure=1.0)
        start = elbo(prior_variational(lam), phi, y, lik, lam)
        fit = fit_variational(phi, y, lik, lam)
        assert fit.elbo > start

    def test_joint_hyperparameter_learning_improves_elbo(self, square_basis):
        kern = KernelSpec("matern32", variance=0.5, lengthscale=0.5)
        rng = np.random.default_rng(15)
        X = rng.uniform(0.1, 0.9, (30, 2))
        phi = evaluate_basis(square_basis, X)
        lam = spectral_density(kern, square_basis.frequencies())
        y = (rng.random(30) > 0.5).astype(float)
        lik = BernoulliLikelihood()
        opts = FitOptions(
            learn_hyperparameters=True, kernel=kern, frequencies=square_basis.frequencies()
        )
        fixed = fit_variational(phi, y, lik, lam)
        joint = fit_variational(phi, y, lik, lam, opts)
        assert joint.elbo >= fixed.elbo - 1e-9
        assert joint.kernel.lengthscale != kern.lengthscale

    def test_nested_feature_sets_monotone_elbo(self, square_basis, kernel):
        _, y, phi, lam, noise = _training_setup(square_basis, kernel, seed=16)
        lik = GaussianLikelihood(noise)
        values = []
        for m in (4, 8, 16, 32):
            q = optimal_gaussian_q(phi[:, :m], y, noise, lam[:m])
            values.append(elbo(q, phi[:, :m], y, lik, lam[:m]))
        assert (np.diff(values) >= -1e-10).all()

    def test_non_finite_start_rejected(self, square_basis, kernel):
        _, y, phi, lam, noise = _training_setup(square_basis, kernel, seed=17)
        with np.errstate(invalid="ignore"), pytest.raises(ValueError):
            fit_variational(phi, y * np.inf, GaussianLikelihood(noise), lam)


class TestObjectiveGradients:
    @pytest.mark.parametrize(
        "lik_name", ["gaussian", "bernoulli_logit", "bernoulli_probit", "poisson"]
    )
    def test_gradient_matches_finite_differences(self, lik_name, square_basis):
        rng = np.random.default_rng(abs(hash(lik_name)) % 1000)
        m = 5
        phi = rng.standard_normal((20, m))
        freq = np.sort(rng.uniform(1.0, 9.0, m))
        kern = KernelSpec("matern52", variance=1.2, lengthscale=0.4)
        lam = spectral_density(kern, freq)
        lik = {
            "gaussian": GaussianLikelihood(0.2),
            "bernoulli_logit": BernoulliLikelihood("logit"),
            "bernoulli_probit": BernoulliLikelihood("probit"),
            "poisson": PoissonLikelihood(exposure=1.4),
        }[lik_name]
        if lik_name == "gaussian":
            y = rng.standard_normal(20)
        elif lik_name == "poisson":
            y = rng.poisson(1.0, 20).astype(float)
        else:
            y = (rng.random(20) > 0.5).astype(float)
        opts = FitOptions(learn_hyperparameters=True, kernel=kern, frequencies=freq)
        prob = _ElboProblem(phi, y, lik, lam, opts)
        p = prob.initial_point() + 0.25 * rng.standard_normal(prob.initial_point().size)
        _, grad = prob.negative_elbo(p)
        fd = central_difference(lambda q: prob.negative_elbo(q)[0], p)
        scale = max(np.abs(fd).max(), 1e-8)
        assert np.abs(grad - fd).max() / scale < 1e-4


class TestBernoulliProbability:
    def test_zero_variance_uses_link_exactly(self):
        assert bernoulli_probability(np.zeros(1), np.zeros(1), "logit")[0] == 0.5
        assert bernoulli_probability(np.zeros(1), np.zeros(1), "probit")[0] == 0.5

    def test_probit_closed_form(self):
        # E[Phi(f)] for f ~ N(mu, v) has the closed form Phi(mu / sqrt(1+v))
        from scipy.special import ndtr

        mu = np.array([0.4, -1.2, 2.0])
        v = np.array([0.5, 1.5, 0.2])
        got = bernoulli_probability(mu, v, "probit")
        assert np.allclose(got, ndtr(mu / np.sqrt(1 + v)), atol=1e-9)

    def test_monotone_in_mean(self):
        mu = np.linspace(-3, 3, 21)
        p = bernoulli_probability(mu, np.full(21, 0.7))
        assert (np.diff(p) > 0).all()
