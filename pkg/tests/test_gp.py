import numpy as np
import pytest

from gptrack.gp import GpModel, SingularModelError, SqExpKernel, gp_fit, kernel_eval


def test_kernel_values():
    """Kernel values at zero and one lengthscale apart."""
    k = SqExpKernel(1.0, 1.0)
    assert kernel_eval(k, [2.0, 3.0], [2.0, 3.0]) == 1.0
    assert kernel_eval(k, [0.0, 0.0], [1.0, 0.0]) == pytest.approx(np.exp(-0.5), abs=1e-15)
    assert SqExpKernel(2.5, 0.3)([1.0], [1.0]) == 2.5


def test_kernel_rejects_bad_hyperparameters():
    """Kernel scale and lengthscale must be positive."""
    with pytest.raises(ValueError):
        SqExpKernel(0.0, 1.0)
    with pytest.raises(ValueError):
        SqExpKernel(1.0, -1.0)


def test_single_point_fit():
    """A single-point fit has the kernel as its mean."""
    model = gp_fit([0.0], [1.0], SqExpKernel(1.0, 1.0), 0.0)
    np.testing.assert_allclose(model.alpha, [1.0])
    assert model.mean(0.0) == pytest.approx(1.0)
    assert model.mean(1.0) == pytest.approx(np.exp(-0.5))
    assert abs(model.mean(100.0)) < 1e-10


def test_posterior_variance():
    """Posterior variance is zero at the data and the prior far away."""
    model = gp_fit([0.0], [1.0], SqExpKernel(1.0, 1.0), 0.0)
    assert model.variance(0.0) == pytest.approx(0.0, abs=1e-12)
    assert model.variance(100.0) == pytest.approx(1.0)
    assert model.variance(1.0) == pytest.approx(1.0 - np.exp(-1.0))


def test_duplicate_inputs_need_noise():
    """Duplicate inputs only factorise with noise."""
    k = SqExpKernel(1.0, 1.0)
    with pytest.raises(SingularModelError):
        GpModel([[1.0, 1.0], [1.0, 1.0]], [1.0, 1.0], k, noise=0.0)
    model = GpModel([[1.0, 1.0], [1.0, 1.0]], [1.0, 1.0], k, noise=1e-4)
    assert np.all(np.isfinite(model.alpha))


def test_mismatched_inputs_rejected():
    """Mismatched inputs and negative noise are rejected."""
    with pytest.raises(ValueError):
        GpModel([[0.0, 0.0]], [1.0, 2.0], SqExpKernel())
    with pytest.raises(ValueError):
        GpModel([[0.0, 0.0]], [1.0], SqExpKernel(), noise=-1.0)


def test_log_marginal_likelihood_closed_forms():
    """Single-point likelihoods match their closed forms."""
    model = gp_fit([0.0], [1.0], SqExpKernel(1.0, 1.0), 0.0)
    assert model.log_marginal_likelihood() == pytest.approx(-0.5 - 0.5 * np.log(2 * np.pi))
    assert model.log_marginal_likelihood() == pytest.approx(-1.41894, abs=1e-5)

    noise = 0.3
    noisy = gp_fit([0.0], [1.0], SqExpKernel(1.0, 1.0), noise)
    expected = -0.5 / (1 + noise) - 0.5 * np.log(1 + noise) - 0.5 * np.log(2 * np.pi)
    assert noisy.log_marginal_likelihood() == pytest.approx(expected)


def test_lml_gradient_trivial_cases():
    """The likelihood gradient vanishes where it should."""
    model = gp_fit([0.0], [1.0], SqExpKernel(1.0, 1.0), 0.0)
    np.testing.assert_allclose(model.lml_gradient([np.zeros((1, 1))]), [0.0])
    # ∂/∂σ of −½y²/σ − ½ log σ at σ = 1 vanishes
    np.testing.assert_allclose(model.lml_gradient([np.ones((1, 1))]), [0.0], atol=1e-12)
    # callables are evaluated lazily
    np.testing.assert_allclose(model.lml_gradient(lambda: [np.ones((1, 1))]), [0.0], atol=1e-12)


def test_lml_gradient_matches_finite_differences():
    """The likelihood gradient in the hyperparameters matches central differences."""
    rng = np.random.default_rng(7)
    X = rng.uniform(0, 3, (20, 2))
    y = rng.normal(size=20)
    noise = 0.1

    def lml(scale, lengthscale):
        return GpModel(X, y, SqExpKernel(scale, lengthscale), noise).log_marginal_likelihood()

    scale, lengthscale = 1.3, 0.7
    kernel = SqExpKernel(scale, lengthscale)
    analytic = GpModel(X, y, kernel, noise).lml_gradient(kernel.gram_derivatives(X))

    h = 1e-5
    numeric = [
        (lml(scale + h, lengthscale) - lml(scale - h, lengthscale)) / (2 * h),
        (lml(scale, lengthscale + h) - lml(scale, lengthscale - h)) / (2 * h),
    ]
    np.testing.assert_allclose(analytic, numeric, rtol=1e-5, atol=1e-8)


def test_interpolation_weights_reproduce_mean():
    """Interpolation weights times the targets give the mean."""
    rng = np.random.default_rng(1)
    X = rng.uniform(0, 5, (12, 2))
    y = rng.normal(size=12)
    model = GpModel(X, y, SqExpKernel(1.0, 1.5), 1e-3)
    Q = rng.uniform(0, 5, (6, 2))
    np.testing.assert_allclose(model.interpolation_weights(Q) @ y, model.mean(Q), atol=1e-10)


def test_kernel_query_gradient():
    """The kernel gradient in the query matches central differences."""
    k = SqExpKernel(1.0, 0.5)
    X = np.array([[0.0, 0.0], [1.0, 0.5]])
    q = np.array([0.3, -0.2])
    h = 1e-6
    numeric = np.stack([
        (k.matrix([q + [h, 0]], X)[0] - k.matrix([q - [h, 0]], X)[0]) / (2 * h),
        (k.matrix([q + [0, h]], X)[0] - k.matrix([q - [0, h]], X)[0]) / (2 * h),
    ], axis=1)
    np.testing.assert_allclose(k.gradient_wrt_query(q, X), numeric, rtol=1e-6, atol=1e-10)


def test_inverse_matches_dense_inverse():
    """The inverse from the Cholesky factor matches a dense inverse."""
    rng = np.random.default_rng(3)
    X = rng.uniform(0, 4, (15, 2))
    model = GpModel(X, rng.normal(size=15), SqExpKernel(1.2, 0.8), 0.05)
    expected = np.linalg.inv(model.K + 0.05 * np.eye(15))
    np.testing.assert_allclose(model.inverse(), expected, rtol=1e-8, atol=1e-10)
    np.testing.assert_array_equal(model.inverse(), model.inverse().T)


def test_lml_is_invariant_to_permuting_the_training_set():
    """Reordering the training set leaves the likelihood unchanged."""
    rng = np.random.default_rng(4)
    X = rng.uniform(0, 5, (25, 2))
    y = rng.normal(size=25)
    kernel = SqExpKernel(1.0, 0.9)
    perm = rng.permutation(25)
    a = GpModel(X, y, kernel, 0.1).log_marginal_likelihood()
    b = GpModel(X[perm], y[perm], kernel, 0.1).log_marginal_likelihood()
    assert b == pytest.approx(a, rel=1e-12, abs=1e-12)


def test_noise_free_fit_interpolates_training_points():
    """A noise-free fit reproduces its targets with zero variance."""
    X = np.array([[0.0, 0.0], [2.0, 0.0], [0.0, 2.0], [2.0, 2.0], [1.0, 3.5]])
    y = np.array([0.5, -1.0, 2.0, 0.25, 1.5])
    model = gp_fit(X, y, SqExpKernel(1.0, 0.7), 0.0)
    np.testing.assert_allclose(model.mean(X), y, atol=1e-9)
    np.testing.assert_allclose(model.variance(X), 0.0, atol=1e-9)
    assert model.variance([10.0, 10.0]) == pytest.approx(1.0)
