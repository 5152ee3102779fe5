import numpy as np
import pytest

from app.exceptions import ParameterDomainError
from app.models.glm import (
    BernoulliGaussianPrior,
    GaussianPrior,
    LinearChannel,
    LogisticChannel,
    TanhChannel,
    TrueModel,
)
from app.models.spectra import IsoConstant, LogNormal
from app.services.synthdata import (
    channel_output_atoms,
    draw_test_scores,
    empirical_test_error,
    generate_dataset,
    generate_test_pairs,
    normalized_db,
    prior_nodes,
    sample_haar_orthogonal,
)


def test_haar_matrix_is_orthogonal(rng):
    Q = sample_haar_orthogonal(50, rng)
    np.testing.assert_allclose(Q.T @ Q, np.eye(50), atol=1e-10)


def test_factors_reconstruct_u(rng):
    model = TrueModel(p=30, N=20)
    ds = generate_dataset(model, LogNormal(), LinearChannel(sigma_d2=0.1), rng)
    k = min(ds.N, ds.p)
    U = (ds.V2[:, :k] * ds.s_plus[:k]) @ ds.V1[:k, :]
    np.testing.assert_allclose(U, ds.U, atol=1e-10)
    np.testing.assert_allclose(ds.V0 @ ds.V0.T, np.eye(30), atol=1e-10)
    assert np.all(ds.s_minus[k:] == 0.0)


def test_noiseless_linear_outputs_are_scores(rng):
    model = TrueModel(p=40, N=60)
    ds = generate_dataset(model, IsoConstant(sigma_tr=2.0), LinearChannel(), rng)
    np.testing.assert_allclose(ds.y, ds.design_matrix() @ ds.w0, atol=1e-12)


def test_logistic_outputs_are_binary(rng):
    ds = generate_dataset(TrueModel(p=20, N=100), IsoConstant(), LogisticChannel(), rng)
    assert set(np.unique(ds.y)) <= {0.0, 1.0}


def test_dataset_arrays_are_read_only(ridge_dataset):
    with pytest.raises(ValueError):
        ridge_dataset.y[0] = 1.0


def test_true_coefficients_predict_noiseless_test_outputs(rng):
    ds = generate_dataset(TrueModel(p=40, N=60), LogNormal(rho=0.5), TanhChannel(), rng)
    y, y_hat = generate_test_pairs(ds, ds.w0, 500, rng)
    assert y.shape == y_hat.shape == (500,)
    np.testing.assert_allclose(y, y_hat, atol=1e-12)


def test_test_pairs_reject_wrong_shape(ridge_dataset, rng):
    with pytest.raises(ParameterDomainError):
        generate_test_pairs(ridge_dataset, np.zeros(3), 10, rng)


def test_empirical_error_metrics():
    y = np.array([1.0, -1.0, 2.0, 0.0])
    y_hat = np.array([1.0, 1.0, 2.0, 0.0])
    assert empirical_test_error((y, y_hat)) == pytest.approx(1.0)
    assert empirical_test_error((y, y_hat), "zero_one") == pytest.approx(0.25)
    assert empirical_test_error((y, y_hat), "squared_db") == pytest.approx(normalized_db(1.0, 1.5))
    with pytest.raises(ParameterDomainError):
        empirical_test_error((y, y_hat), "absolute")


def test_normalized_db():
    assert normalized_db(0.1, 1.0) == pytest.approx(-10.0)


def test_bernoulli_gaussian_prior_nodes():
    law = BernoulliGaussianPrior(sparsity=0.2, var=2.0)
    x, w = prior_nodes(law, 20)
    assert w.sum() == pytest.approx(1.0)
    assert np.sum(w * x ** 2) == pytest.approx(law.second_moment)
    x, w = prior_nodes(GaussianPrior(mean=1.0, var=0.5), 20)
    assert np.sum(w * x) == pytest.approx(1.0)


def test_output_atoms_integrate_to_one():
    p = np.linspace(-2.0, 2.0, 5)
    for channel in (LogisticChannel(), LinearChannel(sigma_d2=0.3), TanhChannel()):
        y, w = channel_output_atoms(channel, p, 10)
        np.testing.assert_allclose(w.sum(axis=-1), 1.0)
        assert y.shape[:-1] == p.shape


def test_design_columns_have_variance_sigma2_over_p(rng):
    ds = generate_dataset(TrueModel(p=1000, N=500), IsoConstant(sigma_tr=2.0, sigma_ts=2.0), LinearChannel(), rng)
    X = ds.design_matrix()
    assert np.mean(X ** 2) == pytest.approx(4.0 / 1000, rel=0.05)


def test_test_scores_follow_the_gram_covariance(rng):
    ds = generate_dataset(TrueModel(p=300, N=600), LogNormal(rho=0.5), LinearChannel(sigma_d2=0.1), rng)
    w_hat = 0.5 * ds.w0 + 0.3 * rng.standard_normal(ds.p)
    z, z_hat = draw_test_scores(ds, w_hat, 1_000_000, rng)
    a = ds.s_ts * (ds.V0 @ ds.w0)
    b = ds.s_ts * (ds.V0 @ w_hat)
    expected = np.array([[a @ a, a @ b], [a @ b, b @ b]]) / ds.p
    np.testing.assert_allclose(np.cov(np.stack([z, z_hat]), bias=True), expected, rtol=0.01)
