import numpy as np
import pytest

from app.config import MlvampConfig
from app.exceptions import ParameterDomainError
from app.models.glm import GaussianPrior, LinearChannel, LogisticChannel, TrueModel
from app.models.penalties import L1Penalty, L2Penalty, LogisticLoss, SquaredLoss
from app.models.spectra import BernoulliMismatch, IsoConstant, LogNormal
from app.services import mlvamp
from app.services.baselines import baseline_fit
from app.services.synthdata import generate_dataset


def _ridge_solution(ds, coef):
    X = ds.design_matrix()
    return np.linalg.solve(X.T @ X + coef * np.eye(ds.p), X.T @ ds.y)


@pytest.mark.parametrize("spectrum", [IsoConstant(), LogNormal(sigma_u_db=2.0), BernoulliMismatch()], ids=lambda s: s.kind)
def test_ridge_matches_normal_equations(spectrum, rng, vamp_cfg):
    ds = generate_dataset(TrueModel(p=100, N=200), spectrum, LinearChannel(sigma_d2=0.1), rng)
    f_in = L2Penalty(lam=1.0)
    result = mlvamp.fit(ds, f_in, SquaredLoss(), vamp_cfg)
    expected = _ridge_solution(ds, f_in.coef)
    assert result.converged
    assert np.linalg.norm(result.w_hat - expected) <= 1e-5 * np.linalg.norm(expected)


def test_ridge_with_more_features_than_samples(rng, vamp_cfg):
    ds = generate_dataset(TrueModel(p=120, N=60), IsoConstant(), LinearChannel(sigma_d2=0.1), rng)
    f_in = L2Penalty(lam=1.0, beta=ds.beta)
    result = mlvamp.fit(ds, f_in, SquaredLoss(), vamp_cfg)
    expected = _ridge_solution(ds, f_in.coef)
    assert np.linalg.norm(result.w_hat - expected) <= 1e-5 * np.linalg.norm(expected)
    assert result.kkt_residual <= 1e-6


def test_zero_outputs_give_zero_estimate(ridge_dataset, vamp_cfg):
    ds = ridge_dataset.model_copy(update={"y": np.zeros(ridge_dataset.N)})
    result = mlvamp.fit(ds, L2Penalty(lam=1.0), SquaredLoss(), vamp_cfg)
    assert np.max(np.abs(result.w_hat)) <= 1e-10


def test_first_sweep_sets_input_precision(ridge_dataset):
    cfg = MlvampConfig()
    f_in = L2Penalty(lam=1.0, beta=0.5)
    state = mlvamp.forward_backward_step(mlvamp.initial_state(ridge_dataset, cfg), ridge_dataset, f_in, SquaredLoss(), cfg)
    assert state.gamma_plus[0] == pytest.approx(f_in.coef, rel=1e-12)
    assert state.iteration == 1


def test_converged_state_is_a_fixed_point(ridge_dataset, vamp_cfg):
    f_in, f_out = L2Penalty(lam=1.0), SquaredLoss()
    result = mlvamp.fit(ridge_dataset, f_in, f_out, vamp_cfg)
    again = mlvamp.forward_backward_step(result.state, ridge_dataset, f_in, f_out, vamp_cfg)
    change = np.linalg.norm(again.messages() - result.state.messages()) / np.linalg.norm(result.state.messages())
    assert change <= 1e-8


def test_logistic_fit_satisfies_kkt(rng, vamp_cfg):
    ds = generate_dataset(TrueModel(p=50, N=200), IsoConstant(), LogisticChannel(), rng)
    result = mlvamp.fit(ds, L2Penalty(lam=1.0), LogisticLoss(), vamp_cfg)
    assert result.converged
    assert result.kkt_residual <= 1e-6


def test_logistic_fit_matches_newton_baseline(rng, vamp_cfg):
    ds = generate_dataset(TrueModel(p=50, N=200), IsoConstant(), LogisticChannel(), rng)
    f_in, f_out = L2Penalty(lam=1.0), LogisticLoss()
    w_vamp = mlvamp.fit(ds, f_in, f_out, vamp_cfg).w_hat
    w_newton = baseline_fit(ds, f_in, f_out)
    assert np.linalg.norm(w_vamp - w_newton) <= 1e-4 * np.linalg.norm(w_newton)


def test_lasso_fit_satisfies_kkt(rng, vamp_cfg):
    law = GaussianPrior()
    ds = generate_dataset(TrueModel(w0_law=law, p=100, N=200), IsoConstant(), LinearChannel(sigma_d2=0.1), rng)
    result = mlvamp.fit(ds, L1Penalty(lam=0.5), SquaredLoss(), vamp_cfg)
    assert result.converged
    assert result.kkt_residual <= 1e-5


def test_random_initializations_reach_the_same_estimate(rng, vamp_cfg):
    ds = generate_dataset(TrueModel(p=80, N=200), IsoConstant(), LogisticChannel(), rng)
    f_in, f_out = L2Penalty(lam=1.0), LogisticLoss()
    reference = mlvamp.fit(ds, f_in, f_out, vamp_cfg).w_hat
    for seed in range(5):
        init = mlvamp.random_state(ds, vamp_cfg, np.random.default_rng(seed))
        result = mlvamp.fit(ds, f_in, f_out, vamp_cfg, init=init)
        assert result.converged
        assert np.linalg.norm(result.w_hat - reference) <= 1e-6 * np.linalg.norm(reference)


def test_history_records_every_sweep(ridge_dataset, vamp_cfg):
    result = mlvamp.fit(ridge_dataset, L2Penalty(lam=1.0), SquaredLoss(), vamp_cfg)
    assert len(result.history) == result.iterations
    assert [r.iteration for r in result.history] == list(range(1, result.iterations + 1))


def test_iteration_cap_reports_unconverged(ridge_dataset):
    result = mlvamp.fit(ridge_dataset, L2Penalty(lam=1.0), SquaredLoss(), MlvampConfig(max_iters=2))
    assert not result.converged
    assert result.iterations == 2


def test_objective_is_minimized(ridge_dataset, vamp_cfg):
    f_in, f_out = L2Penalty(lam=1.0), SquaredLoss()
    w_hat = mlvamp.fit(ridge_dataset, f_in, f_out, vamp_cfg).w_hat
    base = mlvamp.objective(ridge_dataset, w_hat, f_in, f_out)
    rng = np.random.default_rng(3)
    for _ in range(5):
        w = w_hat + 1e-3 * rng.standard_normal(ridge_dataset.p)
        assert mlvamp.objective(ridge_dataset, w, f_in, f_out) >= base


def test_swapped_penalties_rejected(ridge_dataset):
    with pytest.raises(ParameterDomainError):
        mlvamp.fit(ridge_dataset, SquaredLoss(), L2Penalty())
