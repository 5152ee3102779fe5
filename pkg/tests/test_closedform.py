import numpy as np
import pytest

from app.exceptions import ParameterDomainError, PoleError
from app.models.spectra import BernoulliMismatch, IsoConstant, MpLaw
from app.services import closedform
from app.services.spectra import g0, mp_stieltjes, mp_stieltjes_derivative


def test_ridgeless_spot_values():
    assert closedform.ridgeless_gen(0.5, 0.1) == pytest.approx(0.2)
    assert closedform.ridgeless_gen(2.0, 0.1) == pytest.approx(0.7)


def test_ridgeless_pole_at_unit_beta():
    with pytest.raises(PoleError):
        closedform.ridgeless_gen(1.0, 0.1)
    below, above = closedform.one_sided_limits(closedform.ridgeless_gen, sigma_d2=0.1)
    assert below > 1e4 and above > 1e4


def test_ridgeless_rejects_nonpositive_beta():
    with pytest.raises(ParameterDomainError):
        closedform.ridgeless_gen(0.0, 0.1)


@pytest.mark.parametrize("beta", [0.3, 0.7, 1.5, 3.0])
def test_z_is_the_stieltjes_transform(beta):
    c = closedform.ridge_constants(beta, 0.1)
    law = MpLaw(beta=beta)
    assert c.G == pytest.approx(mp_stieltjes(law, -c.gamma1_plus), rel=1e-8)
    assert c.Gprime == pytest.approx(mp_stieltjes_derivative(law, -c.gamma1_plus), rel=1e-7)
    assert c.kappa == pytest.approx(c.Gprime / c.G ** 2)


@pytest.mark.parametrize("beta", [0.25, 0.5, 2.0, 4.0])
def test_z_approaches_origin_value(beta):
    c = closedform.ridge_constants(beta, 1e-10)
    assert c.G == pytest.approx(g0(beta), rel=1e-4)


def test_small_lambda_limits_below_unit_beta():
    beta, sigma_d2 = 0.5, 0.1
    c = closedform.ridge_constants(beta, 1e-8, sigma_d2=sigma_d2)
    assert c.gamma1_minus == pytest.approx((1.0 - beta) / beta, rel=1e-3)
    assert c.tau1_minus == pytest.approx(sigma_d2 * g0(beta), rel=1e-3)
    assert closedform.squared_error_gen(c, IsoConstant()) == pytest.approx(closedform.ridgeless_gen(beta, sigma_d2), rel=1e-3)


def test_small_lambda_limits_above_unit_beta():
    beta, sigma_d2 = 2.0, 0.1
    c = closedform.ridge_constants(beta, 1e-8, sigma_d2=sigma_d2)
    assert c.tau1_minus == pytest.approx(beta * sigma_d2 * g0(beta) + (beta - 1.0), rel=1e-3)
    assert closedform.squared_error_gen(c, IsoConstant()) == pytest.approx(closedform.ridgeless_gen(beta, sigma_d2), rel=1e-3)


def test_ridge_error_is_continuous_through_unit_beta():
    constants, errors = closedform.ridge_report(1.0, 0.1, sigma_d2=0.1)
    assert len(constants) == 2 and len(errors) == 2
    assert errors[0] == pytest.approx(errors[1], rel=1e-3)


def test_ridge_report_single_value_away_from_unit_beta():
    constants, errors = closedform.ridge_report(0.5, 0.1, sigma_d2=0.1)
    assert len(errors) == 1
    assert errors[0] == pytest.approx(closedform.squared_error_gen(constants[0], IsoConstant()))


def test_ridge_constants_reject_bad_inputs():
    with pytest.raises(ParameterDomainError):
        closedform.ridge_constants(0.5, 0.0)
    with pytest.raises(ParameterDomainError):
        closedform.ridge_constants(0.5, 0.1, sigma_d2=-1.0)


def test_squared_error_without_signal_is_the_noise():
    c = closedform.ridge_constants(0.5, 0.1, sigma_d2=0.3)
    empty = c.model_copy(update={"k22": 0.0, "tau1_minus": 0.0})
    assert closedform.squared_error_gen(empty, IsoConstant()) == pytest.approx(0.3)


def test_mismatch_is_affine_in_epsilon():
    c = closedform.ridge_constants(0.5, 0.1, sigma_d2=0.1)
    eps = np.linspace(0.0, 1.0, 11)
    values = np.array([closedform.mismatch_gen(c, e) for e in eps])
    slope, intercept = np.polyfit(eps, values, 1)
    np.testing.assert_allclose(values, slope * eps + intercept, atol=1e-12)


def test_mismatch_endpoints():
    c = closedform.ridge_constants(0.5, 0.1, sigma_d2=0.1)
    assert closedform.mismatch_gen(c, 0.0) == pytest.approx(
        closedform.squared_error_gen(c, BernoulliMismatch(epsilon=0.0)), rel=1e-12
    )
    assert closedform.mismatch_gen(c, 1.0) == pytest.approx(0.5 * c.k22 + 0.1, rel=1e-12)
    with pytest.raises(ParameterDomainError):
        closedform.mismatch_gen(c, 1.5)


def test_solve_z_needs_negative_u():
    with pytest.raises(ParameterDomainError):
        closedform.solve_z(0.5, 0.1)
