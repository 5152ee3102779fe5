import numpy as np
import pytest
from scipy import stats

from app.exceptions import ParameterDomainError, PoleError
from app.models.spectra import BernoulliMismatch, IsoConstant, LogNormal, MpLaw
from app.services.spectra import (
    g0,
    mp_cdf,
    mp_integrate,
    mp_side_nodes,
    mp_stieltjes,
    pad_singular_values,
    rescale_spectrum,
    sample_joint_spectrum,
    sample_mp_singulars,
    sample_mp_squared,
    second_moments,
    spectrum_nodes,
    stieltjes_at_origin,
)


@pytest.mark.parametrize("beta", [0.25, 0.5, 2.0, 4.0])
def test_stieltjes_origin_matches_closed_form(beta):
    assert abs(stieltjes_at_origin(MpLaw(beta=beta)) - beta / abs(beta - 1.0)) <= 1e-6


@pytest.mark.parametrize("beta", [0.3, 1.0, 2.5])
def test_positive_law_has_unit_mass(beta):
    law = MpLaw(beta=beta)
    assert mp_integrate(law, lambda lam: np.ones_like(lam)) == pytest.approx(1.0, abs=1e-10)


def test_origin_pole_at_unit_beta():
    with pytest.raises(PoleError):
        stieltjes_at_origin(MpLaw(beta=1.0))
    with pytest.raises(PoleError):
        g0(1.0)


def test_stieltjes_rejects_points_on_support():
    law = MpLaw(beta=0.5)
    with pytest.raises(ParameterDomainError):
        mp_stieltjes(law, law.b)


@pytest.mark.parametrize("beta,side,zero", [(0.5, "plus", 0.5), (0.5, "minus", 0.0), (4.0, "minus", 0.75), (4.0, "plus", 0.0)])
def test_side_nodes_carry_zero_mass(beta, side, zero):
    s, w = mp_side_nodes(MpLaw(beta=beta), side)
    assert w.sum() == pytest.approx(1.0, abs=1e-12)
    assert w[s == 0].sum() == pytest.approx(zero, abs=1e-12)


def test_sampled_squares_follow_the_law():
    law = MpLaw(beta=0.5)
    draws = sample_mp_squared(law, "minus", 20_000, np.random.default_rng(0))
    ks = stats.kstest(draws * law.beta, lambda x: mp_cdf(law, x)).statistic
    assert ks < 0.02


def test_matrix_eigenvalues_follow_the_law():
    law = MpLaw(beta=0.5)
    s_plus, s_minus = sample_mp_singulars(law, 2000, 1000, np.random.default_rng(1))
    assert s_plus.shape == (2000,) and s_minus.shape == (1000,)
    ks = stats.kstest(s_minus ** 2 * law.beta, lambda x: mp_cdf(law, x)).statistic
    assert ks < 0.02


def test_padding_puts_structural_zeros_last():
    s_plus, s_minus = pad_singular_values(np.array([2.0, 1.0, 1e-15]), N=5, p=3)
    np.testing.assert_array_equal(s_plus, [2.0, 1.0, 0.0, 0.0, 0.0])
    np.testing.assert_array_equal(s_minus, [2.0, 1.0, 0.0])


def test_bernoulli_without_mismatch_has_equal_pairs(rng):
    sample = sample_joint_spectrum(BernoulliMismatch(epsilon=0.0), 1000, rng)
    np.testing.assert_array_equal(sample.s_tr, sample.s_ts)
    s_tr, s_ts, w = spectrum_nodes(BernoulliMismatch(epsilon=0.0))
    np.testing.assert_array_equal(s_tr, s_ts)
    assert w.sum() == pytest.approx(1.0)


def test_bernoulli_flip_rate(rng):
    sample = sample_joint_spectrum(BernoulliMismatch(epsilon=0.3), 200_000, rng)
    assert np.mean(sample.s_tr != sample.s_ts) == pytest.approx(0.3, abs=0.01)


def test_lognormal_db_correlation(rng):
    model = LogNormal(A=1.0, sigma_u_db=3.0, rho=0.5)
    sample = sample_joint_spectrum(model, 200_000, rng)
    u_tr = 10 * np.log10(sample.s_tr ** 2)
    u_ts = 10 * np.log10(sample.s_ts ** 2)
    assert np.corrcoef(u_tr, u_ts)[0, 1] == pytest.approx(0.5, abs=0.02)
    assert np.std(u_tr) == pytest.approx(3.0, rel=0.02)


def test_lognormal_nodes_reproduce_second_moment():
    model = LogNormal(A=2.0, sigma_u_db=3.0, rho=0.8)
    s_tr, s_ts, w = spectrum_nodes(model)
    m_tr, m_ts = second_moments(model)
    assert np.sum(w * s_tr ** 2) == pytest.approx(m_tr, rel=1e-8)
    assert np.sum(w * s_ts ** 2) == pytest.approx(m_ts, rel=1e-8)


def test_sample_is_read_only(rng):
    sample = sample_joint_spectrum(IsoConstant(), 4, rng)
    with pytest.raises(ValueError):
        sample.s_tr[0] = 2.0


def test_rescale_multiplies_squared_values():
    scaled = rescale_spectrum(IsoConstant(sigma_tr=1.0, sigma_ts=2.0), 9.0)
    assert scaled.sigma_tr == pytest.approx(3.0)
    assert scaled.sigma_ts == pytest.approx(6.0)
    assert rescale_spectrum(LogNormal(A=1.5), 2.0).A == pytest.approx(3.0)
    with pytest.raises(ParameterDomainError):
        rescale_spectrum(BernoulliMismatch(), 2.0)
