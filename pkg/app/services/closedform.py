"""Closed-form test errors for linear regression.

The ridge constants come from the R-transform of the positive-eigenvalue MP law.
With z = -G_mp(-c), c = lam / (sigma_tr2 beta) and u = -c, z solves

    1 / (beta (1 - z)) + 1 / z = u      beta <= 1
    beta / (beta - z) + 1 / z = u       beta > 1

on (-G0, 0), where the left side falls monotonically from 0 to -inf.
"""
import logging
from typing import Callable, List, Optional, Tuple, Union

import numpy as np
from scipy.optimize import brentq

from app.exceptions import ParameterDomainError, PoleError, SolverError
from app.models.results import RidgeConstants, SeFixedPoint
from app.models.spectra import IsoConstant, SpectrumModel
from app.services.spectra import g0, spectrum_nodes

logger = logging.getLogger(__name__)

UNIT_BETA_STEP = 1e-6
Z_RESIDUAL_TOL = 1e-10

Constants = Union[RidgeConstants, SeFixedPoint]


def _r_transform(beta: float, z: float) -> Tuple[float, float]:
    """R(z) and R'(z) of the positive-eigenvalue law"""
    if beta <= 1.0:
        return 1.0 / (beta * (1.0 - z)), 1.0 / (beta * (1.0 - z) ** 2)
    return beta / (beta - z), beta / (beta - z) ** 2


def solve_z(beta: float, u: float) -> float:
    """Root of R(z) + 1/z = u on the Stieltjes branch (z < 0)"""
    if not u < 0:
        raise ParameterDomainError(f"u must be negative, got {u}")

    def h(z: float) -> float:
        return _r_transform(beta, z)[0] + 1.0 / z - u

    if beta == 1.0:
        lo = -1.0
        while h(lo) <= 0:
            lo *= 2.0
            if lo < -1e300:
                raise SolverError("Could not bracket the z equation", details={"beta": beta, "u": u})
    else:
        lo = -g0(beta)
    hi = -np.finfo(float).tiny ** 0.25

    try:
        z = brentq(h, lo, hi, xtol=1e-300, rtol=4 * np.finfo(float).eps, maxiter=500)
    except ValueError as e:
        logger.error(f"z equation not bracketed for beta={beta}, u={u}: {e}")
        raise SolverError("z equation not bracketed", details={"beta": beta, "u": u}) from e

    residual = abs(h(z))
    if residual > Z_RESIDUAL_TOL * max(1.0, abs(u)):
        logger.error(f"z solve left residual {residual:.3e} at beta={beta}, u={u}")
        raise SolverError("z equation residual too large", details={"residual": residual})
    return float(z)


def ridge_constants(
    beta: float,
    lam: float,
    sigma_tr2: float = 1.0,
    var_w0: float = 1.0,
    sigma_d2: float = 0.0,
) -> RidgeConstants:
    """Fixed-point constants of ridge regression with an isotropic training spectrum"""
    for name, value in (("beta", beta), ("lam", lam), ("sigma_tr2", sigma_tr2)):
        if not value > 0:
            raise ParameterDomainError(f"{name} must be positive, got {value}")
    if var_w0 < 0 or sigma_d2 < 0:
        raise ParameterDomainError("var_w0 and sigma_d2 must be nonnegative")

    c = lam / (sigma_tr2 * beta)
    u = -c
    z = solve_z(beta, u)
    G = -z
    Rp = _r_transform(beta, z)[1]
    Gprime = 1.0 / (1.0 / z ** 2 - Rp)

    if beta <= 1.0:
        alpha1_minus = c * G
        a2 = c ** 2 * Gprime - (c * G) ** 2
        b2 = G - c * Gprime
    else:
        # the p side carries zero mass q0 where the ridge shrinkage is 1
        q0 = 1.0 - 1.0 / beta
        alpha1_minus = q0 + c * G / beta
        a2 = q0 + c ** 2 * Gprime / beta - alpha1_minus ** 2
        b2 = (G - c * Gprime) / beta
    alpha1_plus = 1.0 - alpha1_minus
    gamma1_minus = (1.0 / alpha1_minus - 1.0) * c
    tau1_minus = (a2 * sigma_tr2 * var_w0 + b2 * sigma_d2) / alpha1_plus ** 2

    logger.debug(f"Ridge constants at beta={beta:.4g}, lam={lam:.3g}: z={z:.6g}, gamma1-={gamma1_minus:.6g}")
    return RidgeConstants(
        beta=beta,
        lam=lam,
        sigma_tr2=sigma_tr2,
        var_w0=var_w0,
        sigma_d2=sigma_d2,
        u=u,
        z=z,
        G=G,
        Gprime=Gprime,
        eta=1.0 / alpha1_plus,
        kappa=Gprime / G ** 2,
        gamma0_plus=lam / beta,
        gamma1_plus=c,
        gamma1_minus=gamma1_minus,
        alpha1_plus=alpha1_plus,
        alpha1_minus=alpha1_minus,
        k22=var_w0,
        tau1_minus=tau1_minus,
    )


def squared_error_gen(
    constants: Constants,
    spectrum: SpectrumModel,
    sigma_d2: Optional[float] = None,
) -> float:
    """Test MSE of linear regression from the layer-0/1 constants"""
    s_tr, s_ts, w = spectrum_nodes(spectrum)
    noise = constants.sigma_d2 if sigma_d2 is None else sigma_d2
    g0p, g1m = constants.gamma0_plus, constants.gamma1_minus
    den = g0p + s_tr ** 2 * g1m
    bias = np.sum(w * (g0p * s_ts / den) ** 2) * constants.k22
    var = np.sum(w * (g1m * s_tr * s_ts / den) ** 2) * constants.tau1_minus
    return float(bias + var + noise)


def ridgeless_gen(beta: float, sigma_d2: float, sigma_tr2: float = 1.0, var_w0: float = 1.0) -> float:
    """Test MSE of min-norm least squares"""
    if not beta > 0:
        raise ParameterDomainError(f"beta must be positive, got {beta}")
    if beta == 1.0:
        raise PoleError("Ridgeless test error is infinite at beta = 1")
    if beta < 1.0:
        return sigma_d2 / (1.0 - beta)
    return beta * sigma_d2 / (beta - 1.0) + (1.0 - 1.0 / beta) * sigma_tr2 * var_w0


def mismatch_gen(constants: Constants, epsilon: float) -> float:
    """Test MSE under Bernoulli train/test mismatch with flip probability epsilon"""
    if not 0.0 <= epsilon <= 1.0:
        raise ParameterDomainError(f"epsilon must lie in [0, 1], got {epsilon}")
    g0p, g1m = constants.gamma0_plus, constants.gamma1_minus
    gstar = g0p / (g0p + g1m)
    return float(
        0.5 * constants.k22 * ((1.0 - epsilon) * gstar ** 2 + epsilon)
        + 0.5 * constants.tau1_minus * (1.0 - gstar) ** 2 * (1.0 - epsilon)
        + constants.sigma_d2
    )


def one_sided_limits(fn: Callable[..., float], beta: float = 1.0, step: float = UNIT_BETA_STEP, **kwargs) -> Tuple[float, float]:
    """fn evaluated just below and just above beta"""
    return fn(beta=beta - step, **kwargs), fn(beta=beta + step, **kwargs)


def ridge_report(
    beta: float,
    lam: float,
    sigma_tr2: float = 1.0,
    var_w0: float = 1.0,
    sigma_d2: float = 0.0,
    sigma_ts2: Optional[float] = None,
) -> Tuple[List[RidgeConstants], List[float]]:
    """Ridge constants and test MSE; both one-sided values when beta = 1"""
    sigma_ts2 = sigma_tr2 if sigma_ts2 is None else sigma_ts2
    spectrum = IsoConstant(sigma_tr=float(np.sqrt(sigma_tr2)), sigma_ts=float(np.sqrt(sigma_ts2)))
    betas = [beta] if beta != 1.0 else [beta - UNIT_BETA_STEP, beta + UNIT_BETA_STEP]
    constants = [ridge_constants(b, lam, sigma_tr2, var_w0, sigma_d2) for b in betas]
    return constants, [squared_error_gen(c, spectrum) for c in constants]
