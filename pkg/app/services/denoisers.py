import logging
from typing import Optional, Tuple, Union

import numpy as np
from scipy.special import expit

from app.exceptions import ParameterDomainError, ProxConvergenceError
from app.models.penalties import (
    HingeLoss,
    L1Penalty,
    L2Penalty,
    LogisticLoss,
    OUTPUT_PENALTIES,
    Penalty,
    SquaredLoss,
    TanhLoss,
)

logger = logging.getLogger(__name__)

ArrayLike = Union[float, np.ndarray]

NEWTON_TOL = 1e-12
NEWTON_MAX_ITERS = 200
TANH_STARTS = np.linspace(-3.0, 3.0, 5)
EPS = np.finfo(float).eps


def _labels(y: np.ndarray) -> np.ndarray:
    return np.where(y > 0, 1.0, -1.0)


def _require_y(pen: Penalty, y: Optional[ArrayLike]) -> np.ndarray:
    if pen.name in OUTPUT_PENALTIES:
        if y is None:
            raise ParameterDomainError(f"Output penalty '{pen.name}' needs observations y")
        return np.asarray(y, dtype=float)
    return np.zeros(())


def is_smooth(pen: Penalty) -> bool:
    return not isinstance(pen, (L1Penalty, HingeLoss))


def is_quadratic(pen: Penalty) -> bool:
    return isinstance(pen, (L2Penalty, SquaredLoss))


def penalty_value(pen: Penalty, x: ArrayLike, y: Optional[ArrayLike] = None) -> np.ndarray:
    """f(x) or f(x; y), elementwise"""
    x = np.asarray(x, dtype=float)
    y = _require_y(pen, y)
    if isinstance(pen, L2Penalty):
        return 0.5 * pen.coef * x ** 2
    if isinstance(pen, L1Penalty):
        return pen.lam * np.abs(x)
    if isinstance(pen, SquaredLoss):
        return 0.5 * pen.scale * (y - x) ** 2
    if isinstance(pen, LogisticLoss):
        return np.logaddexp(0.0, x) - y * x
    if isinstance(pen, HingeLoss):
        return np.maximum(0.0, 1.0 - _labels(y) * x)
    if isinstance(pen, TanhLoss):
        return 0.5 * (y - np.tanh(x)) ** 2 / pen.sigma_d2
    raise ParameterDomainError(f"Unknown penalty: {pen!r}")


def penalty_grad(pen: Penalty, x: ArrayLike, y: Optional[ArrayLike] = None) -> np.ndarray:
    """f'(x) for smooth penalties"""
    x = np.asarray(x, dtype=float)
    y = _require_y(pen, y)
    if isinstance(pen, L2Penalty):
        return pen.coef * x
    if isinstance(pen, SquaredLoss):
        return pen.scale * (x - y)
    if isinstance(pen, LogisticLoss):
        return expit(x) - y
    if isinstance(pen, TanhLoss):
        t = np.tanh(x)
        return -(y - t) * (1.0 - t ** 2) / pen.sigma_d2
    raise ParameterDomainError(f"Penalty '{pen.name}' is not differentiable everywhere")


def penalty_curvature(pen: Penalty, x: ArrayLike, y: Optional[ArrayLike] = None) -> np.ndarray:
    """f''(x) for smooth penalties"""
    x = np.asarray(x, dtype=float)
    y = _require_y(pen, y)
    if isinstance(pen, L2Penalty):
        return np.full_like(x, pen.coef)
    if isinstance(pen, SquaredLoss):
        return np.full(np.broadcast(x, y).shape, pen.scale)
    if isinstance(pen, LogisticLoss):
        s = expit(x)
        return s * (1.0 - s)
    if isinstance(pen, TanhLoss):
        t = np.tanh(x)
        sech2 = 1.0 - t ** 2
        return (sech2 ** 2 + 2.0 * t * (y - t) * sech2) / pen.sigma_d2
    raise ParameterDomainError(f"Penalty '{pen.name}' is not twice differentiable everywhere")


def _safeguarded_newton(pen, r, gamma, y, x0, lo, hi) -> np.ndarray:
    """Root of f'(x) + gamma (x - r) inside [lo, hi]; Newton with bisection fallback"""
    x = np.clip(x0, lo, hi)
    lo = lo.copy()
    hi = hi.copy()
    scale = 1.0 + gamma * np.maximum(np.abs(x), np.abs(r))
    residual = np.full_like(x, np.inf)
    for _ in range(NEWTON_MAX_ITERS):
        residual = penalty_grad(pen, x, y) + gamma * (x - r)
        done = (np.abs(residual) <= NEWTON_TOL * scale) | (hi - lo <= 4 * EPS * np.maximum(1.0, np.abs(x)))
        if np.all(done):
            return x
        lo = np.where(residual < 0, x, lo)
        hi = np.where(residual > 0, x, hi)
        slope = penalty_curvature(pen, x, y) + gamma
        with np.errstate(divide="ignore", invalid="ignore"):
            step = x - residual / slope
        bad = ~(slope > 0) | ~(step > lo) | ~(step < hi)
        x = np.where(done, x, np.where(bad, 0.5 * (lo + hi), step))
    worst = float(np.max(np.abs(residual)))
    logger.error(f"Prox solver for '{pen.name}' stalled with residual {worst:.3e}")
    raise ProxConvergenceError(
        f"Scalar prox for '{pen.name}' did not converge",
        details={"residual": worst, "max_iters": NEWTON_MAX_ITERS},
    )


def _solver_prox(pen: Penalty, r: np.ndarray, gamma: np.ndarray, y: np.ndarray) -> np.ndarray:
    if isinstance(pen, LogisticLoss):
        bound = 1.0 + np.abs(y)
    else:
        bound = (1.0 + np.abs(y)) / pen.sigma_d2
    lo = r - bound / gamma
    hi = r + bound / gamma
    if isinstance(pen, LogisticLoss):
        return _safeguarded_newton(pen, r, gamma, y, r, lo, hi)

    # non-convex: keep the best of several stationary points
    best = None
    best_obj = None
    for start in list(TANH_STARTS) + [None]:
        x0 = r if start is None else np.full_like(r, start)
        cand = _safeguarded_newton(pen, r, gamma, y, x0, lo, hi)
        obj = penalty_value(pen, cand, y) + 0.5 * gamma * (cand - r) ** 2
        if best is None:
            best, best_obj = cand, obj
        else:
            better = obj < best_obj
            best = np.where(better, cand, best)
            best_obj = np.where(better, obj, best_obj)
    return best


def prox_eval(
    pen: Penalty, r: ArrayLike, gamma: ArrayLike, y: Optional[ArrayLike] = None
) -> Tuple[ArrayLike, ArrayLike]:
    """argmin_x f(x) + gamma/2 (x - r)^2 and its derivative in r"""
    scalar = np.ndim(r) == 0 and np.ndim(gamma) == 0 and np.ndim(y if y is not None else 0.0) == 0
    gamma_arr = np.asarray(gamma, dtype=float)
    if np.any(~(gamma_arr > 0)):
        raise ParameterDomainError("Prox precision gamma must be positive")
    y_arr = _require_y(pen, y)
    r_arr, gamma_arr, y_arr = np.broadcast_arrays(np.asarray(r, dtype=float), gamma_arr, y_arr)
    r_arr = r_arr.astype(float)

    if isinstance(pen, L2Penalty):
        value = gamma_arr * r_arr / (gamma_arr + pen.coef)
        deriv = gamma_arr / (gamma_arr + pen.coef)
    elif isinstance(pen, L1Penalty):
        thresh = pen.lam / gamma_arr
        value = np.sign(r_arr) * np.maximum(np.abs(r_arr) - thresh, 0.0)
        deriv = (np.abs(r_arr) > thresh).astype(float)
    elif isinstance(pen, SquaredLoss):
        value = (gamma_arr * r_arr + pen.scale * y_arr) / (gamma_arr + pen.scale)
        deriv = gamma_arr / (gamma_arr + pen.scale)
    elif isinstance(pen, HingeLoss):
        label = _labels(y_arr)
        s = label * r_arr
        low = s < 1.0 - 1.0 / gamma_arr
        high = s > 1.0
        t = np.where(high, s, np.where(low, s + 1.0 / gamma_arr, 1.0))
        value = label * t
        deriv = (low | high).astype(float)
    elif isinstance(pen, (LogisticLoss, TanhLoss)):
        value = _solver_prox(pen, r_arr, gamma_arr, y_arr)
        deriv = gamma_arr / (gamma_arr + penalty_curvature(pen, value, y_arr))
    else:
        raise ParameterDomainError(f"Unknown penalty: {pen!r}")

    if scalar:
        return float(value), float(deriv)
    return value, np.broadcast_to(deriv, value.shape).astype(float)


def linear_denoiser(
    r_plus: ArrayLike,
    r_minus: ArrayLike,
    gamma_plus: float,
    gamma_minus: float,
    s: ArrayLike,
) -> Tuple[ArrayLike, ArrayLike, ArrayLike, ArrayLike]:
    """Joint estimate of (p, z = s p) from Gaussian messages on both sides.

    Returns p_hat, z_hat, d p_hat / d r_plus and d z_hat / d r_minus.
    """
    if not (gamma_plus > 0 and gamma_minus > 0):
        raise ParameterDomainError("Linear denoiser precisions must be positive")
    s = np.asarray(s, dtype=float)
    denom = gamma_plus + s ** 2 * gamma_minus
    p_hat = (gamma_plus * np.asarray(r_plus) + s * gamma_minus * np.asarray(r_minus)) / denom
    z_hat = s * p_hat
    return p_hat, z_hat, gamma_plus / denom, s ** 2 * gamma_minus / denom
