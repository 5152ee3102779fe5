"""Direct solvers on the materialized design matrix, used as empirical baselines"""
import logging
from typing import Optional

import numpy as np
from scipy.special import expit

from app.config import BaselineConfig, settings
from app.exceptions import ParameterDomainError, SolverError
from app.models.glm import Dataset
from app.models.penalties import L2Penalty, LogisticLoss, Penalty, SquaredLoss, TanhLoss
from app.services.denoisers import penalty_grad

logger = logging.getLogger(__name__)

ARMIJO_C1 = 1e-4
ARMIJO_SHRINK = 0.5
MAX_BACKTRACKS = 50
ADAM_BETAS = (0.9, 0.999)
ADAM_EPS = 1e-8


def baseline_kind(f_in: Penalty, f_out: Penalty) -> str:
    if isinstance(f_in, L2Penalty):
        if isinstance(f_out, SquaredLoss):
            return "ridge"
        if isinstance(f_out, LogisticLoss):
            return "logistic"
        if isinstance(f_out, TanhLoss):
            return "tanh"
    raise ParameterDomainError(f"No direct baseline for ({f_in.name}, {f_out.name})")


def fit_ridge(X: np.ndarray, y: np.ndarray, f_in: L2Penalty, f_out: SquaredLoss) -> np.ndarray:
    """Normal equations (scale X^T X + coef I) w = scale X^T y"""
    p = X.shape[1]
    A = f_out.scale * (X.T @ X) + f_in.coef * np.eye(p)
    try:
        return np.linalg.solve(A, f_out.scale * (X.T @ y))
    except np.linalg.LinAlgError:
        # singular only when coef = 0; fall back to the min-norm solution
        return np.linalg.lstsq(X, y, rcond=None)[0]


def fit_logistic(
    X: np.ndarray, y: np.ndarray, f_in: L2Penalty, cfg: BaselineConfig
) -> np.ndarray:
    """Damped Newton with Armijo backtracking on the L2-penalized logistic loss"""
    if f_in.coef <= 0:
        raise ParameterDomainError("Logistic baseline needs a positive L2 weight")
    p = X.shape[1]
    w = np.zeros(p)

    def obj(v):
        Xv = X @ v
        return float(np.sum(np.logaddexp(0.0, Xv) - y * Xv) + 0.5 * f_in.coef * v @ v)

    f = obj(w)
    for it in range(cfg.newton_max_iters):
        mu = expit(X @ w)
        grad = X.T @ (mu - y) + f_in.coef * w
        gnorm = float(np.linalg.norm(grad))
        logger.debug(f"Newton iter {it}: |grad| = {gnorm:.3e}")
        if gnorm <= cfg.newton_tol:
            return w
        H = (X.T * (mu * (1.0 - mu))) @ X + f_in.coef * np.eye(p)
        step = np.linalg.solve(H, grad)
        t = 1.0
        for _ in range(MAX_BACKTRACKS):
            f_new = obj(w - t * step)
            if f_new <= f - ARMIJO_C1 * t * grad @ step:
                break
            t *= ARMIJO_SHRINK
        w = w - t * step
        f = f_new

    mu = expit(X @ w)
    gnorm = float(np.linalg.norm(X.T @ (mu - y) + f_in.coef * w))
    if gnorm <= cfg.newton_tol:
        return w
    logger.error(f"Logistic Newton stopped at |grad| = {gnorm:.3e}")
    raise SolverError("Logistic Newton did not converge", details={"grad_norm": gnorm})


def fit_tanh(
    X: np.ndarray,
    y: np.ndarray,
    f_in: L2Penalty,
    f_out: TanhLoss,
    cfg: BaselineConfig,
    rng: np.random.Generator,
) -> np.ndarray:
    """Minibatch Adam on sum (y - tanh(Xw))^2 / (2 sigma_d2) + coef |w|^2 / 2"""
    N, p = X.shape
    w = np.zeros(p)
    m = np.zeros(p)
    v = np.zeros(p)
    b1, b2 = ADAM_BETAS
    t = 0
    for epoch in range(cfg.adam_epochs):
        order = rng.permutation(N)
        for start in range(0, N, cfg.batch_size):
            idx = order[start:start + cfg.batch_size]
            Xb = X[idx]
            g = (N / idx.size) * (Xb.T @ penalty_grad(f_out, Xb @ w, y[idx])) + f_in.coef * w
            t += 1
            m = b1 * m + (1.0 - b1) * g
            v = b2 * v + (1.0 - b2) * g ** 2
            w = w - cfg.adam_step * (m / (1.0 - b1 ** t)) / (np.sqrt(v / (1.0 - b2 ** t)) + ADAM_EPS)
        if not np.all(np.isfinite(w)):
            logger.error(f"Adam produced non-finite weights at epoch {epoch}")
            raise SolverError("Adam diverged", details={"epoch": epoch})
    return w


def baseline_fit(
    dataset: Dataset,
    f_in: Penalty,
    f_out: Penalty,
    cfg: Optional[BaselineConfig] = None,
    rng: Optional[np.random.Generator] = None,
) -> np.ndarray:
    """w_hat from the direct solver matching the penalty pair"""
    cfg = cfg or settings.baseline
    kind = baseline_kind(f_in, f_out)
    X = dataset.design_matrix()
    y = np.asarray(dataset.y, dtype=float)
    if kind == "ridge":
        return fit_ridge(X, y, f_in, f_out)
    if kind == "logistic":
        return fit_logistic(X, y, f_in, cfg)
    return fit_tanh(X, y, f_in, f_out, cfg, rng if rng is not None else np.random.default_rng(settings.seed))

