"""ML-VAMP learning of a GLM over the factored network

    z0 = w  -> p0 = V0 z0 -> z1 = S_tr p0 -> p1 = V1 z1 -> z2 = S p1 -> p2 = V2 z2 = X w

Layer 0 carries the input penalty, layers 1 and 2 the linear constraints and the
output penalty acts on p2. One sweep runs the forward pass l = 0, 1, 2 and then
the backward pass l = 2, 1, 0, each message update using the newest values.
"""
import logging
from typing import List, Optional, Tuple

import numpy as np

from app.config import MlvampConfig, settings
from app.exceptions import DegeneracyError, DivergenceError, ParameterDomainError
from app.models.glm import Dataset
from app.models.penalties import INPUT_PENALTIES, L1Penalty, OUTPUT_PENALTIES, Penalty
from app.models.results import FitResult, IterationRecord, VampState
from app.services.denoisers import is_smooth, linear_denoiser, penalty_grad, penalty_value, prox_eval

logger = logging.getLogger(__name__)


def _fit_length(v: np.ndarray, n: int) -> np.ndarray:
    """Truncate or zero-pad to length n"""
    if v.shape[0] >= n:
        return v[:n]
    return np.concatenate([v, np.zeros(n - v.shape[0])])


class _Layerwise:
    """Clipping and damping shared by every message update of one sweep"""

    def __init__(self, cfg: MlvampConfig, previous: VampState, new: VampState):
        self.cfg = cfg
        self.previous = previous
        self.new = new

    def alpha(self, raw: float, label: str) -> float:
        clip = self.cfg.alpha_clip
        if not (0.0 < raw < 1.0):
            self.new.degenerate.append(label)
        elif raw < clip or raw > 1.0 - clip:
            logger.debug(f"alpha {label}={raw:.3e} clipped")
        return float(np.clip(np.nan_to_num(raw, nan=0.5), clip, 1.0 - clip))

    def gamma(self, raw: float, old: Optional[float]) -> float:
        g = float(np.clip(raw, self.cfg.gamma_min, self.cfg.gamma_max))
        if old is None:
            return g
        d = self.cfg.damping
        return float(np.exp(d * np.log(g) + (1.0 - d) * np.log(old)))

    def message(self, raw: np.ndarray, old: Optional[np.ndarray]) -> np.ndarray:
        if old is None:
            return raw
        d = self.cfg.damping
        return d * raw + (1.0 - d) * old


def initial_state(
    dataset: Dataset,
    cfg: MlvampConfig,
    r_minus: Optional[List[np.ndarray]] = None,
    gamma_minus: Optional[List[float]] = None,
) -> VampState:
    N, p = dataset.N, dataset.p
    if r_minus is None:
        r_minus = [np.zeros(p), np.zeros(p), np.zeros(N)]
    if gamma_minus is None:
        gamma_minus = [cfg.gamma_init] * 3
    return VampState(r_minus=[np.asarray(r, dtype=float) for r in r_minus], gamma_minus=list(gamma_minus))


def random_state(dataset: Dataset, cfg: MlvampConfig, rng: np.random.Generator) -> VampState:
    """Random initial messages and precisions"""
    N, p = dataset.N, dataset.p
    r_minus = [rng.standard_normal(p), rng.standard_normal(p), rng.standard_normal(N)]
    gamma_minus = list(np.exp(rng.uniform(-1.0, 1.0, size=3)))
    return initial_state(dataset, cfg, r_minus, gamma_minus)


def forward_backward_step(
    state: VampState,
    dataset: Dataset,
    f_in: Penalty,
    f_out: Penalty,
    cfg: MlvampConfig,
) -> VampState:
    """One forward and one backward pass"""
    N, p = dataset.N, dataset.p
    V0, V1, V2 = dataset.V0, dataset.V1, dataset.V2
    new = state.model_copy(deep=True)
    new.degenerate = []
    new.iteration = state.iteration + 1
    step = _Layerwise(cfg, state, new)

    # Forward pass
    z0, dz0 = prox_eval(f_in, state.r_minus[0], state.gamma_minus[0])
    a = step.alpha(float(np.mean(dz0)), "alpha+0")
    new.z_hat[0] = z0
    new.alpha_plus[0] = a
    new.r_plus[0] = step.message(V0 @ ((z0 - a * state.r_minus[0]) / (1.0 - a)), state.r_plus[0])
    new.gamma_plus[0] = step.gamma((1.0 / a - 1.0) * state.gamma_minus[0], state.gamma_plus[0])

    _, z1, _, dz1 = linear_denoiser(new.r_plus[0], state.r_minus[1], new.gamma_plus[0], state.gamma_minus[1], dataset.s_tr)
    a = step.alpha(float(np.mean(dz1)), "alpha+1")
    new.z_hat[1] = z1
    new.alpha_plus[1] = a
    new.r_plus[1] = step.message(V1 @ ((z1 - a * state.r_minus[1]) / (1.0 - a)), state.r_plus[1])
    new.gamma_plus[1] = step.gamma((1.0 / a - 1.0) * state.gamma_minus[1], state.gamma_plus[1])

    _, z2, _, dz2 = linear_denoiser(
        _fit_length(new.r_plus[1], N), state.r_minus[2], new.gamma_plus[1], state.gamma_minus[2], dataset.s_plus
    )
    a = step.alpha(float(np.mean(dz2)), "alpha+2")
    new.z_hat[2] = z2
    new.alpha_plus[2] = a
    new.r_plus[2] = step.message(V2 @ ((z2 - a * state.r_minus[2]) / (1.0 - a)), state.r_plus[2])
    new.gamma_plus[2] = step.gamma((1.0 / a - 1.0) * state.gamma_minus[2], state.gamma_plus[2])

    # Backward pass
    p2, dp2 = prox_eval(f_out, new.r_plus[2], new.gamma_plus[2], dataset.y)
    a = step.alpha(float(np.mean(dp2)), "alpha-2")
    new.p_hat[2] = p2
    new.alpha_minus[2] = a
    new.r_minus[2] = step.message(V2.T @ ((p2 - a * new.r_plus[2]) / (1.0 - a)), state.r_minus[2])
    new.gamma_minus[2] = step.gamma((1.0 / a - 1.0) * new.gamma_plus[2], state.gamma_minus[2])

    p1, _, dp1, _ = linear_denoiser(
        new.r_plus[1], _fit_length(new.r_minus[2], p), new.gamma_plus[1], new.gamma_minus[2], dataset.s_minus
    )
    a = step.alpha(float(np.mean(dp1)), "alpha-1")
    new.p_hat[1] = p1
    new.alpha_minus[1] = a
    new.r_minus[1] = step.message(V1.T @ ((p1 - a * new.r_plus[1]) / (1.0 - a)), state.r_minus[1])
    new.gamma_minus[1] = step.gamma((1.0 / a - 1.0) * new.gamma_plus[1], state.gamma_minus[1])

    p0, _, dp0, _ = linear_denoiser(new.r_plus[0], new.r_minus[1], new.gamma_plus[0], new.gamma_minus[1], dataset.s_tr)
    a = step.alpha(float(np.mean(dp0)), "alpha-0")
    new.p_hat[0] = p0
    new.alpha_minus[0] = a
    new.r_minus[0] = step.message(V0.T @ ((p0 - a * new.r_plus[0]) / (1.0 - a)), state.r_minus[0])
    new.gamma_minus[0] = step.gamma((1.0 / a - 1.0) * new.gamma_plus[0], state.gamma_minus[0])

    return new


def objective(dataset: Dataset, w: np.ndarray, f_in: Penalty, f_out: Penalty) -> float:
    """F_out(y, X w) + F_in(w) with both sums taken over components"""
    Xw = dataset.U @ (dataset.s_tr * (dataset.V0 @ w))
    return float(np.sum(penalty_value(f_out, Xw, dataset.y)) + np.sum(penalty_value(f_in, w)))


def kkt_residual(dataset: Dataset, state: VampState, f_in: Penalty, f_out: Penalty) -> float:
    """Norm of a subgradient of the objective at w_hat, over sqrt(p)"""
    w = state.z_hat[0]
    Xw = dataset.U @ (dataset.s_tr * (dataset.V0 @ w))
    if is_smooth(f_out):
        g_out = penalty_grad(f_out, Xw, dataset.y)
    else:
        # prox optimality certifies gamma (r - p_hat) as a subgradient at p_hat
        g_out = state.gamma_plus[2] * (state.r_plus[2] - state.p_hat[2])
    v = dataset.V0.T @ (dataset.s_tr * (dataset.U.T @ g_out))

    if is_smooth(f_in):
        g_in = penalty_grad(f_in, w)
    elif isinstance(f_in, L1Penalty):
        g_in = np.where(w != 0, f_in.lam * np.sign(w), np.clip(-v, -f_in.lam, f_in.lam))
    else:
        raise ParameterDomainError(f"No subgradient rule for input penalty '{f_in.name}'")
    return float(np.linalg.norm(v + g_in) / np.sqrt(dataset.p))


def _check_penalties(f_in: Penalty, f_out: Penalty) -> None:
    if f_in.name not in INPUT_PENALTIES:
        raise ParameterDomainError(f"'{f_in.name}' cannot be used as an input penalty")
    if f_out.name not in OUTPUT_PENALTIES:
        raise ParameterDomainError(f"'{f_out.name}' cannot be used as an output penalty")


def _relative_change(new: VampState, old: VampState) -> float:
    if old.r_plus[0] is None:
        return np.inf
    a, b = new.messages(), old.messages()
    return float(np.linalg.norm(a - b) / max(np.linalg.norm(a), np.finfo(float).tiny))


def fit(
    dataset: Dataset,
    f_in: Penalty,
    f_out: Penalty,
    cfg: Optional[MlvampConfig] = None,
    init: Optional[VampState] = None,
) -> FitResult:
    """Run ML-VAMP to a fixed point and return w_hat = z_hat_0"""
    cfg = cfg or settings.mlvamp
    _check_penalties(f_in, f_out)
    state = init if init is not None else initial_state(dataset, cfg)

    history: List[IterationRecord] = []
    converged = False
    growth_streak = 0
    degenerate_streak = 0
    last_change = np.inf

    for _ in range(cfg.max_iters):
        new = forward_backward_step(state, dataset, f_in, f_out, cfg)
        change = _relative_change(new, state)
        history.append(IterationRecord(
            iteration=new.iteration,
            rel_change=change,
            gamma_plus=[float(g) for g in new.gamma_plus],
            gamma_minus=[float(g) for g in new.gamma_minus],
        ))
        logger.debug(f"ML-VAMP iter {new.iteration}: rel change {change:.3e}")

        if not np.all(np.isfinite(new.messages())):
            logger.error(f"ML-VAMP produced non-finite messages at iteration {new.iteration}")
            raise DivergenceError("Non-finite messages", details={"history": history})

        degenerate_streak = degenerate_streak + 1 if new.degenerate else 0
        if degenerate_streak >= cfg.max_degenerate_iters:
            logger.error(f"ML-VAMP divergences left (0, 1) for {degenerate_streak} iterations: {new.degenerate}")
            raise DegeneracyError(
                "Layer divergence stuck outside (0, 1)",
                details={"layers": new.degenerate, "alpha_plus": new.alpha_plus, "alpha_minus": new.alpha_minus},
            )

        growth_streak = growth_streak + 1 if change > last_change else 0
        if growth_streak >= cfg.max_bad_iters:
            logger.error(f"ML-VAMP message change grew for {growth_streak} consecutive iterations")
            raise DivergenceError("Message change keeps growing", details={"history": history})

        state, last_change = new, change
        if change <= cfg.tol:
            converged = True
            break

    if converged:
        logger.info(f"ML-VAMP converged in {state.iteration} iterations")
    else:
        logger.warning(f"ML-VAMP stopped after {state.iteration} iterations, last change {last_change:.3e}")

    w_hat = np.array(state.z_hat[0])
    return FitResult(
        w_hat=w_hat,
        converged=converged,
        iterations=state.iteration,
        history=history,
        kkt_residual=kkt_residual(dataset, state, f_in, f_out),
        objective=objective(dataset, w_hat, f_in, f_out),
        state=state,
    )
