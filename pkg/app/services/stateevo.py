"""Scalar state evolution of ML-VAMP, its fixed point and the test-error predictions.

Every layer update is an expectation over a weighted point set ("pool") of the
independent variables that layer sees: the prior W0, standard normals for the
Gaussian messages, the spectral variable of the layer and the channel noise.
A Monte Carlo engine draws those points from seeded substreams; a quadrature
engine lays them on tensor Gauss rules. The recursion itself is written once.
"""
import logging
from typing import Dict, List, Optional, Tuple

import numpy as np
from pydantic import BaseModel, ConfigDict

from app.config import SeConfig, settings
from app.exceptions import ConsistencyError, DegeneracyError, FixedPointError, ParameterDomainError
from app.models.glm import GlmChannel, LinearChannel, PriorLaw
from app.models.penalties import INPUT_PENALTIES, OUTPUT_PENALTIES, Penalty
from app.models.results import GenErrorReport, SeFixedPoint
from app.models.spectra import MpLaw, SpectrumModel
from app.services.denoisers import is_quadratic, linear_denoiser, prox_eval
from app.services.spectra import (
    mp_side_nodes,
    normal_nodes,
    sample_joint_spectrum,
    sample_mp_squared,
    spectrum_nodes,
)
from app.services.synthdata import (
    channel_noise_var,
    channel_output,
    channel_output_atoms,
    channel_predict,
    metric_loss,
    prior_nodes,
    sample_channel_noise,
    sample_prior,
)

logger = logging.getLogger(__name__)

LINEAR_LAYER_NODES = 3


class Pool(BaseModel):
    """Weighted points; `g` holds three independent standard normals per point"""

    model_config = ConfigDict(arbitrary_types_allowed=True)

    weights: np.ndarray
    g: np.ndarray
    w0: Optional[np.ndarray] = None
    s: Optional[np.ndarray] = None
    s_ts: Optional[np.ndarray] = None
    d: Optional[np.ndarray] = None

    def mean(self, values: np.ndarray) -> float:
        return float(np.sum(self.weights * values))


def _tensor(*factors: Tuple[np.ndarray, np.ndarray]) -> Tuple[List[np.ndarray], np.ndarray]:
    """Flattened tensor product of 1-D rules (values, weights)"""
    grids = np.meshgrid(*[v for v, _ in factors], indexing="ij")
    wgrids = np.meshgrid(*[w for _, w in factors], indexing="ij")
    weights = np.prod(np.stack([w.ravel() for w in wgrids]), axis=0)
    return [g.ravel() for g in grids], weights


class QuadratureEngine:
    """Tensor Gauss rules: exact for the linear layers, Gauss-Hermite elsewhere"""

    def __init__(self, spectrum: SpectrumModel, channel: GlmChannel, w0_law: PriorLaw, beta: float, cfg: SeConfig):
        self.channel = channel
        n = cfg.gh_nodes
        x, w = normal_nodes(n)
        xl, wl = normal_nodes(LINEAR_LAYER_NODES)
        law = MpLaw(beta=beta)

        (w0, xi), wts = _tensor(prior_nodes(w0_law, n), (x, w))
        self.prior = Pool(weights=wts, g=np.stack([xi, xi, xi], axis=1), w0=w0)

        s_tr, s_ts, s_w = spectrum_nodes(spectrum)
        idx = np.arange(s_tr.size)
        (a, b, c, k), wts = _tensor((xl, wl), (xl, wl), (xl, wl), (idx.astype(float), s_w))
        k = k.astype(int)
        self.layer1 = Pool(weights=wts, g=np.stack([a, b, c], axis=1), s=s_tr[k], s_ts=s_ts[k])

        self.side = {}
        for side in ("plus", "minus"):
            s, s_w = mp_side_nodes(law, side)
            (a, b, c, sv), wts = _tensor((xl, wl), (xl, wl), (xl, wl), (s, s_w))
            self.side[side] = Pool(weights=wts, g=np.stack([a, b, c], axis=1), s=sv)

        (a, b), wts = _tensor((x, w), (x, w))
        self.output = Pool(weights=wts, g=np.stack([a, b, np.zeros_like(a)], axis=1))
        self.n_noise = n

    def outputs(self, p0: np.ndarray, pool: Pool) -> Tuple[np.ndarray, np.ndarray]:
        y, aw = channel_output_atoms(self.channel, p0, self.n_noise)
        return y, pool.weights[:, None] * aw

    def refresh(self) -> None:
        pass


class MonteCarloEngine:
    """Antithetic Monte Carlo pools drawn from fixed substreams of one seed"""

    def __init__(
        self,
        spectrum: SpectrumModel,
        channel: GlmChannel,
        w0_law: PriorLaw,
        beta: float,
        cfg: SeConfig,
        seed: int,
    ):
        self.spectrum = spectrum
        self.channel = channel
        self.w0_law = w0_law
        self.law = MpLaw(beta=beta)
        self.half = max(cfg.mc_samples // 2, 1)
        self.chunks = min(cfg.chunks, self.half)
        self.seed_seq = np.random.SeedSequence(seed)
        self.refresh()

    def _streams(self) -> List[np.random.Generator]:
        return [np.random.default_rng(s) for s in self.seed_seq.spawn(self.chunks)]

    def _draw(self, make) -> Pool:
        """Concatenate chunk draws in fixed order, then mirror the normals"""
        sizes = np.full(self.chunks, self.half // self.chunks)
        sizes[: self.half % self.chunks] += 1
        parts = [make(int(n), rng) for n, rng in zip(sizes, self._streams())]
        fields = {key: np.concatenate([part[key] for part in parts]) for key in parts[0]}
        g = fields.pop("g")
        out = {key: np.concatenate([v, v]) for key, v in fields.items()}
        n = 2 * g.shape[0]
        return Pool(weights=np.full(n, 1.0 / n), g=np.concatenate([g, -g]), **out)

    def refresh(self) -> None:
        def prior(n, rng):
            return {"g": rng.standard_normal((n, 3)), "w0": sample_prior(self.w0_law, n, rng)}

        def layer1(n, rng):
            sample = sample_joint_spectrum(self.spectrum, n, rng)
            return {"g": rng.standard_normal((n, 3)), "s": np.array(sample.s_tr), "s_ts": np.array(sample.s_ts)}

        def side(which):
            def make(n, rng):
                return {"g": rng.standard_normal((n, 3)), "s": np.sqrt(sample_mp_squared(self.law, which, n, rng))}
            return make

        def output(n, rng):
            return {"g": rng.standard_normal((n, 3)), "d": sample_channel_noise(self.channel, n, rng)}

        # each pool spawns from its own child so pools do not share draws
        base = self.seed_seq
        pools = {}
        for name, make in (("prior", prior), ("layer1", layer1), ("plus", side("plus")),
                           ("minus", side("minus")), ("output", output)):
            self.seed_seq = base.spawn(1)[0]
            pools[name] = self._draw(make)
        self.seed_seq = base
        self.prior, self.layer1, self.output = pools["prior"], pools["layer1"], pools["output"]
        self.side = {"plus": pools["plus"], "minus": pools["minus"]}

    def outputs(self, p0: np.ndarray, pool: Pool) -> Tuple[np.ndarray, np.ndarray]:
        y = channel_output(self.channel, p0, pool.d)
        return y[:, None], pool.weights[:, None]


def _sqrt_psd(K: np.ndarray) -> np.ndarray:
    vals, vecs = np.linalg.eigh(0.5 * (K + K.T))
    return vecs * np.sqrt(np.clip(vals, 0.0, None))


def _pair(K: np.ndarray, pool: Pool) -> Tuple[np.ndarray, np.ndarray]:
    """(P0, P+) ~ N(0, K) built from the first two normals of the pool"""
    L = _sqrt_psd(K)
    pair = pool.g[:, :2] @ L.T
    return pair[:, 0], pair[:, 1]


def _second_moments(pool: Pool, a: np.ndarray, b: np.ndarray) -> np.ndarray:
    m = np.array([[pool.mean(a * a), pool.mean(a * b)], [0.0, pool.mean(b * b)]])
    m[1, 0] = m[0, 1]
    return m


class _Recursion:
    """One damped Gauss-Seidel sweep of the state evolution"""

    def __init__(self, engine, f_in: Penalty, f_out: Penalty, cfg: SeConfig):
        self.engine = engine
        self.f_in = f_in
        self.f_out = f_out
        self.cfg = cfg
        self.degenerate: List[str] = []
        self.stein: Dict[str, float] = {}

    def _alpha(self, raw: float, label: str) -> float:
        if not (0.0 < raw < 1.0):
            self.degenerate.append(label)
        clip = self.cfg.alpha_clip
        return float(np.clip(np.nan_to_num(raw, nan=0.5), clip, 1.0 - clip))

    def _damp(self, new: float, old: float, log: bool) -> float:
        d = self.cfg.damping
        if log:
            return float(np.exp(d * np.log(new) + (1.0 - d) * np.log(old)))
        return d * new + (1.0 - d) * old

    def forward(self, gm: List[float], tm: List[float]):
        e = self.engine
        gp, ap, K = [0.0] * 3, [0.0] * 3, [None] * 3

        pool = e.prior
        w0 = pool.w0
        q = np.sqrt(tm[0]) * pool.g[:, 2]
        z_hat, dz = prox_eval(self.f_in, w0 + q, gm[0])
        a = self._alpha(pool.mean(dz), "alpha+0")
        if tm[0] > 0:
            self.stein["alpha+0"] = pool.mean(z_hat * q) / pool.mean(q * q)
        q_plus = (z_hat - w0 - a * q) / (1.0 - a)
        ap[0], gp[0], K[0] = a, (1.0 / a - 1.0) * gm[0], _second_moments(pool, w0, q_plus)

        for layer, pool in ((1, e.layer1), (2, e.side["plus"])):
            p0, p_plus = _pair(K[layer - 1], pool)
            z0 = pool.s * p0
            q = np.sqrt(tm[layer]) * pool.g[:, 2]
            _, z_hat, _, dz = linear_denoiser(p0 + p_plus, z0 + q, gp[layer - 1], gm[layer], pool.s)
            a = self._alpha(pool.mean(dz), f"alpha+{layer}")
            q_plus = (z_hat - z0 - a * q) / (1.0 - a)
            ap[layer], gp[layer], K[layer] = a, (1.0 / a - 1.0) * gm[layer], _second_moments(pool, z0, q_plus)
        return gp, ap, K

    def backward(self, gp: List[float], K: List[np.ndarray], gm: List[float], tm: List[float]):
        e = self.engine
        gm, tm, am = list(gm), list(tm), [0.0] * 3

        pool = e.output
        p0, p_plus = _pair(K[2], pool)
        y, weights = e.outputs(p0, pool)
        r = (p0 + p_plus)[:, None]
        p_hat, dp = prox_eval(self.f_out, np.broadcast_to(r, y.shape), gp[2], y)
        a = self._alpha(float(np.sum(weights * dp)), "alpha-2")
        if K[2][0, 0] > 0:
            resid = (p_plus - K[2][0, 1] / K[2][0, 0] * p0)[:, None]
            var = float(np.sum(weights * resid ** 2))
            if var > 0:
                self.stein["alpha-2"] = float(np.sum(weights * p_hat * resid)) / var
        p_minus = (p_hat - p0[:, None] - a * p_plus[:, None]) / (1.0 - a)
        am[2] = a
        gm[2] = self._damp((1.0 / a - 1.0) * gp[2], gm[2], log=True)
        tm[2] = self._damp(float(np.sum(weights * p_minus ** 2)), tm[2], log=False)

        for layer, pool, k in ((1, e.side["minus"], K[1]), (0, e.layer1, K[0])):
            p0, p_plus = _pair(k, pool)
            q = np.sqrt(tm[layer + 1]) * pool.g[:, 2]
            p_hat, _, dp, _ = linear_denoiser(p0 + p_plus, pool.s * p0 + q, gp[layer], gm[layer + 1], pool.s)
            a = self._alpha(pool.mean(dp), f"alpha-{layer}")
            p_minus = (p_hat - p0 - a * p_plus) / (1.0 - a)
            am[layer] = a
            gm[layer] = self._damp((1.0 / a - 1.0) * gp[layer], gm[layer], log=True)
            tm[layer] = self._damp(pool.mean(p_minus ** 2), tm[layer], log=False)
        return gm, tm, am


def _use_quadrature(cfg: SeConfig, channel: GlmChannel, f_in: Penalty, f_out: Penalty) -> bool:
    if cfg.method == "quadrature":
        return True
    if cfg.method == "mc":
        return False
    return is_quadratic(f_in) and is_quadratic(f_out) and isinstance(channel, LinearChannel)


def se_fixed_point(
    spectrum: SpectrumModel,
    channel: GlmChannel,
    f_in: Penalty,
    f_out: Penalty,
    beta: float,
    w0_law: PriorLaw,
    cfg: Optional[SeConfig] = None,
) -> SeFixedPoint:
    """Iterate the state evolution to its fixed point"""
    cfg = cfg or settings.se
    if not beta > 0:
        raise ParameterDomainError(f"beta must be positive, got {beta}")
    if f_in.name not in INPUT_PENALTIES or f_out.name not in OUTPUT_PENALTIES:
        raise ParameterDomainError(f"Invalid penalty pair ({f_in.name}, {f_out.name})")

    quadrature = _use_quadrature(cfg, channel, f_in, f_out)
    seed = cfg.seed if cfg.seed is not None else settings.seed
    if quadrature:
        engine = QuadratureEngine(spectrum, channel, w0_law, beta, cfg)
    else:
        engine = MonteCarloEngine(spectrum, channel, w0_law, beta, cfg, seed)
    method = "quadrature" if quadrature else "mc"
    logger.info(f"State evolution at beta={beta:.4g} with the {method} engine")

    rec = _Recursion(engine, f_in, f_out, cfg)
    gm = [cfg.gamma_init] * 3
    tm = [cfg.tau_init] * 3
    trajectory: List[List[float]] = []
    converged = False
    degenerate_streak = 0
    am = [0.0] * 3

    iteration = 0
    for iteration in range(1, cfg.max_iters + 1):
        rec.degenerate = []
        gp, _, K = rec.forward(gm, tm)
        gm_new, tm_new, am = rec.backward(gp, K, gm, tm)

        state_old = np.array(gm + tm)
        state_new = np.array(gm_new + tm_new)
        trajectory.append(state_new.tolist())
        gm, tm = gm_new, tm_new

        if not np.all(np.isfinite(state_new)):
            logger.error(f"State evolution produced non-finite parameters at iteration {iteration}")
            raise FixedPointError("Non-finite state", details={"trajectory": trajectory})

        degenerate_streak = degenerate_streak + 1 if rec.degenerate else 0
        if degenerate_streak >= cfg.max_degenerate_iters:
            logger.error(f"SE divergences left (0, 1): {rec.degenerate}")
            raise DegeneracyError("Divergence outside (0, 1)", details={"layers": rec.degenerate})

        change = np.max(np.abs(state_new - state_old) / np.maximum(np.abs(state_old), 1e-300))
        logger.debug(f"SE iter {iteration}: max relative change {change:.3e}")
        if change <= cfg.tol:
            converged = True
            break
        if cfg.refresh_pool:
            engine.refresh()

    if not converged:
        logger.error(f"State evolution did not converge in {cfg.max_iters} iterations")
        raise FixedPointError(
            f"State evolution did not converge in {cfg.max_iters} iterations",
            details={"trajectory": trajectory},
        )

    gp, ap, K = rec.forward(gm, tm)
    logger.info(f"State evolution converged in {iteration} iterations")
    return SeFixedPoint(
        beta=beta,
        gamma_bar_plus=gp,
        gamma_bar_minus=gm,
        alpha_bar_plus=ap,
        alpha_bar_minus=am,
        K0_plus=K[0].tolist(),
        K1_plus=K[1].tolist(),
        K2_plus=K[2].tolist(),
        tau_minus=tm,
        tau0=[float(K[i][0, 0]) for i in range(3)],
        noise_var=channel_noise_var(channel),
        iterations=iteration,
        converged=converged,
        method=method,
        trajectory=trajectory,
        stein_alpha=dict(rec.stein),
    )


# ---------------------------------------------------------------------------
# Test-error predictions
# ---------------------------------------------------------------------------

def _check_psd(M: np.ndarray, what: str) -> np.ndarray:
    M = 0.5 * (M + M.T)
    vals, vecs = np.linalg.eigh(M)
    if vals.min() < -1e-10 * max(np.trace(M), 1e-300):
        logger.error(f"{what} is not PSD: eigenvalues {vals}")
        raise ConsistencyError(f"{what} is not positive semidefinite", details={"eigenvalues": vals.tolist()})
    return (vecs * np.clip(vals, 0.0, None)) @ vecs.T


def m_matrix(fp: SeFixedPoint, spectrum: SpectrumModel) -> np.ndarray:
    """Covariance of (Z_ts, Zhat_ts) from the fixed point constants"""
    s_tr, s_ts, w = spectrum_nodes(spectrum)
    K = np.array(fp.K0_plus)
    g0p, g1m, tau1 = fp.gamma0_plus, fp.gamma1_minus, fp.tau1_minus
    den = g0p + s_tr ** 2 * g1m
    m11 = np.sum(w * s_ts ** 2) * K[0, 0]
    m12 = m11 + np.sum(w * s_ts ** 2 * g0p / den) * K[0, 1]
    m22 = (
        np.sum(w * (g0p * s_ts / den) ** 2) * K[1, 1]
        + np.sum(w * (g1m * s_tr * s_ts / den) ** 2) * tau1
        - m11
        + 2.0 * m12
    )
    return _check_psd(np.array([[m11, m12], [m12, m22]]), "M")


def m_matrix_direct(fp: SeFixedPoint, spectrum: SpectrumModel, mc: int, rng: np.random.Generator) -> np.ndarray:
    """Monte Carlo estimate of E S_ts^2 [(P0, P0hat)(P0, P0hat)^T]"""
    sample = sample_joint_spectrum(spectrum, mc, rng)
    g = rng.standard_normal((mc, 3))
    L = _sqrt_psd(np.array(fp.K0_plus))
    pair = g[:, :2] @ L.T
    p0, p_plus = pair[:, 0], pair[:, 1]
    q = np.sqrt(fp.tau1_minus) * g[:, 2]
    s = sample.s_tr
    p_hat = p0 + (fp.gamma0_plus * p_plus + s * fp.gamma1_minus * q) / (fp.gamma0_plus + s ** 2 * fp.gamma1_minus)
    t2 = sample.s_ts ** 2
    m = np.array([
        [np.mean(t2 * p0 * p0), np.mean(t2 * p0 * p_hat)],
        [np.mean(t2 * p0 * p_hat), np.mean(t2 * p_hat * p_hat)],
    ])
    return 0.5 * (m + m.T)


def generalization_error(
    fp: SeFixedPoint,
    M: np.ndarray,
    channel: GlmChannel,
    f_ts: str,
    mc: int,
    rng: np.random.Generator,
) -> GenErrorReport:
    """E f_ts(phi_out(Z_ts, D), phi(Zhat_ts)) with (Z_ts, Zhat_ts) ~ N(0, M)"""
    M = _check_psd(np.asarray(M, dtype=float), "M")
    half = max(mc // 2, 1)
    g = rng.standard_normal((half, 2))
    zz = np.concatenate([g, -g]) @ _sqrt_psd(M).T
    d = sample_channel_noise(channel, half, rng)
    d = np.concatenate([d, d])
    y = channel_output(channel, zz[:, 0], d)
    y_hat = channel_predict(channel, zz[:, 1])

    loss = metric_loss(f_ts, y, y_hat)
    paired = 0.5 * (loss[:half] + loss[half:])
    e_mc = float(np.mean(loss))
    stderr = float(np.std(paired, ddof=1) / np.sqrt(half)) if half > 1 else 0.0
    output_power = float(np.mean(y ** 2))

    closed = None
    if isinstance(channel, LinearChannel) and f_ts in ("squared", "squared_db"):
        closed = float(M[0, 0] + M[1, 1] - 2.0 * M[0, 1] + channel.sigma_d2)
        output_power = float(M[0, 0] + channel.sigma_d2)
        if abs(e_mc - closed) > 5.0 * stderr + 1e-12 * max(1.0, closed):
            logger.error(f"MC test error {e_mc:.6g} disagrees with closed form {closed:.6g} (stderr {stderr:.2e})")
            raise ConsistencyError(
                "Monte Carlo and closed-form test errors disagree",
                details={"mc": e_mc, "closed_form": closed, "stderr": stderr},
            )

    return GenErrorReport(
        M=M.tolist(),
        metric=f_ts,
        e_ts=closed if closed is not None else e_mc,
        e_ts_mc=e_mc,
        e_ts_stderr=stderr,
        e_ts_closed_form=closed,
        output_power=output_power,
    )


def param_mse(
    fp: SeFixedPoint,
    f_in: Penalty,
    w0_law: PriorLaw,
    mc: int,
    rng: np.random.Generator,
    precision: str = "minus",
) -> float:
    """E(W0 - What)^2 with What the layer-0 prox of W0 + Q0-"""
    if precision not in ("minus", "plus"):
        raise ParameterDomainError(f"precision must be 'minus' or 'plus', got {precision!r}")
    gamma = fp.gamma_bar_minus[0] if precision == "minus" else fp.gamma_bar_plus[0]
    w0 = sample_prior(w0_law, mc, rng)
    q = np.sqrt(fp.tau_minus[0]) * rng.standard_normal(mc)
    w_hat, _ = prox_eval(f_in, w0 + q, gamma)
    return float(np.mean((w0 - w_hat) ** 2))


def predict(
    spectrum: SpectrumModel,
    channel: GlmChannel,
    f_in: Penalty,
    f_out: Penalty,
    beta: float,
    w0_law: PriorLaw,
    metric: str,
    cfg: Optional[SeConfig] = None,
    mc: Optional[int] = None,
) -> Tuple[SeFixedPoint, GenErrorReport]:
    """Fixed point plus the full test-error report"""
    cfg = cfg or settings.se
    mc = mc or cfg.mc_samples
    fp = se_fixed_point(spectrum, channel, f_in, f_out, beta, w0_law, cfg)

    seed = cfg.seed if cfg.seed is not None else settings.seed
    streams = [np.random.default_rng(s) for s in np.random.SeedSequence(seed).spawn(3)]
    M = m_matrix(fp, spectrum)
    M_direct = m_matrix_direct(fp, spectrum, mc, streams[0])
    report = generalization_error(fp, M, channel, metric, mc, streams[1])
    report.M_direct = M_direct.tolist()
    report.m_discrepancy = float(np.max(np.abs(M_direct - M)))
    report.param_mse = param_mse(fp, f_in, w0_law, mc, streams[2])
    return fp, report
