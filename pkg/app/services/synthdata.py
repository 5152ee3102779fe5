import logging
from typing import Tuple

import numpy as np
from scipy.special import expit

from app.exceptions import ParameterDomainError
from app.models.glm import (
    BernoulliGaussianPrior,
    Dataset,
    GaussianPrior,
    GlmChannel,
    LinearChannel,
    LogisticChannel,
    PriorLaw,
    TanhChannel,
    TrueModel,
)
from app.models.spectra import SpectrumModel
from app.services.spectra import normal_nodes, pad_singular_values, sample_joint_spectrum

logger = logging.getLogger(__name__)

TEST_METRICS = ("squared", "squared_db", "zero_one")


# ---------------------------------------------------------------------------
# Channels
# ---------------------------------------------------------------------------

def sample_channel_noise(channel: GlmChannel, size, rng: np.random.Generator) -> np.ndarray:
    """Draws of the channel noise D"""
    if isinstance(channel, LogisticChannel):
        return rng.random(size)
    return np.sqrt(channel.sigma_d2) * rng.standard_normal(size)


def channel_output(channel: GlmChannel, p: np.ndarray, d: np.ndarray) -> np.ndarray:
    """phi_out(p, d)"""
    if isinstance(channel, LinearChannel):
        return p + d
    if isinstance(channel, LogisticChannel):
        return (expit(p) > d).astype(float)
    if isinstance(channel, TanhChannel):
        return np.tanh(p) + d
    raise ParameterDomainError(f"Unknown channel: {channel!r}")


def channel_predict(channel: GlmChannel, z: np.ndarray) -> np.ndarray:
    """Postulated link phi applied to a predicted score"""
    if isinstance(channel, LinearChannel):
        return np.asarray(z, dtype=float)
    if isinstance(channel, LogisticChannel):
        return (np.asarray(z) > 0).astype(float)
    if isinstance(channel, TanhChannel):
        return np.tanh(z)
    raise ParameterDomainError(f"Unknown channel: {channel!r}")


def channel_noise_var(channel: GlmChannel) -> float:
    """Variance of the additive noise, zero for channels without one"""
    if isinstance(channel, (LinearChannel, TanhChannel)):
        return channel.sigma_d2
    return 0.0


def channel_output_atoms(channel: GlmChannel, p: np.ndarray, n: int) -> Tuple[np.ndarray, np.ndarray]:
    """Conditional law of y given p as atoms (y, weight) along a trailing axis"""
    p = np.asarray(p, dtype=float)
    if isinstance(channel, LogisticChannel):
        rho = expit(p)
        y = np.stack([np.ones_like(p), np.zeros_like(p)], axis=-1)
        w = np.stack([rho, 1.0 - rho], axis=-1)
        return y, w
    mean = np.tanh(p) if isinstance(channel, TanhChannel) else p
    if channel.sigma_d2 == 0.0:
        return mean[..., None], np.ones(p.shape + (1,))
    x, wx = normal_nodes(n)
    y = mean[..., None] + np.sqrt(channel.sigma_d2) * x
    return y, np.broadcast_to(wx, y.shape).copy()


# ---------------------------------------------------------------------------
# Prior on W0
# ---------------------------------------------------------------------------

def sample_prior(law: PriorLaw, size, rng: np.random.Generator) -> np.ndarray:
    if isinstance(law, GaussianPrior):
        return law.mean + np.sqrt(law.var) * rng.standard_normal(size)
    if isinstance(law, BernoulliGaussianPrior):
        active = rng.random(size) < law.sparsity
        return np.where(active, np.sqrt(law.var) * rng.standard_normal(size), 0.0)
    raise ParameterDomainError(f"Unknown prior law: {law!r}")


def prior_nodes(law: PriorLaw, n: int) -> Tuple[np.ndarray, np.ndarray]:
    """Quadrature (values, weights) for the law of W0"""
    x, w = normal_nodes(n)
    if isinstance(law, GaussianPrior):
        if law.var == 0.0:
            return np.array([law.mean]), np.array([1.0])
        return law.mean + np.sqrt(law.var) * x, w
    if isinstance(law, BernoulliGaussianPrior):
        values = np.concatenate([[0.0], np.sqrt(law.var) * x])
        weights = np.concatenate([[1.0 - law.sparsity], law.sparsity * w])
        return values, weights
    raise ParameterDomainError(f"Unknown prior law: {law!r}")


# ---------------------------------------------------------------------------
# Datasets
# ---------------------------------------------------------------------------

def sample_haar_orthogonal(n: int, rng: np.random.Generator) -> np.ndarray:
    """Haar-distributed n x n orthogonal matrix (QR with sign-fixed R diagonal)"""
    if n < 1:
        raise ParameterDomainError(f"n must be >= 1, got {n}")
    Q, R = np.linalg.qr(rng.standard_normal((n, n)))
    signs = np.sign(np.diag(R))
    signs[signs == 0] = 1.0
    return Q * signs


def factor_u(U: np.ndarray):
    """U = V2 diag(s) V1 with V2 (N x N), V1 (p x p) and padded singular values"""
    N, p = U.shape
    V2, s, V1 = np.linalg.svd(U, full_matrices=True)
    s_plus, s_minus = pad_singular_values(s, N, p)
    return V2, s_plus, s_minus, V1


def generate_dataset(
    model: TrueModel,
    spectrum: SpectrumModel,
    channel: GlmChannel,
    rng: np.random.Generator,
) -> Dataset:
    """Draw a training set in factored form"""
    N, p = model.N, model.p
    sample = sample_joint_spectrum(spectrum, p, rng)
    V0 = sample_haar_orthogonal(p, rng)
    U = rng.standard_normal((N, p)) / np.sqrt(p)
    V2, s_plus, s_minus, V1 = factor_u(U)

    w0 = sample_prior(model.w0_law, p, rng)
    d = sample_channel_noise(channel, N, rng)
    y = channel_output(channel, U @ (sample.s_tr * (V0 @ w0)), d)

    logger.debug(f"Generated dataset N={N} p={p} beta={p / N:.4g} channel={channel.kind}")
    return Dataset(
        V0=V0, s_tr=np.array(sample.s_tr), U=U, V1=V1, V2=V2,
        s_plus=s_plus, s_minus=s_minus, w0=w0, y=y,
        s_ts=np.array(sample.s_ts), channel=channel,
    )


def draw_test_scores(
    dataset: Dataset, w_hat: np.ndarray, M_count: int, rng: np.random.Generator
) -> Tuple[np.ndarray, np.ndarray]:
    """Fresh test scores (<x_ts, w0>, <x_ts, w_hat>) with x_ts = u diag(s_ts) V0"""
    w_hat = np.asarray(w_hat, dtype=float)
    if w_hat.shape != (dataset.p,):
        raise ParameterDomainError(f"w_hat has shape {w_hat.shape}, expected ({dataset.p},)")
    if M_count < 1:
        raise ParameterDomainError(f"M_count must be >= 1, got {M_count}")
    # given the dataset the scores are jointly Gaussian with a 2 x 2 Gram covariance;
    # regress b on a so that w_hat = w0 reproduces z exactly
    a = dataset.s_ts * (dataset.V0 @ dataset.w0)
    b = dataset.s_ts * (dataset.V0 @ w_hat)
    aa = float(a @ a)
    coef = float(a @ b) / aa if aa > 0 else 0.0
    resid = b - coef * a
    g = rng.standard_normal((M_count, 2))
    z = np.sqrt(aa / dataset.p) * g[:, 0]
    z_hat = coef * z + np.sqrt(float(resid @ resid) / dataset.p) * g[:, 1]
    return z, z_hat


def generate_test_pairs(
    dataset: Dataset, w_hat: np.ndarray, M_count: int, rng: np.random.Generator
) -> Tuple[np.ndarray, np.ndarray]:
    """(y_ts, yhat_ts) for M_count fresh test points"""
    if dataset.channel is None:
        raise ParameterDomainError("Dataset has no channel attached")
    z, z_hat = draw_test_scores(dataset, w_hat, M_count, rng)
    d = sample_channel_noise(dataset.channel, M_count, rng)
    return channel_output(dataset.channel, z, d), channel_predict(dataset.channel, z_hat)


def metric_loss(metric: str, y: np.ndarray, y_hat: np.ndarray) -> np.ndarray:
    """Per-sample f_ts"""
    if metric in ("squared", "squared_db"):
        return (np.asarray(y_hat) - np.asarray(y)) ** 2
    if metric == "zero_one":
        return (np.asarray(y_hat) != np.asarray(y)).astype(float)
    raise ParameterDomainError(f"Unknown test metric '{metric}', expected one of {TEST_METRICS}")


def normalized_db(mse: float, output_power: float) -> float:
    """10 log10(E(yhat - y)^2 / E y^2)"""
    return float(10.0 * np.log10(mse / output_power))


def empirical_test_error(pairs: Tuple[np.ndarray, np.ndarray], metric: str = "squared") -> float:
    """Mean test loss; `squared_db` returns the normalized dB form"""
    y, y_hat = (np.asarray(a, dtype=float) for a in pairs)
    if y.size == 0:
        raise ParameterDomainError("No test pairs")
    loss = float(np.mean(metric_loss(metric, y, y_hat)))
    if metric == "squared_db":
        return normalized_db(loss, float(np.mean(y ** 2)))
    return loss
