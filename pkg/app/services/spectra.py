"""Spectrum models for training/test covariances and Marchenko-Pastur analytics.

The MP law here is that of an N x p matrix U with i.i.d. N(0, 1/p) entries and
beta = p/N. Its Stieltjes transform is taken over the positive eigenvalues of
U^T U normalized to unit mass, which is what reproduces G0 = beta/|beta - 1| on
both sides of beta = 1. Zero eigenvalues are carried separately as point
masses (1 - beta)_+ on the N side and (1 - 1/beta)_+ on the p side.
"""
from functools import lru_cache
from typing import Callable, Literal, Tuple
import logging

import numpy as np
from scipy.integrate import cumulative_trapezoid

from app.exceptions import NumericalError, ParameterDomainError, PoleError
from app.models.spectra import (
    BernoulliMismatch,
    IsoConstant,
    LogNormal,
    MpLaw,
    SpectrumModel,
    SpectrumSample,
)

logger = logging.getLogger(__name__)

LN10_OVER_10 = np.log(10.0) / 10.0
GL_ORDER = 20
BASE_NODES = 2000
MAX_REFINEMENTS = 8
QUAD_TOL = 1e-11
STRUCTURAL_ZERO = 1e-12
ORIGIN_STEPS = (-1e-6, -1e-7, -1e-8)

Side = Literal["plus", "minus"]


# ---------------------------------------------------------------------------
# Joint training/test spectrum
# ---------------------------------------------------------------------------

def sample_joint_spectrum(model: SpectrumModel, p: int, rng: np.random.Generator) -> SpectrumSample:
    """Draw p i.i.d. pairs (s_tr, s_ts) from the joint law of the model"""
    if p < 1:
        raise ParameterDomainError(f"p must be >= 1, got {p}")

    if isinstance(model, IsoConstant):
        s_tr = np.full(p, model.sigma_tr)
        s_ts = np.full(p, model.sigma_ts)
    elif isinstance(model, LogNormal):
        u_tr, u_ts = _correlated_db(model, rng.standard_normal(p), rng.standard_normal(p))
        s_tr = np.sqrt(model.A * 10.0 ** (0.1 * u_tr))
        s_ts = np.sqrt(model.A * 10.0 ** (0.1 * u_ts))
    elif isinstance(model, BernoulliMismatch):
        s_tr = (rng.random(p) < 0.5).astype(float)
        flip = rng.random(p) < model.epsilon
        s_ts = np.where(flip, 1.0 - s_tr, s_tr)
    else:
        raise ParameterDomainError(f"Unknown spectrum model: {model!r}")

    return SpectrumSample(s_tr=s_tr, s_ts=s_ts)


def _correlated_db(model: LogNormal, g1: np.ndarray, g2: np.ndarray) -> Tuple[np.ndarray, np.ndarray]:
    u_tr = model.sigma_u_db * g1
    u_ts = model.sigma_u_db * (model.rho * g1 + np.sqrt(max(1.0 - model.rho ** 2, 0.0)) * g2)
    return u_tr, u_ts


def spectrum_nodes(model: SpectrumModel, n: int = 40) -> Tuple[np.ndarray, np.ndarray, np.ndarray]:
    """Quadrature nodes (s_tr, s_ts, weights) for expectations over the joint law"""
    if isinstance(model, IsoConstant):
        return np.array([model.sigma_tr]), np.array([model.sigma_ts]), np.array([1.0])

    if isinstance(model, BernoulliMismatch):
        eps = model.epsilon
        s_tr = np.array([0.0, 1.0, 0.0, 1.0])
        s_ts = np.array([0.0, 1.0, 1.0, 0.0])
        w = np.array([(1 - eps) / 2, (1 - eps) / 2, eps / 2, eps / 2])
        keep = w > 0
        return s_tr[keep], s_ts[keep], w[keep]

    if isinstance(model, LogNormal):
        if model.sigma_u_db == 0.0:
            s = np.sqrt(model.A)
            return np.array([s]), np.array([s]), np.array([1.0])
        x, wx = normal_nodes(n)
        g1, g2 = np.meshgrid(x, x, indexing="ij")
        u_tr, u_ts = _correlated_db(model, g1.ravel(), g2.ravel())
        w = np.outer(wx, wx).ravel()
        return np.sqrt(model.A * 10.0 ** (0.1 * u_tr)), np.sqrt(model.A * 10.0 ** (0.1 * u_ts)), w

    raise ParameterDomainError(f"Unknown spectrum model: {model!r}")


def second_moments(model: SpectrumModel) -> Tuple[float, float]:
    """Exact (E S_tr^2, E S_ts^2)"""
    if isinstance(model, IsoConstant):
        return model.sigma_tr ** 2, model.sigma_ts ** 2
    if isinstance(model, LogNormal):
        m = model.A * np.exp(0.5 * (LN10_OVER_10 * model.sigma_u_db) ** 2)
        return float(m), float(m)
    if isinstance(model, BernoulliMismatch):
        return 0.5, 0.5
    raise ParameterDomainError(f"Unknown spectrum model: {model!r}")


def rescale_spectrum(model: SpectrumModel, factor: float) -> SpectrumModel:
    """Multiply every squared singular value (training and test) by factor"""
    if factor <= 0 or not np.isfinite(factor):
        raise ParameterDomainError(f"Rescale factor must be positive, got {factor}")
    if isinstance(model, IsoConstant):
        root = float(np.sqrt(factor))
        return model.model_copy(update={"sigma_tr": model.sigma_tr * root, "sigma_ts": model.sigma_ts * root})
    if isinstance(model, LogNormal):
        return model.model_copy(update={"A": model.A * factor})
    raise ParameterDomainError(f"{model.kind} spectra have fixed {{0,1}} support and cannot be rescaled")


def normal_nodes(n: int) -> Tuple[np.ndarray, np.ndarray]:
    """Gauss-Hermite nodes and weights for the standard normal (weights sum to 1)"""
    x, w = _hermite(int(n))
    return x.copy(), w.copy()


@lru_cache(maxsize=32)
def _hermite(n: int) -> Tuple[np.ndarray, np.ndarray]:
    x, w = np.polynomial.hermite_e.hermegauss(n)
    return x, w / np.sqrt(2.0 * np.pi)


# ---------------------------------------------------------------------------
# Marchenko-Pastur analytics
# ---------------------------------------------------------------------------

def mp_density(law: MpLaw, x: np.ndarray) -> np.ndarray:
    """mu_beta(x) for eigenvalues x of beta U^T U (mass min(1, 1/beta))"""
    x = np.asarray(x, dtype=float)
    a, b = law.a, law.b
    inside = (x > a) & (x < b)
    out = np.zeros_like(x)
    xi = x[inside]
    out[inside] = np.sqrt((b - xi) * (xi - a)) / (2.0 * np.pi * law.beta * xi)
    return out


def _theta_map(law: MpLaw, theta: np.ndarray) -> Tuple[np.ndarray, np.ndarray]:
    """Eigenvalues lam(theta) of U^T U and the unit-mass density in theta.

    x = a + 2r cos^2(theta/2) sweeps [a, b] and cancels the square-root edges,
    so the integrand is smooth in theta even when a = 0.
    """
    r = 2.0 * np.sqrt(law.beta)
    half = 0.5 * theta
    cos2 = np.cos(half) ** 2
    x = law.a + 2.0 * r * cos2
    sin2 = 4.0 * np.sin(half) ** 2 * cos2
    density = r ** 2 * sin2 / (2.0 * np.pi * law.beta * x) * max(1.0, law.beta)
    return x / law.beta, density


@lru_cache(maxsize=16)
def _panel_rule(n_panels: int) -> Tuple[np.ndarray, np.ndarray]:
    x, w = np.polynomial.legendre.leggauss(GL_ORDER)
    edges = np.linspace(0.0, np.pi, n_panels + 1)
    half = 0.5 * np.diff(edges)
    mid = 0.5 * (edges[:-1] + edges[1:])
    theta = (mid[:, None] + half[:, None] * x[None, :]).ravel()
    weights = (half[:, None] * w[None, :]).ravel()
    return theta, weights


def mp_integrate(law: MpLaw, f: Callable[[np.ndarray], np.ndarray], tol: float = QUAD_TOL) -> float:
    """E f(lam) over the positive eigenvalues of U^T U (unit mass)"""
    n_panels = BASE_NODES // GL_ORDER
    previous = None
    for _ in range(MAX_REFINEMENTS):
        theta, weights = _panel_rule(n_panels)
        lam, density = _theta_map(law, theta)
        value = float(np.sum(weights * density * f(lam)))
        if previous is not None and abs(value - previous) <= tol * max(1.0, abs(value)):
            return value
        previous = value
        n_panels *= 2
    raise NumericalError(
        f"MP quadrature did not settle for beta={law.beta}",
        details={"last": previous, "panels": n_panels},
    )


def mp_side_nodes(law: MpLaw, side: Side, n_panels: int = 10) -> Tuple[np.ndarray, np.ndarray]:
    """Nodes (s, weights) of the padded singular values on one side, zero atom included"""
    theta, weights = _panel_rule(n_panels)
    lam, density = _theta_map(law, theta)
    zero = law.zero_mass_plus if side == "plus" else law.zero_mass_minus
    w = weights * density
    w = w / w.sum() * (1.0 - zero)
    s = np.sqrt(lam)
    if zero > 0:
        s = np.concatenate([[0.0], s])
        w = np.concatenate([[zero], w])
    return s, w


def _check_below_support(law: MpLaw, z: float) -> None:
    edge = law.a / law.beta
    if not np.isfinite(z) or z >= edge:
        raise ParameterDomainError(f"z={z} must lie strictly below the support edge {edge:.6g}")


def mp_stieltjes(law: MpLaw, z: float) -> float:
    """G_mp(z) = E[1/(S^2 - z); S > 0] over the unit-mass positive law"""
    _check_below_support(law, z)
    return mp_integrate(law, lambda lam: 1.0 / (lam - z))


def mp_stieltjes_derivative(law: MpLaw, z: float) -> float:
    """G'_mp(z) = E[1/(S^2 - z)^2; S > 0]"""
    _check_below_support(law, z)
    return mp_integrate(law, lambda lam: 1.0 / (lam - z) ** 2)


def stieltjes_at_origin(law: MpLaw) -> float:
    """lim_{z -> 0-} G_mp(z), Richardson-extrapolated from three small negative z"""
    if law.beta == 1.0:
        raise PoleError("G_mp diverges at the origin when beta = 1")
    g = [mp_stieltjes(law, z) for z in ORIGIN_STEPS]
    # steps shrink by 10: eliminate the linear then the quadratic term
    first = [(10.0 * g[i + 1] - g[i]) / 9.0 for i in range(2)]
    return (100.0 * first[1] - first[0]) / 99.0


def g0(beta: float) -> float:
    """Closed-form origin value beta/|beta - 1|"""
    if beta == 1.0:
        raise PoleError("G0 is infinite at beta = 1")
    return beta / abs(beta - 1.0)


@lru_cache(maxsize=64)
def _theta_table(beta: float, n: int = 16385) -> Tuple[np.ndarray, np.ndarray, np.ndarray]:
    law = MpLaw(beta=beta)
    theta = np.linspace(0.0, np.pi, n)
    lam, density = _theta_map(law, theta)
    cdf = cumulative_trapezoid(density, theta, initial=0.0)
    cdf /= cdf[-1]
    return theta, lam, cdf


def mp_cdf(law: MpLaw, x: np.ndarray) -> np.ndarray:
    """CDF of the unit-mass positive law in the units of beta U^T U"""
    _, lam, cdf = _theta_table(law.beta)
    # lam decreases along theta, so P(X <= x) = 1 - cdf(theta(x))
    xs = lam[::-1] * law.beta
    upper = (1.0 - cdf)[::-1]
    return np.interp(np.asarray(x, dtype=float), xs, upper, left=0.0, right=1.0)


def sample_mp_squared(law: MpLaw, side: Side, size: int, rng: np.random.Generator) -> np.ndarray:
    """Draws of the padded S^2 on one side (point mass at zero included)"""
    theta, lam, cdf = _theta_table(law.beta)
    zero = law.zero_mass_plus if side == "plus" else law.zero_mass_minus
    u = rng.random(size)
    v = rng.random(size)
    draws = np.interp(np.interp(u, cdf, theta), theta, lam)
    return np.where(v < zero, 0.0, draws)


def pad_singular_values(s: np.ndarray, N: int, p: int) -> Tuple[np.ndarray, np.ndarray]:
    """Zero-pad the min(N, p) singular values to lengths N and p"""
    s = np.asarray(s, dtype=float)
    if s.size:
        s = np.where(s < STRUCTURAL_ZERO * s.max(), 0.0, s)
    s_plus = np.zeros(N)
    s_minus = np.zeros(p)
    k = min(N, p, s.size)
    s_plus[:k] = s[:k]
    s_minus[:k] = s[:k]
    return s_plus, s_minus


def sample_mp_singulars(law: MpLaw, N: int, p: int, rng: np.random.Generator) -> Tuple[np.ndarray, np.ndarray]:
    """Singular values of an N x p Gaussian(0, 1/p) matrix, padded to N and p"""
    if N < 1 or p < 1:
        raise ParameterDomainError(f"N and p must be >= 1, got N={N}, p={p}")
    if abs(p / N - law.beta) > 1e-12 * max(1.0, law.beta):
        logger.warning(f"Sampling MP singulars with p/N={p / N:.6g} != beta={law.beta:.6g}")
    U = rng.standard_normal((N, p)) / np.sqrt(p)
    s = np.linalg.svd(U, compute_uv=False)
    return pad_singular_values(s, N, p)
