import numpy as np
import pytest

from app.config import MlvampConfig, SeConfig
from app.models.glm import GaussianPrior, LinearChannel, TrueModel
from app.models.spectra import IsoConstant
from app.services.synthdata import generate_dataset


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


@pytest.fixture
def quad_cfg():
    return SeConfig(method="quadrature", tol=1e-10, max_iters=3000, mc_samples=200_000, seed=7)


@pytest.fixture
def mc_cfg():
    return SeConfig(method="mc", tol=1e-9, max_iters=3000, mc_samples=20_000, seed=7, chunks=4)


@pytest.fixture
def vamp_cfg():
    return MlvampConfig(max_iters=2000, tol=1e-11)


@pytest.fixture
def ridge_dataset(rng):
    model = TrueModel(w0_law=GaussianPrior(), p=100, N=200)
    return generate_dataset(model, IsoConstant(), LinearChannel(sigma_d2=0.1), rng)
