from typing import Annotated, Literal, Optional, Union

import numpy as np
from pydantic import BaseModel, ConfigDict, Field, model_validator


# Output channels y = phi_out(p, d)

class LinearChannel(BaseModel):
    """y = p + d with d ~ N(0, sigma_d2); predictions use the identity link"""

    model_config = ConfigDict(frozen=True)

    kind: Literal["linear"] = "linear"
    sigma_d2: float = Field(0.0, ge=0.0, description="Noise variance")


class LogisticChannel(BaseModel):
    """y = 1{rho(p) > d} with d ~ Unif(0, 1); predictions use 1{z > 0}"""

    model_config = ConfigDict(frozen=True)

    kind: Literal["logistic"] = "logistic"


class TanhChannel(BaseModel):
    """y = tanh(p) + d with d ~ N(0, sigma_d2); predictions use tanh"""

    model_config = ConfigDict(frozen=True)

    kind: Literal["tanh"] = "tanh"
    sigma_d2: float = Field(0.0, ge=0.0, description="Noise variance")


GlmChannel = Annotated[
    Union[LinearChannel, LogisticChannel, TanhChannel], Field(discriminator="kind")
]


# Laws for the true coefficients W0

class GaussianPrior(BaseModel):
    model_config = ConfigDict(frozen=True)

    kind: Literal["gaussian"] = "gaussian"
    mean: float = 0.0
    var: float = Field(1.0, ge=0.0)

    @property
    def second_moment(self) -> float:
        return self.var + self.mean ** 2


class BernoulliGaussianPrior(BaseModel):
    """W0 = 0 with probability 1 - sparsity, N(0, var) otherwise"""

    model_config = ConfigDict(frozen=True)

    kind: Literal["bernoulli_gaussian"] = "bernoulli_gaussian"
    sparsity: float = Field(0.1, gt=0.0, le=1.0, description="Probability of a nonzero")
    var: float = Field(1.0, ge=0.0)

    @property
    def second_moment(self) -> float:
        return self.sparsity * self.var


PriorLaw = Annotated[
    Union[GaussianPrior, BernoulliGaussianPrior], Field(discriminator="kind")
]


class TrueModel(BaseModel):
    model_config = ConfigDict(frozen=True)

    w0_law: PriorLaw = GaussianPrior()
    p: int = Field(..., ge=1, description="Feature count")
    N: int = Field(..., ge=1, description="Sample count")

    @property
    def beta(self) -> float:
        return self.p / self.N


class Dataset(BaseModel):
    """Training set kept in factored form X = U diag(s_tr) V0 with U = V2 S V1"""

    model_config = ConfigDict(frozen=True, arbitrary_types_allowed=True)

    V0: np.ndarray
    s_tr: np.ndarray
    U: np.ndarray
    V1: np.ndarray
    V2: np.ndarray
    s_plus: np.ndarray = Field(..., description="Singular values of U padded to length N")
    s_minus: np.ndarray = Field(..., description="Singular values of U padded to length p")
    w0: np.ndarray
    y: np.ndarray
    s_ts: np.ndarray
    channel: Optional[GlmChannel] = None

    @model_validator(mode="after")
    def _check_shapes(self) -> "Dataset":
        N, p = self.U.shape
        expected = {
            "V0": (p, p), "s_tr": (p,), "V1": (p, p), "V2": (N, N),
            "s_plus": (N,), "s_minus": (p,), "w0": (p,), "y": (N,), "s_ts": (p,),
        }
        for name, shape in expected.items():
            arr = getattr(self, name)
            if arr.shape != shape:
                raise ValueError(f"{name} has shape {arr.shape}, expected {shape}")
        for name in ("V0", "s_tr", "U", "V1", "V2", "s_plus", "s_minus", "w0", "y", "s_ts"):
            getattr(self, name).flags.writeable = False
        return self

    @property
    def N(self) -> int:
        return int(self.U.shape[0])

    @property
    def p(self) -> int:
        return int(self.U.shape[1])

    @property
    def beta(self) -> float:
        return self.p / self.N

    def design_matrix(self) -> np.ndarray:
        return (self.U * self.s_tr) @ self.V0
