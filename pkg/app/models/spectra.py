from typing import Annotated, Literal, Union

import numpy as np
from pydantic import BaseModel, ConfigDict, Field, field_validator, model_validator


class IsoConstant(BaseModel):
    """Deterministic spectrum: every eigenvalue equals sigma**2"""

    model_config = ConfigDict(frozen=True)

    kind: Literal["iso"] = "iso"
    sigma_tr: float = Field(1.0, gt=0.0, description="Training feature stdev")
    sigma_ts: float = Field(1.0, ge=0.0, description="Test feature stdev")


class LogNormal(BaseModel):
    """S**2 = A * 10**(0.1 u) with (u_tr, u_ts) jointly Gaussian in dB"""

    model_config = ConfigDict(frozen=True)

    kind: Literal["lognormal"] = "lognormal"
    A: float = Field(1.0, gt=0.0, description="Scale of the squared eigenvalues")
    sigma_u_db: float = Field(3.0, ge=0.0, description="dB standard deviation of u")
    rho: float = Field(1.0, ge=-1.0, le=1.0, description="Correlation of u_tr and u_ts")


class BernoulliMismatch(BaseModel):
    """S_tr, S_ts in {0, 1}; the pair disagrees with probability epsilon"""

    model_config = ConfigDict(frozen=True)

    kind: Literal["bernoulli"] = "bernoulli"
    epsilon: float = Field(0.0, ge=0.0, le=1.0)


SpectrumModel = Annotated[
    Union[IsoConstant, LogNormal, BernoulliMismatch], Field(discriminator="kind")
]


class SpectrumSample(BaseModel):
    """Finite draw of the joint training/test singular values"""

    model_config = ConfigDict(frozen=True, arbitrary_types_allowed=True)

    s_tr: np.ndarray
    s_ts: np.ndarray

    @model_validator(mode="after")
    def _check(self) -> "SpectrumSample":
        if self.s_tr.shape != self.s_ts.shape or self.s_tr.ndim != 1:
            raise ValueError("s_tr and s_ts must be 1-D arrays of equal length")
        if np.any(self.s_tr < 0) or np.any(self.s_ts < 0):
            raise ValueError("singular values must be nonnegative")
        if not (np.all(np.isfinite(self.s_tr)) and np.all(np.isfinite(self.s_ts))):
            raise ValueError("singular values must be finite")
        self.s_tr.flags.writeable = False
        self.s_ts.flags.writeable = False
        return self

    @property
    def p(self) -> int:
        return int(self.s_tr.shape[0])


class MpLaw(BaseModel):
    """Marchenko-Pastur law for an N x p matrix with N(0, 1/p) entries, beta = p/N"""

    model_config = ConfigDict(frozen=True)

    beta: float = Field(..., gt=0.0)

    @field_validator("beta")
    @classmethod
    def _finite(cls, v: float) -> float:
        if not np.isfinite(v):
            raise ValueError("beta must be finite")
        return v

    @property
    def a(self) -> float:
        return (1.0 - np.sqrt(self.beta)) ** 2

    @property
    def b(self) -> float:
        return (1.0 + np.sqrt(self.beta)) ** 2

    @property
    def zero_mass_plus(self) -> float:
        """Mass at zero of the N-side padded singular values"""
        return max(1.0 - self.beta, 0.0)

    @property
    def zero_mass_minus(self) -> float:
        """Mass at zero of the p-side padded singular values"""
        return max(1.0 - 1.0 / self.beta, 0.0)
