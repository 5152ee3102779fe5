from typing import Dict, List, Literal, Optional

from pydantic import BaseModel, Field, model_validator

from app.config import SeConfig
from app.models.glm import GaussianPrior, GlmChannel, LinearChannel, PriorLaw
from app.models.penalties import L2Penalty, Penalty, SquaredLoss
from app.models.results import GenErrorReport, RidgeConstants, SeFixedPoint
from app.models.spectra import IsoConstant, SpectrumModel


Metric = Literal["squared", "squared_db", "zero_one"]


class ProblemSpec(BaseModel):
    """A learning problem: data law, estimator and test metric"""

    spectrum: SpectrumModel = IsoConstant()
    channel: GlmChannel = LinearChannel()
    w0_law: PriorLaw = GaussianPrior()
    f_in: Penalty = L2Penalty()
    f_out: Penalty = SquaredLoss()
    beta: Optional[float] = Field(None, gt=0.0, description="p/N; derived from N and p when omitted")
    N: Optional[int] = Field(None, ge=1)
    p: Optional[int] = Field(None, ge=1)
    metric: Metric = "squared"
    se: Optional[SeConfig] = None
    mc: Optional[int] = Field(None, ge=2, description="Samples for the report expectations")

    @model_validator(mode="after")
    def _resolve_beta(self) -> "ProblemSpec":
        if self.beta is None and self.N is not None and self.p is not None:
            self.beta = self.p / self.N
        return self


class SeResponse(BaseModel):
    """Response schema for a state-evolution prediction"""
    fixed_point: SeFixedPoint
    report: GenErrorReport
    e_ts_db: Optional[float] = None


class RidgeRequest(BaseModel):
    """Request schema for the ridge closed form"""
    beta: float = Field(..., gt=0.0)
    lam: float = Field(..., gt=0.0)
    sigma_tr2: float = Field(1.0, gt=0.0)
    var_w0: float = Field(1.0, ge=0.0)
    sigma_d2: float = Field(0.0, ge=0.0)
    sigma_ts2: Optional[float] = Field(None, ge=0.0, description="Test eigenvalue; defaults to sigma_tr2")


class RidgeResponse(BaseModel):
    """Ridge constants with the resulting test MSE; one pair per side when beta = 1"""
    constants: List[RidgeConstants]
    e_ts: List[float]


class RidgelessRequest(BaseModel):
    """Request schema for the ridgeless closed form"""
    beta: float = Field(..., gt=0.0)
    sigma_d2: float = Field(..., ge=0.0)
    sigma_tr2: float = Field(1.0, gt=0.0)
    var_w0: float = Field(1.0, ge=0.0)


class MismatchRequest(RidgeRequest):
    """Request schema for the Bernoulli mismatch closed form"""
    epsilons: List[float] = Field(..., min_length=1)


class ClosedFormResponse(BaseModel):
    """Labeled closed-form values"""
    values: Dict[str, float]


class FitResponse(BaseModel):
    """Response schema for an uploaded-dataset fit"""
    N: int
    p: int
    converged: bool
    iterations: int
    kkt_residual: float
    objective: float
    w_hat: List[float]
    param_mse: float
    gamma_plus: List[float]
    gamma_minus: List[float]
