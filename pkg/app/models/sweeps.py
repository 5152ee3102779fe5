from typing import List, Literal, Optional

from pydantic import BaseModel, Field, field_validator

from app.models.glm import GaussianPrior, GlmChannel, LinearChannel, PriorLaw
from app.models.penalties import L2Penalty, Penalty, SquaredLoss
from app.models.spectra import IsoConstant, SpectrumModel

CSV_COLUMNS = ("beta", "n", "p", "trial", "empirical_err", "se_pred", "closedform_pred", "runtime_ms", "status")
SUMMARY_COLUMNS = (
    "beta", "n", "p", "median_empirical", "mean_empirical", "se_pred", "closedform_pred", "n_ok", "n_excluded",
)

TrialStatus = Literal["ok", "failed", "local_min"]


class SweepPlan(BaseModel):
    """One experiment family: a grid of n/p ratios with repeated trials"""

    name: str = "sweep"
    p: int = Field(..., ge=1, description="Feature count")
    n_over_p: List[float] = Field(..., min_length=1)
    trials: int = Field(1, ge=1)
    spectrum: SpectrumModel = IsoConstant()
    channel: GlmChannel = LinearChannel()
    w0_law: PriorLaw = GaussianPrior()
    f_in: Penalty = L2Penalty()
    f_out: Penalty = SquaredLoss()
    metric: Literal["squared", "squared_db", "zero_one"] = "squared"
    seed: Optional[int] = None
    solver: Literal["mlvamp", "baseline"] = "mlvamp"
    se_method: Optional[Literal["auto", "mc", "quadrature"]] = None
    se_mc_samples: Optional[int] = Field(None, ge=2)
    closed_form: bool = True

    # calibration hooks, applied in this order before any trial runs
    output_power: Optional[float] = Field(None, gt=0.0, description="Target E p^2, reached by rescaling the spectrum")
    snr_db: Optional[float] = Field(None, description="Sets the channel noise from E S_tr^2 E W0^2")
    target_error: Optional[float] = Field(None, gt=0.0, lt=1.0, description="Oracle error rate for logistic data")

    @field_validator("n_over_p")
    @classmethod
    def _positive(cls, v: List[float]) -> List[float]:
        if any(not r > 0 for r in v):
            raise ValueError("grid ratios must be positive")
        return v


class SweepRow(BaseModel):
    beta: float
    n: int
    p: int
    trial: int
    empirical_err: float
    se_pred: float
    closedform_pred: Optional[float] = None
    runtime_ms: float
    status: TrialStatus = "ok"
    objective: Optional[float] = None


class SweepSummaryRow(BaseModel):
    beta: float
    n: int
    p: int
    median_empirical: float
    mean_empirical: float
    se_pred: float
    closedform_pred: Optional[float] = None
    n_ok: int
    n_excluded: int


class SweepResult(BaseModel):
    plan: SweepPlan
    rows: List[SweepRow]
    summary: List[SweepSummaryRow]


class MismatchCurve(BaseModel):
    epsilons: List[float]
    closed_form: List[float]
    se: List[float]
    r2_closed_form: float
    r2_se: float
