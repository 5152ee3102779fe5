from typing import Annotated, Literal, Union

from pydantic import BaseModel, ConfigDict, Field


class L2Penalty(BaseModel):
    """f(w) = (lam / beta) w**2 / 2"""

    model_config = ConfigDict(frozen=True)

    name: Literal["l2"] = "l2"
    lam: float = Field(1.0, ge=0.0)
    beta: float = Field(1.0, gt=0.0, description="Divides lam when the beta-scaled convention is used")

    @property
    def coef(self) -> float:
        return self.lam / self.beta


class L1Penalty(BaseModel):
    """f(w) = lam |w|"""

    model_config = ConfigDict(frozen=True)

    name: Literal["l1"] = "l1"
    lam: float = Field(1.0, ge=0.0)


class SquaredLoss(BaseModel):
    """f(p; y) = scale (y - p)**2 / 2"""

    model_config = ConfigDict(frozen=True)

    name: Literal["squared"] = "squared"
    scale: float = Field(1.0, gt=0.0)


class LogisticLoss(BaseModel):
    """f(p; y) = log(1 + e**p) - y p"""

    model_config = ConfigDict(frozen=True)

    name: Literal["logistic"] = "logistic"


class HingeLoss(BaseModel):
    """f(p; y) = max(0, 1 - y p); labels y > 0 count as +1, all others as -1"""

    model_config = ConfigDict(frozen=True)

    name: Literal["hinge"] = "hinge"


class TanhLoss(BaseModel):
    """f(p; y) = (y - tanh p)**2 / (2 sigma_d2); non-convex"""

    model_config = ConfigDict(frozen=True)

    name: Literal["tanh"] = "tanh"
    sigma_d2: float = Field(1.0, gt=0.0)


Penalty = Annotated[
    Union[L2Penalty, L1Penalty, SquaredLoss, LogisticLoss, HingeLoss, TanhLoss],
    Field(discriminator="name"),
]

INPUT_PENALTIES = ("l2", "l1")
OUTPUT_PENALTIES = ("squared", "logistic", "hinge", "tanh")
QUADRATIC_PENALTIES = ("l2", "squared")
