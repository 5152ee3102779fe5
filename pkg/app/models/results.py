from typing import Dict, List, Optional

import numpy as np
from pydantic import BaseModel, ConfigDict, Field


class VampState(BaseModel):
    """Messages and estimates of the three-layer ML-VAMP sweep.

    Index l runs over layers 0..2; vectors on layer 2 have length N, the rest length p.
    """

    model_config = ConfigDict(arbitrary_types_allowed=True)

    r_minus: List[np.ndarray]
    gamma_minus: List[float]
    r_plus: List[Optional[np.ndarray]] = [None, None, None]
    gamma_plus: List[Optional[float]] = [None, None, None]
    z_hat: List[Optional[np.ndarray]] = [None, None, None]
    p_hat: List[Optional[np.ndarray]] = [None, None, None]
    alpha_plus: List[Optional[float]] = [None, None, None]
    alpha_minus: List[Optional[float]] = [None, None, None]
    degenerate: List[str] = []
    iteration: int = 0

    def messages(self) -> np.ndarray:
        parts = [r for r in self.r_minus] + [r for r in self.r_plus if r is not None]
        return np.concatenate(parts)


class IterationRecord(BaseModel):
    iteration: int
    rel_change: float
    gamma_plus: List[float]
    gamma_minus: List[float]


class FitResult(BaseModel):
    model_config = ConfigDict(arbitrary_types_allowed=True)

    w_hat: np.ndarray
    converged: bool
    iterations: int
    history: List[IterationRecord] = []
    kkt_residual: float
    objective: float
    state: Optional[VampState] = None


class SeFixedPoint(BaseModel):
    """Converged scalar parameters of the state evolution"""

    beta: float
    gamma_bar_plus: List[float] = Field(..., min_length=3, max_length=3)
    gamma_bar_minus: List[float] = Field(..., min_length=3, max_length=3)
    alpha_bar_plus: List[float] = Field(..., min_length=3, max_length=3)
    alpha_bar_minus: List[float] = Field(..., min_length=3, max_length=3)
    K0_plus: List[List[float]]
    K1_plus: List[List[float]]
    K2_plus: List[List[float]]
    tau_minus: List[float] = Field(..., min_length=3, max_length=3)
    tau0: List[float] = Field(..., min_length=3, max_length=3)
    noise_var: float = Field(0.0, description="Additive channel noise variance")
    iterations: int
    converged: bool
    method: str
    trajectory: List[List[float]] = []
    stein_alpha: Dict[str, float] = {}

    @property
    def gamma0_plus(self) -> float:
        return self.gamma_bar_plus[0]

    @property
    def gamma1_minus(self) -> float:
        return self.gamma_bar_minus[1]

    @property
    def k22(self) -> float:
        return self.K0_plus[1][1]

    @property
    def tau1_minus(self) -> float:
        return self.tau_minus[1]

    @property
    def sigma_d2(self) -> float:
        return self.noise_var


class RidgeConstants(BaseModel):
    """Fixed-point constants of ridge regression with an isotropic spectrum"""

    beta: float
    lam: float
    sigma_tr2: float
    var_w0: float
    sigma_d2: float
    u: float
    z: float
    G: float
    Gprime: float
    eta: float
    kappa: float
    gamma0_plus: float
    gamma1_plus: float
    gamma1_minus: float
    alpha1_plus: float
    alpha1_minus: float
    k22: float
    tau1_minus: float


class GenErrorReport(BaseModel):
    M: List[List[float]]
    M_direct: Optional[List[List[float]]] = None
    m_discrepancy: Optional[float] = None
    metric: str
    e_ts: float
    e_ts_mc: float
    e_ts_stderr: float
    e_ts_closed_form: Optional[float] = None
    output_power: float
    param_mse: Optional[float] = None

    @property
    def e_ts_db(self) -> float:
        return float(10.0 * np.log10(self.e_ts / self.output_power))
