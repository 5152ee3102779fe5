from pathlib import Path
from typing import Any, Dict, Literal, Optional, Union
import logging
import os

from dotenv import dotenv_values, load_dotenv
from pydantic import BaseModel, ConfigDict, Field, ValidationError
from pydantic_settings import BaseSettings, SettingsConfigDict

from app.exceptions import ConfigurationError

# Load environment variables from .env file
load_dotenv()

logger = logging.getLogger(__name__)

ENV_PREFIX = "GLMLAB_"


class MlvampConfig(BaseModel):
    """Solver settings for the ML-VAMP iteration"""

    model_config = ConfigDict(extra="forbid")

    damping: float = Field(0.75, gt=0.0, le=1.0, description="Weight on the new value")
    max_iters: int = Field(500, ge=1)
    tol: float = Field(1e-8, gt=0.0, description="Relative message change for stopping")
    gamma_init: float = Field(1.0, gt=0.0)
    max_bad_iters: int = Field(50, ge=1, description="Consecutive growth steps before divergence")
    max_degenerate_iters: int = Field(10, ge=1)
    alpha_clip: float = Field(1e-6, gt=0.0, lt=0.5)
    gamma_min: float = 1e-11
    gamma_max: float = 1e11


class SeConfig(BaseModel):
    """Settings for the scalar state evolution"""

    model_config = ConfigDict(extra="forbid")

    mc_samples: int = Field(1_000_000, ge=2)
    tol: float = Field(1e-7, gt=0.0)
    max_iters: int = Field(500, ge=1)
    damping: float = Field(0.5, gt=0.0, le=1.0)
    seed: Optional[int] = None
    method: Literal["auto", "mc", "quadrature"] = "auto"
    gh_nodes: int = Field(24, ge=2, description="Gauss-Hermite order for nonlinear layers")
    tau_init: float = Field(1.0, gt=0.0)
    gamma_init: float = Field(1.0, gt=0.0)
    chunks: int = Field(8, ge=1, description="Substream partitions of the MC pool")
    refresh_pool: bool = False
    alpha_clip: float = Field(1e-6, gt=0.0, lt=0.5)
    max_degenerate_iters: int = Field(10, ge=1)


class BaselineConfig(BaseModel):
    """Settings for the direct empirical solvers"""

    model_config = ConfigDict(extra="forbid")

    newton_tol: float = 1e-8
    newton_max_iters: int = 100
    adam_epochs: int = 200
    adam_step: float = 1e-2
    batch_size: int = 32


class SweepConfig(BaseModel):
    """Settings for experiment sweeps"""

    model_config = ConfigDict(extra="forbid")

    workers: int = Field(1, ge=1)
    test_samples: int = Field(1000, ge=1)
    local_min_factor: float = Field(1.05, ge=1.0)


class Settings(BaseSettings):
    """Application settings"""

    project_name: str = "glmlab"
    api_prefix: str = "/api/v1"
    log_level: str = "INFO"
    debug: bool = False

    seed: int = 0

    mlvamp: MlvampConfig = MlvampConfig()
    se: SeConfig = SeConfig()
    baseline: BaselineConfig = BaselineConfig()
    sweep: SweepConfig = SweepConfig()

    model_config = SettingsConfigDict(
        env_prefix=ENV_PREFIX,
        env_nested_delimiter="__",
        extra="forbid",
    )

    @classmethod
    def settings_customise_sources(
        cls, settings_cls, init_settings, env_settings, dotenv_settings, file_secret_settings
    ):
        # Environment beats the config file, which arrives as init kwargs
        return env_settings, init_settings, file_secret_settings

    @property
    def se_seed(self) -> int:
        return self.se.seed if self.se.seed is not None else self.seed


def _nest(flat: Dict[str, Optional[str]]) -> Dict[str, Any]:
    nested: Dict[str, Any] = {}
    for key, value in flat.items():
        if value is None:
            raise ConfigurationError(f"Config key '{key}' has no value")
        parts = key.strip().lower().split(".")
        node = nested
        for part in parts[:-1]:
            node = node.setdefault(part, {})
            if not isinstance(node, dict):
                raise ConfigurationError(f"Config key '{key}' collides with a scalar key")
        node[parts[-1]] = value
    return nested


def load_settings(path: Optional[Union[str, Path]] = None) -> Settings:
    """Build settings from a flat `key = value` file with dotted sections"""
    values: Dict[str, Any] = {}
    if path is not None:
        path = Path(path)
        if not path.is_file():
            raise ConfigurationError(f"Config file not found: {path}")
        values = _nest(dotenv_values(path))
        logger.debug(f"Loaded {len(values)} config sections from {path}")

    try:
        loaded = Settings(**values)
    except ValidationError as e:
        logger.error(f"Invalid configuration: {e}")
        raise ConfigurationError(str(e)) from e

    if f"{ENV_PREFIX}SEED" in os.environ and loaded.se.seed is not None:
        # the environment seed wins over a per-section seed from the file
        loaded = loaded.model_copy(update={"se": loaded.se.model_copy(update={"seed": None})})
    return loaded


settings = load_settings()
