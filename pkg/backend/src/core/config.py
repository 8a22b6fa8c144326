"""
Configuration settings for the application
"""

from functools import lru_cache
from pathlib import Path
from typing import Any, Literal, TypeVar

import structlog
from dotenv import dotenv_values
from pydantic import BaseModel, ConfigDict, Field, ValidationError, field_validator
from pydantic_settings import BaseSettings, SettingsConfigDict

from core.exceptions import ConfigError

logger = structlog.get_logger(__name__)


def _split_pair(value: Any) -> Any:
    """Accept "a,b" strings from config files for two-element ranges"""
    if isinstance(value, str):
        parts = [p.strip() for p in value.replace(";", ",").split(",") if p.strip()]
        return tuple(float(p) for p in parts)
    return value


class Settings(BaseSettings):
    """Process-wide runtime settings, read from the environment"""

    log_level: str = "INFO"
    log_json: bool = False
    jobs: int = Field(default=1, ge=1)
    torch_threads: int = Field(default=1, ge=1)
    seed: int = Field(default=0, ge=0)

    model_config = SettingsConfigDict(
        env_prefix="KALMATCH_",
        env_file=".env",
        case_sensitive=False,  # Allow lowercase env variables
        extra="ignore",
    )


_settings_overrides: dict[str, Any] = {}


@lru_cache
def get_settings() -> Settings:
    try:
        return Settings(**_settings_overrides)
    except ValidationError as e:
        first = e.errors()[0]
        raise ConfigError(".".join(str(p) for p in first["loc"]), first["msg"])


def override_settings(**values: Any) -> Settings:
    """Apply command-line values on top of the environment; None leaves a key alone"""
    _settings_overrides.clear()
    _settings_overrides.update({k: v for k, v in values.items() if v is not None})
    get_settings.cache_clear()
    return get_settings()


class RunConfig(BaseModel):
    """Base for validated run configurations loaded from KEY=VALUE files"""

    model_config = ConfigDict(extra="forbid", frozen=True)


class TrainConfig(RunConfig):
    """Training of the pairwise scorer and the appearance head"""

    learning_rate: float = Field(default=5e-3, ge=0)
    epochs: int = Field(default=10, ge=1)
    appearance_learning_rate: float = Field(default=1e-4, ge=0)
    appearance_epochs: int = Field(default=3, ge=0)
    sinkhorn_iters: int = Field(default=20, ge=1)
    clip_length: int = Field(default=10, ge=2)
    clip_stride: int | None = Field(default=None, ge=1)
    sigma_q: float = Field(default=150.0, gt=0)
    sigma_r: float = Field(default=5.0, gt=0)
    init_variance: float = Field(default=300.0, gt=0)
    seed: int = Field(default=0, ge=0)

    optimizer: Literal["sgd", "adam"] = "sgd"
    adam_betas: tuple[float, float] = (0.9, 0.999)
    adam_eps: float = Field(default=1e-8, gt=0)
    hidden_width: int = Field(default=64, ge=1)
    max_grad_norm: float = Field(default=10.0, ge=0)
    max_steps: int | None = Field(default=None, ge=1)
    objective: Literal["smoothed", "filtered"] = "smoothed"
    train_fraction: float = Field(default=1.0, gt=0, le=1)

    conf_threshold: float = Field(default=0.5, ge=0, le=1)
    match_iou: float = Field(default=0.1, ge=0, le=1)

    appearance: bool = False
    appearance_dim: int = Field(default=16, ge=1)
    appearance_temperature: float = Field(default=0.1, gt=0)
    appearance_optimizer: Literal["sgd", "adam"] = "adam"

    @field_validator("adam_betas", mode="before")
    @classmethod
    def _parse_betas(cls, value: Any) -> Any:
        return _split_pair(value)

    @property
    def stride(self) -> int:
        return self.clip_stride or self.clip_length


class TrackerConfig(RunConfig):
    """Online tracker parameters"""

    kappa: float = Field(default=5.0, ge=0)
    s_min: float = Field(default=0.85, gt=-1, lt=1)
    tau: int = Field(default=60, ge=1)
    c_miss: float = 0.0
    sigma_pos: float = Field(default=1 / 20, gt=0)
    sigma_vel: float = Field(default=1 / 160, gt=0)
    new_track_conf: float = Field(default=0.6, ge=0, le=1)
    ema_momentum: float = Field(default=0.9, ge=0, lt=1)
    use_appearance: bool = False


class SceneConfig(RunConfig):
    """Synthetic scene generator parameters"""

    num_objects: int = Field(default=5, ge=1)
    num_frames: int = Field(default=50, ge=1)
    width: float = Field(default=1920.0, gt=0)
    height: float = Field(default=1080.0, gt=0)
    box_width: tuple[float, float] = (30.0, 60.0)
    box_height: tuple[float, float] = (60.0, 120.0)
    speed: tuple[float, float] = (1.0, 6.0)
    layout: Literal["lanes", "crossing", "parallel"] = "lanes"
    spacing: float | None = Field(default=None, gt=0)
    miss_rate: float = Field(default=0.0, ge=0, lt=1)
    fp_rate: float = Field(default=0.0, ge=0, lt=1)
    center_noise: float = Field(default=0.0, ge=0)
    size_noise: float = Field(default=0.0, ge=0)
    num_gaps: int = Field(default=0, ge=0)
    gap_length: int = Field(default=10, ge=0)
    embedding_dim: int = Field(default=16, ge=1)
    embedding_noise: float = Field(default=0.05, ge=0)
    seed: int = Field(default=0, ge=0)

    @field_validator("box_width", "box_height", "speed", mode="before")
    @classmethod
    def _parse_ranges(cls, value: Any) -> Any:
        return _split_pair(value)

    @field_validator("box_width", "box_height", "speed")
    @classmethod
    def _ordered_positive(cls, value: tuple[float, float]) -> tuple[float, float]:
        low, high = value
        if low <= 0 or high < low:
            raise ValueError("range must satisfy 0 < low <= high")
        return value


ConfigT = TypeVar("ConfigT", bound=RunConfig)


def load_config(
    model: type[ConfigT],
    path: str | Path | None = None,
    overrides: dict[str, Any] | None = None,
    defaults: dict[str, Any] | None = None,
) -> ConfigT:
    """Build a run config from defaults, an optional KEY=VALUE file and overrides.

    Overrides whose value is ``None`` are ignored, so unset CLI flags fall back
    to the file and then to the model defaults.
    """
    values: dict[str, Any] = dict(defaults or {})
    if path is not None:
        config_path = Path(path)
        if not config_path.is_file():
            raise ConfigError("config", f"file not found: {config_path}")
        values.update(
            {k.lower(): v for k, v in dotenv_values(config_path).items() if v}
        )
    values.update({k: v for k, v in (overrides or {}).items() if v is not None})

    try:
        config = model.model_validate(values)
    except ValidationError as e:
        first = e.errors()[0]
        field = ".".join(str(part) for part in first["loc"]) or model.__name__
        raise ConfigError(field, first["msg"])

    logger.debug("config_loaded", model=model.__name__, source=str(path))
    return config
