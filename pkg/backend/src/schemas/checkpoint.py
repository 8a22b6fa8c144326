"""
Pydantic schemas for the JSON checkpoint format
"""

from typing import Any, Literal

from pydantic import BaseModel, ConfigDict, Field

CHECKPOINT_FORMAT = "kalmatch-checkpoint"
CHECKPOINT_VERSION = 1

Matrix = list[list[float]]


class ScorerState(BaseModel):
    hidden_width: int = Field(ge=1)
    fc1_weight: Matrix
    fc1_bias: list[float]
    fc2_weight: Matrix
    fc2_bias: list[float]


class AppearanceHeadState(BaseModel):
    in_dim: int = Field(ge=1)
    out_dim: int = Field(ge=1)
    temperature: float = Field(gt=0)
    weight: Matrix


class Checkpoint(BaseModel):
    """Versioned container for trained parameters and the run that made them"""

    format: Literal["kalmatch-checkpoint"] = CHECKPOINT_FORMAT
    version: Literal[1] = CHECKPOINT_VERSION
    seed: int
    scorer: ScorerState
    appearance_head: AppearanceHeadState | None = None
    train_config: dict[str, Any]
    c_miss: float | None = None

    model_config = ConfigDict(extra="forbid")
