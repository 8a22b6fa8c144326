"""
Pydantic schema for run manifests written next to every output
"""

from typing import Any

from pydantic import BaseModel, ConfigDict, Field


class RunManifest(BaseModel):
    """Everything needed to rerun a subcommand; carries no timestamps"""

    subcommand: str
    version: str
    seed: int | None = None
    config: dict[str, Any] = Field(default_factory=dict)
    inputs: dict[str, str | None] = Field(default_factory=dict)
    outputs: dict[str, str] = Field(default_factory=dict)

    model_config = ConfigDict(frozen=True)
