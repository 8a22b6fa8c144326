"""
Online tracker record
"""

from __future__ import annotations

import dataclasses
import enum

import torch

from models.detection import BoundingBox
from models.gaussian import GaussianBelief

# Indices into the 8-D track state (x, y, w, h, vx, vy, vw, vh)
BOX_SLICE = slice(0, 4)
MIN_BOX_SIZE = 1e-3


class TrackState(enum.Enum):
    ACTIVE = "active"
    COASTING = "coasting"
    TERMINATED = "terminated"


@dataclasses.dataclass
class Track:
    id: int
    belief: GaussianBelief
    appearance: torch.Tensor | None = None
    misses: int = 0
    age: int = 0
    hits: int = 1
    conf: float = 1.0
    class_label: int = -1
    state: TrackState = TrackState.ACTIVE

    @property
    def box(self) -> BoundingBox:
        """Current box estimate, sizes clamped away from zero"""
        cx, cy, w, h = (float(v) for v in self.belief.mean[BOX_SLICE])
        return BoundingBox(cx, cy, max(w, MIN_BOX_SIZE), max(h, MIN_BOX_SIZE), self.conf)

    @property
    def is_alive(self) -> bool:
        return self.state is not TrackState.TERMINATED
