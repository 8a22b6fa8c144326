"""
Bounding boxes, detections and preprocessed training clips
"""

from __future__ import annotations

import dataclasses
from collections.abc import Sequence

import torch

from core.exceptions import InvalidBoxError, ShapeMismatchError
from models.gaussian import DTYPE


@dataclasses.dataclass(frozen=True)
class BoundingBox:
    """Axis-aligned box given by center, width and height in pixels"""

    cx: float
    cy: float
    w: float
    h: float
    conf: float = 1.0

    def __post_init__(self):
        if not (self.w > 0 and self.h > 0):
            raise InvalidBoxError(f"box needs positive size, got w={self.w} h={self.h}")

    @classmethod
    def from_tlwh(cls, left: float, top: float, w: float, h: float, conf: float = 1.0):
        return cls(left + w / 2, top + h / 2, w, h, conf)

    def to_tlwh(self) -> tuple[float, float, float, float]:
        return (self.cx - self.w / 2, self.cy - self.h / 2, self.w, self.h)

    def as_tensor(self) -> torch.Tensor:
        return torch.tensor([self.cx, self.cy, self.w, self.h], dtype=DTYPE)

    def shifted(self, dx: float, dy: float) -> BoundingBox:
        return dataclasses.replace(self, cx=self.cx + dx, cy=self.cy + dy)


def boxes_to_tensor(boxes: Sequence[BoundingBox]) -> torch.Tensor:
    """Stack boxes into an ``(n, 4)`` tensor of (cx, cy, w, h)"""
    if not boxes:
        return torch.zeros((0, 4), dtype=DTYPE)
    return torch.tensor([[b.cx, b.cy, b.w, b.h] for b in boxes], dtype=DTYPE)


@dataclasses.dataclass(frozen=True)
class Detection:
    """One detector output in one frame.

    ``crop_id`` resolves the appearance embedding; ``filled`` marks boxes that
    were extrapolated during preprocessing rather than detected.
    """

    frame: int
    box: BoundingBox
    crop_id: str | None = None
    class_label: int = -1
    filled: bool = False

    @property
    def conf(self) -> float:
        return self.box.conf


@dataclasses.dataclass(frozen=True)
class DetectionClip:
    """T frames of exactly K detections each"""

    sequence_id: str
    frame_indices: tuple[int, ...]
    detections: tuple[tuple[Detection, ...], ...]

    def __post_init__(self):
        if len(self.detections) < 2:
            raise ShapeMismatchError("clip length T", ">= 2", len(self.detections))
        if len(self.frame_indices) != len(self.detections):
            raise ShapeMismatchError(
                "clip frame indices", len(self.detections), len(self.frame_indices)
            )
        k = len(self.detections[0])
        for t, frame in enumerate(self.detections):
            if len(frame) != k:
                raise ShapeMismatchError(f"detections in frame {t}", k, len(frame))

    @property
    def num_frames(self) -> int:
        return len(self.detections)

    @property
    def num_objects(self) -> int:
        return len(self.detections[0])

    def boxes(self) -> torch.Tensor:
        """``(T, K, 4)`` tensor of box parameters"""
        return torch.stack([boxes_to_tensor([d.box for d in frame]) for frame in self.detections])

    def crop_ids(self, t: int) -> list[str | None]:
        return [d.crop_id for d in self.detections[t]]
