"""
MOT-Challenge row type
"""

from __future__ import annotations

import dataclasses

from models.detection import BoundingBox, Detection

MOT_COLUMNS = ("frame", "id", "bb_left", "bb_top", "w", "h", "conf", "x", "y", "z")


@dataclasses.dataclass(frozen=True)
class MotRow:
    frame: int
    id: int
    bb_left: float
    bb_top: float
    w: float
    h: float
    conf: float = 1.0
    x: float = -1.0
    y: float = -1.0
    z: float = -1.0

    @property
    def box(self) -> BoundingBox:
        return BoundingBox.from_tlwh(self.bb_left, self.bb_top, self.w, self.h, self.conf)

    def to_detection(self, index: int) -> Detection:
        """Detection with the crop id ``"<frame>:<index>"`` used by sidecar files"""
        return Detection(frame=self.frame, box=self.box, crop_id=crop_id_for(self.frame, index))

    @classmethod
    def from_box(cls, frame: int, track_id: int, box: BoundingBox, conf: float | None = None):
        left, top, w, h = box.to_tlwh()
        return cls(frame, track_id, left, top, w, h, box.conf if conf is None else conf)


def crop_id_for(frame: int, index: int) -> str:
    return f"{frame}:{index}"
