"""
Cut detection streams into fixed-size training clips.

A clip keeps the K confident detections of its first frame. Later frames are
matched to constant-velocity extrapolations of those K boxes; slots without a
match get the extrapolated box and surplus detections are dropped.
"""

from collections.abc import Mapping, Sequence
from concurrent.futures import ThreadPoolExecutor

import numpy as np
import structlog
from scipy.optimize import linear_sum_assignment

from core.config import TrainConfig
from models.detection import BoundingBox, Detection, DetectionClip
from services.assoc_net import box_iou_grid

logger = structlog.get_logger(__name__)


class _Slot:
    __slots__ = ("box", "vx", "vy", "frame")

    def __init__(self, box: BoundingBox, frame: int):
        self.box = box
        self.vx = 0.0
        self.vy = 0.0
        self.frame = frame

    def predict(self, frame: int) -> BoundingBox:
        gap = frame - self.frame
        return self.box.shifted(self.vx * gap, self.vy * gap)

    def observe(self, box: BoundingBox, frame: int) -> None:
        gap = max(frame - self.frame, 1)
        self.vx = (box.cx - self.box.cx) / gap
        self.vy = (box.cy - self.box.cy) / gap
        self.box = box
        self.frame = frame


def _match(predicted: list[BoundingBox], candidates: list[Detection], min_iou: float) -> dict[int, int]:
    """slot -> candidate index, by maximum total IoU above ``min_iou``"""
    if not predicted or not candidates:
        return {}
    iou = box_iou_grid(predicted, [d.box for d in candidates]).numpy()
    rows, cols = linear_sum_assignment(-iou)
    return {int(r): int(c) for r, c in zip(rows, cols, strict=True) if iou[r, c] >= min_iou}


def _build_clip(
    sequence_id: str,
    frames: Sequence[Sequence[Detection]],
    frame_indices: Sequence[int],
    conf_threshold: float,
    match_iou: float,
) -> DetectionClip | None:
    seeds = [d for d in frames[0] if d.conf >= conf_threshold]
    if not seeds:
        logger.warning("clip_skipped", sequence=sequence_id, start_frame=frame_indices[0], reason="K=0")
        return None

    slots = [_Slot(d.box, frame_indices[0]) for d in seeds]
    out: list[tuple[Detection, ...]] = [tuple(seeds)]
    filled_total = 0
    dropped_total = 0

    for frame, detections in zip(frame_indices[1:], frames[1:], strict=True):
        candidates = [d for d in detections if d.conf >= conf_threshold]
        predicted = [slot.predict(frame) for slot in slots]
        matches = _match(predicted, candidates, match_iou)

        used = sorted(matches.values())
        kept = [candidates[i] for i in used]
        filled = []
        for k, slot in enumerate(slots):
            if k in matches:
                slot.observe(candidates[matches[k]].box, frame)
            else:
                filled.append(Detection(frame=frame, box=predicted[k], filled=True))
        filled_total += len(filled)
        dropped_total += len(candidates) - len(kept)
        out.append(tuple(kept) + tuple(filled))

    logger.debug(
        "clip_built",
        sequence=sequence_id,
        start_frame=frame_indices[0],
        objects=len(seeds),
        filled=filled_total,
        dropped=dropped_total,
    )
    return DetectionClip(sequence_id, tuple(frame_indices), tuple(out))


def preprocess_clips(
    frames: Sequence[Sequence[Detection]],
    conf_threshold: float = 0.5,
    T: int = 10,
    stride: int | None = None,
    match_iou: float = 0.1,
    sequence_id: str = "sequence",
    frame_indices: Sequence[int] | None = None,
) -> list[DetectionClip]:
    """Windows of T consecutive frames, each turned into a clip of constant K"""
    stride = stride or T
    indices = list(frame_indices) if frame_indices is not None else list(range(1, len(frames) + 1))
    clips = []
    for start in range(0, len(frames) - T + 1, stride):
        clip = _build_clip(
            sequence_id,
            frames[start : start + T],
            indices[start : start + T],
            conf_threshold,
            match_iou,
        )
        if clip is not None:
            clips.append(clip)
    return clips


def preprocess_sequences(
    sequences: Mapping[str, Sequence[Sequence[Detection]]],
    cfg: TrainConfig,
    jobs: int = 1,
) -> list[DetectionClip]:
    """Clips of every sequence, concatenated in the mapping's order"""

    def run(item: tuple[str, Sequence[Sequence[Detection]]]) -> list[DetectionClip]:
        name, frames = item
        return preprocess_clips(
            frames,
            cfg.conf_threshold,
            cfg.clip_length,
            cfg.stride,
            cfg.match_iou,
            sequence_id=name,
        )

    with ThreadPoolExecutor(max_workers=jobs) as pool:
        per_sequence = list(pool.map(run, sequences.items()))

    clips = [clip for chunk in per_sequence for clip in chunk]
    logger.info(
        "clips_prepared",
        sequences=len(sequences),
        clips=len(clips),
        objects=int(np.sum([c.num_objects for c in clips])) if clips else 0,
    )
    return clips
