"""
CLEAR MOT and identity metrics for desk-scale evaluation
"""

from collections import defaultdict
from collections.abc import Mapping, Sequence

import numpy as np
import structlog

from models.detection import Detection, boxes_to_tensor
from models.mot import MotRow
from schemas.report import EvalReport, SequenceMetrics
from services.assoc_net import box_iou_grid
from services.tracker import solve_assignment

logger = structlog.get_logger(__name__)


def _by_frame(rows: Sequence[MotRow]) -> dict[int, list[MotRow]]:
    frames: dict[int, list[MotRow]] = defaultdict(list)
    for row in rows:
        frames[row.frame].append(row)
    return frames


def _iou(gts: Sequence[MotRow], hyps: Sequence[MotRow]) -> np.ndarray:
    return box_iou_grid(
        boxes_to_tensor([r.box for r in gts]), boxes_to_tensor([r.box for r in hyps])
    ).numpy()


def _frame_matches(
    iou: np.ndarray,
    gt_ids: list[int],
    hyp_ids: list[int],
    previous: Mapping[int, int],
    threshold: float,
) -> list[tuple[int, int]]:
    """Row/column pairs: still-valid previous correspondences first, then Hungarian"""
    pairs = []
    for g, gt_id in enumerate(gt_ids):
        hyp_id = previous.get(gt_id)
        if hyp_id is not None and hyp_id in hyp_ids:
            h = hyp_ids.index(hyp_id)
            if iou[g, h] >= threshold:
                pairs.append((g, h))

    free_g = [g for g in range(len(gt_ids)) if g not in {p[0] for p in pairs}]
    free_h = [h for h in range(len(hyp_ids)) if h not in {p[1] for p in pairs}]
    if free_g and free_h:
        sub = iou[np.ix_(free_g, free_h)]
        # a match always beats leaving both sides unmatched; invalid pairs never do
        c_miss = float(len(free_g) + len(free_h) + 1)
        cost = np.where(sub >= threshold, 1.0 - sub, 2 * c_miss + 1)
        assignment = solve_assignment(cost, c_miss)
        pairs.extend((free_g[r], free_h[c]) for r, c in assignment.pairs)
    return pairs


def _idf1_counts(gt_rows: Sequence[MotRow], result_rows: Sequence[MotRow], threshold: float) -> int:
    """IDTP of the best global one-to-one mapping between gt and result ids"""
    gt_ids = sorted({r.id for r in gt_rows})
    hyp_ids = sorted({r.id for r in result_rows})
    if not gt_ids or not hyp_ids:
        return 0
    gt_index = {i: n for n, i in enumerate(gt_ids)}
    hyp_index = {i: n for n, i in enumerate(hyp_ids)}

    overlap = np.zeros((len(gt_ids), len(hyp_ids)))
    hyps_by_frame = _by_frame(result_rows)
    for frame, gts in _by_frame(gt_rows).items():
        hyps = hyps_by_frame.get(frame, [])
        if not hyps:
            continue
        hits = _iou(gts, hyps) >= threshold
        for g, h in zip(*np.nonzero(hits), strict=True):
            overlap[gt_index[gts[g].id], hyp_index[hyps[h].id]] += 1

    assignment = solve_assignment(-overlap, 0.0)
    return int(sum(overlap[r, c] for r, c in assignment.pairs))


def evaluate(
    gt_rows: Sequence[MotRow],
    result_rows: Sequence[MotRow],
    iou_threshold: float = 0.5,
    sequence: str = "sequence",
) -> SequenceMetrics:
    gt_frames = _by_frame(gt_rows)
    hyp_frames = _by_frame(result_rows)

    matches = fn = fp = idsw = 0
    current: dict[int, int] = {}
    last_match: dict[int, int] = {}
    for frame in sorted(set(gt_frames) | set(hyp_frames)):
        gts = gt_frames.get(frame, [])
        hyps = hyp_frames.get(frame, [])
        gt_ids = [r.id for r in gts]
        hyp_ids = [r.id for r in hyps]

        pairs = _frame_matches(_iou(gts, hyps), gt_ids, hyp_ids, current, iou_threshold) if gts and hyps else []
        current = {}
        for g, h in pairs:
            gt_id, hyp_id = gt_ids[g], hyp_ids[h]
            if gt_id in last_match and last_match[gt_id] != hyp_id:
                idsw += 1
            last_match[gt_id] = hyp_id
            current[gt_id] = hyp_id

        matches += len(pairs)
        fn += len(gts) - len(pairs)
        fp += len(hyps) - len(pairs)

    num_gt = len(gt_rows)
    idtp = _idf1_counts(gt_rows, result_rows, iou_threshold)
    idfn = num_gt - idtp
    idfp = len(result_rows) - idtp
    denominator = 2 * idtp + idfp + idfn

    return SequenceMetrics(
        sequence=sequence,
        mota=1.0 - (fn + fp + idsw) / max(num_gt, 1),
        idf1=2 * idtp / denominator if denominator else 1.0,
        idsw=idsw,
        num_gt=num_gt,
        fn=fn,
        fp=fp,
        matches=matches,
        idtp=idtp,
        idfp=idfp,
        idfn=idfn,
    )


def summarize(per_sequence: Sequence[SequenceMetrics]) -> EvalReport:
    """Totals recomputed from summed counts, not averaged ratios"""
    num_gt = sum(m.num_gt for m in per_sequence)
    fn = sum(m.fn for m in per_sequence)
    fp = sum(m.fp for m in per_sequence)
    idsw = sum(m.idsw for m in per_sequence)
    idtp = sum(m.idtp for m in per_sequence)
    idfp = sum(m.idfp for m in per_sequence)
    idfn = sum(m.idfn for m in per_sequence)
    denominator = 2 * idtp + idfp + idfn

    total = SequenceMetrics(
        sequence="OVERALL",
        mota=1.0 - (fn + fp + idsw) / max(num_gt, 1),
        idf1=2 * idtp / denominator if denominator else 1.0,
        idsw=idsw,
        num_gt=num_gt,
        fn=fn,
        fp=fp,
        matches=sum(m.matches for m in per_sequence),
        idtp=idtp,
        idfp=idfp,
        idfn=idfn,
    )
    return EvalReport(mota=total.mota, idf1=total.idf1, idsw=idsw, total=total, sequences=list(per_sequence))


def restrict_to_frames(gt_rows: Sequence[MotRow], result_rows: Sequence[MotRow]) -> tuple[list[MotRow], list[MotRow]]:
    """Both row sets cut to the frames they share in range; warns when that drops rows"""
    if not gt_rows or not result_rows:
        return list(gt_rows), list(result_rows)
    low = max(min(r.frame for r in gt_rows), min(r.frame for r in result_rows))
    high = min(max(r.frame for r in gt_rows), max(r.frame for r in result_rows))
    gt = [r for r in gt_rows if low <= r.frame <= high]
    res = [r for r in result_rows if low <= r.frame <= high]
    if len(gt) != len(gt_rows) or len(res) != len(result_rows):
        logger.warning(
            "frame_range_mismatch",
            evaluated=(low, high),
            dropped_gt=len(gt_rows) - len(gt),
            dropped_results=len(result_rows) - len(res),
        )
    return gt, res


def evaluate_sequences(
    ground_truth: Mapping[str, Sequence[MotRow]],
    results: Mapping[str, Sequence[MotRow]],
    iou_threshold: float = 0.5,
) -> EvalReport:
    per_sequence = [
        evaluate(gt, results.get(name, []), iou_threshold, sequence=name)
        for name, gt in ground_truth.items()
    ]
    report = summarize(per_sequence)
    logger.info("evaluated", sequences=len(per_sequence), mota=report.mota, idf1=report.idf1, idsw=report.idsw)
    return report


def label_detections(
    frames: Sequence[Sequence[Detection]],
    gt_rows: Sequence[MotRow],
    iou_threshold: float = 0.5,
    frame_indices: Sequence[int] | None = None,
) -> dict[str, int]:
    """crop id -> ground-truth id, from per-frame IoU matching of detections to ground truth"""
    indices = list(frame_indices) if frame_indices is not None else list(range(1, len(frames) + 1))
    gt_frames = _by_frame(gt_rows)
    labels: dict[str, int] = {}
    for frame, detections in zip(indices, frames, strict=True):
        gts = gt_frames.get(frame, [])
        candidates = [d for d in detections if d.crop_id is not None and not d.filled]
        if not gts or not candidates:
            continue
        iou = box_iou_grid(
            boxes_to_tensor([r.box for r in gts]), boxes_to_tensor([d.box for d in candidates])
        ).numpy()
        c_miss = float(len(gts) + len(candidates) + 1)
        cost = np.where(iou >= iou_threshold, 1.0 - iou, 2 * c_miss + 1)
        for g, d in solve_assignment(cost, c_miss).pairs:
            labels[candidates[d].crop_id] = gts[g].id
    return labels
