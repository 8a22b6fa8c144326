"""
Online tracking with the learned association cost.

Each frame: predict every track, score predictions against detections,
solve an augmented assignment in which any track or detection may stay
unmatched at cost c_miss, then update, coast, terminate and spawn tracks.
"""

import dataclasses
import itertools
import time
from collections.abc import Mapping, Sequence
from concurrent.futures import ThreadPoolExecutor

import numpy as np
import structlog
import torch
from scipy.optimize import linear_sum_assignment

from core.config import TrackerConfig
from core.exceptions import KalmatchError
from models.detection import BoundingBox, Detection, boxes_to_tensor
from models.gaussian import DTYPE, GaussianBelief, KalmanParams, constant_velocity_block, position_selector
from models.mot import MotRow
from models.track import BOX_SLICE, MIN_BOX_SIZE, Track, TrackState
from services.assoc_net import AppearanceHead, PairwiseScorer, score_grid
from services.gaussian_core import kf_predict, kf_update

logger = structlog.get_logger(__name__)

BOX_DIMS = 4
TRANSITION = constant_velocity_block(BOX_DIMS)
OBSERVATION = position_selector(BOX_DIMS)
DEFAULT_C_MISS_GRID = (-2.0, -1.0, 0.0, 1.0, 2.0)
# Scores carry an arbitrary offset and scale, so calibration also tries
# thresholds read off the link costs of the sequences themselves.
BEST_LINK_QUANTILES = (0.5, 0.9, 1.0)
SEPARATION_FRACTIONS = (0.1, 0.25, 0.5, 0.75)
TRUE_LINK_QUANTILE = 0.9


def _size(track_or_box: Track | BoundingBox) -> tuple[float, float]:
    box = track_or_box.box if isinstance(track_or_box, Track) else track_or_box
    return max(box.w, MIN_BOX_SIZE), max(box.h, MIN_BOX_SIZE)


def process_noise(w: float, h: float, cfg: TrackerConfig) -> torch.Tensor:
    p, v = cfg.sigma_pos, cfg.sigma_vel
    return torch.diag(torch.tensor([p * w, p * h, p * w, p * h, v * w, v * h, v * w, v * h], dtype=DTYPE) ** 2)


def observation_noise(w: float, h: float, cfg: TrackerConfig) -> torch.Tensor:
    p = cfg.sigma_pos
    return torch.diag(torch.tensor([p * w, p * h, p * w, p * h], dtype=DTYPE) ** 2)


def track_params(w: float, h: float, cfg: TrackerConfig) -> KalmanParams:
    """Single-track constant-velocity model with size-dependent noise"""
    return KalmanParams(
        F=TRANSITION,
        H=OBSERVATION,
        Q=process_noise(w, h, cfg),
        R=observation_noise(w, h, cfg),
        num_objects=1,
    )


def init_track(
    det: BoundingBox,
    embedding: torch.Tensor | None,
    cfg: TrackerConfig,
    track_id: int = 0,
    class_label: int = -1,
) -> Track:
    p, v = cfg.sigma_pos, cfg.sigma_vel
    w, h = det.w, det.h
    mean = torch.tensor([det.cx, det.cy, w, h, 0.0, 0.0, 0.0, 0.0], dtype=DTYPE)
    std = torch.tensor(
        [2 * p * w, 2 * p * h, 2 * p * w, 2 * p * h, 10 * v * w, 10 * v * h, 10 * v * w, 10 * v * h],
        dtype=DTYPE,
    )
    return Track(
        id=track_id,
        belief=GaussianBelief(mean, torch.diag(std**2)),
        appearance=embedding,
        conf=det.conf,
        class_label=class_label,
    )


def predict_tracks(tracks: Sequence[Track], cfg: TrackerConfig) -> list[BoundingBox]:
    """Advance every track one frame in place and return the predicted boxes"""
    boxes = []
    for track in tracks:
        w, h = _size(track)
        track.belief = kf_predict(track.belief, track_params(w, h, cfg))
        boxes.append(track.box)
    return boxes


def cost_matrix(
    preds: Sequence[BoundingBox],
    dets: Sequence[BoundingBox],
    scorer: PairwiseScorer,
    cfg: TrackerConfig,
    track_embeddings: torch.Tensor | None = None,
    det_embeddings: torch.Tensor | None = None,
) -> np.ndarray:
    """c_ij = -g(pred_i, det_j) - kappa (cos_ij - s_min), appearance term only when enabled"""
    with torch.no_grad():
        cost = -score_grid(scorer, boxes_to_tensor(list(preds)), boxes_to_tensor(list(dets)))
        if cfg.use_appearance and track_embeddings is not None and det_embeddings is not None:
            cosines = track_embeddings @ det_embeddings.T
            cost = cost - cfg.kappa * (cosines - cfg.s_min)
    return cost.numpy()


@dataclasses.dataclass(frozen=True)
class Assignment:
    pairs: list[tuple[int, int]]
    unmatched_rows: list[int]
    unmatched_cols: list[int]
    cost: float


def solve_assignment(C: np.ndarray, c_miss: float) -> Assignment:
    """Minimum-cost matching where each row or column may instead take c_miss.

    The N x M matrix is embedded in an (N+M) x (M+N) one: the top-right and
    bottom-left blocks carry c_miss on their diagonals and are forbidden
    elsewhere, the bottom-right block is zero.
    """
    C = np.asarray(C, dtype=np.float64)
    if C.ndim != 2:
        raise KalmatchError(f"cost matrix must be 2-D, got shape {C.shape}")
    if not np.isfinite(C).all():
        raise KalmatchError("cost matrix has non-finite entries")
    n, m = C.shape
    if n == 0 or m == 0:
        return Assignment([], list(range(n)), list(range(m)), c_miss * (n + m))

    augmented = np.zeros((n + m, m + n))
    augmented[:n, :m] = C
    row_miss = np.full((n, n), np.inf)
    np.fill_diagonal(row_miss, c_miss)
    col_miss = np.full((m, m), np.inf)
    np.fill_diagonal(col_miss, c_miss)
    augmented[:n, m:] = row_miss
    augmented[n:, :m] = col_miss

    rows, cols = linear_sum_assignment(augmented)
    pairs = [(int(r), int(c)) for r, c in zip(rows, cols, strict=True) if r < n and c < m]
    matched_rows = {r for r, _ in pairs}
    matched_cols = {c for _, c in pairs}
    return Assignment(
        pairs=pairs,
        unmatched_rows=[r for r in range(n) if r not in matched_rows],
        unmatched_cols=[c for c in range(m) if c not in matched_cols],
        cost=float(augmented[rows, cols].sum()),
    )


class Tracker:
    """Online state machine for one sequence"""

    def __init__(
        self,
        scorer: PairwiseScorer,
        cfg: TrackerConfig,
        head: AppearanceHead | None = None,
        sequence_id: str = "sequence",
    ):
        if cfg.use_appearance and head is None:
            raise KalmatchError("use_appearance requires an appearance head")
        self.scorer = scorer
        self.cfg = cfg
        self.head = head if cfg.use_appearance else None
        self.sequence_id = sequence_id
        self.tracks: list[Track] = []
        self._next_id = 1

    def _embed(self, detections: Sequence[Detection]) -> torch.Tensor | None:
        if self.head is None or not detections:
            return None
        with torch.no_grad():
            return self.head.embed([d.crop_id for d in detections])

    def _update_appearance(self, track: Track, embedding: torch.Tensor) -> None:
        if track.appearance is None:
            track.appearance = embedding
            return
        blended = self.cfg.ema_momentum * track.appearance + (1 - self.cfg.ema_momentum) * embedding
        track.appearance = blended / blended.norm()

    def _spawn(self, det: Detection, embedding: torch.Tensor | None) -> Track:
        track = init_track(det.box, embedding, self.cfg, self._next_id, det.class_label)
        self._next_id += 1
        self.tracks.append(track)
        logger.debug("track_born", sequence=self.sequence_id, track=track.id, frame=det.frame)
        return track

    def step(self, detections: Sequence[Detection], frame: int) -> list[MotRow]:
        """Advance one frame; emits rows for tracks matched or born in this frame"""
        preds = predict_tracks(self.tracks, self.cfg)
        det_embeddings = self._embed(detections)

        track_embeddings = None
        if det_embeddings is not None and self.tracks:
            track_embeddings = torch.stack(
                [t.appearance if t.appearance is not None else torch.zeros(det_embeddings.shape[1], dtype=DTYPE) for t in self.tracks]
            )

        C = cost_matrix(preds, [d.box for d in detections], self.scorer, self.cfg, track_embeddings, det_embeddings)
        assignment = solve_assignment(C, self.cfg.c_miss)

        emitted: list[Track] = []
        for row, col in assignment.pairs:
            track, det = self.tracks[row], detections[col]
            w, h = _size(track)
            track.belief, _ = kf_update(track.belief, det.box.as_tensor(), OBSERVATION, observation_noise(w, h, self.cfg))
            track.misses = 0
            track.hits += 1
            track.conf = det.conf
            track.class_label = det.class_label
            track.state = TrackState.ACTIVE
            if det_embeddings is not None:
                self._update_appearance(track, det_embeddings[col])
            emitted.append(track)

        for row in assignment.unmatched_rows:
            track = self.tracks[row]
            track.misses += 1
            track.state = TrackState.COASTING
            if track.misses > self.cfg.tau:
                track.state = TrackState.TERMINATED
                logger.debug("track_terminated", sequence=self.sequence_id, track=track.id, frame=frame)

        for track in self.tracks:
            track.age += 1
        self.tracks = [t for t in self.tracks if t.is_alive]

        for col in assignment.unmatched_cols:
            det = detections[col]
            if det.conf >= self.cfg.new_track_conf:
                embedding = det_embeddings[col] if det_embeddings is not None else None
                emitted.append(self._spawn(det, embedding))

        return sorted(
            (MotRow.from_box(frame, t.id, t.box, t.conf) for t in emitted),
            key=lambda r: r.id,
        )

    def run(self, frames: Sequence[Sequence[Detection]], frame_indices: Sequence[int] | None = None) -> list[MotRow]:
        indices = list(frame_indices) if frame_indices is not None else list(range(1, len(frames) + 1))
        started = time.perf_counter()
        rows: list[MotRow] = []
        for frame, detections in zip(indices, frames, strict=True):
            rows.extend(self.step(detections, frame))
        elapsed = time.perf_counter() - started
        logger.info(
            "sequence_tracked",
            sequence=self.sequence_id,
            frames=len(indices),
            tracks=self._next_id - 1,
            fps=round(len(indices) / elapsed, 1) if elapsed > 0 else None,
        )
        return rows


def track_sequences(
    sequences: Mapping[str, Sequence[Sequence[Detection]]],
    scorer: PairwiseScorer,
    cfg: TrackerConfig,
    head: AppearanceHead | None = None,
    jobs: int = 1,
) -> dict[str, list[MotRow]]:
    """Independent trackers per sequence; results keep the mapping's order"""

    def run(item: tuple[str, Sequence[Sequence[Detection]]]) -> list[MotRow]:
        name, frames = item
        return Tracker(scorer, cfg, head, sequence_id=name).run(frames)

    with ThreadPoolExecutor(max_workers=jobs) as pool:
        results = list(pool.map(run, sequences.items()))
    return dict(zip(sequences.keys(), results, strict=True))


@dataclasses.dataclass(frozen=True)
class LinkCosts:
    """Motion costs of linking each detection to the detections of the frame before.

    ``best`` holds the cheapest link per detection, ``runner_up`` the second
    cheapest where the previous frame has two or more detections.
    """

    best: np.ndarray
    runner_up: np.ndarray

    @property
    def true_link_cost(self) -> float:
        return float(np.quantile(self.best, TRUE_LINK_QUANTILE))

    @property
    def separated(self) -> bool:
        return self.runner_up.size > 0 and float(np.median(self.runner_up)) > self.true_link_cost


def link_costs(
    scorer: PairwiseScorer,
    sequences: Mapping[str, Sequence[Sequence[Detection]]],
    cfg: TrackerConfig,
) -> LinkCosts:
    best: list[np.ndarray] = []
    runner_up: list[np.ndarray] = []
    for frames in sequences.values():
        for prev, cur in itertools.pairwise(frames):
            if not prev or not cur:
                continue
            ordered = np.sort(cost_matrix([d.box for d in prev], [d.box for d in cur], scorer, cfg), axis=0)
            best.append(ordered[0])
            if ordered.shape[0] > 1:
                runner_up.append(ordered[1])
    if not best:
        raise KalmatchError("no consecutive frames with detections to measure link costs")
    return LinkCosts(np.concatenate(best), np.concatenate(runner_up) if runner_up else np.empty(0))


def c_miss_candidates(costs: LinkCosts) -> list[float]:
    """Miss costs spread over the observed link costs.

    A pair wins over leaving both of its ends unmatched when its cost is below
    2 c_miss, so every threshold t on link costs becomes the candidate t / 2.
    """
    thresholds = [float(q) for q in np.quantile(costs.best, BEST_LINK_QUANTILES)]
    if costs.separated:
        low, high = costs.true_link_cost, float(np.median(costs.runner_up))
        thresholds.extend(low + f * (high - low) for f in SEPARATION_FRACTIONS)
    return sorted({t / 2 for t in thresholds})


def estimate_c_miss(costs: LinkCosts) -> float:
    """Label-free c_miss: halfway between true links and runner-up links"""
    if costs.separated:
        return (costs.true_link_cost + float(np.median(costs.runner_up))) / 4
    return float(costs.best.max()) / 2


def calibrate_c_miss(
    scorer: PairwiseScorer,
    sequences: Mapping[str, Sequence[Sequence[Detection]]],
    ground_truth: Mapping[str, Sequence[MotRow]],
    cfg: TrackerConfig,
    head: AppearanceHead | None = None,
    grid: Sequence[float] | None = None,
    jobs: int = 1,
) -> tuple[float, dict[float, tuple[float, int]]]:
    """Grid value with the best MOTA; ties go to fewer IDSW, then the smaller value.

    Without an explicit grid the fixed default values are joined by
    candidates taken from the link costs of ``sequences``.
    """
    from services.metrics import evaluate_sequences

    if grid is None:
        grid = (*DEFAULT_C_MISS_GRID, *c_miss_candidates(link_costs(scorer, sequences, cfg)))
    if not grid:
        raise KalmatchError("c_miss grid is empty")

    scores: dict[float, tuple[float, int]] = {}
    for value in sorted(set(grid)):
        trial = cfg.model_copy(update={"c_miss": float(value)})
        results = track_sequences(sequences, scorer, trial, head, jobs)
        report = evaluate_sequences(ground_truth, results)
        scores[float(value)] = (report.mota, report.idsw)
        logger.info("c_miss_trial", c_miss=value, mota=report.mota, idsw=report.idsw)

    best = min(scores, key=lambda v: (-scores[v][0], scores[v][1], v))
    logger.info("c_miss_calibrated", c_miss=best)
    return best, scores
