"""
Synthetic constant-velocity scenes with a simulated detector.

Everything is drawn from the seed's ``scene`` stream in a fixed order, so a
config always yields the same ground truth, detections and embeddings.
"""

import dataclasses

import numpy as np
import structlog

from core.config import SceneConfig
from core.dependencies import numpy_generator
from core.exceptions import InfeasibleSceneError
from models.detection import BoundingBox
from models.mot import MotRow, crop_id_for

logger = structlog.get_logger(__name__)

MAX_PLACEMENT_ATTEMPTS = 100
MIN_NOISY_SIZE = 1.0
FALSE_POSITIVE_CONF = (0.5, 1.0)
# Every object is detected in its first GAP_LEAD_IN frames
GAP_LEAD_IN = 5


@dataclasses.dataclass
class SyntheticScene:
    gt_rows: list[MotRow]
    det_rows: list[MotRow]
    embeddings: dict[str, np.ndarray]
    crop_identity: dict[str, int]
    config: SceneConfig

    @property
    def num_frames(self) -> int:
        return self.config.num_frames


@dataclasses.dataclass(frozen=True)
class _Trajectory:
    start: np.ndarray
    velocity: np.ndarray
    size: np.ndarray

    def centers(self, num_frames: int) -> np.ndarray:
        return self.start + np.arange(num_frames)[:, None] * self.velocity

    def inside(self, cfg: SceneConfig) -> bool:
        centers = self.centers(cfg.num_frames)
        half = self.size / 2
        return bool(
            (centers - half >= 0).all()
            and (centers[:, 0] + half[0] <= cfg.width).all()
            and (centers[:, 1] + half[1] <= cfg.height).all()
        )


def _sizes(rng: np.random.Generator, cfg: SceneConfig) -> np.ndarray:
    return np.stack(
        [rng.uniform(*cfg.box_width, size=cfg.num_objects), rng.uniform(*cfg.box_height, size=cfg.num_objects)],
        axis=1,
    )


def _horizontal_start(rng: np.random.Generator, cfg: SceneConfig, vx: float, w: float) -> float:
    travel = abs(vx) * (cfg.num_frames - 1)
    low = w / 2 + max(0.0, -vx * (cfg.num_frames - 1))
    high = cfg.width - w / 2 - max(0.0, vx * (cfg.num_frames - 1))
    if high < low:
        raise InfeasibleSceneError(
            f"travel {travel:.1f}px plus box width {w:.1f}px exceeds image width {cfg.width}"
        )
    return float(rng.uniform(low, high))


def _lanes(rng: np.random.Generator, cfg: SceneConfig) -> list[_Trajectory]:
    """One horizontal lane per object, directions alternating"""
    sizes = _sizes(rng, cfg)
    lane = cfg.spacing or cfg.height / (cfg.num_objects + 1)
    if lane < cfg.box_height[1] or lane * cfg.num_objects > cfg.height:
        raise InfeasibleSceneError(
            f"{cfg.num_objects} lanes of {lane:.1f}px do not fit boxes up to "
            f"{cfg.box_height[1]}px inside height {cfg.height}"
        )
    top = (cfg.height - lane * (cfg.num_objects - 1)) / 2
    trajectories = []
    for k in range(cfg.num_objects):
        vx = rng.uniform(*cfg.speed) * (1 if k % 2 == 0 else -1)
        x = _horizontal_start(rng, cfg, vx, sizes[k, 0])
        trajectories.append(_Trajectory(np.array([x, top + k * lane]), np.array([vx, 0.0]), sizes[k]))
    return trajectories


def _parallel(rng: np.random.Generator, cfg: SceneConfig) -> list[_Trajectory]:
    """Shared velocity, objects stacked vertically ``spacing`` apart"""
    sizes = _sizes(rng, cfg)
    spacing = cfg.spacing or 1.5 * cfg.box_height[1]
    span = spacing * (cfg.num_objects - 1) + cfg.box_height[1]
    if span > cfg.height:
        raise InfeasibleSceneError(f"stack of {cfg.num_objects} objects needs {span:.1f}px > height {cfg.height}")
    vx = rng.uniform(*cfg.speed)
    x = _horizontal_start(rng, cfg, vx, float(sizes[:, 0].max()))
    top = float(rng.uniform(cfg.box_height[1] / 2, cfg.height - span + cfg.box_height[1] / 2))
    return [
        _Trajectory(np.array([x, top + k * spacing]), np.array([vx, 0.0]), sizes[k])
        for k in range(cfg.num_objects)
    ]


def _crossing(rng: np.random.Generator, cfg: SceneConfig) -> list[_Trajectory]:
    """Paths in random directions through the image center region at random times"""
    sizes = _sizes(rng, cfg)
    center = np.array([cfg.width / 2, cfg.height / 2])
    spread = np.array([0.15 * cfg.width, 0.15 * cfg.height])
    last = cfg.num_frames - 1
    trajectories = []
    for k in range(cfg.num_objects):
        for _ in range(MAX_PLACEMENT_ATTEMPTS):
            waypoint = center + rng.uniform(-1, 1, size=2) * spread
            when = rng.uniform(0.25, 0.75) * last
            angle = rng.uniform(0, 2 * np.pi)
            velocity = rng.uniform(*cfg.speed) * np.array([np.cos(angle), np.sin(angle)])
            candidate = _Trajectory(waypoint - when * velocity, velocity, sizes[k])
            if candidate.inside(cfg):
                trajectories.append(candidate)
                break
        else:
            raise InfeasibleSceneError(
                f"object {k} does not fit a crossing path inside {cfg.width}x{cfg.height} "
                f"after {MAX_PLACEMENT_ATTEMPTS} attempts"
            )
    return trajectories


LAYOUTS = {"lanes": _lanes, "parallel": _parallel, "crossing": _crossing}


def _gaps(rng: np.random.Generator, cfg: SceneConfig) -> set[tuple[int, int]]:
    """(object, frame index) pairs hidden from the detector"""
    hidden: set[tuple[int, int]] = set()
    if cfg.num_gaps == 0 or cfg.gap_length == 0:
        return hidden
    latest_start = cfg.num_frames - cfg.gap_length - 1
    if latest_start < GAP_LEAD_IN:
        raise InfeasibleSceneError(
            f"gap of {cfg.gap_length} frames after a {GAP_LEAD_IN}-frame lead-in does not fit {cfg.num_frames} frames"
        )
    for _ in range(cfg.num_gaps):
        k = int(rng.integers(cfg.num_objects))
        start = int(rng.integers(GAP_LEAD_IN, latest_start + 1))
        hidden.update((k, start + i) for i in range(cfg.gap_length))
    return hidden


def _unit(vector: np.ndarray) -> np.ndarray:
    return vector / np.linalg.norm(vector)


def generate_scene(cfg: SceneConfig) -> SyntheticScene:
    rng = numpy_generator(cfg.seed, "scene")
    trajectories = LAYOUTS[cfg.layout](rng, cfg)
    hidden = _gaps(rng, cfg)
    identity_vectors = [_unit(rng.standard_normal(cfg.embedding_dim)) for _ in range(cfg.num_objects)]

    gt_rows: list[MotRow] = []
    det_rows: list[MotRow] = []
    embeddings: dict[str, np.ndarray] = {}
    crop_identity: dict[str, int] = {}
    centers = [traj.centers(cfg.num_frames) for traj in trajectories]

    for t in range(cfg.num_frames):
        frame = t + 1
        pending: list[tuple[BoundingBox, int | None, np.ndarray]] = []

        for k, traj in enumerate(trajectories):
            w, h = traj.size
            box = BoundingBox(float(centers[k][t, 0]), float(centers[k][t, 1]), float(w), float(h))
            gt_rows.append(MotRow.from_box(frame, k + 1, box, 1.0))

            if (k, t) in hidden or rng.random() < cfg.miss_rate:
                continue
            cx, cy = centers[k][t] + rng.normal(0, cfg.center_noise, size=2) if cfg.center_noise else centers[k][t]
            if cfg.size_noise:
                w = max(w + rng.normal(0, cfg.size_noise), MIN_NOISY_SIZE)
                h = max(h + rng.normal(0, cfg.size_noise), MIN_NOISY_SIZE)
            embedding = _unit(identity_vectors[k] + cfg.embedding_noise * rng.standard_normal(cfg.embedding_dim))
            pending.append((BoundingBox(float(cx), float(cy), float(w), float(h)), k + 1, embedding))

        for _ in range(int(rng.binomial(cfg.num_objects, cfg.fp_rate)) if cfg.fp_rate else 0):
            w = rng.uniform(*cfg.box_width)
            h = rng.uniform(*cfg.box_height)
            cx = rng.uniform(w / 2, max(cfg.width - w / 2, w / 2))
            cy = rng.uniform(h / 2, max(cfg.height - h / 2, h / 2))
            conf = rng.uniform(*FALSE_POSITIVE_CONF)
            embedding = _unit(rng.standard_normal(cfg.embedding_dim))
            pending.append((BoundingBox(float(cx), float(cy), float(w), float(h), float(conf)), None, embedding))

        for index, position in enumerate(rng.permutation(len(pending))):
            box, identity, embedding = pending[position]
            crop = crop_id_for(frame, index)
            det_rows.append(MotRow.from_box(frame, -1, box))
            embeddings[crop] = embedding
            if identity is not None:
                crop_identity[crop] = identity

    logger.info(
        "scene_generated",
        layout=cfg.layout,
        objects=cfg.num_objects,
        frames=cfg.num_frames,
        detections=len(det_rows),
        seed=cfg.seed,
    )
    return SyntheticScene(gt_rows, det_rows, embeddings, crop_identity, cfg)
