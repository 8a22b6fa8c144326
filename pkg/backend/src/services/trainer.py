"""
Self-supervised training of the pairwise scorer and the appearance head
"""

import dataclasses
from collections.abc import Iterable, Mapping, Sequence

import numpy as np
import structlog
import torch
from scipy.optimize import linear_sum_assignment
from torch import nn

from core.config import TrainConfig
from core.dependencies import numpy_generator, torch_generator
from core.exceptions import (
    InfiniteDivergenceError,
    KalmatchError,
    ShapeMismatchError,
    TrainingDivergedError,
)
from models.detection import DetectionClip
from services.assoc_net import AppearanceHead, PairwiseScorer, appearance_matrix, score_matrix
from services.embedding_service import EmbeddingProvider
from services.grad_engine import (
    GradientReport,
    clip_associations,
    clip_kalman,
    gradient_report,
    loss_and_grad,
)
from services.sinkhorn_assoc import cumulative_permutations, frame_association

logger = structlog.get_logger(__name__)


@dataclasses.dataclass(frozen=True)
class LossRecord:
    epoch: int
    step: int
    clip: int
    loss: float


@dataclasses.dataclass
class TrainResult:
    scorer: PairwiseScorer
    losses: list[LossRecord]
    accuracy: float | None = None


@dataclasses.dataclass
class AppearanceResult:
    head: AppearanceHead
    losses: list[LossRecord]


def build_scorer(cfg: TrainConfig) -> PairwiseScorer:
    return PairwiseScorer(cfg.hidden_width, torch_generator(cfg.seed, "init"))


def build_appearance_head(provider: EmbeddingProvider, cfg: TrainConfig) -> AppearanceHead:
    return AppearanceHead(
        provider,
        out_dim=cfg.appearance_dim,
        temperature=cfg.appearance_temperature,
        generator=torch_generator(cfg.seed, "appearance"),
    )


def build_optimizer(
    params: Iterable[nn.Parameter],
    name: str,
    lr: float,
    cfg: TrainConfig,
) -> torch.optim.Optimizer:
    if name == "adam":
        return torch.optim.Adam(params, lr=lr, betas=cfg.adam_betas, eps=cfg.adam_eps)
    return torch.optim.SGD(params, lr=lr)


def select_training_clips(clips: Sequence[DetectionClip], cfg: TrainConfig) -> list[DetectionClip]:
    """Seeded subset of ``train_fraction`` of the clips, in original order"""
    if cfg.train_fraction >= 1:
        return list(clips)
    count = max(1, round(cfg.train_fraction * len(clips)))
    keep = numpy_generator(cfg.seed, "subset").choice(len(clips), size=count, replace=False)
    logger.info("clip_subset", kept=count, total=len(clips), fraction=cfg.train_fraction)
    return [clips[i] for i in sorted(keep)]


def _apply_gradients(module: nn.Module, report: GradientReport, max_norm: float) -> None:
    for name, param in module.named_parameters():
        param.grad = report.gradients[name].clone()
    if max_norm > 0:
        torch.nn.utils.clip_grad_norm_(module.parameters(), max_norm)


def train_association(
    clips: Sequence[DetectionClip],
    cfg: TrainConfig,
    scorer: PairwiseScorer | None = None,
    identities: Mapping[str, int] | None = None,
) -> TrainResult:
    """Per-clip gradient steps on the negative observation log-likelihood.

    Clip order is reshuffled every epoch from the seed's shuffle stream.
    """
    clips = select_training_clips(clips, cfg)
    if not clips:
        raise KalmatchError("no training clips")

    scorer = scorer if scorer is not None else build_scorer(cfg)
    optimizer = build_optimizer(scorer.parameters(), cfg.optimizer, cfg.learning_rate, cfg)
    kalmans = [clip_kalman(clip, cfg.sigma_q, cfg.sigma_r) for clip in clips]
    rng = numpy_generator(cfg.seed, "shuffle")

    losses: list[LossRecord] = []
    step = 0
    for epoch in range(cfg.epochs):
        epoch_losses = []
        for index in rng.permutation(len(clips)):
            if cfg.max_steps is not None and step >= cfg.max_steps:
                break
            try:
                report = loss_and_grad(
                    scorer,
                    clips[index],
                    kalmans[index],
                    cfg.sinkhorn_iters,
                    cfg.init_variance,
                    cfg.objective,
                )
            except KalmatchError as e:
                raise TrainingDivergedError(step, e)

            optimizer.zero_grad(set_to_none=True)
            _apply_gradients(scorer, report, cfg.max_grad_norm)
            optimizer.step()

            losses.append(LossRecord(epoch, step, int(index), report.loss))
            epoch_losses.append(report.loss)
            logger.debug("train_step", epoch=epoch, step=step, clip=int(index), loss=report.loss)
            step += 1

        if epoch_losses:
            logger.info("epoch_done", epoch=epoch, steps=len(epoch_losses), mean_loss=float(np.mean(epoch_losses)))

    accuracy = None
    if identities is not None:
        accuracy = association_accuracy(scorer, clips, identities, cfg.sinkhorn_iters)
        logger.info("association_accuracy", accuracy=accuracy)
    return TrainResult(scorer, losses, accuracy)


def association_accuracy(
    scorer: PairwiseScorer,
    clips: Sequence[DetectionClip],
    identities: Mapping[str, int],
    iters: int = 20,
) -> float:
    """Fraction of hard-rounded frame-to-frame links that join the same identity.

    Only links whose current detection has a known identity that is also
    present in the previous frame are counted.
    """
    correct = 0
    total = 0
    with torch.no_grad():
        for clip in clips:
            boxes = clip.boxes()
            for t in range(1, clip.num_frames):
                assoc = frame_association(score_matrix(scorer, boxes[t - 1], boxes[t]), iters)
                rows, cols = linear_sum_assignment(-assoc.numpy())
                prev_ids = [identities.get(c) if c else None for c in clip.crop_ids(t - 1)]
                cur_ids = [identities.get(c) if c else None for c in clip.crop_ids(t)]
                known_prev = {i for i in prev_ids if i is not None}
                for j, i in zip(rows, cols, strict=True):
                    if cur_ids[j] is None or cur_ids[j] not in known_prev:
                        continue
                    total += 1
                    correct += int(prev_ids[i] == cur_ids[j])
    if total == 0:
        raise KalmatchError("no labeled frame-to-frame links to score")
    return correct / total


def kl_loss(P: torch.Tensor, U: torch.Tensor) -> torch.Tensor:
    """sum_ij p_ij log(p_ij / u_ij) with 0 log(0 / u) = 0"""
    if P.shape != U.shape:
        raise ShapeMismatchError("kl inputs", tuple(P.shape), tuple(U.shape))
    if bool(((P > 0) & (U <= 0)).any()):
        raise InfiniteDivergenceError("reference has zero mass where the target is positive")
    return (torch.xlogy(P, P) - torch.xlogy(P, U)).sum()


def final_permutation(scorer: PairwiseScorer, clip: DetectionClip, iters: int) -> torch.Tensor:
    """P_T of a clip under a frozen scorer"""
    with torch.no_grad():
        return cumulative_permutations(clip_associations(scorer, clip, iters))[-1]


def _has_crops(clip: DetectionClip) -> bool:
    ends = (clip.detections[0], clip.detections[-1])
    return all(not d.filled and d.crop_id is not None for frame in ends for d in frame)


def train_appearance(
    clips: Sequence[DetectionClip],
    scorer: PairwiseScorer,
    head: AppearanceHead,
    cfg: TrainConfig,
) -> AppearanceResult:
    """Fit the head so frame-T vs frame-1 appearance matches the motion-derived P_T.

    Only the head's parameters are optimized; the scorer is read under no_grad.
    """
    usable = [clip for clip in clips if _has_crops(clip)]
    if len(usable) < len(clips):
        logger.warning("appearance_clips_skipped", skipped=len(clips) - len(usable), reason="filled boxes")
    if not usable:
        raise KalmatchError("no clips with detector crops at both ends")

    targets = [final_permutation(scorer, clip, cfg.sinkhorn_iters) for clip in usable]
    optimizer = build_optimizer(
        head.parameters(), cfg.appearance_optimizer, cfg.appearance_learning_rate, cfg
    )
    rng = numpy_generator(cfg.seed, "appearance")

    losses: list[LossRecord] = []
    step = 0
    for epoch in range(cfg.appearance_epochs):
        for index in rng.permutation(len(usable)):
            clip = usable[index]
            U = appearance_matrix(head, clip.crop_ids(0), clip.crop_ids(-1))
            loss = kl_loss(targets[index], U)
            report = gradient_report(loss, [head], [""])

            optimizer.zero_grad(set_to_none=True)
            _apply_gradients(head, report, 0.0)
            optimizer.step()

            losses.append(LossRecord(epoch, step, int(index), report.loss))
            logger.debug("appearance_step", epoch=epoch, step=step, loss=report.loss)
            step += 1
        logger.info("appearance_epoch_done", epoch=epoch, mean_loss=float(np.mean([r.loss for r in losses if r.epoch == epoch])))

    return AppearanceResult(head, losses)


def mean_kl(scorer: PairwiseScorer, head: AppearanceHead, clips: Sequence[DetectionClip], iters: int = 20) -> float:
    values = []
    with torch.no_grad():
        for clip in clips:
            if not _has_crops(clip):
                continue
            U = appearance_matrix(head, clip.crop_ids(0), clip.crop_ids(-1))
            values.append(float(kl_loss(final_permutation(scorer, clip, iters), U)))
    if not values:
        raise KalmatchError("no clips with detector crops at both ends")
    return float(np.mean(values))
