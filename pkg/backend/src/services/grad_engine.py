"""
Reverse-mode gradients of the association objective.

The forward pass chains pairwise scores, Sinkhorn normalization, permutation
composition, Kalman filtering and RTS smoothing into one scalar; torch
autograd differentiates it, with Sinkhorn unrolled over its fixed iteration
count. A ``Tape`` keeps the named intermediates of one evaluation so that a
non-finite value is reported by the first place it appeared.
"""

import copy
import dataclasses
from collections.abc import Iterator, Sequence
from typing import Literal

import structlog
import torch
from torch import nn
from torch.nn.utils import parameters_to_vector, vector_to_parameters

from core.exceptions import KalmatchError, NonFiniteError, ShapeMismatchError
from models.detection import DetectionClip
from models.gaussian import DTYPE, GaussianBelief, KalmanParams
from services.assoc_net import PairwiseScorer, score_matrix
from services.gaussian_core import (
    filtered_obs_loglik,
    rts_smooth,
    run_filter,
    smoothed_obs_loglik,
)
from services.sinkhorn_assoc import cumulative_permutations, frame_association, lift_permutation

logger = structlog.get_logger(__name__)

Objective = Literal["smoothed", "filtered"]
POSITION_DIMS = 2
EPSILON = torch.finfo(DTYPE).eps
ROUNDOFF_ULPS = 256


@dataclasses.dataclass
class Tape:
    """Ordered record of named intermediates of one forward evaluation"""

    entries: list[tuple[str, torch.Tensor]] = dataclasses.field(default_factory=list)

    def record(self, name: str, value: torch.Tensor) -> torch.Tensor:
        self.entries.append((name, value))
        if not bool(torch.isfinite(value.detach()).all()):
            raise NonFiniteError(name)
        return value

    def names(self) -> list[str]:
        return [name for name, _ in self.entries]

    def first_non_finite(self) -> str | None:
        for name, value in self.entries:
            if not bool(torch.isfinite(value.detach()).all()):
                return name
        return None

    def __len__(self) -> int:
        return len(self.entries)


@dataclasses.dataclass(frozen=True)
class GradientReport:
    loss: float
    gradients: dict[str, torch.Tensor]

    @property
    def norm(self) -> float:
        if not self.gradients:
            return 0.0
        return float(torch.cat([g.reshape(-1) for g in self.gradients.values()]).norm())

    def flat(self) -> torch.Tensor:
        return torch.cat([g.reshape(-1) for g in self.gradients.values()])

    def scaled(self, factor: float) -> "GradientReport":
        return GradientReport(
            self.loss * factor, {k: v * factor for k, v in self.gradients.items()}
        )


def clip_observations(clip: DetectionClip) -> list[torch.Tensor]:
    """Per-frame stacked center positions ``(K*2,)`` in detection order"""
    boxes = clip.boxes()
    return [boxes[t, :, :POSITION_DIMS].reshape(-1) for t in range(clip.num_frames)]


def clip_kalman(clip: DetectionClip, sigma_q: float, sigma_r: float) -> KalmanParams:
    return KalmanParams.constant_velocity(clip.num_objects, sigma_q, sigma_r)


def initial_belief(first_positions: torch.Tensor, init_variance: float) -> GaussianBelief:
    """Mean at the first-frame positions with zero velocity, covariance v * I"""
    k = first_positions.shape[0] // POSITION_DIMS
    positions = first_positions.reshape(k, POSITION_DIMS)
    mean = torch.cat([positions, torch.zeros_like(positions)], dim=1).reshape(-1)
    cov = init_variance * torch.eye(mean.shape[0], dtype=DTYPE)
    return GaussianBelief(mean, cov)


def clip_associations(
    params: PairwiseScorer,
    clip: DetectionClip,
    iters: int,
    tape: Tape | None = None,
) -> list[torch.Tensor]:
    """[A_1, ..., A_T] with A_1 = I and A_t from the scores between frames t-1 and t"""
    tape = tape if tape is not None else Tape()
    boxes = clip.boxes()
    assocs = [torch.eye(clip.num_objects, dtype=DTYPE)]
    for t in range(1, clip.num_frames):
        scores = tape.record(f"scores[{t}]", score_matrix(params, boxes[t - 1], boxes[t]))
        assocs.append(tape.record(f"association[{t}]", frame_association(scores, iters)))
    return assocs


def association_loss(
    params: PairwiseScorer,
    clip: DetectionClip,
    kalman: KalmanParams,
    iters: int = 20,
    init_variance: float = 300.0,
    objective: Objective = "smoothed",
    tape: Tape | None = None,
) -> torch.Tensor:
    """Negative observation log-likelihood of one clip under its soft associations"""
    if kalman.num_objects != clip.num_objects:
        raise ShapeMismatchError("kalman objects K", clip.num_objects, kalman.num_objects)
    tape = tape if tape is not None else Tape()

    observations = clip_observations(clip)
    perms = cumulative_permutations(clip_associations(params, clip, iters, tape))
    obs_matrices = [
        tape.record(f"observation_matrix[{t}]", lift_permutation(perm, kalman.H))
        for t, perm in enumerate(perms)
    ]

    prior = initial_belief(observations[0], init_variance)
    filtered = run_filter(prior, observations, obs_matrices, kalman)
    for t, step in enumerate(filtered):
        tape.record(f"filtered_mean[{t}]", step.updated.mean)
        tape.record(f"filtered_cov[{t}]", step.updated.cov)

    if objective == "filtered":
        loglik = filtered_obs_loglik(filtered)
    elif objective == "smoothed":
        smoothed = rts_smooth(filtered, kalman)
        for t, belief in enumerate(smoothed.beliefs):
            tape.record(f"smoothed_mean[{t}]", belief.mean)
            tape.record(f"smoothed_cov[{t}]", belief.cov)
        loglik = smoothed_obs_loglik(smoothed, obs_matrices, kalman, observations)
    else:
        raise KalmatchError(f"unknown objective {objective!r}")

    return tape.record("loss", -loglik)


def gradient_report(loss: torch.Tensor, modules: Sequence[nn.Module], prefixes: Sequence[str]) -> GradientReport:
    """Exact gradient of ``loss`` with respect to every parameter of ``modules``"""
    named = [
        (f"{prefix}.{name}" if prefix else name, param)
        for module, prefix in zip(modules, prefixes, strict=True)
        for name, param in module.named_parameters()
    ]
    grads = torch.autograd.grad(loss, [p for _, p in named], allow_unused=True)

    gradients: dict[str, torch.Tensor] = {}
    for (name, param), grad in zip(named, grads, strict=True):
        grad = torch.zeros_like(param) if grad is None else grad.detach()
        if not bool(torch.isfinite(grad).all()):
            raise NonFiniteError(f"gradient of {name}")
        gradients[name] = grad
    return GradientReport(float(loss.detach()), gradients)


def loss_and_grad(
    params: PairwiseScorer,
    clip: DetectionClip,
    kalman: KalmanParams,
    iters: int = 20,
    init_variance: float = 300.0,
    objective: Objective = "smoothed",
) -> GradientReport:
    tape = Tape()
    loss = association_loss(params, clip, kalman, iters, init_variance, objective, tape)
    logger.debug("loss_evaluated", clip=clip.sequence_id, loss=float(loss.detach()), intermediates=len(tape))
    return gradient_report(loss, [params], [""])


def batch_loss_and_grad(
    params: PairwiseScorer,
    clips: Sequence[DetectionClip],
    kalmans: Sequence[KalmanParams],
    iters: int = 20,
    init_variance: float = 300.0,
    objective: Objective = "smoothed",
) -> GradientReport:
    """Summed loss and gradient over clips, accumulated one clip at a time"""
    if not clips:
        raise KalmatchError("cannot differentiate an empty batch")

    total_loss = 0.0
    total: dict[str, torch.Tensor] = {}
    for clip, kalman in zip(clips, kalmans, strict=True):
        report = loss_and_grad(params, clip, kalman, iters, init_variance, objective)
        total_loss += report.loss
        for name, grad in report.gradients.items():
            total[name] = total[name] + grad if name in total else grad.clone()
    return GradientReport(total_loss, total)


def _shifted_losses(
    params: PairwiseScorer,
    clip: DetectionClip,
    kalman: KalmanParams,
    step: float,
    iters: int,
    init_variance: float,
    objective: Objective,
) -> Iterator[tuple[float, float]]:
    shifted_params = copy.deepcopy(params)
    base = parameters_to_vector(params.parameters()).detach().clone()
    with torch.no_grad():
        for i in range(base.shape[0]):
            pair = []
            for sign in (1.0, -1.0):
                shifted = base.clone()
                shifted[i] += sign * step
                vector_to_parameters(shifted, shifted_params.parameters())
                loss = association_loss(shifted_params, clip, kalman, iters, init_variance, objective)
                pair.append(float(loss.detach()))
            yield pair[0], pair[1]


def finite_difference_gradient(
    params: PairwiseScorer,
    clip: DetectionClip,
    kalman: KalmanParams,
    step: float = 1e-5,
    iters: int = 20,
    init_variance: float = 300.0,
    objective: Objective = "smoothed",
) -> torch.Tensor:
    """Central differences over the flattened parameter vector.

    Differences within a few ulps of the loss count as zero, so parameters the
    loss is invariant to (the output bias, through Sinkhorn) report 0.
    """
    if step <= 0:
        raise KalmatchError(f"finite-difference step must be positive, got {step}")
    diffs = []
    for plus, minus in _shifted_losses(params, clip, kalman, step, iters, init_variance, objective):
        roundoff = ROUNDOFF_ULPS * EPSILON * max(abs(plus), abs(minus), 1.0)
        delta = plus - minus
        diffs.append(0.0 if abs(delta) <= roundoff else delta / (2 * step))
    return torch.tensor(diffs, dtype=DTYPE)


def fd_check(
    params: PairwiseScorer,
    clip: DetectionClip,
    kalman: KalmanParams,
    step: float = 1e-5,
    iters: int = 20,
    init_variance: float = 300.0,
    objective: Objective = "smoothed",
) -> float:
    """max_i |g_ad - g_fd| / max(1e-8, |g_ad| + |g_fd|)"""
    numeric = finite_difference_gradient(params, clip, kalman, step, iters, init_variance, objective)
    analytic = loss_and_grad(params, clip, kalman, iters, init_variance, objective).flat()
    error = (analytic - numeric).abs() / torch.clamp(analytic.abs() + numeric.abs(), min=1e-8)
    return float(error.max())
