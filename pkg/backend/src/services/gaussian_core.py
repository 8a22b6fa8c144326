"""
Linear-Gaussian state estimation over the stacked multi-object state.

All functions are pure and differentiable with torch autograd. Covariances
are symmetrized after every propagation; Cholesky factorizations retry once
with a small diagonal jitter before giving up.
"""

import math
from collections.abc import Sequence

import structlog
import torch

from core.exceptions import (
    FactorizationError,
    KalmatchError,
    ShapeMismatchError,
    SingularInnovationError,
)
from models.gaussian import FilterStep, GaussianBelief, KalmanParams, SmoothedTrajectory

logger = structlog.get_logger(__name__)

LOG_2PI = math.log(2 * math.pi)
MAX_CONDITION = 1e12
JITTER_SCALE = 1e-9


def symmetrize(matrix: torch.Tensor) -> torch.Tensor:
    return 0.5 * (matrix + matrix.transpose(-1, -2))


def cholesky_factor(cov: torch.Tensor) -> torch.Tensor:
    """Lower Cholesky factor, retrying once with jitter 1e-9 * trace / dim"""
    factor, info = torch.linalg.cholesky_ex(cov)
    if int(info) == 0:
        return factor

    n = cov.shape[-1]
    jitter = JITTER_SCALE * max(float(torch.trace(cov.detach())), 1.0) / n
    factor, info = torch.linalg.cholesky_ex(cov + jitter * torch.eye(n, dtype=cov.dtype))
    if int(info) != 0:
        raise FactorizationError(
            f"covariance of size {n} is not positive definite (leading minor {int(info)})"
        )
    logger.debug("cholesky_jitter_applied", dim=n, jitter=jitter)
    return factor


def logpdf_from_factor(residual: torch.Tensor, factor: torch.Tensor) -> torch.Tensor:
    """log N(residual; 0, L L^T) for a lower factor L"""
    whitened = torch.linalg.solve_triangular(factor, residual.unsqueeze(-1), upper=False)
    half_logdet = torch.log(torch.diagonal(factor)).sum()
    n = residual.shape[-1]
    return -0.5 * (n * LOG_2PI + whitened.square().sum()) - half_logdet


def gaussian_logpdf(x: torch.Tensor, mean: torch.Tensor, cov: torch.Tensor) -> torch.Tensor:
    """Exact multivariate normal log density via a Cholesky factorization"""
    n = x.shape[-1]
    if mean.shape[-1] != n:
        raise ShapeMismatchError("logpdf mean", n, mean.shape[-1])
    if tuple(cov.shape) != (n, n):
        raise ShapeMismatchError("logpdf covariance", (n, n), tuple(cov.shape))
    return logpdf_from_factor(x - mean, cholesky_factor(cov))


def _check_square(name: str, matrix: torch.Tensor, n: int) -> None:
    if tuple(matrix.shape) != (n, n):
        raise ShapeMismatchError(name, (n, n), tuple(matrix.shape))


def kf_predict(belief: GaussianBelief, params: KalmanParams) -> GaussianBelief:
    """N(F mu, F Sigma F^T + Q)"""
    n = belief.dim
    _check_square("transition F", params.F, n)
    _check_square("process covariance Q", params.Q, n)

    mean = params.F @ belief.mean
    cov = symmetrize(params.F @ belief.cov @ params.F.T + params.Q)
    return GaussianBelief(mean, cov)


def _innovation_factor(S: torch.Tensor) -> torch.Tensor:
    condition = float(torch.linalg.cond(S.detach()))
    if not math.isfinite(condition) or condition > MAX_CONDITION:
        raise SingularInnovationError(f"innovation condition number {condition:.3e}")
    try:
        return cholesky_factor(S)
    except FactorizationError as e:
        raise SingularInnovationError(str(e))


def kf_update(
    belief: GaussianBelief,
    z: torch.Tensor,
    H_eff: torch.Tensor,
    R: torch.Tensor,
) -> tuple[GaussianBelief, torch.Tensor]:
    """Kalman posterior and the observation log marginal log N(z; H mu, S).

    ``H_eff`` already contains any permutation of object slots. The posterior
    covariance uses the Joseph form to keep it positive semi-definite.
    """
    n = belief.dim
    m = z.shape[-1]
    if tuple(H_eff.shape) != (m, n):
        raise ShapeMismatchError("observation matrix H", (m, n), tuple(H_eff.shape))
    _check_square("observation covariance R", R, m)

    S = symmetrize(H_eff @ belief.cov @ H_eff.T + R)
    factor = _innovation_factor(S)

    residual = z - H_eff @ belief.mean
    # K^T = S^-1 H Sigma
    gain = torch.cholesky_solve(H_eff @ belief.cov, factor).T

    mean = belief.mean + gain @ residual
    joseph = torch.eye(n, dtype=belief.cov.dtype) - gain @ H_eff
    cov = symmetrize(joseph @ belief.cov @ joseph.T + gain @ R @ gain.T)

    return GaussianBelief(mean, cov), logpdf_from_factor(residual, factor)


def run_filter(
    prior: GaussianBelief,
    observations: Sequence[torch.Tensor],
    obs_matrices: Sequence[torch.Tensor],
    params: KalmanParams,
) -> list[FilterStep]:
    """Forward pass: the prior is updated with z_1, later frames predict first"""
    if len(observations) != len(obs_matrices):
        raise ShapeMismatchError("observation matrices", len(observations), len(obs_matrices))

    steps: list[FilterStep] = []
    predicted = prior
    for t, (z, H_eff) in enumerate(zip(observations, obs_matrices, strict=True)):
        if t > 0:
            predicted = kf_predict(steps[-1].updated, params)
        updated, log_marginal = kf_update(predicted, z, H_eff, params.R)
        steps.append(FilterStep(predicted, updated, log_marginal))
    return steps


def rts_smooth(filtered: Sequence[FilterStep], params: KalmanParams) -> SmoothedTrajectory:
    """Rauch-Tung-Striebel backward pass with gain J_t = Sigma_t F^T Sigma_hat_{t+1}^-1"""
    if not filtered:
        raise KalmatchError("cannot smooth an empty filter sequence")

    smoothed = [filtered[-1].updated]
    for t in range(len(filtered) - 2, -1, -1):
        current = filtered[t].updated
        predicted_next = filtered[t + 1].predicted
        later = smoothed[-1]

        factor = cholesky_factor(predicted_next.cov)
        gain = torch.cholesky_solve(params.F @ current.cov, factor).T

        mean = current.mean + gain @ (later.mean - predicted_next.mean)
        cov = symmetrize(current.cov + gain @ (later.cov - predicted_next.cov) @ gain.T)
        smoothed.append(GaussianBelief(mean, cov))

    smoothed.reverse()
    return SmoothedTrajectory(tuple(smoothed))


def smoothed_obs_loglik(
    smoothed: SmoothedTrajectory,
    obs_matrices: Sequence[torch.Tensor],
    params: KalmanParams,
    observations: Sequence[torch.Tensor],
) -> torch.Tensor:
    """sum_t log N(z_t; H_t P_t mu~_t, (H_t P_t) Sigma~_t (H_t P_t)^T + R_t).

    ``obs_matrices`` are the lifted ``H_t P_t`` (see sinkhorn_assoc.lift_permutation).
    """
    if not (len(smoothed) == len(obs_matrices) == len(observations)):
        raise ShapeMismatchError(
            "trajectory length", len(smoothed), (len(obs_matrices), len(observations))
        )

    total = torch.zeros((), dtype=params.R.dtype)
    for belief, H_eff, z in zip(smoothed.beliefs, obs_matrices, observations, strict=True):
        cov = symmetrize(H_eff @ belief.cov @ H_eff.T + params.R)
        try:
            total = total + gaussian_logpdf(z, H_eff @ belief.mean, cov)
        except FactorizationError as e:
            raise SingularInnovationError(f"smoothed marginal: {e}")
    return total


def filtered_obs_loglik(filtered: Sequence[FilterStep]) -> torch.Tensor:
    """sum_t log p(z_t | z_1:t-1), the prediction-time marginal of each update"""
    return torch.stack([step.log_marginal for step in filtered]).sum()
