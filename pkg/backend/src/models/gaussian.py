"""
Gaussian state containers for the stacked multi-object Kalman model
"""

from __future__ import annotations

import dataclasses

import torch

from core.exceptions import ShapeMismatchError

DTYPE = torch.float64


@dataclasses.dataclass(frozen=True)
class GaussianBelief:
    """Multivariate normal over the stacked state of K objects.

    ``mean`` has shape ``(K*d,)`` and ``cov`` has shape ``(K*d, K*d)``.
    """

    mean: torch.Tensor
    cov: torch.Tensor

    def __post_init__(self):
        n = self.mean.shape[-1]
        if self.mean.dim() != 1:
            raise ShapeMismatchError("belief mean", "vector", tuple(self.mean.shape))
        if tuple(self.cov.shape) != (n, n):
            raise ShapeMismatchError("belief covariance", (n, n), tuple(self.cov.shape))

    @property
    def dim(self) -> int:
        return self.mean.shape[0]

    def detach(self) -> GaussianBelief:
        return GaussianBelief(self.mean.detach(), self.cov.detach())

    def is_valid(self, tol: float = 1e-9) -> bool:
        """Symmetric within ``tol`` and PSD up to ``-tol * trace``"""
        cov = self.cov.detach()
        if (cov - cov.T).abs().max() > tol:
            return False
        smallest = torch.linalg.eigvalsh(0.5 * (cov + cov.T))[0]
        return bool(smallest >= -tol * max(float(torch.trace(cov)), 1.0))


@dataclasses.dataclass(frozen=True)
class FilterStep:
    """Prediction and posterior of one filter time step"""

    predicted: GaussianBelief
    updated: GaussianBelief
    log_marginal: torch.Tensor


@dataclasses.dataclass(frozen=True)
class SmoothedTrajectory:
    beliefs: tuple[GaussianBelief, ...]

    def __len__(self) -> int:
        return len(self.beliefs)

    def __getitem__(self, t: int) -> GaussianBelief:
        return self.beliefs[t]


def constant_velocity_block(position_dims: int) -> torch.Tensor:
    """Single-object transition for state (positions, velocities), unit time step"""
    eye = torch.eye(position_dims, dtype=DTYPE)
    top = torch.cat([eye, eye], dim=1)
    bottom = torch.cat([torch.zeros_like(eye), eye], dim=1)
    return torch.cat([top, bottom], dim=0)


def position_selector(position_dims: int, observed_dims: int | None = None) -> torch.Tensor:
    """Per-object observation matrix picking the first ``observed_dims`` states"""
    observed = observed_dims or position_dims
    selector = torch.zeros(observed, 2 * position_dims, dtype=DTYPE)
    selector[:, :observed] = torch.eye(observed, dtype=DTYPE)
    return selector


@dataclasses.dataclass(frozen=True)
class KalmanParams:
    """Linear-Gaussian model over K stacked objects.

    ``F`` and ``Q`` act on the stacked state of size ``K*d``; ``H`` is the
    per-object ``d' x d`` selector, lifted to the stacked space on demand;
    ``R`` is the stacked ``K*d' x K*d'`` observation covariance.
    """

    F: torch.Tensor
    H: torch.Tensor
    Q: torch.Tensor
    R: torch.Tensor
    num_objects: int

    def __post_init__(self):
        obs_dim, state_dim = self.H.shape
        n = self.num_objects * state_dim
        m = self.num_objects * obs_dim
        if tuple(self.F.shape) != (n, n):
            raise ShapeMismatchError("transition F", (n, n), tuple(self.F.shape))
        if tuple(self.Q.shape) != (n, n):
            raise ShapeMismatchError("process covariance Q", (n, n), tuple(self.Q.shape))
        if tuple(self.R.shape) != (m, m):
            raise ShapeMismatchError("observation covariance R", (m, m), tuple(self.R.shape))

    @property
    def state_dim(self) -> int:
        return self.H.shape[1]

    @property
    def obs_dim(self) -> int:
        return self.H.shape[0]

    @property
    def stacked_H(self) -> torch.Tensor:
        return torch.kron(torch.eye(self.num_objects, dtype=DTYPE), self.H)

    @classmethod
    def constant_velocity(
        cls,
        num_objects: int,
        sigma_q: float,
        sigma_r: float,
        position_dims: int = 2,
        observed_dims: int | None = None,
    ) -> KalmanParams:
        """Training model: state (x, y, vx, vy) per object, positions observed"""
        block = constant_velocity_block(position_dims)
        H = position_selector(position_dims, observed_dims)
        n = num_objects * block.shape[0]
        m = num_objects * H.shape[0]
        return cls(
            F=torch.kron(torch.eye(num_objects, dtype=DTYPE), block),
            H=H,
            Q=sigma_q * torch.eye(n, dtype=DTYPE),
            R=sigma_r * torch.eye(m, dtype=DTYPE),
            num_objects=num_objects,
        )
