"""
Sinkhorn normalization and soft-permutation algebra
"""

from collections.abc import Sequence

import torch

from core.exceptions import KalmatchError, NonFiniteError, ShapeMismatchError

DEFAULT_ITERS = 20


def sinkhorn_normalize(scores: torch.Tensor, iters: int = DEFAULT_ITERS) -> torch.Tensor:
    """Doubly stochastic matrix from exp(scores) by alternating row/column scaling.

    Works in log space, one row pass then one column pass per iteration, so
    columns sum to one exactly and rows converge.
    """
    if iters < 1:
        raise KalmatchError(f"sinkhorn needs at least one iteration, got {iters}")
    if scores.dim() != 2 or scores.shape[0] != scores.shape[1]:
        raise ShapeMismatchError("score matrix", "square", tuple(scores.shape))
    if not bool(torch.isfinite(scores).all()):
        raise NonFiniteError("score matrix")

    log_alpha = scores
    for _ in range(iters):
        log_alpha = log_alpha - torch.logsumexp(log_alpha, dim=1, keepdim=True)
        log_alpha = log_alpha - torch.logsumexp(log_alpha, dim=0, keepdim=True)
    return torch.exp(log_alpha)


def frame_association(scores: torch.Tensor, iters: int = DEFAULT_ITERS) -> torch.Tensor:
    """Association A_t with rows indexing frame-t detections, columns frame t-1.

    ``scores[i, j]`` compares previous detection i with current detection j,
    so the matrix is transposed before normalization.
    """
    return sinkhorn_normalize(scores.T, iters)


def compose_permutations(assocs: Sequence[torch.Tensor]) -> torch.Tensor:
    """P = A_t A_{t-1} ... A_1 for assocs given in time order A_1..A_t"""
    return cumulative_permutations(assocs)[-1]


def cumulative_permutations(assocs: Sequence[torch.Tensor]) -> list[torch.Tensor]:
    """[P_1, ..., P_T] with P_t = A_t P_{t-1} and P_1 = A_1"""
    if not assocs:
        raise KalmatchError("cannot compose an empty sequence of associations")

    k = assocs[0].shape[0]
    perms: list[torch.Tensor] = []
    for t, assoc in enumerate(assocs):
        if tuple(assoc.shape) != (k, k):
            raise ShapeMismatchError(f"association {t}", (k, k), tuple(assoc.shape))
        perms.append(assoc if t == 0 else assoc @ perms[-1])
    return perms


def lift_permutation(perm: torch.Tensor, obs_matrix: torch.Tensor) -> torch.Tensor:
    """(P kron I_d') (I_K kron H) = P kron H, of size (K d') x (K d).

    Observation block j of the result reads ``sum_k P[j, k] H x_k``.
    """
    if perm.dim() != 2 or perm.shape[0] != perm.shape[1]:
        raise ShapeMismatchError("permutation", "square", tuple(perm.shape))
    if obs_matrix.dim() != 2:
        raise ShapeMismatchError("observation matrix", "2-D", tuple(obs_matrix.shape))
    return torch.kron(perm, obs_matrix)


def stochastic_error(matrix: torch.Tensor) -> float:
    """max |row_sum - 1| + max |col_sum - 1|"""
    rows = (matrix.sum(dim=1) - 1).abs().max()
    cols = (matrix.sum(dim=0) - 1).abs().max()
    return float(rows + cols)
