"""
Pairwise geometric scorer and appearance similarity head
"""

import math
from collections.abc import Sequence

import torch
from torch import nn

from core.exceptions import ShapeMismatchError, ZeroEmbeddingError
from models.detection import BoundingBox, boxes_to_tensor
from models.gaussian import DTYPE
from services.embedding_service import EmbeddingProvider

NUM_FEATURES = 5
MIN_EMBEDDING_NORM = 1e-12


def _seeded_uniform_(tensor: torch.Tensor, bound: float, generator: torch.Generator | None) -> None:
    with torch.no_grad():
        draw = torch.rand(tensor.shape, generator=generator, dtype=DTYPE)
        tensor.copy_((2 * draw - 1) * bound)


class PairwiseScorer(nn.Module):
    """g(z_i, z_j): Linear(5, hidden) -> ReLU -> Linear(hidden, 1)"""

    def __init__(self, hidden_width: int = 64, generator: torch.Generator | None = None):
        super().__init__()
        self.hidden_width = hidden_width
        self.fc1 = nn.Linear(NUM_FEATURES, hidden_width, dtype=DTYPE)
        self.fc2 = nn.Linear(hidden_width, 1, dtype=DTYPE)
        self.reset_parameters(generator)

    def reset_parameters(self, generator: torch.Generator | None = None) -> None:
        """Uniform in [-1/sqrt(fan_in), 1/sqrt(fan_in)] for weights and biases"""
        for layer in (self.fc1, self.fc2):
            bound = 1 / math.sqrt(layer.in_features)
            _seeded_uniform_(layer.weight, bound, generator)
            _seeded_uniform_(layer.bias, bound, generator)

    def forward(self, features: torch.Tensor) -> torch.Tensor:
        return self.fc2(torch.relu(self.fc1(features))).squeeze(-1)


def _as_boxes(boxes: torch.Tensor | Sequence[BoundingBox]) -> torch.Tensor:
    if isinstance(boxes, torch.Tensor):
        return boxes
    return boxes_to_tensor(list(boxes))


def pairwise_feature_grid(
    prev: torch.Tensor | Sequence[BoundingBox],
    cur: torch.Tensor | Sequence[BoundingBox],
) -> torch.Tensor:
    """``(N, M, 5)`` features of every (prev_i, cur_j) pair.

    Entries are (2 dx / (h_i + h_j), 2 dy / (h_i + h_j), log h_i/h_j,
    log w_i/w_j, IoU), with boxes as rows of (cx, cy, w, h).
    """
    a = _as_boxes(prev)[:, None, :]
    b = _as_boxes(cur)[None, :, :]
    xi, yi, wi, hi = a.unbind(-1)
    xj, yj, wj, hj = b.unbind(-1)

    height_sum = hi + hj
    dx = 2 * (xj - xi) / height_sum
    dy = 2 * (yj - yi) / height_sum
    log_h = torch.log(hi / hj)
    log_w = torch.log(wi / wj)

    overlap_w = (torch.minimum(xi + wi / 2, xj + wj / 2) - torch.maximum(xi - wi / 2, xj - wj / 2)).clamp(min=0)
    overlap_h = (torch.minimum(yi + hi / 2, yj + hj / 2) - torch.maximum(yi - hi / 2, yj - hj / 2)).clamp(min=0)
    inter = overlap_w * overlap_h
    iou = inter / (wi * hi + wj * hj - inter)

    return torch.stack(torch.broadcast_tensors(dx, dy, log_h, log_w, iou), dim=-1)


def pairwise_features(a: BoundingBox, b: BoundingBox) -> torch.Tensor:
    return pairwise_feature_grid([a], [b])[0, 0]


def box_iou_grid(
    prev: torch.Tensor | Sequence[BoundingBox],
    cur: torch.Tensor | Sequence[BoundingBox],
) -> torch.Tensor:
    """``(N, M)`` IoU matrix; empty inputs give an empty matrix"""
    a, b = _as_boxes(prev), _as_boxes(cur)
    if a.shape[0] == 0 or b.shape[0] == 0:
        return torch.zeros((a.shape[0], b.shape[0]), dtype=DTYPE)
    return pairwise_feature_grid(a, b)[..., 4]


def mlp_forward(params: PairwiseScorer, f: torch.Tensor) -> torch.Tensor:
    return params(f)


def score_grid(
    params: PairwiseScorer,
    prev: torch.Tensor | Sequence[BoundingBox],
    cur: torch.Tensor | Sequence[BoundingBox],
) -> torch.Tensor:
    """Rectangular ``(N, M)`` scores, used by the online tracker"""
    a, b = _as_boxes(prev), _as_boxes(cur)
    if a.shape[0] == 0 or b.shape[0] == 0:
        return torch.zeros((a.shape[0], b.shape[0]), dtype=DTYPE)
    return params(pairwise_feature_grid(a, b))


def score_matrix(
    params: PairwiseScorer,
    prev: torch.Tensor | Sequence[BoundingBox],
    cur: torch.Tensor | Sequence[BoundingBox],
) -> torch.Tensor:
    """Square ``S[i, j] = g(prev_i, cur_j)`` between two frames of K boxes"""
    a, b = _as_boxes(prev), _as_boxes(cur)
    if a.shape[0] != b.shape[0]:
        raise ShapeMismatchError("boxes per frame K", a.shape[0], b.shape[0])
    return score_grid(params, a, b)


class AppearanceHead(nn.Module):
    """Bias-free linear projection of provider embeddings onto the unit sphere"""

    def __init__(
        self,
        provider: EmbeddingProvider | None,
        out_dim: int = 16,
        temperature: float = 0.1,
        in_dim: int | None = None,
        generator: torch.Generator | None = None,
    ):
        super().__init__()
        self.provider = provider
        self.temperature = temperature
        in_dim = in_dim if in_dim is not None else provider.dim if provider is not None else 0
        if in_dim < 1:
            raise ShapeMismatchError("appearance input dim", ">= 1", in_dim)
        self.proj = nn.Linear(in_dim, out_dim, bias=False, dtype=DTYPE)
        _seeded_uniform_(self.proj.weight, 1 / math.sqrt(in_dim), generator)

    @property
    def in_dim(self) -> int:
        return self.proj.in_features

    @property
    def out_dim(self) -> int:
        return self.proj.out_features

    def forward(self, raw: torch.Tensor) -> torch.Tensor:
        """Project ``(n, in_dim)`` raw vectors to unit ``(n, out_dim)`` embeddings"""
        projected = self.proj(raw)
        norms = projected.norm(dim=-1, keepdim=True)
        if bool((norms < MIN_EMBEDDING_NORM).any()):
            raise ZeroEmbeddingError("projected embedding has zero norm")
        return projected / norms

    def embed(self, crop_ids: Sequence[str | None]) -> torch.Tensor:
        if self.provider is None:
            raise ZeroEmbeddingError("appearance head has no embedding provider")
        return self(self.provider.get_many(crop_ids))


def appearance_similarity(head: AppearanceHead, a: str, b: str) -> torch.Tensor:
    embedded = head.embed([a, b])
    return (embedded[0] * embedded[1]).sum()


def appearance_matrix(
    head: AppearanceHead,
    first_crops: Sequence[str | None],
    last_crops: Sequence[str | None],
) -> torch.Tensor:
    """U with rows over frame-T detections and columns over frame-1 detections.

    Cosines are divided by the head temperature before the row softmax.
    """
    first = head.embed(first_crops)
    last = head.embed(last_crops)
    cosines = last @ first.T
    return torch.softmax(cosines / head.temperature, dim=1)
