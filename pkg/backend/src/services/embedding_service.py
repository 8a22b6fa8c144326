from abc import ABC, abstractmethod
from collections.abc import Iterable, Mapping, Sequence
from pathlib import Path

import numpy as np
import pandas as pd
import structlog
import torch

from core.exceptions import KalmatchError, MissingEmbeddingError
from models.gaussian import DTYPE
from services.storage_service import get_storage

logger = structlog.get_logger(__name__)


class EmbeddingProvider(ABC):
    """Source of raw appearance vectors keyed by crop id"""

    @property
    @abstractmethod
    def dim(self) -> int:
        pass

    @abstractmethod
    def get(self, crop_id: str) -> np.ndarray:
        pass

    def get_many(self, crop_ids: Sequence[str | None]) -> torch.Tensor:
        """``(n, dim)`` tensor; raises on the first unknown or missing id"""
        rows = []
        for crop_id in crop_ids:
            if crop_id is None:
                raise MissingEmbeddingError("<none>")
            rows.append(self.get(crop_id))
        if not rows:
            return torch.zeros((0, self.dim), dtype=DTYPE)
        return torch.as_tensor(np.stack(rows), dtype=DTYPE)


class InMemoryEmbeddingProvider(EmbeddingProvider):
    def __init__(self, vectors: Mapping[str, Iterable[float]]):
        self._vectors = {key: np.asarray(value, dtype=np.float64) for key, value in vectors.items()}
        dims = {v.shape[0] for v in self._vectors.values()}
        if len(dims) > 1:
            raise KalmatchError(f"embeddings have mixed dimensions {sorted(dims)}")
        self._dim = dims.pop() if dims else 0

    @property
    def dim(self) -> int:
        return self._dim

    def get(self, crop_id: str) -> np.ndarray:
        try:
            return self._vectors[crop_id]
        except KeyError:
            raise MissingEmbeddingError(crop_id)

    def __len__(self) -> int:
        return len(self._vectors)

    def __contains__(self, crop_id: str) -> bool:
        return crop_id in self._vectors


class FileEmbeddingProvider(InMemoryEmbeddingProvider):
    """Provider backed by a sidecar file of ``crop_id dim v1 ... v_dim`` records"""

    def __init__(self, path: str | Path):
        self.path = Path(path)
        super().__init__(read_embedding_file(self.path))
        logger.info("embeddings_loaded", path=str(self.path), count=len(self), dim=self.dim)


def read_embedding_file(path: str | Path) -> dict[str, np.ndarray]:
    path = Path(path)
    if not path.is_file():
        raise KalmatchError(f"embedding file not found: {path}")
    if path.stat().st_size == 0:
        return {}

    frame = pd.read_csv(
        path, sep=r"\s+", header=None, comment="#", dtype={0: str}, float_precision="round_trip"
    )
    vectors: dict[str, np.ndarray] = {}
    for line, row in enumerate(frame.itertuples(index=False), start=1):
        crop_id, dim, *values = row
        dim = int(dim)
        vector = np.asarray(values[:dim], dtype=np.float64)
        if vector.shape[0] != dim or np.isnan(vector).any():
            raise KalmatchError(f"{path}: record {line} does not carry {dim} values")
        vectors[str(crop_id)] = vector
    return vectors


def write_embedding_file(path: str | Path, vectors: Mapping[str, Iterable[float]]) -> Path:
    lines = []
    for crop_id, vector in vectors.items():
        values = np.asarray(vector, dtype=np.float64)
        body = " ".join(f"{v:.17g}" for v in values)
        lines.append(f"{crop_id} {values.shape[0]} {body}")
    return get_storage().save_text("\n".join(lines) + ("\n" if lines else ""), path)
