"""
Shared dependencies: seeded random sub-streams and provider factories
"""

from pathlib import Path

import numpy as np
import torch

from core.exceptions import KalmatchError

# Every consumer of randomness draws from its own named stream so that adding
# draws in one place never shifts another.
RANDOM_STREAMS = ("scene", "init", "shuffle", "appearance", "subset")


def stream_seed(seed: int, stream: str) -> int:
    """Derive a 63-bit seed for a named sub-stream of ``seed``"""
    if stream not in RANDOM_STREAMS:
        raise KalmatchError(f"unknown random stream {stream!r}")
    sequence = np.random.SeedSequence(seed, spawn_key=(RANDOM_STREAMS.index(stream),))
    return int(sequence.generate_state(1, dtype=np.uint64)[0] >> np.uint64(1))


def numpy_generator(seed: int, stream: str) -> np.random.Generator:
    return np.random.default_rng(stream_seed(seed, stream))


def torch_generator(seed: int, stream: str) -> torch.Generator:
    generator = torch.Generator()
    generator.manual_seed(stream_seed(seed, stream))
    return generator


def get_embedding_provider(path: str | Path | None):
    """Return the embedding provider for a sidecar file, or None without one"""
    from services.embedding_service import FileEmbeddingProvider

    if path is None:
        return None
    return FileEmbeddingProvider(path)
