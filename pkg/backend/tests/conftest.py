"""
Pytest configuration and shared fixtures for kalmatch tests.
"""

import logging
import os
import sys
import tempfile
from pathlib import Path

import pytest
import structlog
import torch

sys.path.insert(0, str(Path(__file__).parent.parent / "src"))

from core.config import TrackerConfig, TrainConfig, override_settings  # noqa: E402
from models.gaussian import DTYPE  # noqa: E402
from services.assoc_net import PairwiseScorer  # noqa: E402


@pytest.fixture
def temp_dir():
    """Create a temporary directory for test files."""
    with tempfile.TemporaryDirectory() as tmpdir:
        yield Path(tmpdir)


@pytest.fixture(autouse=True)
def setup_test_environment():
    """Isolate tests from KALMATCH_* variables of the calling shell."""
    original = {k: v for k, v in os.environ.items() if k.startswith("KALMATCH_")}
    for key in original:
        os.environ.pop(key)
    override_settings()

    yield

    os.environ.update(original)
    override_settings()


@pytest.fixture
def restore_logging():
    """Undo configure_logging so later tests never write to a closed capture stream"""
    handlers = logging.root.handlers[:]
    level = logging.root.level
    yield
    structlog.reset_defaults()
    logging.root.handlers[:] = handlers
    logging.root.setLevel(level)


@pytest.fixture
def rng():
    return torch.Generator().manual_seed(1234)


@pytest.fixture
def fast_train_config():
    """Small training run: few epochs, Adam, short clips"""
    return TrainConfig(
        learning_rate=0.01,
        epochs=3,
        optimizer="adam",
        clip_length=5,
        hidden_width=16,
        seed=0,
    )


@pytest.fixture
def tracker_config():
    return TrackerConfig()


@pytest.fixture
def distance_scorer():
    """Hand-set scorer g = -c * (|dx| + |dy|) with the normalized offsets.

    Hidden units are relu(dx), relu(-dx), relu(dy), relu(-dy); the output sums
    them with weight -c. Scores peak at zero displacement.
    """
    scorer = PairwiseScorer(hidden_width=4)
    c = 4.0
    with torch.no_grad():
        scorer.fc1.weight.zero_()
        scorer.fc1.bias.zero_()
        scorer.fc1.weight[0, 0] = 1.0
        scorer.fc1.weight[1, 0] = -1.0
        scorer.fc1.weight[2, 1] = 1.0
        scorer.fc1.weight[3, 1] = -1.0
        scorer.fc2.weight.copy_(torch.full((1, 4), -c, dtype=DTYPE))
        scorer.fc2.bias.zero_()
    return scorer
