"""
Checkpoint and run-manifest persistence
"""

import json
import subprocess
from functools import lru_cache
from pathlib import Path
from typing import Any

import structlog
import torch
from pydantic import ValidationError

from core import __version__
from core.config import TrainConfig
from core.exceptions import CheckpointError
from models.gaussian import DTYPE
from schemas.checkpoint import AppearanceHeadState, Checkpoint, ScorerState
from schemas.manifest import RunManifest
from services.assoc_net import AppearanceHead, PairwiseScorer
from services.embedding_service import EmbeddingProvider
from services.storage_service import get_storage

logger = structlog.get_logger(__name__)


def _tensor(values: Any, name: str, shape: tuple[int, ...]) -> torch.Tensor:
    tensor = torch.tensor(values, dtype=DTYPE)
    if tuple(tensor.shape) != shape:
        raise CheckpointError(f"{name} has shape {tuple(tensor.shape)}, expected {shape}")
    return tensor


def scorer_state(scorer: PairwiseScorer) -> ScorerState:
    return ScorerState(
        hidden_width=scorer.hidden_width,
        fc1_weight=scorer.fc1.weight.detach().tolist(),
        fc1_bias=scorer.fc1.bias.detach().tolist(),
        fc2_weight=scorer.fc2.weight.detach().tolist(),
        fc2_bias=scorer.fc2.bias.detach().tolist(),
    )


def restore_scorer(state: ScorerState) -> PairwiseScorer:
    h = state.hidden_width
    scorer = PairwiseScorer(h)
    with torch.no_grad():
        scorer.fc1.weight.copy_(_tensor(state.fc1_weight, "fc1_weight", (h, 5)))
        scorer.fc1.bias.copy_(_tensor(state.fc1_bias, "fc1_bias", (h,)))
        scorer.fc2.weight.copy_(_tensor(state.fc2_weight, "fc2_weight", (1, h)))
        scorer.fc2.bias.copy_(_tensor(state.fc2_bias, "fc2_bias", (1,)))
    return scorer


def head_state(head: AppearanceHead) -> AppearanceHeadState:
    return AppearanceHeadState(
        in_dim=head.in_dim,
        out_dim=head.out_dim,
        temperature=head.temperature,
        weight=head.proj.weight.detach().tolist(),
    )


def restore_head(state: AppearanceHeadState, provider: EmbeddingProvider | None) -> AppearanceHead:
    if provider is not None and provider.dim != state.in_dim:
        raise CheckpointError(
            f"appearance head expects {state.in_dim}-d embeddings, provider has {provider.dim}"
        )
    head = AppearanceHead(provider, state.out_dim, state.temperature, in_dim=state.in_dim)
    with torch.no_grad():
        head.proj.weight.copy_(_tensor(state.weight, "appearance weight", (state.out_dim, state.in_dim)))
    return head


def build_checkpoint(
    scorer: PairwiseScorer,
    cfg: TrainConfig,
    head: AppearanceHead | None = None,
    c_miss: float | None = None,
) -> Checkpoint:
    return Checkpoint(
        seed=cfg.seed,
        scorer=scorer_state(scorer),
        appearance_head=head_state(head) if head is not None else None,
        train_config=cfg.model_dump(mode="json"),
        c_miss=c_miss,
    )


def save_checkpoint(path: str | Path, checkpoint: Checkpoint) -> Path:
    content = json.dumps(checkpoint.model_dump(mode="json"), indent=2, sort_keys=True) + "\n"
    written = get_storage().save_text(content, path)
    logger.info("checkpoint_saved", path=str(written), appearance=checkpoint.appearance_head is not None)
    return written


def load_checkpoint(path: str | Path) -> Checkpoint:
    path = Path(path)
    if not path.is_file():
        raise CheckpointError(f"checkpoint not found: {path}")
    try:
        checkpoint = Checkpoint.model_validate_json(path.read_text(encoding="utf-8"))
    except ValidationError as e:
        first = e.errors()[0]
        where = ".".join(str(p) for p in first["loc"])
        raise CheckpointError(f"{path}: {where}: {first['msg']}")
    logger.debug("checkpoint_loaded", path=str(path))
    return checkpoint


@lru_cache
def describe_version() -> str:
    """``git describe`` of the working tree, or the package version outside git"""
    try:
        result = subprocess.run(
            ["git", "describe", "--tags", "--always", "--dirty"],
            capture_output=True,
            text=True,
            check=True,
            cwd=Path(__file__).parent,
            timeout=5,
        )
        return result.stdout.strip() or __version__
    except (OSError, subprocess.SubprocessError):
        return __version__


def manifest_path(output: str | Path) -> Path:
    output = Path(output)
    return output.with_name(output.name + ".manifest.json")


def write_manifest(output: str | Path, manifest: RunManifest) -> Path:
    content = json.dumps(manifest.model_dump(mode="json"), indent=2, sort_keys=True) + "\n"
    return get_storage().save_text(content, manifest_path(output))


def make_manifest(
    subcommand: str,
    config: dict[str, Any],
    seed: int | None,
    inputs: dict[str, str | Path | None],
    outputs: dict[str, str | Path],
) -> RunManifest:
    return RunManifest(
        subcommand=subcommand,
        version=describe_version(),
        seed=seed,
        config=config,
        inputs={k: str(v) if v is not None else None for k, v in inputs.items()},
        outputs={k: str(v) for k, v in outputs.items()},
    )
