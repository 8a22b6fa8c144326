import argparse
from pathlib import Path

import structlog

from commands.common import add_command, add_config_flags, config_overrides
from commands.docs.track_docs import track_docs
from core.config import TrackerConfig, get_settings, load_config
from core.dependencies import get_embedding_provider
from core.exceptions import CheckpointError, KalmatchError
from services.assoc_net import PairwiseScorer
from services.checkpoint_service import (
    load_checkpoint,
    make_manifest,
    restore_head,
    restore_scorer,
    write_manifest,
)
from services.embedding_service import EmbeddingProvider, InMemoryEmbeddingProvider
from services.mot_io import EMBEDDING_FILE, SequenceData, load_sequences, write_mot
from services.tracker import estimate_c_miss, link_costs, track_sequences

logger = structlog.get_logger(__name__)


def register(subparsers: argparse._SubParsersAction) -> None:
    parser = add_command(subparsers, "track", track_docs, cmd_track)
    parser.add_argument("detections", type=Path, help="det.txt file or directory of sequences")
    parser.add_argument("--checkpoint", required=True, type=Path, help="checkpoint written by train")
    parser.add_argument("--out", required=True, type=Path, help="result file, or directory for many sequences")
    parser.add_argument("--embeddings", type=Path, default=None, help="embedding sidecar for a single det file")
    add_config_flags(parser, TrackerConfig, "tracker")


def _provider(args: argparse.Namespace, sequences: list[SequenceData]) -> EmbeddingProvider:
    if args.embeddings is not None:
        if not args.embeddings.is_file():
            raise KalmatchError(f"embedding sidecar not found: {args.embeddings}")
        return get_embedding_provider(args.embeddings)

    merged = {}
    for sequence in sequences:
        if sequence.embeddings is None:
            expected = args.detections.parent if args.detections.is_file() else args.detections / sequence.name
            raise KalmatchError(f"embedding sidecar not found: {expected / EMBEDDING_FILE}")
        merged.update(sequence.embeddings)
    return InMemoryEmbeddingProvider(merged)


def _resolve_c_miss(
    cfg: TrackerConfig,
    calibrated: float | None,
    scorer: PairwiseScorer,
    sequences: list[SequenceData],
) -> TrackerConfig:
    """Flag or config file first, then the checkpoint, then an estimate from the detections"""
    if "c_miss" in cfg.model_fields_set:
        return cfg
    if calibrated is not None:
        logger.info("c_miss_from_checkpoint", c_miss=calibrated)
        return cfg.model_copy(update={"c_miss": calibrated})
    estimate = estimate_c_miss(link_costs(scorer, {s.name: s.frames for s in sequences}, cfg))
    logger.info("c_miss_estimated", c_miss=estimate)
    return cfg.model_copy(update={"c_miss": estimate})


def result_paths(out: Path, sequences: list[SequenceData], single_file: bool) -> dict[str, Path]:
    if single_file:
        return {sequences[0].name: out}
    return {s.name: out / f"{s.name}.txt" for s in sequences}


def cmd_track(args: argparse.Namespace) -> int:
    """Run the online tracker and write MOT result rows"""
    settings = get_settings()
    checkpoint = load_checkpoint(args.checkpoint)
    cfg = load_config(TrackerConfig, args.config, config_overrides(args, TrackerConfig))
    scorer = restore_scorer(checkpoint.scorer)
    sequences = load_sequences(args.detections)
    cfg = _resolve_c_miss(cfg, checkpoint.c_miss, scorer, sequences)

    head = None
    if cfg.use_appearance:
        if checkpoint.appearance_head is None:
            raise CheckpointError(f"{args.checkpoint} has no appearance head; retrain with --appearance")
        head = restore_head(checkpoint.appearance_head, _provider(args, sequences))

    results = track_sequences({s.name: s.frames for s in sequences}, scorer, cfg, head, jobs=settings.jobs)

    paths = result_paths(args.out, sequences, args.detections.is_file())
    outputs = {name: write_mot(paths[name], rows) for name, rows in results.items()}

    manifest = make_manifest(
        "track",
        cfg.model_dump(mode="json"),
        checkpoint.seed,
        inputs={"detections": args.detections, "checkpoint": args.checkpoint, "config": args.config},
        outputs=outputs,
    )
    write_manifest(args.out if args.detections.is_file() else args.out / "track", manifest)
    logger.info("tracking_done", sequences=len(results), rows=sum(len(r) for r in results.values()))
    return 0
