import argparse
from pathlib import Path

import pandas as pd
import structlog

from commands.common import add_command, add_config_flags, config_overrides
from commands.docs.train_docs import train_docs
from core.config import TrackerConfig, TrainConfig, get_settings, load_config
from core.exceptions import KalmatchError
from services.checkpoint_service import build_checkpoint, make_manifest, save_checkpoint, write_manifest
from services.clip_preprocessor import preprocess_sequences
from services.embedding_service import InMemoryEmbeddingProvider
from services.metrics import label_detections
from services.mot_io import SequenceData, load_sequences
from services.storage_service import get_storage
from services.tracker import calibrate_c_miss
from services.trainer import build_appearance_head, train_appearance, train_association

logger = structlog.get_logger(__name__)

LOSS_COLUMNS = ["epoch", "step", "clip", "loss"]


def register(subparsers: argparse._SubParsersAction) -> None:
    parser = add_command(subparsers, "train", train_docs, cmd_train)
    parser.add_argument("detections", type=Path, help="det.txt file or directory of sequences")
    parser.add_argument("--out", required=True, type=Path, help="checkpoint path (JSON)")
    parser.add_argument(
        "--calibration-gt",
        action="store_true",
        help="choose c_miss by tracking each sequence against its gt.txt",
    )
    parser.add_argument("--tracker-config", default=None, help="tracker config used for calibration")
    add_config_flags(parser, TrainConfig, "training")


def loss_curve_path(checkpoint: Path) -> Path:
    return checkpoint.with_name(checkpoint.stem + ".losses.csv")


def _merged_embeddings(sequences: list[SequenceData]) -> InMemoryEmbeddingProvider:
    missing = [s.name for s in sequences if s.embeddings is None]
    if missing:
        raise KalmatchError(f"appearance training needs embeddings.txt for sequences: {', '.join(missing)}")
    merged = {}
    for sequence in sequences:
        merged.update(sequence.embeddings or {})
    return InMemoryEmbeddingProvider(merged)


def _identities(sequences: list[SequenceData]) -> dict[str, int] | None:
    if any(s.ground_truth is None for s in sequences):
        return None
    labels: dict[str, int] = {}
    for sequence in sequences:
        labels.update(label_detections(sequence.frames, sequence.ground_truth or []))
    return labels


def cmd_train(args: argparse.Namespace) -> int:
    """preprocess -> train scorer -> optional appearance head -> optional c_miss calibration"""
    settings = get_settings()
    cfg = load_config(
        TrainConfig, args.config, config_overrides(args, TrainConfig), defaults={"seed": settings.seed}
    )
    sequences = load_sequences(args.detections)
    clips = preprocess_sequences({s.name: s.frames for s in sequences}, cfg, jobs=settings.jobs)
    if not clips:
        raise KalmatchError(
            f"no clips of {cfg.clip_length} frames with confident first-frame detections in {args.detections}"
        )

    result = train_association(clips, cfg, identities=_identities(sequences))

    head = None
    if cfg.appearance:
        head = build_appearance_head(_merged_embeddings(sequences), cfg)
        head = train_appearance(clips, result.scorer, head, cfg).head

    c_miss = None
    if args.calibration_gt:
        if any(s.ground_truth is None for s in sequences):
            raise KalmatchError("--calibration-gt needs gt.txt next to every det.txt")
        tracker_cfg = load_config(TrackerConfig, args.tracker_config, {"use_appearance": head is not None or None})
        c_miss, _ = calibrate_c_miss(
            result.scorer,
            {s.name: s.frames for s in sequences},
            {s.name: s.ground_truth or [] for s in sequences},
            tracker_cfg,
            head,
            jobs=settings.jobs,
        )

    checkpoint = save_checkpoint(args.out, build_checkpoint(result.scorer, cfg, head, c_miss))
    losses = pd.DataFrame([(r.epoch, r.step, r.clip, r.loss) for r in result.losses], columns=LOSS_COLUMNS)
    curve = get_storage().save_frame(losses, loss_curve_path(args.out), float_format="%.10g")

    manifest = make_manifest(
        "train",
        cfg.model_dump(mode="json"),
        cfg.seed,
        inputs={"detections": args.detections, "config": args.config, "tracker_config": args.tracker_config},
        outputs={"checkpoint": checkpoint, "losses": curve},
    )
    write_manifest(args.out, manifest)

    logger.info(
        "training_done",
        clips=len(clips),
        steps=len(result.losses),
        first_loss=result.losses[0].loss if result.losses else None,
        final_loss=result.losses[-1].loss if result.losses else None,
        accuracy=result.accuracy,
        c_miss=c_miss,
    )
    return 0
