import argparse
from pathlib import Path

import structlog

from commands.common import add_command, add_config_flags, config_overrides
from commands.docs.synth_docs import synth_docs
from core.config import SceneConfig, get_settings, load_config
from core.exceptions import ConfigError
from services.checkpoint_service import make_manifest, write_manifest
from services.embedding_service import write_embedding_file
from services.mot_io import DET_FILE, EMBEDDING_FILE, GT_FILE, write_mot
from services.synthetic import generate_scene

logger = structlog.get_logger(__name__)

MANIFEST_STEM = "synth"


def register(subparsers: argparse._SubParsersAction) -> None:
    parser = add_command(subparsers, "synth", synth_docs, cmd_synth)
    parser.add_argument("--out", required=True, type=Path, help="output directory")
    parser.add_argument("--scenes", type=int, default=1, help="number of scenes (seed + index each)")
    add_config_flags(parser, SceneConfig, "scene")


def write_scene(cfg: SceneConfig, directory: Path) -> dict[str, Path]:
    scene = generate_scene(cfg)
    return {
        "gt": write_mot(directory / GT_FILE, scene.gt_rows),
        "det": write_mot(directory / DET_FILE, scene.det_rows),
        "embeddings": write_embedding_file(directory / EMBEDDING_FILE, scene.embeddings),
    }


def cmd_synth(args: argparse.Namespace) -> int:
    """Write gt/det/embeddings for one or more scenes plus a manifest"""
    cfg = load_config(
        SceneConfig,
        args.config,
        config_overrides(args, SceneConfig),
        defaults={"seed": get_settings().seed},
    )
    if args.scenes < 1:
        raise ConfigError("scenes", "must be >= 1")

    outputs: dict[str, Path] = {}
    for index in range(args.scenes):
        scene_cfg = cfg.model_copy(update={"seed": cfg.seed + index})
        directory = args.out if args.scenes == 1 else args.out / f"scene-{index:03d}"
        written = write_scene(scene_cfg, directory)
        outputs.update({f"{directory.name}/{k}" if args.scenes > 1 else k: v for k, v in written.items()})
        logger.info("scene_written", directory=str(directory), seed=scene_cfg.seed)

    manifest = make_manifest(
        "synth",
        cfg.model_dump(mode="json") | {"scenes": args.scenes},
        cfg.seed,
        inputs={"config": args.config},
        outputs=outputs,
    )
    write_manifest(args.out / MANIFEST_STEM, manifest)
    return 0
