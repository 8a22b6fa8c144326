"""
MOT-Challenge CSV reading/writing and sequence discovery
"""

import dataclasses
import io
import re
from collections.abc import Iterable, Mapping, Sequence
from pathlib import Path
from typing import TextIO

import numpy as np
import pandas as pd
import structlog

from core.exceptions import InvalidBoxError, KalmatchError, MotFormatError
from models.detection import Detection
from models.mot import MOT_COLUMNS, MotRow
from services.embedding_service import read_embedding_file
from services.storage_service import get_storage

logger = structlog.get_logger(__name__)

MIN_COLUMNS = 6
DET_FILE = "det.txt"
GT_FILE = "gt.txt"
EMBEDDING_FILE = "embeddings.txt"

MotFrames = dict[int, list[MotRow]]


def _parse_row(values: Sequence[str | float], line: int) -> MotRow:
    fields = [v for v in values if not (isinstance(v, float) and np.isnan(v))]
    if len(fields) < MIN_COLUMNS:
        raise MotFormatError(line, f"expected at least {MIN_COLUMNS} fields, got {len(fields)}")
    try:
        numbers = [float(v) for v in fields[: len(MOT_COLUMNS)]]
    except ValueError as e:
        raise MotFormatError(line, str(e))

    frame = numbers[0]
    if not frame.is_integer() or frame < 1:
        raise MotFormatError(line, f"frame must be an integer >= 1, got {fields[0]}")
    if not numbers[1].is_integer():
        raise MotFormatError(line, f"id must be an integer, got {fields[1]}")
    if numbers[4] <= 0 or numbers[5] <= 0:
        raise MotFormatError(line, f"box needs positive size, got w={fields[4]} h={fields[5]}")
    return MotRow(int(frame), int(numbers[1]), *numbers[2:])


def parse_mot(source: str | Path | TextIO) -> MotFrames:
    """Rows grouped by frame (ascending), file order kept within a frame"""
    if isinstance(source, (str, Path)):
        path = Path(source)
        if not path.is_file():
            raise KalmatchError(f"MOT file not found: {path}")
        text = path.read_text(encoding="utf-8")
    else:
        text = source.read()
    if not text.strip():
        return {}

    try:
        table = pd.read_csv(
            io.StringIO(text), header=None, dtype=str, skip_blank_lines=False, skipinitialspace=True
        )
    except pd.errors.ParserError as e:
        match = re.search(r"line (\d+)", str(e))
        raise MotFormatError(int(match.group(1)) if match else 0, "inconsistent field count")

    frames: MotFrames = {}
    for index, values in zip(table.index, table.itertuples(index=False, name=None), strict=True):
        if all(isinstance(v, float) and np.isnan(v) for v in values):
            continue
        row = _parse_row(values, int(index) + 1)
        frames.setdefault(row.frame, []).append(row)
    return dict(sorted(frames.items()))


def flatten(frames: Mapping[int, Sequence[MotRow]]) -> list[MotRow]:
    return [row for frame in sorted(frames) for row in frames[frame]]


def mot_frame(rows: Iterable[MotRow]) -> pd.DataFrame:
    """DataFrame in MOT column order, sorted by frame then id"""
    ordered = sorted(rows, key=lambda r: (r.frame, r.id))
    table = pd.DataFrame([dataclasses.astuple(r) for r in ordered], columns=list(MOT_COLUMNS))
    return table.astype({"frame": "int64", "id": "int64"})


def write_mot(path: str | Path, rows: Iterable[MotRow]) -> Path:
    table = mot_frame(rows)
    return get_storage().save_frame(table, path, header=False, float_format="%.6f")


def dense_frames(frames: Mapping[int, Sequence[MotRow]], num_frames: int | None = None) -> list[list[MotRow]]:
    """Frames 1..N as a list, empty lists where a frame has no rows"""
    last = max(frames, default=0)
    total = max(last, num_frames or 0)
    return [list(frames.get(f, [])) for f in range(1, total + 1)]


def to_detections(
    frames: Mapping[int, Sequence[MotRow]],
    num_frames: int | None = None,
    namespace: str | None = None,
) -> list[list[Detection]]:
    """Dense per-frame detections with crop ids ``[namespace/]frame:index``"""
    out = []
    for rows in dense_frames(frames, num_frames):
        detections = []
        for index, row in enumerate(rows):
            try:
                det = row.to_detection(index)
            except InvalidBoxError as e:
                raise MotFormatError(0, f"frame {row.frame}: {e}")
            if namespace:
                det = dataclasses.replace(det, crop_id=f"{namespace}/{det.crop_id}")
            detections.append(det)
        out.append(detections)
    return out


@dataclasses.dataclass
class SequenceData:
    """One sequence directory: detections, optional ground truth and embeddings"""

    name: str
    frames: list[list[Detection]]
    ground_truth: list[MotRow] | None = None
    embeddings: dict[str, np.ndarray] | None = None


def discover_sequences(path: str | Path) -> dict[str, Path]:
    """Sequence name -> directory holding ``det.txt``.

    A file path is a single sequence named after its parent directory; a
    directory is searched recursively for ``det.txt``.
    """
    path = Path(path)
    if path.is_file():
        return {path.parent.name or path.stem: path.parent}
    if not path.is_dir():
        raise KalmatchError(f"no such file or directory: {path}")
    found = sorted(p.parent for p in path.rglob(DET_FILE))
    if not found:
        raise KalmatchError(f"no {DET_FILE} under {path}")
    return {str(d.relative_to(path)) if d != path else path.name: d for d in found}


def load_sequence(
    name: str,
    directory: Path,
    det_file: Path | None = None,
    namespace: bool = True,
) -> SequenceData:
    det_path = det_file or directory / DET_FILE
    gt_path = directory / GT_FILE
    emb_path = directory / EMBEDDING_FILE

    prefix = name if namespace else None
    gt = flatten(parse_mot(gt_path)) if gt_path.is_file() else None
    num_frames = max((r.frame for r in gt), default=0) if gt else None
    frames = to_detections(parse_mot(det_path), num_frames, prefix)

    embeddings = None
    if emb_path.is_file():
        raw = read_embedding_file(emb_path)
        embeddings = {f"{prefix}/{k}" if prefix else k: v for k, v in raw.items()}

    logger.info(
        "sequence_loaded",
        sequence=name,
        frames=len(frames),
        detections=sum(len(f) for f in frames),
        ground_truth=gt is not None,
        embeddings=len(embeddings) if embeddings else 0,
    )
    return SequenceData(name, frames, gt, embeddings)


def load_sequences(path: str | Path) -> list[SequenceData]:
    """Every sequence under ``path``; a single det file keeps plain crop ids"""
    path = Path(path)
    if path.is_file():
        return [load_sequence(path.parent.name or path.stem, path.parent, path, namespace=False)]
    sequences = discover_sequences(path)
    return [load_sequence(name, directory) for name, directory in sequences.items()]
