import argparse
from pathlib import Path

import pandas as pd
import structlog

from commands.common import add_command
from commands.docs.evaluate_docs import evaluate_docs
from core.exceptions import KalmatchError
from models.mot import MotRow
from schemas.report import EVAL_CSV_COLUMNS, EvalReport
from services.checkpoint_service import make_manifest, write_manifest
from services.metrics import evaluate, restrict_to_frames, summarize
from services.mot_io import GT_FILE, flatten, parse_mot
from services.storage_service import get_storage

logger = structlog.get_logger(__name__)


def register(subparsers: argparse._SubParsersAction) -> None:
    parser = add_command(subparsers, "eval", evaluate_docs, cmd_eval)
    parser.add_argument("ground_truth", type=Path, help="gt.txt file or directory searched for gt.txt")
    parser.add_argument("results", type=Path, help="result file, or directory of <sequence>.txt files")
    parser.add_argument("--out", type=Path, default=None, help="metrics CSV path")
    parser.add_argument("--iou-threshold", type=float, default=0.5)


def pair_inputs(ground_truth: Path, results: Path) -> dict[str, tuple[list[MotRow], list[MotRow]]]:
    """sequence name -> (gt rows, result rows)"""
    if ground_truth.is_file():
        if not results.is_file():
            raise KalmatchError(f"results file not found: {results}")
        name = ground_truth.parent.name or ground_truth.stem
        return {name: (flatten(parse_mot(ground_truth)), flatten(parse_mot(results)))}

    if not ground_truth.is_dir():
        raise KalmatchError(f"no such file or directory: {ground_truth}")
    pairs = {}
    for gt_path in sorted(ground_truth.rglob(GT_FILE)):
        name = str(gt_path.parent.relative_to(ground_truth)) if gt_path.parent != ground_truth else ground_truth.name
        result_path = results / f"{name}.txt"
        if not result_path.is_file():
            logger.warning("results_missing", sequence=name, expected=str(result_path))
        rows = flatten(parse_mot(result_path)) if result_path.is_file() else []
        pairs[name] = (flatten(parse_mot(gt_path)), rows)
    if not pairs:
        raise KalmatchError(f"no {GT_FILE} under {ground_truth}")
    return pairs


def report_table(report: EvalReport) -> pd.DataFrame:
    rows = [m.csv_row() for m in [*report.sequences, report.total]]
    return pd.DataFrame(rows, columns=list(EVAL_CSV_COLUMNS))


def cmd_eval(args: argparse.Namespace) -> int:
    """Print MOTA/IDF1/IDSW per sequence and write the metrics CSV"""
    per_sequence = []
    for name, (gt_rows, result_rows) in pair_inputs(args.ground_truth, args.results).items():
        gt_rows, result_rows = restrict_to_frames(gt_rows, result_rows)
        per_sequence.append(evaluate(gt_rows, result_rows, args.iou_threshold, sequence=name))
    report = summarize(per_sequence)

    table = report_table(report)
    print(table.to_string(index=False, float_format=lambda v: f"{v:.3f}"))

    out = args.out or args.results.with_name(args.results.name + ".eval.csv")
    written = get_storage().save_frame(table, out, float_format="%.6f")
    write_manifest(
        out,
        make_manifest(
            "eval",
            {"iou_threshold": args.iou_threshold},
            None,
            inputs={"ground_truth": args.ground_truth, "results": args.results},
            outputs={"metrics": written},
        ),
    )
    logger.info("evaluation_done", mota=report.mota, idf1=report.idf1, idsw=report.idsw)
    return 0
