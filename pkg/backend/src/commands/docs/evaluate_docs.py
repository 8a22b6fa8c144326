evaluate_docs = {
    "summary": "Evaluate tracking results",
    "description": """
    Compare result files against ground truth with IoU >= --iou-threshold
    matching. Prints a MOTA / IDF1 / IDSW table to stdout and writes
    sequence,mota,idf1,idsw,num_gt,fn,fp,matches rows to the CSV at --out
    (default: <results>.eval.csv). The last row, OVERALL, is computed from
    summed counts.

    Frames outside the range shared by both inputs are dropped with a
    warning.
    """,
    "examples": """
    kalmatch eval data/easy/gt.txt runs/easy.txt
    kalmatch eval data/bench runs/bench --out runs/bench.csv
    """,
}
