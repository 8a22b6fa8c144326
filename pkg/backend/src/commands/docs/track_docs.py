track_docs = {
    "summary": "Track detections with a trained checkpoint",
    "description": """
    Run the online tracker over a detection file or a directory of
    sequences. A single file produces a single result file at --out; a
    directory produces <out>/<sequence>.txt per sequence.

    c_miss is taken from --c-miss or the config file, then from the
    checkpoint when it was calibrated. Otherwise it is estimated from the
    detections: halfway between the cost of typical frame-to-frame links
    and the cost of the runner-up links.

    --use-appearance needs an embedding sidecar (embeddings.txt next to
    det.txt, or --embeddings) and a checkpoint that carries an appearance
    head.
    """,
    "examples": """
    kalmatch track data/easy/det.txt --checkpoint runs/scorer.json --out runs/easy.txt
    kalmatch --jobs 4 track data/bench --checkpoint runs/scorer.json --out runs/bench
    """,
}
