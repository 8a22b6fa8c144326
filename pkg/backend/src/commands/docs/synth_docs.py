synth_docs = {
    "summary": "Generate synthetic scenes",
    "description": """
    Generate constant-velocity scenes with a simulated detector. For every
    scene the command writes:
    - gt.txt: ground-truth tracks in MOT-Challenge format
    - det.txt: detections (id -1), shuffled within each frame
    - embeddings.txt: one appearance vector per detection crop id

    A single scene is written straight into --out; with --scenes N each
    scene goes to its own scene-XXX directory and uses seed + index.
    """,
    "examples": """
    kalmatch synth --out data/easy --num-objects 2 --num-frames 20 --seed 7
    kalmatch synth --out data/bench --scenes 20 --layout crossing --center-noise 2
    """,
}
