train_docs = {
    "summary": "Train the association scorer",
    "description": """
    Self-supervised training from detections only. The command:
    - cuts every sequence into clips of clip_length frames with constant K
    - fits the pairwise scorer by maximizing the observation likelihood of
      the clips under soft associations and a constant-velocity Kalman model
    - optionally fine-tunes the appearance head (--appearance)
    - optionally calibrates c_miss against gt.txt files (--calibration-gt),
      trying the fixed grid -2..2 and values read off the observed link costs

    Outputs the JSON checkpoint, a loss curve CSV (epoch,step,clip,loss)
    and a run manifest next to the checkpoint.
    """,
    "examples": """
    kalmatch train data/bench --out runs/scorer.json --epochs 20
    kalmatch train data/bench --out runs/scorer.json --appearance --calibration-gt
    """,
}
