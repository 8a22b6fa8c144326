"""
End-to-end runs of the kalmatch subcommands on synthetic scenes
"""

import json

import pandas as pd
import pytest

from main import EXIT_ERROR, EXIT_USAGE, main
from services.checkpoint_service import load_checkpoint, manifest_path

pytestmark = pytest.mark.usefixtures("restore_logging")

TINY_TRAINING = ["--epochs", "1", "--clip-length", "5", "--hidden-width", "8", "--optimizer", "adam", "--seed", "0"]


def synth(out, *flags: str) -> int:
    return main(["synth", "--out", str(out), "--num-objects", "3", "--num-frames", "20", *flags])


@pytest.fixture
def scene_dir(temp_dir):
    directory = temp_dir / "scene"
    assert synth(directory, "--seed", "1") == 0
    return directory


@pytest.fixture
def checkpoint(temp_dir, scene_dir):
    path = temp_dir / "runs" / "scorer.json"
    assert main(["train", str(scene_dir / "det.txt"), "--out", str(path), *TINY_TRAINING]) == 0
    return path


@pytest.mark.integration
class TestSynthCommand:
    def test_writes_scene_files_and_manifest(self, scene_dir):
        assert {p.name for p in scene_dir.iterdir()} == {
            "gt.txt",
            "det.txt",
            "embeddings.txt",
            "synth.manifest.json",
        }
        manifest = json.loads((scene_dir / "synth.manifest.json").read_text())
        assert manifest["subcommand"] == "synth"
        assert manifest["seed"] == 1
        assert manifest["config"]["num_objects"] == 3

    def test_same_seed_same_bytes(self, temp_dir):
        assert synth(temp_dir / "a", "--seed", "5", "--fp-rate", "0.2") == 0
        assert synth(temp_dir / "b", "--seed", "5", "--fp-rate", "0.2") == 0

        for name in ("gt.txt", "det.txt", "embeddings.txt"):
            assert (temp_dir / "a" / name).read_bytes() == (temp_dir / "b" / name).read_bytes()

    def test_multiple_scenes_get_subdirectories(self, temp_dir):
        assert synth(temp_dir / "bench", "--scenes", "2") == 0
        assert (temp_dir / "bench" / "scene-000" / "det.txt").is_file()
        assert (temp_dir / "bench" / "scene-001" / "det.txt").is_file()

    def test_infeasible_scene_fails(self, temp_dir):
        assert synth(temp_dir / "bad", "--num-frames", "2000") == EXIT_ERROR


@pytest.mark.integration
class TestTrainTrackEval:
    def test_train_writes_checkpoint_losses_and_manifest(self, checkpoint):
        loaded = load_checkpoint(checkpoint)
        losses = pd.read_csv(checkpoint.with_name("scorer.losses.csv"))

        assert loaded.scorer.hidden_width == 8
        assert loaded.train_config["clip_length"] == 5
        assert list(losses.columns) == ["epoch", "step", "clip", "loss"]
        assert len(losses) == 4
        assert manifest_path(checkpoint).is_file()

    def test_training_is_reproducible(self, temp_dir, scene_dir, checkpoint):
        again = temp_dir / "again" / "scorer.json"
        assert main(["train", str(scene_dir / "det.txt"), "--out", str(again), *TINY_TRAINING]) == 0
        assert again.read_bytes() == checkpoint.read_bytes()

    def test_track_then_eval(self, temp_dir, scene_dir, checkpoint, capsys):
        # Given: a trained checkpoint and the scene it was trained on
        result = temp_dir / "runs" / "scene.txt"
        metrics = temp_dir / "runs" / "metrics.csv"

        # When: the scene is tracked and scored against its ground truth
        assert main(["track", str(scene_dir / "det.txt"), "--checkpoint", str(checkpoint), "--out", str(result)]) == 0
        assert main(["eval", str(scene_dir / "gt.txt"), str(result), "--out", str(metrics)]) == 0

        # Then: metrics land in the CSV and on stdout, each output with its manifest
        table = pd.read_csv(metrics)
        assert list(table["sequence"]) == ["scene", "OVERALL"]
        assert table["num_gt"].iloc[-1] == 60
        assert "OVERALL" in capsys.readouterr().out
        assert manifest_path(result).is_file()
        assert manifest_path(metrics).is_file()

    def test_directory_of_sequences(self, temp_dir, checkpoint):
        bench = temp_dir / "bench"
        assert synth(bench, "--scenes", "2") == 0
        out = temp_dir / "tracked"

        assert main(["--jobs", "2", "track", str(bench), "--checkpoint", str(checkpoint), "--out", str(out)]) == 0
        assert main(["eval", str(bench), str(out)]) == 0

        assert (out / "scene-000.txt").is_file()
        assert (out / "scene-001.txt").is_file()
        assert (temp_dir / "tracked.eval.csv").is_file()

    def test_tracking_is_byte_identical(self, temp_dir, scene_dir, checkpoint):
        args = ["track", str(scene_dir / "det.txt"), "--checkpoint", str(checkpoint), "--out"]

        assert main([*args, str(temp_dir / "first.txt")]) == 0
        assert main([*args, str(temp_dir / "second.txt")]) == 0

        assert (temp_dir / "first.txt").read_bytes() == (temp_dir / "second.txt").read_bytes()

    def test_parallel_jobs_write_identical_files(self, temp_dir, checkpoint):
        bench = temp_dir / "bench"
        assert synth(bench, "--scenes", "3", "--center-noise", "1.0") == 0

        for jobs, out in (("1", "serial"), ("2", "parallel")):
            args = ["--jobs", jobs, "track", str(bench), "--checkpoint", str(checkpoint), "--out", str(temp_dir / out)]
            assert main(args) == 0

        for name in ("scene-000.txt", "scene-001.txt", "scene-002.txt"):
            assert (temp_dir / "serial" / name).read_bytes() == (temp_dir / "parallel" / name).read_bytes()


@pytest.mark.integration
class TestFailures:
    def test_missing_detections(self, temp_dir):
        assert main(["train", str(temp_dir / "absent"), "--out", str(temp_dir / "c.json")]) == EXIT_ERROR

    def test_invalid_flag_value(self, scene_dir, checkpoint, temp_dir):
        args = ["track", str(scene_dir / "det.txt"), "--checkpoint", str(checkpoint), "--out", str(temp_dir / "r.txt")]
        assert main([*args, "--tau", "0"]) == EXIT_USAGE

    def test_unknown_config_key(self, scene_dir, temp_dir):
        config = temp_dir / "train.env"
        config.write_text("LEARNNG_RATE=0.1\n")

        code = main(["train", str(scene_dir / "det.txt"), "--out", str(temp_dir / "c.json"), "--config", str(config)])

        assert code == EXIT_USAGE

    def test_sequence_shorter_than_clip(self, temp_dir):
        assert synth(temp_dir / "short", "--num-frames", "3") == 0
        code = main(["train", str(temp_dir / "short" / "det.txt"), "--out", str(temp_dir / "c.json")])
        assert code == EXIT_ERROR

    def test_appearance_without_head(self, scene_dir, checkpoint, temp_dir):
        code = main(
            [
                "track",
                str(scene_dir / "det.txt"),
                "--checkpoint",
                str(checkpoint),
                "--out",
                str(temp_dir / "r.txt"),
                "--use-appearance",
            ]
        )
        assert code == EXIT_ERROR

    def test_corrupt_checkpoint(self, scene_dir, temp_dir):
        broken = temp_dir / "broken.json"
        broken.write_text("{}")
        args = ["track", str(scene_dir / "det.txt"), "--checkpoint", str(broken), "--out", str(temp_dir / "r.txt")]
        assert main(args) == EXIT_ERROR


@pytest.mark.integration
@pytest.mark.slow
class TestFullPipeline:
    def test_appearance_and_calibration(self, temp_dir):
        bench = temp_dir / "bench"
        assert synth(bench, "--scenes", "2", "--miss-rate", "0.05", "--center-noise", "1.0") == 0
        model = temp_dir / "model.json"

        code = main(
            ["train", str(bench), "--out", str(model), *TINY_TRAINING, "--appearance", "--calibration-gt"]
        )
        assert code == 0

        loaded = load_checkpoint(model)
        assert loaded.appearance_head is not None
        assert loaded.c_miss is not None

        out = temp_dir / "tracked"
        assert main(["track", str(bench), "--checkpoint", str(model), "--out", str(out), "--use-appearance"]) == 0
        assert main(["eval", str(bench), str(out), "--out", str(temp_dir / "m.csv")]) == 0
        assert len(pd.read_csv(temp_dir / "m.csv")) == 3

    def test_trained_scorer_tracks_lanes_and_gaps(self, temp_dir):
        # Given: a scorer trained with the default config on a lanes bench, c_miss calibrated on it
        lanes = ["--num-objects", "5", "--num-frames", "50", "--center-noise", "1.0"]
        bench = temp_dir / "bench"
        assert main(["synth", "--out", str(bench), "--scenes", "4", "--seed", "0", *lanes]) == 0
        model = temp_dir / "model.json"
        assert main(["train", str(bench), "--out", str(model), "--calibration-gt"]) == 0

        # When: the bench is tracked and scored
        tracked, metrics = temp_dir / "tracked", temp_dir / "metrics.csv"
        assert main(["track", str(bench), "--checkpoint", str(model), "--out", str(tracked)]) == 0
        assert main(["eval", str(bench), str(tracked), "--out", str(metrics)]) == 0

        # Then
        overall = pd.read_csv(metrics).iloc[-1]
        assert overall["sequence"] == "OVERALL"
        assert overall["mota"] >= 0.99
        assert overall["idsw"] == 0

        # Given: unseen scenes where objects drop out for ten frames at a time
        gaps = temp_dir / "gaps"
        gap_flags = ["--num-gaps", "2", "--gap-length", "10"]
        assert main(["synth", "--out", str(gaps), "--scenes", "2", "--seed", "100", *lanes, *gap_flags]) == 0

        # When: tracks may coast for 60 frames
        tracked, metrics = temp_dir / "gaps-tracked", temp_dir / "gaps.csv"
        args = ["track", str(gaps), "--checkpoint", str(model), "--out", str(tracked), "--tau", "60"]
        assert main(args) == 0
        assert main(["eval", str(gaps), str(tracked), "--out", str(metrics)]) == 0

        # Then: every object is picked up again by its own track
        assert (pd.read_csv(metrics)["idsw"] == 0).all()
