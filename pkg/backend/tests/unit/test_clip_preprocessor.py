"""
Unit tests for cutting detection streams into constant-K clips
"""

import pytest

from core.config import TrainConfig
from models.detection import BoundingBox, Detection
from services.clip_preprocessor import preprocess_clips, preprocess_sequences
from services.synthetic import generate_scene
from tests.factories import SceneConfigFactory, moving_clip, scene_detections


def clip_frames(num_objects: int = 2, num_frames: int = 10, **kwargs) -> list[list[Detection]]:
    return [list(frame) for frame in moving_clip(num_objects=num_objects, num_frames=num_frames, **kwargs).detections]


def centers(frame) -> set[tuple[float, float]]:
    return {(round(d.box.cx, 6), round(d.box.cy, 6)) for d in frame}


@pytest.mark.unit
class TestPreprocessClips:
    def test_perfect_detections_are_kept_verbatim(self):
        frames = scene_detections(generate_scene(SceneConfigFactory(num_objects=3, num_frames=20)))

        clips = preprocess_clips(frames, T=10)

        assert len(clips) == 2
        for clip in clips:
            assert clip.num_objects == 3
            assert clip.num_frames == 10
            for t, frame in enumerate(clip.detections):
                assert not any(d.filled for d in frame)
                assert centers(frame) == centers(frames[clip.frame_indices[t] - 1])

    def test_missing_detection_is_extrapolated(self):
        # Given: a constant-velocity pair with one detection dropped in frame 5
        frames = clip_frames(velocity=(7.0, -3.0))
        missing = frames[4].pop(1)

        # When: the stream is cut into a clip
        clip = preprocess_clips(frames, T=10)[0]

        # Then: the gap is filled close to where the object really was
        assert clip.num_objects == 2
        filled = [d for d in clip.detections[4] if d.filled]
        assert len(filled) == 1
        assert filled[0].crop_id is None
        assert filled[0].frame == 5
        assert abs(filled[0].box.cx - missing.box.cx) < 1.0
        assert abs(filled[0].box.cy - missing.box.cy) < 1.0

    def test_spurious_detection_is_dropped(self):
        frames = clip_frames()
        spurious = Detection(frame=3, box=BoundingBox(1500.0, 900.0, 30.0, 60.0, conf=0.95), crop_id="3:9")
        frames[2].append(spurious)

        clip = preprocess_clips(frames, T=10)[0]

        assert clip.num_objects == 2
        assert spurious not in clip.detections[2]

    def test_low_confidence_detections_are_ignored(self):
        frames = clip_frames()
        frames[0].append(Detection(frame=1, box=BoundingBox(900.0, 900.0, 30.0, 60.0, conf=0.2)))

        clip = preprocess_clips(frames, conf_threshold=0.5, T=10)[0]

        assert clip.num_objects == 2

    def test_empty_first_frame_skips_clip(self):
        frames = clip_frames(num_frames=20)
        frames[10] = []

        clips = preprocess_clips(frames, T=10)

        assert [c.frame_indices[0] for c in clips] == [1]

    @pytest.mark.parametrize(
        "num_frames,T,stride,expected",
        [(25, 10, None, 2), (25, 10, 5, 4), (9, 10, None, 0), (10, 10, None, 1)],
    )
    def test_window_count(self, num_frames, T, stride, expected):
        clips = preprocess_clips(clip_frames(num_frames=num_frames), T=T, stride=stride)
        assert len(clips) == expected
        assert all(c.num_frames == T for c in clips)

    def test_frame_indices_and_sequence_id_carried(self):
        clips = preprocess_clips(
            clip_frames(num_frames=6), T=3, sequence_id="seq-a", frame_indices=range(101, 107)
        )
        assert [c.frame_indices for c in clips] == [(101, 102, 103), (104, 105, 106)]
        assert {c.sequence_id for c in clips} == {"seq-a"}


@pytest.mark.unit
class TestPreprocessSequences:
    def test_concatenates_in_sequence_order(self):
        cfg = TrainConfig(clip_length=5)
        sequences = {"b": clip_frames(num_frames=10), "a": clip_frames(num_objects=3, num_frames=5)}

        clips = preprocess_sequences(sequences, cfg, jobs=2)

        assert [c.sequence_id for c in clips] == ["b", "b", "a"]
        assert [c.num_objects for c in clips] == [2, 2, 3]
