"""
Unit tests for scorer training, the KL loss and appearance fine-tuning
"""

import math

import pytest
import torch

from core.config import TrainConfig
from core.exceptions import (
    InfiniteDivergenceError,
    KalmatchError,
    MissingEmbeddingError,
    ShapeMismatchError,
    TrainingDivergedError,
)
from models.detection import Detection, DetectionClip
from models.gaussian import DTYPE
from models.mot import crop_id_for
from services.assoc_net import AppearanceHead
from services.clip_preprocessor import preprocess_clips
from services.embedding_service import InMemoryEmbeddingProvider
from services.sinkhorn_assoc import sinkhorn_normalize
from services.synthetic import generate_scene
from services.trainer import (
    association_accuracy,
    build_appearance_head,
    build_optimizer,
    build_scorer,
    final_permutation,
    kl_loss,
    mean_kl,
    select_training_clips,
    train_appearance,
    train_association,
)
from tests.factories import SceneConfigFactory, moving_clip, permuted_clip, scene_detections


def identities_of(num_objects: int, num_frames: int) -> dict[str, int]:
    """moving_clip gives object k the crop id ``frame:k``"""
    return {crop_id_for(f, k): k for f in range(1, num_frames + 1) for k in range(num_objects)}


def shuffled_clips(count: int = 3, num_frames: int = 5) -> list:
    base = moving_clip(num_objects=3, num_frames=num_frames, spacing=150.0, velocity=(4.0, 2.0))
    g = torch.Generator().manual_seed(11)
    clips = []
    for _ in range(count):
        orders = [torch.randperm(3, generator=g).tolist() for _ in range(num_frames)]
        clips.append(permuted_clip(base, orders))
    return clips


def one_hot_provider(num_objects: int, num_frames: int) -> InMemoryEmbeddingProvider:
    vectors = {}
    for f in range(1, num_frames + 1):
        for k in range(num_objects):
            vectors[crop_id_for(f, k)] = [1.0 if i == k else 0.0 for i in range(num_objects)]
    return InMemoryEmbeddingProvider(vectors)


def parameters_of(module: torch.nn.Module) -> list[torch.Tensor]:
    return [p.detach().clone() for p in module.parameters()]


@pytest.mark.unit
class TestKlLoss:
    def test_identical_distributions(self, rng):
        P = sinkhorn_normalize(torch.randn(3, 3, generator=rng, dtype=DTYPE))
        assert float(kl_loss(P, P)) == pytest.approx(0.0, abs=1e-12)

    def test_hard_identity_against_uniform(self):
        P = torch.eye(2, dtype=DTYPE)
        U = torch.full((2, 2), 0.5, dtype=DTYPE)
        assert float(kl_loss(P, U)) == pytest.approx(2 * math.log(2), abs=1e-12)

    def test_random_pairs_are_non_negative(self, rng):
        for _ in range(20):
            P = sinkhorn_normalize(torch.randn(4, 4, generator=rng, dtype=DTYPE), iters=200)
            U = torch.softmax(torch.randn(4, 4, generator=rng, dtype=DTYPE), dim=1)
            # rows of P sum to one like rows of U, so each row term is a KL divergence
            assert float(kl_loss(P, U)) >= -1e-9

    def test_zero_reference_mass_raises(self):
        P = torch.eye(2, dtype=DTYPE)
        U = torch.tensor([[0.0, 1.0], [0.5, 0.5]], dtype=DTYPE)
        with pytest.raises(InfiniteDivergenceError):
            kl_loss(P, U)

    def test_zero_target_mass_contributes_nothing(self):
        P = torch.tensor([[1.0, 0.0], [0.0, 1.0]], dtype=DTYPE)
        U = torch.tensor([[0.5, 0.5], [1e-300, 1.0]], dtype=DTYPE)
        assert float(kl_loss(P, U)) == pytest.approx(math.log(2), abs=1e-12)

    def test_shape_mismatch_raises(self):
        with pytest.raises(ShapeMismatchError):
            kl_loss(torch.eye(2, dtype=DTYPE), torch.eye(3, dtype=DTYPE))


@pytest.mark.unit
class TestTrainAssociation:
    def test_zero_learning_rate_keeps_parameters(self):
        cfg = TrainConfig(learning_rate=0.0, epochs=2, hidden_width=8, clip_length=5)
        initial = build_scorer(cfg)
        before = parameters_of(initial)

        result = train_association(shuffled_clips(), cfg, scorer=initial)

        for a, b in zip(before, result.scorer.parameters(), strict=True):
            assert torch.equal(a, b)
        assert len(result.losses) == 2 * 3

    def test_seeded_runs_reproduce_the_loss_curve(self, fast_train_config):
        clips = shuffled_clips()
        first = train_association(clips, fast_train_config)
        second = train_association(clips, fast_train_config)

        assert [r.loss for r in first.losses] == [r.loss for r in second.losses]
        assert [r.clip for r in first.losses] == [r.clip for r in second.losses]
        for a, b in zip(first.scorer.parameters(), second.scorer.parameters(), strict=True):
            assert torch.equal(a, b)

    def test_loss_log_has_one_record_per_step(self, fast_train_config):
        result = train_association(shuffled_clips(), fast_train_config)

        assert [r.step for r in result.losses] == list(range(9))
        assert {r.epoch for r in result.losses} == {0, 1, 2}
        assert sorted(r.clip for r in result.losses if r.epoch == 0) == [0, 1, 2]

    def test_max_steps_stops_early(self, fast_train_config):
        cfg = fast_train_config.model_copy(update={"max_steps": 4})
        assert len(train_association(shuffled_clips(), cfg).losses) == 4

    def test_stationary_objects_descend(self):
        clip = moving_clip(num_objects=2, num_frames=6, spacing=300.0, velocity=(0.0, 0.0))
        cfg = TrainConfig(learning_rate=1e-3, epochs=50, hidden_width=16, clip_length=6)

        losses = [r.loss for r in train_association([clip], cfg).losses]

        assert len(losses) == 50
        assert losses[-1] <= losses[0] + 1e-9

    def test_non_finite_loss_reports_step(self, fast_train_config):
        scorer = build_scorer(fast_train_config)
        with torch.no_grad():
            scorer.fc2.bias.fill_(math.nan)

        with pytest.raises(TrainingDivergedError) as exc_info:
            train_association(shuffled_clips(), fast_train_config, scorer=scorer)

        assert exc_info.value.step == 0

    def test_empty_clip_list_rejected(self, fast_train_config):
        with pytest.raises(KalmatchError):
            train_association([], fast_train_config)

    def test_accuracy_reported_with_identities(self, fast_train_config):
        result = train_association(shuffled_clips(), fast_train_config, identities=identities_of(3, 5))
        assert result.accuracy is not None
        assert 0.0 <= result.accuracy <= 1.0

    @pytest.mark.slow
    def test_learns_to_link_separated_objects(self):
        clips = shuffled_clips(count=6, num_frames=8)
        cfg = TrainConfig(learning_rate=0.01, epochs=20, optimizer="adam", hidden_width=16, clip_length=8)

        result = train_association(clips, cfg, identities=identities_of(3, 8))

        first_epoch = [r.loss for r in result.losses if r.epoch == 0]
        last_epoch = [r.loss for r in result.losses if r.epoch == cfg.epochs - 1]
        assert sum(last_epoch) < sum(first_epoch)
        assert result.accuracy == pytest.approx(1.0)

    @pytest.mark.slow
    def test_default_config_links_crossing_objects(self):
        # Given: twenty short crossing scenes of five objects with 2 px center noise
        crossing = {"num_objects": 5, "num_frames": 10, "layout": "crossing", "center_noise": 2.0}
        scenes = [generate_scene(SceneConfigFactory(**crossing, seed=s)) for s in range(20)]
        clips = [
            preprocess_clips(scene_detections(scene), T=10, sequence_id=f"s{i}")[0] for i, scene in enumerate(scenes)
        ]
        cfg = TrainConfig()

        # When
        result = train_association(clips, cfg)

        # Then: crop ids repeat across scenes, so accuracy is taken per scene
        assert len(result.losses) <= 1000
        accuracies = [
            association_accuracy(result.scorer, [clip], scene.crop_identity)
            for clip, scene in zip(clips, scenes, strict=True)
        ]
        assert sum(accuracies) / len(accuracies) >= 0.98


@pytest.mark.unit
class TestTrainingHelpers:
    def test_subset_is_seeded_and_ordered(self):
        clips = shuffled_clips(count=10)
        cfg = TrainConfig(train_fraction=0.3, seed=4)

        first = select_training_clips(clips, cfg)
        second = select_training_clips(clips, cfg)

        assert len(first) == 3
        assert first == second
        positions = [clips.index(c) for c in first]
        assert positions == sorted(positions)

    def test_optimizer_choice(self):
        scorer = build_scorer(TrainConfig())
        assert isinstance(build_optimizer(scorer.parameters(), "sgd", 0.1, TrainConfig()), torch.optim.SGD)
        assert isinstance(build_optimizer(scorer.parameters(), "adam", 0.1, TrainConfig()), torch.optim.Adam)

    def test_scorer_initialization_follows_seed(self):
        a = build_scorer(TrainConfig(seed=1))
        b = build_scorer(TrainConfig(seed=1))
        c = build_scorer(TrainConfig(seed=2))
        assert torch.equal(a.fc1.weight, b.fc1.weight)
        assert not torch.equal(a.fc1.weight, c.fc1.weight)


@pytest.mark.unit
class TestAssociationAccuracy:
    def test_distance_scorer_links_every_object(self, distance_scorer):
        clip = moving_clip(num_objects=3, num_frames=5, spacing=200.0)
        shuffled = permuted_clip(clip, [[0, 1, 2], [2, 0, 1], [1, 2, 0], [0, 2, 1], [2, 1, 0]])

        assert association_accuracy(distance_scorer, [shuffled], identities_of(3, 5)) == 1.0

    def test_no_labels_raises(self, distance_scorer):
        with pytest.raises(KalmatchError, match="no labeled"):
            association_accuracy(distance_scorer, [moving_clip()], {})


@pytest.mark.unit
class TestTrainAppearance:
    def test_aligned_embeddings_are_already_optimal(self, distance_scorer):
        clip = moving_clip(num_objects=2, num_frames=5, spacing=200.0)
        head = AppearanceHead(one_hot_provider(2, 5), out_dim=2, temperature=0.1)
        with torch.no_grad():
            head.proj.weight.copy_(torch.eye(2, dtype=DTYPE))
        before = parameters_of(head)
        cfg = TrainConfig(clip_length=5)

        result = train_appearance([clip], distance_scorer, head, cfg)

        assert result.losses[0].loss < 1e-3
        for a, b in zip(before, head.parameters(), strict=True):
            assert float((a - b).abs().max()) < 1e-3

    def test_distinct_identities_separate_after_fine_tuning(self, distance_scorer, rng):
        num_objects, num_frames = 3, 5
        identity_vectors = torch.randn(num_objects, 8, generator=rng, dtype=DTYPE)
        provider = InMemoryEmbeddingProvider(
            {
                crop_id_for(f, k): identity_vectors[k].tolist()
                for f in range(1, num_frames + 1)
                for k in range(num_objects)
            }
        )
        clip = moving_clip(num_objects=num_objects, num_frames=num_frames, spacing=200.0)
        cfg = TrainConfig(appearance_learning_rate=0.05, appearance_epochs=20, clip_length=num_frames, seed=3)
        head = build_appearance_head(provider, cfg)

        train_appearance([clip], distance_scorer, head, cfg)

        with torch.no_grad():
            embedded = head.embed([crop_id_for(num_frames, k) for k in range(num_objects)])
            first = head.embed([crop_id_for(1, k) for k in range(num_objects)])
        cosines = embedded @ first.T
        for i in range(num_objects):
            for j in range(num_objects):
                if i != j:
                    assert float(cosines[i, i]) > float(cosines[i, j])

    def test_kl_falls_tenfold_and_identities_separate(self, distance_scorer):
        # Given: ten clips of a lanes scene whose crops carry noisy identity vectors
        scene = generate_scene(SceneConfigFactory(num_objects=5, num_frames=100, center_noise=1.0, seed=7))
        clips = preprocess_clips(scene_detections(scene), T=10)
        cfg = TrainConfig(appearance_learning_rate=1e-2, appearance_epochs=20, seed=3)
        head = build_appearance_head(InMemoryEmbeddingProvider(scene.embeddings), cfg)
        before = mean_kl(distance_scorer, head, clips)

        # When
        train_appearance(clips, distance_scorer, head, cfg)

        # Then
        assert len(clips) == 10
        assert mean_kl(distance_scorer, head, clips) < 0.1 * before

        crops = sorted(scene.crop_identity)
        labels = torch.tensor([scene.crop_identity[c] for c in crops])
        with torch.no_grad():
            embedded = head.embed(crops)
        cosines = embedded @ embedded.T
        same = labels[:, None] == labels[None, :]
        off_diagonal = ~torch.eye(len(crops), dtype=torch.bool)
        correct = float(cosines[same & off_diagonal].mean())
        wrong = float(cosines[~same].mean())
        assert correct - wrong > 0.1

    def test_scorer_is_left_untouched(self, distance_scorer):
        clip = moving_clip(num_objects=2, num_frames=4, spacing=200.0)
        before = parameters_of(distance_scorer)
        head = build_appearance_head(one_hot_provider(2, 4), TrainConfig(appearance_dim=3))

        train_appearance([clip], distance_scorer, head, TrainConfig(clip_length=4))

        for a, b in zip(before, distance_scorer.parameters(), strict=True):
            assert torch.equal(a, b)

    def test_missing_embedding_named(self, distance_scorer):
        clip = moving_clip(num_objects=2, num_frames=3)
        provider = InMemoryEmbeddingProvider({crop_id_for(1, 0): [1.0, 0.0]})
        head = build_appearance_head(provider, TrainConfig())

        with pytest.raises(MissingEmbeddingError) as exc_info:
            train_appearance([clip], distance_scorer, head, TrainConfig(clip_length=3))

        assert exc_info.value.crop_id == crop_id_for(1, 1)

    def test_clips_with_filled_ends_are_skipped(self, distance_scorer):
        clip = moving_clip(num_objects=2, num_frames=3)
        frames = list(clip.detections)
        last = frames[-1]
        frames[-1] = (last[0], Detection(frame=3, box=last[1].box, filled=True))
        filled = DetectionClip(clip.sequence_id, clip.frame_indices, tuple(frames))
        head = build_appearance_head(one_hot_provider(2, 3), TrainConfig())

        with pytest.raises(KalmatchError, match="no clips with detector crops"):
            train_appearance([filled], distance_scorer, head, TrainConfig(clip_length=3))

    def test_final_permutation_of_well_separated_clip(self, distance_scorer):
        clip = permuted_clip(moving_clip(num_objects=2, num_frames=3, spacing=200.0), [[0, 1], [1, 0], [1, 0]])
        P = final_permutation(distance_scorer, clip, 20)
        # frame-3 detection 0 is object 1, which sat in column 1 of frame 1
        assert float(P[0, 1]) > 0.99
        assert float(P[1, 0]) > 0.99
