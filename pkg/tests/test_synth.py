"""Synthetic scenario generator: separability, determinism, leak checks."""

from __future__ import annotations

import numpy as np
import pytest

from tubegrounder.errors import ContractError
from tubegrounder.evaluation import tube_overlap
from tubegrounder.linking import LinkConfig, extract_proposals
from tubegrounder.synth import SynthConfig, SynthScenario, generate, write_scenario


@pytest.fixture(scope="module")
def small_scenario():
    return generate(SynthConfig(videos=16, seed=5))


class TestConfigValidation:
    def test_defaults_are_valid(self):
        cfg = SynthConfig()
        assert cfg.videos == 96
        assert cfg.boxes_per_frame == 5
        assert cfg.concepts == 4
        assert cfg.noise == 0.05

    @pytest.mark.parametrize(
        "kwargs",
        [
            {"videos": 0},
            {"frames": 1},
            {"boxes_per_frame": 1},
            {"concepts": 1},
            {"concepts": 13},
            {"tokens_per_sentence": 0},
            {"feature_dim": 3},
            {"background_concepts": 0},
            {"concepts": 8, "vocab_size": 12, "feature_dim": 12},
            {"noise": -0.1},
            {"concepts": 4, "vocab_size": 4, "tokens_per_sentence": 2},
        ],
    )
    def test_invalid_configs_rejected(self, kwargs):
        with pytest.raises(ContractError):
            SynthConfig(**kwargs)

    def test_single_token_sentences_need_no_fillers(self):
        SynthConfig(concepts=4, vocab_size=4, tokens_per_sentence=1)


class TestScenarioStructure:
    def test_counts_and_labels(self, small_scenario):
        sc = small_scenario
        assert len(sc.records) == 16
        assert len(sc.target_concepts) == 16
        assert len(sc.target_lanes) == 16
        assert sc.target_concepts == [v % 4 for v in range(16)]
        assert all(0 <= lane < 5 for lane in sc.target_lanes)

    def test_concept_directions_orthonormal(self, small_scenario):
        d = small_scenario.concept_directions
        np.testing.assert_allclose(d @ d.T, np.eye(4), atol=1e-12)

    def test_background_directions_orthonormal_to_concepts(self, small_scenario):
        sc = small_scenario
        stacked = np.vstack([sc.concept_directions, sc.background_directions])
        n = stacked.shape[0]
        assert n == sc.config.concepts + sc.config.background_concepts
        np.testing.assert_allclose(stacked @ stacked.T, np.eye(n), atol=1e-12)

    def test_every_sentence_contains_its_concept_token(self, small_scenario):
        sc = small_scenario
        for record, concept in zip(sc.records, sc.target_concepts):
            assert sc.concept_tokens[concept] in record.sentence

    def test_embeddings_cover_vocab(self, small_scenario):
        sc = small_scenario
        for tok in sc.concept_tokens:
            assert sc.embeddings.lookup(tok) is not None
        assert len(sc.embeddings) == sc.config.vocab_size

    def test_ground_truth_follows_target_lane(self, small_scenario):
        sc = small_scenario
        for record, lane in zip(sc.records, sc.target_lanes):
            for frame_boxes in record.frames:
                gt_box = record.gt_tube.boxes_by_frame[frame_boxes.frame_index]
                lane_box = frame_boxes.boxes[lane]
                assert (gt_box.x1, gt_box.y1, gt_box.x2, gt_box.y2) == (
                    lane_box.x1,
                    lane_box.y1,
                    lane_box.x2,
                    lane_box.y2,
                )

    def test_confidences_within_documented_band(self, small_scenario):
        for record in small_scenario.records:
            for frame_boxes in record.frames:
                for box in frame_boxes.boxes:
                    assert 0.4 <= box.conf <= 0.6


class TestSeparability:
    def test_target_features_align_with_concept_direction(self, small_scenario):
        sc = small_scenario
        for record, concept, lane in zip(sc.records, sc.target_concepts, sc.target_lanes):
            feats = np.vstack(
                [record.features.get(t, lane) for t in range(record.num_frames)]
            )
            corr = feats.mean(axis=0) @ sc.concept_directions[concept]
            assert corr > 0.9

    def test_correlation_picker_is_perfect_at_zero_noise(self):
        # nearest-direction classifier: with no noise the target lane's mean
        # feature has the highest correlation with the sentence's concept
        cfg = SynthConfig(
            videos=16,
            boxes_per_frame=2,
            concepts=2,
            vocab_size=2,
            tokens_per_sentence=1,
            noise=0.0,
            seed=3,
        )
        sc = generate(cfg)
        hits = 0
        for record, concept, lane in zip(sc.records, sc.target_concepts, sc.target_lanes):
            direction = sc.concept_directions[concept]
            corrs = []
            for cand in range(cfg.boxes_per_frame):
                feats = np.vstack(
                    [record.features.get(t, cand) for t in range(record.num_frames)]
                )
                corrs.append(feats.mean(axis=0) @ direction)
            hits += int(np.argmax(corrs) == lane)
        assert hits == 16

    def test_distractor_lanes_never_carry_a_queried_concept(self, small_scenario):
        # learnability invariant: ranking supervision can only recover the
        # planted pairing if misaligned videos never contain the queried
        # direction, so every distractor lane must sit in the background
        # pool, orthogonal to all queried concept directions
        sc = small_scenario
        for record, lane in zip(sc.records, sc.target_lanes):
            for cand in range(sc.config.boxes_per_frame):
                if cand == lane:
                    continue
                feats = np.vstack(
                    [record.features.get(t, cand) for t in range(record.num_frames)]
                )
                mean_feat = feats.mean(axis=0)
                queried = np.abs(sc.concept_directions @ mean_feat)
                assert queried.max() < 0.2
                background = np.abs(sc.background_directions @ mean_feat)
                assert background.max() > 0.9

    def test_linker_recovers_every_ground_truth_tube(self, small_scenario):
        # smoothness guarantee: some proposal overlaps each gt tube >= 0.9
        sc = small_scenario
        for record in sc.records:
            tubes = extract_proposals(list(record.frames), LinkConfig(), 30)
            best = max(tube_overlap(t, record.gt_tube) for t in tubes)
            assert best >= 0.9

    def test_confidences_do_not_leak_labels(self):
        # two-sample mean difference on > 1000 boxes
        sc = generate(SynthConfig(videos=20, seed=7))
        target_confs, other_confs = [], []
        for record, lane in zip(sc.records, sc.target_lanes):
            for frame_boxes in record.frames:
                for i, box in enumerate(frame_boxes.boxes):
                    (target_confs if i == lane else other_confs).append(box.conf)
        assert len(target_confs) + len(other_confs) >= 1000
        assert abs(np.mean(target_confs) - np.mean(other_confs)) < 0.02


class TestDeterminism:
    def test_same_seed_same_scenario(self):
        a = generate(SynthConfig(videos=6, seed=9))
        b = generate(SynthConfig(videos=6, seed=9))
        assert a.target_lanes == b.target_lanes
        for ra, rb in zip(a.records, b.records):
            assert ra.sentence == rb.sentence
            assert ra.gt_tube == rb.gt_tube
            for t in range(ra.num_frames):
                for i in range(len(ra.frames[t].boxes)):
                    np.testing.assert_array_equal(ra.features.get(t, i), rb.features.get(t, i))

    def test_different_seed_differs(self):
        a = generate(SynthConfig(videos=6, seed=9))
        b = generate(SynthConfig(videos=6, seed=10))
        assert any(ra.sentence != rb.sentence for ra, rb in zip(a.records, b.records)) or any(
            la != lb for la, lb in zip(a.target_lanes, b.target_lanes)
        )

    def test_written_files_byte_identical(self, tmp_path):
        outs = []
        for name in ("a", "b"):
            sc = generate(SynthConfig(videos=6, seed=12))
            paths = write_scenario(sc, tmp_path / name, test_videos=2)
            outs.append(paths)
        for key in outs[0]:
            assert outs[0][key].read_bytes() == outs[1][key].read_bytes(), key


class TestWriteScenario:
    def test_split_sizes(self, tmp_path, small_scenario):
        paths = write_scenario(small_scenario, tmp_path, test_videos=4)
        train_lines = paths["train"].read_text(encoding="utf-8").strip().splitlines()
        test_lines = paths["test"].read_text(encoding="utf-8").strip().splitlines()
        assert len(train_lines) == 12
        assert len(test_lines) == 4

    def test_no_test_split_writes_single_file(self, tmp_path, small_scenario):
        paths = write_scenario(small_scenario, tmp_path)
        assert "test" not in paths
        assert paths["train"].exists()
        assert paths["embeddings"].exists()

    def test_oversized_test_split_rejected(self, tmp_path, small_scenario):
        with pytest.raises(ContractError):
            write_scenario(small_scenario, tmp_path, test_videos=16)

    def test_roundtrip_through_dataset_io(self, tmp_path, small_scenario):
        from tubegrounder.features import load_dataset, load_embeddings

        paths = write_scenario(small_scenario, tmp_path, test_videos=4)
        records = load_dataset(paths["train"])
        assert len(records) == 12
        assert records[0].video_id == small_scenario.records[0].video_id
        assert records[0].gt_tube == small_scenario.records[0].gt_tube
        table = load_embeddings(paths["embeddings"])
        for tok in small_scenario.concept_tokens:
            np.testing.assert_array_equal(
                table.lookup(tok), small_scenario.embeddings.lookup(tok)
            )
