"""Feature bank: stores, pooling, embeddings, and file round-trips."""

from __future__ import annotations

import numpy as np
import pytest

from tubegrounder.boxes import Box2D, GroundTruthTube
from tubegrounder.errors import ContractError, FeatureLookupError, ParseError, ValidationError
from tubegrounder.features import (
    EmbeddingTable,
    FeatureStore,
    SentenceMatrix,
    VideoRecord,
    embed_sentence,
    load_dataset,
    load_embeddings,
    load_proposals,
    pool_segments,
    save_dataset,
    save_embeddings,
    save_proposals,
)
from tubegrounder.linking import FrameBoxes, Tube


def simple_tube(n_frames: int) -> tuple[Tube, FeatureStore]:
    """Tube whose frame t carries the feature vector [t, 2t]."""
    store = FeatureStore()
    boxes = []
    for t in range(n_frames):
        boxes.append(Box2D(0.0, 0.0, 10.0, 10.0, 0.5))
        store.put(t, 0, [float(t), 2.0 * t])
    tube = Tube(boxes=tuple(boxes), box_indices=(0,) * n_frames, energy=1.2)
    return tube, store


class TestFeatureStore:
    def test_roundtrip(self):
        store = FeatureStore()
        store.put(0, 3, [1.0, 2.0])
        np.testing.assert_array_equal(store.get(0, 3), [1.0, 2.0])

    def test_missing_key_names_frame_and_box(self):
        store = FeatureStore()
        with pytest.raises(FeatureLookupError, match="frame 4.*box 2"):
            store.get(4, 2)

    def test_dim_mismatch_rejected(self):
        store = FeatureStore()
        store.put(0, 0, [1.0, 2.0])
        with pytest.raises(ValidationError):
            store.put(0, 1, [1.0, 2.0, 3.0])


class TestPoolSegments:
    def test_even_partition(self):
        tube, store = simple_tube(4)
        out = pool_segments(tube, store, segments=2)
        np.testing.assert_allclose(out, [[0.5, 1.0], [2.5, 5.0]])

    def test_uneven_partition_floor_boundaries(self):
        # T=5, n=2: segments cover frames [0,2) and [2,5).
        tube, store = simple_tube(5)
        out = pool_segments(tube, store, segments=2)
        np.testing.assert_allclose(out, [[0.5, 1.0], [3.0, 6.0]])

    def test_segments_equal_frames_is_identity(self):
        tube, store = simple_tube(3)
        out = pool_segments(tube, store, segments=3)
        np.testing.assert_allclose(out, [[0.0, 0.0], [1.0, 2.0], [2.0, 4.0]])

    def test_more_segments_than_frames_repeats_nearest(self):
        # T=2, n=4: empty chunks fall back to the single nearest frame.
        tube, store = simple_tube(2)
        out = pool_segments(tube, store, segments=4)
        np.testing.assert_allclose(out, [[0.0, 0.0], [0.0, 0.0], [1.0, 2.0], [1.0, 2.0]])

    def test_output_shape_always_segments_by_dim(self):
        for t, n in [(2, 20), (7, 3), (20, 20), (3, 8)]:
            tube, store = simple_tube(t)
            assert pool_segments(tube, store, segments=n).shape == (n, 2)

    def test_zero_segments_rejected(self):
        tube, store = simple_tube(3)
        with pytest.raises(ContractError):
            pool_segments(tube, store, segments=0)

    def test_mean_over_covered_frames_matches_manual_oracle(self):
        rng = np.random.default_rng(0)
        n_frames, segments = 11, 4
        store = FeatureStore()
        feats = rng.normal(size=(n_frames, 3))
        boxes = []
        for t in range(n_frames):
            boxes.append(Box2D(0.0, 0.0, 1.0, 1.0, 0.5))
            store.put(t, 0, feats[t])
        tube = Tube(boxes=tuple(boxes), box_indices=(0,) * n_frames, energy=0.0)
        out = pool_segments(tube, store, segments=segments)
        for s in range(segments):
            lo = s * n_frames // segments
            hi = (s + 1) * n_frames // segments
            np.testing.assert_allclose(out[s], feats[lo:hi].mean(axis=0))


class TestEmbeddings:
    def test_case_insensitive_lookup(self):
        table = EmbeddingTable.from_pairs([("Dog", [1.0, 0.0])])
        np.testing.assert_array_equal(table.lookup("dog"), [1.0, 0.0])
        assert "DOG" in table

    def test_duplicate_token_rejected(self):
        with pytest.raises(ValidationError):
            EmbeddingTable.from_pairs([("dog", [1.0]), ("Dog", [2.0])])

    def test_embed_sentence_drops_oov(self):
        table = EmbeddingTable.from_pairs([("dog", [1.0, 0.0]), ("runs", [0.0, 1.0])])
        sm = embed_sentence(["the", "dog", "runs"], table)
        assert sm.tokens == ("dog", "runs")
        assert sm.matrix.shape == (2, 2)

    def test_embed_sentence_all_oov_rejected(self):
        table = EmbeddingTable.from_pairs([("dog", [1.0])])
        with pytest.raises(ContractError, match="out of vocabulary"):
            embed_sentence(["cat", "sat"], table)

    def test_embed_sentence_empty_rejected(self):
        table = EmbeddingTable.from_pairs([("dog", [1.0])])
        with pytest.raises(ContractError):
            embed_sentence([], table)

    def test_file_roundtrip_is_bit_exact(self, tmp_path):
        rng = np.random.default_rng(1)
        table = EmbeddingTable.from_pairs(
            [(f"tok{i}", rng.normal(size=5)) for i in range(4)]
        )
        path = tmp_path / "emb.txt"
        save_embeddings(table, path)
        loaded = load_embeddings(path)
        for tok in table.tokens():
            np.testing.assert_array_equal(loaded.lookup(tok), table.lookup(tok))

    def test_parse_error_reports_line_number(self, tmp_path):
        path = tmp_path / "emb.txt"
        path.write_text("dog 1.0 2.0\ncat 3.0\n", encoding="utf-8")
        with pytest.raises(ParseError, match="emb.txt:2"):
            load_embeddings(path)

    def test_bad_float_reports_line(self, tmp_path):
        path = tmp_path / "emb.txt"
        path.write_text("dog 1.0 oops\n", encoding="utf-8")
        with pytest.raises(ParseError, match=":1"):
            load_embeddings(path)

    def test_empty_file_rejected(self, tmp_path):
        path = tmp_path / "emb.txt"
        path.write_text("", encoding="utf-8")
        with pytest.raises(ParseError, match="no embeddings"):
            load_embeddings(path)


def small_record(video_id="vid0", with_gt=True) -> VideoRecord:
    store = FeatureStore()
    frames = []
    for t in range(3):
        boxes = (
            Box2D(0.0, 0.0, 10.0, 10.0, 0.4),
            Box2D(30.0, 0.0, 42.0, 12.0, 0.6),
        )
        frames.append(FrameBoxes(t, boxes))
        store.put(t, 0, [0.25, -1.5])
        store.put(t, 1, [1.125, 2.75])
    gt = None
    if with_gt:
        gt = GroundTruthTube({t: frames[t].boxes[1] for t in range(3)})
    return VideoRecord(
        video_id=video_id,
        frames=frames,
        features=store,
        sentence=["a", "small", "dog"],
        gt_tube=gt,
    )


class TestDatasetIO:
    def test_roundtrip_preserves_everything(self, tmp_path):
        path = tmp_path / "data.jsonl"
        records = [small_record("a"), small_record("b", with_gt=False)]
        save_dataset(records, path)
        loaded = load_dataset(path)
        assert [r.video_id for r in loaded] == ["a", "b"]
        assert loaded[0].sentence == ["a", "small", "dog"]
        assert loaded[0].gt_tube == records[0].gt_tube
        assert loaded[1].gt_tube is None
        for t in range(3):
            for b in range(2):
                np.testing.assert_array_equal(
                    loaded[0].features.get(t, b), records[0].features.get(t, b)
                )
            assert loaded[0].frames[t].boxes == records[0].frames[t].boxes

    def test_double_roundtrip_is_byte_identical(self, tmp_path):
        p1, p2 = tmp_path / "d1.jsonl", tmp_path / "d2.jsonl"
        save_dataset([small_record()], p1)
        save_dataset(load_dataset(p1), p2)
        assert p1.read_bytes() == p2.read_bytes()

    def test_missing_field_reports_location(self, tmp_path):
        path = tmp_path / "bad.jsonl"
        path.write_text('{"id": "v", "frames": [{"boxes": [{"x1": 0}]}]}\n', encoding="utf-8")
        with pytest.raises(ParseError, match="record 0"):
            load_dataset(path)

    def test_invalid_json_line_reported(self, tmp_path):
        path = tmp_path / "bad.jsonl"
        path.write_text("{not json}\n", encoding="utf-8")
        with pytest.raises(ParseError, match="record 0"):
            load_dataset(path)

    def test_gt_frame_out_of_range_rejected(self, tmp_path):
        record = small_record()
        obj_path = tmp_path / "data.jsonl"
        save_dataset([record], obj_path)
        text = obj_path.read_text(encoding="utf-8").replace('"frame": 2', '"frame": 9')
        obj_path.write_text(text, encoding="utf-8")
        with pytest.raises(ParseError, match="frame"):
            load_dataset(obj_path)


class TestProposalIO:
    def test_roundtrip(self, tmp_path):
        boxes = tuple(Box2D(0.0, 0.0, 10.0, 10.0, 0.5) for _ in range(3))
        tube = Tube(boxes=boxes, box_indices=(0, 1, 0), energy=1.2)
        path = tmp_path / "props.jsonl"
        save_proposals({"vid": [tube]}, path)
        loaded = load_proposals(path)
        assert set(loaded) == {"vid"}
        got = loaded["vid"][0]
        assert got.box_indices == (0, 1, 0)
        assert got.energy == 1.2
        assert got.boxes == boxes

    def test_missing_key_rejected(self, tmp_path):
        path = tmp_path / "props.jsonl"
        path.write_text('{"id": "v"}\n', encoding="utf-8")
        with pytest.raises(ParseError, match="tubes"):
            load_proposals(path)


class TestSentenceMatrix:
    def test_row_token_mismatch_rejected(self):
        with pytest.raises(ValidationError):
            SentenceMatrix(np.zeros((2, 3)), ("one",))
