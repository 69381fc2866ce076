"""Seeded generator of separable grounding problems.

Each synthetic video contains ``boxes_per_frame`` spatially separated box
lanes drifting smoothly over time. One lane is the target: its box features
point along the unit direction of the video's concept (plus Gaussian
noise). Distractor lanes carry background concept directions drawn from a
separate orthonormal pool that no sentence ever names. The sentence mixes
the concept's token with filler words. All directions are mutually
orthogonal in both feature and embedding space, so separability is
controlled solely by the noise level.

Keeping queried concepts out of the distractor pool is what makes the
planted signal recoverable from video-level labels alone: if a queried
direction could also appear as a distractor in other videos, ranking
supervision would push the very same tube-sentence pairing up in aligned
videos and down in misaligned ones, and the cancellation would leave no
usable gradient toward the planted correspondence.

Detection confidences share a per-frame base value with only a tiny
per-box jitter. The jitter distribution is identical for target and
distractor boxes, so confidences cannot leak the label, and it is small
enough relative to the IoU bonus that the linker provably follows lanes
instead of hopping between them, which keeps every ground-truth tube
recoverable as a proposal.
"""

from __future__ import annotations

from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .boxes import Box2D, GroundTruthTube
from .errors import ContractError
from .features import EmbeddingTable, FeatureStore, VideoRecord, save_dataset, save_embeddings
from .linking import FrameBoxes

__all__ = ["SynthConfig", "SynthScenario", "generate", "write_scenario"]

# Geometry: lanes LANE_GAP apart drifting at most DRIFT per axis per frame
# can never overlap, and consecutive in-lane boxes keep a high IoU.
BOX_SIZE = 30.0
LANE_GAP = 100.0
DRIFT = 1.0
CONF_JITTER = 0.002


@dataclass(frozen=True)
class SynthConfig:
    videos: int = 96
    frames: int = 12
    boxes_per_frame: int = 5
    concepts: int = 4
    background_concepts: int = 8
    feature_dim: int = 16
    vocab_size: int = 12
    tokens_per_sentence: int = 6
    noise: float = 0.05
    seed: int = 0

    def __post_init__(self) -> None:
        if self.videos < 1:
            raise ContractError(f"videos must be positive, got {self.videos}")
        if self.frames < 2:
            raise ContractError(f"frames must be >= 2, got {self.frames}")
        if self.boxes_per_frame < 2:
            raise ContractError(
                f"boxes_per_frame must be >= 2 (need distractors), got {self.boxes_per_frame}"
            )
        if self.concepts < 2:
            raise ContractError(f"concepts must be >= 2, got {self.concepts}")
        if self.background_concepts < 1:
            raise ContractError(
                "background_concepts must be >= 1 so distractor lanes never "
                f"carry a queried concept, got {self.background_concepts}"
            )
        if self.concepts > self.vocab_size:
            raise ContractError(
                f"vocab_size {self.vocab_size} must cover {self.concepts} concepts"
            )
        if self.tokens_per_sentence < 1:
            raise ContractError("tokens_per_sentence must be >= 1")
        if self.tokens_per_sentence > 1 and self.vocab_size == self.concepts:
            raise ContractError("need at least one filler token when sentences exceed 1 token")
        total_directions = self.concepts + self.background_concepts
        if self.feature_dim < total_directions:
            raise ContractError(
                f"feature_dim {self.feature_dim} too small for {self.concepts} concept "
                f"plus {self.background_concepts} background orthogonal directions"
            )
        if self.noise < 0:
            raise ContractError(f"noise must be non-negative, got {self.noise}")


@dataclass
class SynthScenario:
    config: SynthConfig
    records: list[VideoRecord]
    embeddings: EmbeddingTable
    concept_directions: np.ndarray  # concepts x feature_dim, orthonormal rows
    background_directions: np.ndarray  # background_concepts x feature_dim rows
    concept_tokens: list[str]
    target_concepts: list[int]
    target_lanes: list[int]


def _orthonormal_rows(rng: np.random.Generator, rows: int, dim: int) -> np.ndarray:
    q, _ = np.linalg.qr(rng.standard_normal((dim, rows)))
    return q.T[:rows]


def generate(cfg: SynthConfig) -> SynthScenario:
    """Build the scenario; a fixed config (seed included) is reproducible."""
    global_rng = np.random.default_rng(cfg.seed)
    all_directions = _orthonormal_rows(
        global_rng, cfg.concepts + cfg.background_concepts, cfg.feature_dim
    )
    directions = all_directions[: cfg.concepts]
    background = all_directions[cfg.concepts :]
    embed_dirs = _orthonormal_rows(global_rng, cfg.concepts, cfg.feature_dim)
    concept_tokens = [f"entity{c}" for c in range(cfg.concepts)]
    filler_tokens = [f"word{k}" for k in range(cfg.vocab_size - cfg.concepts)]
    vectors = {tok: embed_dirs[c] for c, tok in enumerate(concept_tokens)}
    for tok in filler_tokens:
        vec = global_rng.standard_normal(cfg.feature_dim)
        vectors[tok] = vec / np.linalg.norm(vec)
    embeddings = EmbeddingTable.from_pairs(vectors.items())

    records: list[VideoRecord] = []
    target_concepts: list[int] = []
    target_lanes: list[int] = []
    for v in range(cfg.videos):
        rng = np.random.default_rng([cfg.seed, v])
        concept = v % cfg.concepts
        lane_of_target = int(rng.integers(cfg.boxes_per_frame))
        lane_dirs = []
        for lane in range(cfg.boxes_per_frame):
            if lane == lane_of_target:
                lane_dirs.append(directions[concept])
            else:
                lane_dirs.append(background[int(rng.integers(cfg.background_concepts))])

        # Smooth lane trajectories: bounded random drift from separated bases.
        positions = np.zeros((cfg.frames, cfg.boxes_per_frame, 2))
        positions[0, :, 0] = LANE_GAP * np.arange(cfg.boxes_per_frame)
        for t in range(1, cfg.frames):
            step = rng.uniform(-DRIFT, DRIFT, size=(cfg.boxes_per_frame, 2))
            positions[t] = positions[t - 1] + step

        store = FeatureStore()
        frames: list[FrameBoxes] = []
        gt_boxes: dict[int, Box2D] = {}
        for t in range(cfg.frames):
            base_conf = rng.uniform(0.4 + 2 * CONF_JITTER, 0.6 - 2 * CONF_JITTER)
            boxes = []
            for lane in range(cfg.boxes_per_frame):
                x, y = positions[t, lane]
                conf = base_conf + rng.uniform(-CONF_JITTER, CONF_JITTER)
                box = Box2D(x, y, x + BOX_SIZE, y + BOX_SIZE, conf)
                boxes.append(box)
                feat = lane_dirs[lane] + cfg.noise * rng.standard_normal(cfg.feature_dim)
                store.put(t, lane, feat)
                if lane == lane_of_target:
                    gt_boxes[t] = box
            frames.append(FrameBoxes(t, tuple(boxes)))

        if filler_tokens:
            picks = rng.integers(len(filler_tokens), size=cfg.tokens_per_sentence)
            tokens = [filler_tokens[int(k)] for k in picks]
        else:
            # config validation guarantees single-token sentences here
            tokens = [concept_tokens[concept]]
        tokens[int(rng.integers(cfg.tokens_per_sentence))] = concept_tokens[concept]
        records.append(
            VideoRecord(
                video_id=f"synth{v:04d}",
                frames=frames,
                features=store,
                sentence=tokens,
                gt_tube=GroundTruthTube(gt_boxes),
            )
        )
        target_concepts.append(concept)
        target_lanes.append(lane_of_target)

    return SynthScenario(
        config=cfg,
        records=records,
        embeddings=embeddings,
        concept_directions=directions,
        background_directions=background,
        concept_tokens=concept_tokens,
        target_concepts=target_concepts,
        target_lanes=target_lanes,
    )


def write_scenario(
    scenario: SynthScenario, out_dir: str | Path, test_videos: int = 0
) -> dict[str, Path]:
    """Write train/test dataset files plus the embedding table.

    The last ``test_videos`` records form the held-out split. Returns the
    written paths keyed by role.
    """
    if not 0 <= test_videos < len(scenario.records):
        raise ContractError(
            f"test_videos must leave at least one training video, got {test_videos} "
            f"of {len(scenario.records)}"
        )
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    paths: dict[str, Path] = {}
    split = len(scenario.records) - test_videos
    paths["train"] = out / "train.jsonl"
    save_dataset(scenario.records[:split], paths["train"])
    if test_videos:
        paths["test"] = out / "test.jsonl"
        save_dataset(scenario.records[split:], paths["test"])
    paths["embeddings"] = out / "embeddings.txt"
    save_embeddings(scenario.embeddings, paths["embeddings"])
    return paths
