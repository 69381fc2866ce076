"""Glue between stored artifacts and in-memory training/eval inputs.

These helpers join a dataset's records with their precomputed tube
proposals and an embedding table, pooling per-tube segment features and
embedding sentences so the trainer and evaluator never touch files
themselves.
"""

from __future__ import annotations

from typing import Mapping, Sequence

import numpy as np

from .errors import ContractError
from .evaluation import EvalItem, tube_overlap
from .features import EmbeddingTable, VideoRecord, embed_sentence, pool_segments
from .linking import Tube
from .training import TrainingExample

__all__ = [
    "make_eval_items",
    "make_training_examples",
    "target_proposal_index",
    "tube_features",
]


def tube_features(
    record: VideoRecord, tubes: Sequence[Tube], segments: int
) -> list[np.ndarray]:
    return [pool_segments(tube, record.features, segments) for tube in tubes]


def target_proposal_index(record: VideoRecord, tubes: Sequence[Tube]) -> int:
    """Index of the proposal with the best ground-truth overlap (lowest
    index on ties)."""
    if record.gt_tube is None:
        raise ContractError(f"video {record.video_id!r} has no ground-truth tube")
    overlaps = [tube_overlap(tube, record.gt_tube) for tube in tubes]
    return int(np.argmax(overlaps))


def _tubes_for(record: VideoRecord, proposals: Mapping[str, list[Tube]]) -> list[Tube]:
    if record.video_id not in proposals:
        raise ContractError(f"no proposals for video {record.video_id!r}")
    tubes = proposals[record.video_id]
    if not tubes:
        raise ContractError(f"empty proposal list for video {record.video_id!r}")
    return tubes


def make_training_examples(
    records: Sequence[VideoRecord],
    proposals: Mapping[str, list[Tube]],
    table: EmbeddingTable,
    segments: int,
) -> list[TrainingExample]:
    """Pair every record with its proposals; targets are filled in whenever
    the record carries ground truth (used only for validation accuracy)."""
    examples = []
    for record in records:
        tubes = _tubes_for(record, proposals)
        target = target_proposal_index(record, tubes) if record.gt_tube is not None else None
        examples.append(
            TrainingExample(
                video_id=record.video_id,
                proposal_features=tube_features(record, tubes, segments),
                sentence=embed_sentence(record.sentence, table),
                target_index=target,
            )
        )
    return examples


def make_eval_items(
    records: Sequence[VideoRecord],
    proposals: Mapping[str, list[Tube]],
    table: EmbeddingTable,
    segments: int,
) -> list[EvalItem]:
    items = []
    for record in records:
        tubes = _tubes_for(record, proposals)
        items.append(
            EvalItem(
                video_id=record.video_id,
                tubes=list(tubes),
                proposal_features=tube_features(record, tubes, segments),
                sentence=embed_sentence(record.sentence, table),
                gt_tube=record.gt_tube,
            )
        )
    return items
