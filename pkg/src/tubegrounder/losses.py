"""Weakly supervised training objective.

Supervision is video-sentence alignment only, so each video is a bag of
tube proposals: the video-level match score is the best proposal score.
Within a batch of aligned pairs, every mismatched combination acts as a
negative for a margin ranking loss. A diversity term (entropy of the
softmax over a video's proposal scores) discourages the matcher from
scoring all proposals alike.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Sequence

from .autodiff import Tape, TapeNode
from .errors import ContractError, DomainError

__all__ = [
    "LossBreakdown",
    "diversity_loss",
    "ranking_loss",
    "total_loss",
    "video_score",
]


@dataclass(frozen=True)
class LossBreakdown:
    """Scalar values of the objective's pieces for logging."""

    rank: float
    diversity: float
    total: float
    margin: float
    diversity_weight: float


def video_score(tape: Tape, proposal_scores: Sequence[TapeNode]) -> tuple[TapeNode, int]:
    """Bag score: the max proposal score and which proposal attained it.

    Gradient flows only into the winning proposal; ties pick the lowest
    index.
    """
    if not proposal_scores:
        raise ContractError("video score needs at least one proposal score")
    node, argmax = tape.max_scalars(list(proposal_scores))
    return node, argmax


def ranking_loss(
    tape: Tape,
    score_matrix: Sequence[Sequence[TapeNode]],
    margin: float = 1.0,
    normalize: bool = False,
) -> TapeNode:
    """All-pairs hinge over a batch's score matrix.

    ``score_matrix[i][j]`` is the video-level score of video i against
    sentence j; diagonal entries are the aligned pairs. For every i != j
    both mismatched scores are pushed below the aligned one by ``margin``:

        sum_i sum_{j != i} relu(margin - s_ii + s_ij)
                         + relu(margin - s_ii + s_ji)

    ``normalize`` divides by the number of hinge terms, 2 B (B - 1).
    """
    if margin < 0:
        raise DomainError(f"margin must be non-negative, got {margin}")
    b = len(score_matrix)
    if b == 0:
        raise ContractError("ranking loss needs a non-empty batch")
    for row in score_matrix:
        if len(row) != b:
            raise ContractError("score matrix must be square over the batch")
    if b == 1:
        return tape.leaf(0.0)
    terms: list[TapeNode] = []
    for i in range(b):
        aligned = score_matrix[i][i]
        for j in range(b):
            if j == i:
                continue
            terms.append(tape.relu(tape.shift(score_matrix[i][j] - aligned, margin)))
            terms.append(tape.relu(tape.shift(score_matrix[j][i] - aligned, margin)))
    loss = tape.sum_all(tape.concat_scalars(terms))
    if normalize:
        loss = tape.scale(loss, 1.0 / len(terms))
    return loss


def diversity_loss(tape: Tape, proposal_scores: Sequence[TapeNode]) -> TapeNode:
    """Entropy of the softmax over one video's proposal scores.

    Computed as -sum(p * log p) with log p taken from log-softmax directly,
    which stays finite even when some probabilities underflow to zero.
    """
    if not proposal_scores:
        raise ContractError("diversity loss needs at least one proposal score")
    row = tape.concat_scalars(list(proposal_scores))
    probs = tape.softmax_row(row)
    log_probs = tape.log_softmax_row(row)
    return tape.scale(tape.sum_all(probs * log_probs), -1.0)


def total_loss(
    tape: Tape,
    score_matrix: Sequence[Sequence[TapeNode]],
    aligned_proposal_scores: Sequence[Sequence[TapeNode]],
    margin: float = 1.0,
    diversity_weight: float = 1.0,
) -> tuple[TapeNode, LossBreakdown]:
    """Ranking term plus weighted mean diversity over the aligned pairs."""
    if len(aligned_proposal_scores) != len(score_matrix):
        raise ContractError("need one proposal score list per aligned pair")
    rank = ranking_loss(tape, score_matrix, margin=margin)
    divs = [diversity_loss(tape, scores) for scores in aligned_proposal_scores]
    mean_div = tape.scale(tape.sum_all(tape.concat_scalars(divs)), 1.0 / len(divs))
    total = rank + tape.scale(mean_div, diversity_weight)
    breakdown = LossBreakdown(
        rank=rank.item(),
        diversity=mean_div.item(),
        total=total.item(),
        margin=margin,
        diversity_weight=diversity_weight,
    )
    return total, breakdown
