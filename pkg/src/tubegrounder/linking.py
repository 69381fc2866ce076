"""Link per-frame detections into spatio-temporal tube proposals.

A tube is one box per frame. Consecutive boxes are scored by the sum of
their confidences plus a weighted IoU term; a tube's energy is the mean of
those pairwise scores. The best tube maximizes the energy via dynamic
programming over frames (Viterbi), and proposals are extracted greedily:
take the best tube, delete its boxes, repeat.
"""

from __future__ import annotations

import warnings
from dataclasses import dataclass, field

from .boxes import Box2D, iou
from .errors import ContractError, ValidationError

__all__ = [
    "FrameBoxes",
    "LinkConfig",
    "Tube",
    "best_path",
    "extract_proposals",
    "link_score",
    "tube_energy",
]


@dataclass(frozen=True)
class LinkConfig:
    """Weights for the pairwise linking score."""

    iou_weight: float = 0.2

    def __post_init__(self) -> None:
        if self.iou_weight < 0:
            raise ValidationError(f"iou_weight must be >= 0, got {self.iou_weight}")


@dataclass(frozen=True)
class FrameBoxes:
    """Detections of a single frame."""

    frame_index: int
    boxes: tuple[Box2D, ...]

    def __post_init__(self) -> None:
        if self.frame_index < 0:
            raise ValidationError(f"frame_index must be >= 0, got {self.frame_index}")
        object.__setattr__(self, "boxes", tuple(self.boxes))


@dataclass(frozen=True)
class Tube:
    """One box per frame plus that path's energy.

    ``box_indices`` remembers which detection slot each box occupied in its
    frame, which is how pooled features are looked up later.
    """

    boxes: tuple[Box2D, ...]
    box_indices: tuple[int, ...]
    energy: float

    def __post_init__(self) -> None:
        object.__setattr__(self, "boxes", tuple(self.boxes))
        object.__setattr__(self, "box_indices", tuple(self.box_indices))
        if len(self.boxes) < 2:
            raise ContractError("a tube needs at least 2 frames")
        if len(self.boxes) != len(self.box_indices):
            raise ValidationError("boxes and box_indices lengths differ")

    def __len__(self) -> int:
        return len(self.boxes)

    def validate_energy(self, cfg: LinkConfig, tol: float = 1e-9) -> None:
        recomputed = tube_energy(self, cfg)
        if abs(recomputed - self.energy) > tol:
            raise ValidationError(
                f"stored energy {self.energy} differs from recomputed {recomputed}"
            )


def link_score(a: Box2D, b: Box2D, cfg: LinkConfig = LinkConfig()) -> float:
    """Pairwise affinity of two boxes in consecutive frames."""
    return a.conf + b.conf + cfg.iou_weight * iou(a, b)


def tube_energy(tube: Tube, cfg: LinkConfig = LinkConfig()) -> float:
    """Mean linking score over the tube's consecutive box pairs."""
    if len(tube.boxes) < 2:
        raise ContractError("energy undefined for single-frame video")
    total = sum(link_score(tube.boxes[t], tube.boxes[t + 1], cfg) for t in range(len(tube.boxes) - 1))
    return total / (len(tube.boxes) - 1)


def _check_frames(frames: list[FrameBoxes]) -> None:
    if len(frames) < 2:
        raise ContractError("energy undefined for single-frame video")
    for t, fb in enumerate(frames):
        if fb.frame_index != t:
            raise ValidationError(f"frame indices must be consecutive from 0; slot {t} holds {fb.frame_index}")
        if not fb.boxes:
            raise ContractError(f"frame {t} has no boxes")


def best_path(frames: list[FrameBoxes], cfg: LinkConfig = LinkConfig()) -> Tube:
    """Max-energy tube through ``frames`` via forward DP.

    Ties are broken deterministically toward the smallest box index in each
    frame, resolved while backtracking from the last frame.
    """
    _check_frames(frames)
    # score[j]: best cumulative link-score sum of any path ending at box j
    # of the current frame. choice[t][j]: argmin-index predecessor.
    prev = [0.0] * len(frames[0].boxes)
    choices: list[list[int]] = []
    for t in range(1, len(frames)):
        here = frames[t].boxes
        there = frames[t - 1].boxes
        scores = [0.0] * len(here)
        picks = [0] * len(here)
        for j, box in enumerate(here):
            best_val = -float("inf")
            best_i = 0
            for i, prev_box in enumerate(there):
                cand = prev[i] + link_score(prev_box, box, cfg)
                if cand > best_val:
                    best_val = cand
                    best_i = i
            scores[j] = best_val
            picks[j] = best_i
        choices.append(picks)
        prev = scores

    last = max(range(len(prev)), key=lambda j: (prev[j], -j))
    indices = [last]
    for picks in reversed(choices):
        indices.append(picks[indices[-1]])
    indices.reverse()

    boxes = tuple(frames[t].boxes[j] for t, j in enumerate(indices))
    energy = prev[last] / (len(frames) - 1)
    return Tube(boxes=boxes, box_indices=tuple(indices), energy=energy)


def extract_proposals(
    frames: list[FrameBoxes],
    cfg: LinkConfig = LinkConfig(),
    max_n: int | None = 30,
) -> list[Tube]:
    """Greedily extract disjoint tubes in order of decreasing energy.

    After each best path is found its boxes are deleted. Extraction stops
    once any frame runs out of boxes (leftover boxes in other frames are
    discarded with a warning) or after ``max_n`` tubes.

    The returned ``box_indices`` always refer to positions in the original
    ``frames``, not the shrinking working copies.
    """
    _check_frames(frames)
    # Work on index lists so original positions survive deletion.
    remaining: list[list[int]] = [list(range(len(fb.boxes))) for fb in frames]
    tubes: list[Tube] = []
    while max_n is None or len(tubes) < max_n:
        if any(not idxs for idxs in remaining):
            leftovers = sum(len(idxs) for idxs in remaining)
            if leftovers:
                warnings.warn(
                    f"discarding {leftovers} boxes: some frame ran out of detections",
                    stacklevel=2,
                )
            break
        view = [
            FrameBoxes(t, tuple(frames[t].boxes[i] for i in idxs))
            for t, idxs in enumerate(remaining)
        ]
        found = best_path(view, cfg)
        original = tuple(remaining[t][j] for t, j in enumerate(found.box_indices))
        tubes.append(Tube(boxes=found.boxes, box_indices=original, energy=found.energy))
        for t, j in enumerate(found.box_indices):
            del remaining[t][j]
    return tubes
