"""Axis-aligned boxes, intersection-over-union, and ground-truth annotations."""

from __future__ import annotations

from dataclasses import dataclass
from types import MappingProxyType
from typing import Mapping

from .errors import ValidationError

__all__ = ["Box2D", "GroundTruthTube", "iou"]


@dataclass(frozen=True)
class Box2D:
    """A detection box in pixel coordinates with a confidence in [0, 1]."""

    x1: float
    y1: float
    x2: float
    y2: float
    conf: float = 0.0

    def __post_init__(self) -> None:
        if not (self.x2 > self.x1 and self.y2 > self.y1):
            raise ValidationError(
                f"degenerate box: ({self.x1}, {self.y1}, {self.x2}, {self.y2})"
            )
        if not 0.0 <= self.conf <= 1.0:
            raise ValidationError(f"confidence {self.conf} outside [0, 1]")

    @property
    def area(self) -> float:
        return (self.x2 - self.x1) * (self.y2 - self.y1)


def iou(a: Box2D, b: Box2D) -> float:
    """Intersection area over union area; 0 when the boxes are disjoint."""
    ix = min(a.x2, b.x2) - max(a.x1, b.x1)
    iy = min(a.y2, b.y2) - max(a.y1, b.y1)
    if ix <= 0 or iy <= 0:
        return 0.0
    inter = ix * iy
    return inter / (a.area + b.area - inter)


class GroundTruthTube:
    """Reference boxes on a (possibly strict) subset of a video's frames."""

    def __init__(self, boxes_by_frame: Mapping[int, Box2D]):
        if not boxes_by_frame:
            raise ValidationError("ground-truth tube must annotate at least one frame")
        normalized: dict[int, Box2D] = {}
        for frame in sorted(boxes_by_frame):
            if frame < 0:
                raise ValidationError(f"annotated frame index {frame} is negative")
            box = boxes_by_frame[frame]
            # Annotations carry no detector confidence; drop it so equality
            # and round-trips depend on geometry alone.
            normalized[frame] = Box2D(box.x1, box.y1, box.x2, box.y2, conf=0.0)
        self._boxes = MappingProxyType(normalized)

    @property
    def boxes_by_frame(self) -> Mapping[int, Box2D]:
        return self._boxes

    @property
    def frames(self) -> tuple[int, ...]:
        return tuple(self._boxes)

    def __len__(self) -> int:
        return len(self._boxes)

    def __eq__(self, other: object) -> bool:
        if not isinstance(other, GroundTruthTube):
            return NotImplemented
        return dict(self._boxes) == dict(other._boxes)
