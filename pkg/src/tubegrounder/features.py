"""Per-box visual features, token embeddings, and the on-disk formats.

Two text formats are owned here:

* embeddings: UTF-8, one ``token v1 v2 ... vd`` row per line (word2vec text
  style, space separated);
* datasets: JSON lines, one video per line::

    {"id": str,
     "frames": [{"boxes": [{"x1": f, "y1": f, "x2": f, "y2": f,
                            "conf": f, "feat": [f, ...]}]}],
     "sentence": [token, ...],
     "gt_tube": [{"frame": i, "x1": f, "y1": f, "x2": f, "y2": f}, ...]}

``gt_tube`` is optional (training-only records omit it). Floats are written
with ``repr`` precision, so load -> save -> load round-trips bit-exactly.

Tube features are pooled into a fixed number of temporal segments by
averaging the frames that fall in each segment.
"""

from __future__ import annotations

import json
from dataclasses import dataclass
from pathlib import Path
from typing import Iterable, Sequence

import numpy as np

from .boxes import Box2D, GroundTruthTube
from .errors import ContractError, FeatureLookupError, ParseError, ValidationError
from .linking import FrameBoxes, Tube

__all__ = [
    "EmbeddingTable",
    "FeatureStore",
    "SentenceMatrix",
    "VideoRecord",
    "embed_sentence",
    "load_dataset",
    "load_embeddings",
    "load_proposals",
    "pool_segments",
    "save_dataset",
    "save_embeddings",
    "save_proposals",
]

DEFAULT_SEGMENTS = 20


class FeatureStore:
    """Visual feature vectors keyed by (frame index, box index)."""

    def __init__(self) -> None:
        self._vectors: dict[tuple[int, int], np.ndarray] = {}
        self.dim: int | None = None

    def put(self, frame: int, box: int, vector) -> None:
        vec = np.asarray(vector, dtype=np.float64).reshape(-1)
        if self.dim is None:
            self.dim = vec.size
        elif vec.size != self.dim:
            raise ValidationError(
                f"feature at frame {frame}, box {box} has dim {vec.size}, expected {self.dim}"
            )
        self._vectors[(frame, box)] = vec

    def get(self, frame: int, box: int) -> np.ndarray:
        try:
            return self._vectors[(frame, box)]
        except KeyError:
            raise FeatureLookupError(f"no feature stored for frame {frame}, box {box}") from None

    def __len__(self) -> int:
        return len(self._vectors)

    def __contains__(self, key: tuple[int, int]) -> bool:
        return key in self._vectors


@dataclass(frozen=True)
class SentenceMatrix:
    """Embedded sentence: one row per in-vocabulary token, original order."""

    matrix: np.ndarray
    tokens: tuple[str, ...]

    def __post_init__(self) -> None:
        if self.matrix.shape[0] != len(self.tokens) or len(self.tokens) < 1:
            raise ValidationError("sentence matrix rows must match kept tokens (>= 1)")


@dataclass
class VideoRecord:
    """One dataset entry: detections, per-box features, sentence, optional truth."""

    video_id: str
    frames: list[FrameBoxes]
    features: FeatureStore
    sentence: list[str]
    gt_tube: GroundTruthTube | None = None

    @property
    def num_frames(self) -> int:
        return len(self.frames)


class EmbeddingTable:
    """Token -> vector lookup with case-folded keys and a uniform dimension."""

    def __init__(self, vectors: dict[str, np.ndarray], dim: int):
        self._vectors = vectors
        self.dim = dim

    @classmethod
    def from_pairs(cls, pairs: Iterable[tuple[str, Sequence[float]]]) -> "EmbeddingTable":
        vectors: dict[str, np.ndarray] = {}
        dim: int | None = None
        for token, values in pairs:
            key = token.lower()
            vec = np.asarray(values, dtype=np.float64).reshape(-1)
            if dim is None:
                dim = vec.size
            elif vec.size != dim:
                raise ValidationError(f"embedding for {token!r} has dim {vec.size}, expected {dim}")
            if key in vectors:
                raise ValidationError(f"duplicate token {token!r} (case-insensitive)")
            vectors[key] = vec
        if dim is None:
            raise ValidationError("no embeddings")
        return cls(vectors, dim)

    def __contains__(self, token: str) -> bool:
        return token.lower() in self._vectors

    def __len__(self) -> int:
        return len(self._vectors)

    def lookup(self, token: str) -> np.ndarray:
        key = token.lower()
        if key not in self._vectors:
            raise FeatureLookupError(f"token {token!r} not in embedding table")
        return self._vectors[key]

    def tokens(self) -> tuple[str, ...]:
        return tuple(self._vectors)


# --------------------------------------------------------------- operations


def pool_segments(tube: Tube, store: FeatureStore, segments: int = DEFAULT_SEGMENTS) -> np.ndarray:
    """Average tube box features into ``segments`` temporal chunks.

    Frame t of a T-frame tube belongs to segment floor(s*T/segments) ..;
    segment s averages frames [floor(s*T/segments), floor((s+1)*T/segments)).
    When T < segments some chunks are empty; those take the single nearest
    frame min(floor(s*T/segments), T-1) so the output is always
    ``segments`` x dim.
    """
    if segments < 1:
        raise ContractError(f"segment count must be >= 1, got {segments}")
    total = len(tube)
    rows = []
    for s in range(segments):
        lo = (s * total) // segments
        hi = ((s + 1) * total) // segments
        if hi <= lo:
            frame_ids = [min(lo, total - 1)]
        else:
            frame_ids = list(range(lo, hi))
        vectors = [store.get(t, tube.box_indices[t]) for t in frame_ids]
        rows.append(np.mean(vectors, axis=0))
    return np.vstack(rows)


def embed_sentence(tokens: Sequence[str], table: EmbeddingTable) -> SentenceMatrix:
    """Embed tokens, silently dropping out-of-vocabulary ones."""
    if not tokens:
        raise ContractError("token list is empty")
    kept = [(tok, table.lookup(tok)) for tok in tokens if tok in table]
    if not kept:
        raise ContractError(f"all tokens out of vocabulary: {list(tokens)!r}")
    matrix = np.vstack([vec for _, vec in kept])
    return SentenceMatrix(matrix=matrix, tokens=tuple(tok for tok, _ in kept))


# ----------------------------------------------------------------- file IO


def load_embeddings(path: str | Path) -> EmbeddingTable:
    path = Path(path)
    pairs: list[tuple[str, list[float]]] = []
    dim: int | None = None
    with path.open(encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, start=1):
            line = line.rstrip("\n")
            if not line.strip():
                continue
            parts = line.split(" ")
            if len(parts) < 2:
                raise ParseError(f"{path}:{lineno}: expected 'token v1 ... vd'")
            token = parts[0]
            try:
                values = [float(v) for v in parts[1:]]
            except ValueError as exc:
                raise ParseError(f"{path}:{lineno}: bad float ({exc})") from None
            if dim is None:
                dim = len(values)
            elif len(values) != dim:
                raise ParseError(
                    f"{path}:{lineno}: row has {len(values)} values, expected {dim}"
                )
            pairs.append((token, values))
    if not pairs:
        raise ParseError(f"{path}: no embeddings")
    try:
        return EmbeddingTable.from_pairs(pairs)
    except ValidationError as exc:
        raise ParseError(f"{path}: {exc}") from None


def save_embeddings(table: EmbeddingTable, path: str | Path) -> None:
    path = Path(path)
    with path.open("w", encoding="utf-8") as fh:
        for token in table.tokens():
            values = " ".join(repr(float(v)) for v in table.lookup(token))
            fh.write(f"{token} {values}\n")


def _parse_box(obj: dict, where: str) -> tuple[Box2D, list[float]]:
    for key in ("x1", "y1", "x2", "y2", "conf", "feat"):
        if key not in obj:
            raise ParseError(f"{where}: missing field '{key}'")
    try:
        box = Box2D(
            x1=float(obj["x1"]),
            y1=float(obj["y1"]),
            x2=float(obj["x2"]),
            y2=float(obj["y2"]),
            conf=float(obj["conf"]),
        )
    except ValidationError as exc:
        raise ParseError(f"{where}: {exc}") from None
    feat = obj["feat"]
    if not isinstance(feat, list) or not feat:
        raise ParseError(f"{where}.feat: must be a non-empty list of floats")
    return box, [float(v) for v in feat]


def _parse_record(obj: dict, index: int) -> VideoRecord:
    where = f"record {index}"
    if not isinstance(obj, dict):
        raise ParseError(f"{where}: expected a JSON object")
    for key in ("id", "frames", "sentence"):
        if key not in obj:
            raise ParseError(f"{where}: missing field '{key}'")
    video_id = obj["id"]
    if not isinstance(video_id, str) or not video_id:
        raise ParseError(f"{where}.id: must be a non-empty string")
    sentence = obj["sentence"]
    if not isinstance(sentence, list) or not sentence or not all(isinstance(t, str) for t in sentence):
        raise ParseError(f"{where}.sentence: must be a non-empty list of strings")
    if not isinstance(obj["frames"], list) or not obj["frames"]:
        raise ParseError(f"{where}.frames: must be a non-empty list")

    frames: list[FrameBoxes] = []
    store = FeatureStore()
    for t, frame_obj in enumerate(obj["frames"]):
        fwhere = f"{where}: frames[{t}]"
        if not isinstance(frame_obj, dict) or "boxes" not in frame_obj:
            raise ParseError(f"{fwhere}: expected an object with 'boxes'")
        if not isinstance(frame_obj["boxes"], list) or not frame_obj["boxes"]:
            raise ParseError(f"{fwhere}.boxes: must be a non-empty list")
        boxes = []
        for b, box_obj in enumerate(frame_obj["boxes"]):
            box, feat = _parse_box(box_obj, f"{fwhere}.boxes[{b}]")
            boxes.append(box)
            try:
                store.put(t, b, feat)
            except ValidationError as exc:
                raise ParseError(f"{fwhere}.boxes[{b}].feat: {exc}") from None
        frames.append(FrameBoxes(frame_index=t, boxes=tuple(boxes)))

    gt: GroundTruthTube | None = None
    if obj.get("gt_tube") is not None:
        entries = obj["gt_tube"]
        if not isinstance(entries, list) or not entries:
            raise ParseError(f"{where}.gt_tube: must be a non-empty list")
        by_frame: dict[int, Box2D] = {}
        for g, entry in enumerate(entries):
            gwhere = f"{where}.gt_tube[{g}]"
            for key in ("frame", "x1", "y1", "x2", "y2"):
                if key not in entry:
                    raise ParseError(f"{gwhere}: missing field '{key}'")
            frame = int(entry["frame"])
            if frame in by_frame:
                raise ParseError(f"{gwhere}: frame {frame} annotated twice")
            if not 0 <= frame < len(frames):
                raise ParseError(f"{gwhere}: frame {frame} outside video range 0..{len(frames) - 1}")
            try:
                by_frame[frame] = Box2D(
                    x1=float(entry["x1"]),
                    y1=float(entry["y1"]),
                    x2=float(entry["x2"]),
                    y2=float(entry["y2"]),
                    conf=0.0,
                )
            except ValidationError as exc:
                raise ParseError(f"{gwhere}: {exc}") from None
        gt = GroundTruthTube(by_frame)

    return VideoRecord(video_id=video_id, frames=frames, features=store, sentence=list(sentence), gt_tube=gt)


def load_dataset(path: str | Path) -> list[VideoRecord]:
    """Parse a JSON-lines dataset; all records must share one feature dim."""
    path = Path(path)
    records: list[VideoRecord] = []
    dim: int | None = None
    with path.open(encoding="utf-8") as fh:
        for index, line in enumerate(fh):
            if not line.strip():
                continue
            try:
                obj = json.loads(line)
            except json.JSONDecodeError as exc:
                raise ParseError(f"record {index}: invalid JSON ({exc})") from None
            record = _parse_record(obj, index)
            if dim is None:
                dim = record.features.dim
            elif record.features.dim != dim:
                raise ParseError(
                    f"record {index}: feature dim {record.features.dim} differs from {dim}"
                )
            records.append(record)
    if not records:
        raise ParseError(f"{path}: empty dataset")
    return records


def record_to_json(record: VideoRecord) -> dict:
    frames = []
    for t, fb in enumerate(record.frames):
        boxes = []
        for b, box in enumerate(fb.boxes):
            boxes.append(
                {
                    "x1": box.x1,
                    "y1": box.y1,
                    "x2": box.x2,
                    "y2": box.y2,
                    "conf": box.conf,
                    "feat": [float(v) for v in record.features.get(t, b)],
                }
            )
        frames.append({"boxes": boxes})
    obj: dict = {"id": record.video_id, "frames": frames, "sentence": list(record.sentence)}
    if record.gt_tube is not None:
        obj["gt_tube"] = [
            {"frame": frame, "x1": box.x1, "y1": box.y1, "x2": box.x2, "y2": box.y2}
            for frame, box in record.gt_tube.boxes_by_frame.items()
        ]
    return obj


def save_dataset(records: Iterable[VideoRecord], path: str | Path) -> None:
    path = Path(path)
    with path.open("w", encoding="utf-8") as fh:
        for record in records:
            fh.write(json.dumps(record_to_json(record)) + "\n")


# Tube proposals travel between the link, train and eval commands as JSON
# lines: {"id": str, "tubes": [{"energy": f, "box_indices": [i, ...],
# "boxes": [{"x1": f, "y1": f, "x2": f, "y2": f, "conf": f}, ...]}]}.


def save_proposals(proposals: dict[str, list[Tube]], path: str | Path) -> None:
    path = Path(path)
    with path.open("w", encoding="utf-8") as fh:
        for video_id, tubes in proposals.items():
            obj = {
                "id": video_id,
                "tubes": [
                    {
                        "energy": tube.energy,
                        "box_indices": list(tube.box_indices),
                        "boxes": [
                            {"x1": b.x1, "y1": b.y1, "x2": b.x2, "y2": b.y2, "conf": b.conf}
                            for b in tube.boxes
                        ],
                    }
                    for tube in tubes
                ],
            }
            fh.write(json.dumps(obj) + "\n")


def load_proposals(path: str | Path) -> dict[str, list[Tube]]:
    path = Path(path)
    proposals: dict[str, list[Tube]] = {}
    with path.open(encoding="utf-8") as fh:
        for index, line in enumerate(fh):
            if not line.strip():
                continue
            try:
                obj = json.loads(line)
            except json.JSONDecodeError as exc:
                raise ParseError(f"proposal record {index}: invalid JSON ({exc})") from None
            if "id" not in obj or "tubes" not in obj:
                raise ParseError(f"proposal record {index}: missing 'id' or 'tubes'")
            tubes = []
            for n, tube_obj in enumerate(obj["tubes"]):
                where = f"proposal record {index}: tubes[{n}]"
                try:
                    boxes = tuple(
                        Box2D(
                            x1=float(b["x1"]),
                            y1=float(b["y1"]),
                            x2=float(b["x2"]),
                            y2=float(b["y2"]),
                            conf=float(b["conf"]),
                        )
                        for b in tube_obj["boxes"]
                    )
                    tubes.append(
                        Tube(
                            boxes=boxes,
                            box_indices=tuple(int(i) for i in tube_obj["box_indices"]),
                            energy=float(tube_obj["energy"]),
                        )
                    )
                except (KeyError, TypeError) as exc:
                    raise ParseError(f"{where}: malformed tube ({exc})") from None
                except (ValidationError, ContractError) as exc:
                    raise ParseError(f"{where}: {exc}") from None
            proposals[obj["id"]] = tubes
    if not proposals:
        raise ParseError(f"{path}: empty proposals file")
    return proposals
