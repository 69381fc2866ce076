"""Grounding evaluation: tube overlap, accuracy at thresholds, reference rows.

A prediction for a video is one chosen tube proposal. Its quality is the
mean per-frame IoU against the ground-truth tube over the annotated frames
(unannotated frames are skipped). Reports include two reference rows: a
random-choice baseline (exact expectation, with a Monte-Carlo estimate as a
sanity check) and the proposal upper bound (an oracle picking the best
proposal per video), which caps what any matcher can score.
"""

from __future__ import annotations

import json
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass
from pathlib import Path
from typing import Mapping, Sequence

import numpy as np

from .boxes import GroundTruthTube, iou
from .errors import ContractError, DomainError
from .features import SentenceMatrix
from .interactor import InteractorParams, MatchResult, match_pair
from .linking import Tube

__all__ = [
    "EvalItem",
    "EvalReport",
    "GroundingResult",
    "accuracy_at",
    "attention_dump",
    "evaluate",
    "ground",
    "random_baseline",
    "score_distribution",
    "tube_overlap",
    "upper_bound",
]

DEFAULT_ETAS = (0.4, 0.5, 0.6)


def tube_overlap(pred: Tube, gt: GroundTruthTube) -> float:
    """Mean per-frame IoU over the ground truth's annotated frames."""
    n_frames = len(pred.boxes)
    for frame in gt.frames:
        if not 0 <= frame < n_frames:
            raise ContractError(
                f"annotated frame {frame} outside predicted tube range 0..{n_frames - 1}"
            )
    values = [iou(pred.boxes[frame], box) for frame, box in gt.boxes_by_frame.items()]
    return float(np.mean(values))


def accuracy_at(overlaps: Sequence[float], eta: float) -> float:
    """Fraction of overlaps strictly greater than ``eta``."""
    if len(overlaps) == 0:
        raise ContractError("accuracy needs at least one overlap value")
    arr = np.asarray(overlaps, dtype=np.float64)
    if arr.min() < 0 or arr.max() > 1:
        raise DomainError("overlaps must lie in [0, 1]")
    if not 0 <= eta <= 1:
        raise DomainError(f"threshold must lie in [0, 1], got {eta}")
    return float(np.mean(arr > eta))


def upper_bound(
    overlaps_per_video: Sequence[Sequence[float]], etas: Sequence[float]
) -> dict[float, float]:
    """Oracle row: per video take the best proposal overlap, then threshold."""
    for i, ovs in enumerate(overlaps_per_video):
        if len(ovs) == 0:
            raise ContractError(f"video {i} has no proposals")
    best = [max(ovs) for ovs in overlaps_per_video]
    return {eta: accuracy_at(best, eta) for eta in etas}


def random_baseline(
    overlaps_per_video: Sequence[Sequence[float]],
    etas: Sequence[float],
    trials: int = 1000,
    seed: int = 0,
) -> tuple[dict[float, float], dict[float, float]]:
    """Uniform-choice baseline: exact expectation and a Monte-Carlo estimate.

    The exact row is the reported number; per video it is the fraction of
    proposals passing the threshold, averaged over videos.
    """
    if trials < 1:
        raise ContractError(f"trials must be positive, got {trials}")
    for i, ovs in enumerate(overlaps_per_video):
        if len(ovs) == 0:
            raise ContractError(f"video {i} has no proposals")
    exact = {
        eta: float(np.mean([np.mean(np.asarray(ovs) > eta) for ovs in overlaps_per_video]))
        for eta in etas
    }
    rng = np.random.default_rng(seed)
    picks = [rng.integers(0, len(ovs), size=trials) for ovs in overlaps_per_video]
    mc = {}
    for eta in etas:
        per_trial = np.mean(
            [(np.asarray(ovs)[p] > eta) for ovs, p in zip(overlaps_per_video, picks)], axis=0
        )
        mc[eta] = float(np.mean(per_trial))
    return exact, mc


@dataclass
class EvalItem:
    """One video ready for grounding: its proposals and query sentence."""

    video_id: str
    tubes: list[Tube]
    proposal_features: list[np.ndarray]
    sentence: SentenceMatrix
    gt_tube: GroundTruthTube | None = None

    def __post_init__(self) -> None:
        if not self.tubes:
            raise ContractError(f"video {self.video_id!r} has no tube proposals")
        if len(self.tubes) != len(self.proposal_features):
            raise ContractError(
                f"video {self.video_id!r}: {len(self.tubes)} tubes but "
                f"{len(self.proposal_features)} feature matrices"
            )


@dataclass(frozen=True)
class GroundingResult:
    index: int
    tube: Tube
    scores: np.ndarray
    match: MatchResult


def ground(params: InteractorParams, item: EvalItem) -> GroundingResult:
    """Pick the argmax-scoring proposal (lowest index on ties)."""
    results = [match_pair(params, feats, item.sentence) for feats in item.proposal_features]
    scores = np.array([r.score for r in results])
    index = int(np.argmax(scores))
    return GroundingResult(
        index=index, tube=item.tubes[index], scores=scores, match=results[index]
    )


@dataclass(frozen=True)
class EvalReport:
    etas: tuple[float, ...]
    method: dict[float, float]
    upper: dict[float, float]
    random_exact: dict[float, float]
    random_mc: dict[float, float]
    trials: int
    per_video: list[dict]

    def __post_init__(self) -> None:
        for eta in self.etas:
            if self.upper[eta] + 1e-12 < self.method[eta]:
                raise ContractError(
                    f"upper bound {self.upper[eta]} below method accuracy "
                    f"{self.method[eta]} at threshold {eta}"
                )

    @staticmethod
    def _row(values: Mapping[float, float], etas: Sequence[float]) -> dict[str, float]:
        row = {repr(eta): values[eta] for eta in etas}
        row["average"] = float(np.mean([values[eta] for eta in etas]))
        return row

    def to_dict(self) -> dict:
        return {
            "etas": list(self.etas),
            "trials": self.trials,
            "rows": {
                "method": self._row(self.method, self.etas),
                "upper_bound": self._row(self.upper, self.etas),
                "random_exact": self._row(self.random_exact, self.etas),
                "random_monte_carlo": self._row(self.random_mc, self.etas),
            },
            "per_video": self.per_video,
        }

    def save_json(self, path: str | Path) -> None:
        Path(path).write_text(json.dumps(self.to_dict(), indent=2), encoding="utf-8")

    def save_csv(self, path: str | Path) -> None:
        lines = ["row," + ",".join(repr(eta) for eta in self.etas) + ",average"]
        for name, values in (
            ("method", self.method),
            ("upper_bound", self.upper),
            ("random_exact", self.random_exact),
            ("random_monte_carlo", self.random_mc),
        ):
            row = self._row(values, self.etas)
            lines.append(
                f"{name},"
                + ",".join(repr(row[repr(eta)]) for eta in self.etas)
                + f",{row['average']!r}"
            )
        Path(path).write_text("\n".join(lines) + "\n", encoding="utf-8")


def evaluate(
    params: InteractorParams,
    items: Sequence[EvalItem],
    etas: Sequence[float] = DEFAULT_ETAS,
    trials: int = 1000,
    seed: int = 0,
    threads: int = 1,
) -> EvalReport:
    """Ground every item and assemble the report with reference rows.

    The upper-bound dominance invariant (oracle row >= method row at every
    threshold) is asserted on every run via the report constructor.
    """
    if not items:
        raise ContractError("evaluation needs at least one video")
    for item in items:
        if item.gt_tube is None:
            raise ContractError(f"video {item.video_id!r} has no ground-truth tube")
    if threads < 1:
        raise ContractError(f"threads must be positive, got {threads}")

    def run(item: EvalItem) -> GroundingResult:
        return ground(params, item)

    if threads == 1:
        results = [run(item) for item in items]
    else:
        with ThreadPoolExecutor(max_workers=threads) as pool:
            results = list(pool.map(run, items))

    overlaps_per_video = [
        [tube_overlap(tube, item.gt_tube) for tube in item.tubes] for item in items
    ]
    chosen = [ovs[r.index] for ovs, r in zip(overlaps_per_video, results)]
    method = {eta: accuracy_at(chosen, eta) for eta in etas}
    upper = upper_bound(overlaps_per_video, etas)
    random_exact, random_mc = random_baseline(overlaps_per_video, etas, trials, seed)
    per_video = [
        {
            "video_id": item.video_id,
            "chosen_index": r.index,
            "overlap": ovs[r.index],
            "best_index": int(np.argmax(ovs)),
            "best_overlap": float(max(ovs)),
            "scores": [float(s) for s in r.scores],
            "proposal_overlaps": [float(v) for v in ovs],
        }
        for item, r, ovs in zip(items, results, overlaps_per_video)
    ]
    return EvalReport(
        etas=tuple(etas),
        method=method,
        upper=upper,
        random_exact=random_exact,
        random_mc=random_mc,
        trials=trials,
        per_video=per_video,
    )


def attention_dump(result: MatchResult, tokens: Sequence[str]) -> dict[str, list[dict]]:
    """Per-segment token weights as JSON-ready nested lists."""
    if result.attention.shape[1] != len(tokens):
        raise ContractError(
            f"attention has {result.attention.shape[1]} columns but {len(tokens)} tokens"
        )
    return {
        str(i): [
            {"token": tok, "weight": float(w)} for tok, w in zip(tokens, result.attention[i])
        ]
        for i in range(result.attention.shape[0])
    }


def score_distribution(
    scores_per_video: Sequence[np.ndarray],
    overlaps_per_video: Sequence[Sequence[float]],
) -> list[dict]:
    """Group proposals by overlap decile and average their softmax scores.

    Scores are softmax-normalized within each video so the values are
    comparable across videos. Deciles partition [0, 1]; overlap 1.0 falls in
    the top decile. Rows with no proposals report a null mean.
    """
    if len(scores_per_video) != len(overlaps_per_video):
        raise ContractError("need one overlap list per score vector")
    sums = np.zeros(10)
    counts = np.zeros(10, dtype=int)
    for scores, overlaps in zip(scores_per_video, overlaps_per_video):
        scores = np.asarray(scores, dtype=np.float64)
        if scores.shape[0] != len(overlaps):
            raise ContractError("scores and overlaps disagree on proposal count")
        shifted = scores - scores.max()
        probs = np.exp(shifted) / np.exp(shifted).sum()
        for p, ov in zip(probs, overlaps):
            decile = min(int(ov * 10), 9)
            sums[decile] += p
            counts[decile] += 1
    rows = []
    for d in range(10):
        mean = float(sums[d] / counts[d]) if counts[d] else None
        rows.append(
            {
                "decile": d,
                "low": d / 10,
                "high": (d + 1) / 10,
                "count": int(counts[d]),
                "mean_score": mean,
            }
        )
    return rows
