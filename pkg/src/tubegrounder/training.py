"""Training loop: SGD with classical momentum over video-sentence pairs.

Each batch builds one tape holding every pairwise match between its videos
and sentences, takes a single backward pass through the combined ranking
and diversity objective, and applies one optimizer step. Everything is
single threaded and seeded, so a fixed (seed, dataset, config) triple
reproduces checkpoints bit for bit.
"""

from __future__ import annotations

import json
import warnings
from dataclasses import dataclass, fields
from pathlib import Path
from typing import Mapping, Sequence

import numpy as np

from .autodiff import Tape, as_matrix
from .errors import ConfigError, ContractError, DomainError
from .features import SentenceMatrix
from .interactor import (
    EncodedPair,
    InteractorDims,
    InteractorParams,
    attend,
    encode_sequence,
    match,
    match_pair,
)
from .losses import total_loss, video_score

__all__ = [
    "EpochStats",
    "OptimizerState",
    "TrainConfig",
    "TrainResult",
    "TrainingExample",
    "grounding_accuracy",
    "make_batches",
    "score_proposals",
    "sgd_step",
    "train",
]


@dataclass(frozen=True)
class TrainConfig:
    batch_size: int = 16
    learning_rate: float = 0.001
    momentum: float = 0.9
    epochs: int = 30
    diversity_weight: float = 1.0
    margin: float = 1.0
    seed: int = 0
    proposals_per_video: int = 30
    hidden: int = 512
    attention: int | None = None
    segments: int = 20

    def __post_init__(self) -> None:
        for name in ("batch_size", "epochs", "proposals_per_video", "hidden", "segments"):
            if getattr(self, name) < 1:
                raise ConfigError(f"{name} must be positive, got {getattr(self, name)}")
        if self.learning_rate < 0:
            raise ConfigError(f"learning_rate must be non-negative, got {self.learning_rate}")
        if not 0 <= self.momentum < 1:
            raise ConfigError(f"momentum must lie in [0, 1), got {self.momentum}")
        if self.margin < 0:
            raise ConfigError(f"margin must be non-negative, got {self.margin}")
        if self.diversity_weight < 0:
            raise ConfigError(
                f"diversity_weight must be non-negative, got {self.diversity_weight}"
            )
        if self.attention is not None and self.attention < 1:
            raise ConfigError(f"attention must be positive, got {self.attention}")

    @classmethod
    def from_json(cls, path: str | Path, **overrides) -> "TrainConfig":
        obj = json.loads(Path(path).read_text(encoding="utf-8"))
        if not isinstance(obj, dict):
            raise ConfigError(f"{path}: config must be a JSON object")
        known = {f.name for f in fields(cls)}
        unknown = set(obj) - known
        if unknown:
            raise ConfigError(f"{path}: unknown config keys {sorted(unknown)}")
        obj.update({k: v for k, v in overrides.items() if v is not None})
        return cls(**obj)

    def to_json(self, path: str | Path) -> None:
        obj = {f.name: getattr(self, f.name) for f in fields(self)}
        Path(path).write_text(json.dumps(obj, indent=2), encoding="utf-8")


@dataclass
class TrainingExample:
    """One video-sentence pair ready for the matcher.

    ``proposal_features`` holds one pooled segment matrix per tube proposal
    (segments x feature dim). ``target_index`` marks the proposal with the
    best ground-truth overlap when known; it is used only for validation
    accuracy, never by the loss.
    """

    video_id: str
    proposal_features: list[np.ndarray]
    sentence: SentenceMatrix
    target_index: int | None = None

    def __post_init__(self) -> None:
        if not self.proposal_features:
            raise ContractError(f"video {self.video_id!r} has no proposals")
        mats = [as_matrix(m, f"{self.video_id} proposal features") for m in self.proposal_features]
        shapes = {m.shape for m in mats}
        if len(shapes) != 1:
            raise ContractError(
                f"video {self.video_id!r} has proposals with mixed shapes {sorted(shapes)}"
            )
        self.proposal_features = mats
        if self.target_index is not None and not 0 <= self.target_index < len(mats):
            raise ContractError(
                f"target index {self.target_index} out of range for {len(mats)} proposals"
            )


class OptimizerState:
    """Per-parameter velocity buffers, zero initialized."""

    def __init__(self, params: InteractorParams):
        self.velocity: dict[str, np.ndarray] = {
            name: np.zeros_like(arr) for name, arr in params.arrays.items()
        }


def make_batches(n_items: int, batch_size: int, seed: int, epoch: int) -> list[list[int]]:
    """Epoch-specific shuffled partition of item indices; the short final
    batch is kept."""
    if n_items < 1:
        raise ContractError("cannot batch an empty dataset")
    if batch_size < 1:
        raise ContractError(f"batch_size must be positive, got {batch_size}")
    order = np.random.default_rng([seed, epoch]).permutation(n_items)
    return [[int(i) for i in order[s : s + batch_size]] for s in range(0, n_items, batch_size)]


def sgd_step(
    params: InteractorParams,
    grads: Mapping[str, np.ndarray],
    state: OptimizerState,
    learning_rate: float,
    momentum: float,
) -> None:
    """Classical momentum: v <- momentum v + g, p <- p - lr v, in place."""
    for name, arr in params.arrays.items():
        if name not in grads:
            raise ContractError(f"missing gradient for parameter {name!r}")
        g = grads[name]
        if g.shape != arr.shape:
            raise ContractError(f"gradient for {name!r} has shape {g.shape}, expected {arr.shape}")
        if not np.all(np.isfinite(g)):
            raise DomainError(f"gradient for parameter {name!r} is not finite; aborting")
        v = state.velocity[name]
        v *= momentum
        v += g
        arr -= learning_rate * v


def batch_loss(
    tape: Tape,
    pnodes: Mapping[str, object],
    batch: Sequence[TrainingExample],
    margin: float,
    diversity_weight: float,
):
    """Forward for one batch: full pairwise score matrix plus the loss.

    Each video's proposals and each sentence are encoded exactly once and
    shared across all pairings, keeping the tape one connected graph so a
    single backward pass covers every term.
    """
    visual = []  # per video, per proposal: (rows, stack)
    for ex in batch:
        tubes = []
        for feats in ex.proposal_features:
            rows = encode_sequence(tape, pnodes, feats, "visual")
            tubes.append((rows, tape.stack_rows(rows)))
        visual.append(tubes)
    text = []  # per sentence: (rows, stack, attention-space projection)
    for ex in batch:
        rows = encode_sequence(tape, pnodes, ex.sentence.matrix, "text")
        stack = tape.stack_rows(rows)
        text.append((rows, stack, stack @ pnodes["att_text_w"]))

    b = len(batch)
    score_matrix = []
    proposal_scores = [[None] * b for _ in range(b)]
    for i in range(b):
        row = []
        for j in range(b):
            t_rows, t_stack, t_proj = text[j]
            scores = []
            for v_rows, v_stack in visual[i]:
                pair = EncodedPair(v_rows, t_rows, v_stack, t_stack)
                attention_out = attend(tape, pnodes, pair, text_proj=t_proj)
                score, _ = match(tape, pair, attention_out)
                scores.append(score)
            proposal_scores[i][j] = scores
            bag, _ = video_score(tape, scores)
            row.append(bag)
        score_matrix.append(row)

    aligned = [proposal_scores[i][i] for i in range(b)]
    return total_loss(
        tape, score_matrix, aligned, margin=margin, diversity_weight=diversity_weight
    )


def score_proposals(params: InteractorParams, example: TrainingExample) -> np.ndarray:
    """Inference-only proposal scores for one example (no gradients)."""
    return np.array(
        [match_pair(params, feats, example.sentence).score for feats in example.proposal_features]
    )


def grounding_accuracy(params: InteractorParams, examples: Sequence[TrainingExample]) -> float:
    """Fraction of examples whose argmax proposal is the known target."""
    labelled = [ex for ex in examples if ex.target_index is not None]
    if not labelled:
        raise ContractError("no examples carry a target index")
    hits = 0
    for ex in labelled:
        scores = score_proposals(params, ex)
        if int(np.argmax(scores)) == ex.target_index:
            hits += 1
    return hits / len(labelled)


@dataclass(frozen=True)
class EpochStats:
    epoch: int
    mean_total: float
    mean_rank: float
    mean_div: float
    val_accuracy: float | None = None


@dataclass
class TrainResult:
    params: InteractorParams
    history: list[EpochStats]
    steps: int
    selected_epoch: int


def _infer_dims(examples: Sequence[TrainingExample], cfg: TrainConfig) -> InteractorDims:
    visual_in = examples[0].proposal_features[0].shape[1]
    text_in = examples[0].sentence.matrix.shape[1]
    return InteractorDims(
        visual_in=visual_in, text_in=text_in, hidden=cfg.hidden, attention=cfg.attention
    )


def _write_loss_log(path: str | Path, history: Sequence[EpochStats]) -> None:
    lines = ["epoch,mean_total,mean_rank,mean_div"]
    for row in history:
        lines.append(f"{row.epoch},{row.mean_total!r},{row.mean_rank!r},{row.mean_div!r}")
    Path(path).write_text("\n".join(lines) + "\n", encoding="utf-8")


def train(
    examples: Sequence[TrainingExample],
    cfg: TrainConfig,
    params: InteractorParams | None = None,
    validation: Sequence[TrainingExample] | None = None,
    checkpoint_dir: str | Path | None = None,
    loss_log: str | Path | None = None,
    max_steps: int | None = None,
) -> TrainResult:
    """Run the full loop and return the selected parameters.

    When a validation set with target indices is supplied the checkpoint
    with the best validation accuracy is selected (earliest epoch on ties);
    otherwise the final epoch wins. ``max_steps`` caps the number of
    optimizer steps across all epochs.
    """
    if not examples:
        raise ContractError("training needs at least one example")
    if len(examples) == 1:
        warnings.warn(
            "single-video dataset: no negative pairs exist, so the ranking "
            "term is identically zero and training drives diversity only",
            stacklevel=2,
        )
    if params is None:
        params = InteractorParams.init(_infer_dims(examples, cfg), cfg.seed)
    state = OptimizerState(params)
    if checkpoint_dir is not None:
        checkpoint_dir = Path(checkpoint_dir)
        checkpoint_dir.mkdir(parents=True, exist_ok=True)

    history: list[EpochStats] = []
    epoch_params: dict[int, InteractorParams] = {}
    steps = 0
    stop = False
    for epoch in range(1, cfg.epochs + 1):
        totals, ranks, divs = [], [], []
        for batch_idx in make_batches(len(examples), cfg.batch_size, cfg.seed, epoch):
            batch = [examples[i] for i in batch_idx]
            tape = Tape()
            pnodes = params.to_nodes(tape)
            loss, breakdown = batch_loss(
                tape, pnodes, batch, cfg.margin, cfg.diversity_weight
            )
            tape.backward(loss)
            grads = {name: pnodes[name].grad for name in params.names()}
            sgd_step(params, grads, state, cfg.learning_rate, cfg.momentum)
            totals.append(breakdown.total)
            ranks.append(breakdown.rank)
            divs.append(breakdown.diversity)
            steps += 1
            if max_steps is not None and steps >= max_steps:
                stop = True
                break
        val_acc = grounding_accuracy(params, validation) if validation else None
        history.append(
            EpochStats(
                epoch=epoch,
                mean_total=float(np.mean(totals)),
                mean_rank=float(np.mean(ranks)),
                mean_div=float(np.mean(divs)),
                val_accuracy=val_acc,
            )
        )
        epoch_params[epoch] = params.copy()
        if checkpoint_dir is not None:
            params.save(checkpoint_dir / f"epoch_{epoch:03d}.json")
        if stop:
            break

    if validation:
        selected_epoch = max(
            (row.epoch for row in history),
            key=lambda e: (history[e - 1].val_accuracy, -e),
        )
    else:
        selected_epoch = history[-1].epoch
    if loss_log is not None:
        _write_loss_log(loss_log, history)
    return TrainResult(
        params=epoch_params[selected_epoch],
        history=history,
        steps=steps,
        selected_epoch=selected_epoch,
    )
