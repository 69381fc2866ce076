"""Cross-modal matcher between a tube's segment features and a sentence.

Both sequences are linearly projected into a shared hidden space and
encoded by single-layer unidirectional LSTMs (zero initial state). For each
visual step i an additive-attention read over all sentence hidden states
produces a sentence summary guided by that step; the match at step i is the
cosine similarity between the visual hidden state and its guided summary,
and the tube-level score is the mean over steps.

The score lives in [-1, 1]. Forward passes run on an explicit Tape so the
score is differentiable w.r.t. every parameter.
"""

from __future__ import annotations

import json
from dataclasses import dataclass
from pathlib import Path
from typing import Mapping

import numpy as np

from .autodiff import Tape, TapeNode, as_matrix
from .errors import ConfigError, ContractError, ParseError, ValidationError
from .features import SentenceMatrix

__all__ = [
    "AttentionOutput",
    "EncodedPair",
    "InteractorDims",
    "InteractorParams",
    "MatchResult",
    "attend",
    "encode",
    "encode_sequence",
    "match",
    "match_pair",
]

CHECKPOINT_FORMAT = "tubegrounder-params-v1"

# Column order of the fused LSTM gate block: input, forget, cell, output.
_GATES = 4


@dataclass(frozen=True)
class InteractorDims:
    """Layer sizes. ``text_hidden`` exists only to reject unequal encoders:
    the per-step cosine compares visual and guided-sentence states, so both
    hidden spaces must coincide."""

    visual_in: int
    text_in: int
    hidden: int = 512
    attention: int | None = None
    text_hidden: int | None = None

    def __post_init__(self) -> None:
        for name in ("visual_in", "text_in", "hidden"):
            if getattr(self, name) < 1:
                raise ContractError(f"{name} must be positive, got {getattr(self, name)}")
        if self.attention is not None and self.attention < 1:
            raise ContractError(f"attention dim must be positive, got {self.attention}")
        if self.text_hidden is not None and self.text_hidden != self.hidden:
            raise ConfigError(
                f"visual and text hidden sizes must match for the cosine step "
                f"({self.hidden} vs {self.text_hidden})"
            )

    @property
    def attention_dim(self) -> int:
        return self.hidden if self.attention is None else self.attention


def _param_shapes(dims: InteractorDims) -> dict[str, tuple[int, int]]:
    d, k = dims.hidden, dims.attention_dim
    return {
        "visual_proj_w": (dims.visual_in, d),
        "visual_proj_b": (1, d),
        "visual_lstm_wx": (d, _GATES * d),
        "visual_lstm_wh": (d, _GATES * d),
        "visual_lstm_b": (1, _GATES * d),
        "text_proj_w": (dims.text_in, d),
        "text_proj_b": (1, d),
        "text_lstm_wx": (d, _GATES * d),
        "text_lstm_wh": (d, _GATES * d),
        "text_lstm_b": (1, _GATES * d),
        "att_visual_w": (d, k),
        "att_text_w": (d, k),
        "att_bias": (1, k),
        "att_score_w": (k, 1),
        "att_score_b": (1, 1),
    }


# fan-in used for each parameter's init bound (rows of the matrix it feeds).
def _fan_in(name: str, dims: InteractorDims) -> int:
    if name.startswith("visual_proj"):
        return dims.visual_in
    if name.startswith("text_proj"):
        return dims.text_in
    if name.startswith(("att_score", "att_bias")):
        return dims.attention_dim
    if name.startswith("att_"):
        return dims.hidden
    return dims.hidden  # lstm blocks


class InteractorParams:
    """Mutable container of all learnable arrays, keyed by name."""

    def __init__(self, dims: InteractorDims, arrays: Mapping[str, np.ndarray]):
        self.dims = dims
        expected = _param_shapes(dims)
        if set(arrays) != set(expected):
            missing = set(expected) - set(arrays)
            extra = set(arrays) - set(expected)
            raise ValidationError(f"parameter names mismatch: missing={missing}, extra={extra}")
        self.arrays: dict[str, np.ndarray] = {}
        for name, shape in expected.items():
            arr = as_matrix(arrays[name], name)
            if arr.shape != shape:
                raise ValidationError(f"{name} has shape {arr.shape}, expected {shape}")
            self.arrays[name] = arr.copy()

    @classmethod
    def init(cls, dims: InteractorDims, seed: int) -> "InteractorParams":
        """Uniform init with variance 1/fan_in; forget-gate bias 1.

        The uniform bound is sqrt(3)/sqrt(fan_in) so each weight has
        variance exactly 1/fan_in, which keeps activation magnitudes stable
        across the projection, recurrent, and attention blocks. Smaller
        scales leave the score matrix nearly constant in the sentence at the
        start of training, and the ranking gradients then cancel almost
        exactly, stalling optimization on the first plateau.
        """
        rng = np.random.default_rng(seed)
        arrays = {}
        for name, shape in _param_shapes(dims).items():
            bound = np.sqrt(3.0) / np.sqrt(_fan_in(name, dims))
            arrays[name] = rng.uniform(-bound, bound, size=shape)
        d = dims.hidden
        for side in ("visual", "text"):
            arrays[f"{side}_lstm_b"][0, d : 2 * d] = 1.0
        return cls(dims, arrays)

    def names(self) -> tuple[str, ...]:
        return tuple(self.arrays)

    def to_nodes(self, tape: Tape) -> dict[str, TapeNode]:
        return {name: tape.leaf(arr) for name, arr in self.arrays.items()}

    def copy(self) -> "InteractorParams":
        return InteractorParams(self.dims, self.arrays)

    def save(self, path: str | Path) -> None:
        obj = {
            "format": CHECKPOINT_FORMAT,
            "dims": {
                "visual_in": self.dims.visual_in,
                "text_in": self.dims.text_in,
                "hidden": self.dims.hidden,
                "attention": self.dims.attention_dim,
            },
            "params": {
                name: {"shape": list(arr.shape), "data": [float(v) for v in arr.reshape(-1)]}
                for name, arr in self.arrays.items()
            },
        }
        Path(path).write_text(json.dumps(obj), encoding="utf-8")

    @classmethod
    def load(cls, path: str | Path) -> "InteractorParams":
        try:
            obj = json.loads(Path(path).read_text(encoding="utf-8"))
        except json.JSONDecodeError as exc:
            raise ParseError(f"{path}: invalid JSON ({exc})") from None
        if obj.get("format") != CHECKPOINT_FORMAT:
            raise ParseError(f"{path}: unknown checkpoint format {obj.get('format')!r}")
        dims_obj = obj["dims"]
        dims = InteractorDims(
            visual_in=int(dims_obj["visual_in"]),
            text_in=int(dims_obj["text_in"]),
            hidden=int(dims_obj["hidden"]),
            attention=int(dims_obj["attention"]),
        )
        arrays = {}
        for name, entry in obj["params"].items():
            shape = tuple(entry["shape"])
            arrays[name] = np.array(entry["data"], dtype=np.float64).reshape(shape)
        return cls(dims, arrays)


@dataclass
class EncodedPair:
    """Hidden-state sequences for one (tube, sentence) pair."""

    visual_rows: list[TapeNode]
    text_rows: list[TapeNode]
    visual_stack: TapeNode
    text_stack: TapeNode


@dataclass
class AttentionOutput:
    attention: TapeNode  # t_p x t_q row-stochastic weights
    attention_rows: list[TapeNode]
    guided_rows: list[TapeNode]  # per visual step, 1 x hidden sentence summary


@dataclass(frozen=True)
class MatchResult:
    """Numpy snapshot of one pair's match, for inspection and reports."""

    attention: np.ndarray
    guided: np.ndarray
    per_segment: np.ndarray
    score: float

    def __post_init__(self) -> None:
        row_sums = self.attention.sum(axis=1)
        if np.abs(row_sums - 1.0).max() > 1e-9:
            raise ValidationError("attention rows must sum to 1")
        if np.abs(self.per_segment).max() > 1.0 + 1e-12:
            raise ValidationError("per-segment similarities must lie in [-1, 1]")
        if abs(self.score - float(self.per_segment.mean())) > 1e-12:
            raise ValidationError("score must equal the mean per-segment similarity")


def encode_sequence(
    tape: Tape,
    pnodes: Mapping[str, TapeNode],
    features: np.ndarray,
    side: str,
) -> list[TapeNode]:
    """Project each input row and run the LSTM; returns all hidden states."""
    if side not in ("visual", "text"):
        raise ContractError(f"side must be 'visual' or 'text', got {side!r}")
    proj_w = pnodes[f"{side}_proj_w"]
    proj_b = pnodes[f"{side}_proj_b"]
    wx = pnodes[f"{side}_lstm_wx"]
    wh = pnodes[f"{side}_lstm_wh"]
    b = pnodes[f"{side}_lstm_b"]
    feats = as_matrix(features, f"{side} features")
    if feats.shape[1] != proj_w.shape[0]:
        raise ContractError(
            f"{side} feature dim {feats.shape[1]} does not match projection input {proj_w.shape[0]}"
        )
    d = wh.shape[0]
    h = tape.leaf(np.zeros((1, d)))
    c = tape.leaf(np.zeros((1, d)))
    rows: list[TapeNode] = []
    for t in range(feats.shape[0]):
        x = tape.leaf(feats[t : t + 1, :]) @ proj_w + proj_b
        z = x @ wx + h @ wh + b
        gate_in = tape.sigmoid(tape.slice_cols(z, 0, d))
        gate_forget = tape.sigmoid(tape.slice_cols(z, d, 2 * d))
        cell_cand = tape.tanh(tape.slice_cols(z, 2 * d, 3 * d))
        gate_out = tape.sigmoid(tape.slice_cols(z, 3 * d, 4 * d))
        c = gate_forget * c + gate_in * cell_cand
        h = gate_out * tape.tanh(c)
        rows.append(h)
    return rows


def encode(
    tape: Tape,
    pnodes: Mapping[str, TapeNode],
    visual_features: np.ndarray,
    sentence: SentenceMatrix | np.ndarray,
) -> EncodedPair:
    text_matrix = sentence.matrix if isinstance(sentence, SentenceMatrix) else sentence
    visual_rows = encode_sequence(tape, pnodes, visual_features, "visual")
    text_rows = encode_sequence(tape, pnodes, text_matrix, "text")
    return EncodedPair(
        visual_rows=visual_rows,
        text_rows=text_rows,
        visual_stack=tape.stack_rows(visual_rows),
        text_stack=tape.stack_rows(text_rows),
    )


def attend(
    tape: Tape,
    pnodes: Mapping[str, TapeNode],
    pair: EncodedPair,
    text_proj: TapeNode | None = None,
) -> AttentionOutput:
    """Visually guided attention over the sentence states.

    ``text_proj`` (the sentence stack already mapped into attention space)
    can be passed in when one sentence is matched against many tubes.
    """
    if text_proj is None:
        text_proj = pair.text_stack @ pnodes["att_text_w"]
    attention_rows: list[TapeNode] = []
    guided_rows: list[TapeNode] = []
    for h_vis in pair.visual_rows:
        vis_proj = h_vis @ pnodes["att_visual_w"]
        pre = tape.tanh(tape.add(tape.add(text_proj, vis_proj), pnodes["att_bias"]))
        scores = tape.add(pre @ pnodes["att_score_w"], pnodes["att_score_b"])
        weights = tape.softmax_row(tape.transpose(scores))
        attention_rows.append(weights)
        guided_rows.append(weights @ pair.text_stack)
    return AttentionOutput(
        attention=tape.stack_rows(attention_rows),
        attention_rows=attention_rows,
        guided_rows=guided_rows,
    )


def match(
    tape: Tape, pair: EncodedPair, attention_out: AttentionOutput
) -> tuple[TapeNode, list[TapeNode]]:
    """Per-step cosine similarities and their mean as the pair score."""
    per_segment = [
        tape.cosine(h_vis, guided)
        for h_vis, guided in zip(pair.visual_rows, attention_out.guided_rows)
    ]
    score = tape.scale(tape.sum_all(tape.concat_scalars(per_segment)), 1.0 / len(per_segment))
    return score, per_segment


def match_pair(
    params: InteractorParams,
    visual_features: np.ndarray,
    sentence: SentenceMatrix | np.ndarray,
) -> MatchResult:
    """Inference-only forward on a private tape, snapshotting numpy outputs."""
    tape = Tape()
    pnodes = params.to_nodes(tape)
    pair = encode(tape, pnodes, visual_features, sentence)
    attention_out = attend(tape, pnodes, pair)
    score, per_segment = match(tape, pair, attention_out)
    return MatchResult(
        attention=attention_out.attention.value.copy(),
        guided=np.vstack([g.value for g in attention_out.guided_rows]),
        per_segment=np.array([s.item() for s in per_segment]),
        score=score.item(),
    )
