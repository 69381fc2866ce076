"""Estimator-style wrappers around the linker and the trained matcher.

``TubeProposalLinker`` is a stateless transformer turning per-frame
detections into ranked tube proposals. ``SentenceGrounder`` wraps the
training loop behind fit/predict/score so the pipeline composes with
standard model-selection tooling (get_params, clone, grid search).
"""

from __future__ import annotations

from typing import Sequence

import numpy as np
from sklearn.base import BaseEstimator, TransformerMixin

from .errors import ContractError
from .linking import FrameBoxes, LinkConfig, Tube, extract_proposals
from .training import TrainConfig, TrainingExample, score_proposals, train

__all__ = ["SentenceGrounder", "TubeProposalLinker"]


class TubeProposalLinker(TransformerMixin, BaseEstimator):
    """Transform per-video frame detections into tube proposals."""

    def __init__(self, iou_weight: float = 0.2, max_proposals: int = 30):
        self.iou_weight = iou_weight
        self.max_proposals = max_proposals

    def fit(self, X=None, y=None) -> "TubeProposalLinker":
        # Stateless: nothing is learned, fit only validates hyperparameters.
        LinkConfig(self.iou_weight)
        if self.max_proposals < 1:
            raise ContractError(f"max_proposals must be positive, got {self.max_proposals}")
        self.is_fitted_ = True
        return self

    def transform(self, X: Sequence[list[FrameBoxes]]) -> list[list[Tube]]:
        self.fit()
        cfg = LinkConfig(self.iou_weight)
        return [extract_proposals(list(frames), cfg, self.max_proposals) for frames in X]


class SentenceGrounder(BaseEstimator):
    """Weakly supervised matcher with an estimator interface.

    ``fit`` takes a sequence of TrainingExample (proposal segment features
    plus an embedded sentence each); ``predict`` returns the chosen proposal
    index per example; ``score`` is grounding accuracy against each
    example's target index (or an explicit label vector).
    """

    def __init__(
        self,
        hidden: int = 512,
        attention: int | None = None,
        batch_size: int = 16,
        learning_rate: float = 0.001,
        momentum: float = 0.9,
        epochs: int = 30,
        diversity_weight: float = 1.0,
        margin: float = 1.0,
        seed: int = 0,
        max_steps: int | None = None,
    ):
        self.hidden = hidden
        self.attention = attention
        self.batch_size = batch_size
        self.learning_rate = learning_rate
        self.momentum = momentum
        self.epochs = epochs
        self.diversity_weight = diversity_weight
        self.margin = margin
        self.seed = seed
        self.max_steps = max_steps

    def _config(self) -> TrainConfig:
        return TrainConfig(
            batch_size=self.batch_size,
            learning_rate=self.learning_rate,
            momentum=self.momentum,
            epochs=self.epochs,
            diversity_weight=self.diversity_weight,
            margin=self.margin,
            seed=self.seed,
            hidden=self.hidden,
            attention=self.attention,
        )

    def fit(
        self, X: Sequence[TrainingExample], y=None, validation: Sequence[TrainingExample] | None = None
    ) -> "SentenceGrounder":
        result = train(X, self._config(), validation=validation, max_steps=self.max_steps)
        self.params_ = result.params
        self.history_ = result.history
        self.n_steps_ = result.steps
        self.selected_epoch_ = result.selected_epoch
        return self

    def _scores(self, X: Sequence[TrainingExample]) -> list[np.ndarray]:
        if not hasattr(self, "params_"):
            raise ContractError("SentenceGrounder is not fitted; call fit first")
        return [score_proposals(self.params_, ex) for ex in X]

    def predict(self, X: Sequence[TrainingExample]) -> np.ndarray:
        return np.array([int(np.argmax(s)) for s in self._scores(X)])

    def score(self, X: Sequence[TrainingExample], y=None) -> float:
        if y is None:
            y = [ex.target_index for ex in X]
            if any(t is None for t in y):
                raise ContractError("score needs target indices on every example")
        y = np.asarray(y)
        if y.shape[0] != len(X):
            raise ContractError(f"got {y.shape[0]} labels for {len(X)} examples")
        return float(np.mean(self.predict(X) == y))
