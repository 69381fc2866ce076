"""Weakly supervised spatio-temporal grounding of sentences in videos.

The pipeline links per-frame detections into tube proposals, matches each
proposal against a sentence with an attention-based cross-modal matcher,
and trains that matcher from video-sentence alignment alone via a ranking
objective over batches plus a score-diversity term.
"""

from .autodiff import Tape, TapeNode, grad_check, numeric_gradients
from .boxes import Box2D, GroundTruthTube, iou
from .errors import (
    ConfigError,
    ContractError,
    DimensionError,
    DomainError,
    FeatureLookupError,
    ParseError,
    TubeGrounderError,
    ValidationError,
)
from .estimator import SentenceGrounder, TubeProposalLinker
from .evaluation import (
    EvalItem,
    EvalReport,
    GroundingResult,
    accuracy_at,
    attention_dump,
    evaluate,
    ground,
    random_baseline,
    score_distribution,
    tube_overlap,
    upper_bound,
)
from .features import (
    EmbeddingTable,
    FeatureStore,
    SentenceMatrix,
    VideoRecord,
    embed_sentence,
    load_dataset,
    load_embeddings,
    load_proposals,
    pool_segments,
    save_dataset,
    save_embeddings,
    save_proposals,
)
from .interactor import InteractorDims, InteractorParams, MatchResult, match_pair
from .linking import (
    FrameBoxes,
    LinkConfig,
    Tube,
    best_path,
    extract_proposals,
    link_score,
    tube_energy,
)
from .losses import LossBreakdown, diversity_loss, ranking_loss, total_loss, video_score
from .pipeline import make_eval_items, make_training_examples, target_proposal_index
from .synth import SynthConfig, SynthScenario, generate, write_scenario
from .training import (
    TrainConfig,
    TrainingExample,
    TrainResult,
    grounding_accuracy,
    make_batches,
    sgd_step,
    train,
)

__version__ = "0.1.0"

__all__ = [
    "Box2D",
    "ConfigError",
    "ContractError",
    "DimensionError",
    "DomainError",
    "EmbeddingTable",
    "EvalItem",
    "EvalReport",
    "FeatureLookupError",
    "FeatureStore",
    "FrameBoxes",
    "GroundTruthTube",
    "GroundingResult",
    "InteractorDims",
    "InteractorParams",
    "LinkConfig",
    "LossBreakdown",
    "MatchResult",
    "ParseError",
    "SentenceGrounder",
    "SentenceMatrix",
    "SynthConfig",
    "SynthScenario",
    "Tape",
    "TapeNode",
    "TrainConfig",
    "TrainResult",
    "TrainingExample",
    "Tube",
    "TubeGrounderError",
    "TubeProposalLinker",
    "ValidationError",
    "VideoRecord",
    "accuracy_at",
    "attention_dump",
    "best_path",
    "diversity_loss",
    "embed_sentence",
    "evaluate",
    "extract_proposals",
    "grad_check",
    "ground",
    "grounding_accuracy",
    "iou",
    "link_score",
    "load_dataset",
    "load_embeddings",
    "load_proposals",
    "make_batches",
    "make_eval_items",
    "make_training_examples",
    "match_pair",
    "numeric_gradients",
    "pool_segments",
    "random_baseline",
    "ranking_loss",
    "save_dataset",
    "save_embeddings",
    "save_proposals",
    "score_distribution",
    "sgd_step",
    "target_proposal_index",
    "total_loss",
    "train",
    "tube_energy",
    "tube_overlap",
    "upper_bound",
    "video_score",
]
