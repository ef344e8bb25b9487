"""Multimodal pairwise contrastive pretraining with frozen-feature evaluation."""
from .contrastive import LossConfig, final_loss, loss_with_gradients, pair_loss
from .encoders import EncoderConfig, ModalityId, MultimodalModel, ProjectionConfig
from .estimators import ContrastivePretrainer, LateFusionClassifier, ProbeClassifier
from .exceptions import (
    ConfigError,
    DataError,
    DegenerateEmbeddingError,
    EmptyDenominatorError,
    InsufficientNegativesError,
    MPCLError,
    NumericalError,
    ProtocolError,
    ShapeError,
)
from .train import TrainConfig, load_checkpoint, pretrain, save_checkpoint

__version__ = "0.1.0"

__all__ = [
    "ConfigError", "ContrastivePretrainer", "DataError", "DegenerateEmbeddingError",
    "EmptyDenominatorError", "EncoderConfig", "InsufficientNegativesError", "LateFusionClassifier",
    "LossConfig", "MPCLError", "ModalityId", "MultimodalModel", "NumericalError", "ProbeClassifier",
    "ProjectionConfig", "ProtocolError", "ShapeError", "TrainConfig", "final_loss", "load_checkpoint",
    "loss_with_gradients", "pair_loss", "pretrain", "save_checkpoint",
]
