"""01-loss sign-activation networks, vote ensembles and a black-box text attack harness."""

from .classifier import SCD01Classifier
from .cnn import CNN01Classifier, ConvSignModel
from .ensemble import Ensemble, MajorityVoteClassifier, VoteResult, train_ensemble, vote
from .network import LabeledDataset, SignNetwork, predict, sign_activation, zero_one_loss
from .scan import optimal_output_bias
from .text import (
    AverageEmbeddingVectorizer,
    DocBatch,
    Document,
    EmbeddingTable,
    StackedEmbeddingVectorizer,
    load_corpus,
    load_embeddings,
    tokenize,
)
from .trainer import TrainConfig, train

__version__ = "0.1.0"

__all__ = [
    "AverageEmbeddingVectorizer",
    "CNN01Classifier",
    "ConvSignModel",
    "DocBatch",
    "Document",
    "EmbeddingTable",
    "Ensemble",
    "LabeledDataset",
    "MajorityVoteClassifier",
    "SCD01Classifier",
    "SignNetwork",
    "StackedEmbeddingVectorizer",
    "TrainConfig",
    "VoteResult",
    "load_corpus",
    "load_embeddings",
    "optimal_output_bias",
    "predict",
    "sign_activation",
    "tokenize",
    "train",
    "train_ensemble",
    "vote",
    "zero_one_loss",
]
