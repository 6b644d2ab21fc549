"""Multi-view network embedding: per-view skip-gram training with shared
contexts, a collaboration regulariser toward voted robust vectors, and
attention-learned per-node view weights."""

from mvembed.attention import AttentionParams, LabeledSet, train_attention, weights_for_all
from mvembed.embedding import EmbeddingStore, TrainConfig, init_embeddings, vote_robust
from mvembed.graph import AliasTable, MultiViewGraph, NegativeSampler, Vocabulary, load_view
from mvembed.trainer import TrainResult, train

__all__ = [
    "AliasTable",
    "AttentionParams",
    "EmbeddingStore",
    "LabeledSet",
    "MultiViewGraph",
    "NegativeSampler",
    "TrainConfig",
    "TrainResult",
    "Vocabulary",
    "init_embeddings",
    "load_view",
    "train",
    "train_attention",
    "vote_robust",
    "weights_for_all",
]
