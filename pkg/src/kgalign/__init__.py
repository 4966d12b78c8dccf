"""Self-supervised entity alignment across two knowledge graphs.

The package trains a relation-aware neighborhood aggregator with momentum
contrastive learning and pseudo-aligned pair mining, then ranks cross-graph
entity pairs by L2 distance.
"""

__version__ = "0.1.0"

from .aggregator import (AggregatorConfig, AggregatorParams, EncoderPair,
                         encode_batch, encode_entities, entity_gat,
                         fuse_and_project, relation_gated_gat, semantic_gat)
from .autodiff import Adam, Tensor, backward, load_checkpoint, no_grad, save_checkpoint
from .contrastive import (LossConfig, NegativeQueue, icl_loss, momentum_update,
                          nce_loss, total_loss, validate_queue_constraint)
from .dataset import DatasetPair, assemble, load_dataset
from .embeddings import (EmbeddingTable, fallback_encode, fuse, read_embeddings,
                         write_embeddings)
from .evaluation import RankingResult, evaluate, evaluate_transfer
from .kg import (AlignmentSet, KnowledgeGraph, SideInfo, Triple, load_alignments,
                 load_kg, neighborhood, split_validation)
from .mining import MergedPairs, PseudoPairSet, coverage_stats, merge, mine
from .trainer import TrainConfig, TrainResult, apply_ablation, train

__all__ = [
    "AggregatorConfig", "AggregatorParams", "EncoderPair", "encode_batch",
    "encode_entities", "entity_gat", "fuse_and_project", "relation_gated_gat",
    "semantic_gat", "Adam", "Tensor", "backward", "load_checkpoint", "no_grad",
    "save_checkpoint", "LossConfig", "NegativeQueue", "icl_loss",
    "momentum_update", "nce_loss", "total_loss", "validate_queue_constraint",
    "DatasetPair", "assemble", "load_dataset", "EmbeddingTable",
    "fallback_encode", "fuse", "read_embeddings", "write_embeddings",
    "RankingResult", "evaluate", "evaluate_transfer", "AlignmentSet",
    "KnowledgeGraph", "SideInfo", "Triple", "load_alignments", "load_kg",
    "neighborhood", "split_validation", "MergedPairs", "PseudoPairSet",
    "coverage_stats", "merge", "mine", "TrainConfig", "TrainResult",
    "apply_ablation", "train",
]
