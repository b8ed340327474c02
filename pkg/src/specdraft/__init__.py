"""Speculative decoding with single-pass parallel drafting and n-gram tree pruning."""

from .engine import (
    CycleRecord,
    DecodeConfig,
    DecodeMetrics,
    baseline_decode,
    decode,
    estimate_speedup,
    exactness_check,
    verify,
)
from .errors import (
    BadMagicError,
    ConfigError,
    InvalidTreeError,
    OutOfVocabularyError,
    TrainingDivergedError,
    TrieFormatError,
    TruncatedFileError,
    VersionMismatchError,
)
from .models import (
    AdversarialDrafter,
    MarkovTarget,
    NoisyOracleDrafter,
    OracleDrafter,
    TargetFeatures,
    ToyDraft,
    UniformDrafter,
    sample_markov_target,
)
from .ngram import NgramTrie, TrieStats, build_trie, load_trie, save_trie
from .training import (
    AnnealedKLConfig,
    annealed_kl_loss,
    build_position_ids,
    build_training_mask,
    evaluate_alpha,
    finite_diff_check,
    train_toy_draft,
)
from .tree import (
    DraftNode,
    DraftTree,
    LinearizedTree,
    ParallelLogits,
    PruneConfig,
    combine,
    linearize,
    prune,
    top_k_candidates,
)

__all__ = [
    "AdversarialDrafter",
    "AnnealedKLConfig",
    "BadMagicError",
    "ConfigError",
    "CycleRecord",
    "DecodeConfig",
    "DecodeMetrics",
    "DraftNode",
    "DraftTree",
    "InvalidTreeError",
    "LinearizedTree",
    "MarkovTarget",
    "NgramTrie",
    "NoisyOracleDrafter",
    "OracleDrafter",
    "OutOfVocabularyError",
    "ParallelLogits",
    "PruneConfig",
    "TargetFeatures",
    "ToyDraft",
    "TrainingDivergedError",
    "TrieFormatError",
    "TrieStats",
    "TruncatedFileError",
    "UniformDrafter",
    "VersionMismatchError",
    "annealed_kl_loss",
    "baseline_decode",
    "build_position_ids",
    "build_trie",
    "build_training_mask",
    "combine",
    "decode",
    "estimate_speedup",
    "evaluate_alpha",
    "exactness_check",
    "finite_diff_check",
    "linearize",
    "load_trie",
    "prune",
    "save_trie",
    "top_k_candidates",
    "train_toy_draft",
    "verify",
]
