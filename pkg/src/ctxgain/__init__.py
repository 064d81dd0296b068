"""ctxgain: curate long-context LM training data by extended-context information gain.

The pipeline packs tokenized documents into fixed-length sequences, scores
every token by how much the extended context improves the model's
prediction of it (the realized-token term of the KL divergence between
long-context and short-context next-token distributions), averages per
sequence, and keeps the top-scoring fraction for long-context training.
"""

__version__ = "0.1.0"

from .config import PipelineConfig, load_config
from .corpus import (
    ByteTokenizer,
    ConfigError,
    Document,
    LengthPartition,
    PackedSequence,
    TokenizedDoc,
    get_tokenizer,
    ingest,
    pack,
    partition_by_length,
    tokenize,
)
from .infotheory import (
    InfiniteDivergenceError,
    cmi_entropy_form,
    cmi_kl_form,
    one_sample_kl,
    surrogate_term,
)
from .ngram import CacheNGramModel, LogProbSlice, fit_cache_ngram
from .scoring import (
    ChunkPlan,
    ScoringConfig,
    SequenceScore,
    TokenScore,
    aggregate,
    long_logprobs,
    plan_chunks,
    score_sequence,
    short_logprobs,
    token_scores,
)
from .selection import (
    MixtureRecipe,
    SelectionManifest,
    compose_mixture,
    rank_and_select,
    selection_monotonicity_check,
)
from .synthetic import SynthSpec, TrueMarkovModel, generate, true_markov_provider
from .wire import ProtocolError, RemoteLogProbModel, TransportError, serve_mock

__all__ = [
    "ByteTokenizer",
    "CacheNGramModel",
    "ChunkPlan",
    "ConfigError",
    "Document",
    "InfiniteDivergenceError",
    "LengthPartition",
    "LogProbSlice",
    "MixtureRecipe",
    "PackedSequence",
    "PipelineConfig",
    "ProtocolError",
    "RemoteLogProbModel",
    "ScoringConfig",
    "SelectionManifest",
    "SequenceScore",
    "SynthSpec",
    "TokenScore",
    "TokenizedDoc",
    "TransportError",
    "TrueMarkovModel",
    "aggregate",
    "cmi_entropy_form",
    "cmi_kl_form",
    "compose_mixture",
    "fit_cache_ngram",
    "generate",
    "get_tokenizer",
    "ingest",
    "load_config",
    "long_logprobs",
    "one_sample_kl",
    "pack",
    "partition_by_length",
    "plan_chunks",
    "rank_and_select",
    "score_sequence",
    "selection_monotonicity_check",
    "serve_mock",
    "short_logprobs",
    "surrogate_term",
    "token_scores",
    "tokenize",
    "true_markov_provider",
]
