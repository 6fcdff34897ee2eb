"""Knowledge- and capability-aware routing of queries across a pool of LLMs."""

from .core import (
    OTHER,
    CapabilityTaxonomy,
    EvalAggregate,
    EvalRecord,
    ModelScoreBreakdown,
    RoutingConfig,
    RoutingDecision,
    TagSet,
    normalize_label,
    validate_tagset,
)
from .index import (
    IndexCorpus,
    ScoreIndex,
    add_model,
    build_index,
    ingest_records,
    ingest_tags,
    load_corpus,
    load_index,
    save_index,
)
from .scoring import (
    ElementStat,
    Fallback,
    aggregate_element,
    capability_score,
    knowledge_score,
    per_query_element_score,
    rank_weights,
    route,
)
from .vocab import StubProvider, Vocabulary, build_vocabulary, canonicalize, stub_provider

__version__ = "0.1.0"

__all__ = [
    "OTHER",
    "CapabilityTaxonomy",
    "EvalAggregate",
    "EvalRecord",
    "ModelScoreBreakdown",
    "RoutingConfig",
    "RoutingDecision",
    "TagSet",
    "normalize_label",
    "validate_tagset",
    "IndexCorpus",
    "ScoreIndex",
    "add_model",
    "build_index",
    "ingest_records",
    "ingest_tags",
    "load_corpus",
    "load_index",
    "save_index",
    "ElementStat",
    "Fallback",
    "aggregate_element",
    "capability_score",
    "knowledge_score",
    "per_query_element_score",
    "rank_weights",
    "route",
    "StubProvider",
    "Vocabulary",
    "build_vocabulary",
    "canonicalize",
    "stub_provider",
]
