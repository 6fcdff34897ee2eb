"""Evaluation-corpus ingest, ScoreIndex construction, incremental updates and persistence."""

from __future__ import annotations

import json
import logging
import math
import os
from dataclasses import dataclass, field, replace
from statistics import fmean
from typing import Iterable

from .core import (
    DEFAULT_MAX_TAGS,
    CapabilityTaxonomy,
    EvalAggregate,
    EvalRecord,
    TagSet,
    validate_tagset,
)
from .errors import Conflict, FormatError, InvalidLabel, ParseError, RangeError, VersionError
from .scoring import ElementStat, ModelStats, aggregate_element, element_contributions, rank_weights
from .vocab import Vocabulary

log = logging.getLogger(__name__)

FORMAT_VERSION = 1

RECORD_FIELDS = {"model_id", "query_id", "trial_scores", "trial_costs"}
TAG_FIELDS = {"query_id", "knowledge", "capabilities"}


# -- ingest ------------------------------------------------------------------


def _json_lines(lines: Iterable[str]):
    for n, line in enumerate(lines, start=1):
        if not line.strip():
            continue
        try:
            obj = json.loads(line)
        except json.JSONDecodeError as exc:
            raise ParseError(f"invalid JSON: {exc.msg}", n) from None
        if not isinstance(obj, dict):
            raise ParseError("expected a JSON object", n)
        yield n, obj


def _check_fields(obj: dict, expected: set, n: int):
    if set(obj) != expected:
        missing = sorted(expected - set(obj))
        extra = sorted(set(obj) - expected)
        raise ParseError(f"fields mismatch (missing {missing}, unexpected {extra})", n)


def _number_list(value, name, n):
    if not isinstance(value, list) or not value:
        raise ParseError(f"{name} must be a non-empty list", n)
    out = []
    for v in value:
        if isinstance(v, bool) or not isinstance(v, (int, float)):
            raise ParseError(f"{name} contains non-number {v!r}", n)
        if not math.isfinite(v):
            raise RangeError(f"{name} contains non-finite {v!r}", n)
        out.append(float(v))
    return out


@dataclass
class IndexCorpus:
    """Tagged index queries and per-(model, query) aggregated outcomes.

    ``queries`` holds normalized (not yet canonicalized) tag sets so the
    corpus can be re-canonicalized against a newer vocabulary.
    """

    queries: dict[str, TagSet] = field(default_factory=dict)
    records: dict[tuple[str, str], EvalAggregate] = field(default_factory=dict)

    def model_ids(self) -> list[str]:
        return sorted({m for m, _ in self.records})

    def slice(self, model_ids: Iterable[str]) -> "IndexCorpus":
        keep = set(model_ids)
        return IndexCorpus(dict(self.queries), {k: v for k, v in self.records.items() if k[0] in keep})

    def check(self):
        orphans = sorted({q for _, q in self.records if q not in self.queries})
        if orphans:
            raise ParseError(f"records reference unknown query ids {orphans[:5]}")

    def knowledge_occurrences(self) -> list[tuple[str, int]]:
        return [(lab, r) for q in sorted(self.queries)
                for r, lab in enumerate(self.queries[q].knowledge, start=1)]


def ingest_records(lines: Iterable[str], queries: dict[str, TagSet] | None = None) -> IndexCorpus:
    """Parse evaluation-record JSON lines into an :class:`IndexCorpus`.

    Duplicate (model_id, query_id) lines are merged by pooling their trials
    before averaging. When ``queries`` is given every record must reference
    one of them.
    """
    trials: dict[tuple[str, str], tuple[list[float], list[float]]] = {}
    for n, obj in _json_lines(lines):
        _check_fields(obj, RECORD_FIELDS, n)
        mid, qid = obj["model_id"], obj["query_id"]
        if not isinstance(mid, str) or not mid or not isinstance(qid, str) or not qid:
            raise ParseError("model_id and query_id must be non-empty strings", n)
        scores = _number_list(obj["trial_scores"], "trial_scores", n)
        costs = _number_list(obj["trial_costs"], "trial_costs", n)
        if len(scores) != len(costs):
            raise ParseError("trial_scores and trial_costs differ in length", n)
        bad = [s for s in scores if not 0.0 <= s <= 1.0]
        if bad:
            raise RangeError(f"score {bad[0]} outside [0, 1]", n)
        if any(c < 0 for c in costs):
            raise RangeError("negative cost", n)
        if queries is not None and qid not in queries:
            raise ParseError(f"unknown query_id {qid!r}", n)
        s, c = trials.setdefault((mid, qid), ([], []))
        s.extend(scores)
        c.extend(costs)
    records = {
        key: EvalRecord(key[0], key[1], s, c).aggregate() for key, (s, c) in sorted(trials.items())
    }
    return IndexCorpus(dict(queries or {}), records)


def ingest_tags(
    lines: Iterable[str],
    taxonomy: CapabilityTaxonomy = CapabilityTaxonomy(),
    max_tags: int = DEFAULT_MAX_TAGS,
) -> dict[str, TagSet]:
    out = {}
    for n, obj in _json_lines(lines):
        _check_fields(obj, TAG_FIELDS, n)
        qid = obj["query_id"]
        if not isinstance(qid, str) or not qid:
            raise ParseError("query_id must be a non-empty string", n)
        if qid in out:
            raise ParseError(f"duplicate query_id {qid!r}", n)
        for key in ("knowledge", "capabilities"):
            if not isinstance(obj[key], list) or not all(isinstance(x, str) for x in obj[key]):
                raise ParseError(f"{key} must be a list of strings", n)
        out[qid] = validate_tagset(TagSet(obj["knowledge"], obj["capabilities"]), taxonomy, max_tags)
    return out


def load_corpus(records_path, tags_path, taxonomy=CapabilityTaxonomy(), max_tags=DEFAULT_MAX_TAGS) -> IndexCorpus:
    with open(tags_path) as fh:
        queries = ingest_tags(fh, taxonomy, max_tags)
    with open(records_path) as fh:
        return ingest_records(fh, queries)


# -- index -------------------------------------------------------------------


def canonical_knowledge(labels: Iterable[str], vocab: Vocabulary) -> tuple[str, ...]:
    """Map labels through ``vocab`` and drop repeats created by the mapping."""
    return tuple(dict.fromkeys(vocab.canonical(lab) for lab in labels))


@dataclass(frozen=True)
class ScoreIndex:
    vocabulary: Vocabulary
    taxonomy: CapabilityTaxonomy
    alpha_used: float
    models: dict[str, ModelStats]
    version: int = 1
    max_tags: int = DEFAULT_MAX_TAGS

    def prepare_tags(self, tags: TagSet) -> TagSet:
        """Normalize, validate and canonicalize a query's tags for scoring."""
        tags = validate_tagset(tags, self.taxonomy, self.max_tags)
        return TagSet(canonical_knowledge(tags.knowledge, self.vocabulary), tags.capabilities)

    def restrict(self, model_ids: Iterable[str]) -> "ScoreIndex":
        keep = set(model_ids)
        return replace(self, models={m: s for m, s in self.models.items() if m in keep})

    def stats_summary(self) -> dict:
        k_elems = sorted({e for s in self.models.values() for e in s.knowledge})
        c_elems = sorted({e for s in self.models.values() for e in s.capability})
        members = sum(len(v) for v in self.vocabulary.clusters.values())
        n_other = len(self.vocabulary.other_members)
        return {
            "version": self.version,
            "alpha_used": self.alpha_used,
            "model_count": len(self.models),
            "models": sorted(self.models),
            "knowledge_elements": len(k_elems),
            "capability_elements": len(c_elems),
            "vocabulary_clusters": len(self.vocabulary.clusters),
            "other_share": (n_other / (members + n_other)) if (members + n_other) else 0.0,
        }


def _model_stats(
    model_id: str, corpus: IndexCorpus, canon: dict[str, TagSet], alpha: float
) -> ModelStats | None:
    rows = sorted((q, agg) for (m, q), agg in corpus.records.items() if m == model_id)
    if not rows:
        return None
    kc = element_contributions(((canon[q].knowledge, agg) for q, agg in rows), alpha)
    cc = element_contributions(((canon[q].capabilities, agg) for q, agg in rows), alpha)
    return ModelStats(
        knowledge={e: aggregate_element(v) for e, v in sorted(kc.items())},
        capability={e: aggregate_element(v) for e, v in sorted(cc.items())},
        overall_mean_score=fmean(agg.score for _, agg in rows),
        overall_mean_cost=fmean(agg.cost for _, agg in rows),
    )


def _canonical_queries(corpus: IndexCorpus, vocab: Vocabulary) -> dict[str, TagSet]:
    return {
        q: TagSet(canonical_knowledge(t.knowledge, vocab), t.capabilities)
        for q, t in corpus.queries.items()
    }


def build_index(
    corpus: IndexCorpus,
    vocab: Vocabulary,
    taxonomy: CapabilityTaxonomy = CapabilityTaxonomy(),
    alpha: float = 0.5,
    max_tags: int = DEFAULT_MAX_TAGS,
    version: int = 1,
) -> ScoreIndex:
    rank_weights(alpha, 1)  # validates alpha
    corpus.check()
    canon = _canonical_queries(corpus, vocab)
    models = {}
    for mid in corpus.model_ids():
        stats = _model_stats(mid, corpus, canon, alpha)
        if stats is None:
            log.warning("model %s has no records; skipped", mid)
            continue
        models[mid] = stats
    return ScoreIndex(vocab, taxonomy, alpha, models, version, max_tags)


def add_model(index: ScoreIndex, corpus_slice: IndexCorpus) -> ScoreIndex:
    """Profile new model(s) against the index corpus without touching existing stats."""
    new_ids = corpus_slice.model_ids()
    dupes = [m for m in new_ids if m in index.models]
    if dupes:
        raise Conflict(f"models already indexed: {dupes}")
    corpus_slice.check()
    canon = _canonical_queries(corpus_slice, index.vocabulary)
    models = dict(index.models)
    for mid in new_ids:
        models[mid] = _model_stats(mid, corpus_slice, canon, index.alpha_used)
    return replace(index, models=models, version=index.version + 1)


def refresh_knowledge(index: ScoreIndex, corpus: IndexCorpus, vocab: Vocabulary) -> ScoreIndex:
    """Swap in an updated vocabulary, recomputing only the knowledge elements it affects.

    A query is affected when its canonical knowledge list changes; every
    element appearing in an affected query (before or after) is rebuilt for
    every model, all other stats are carried over unchanged.
    """
    old = _canonical_queries(corpus, index.vocabulary)
    new = _canonical_queries(corpus, vocab)
    affected = set()
    for q in corpus.queries:
        if old[q].knowledge != new[q].knowledge:
            affected.update(old[q].knowledge)
            affected.update(new[q].knowledge)
    models = {}
    for mid, stats in index.models.items():
        rows = sorted((q, agg) for (m, q), agg in corpus.records.items() if m == mid)
        kc = element_contributions(
            ((tuple(e for e in new[q].knowledge), agg) for q, agg in rows), index.alpha_used
        )
        knowledge = {e: s for e, s in stats.knowledge.items() if e not in affected}
        for e in affected:
            if e in kc:
                knowledge[e] = aggregate_element(kc[e])
        models[mid] = replace(stats, knowledge=dict(sorted(knowledge.items())))
    return replace(index, vocabulary=vocab, models=models, version=index.version + 1)


# -- persistence ---------------------------------------------------------------


def _fmt_float(x: float) -> str:
    if not math.isfinite(x):
        raise FormatError(f"cannot serialize non-finite float {x!r}")
    s = format(x, ".17g")
    if not any(ch in s for ch in ".en"):
        s += ".0"
    return s


def _dump(obj, level=0) -> str:
    pad = "  " * (level + 1)
    end = "  " * level
    if isinstance(obj, bool) or obj is None:
        return json.dumps(obj)
    if isinstance(obj, float):
        return _fmt_float(obj)
    if isinstance(obj, (int, str)):
        return json.dumps(obj, ensure_ascii=False)
    if isinstance(obj, dict):
        if not obj:
            return "{}"
        items = [f"{pad}{json.dumps(str(k), ensure_ascii=False)}: {_dump(obj[k], level + 1)}"
                 for k in sorted(obj)]
        return "{\n" + ",\n".join(items) + "\n" + end + "}"
    if isinstance(obj, (list, tuple)):
        if not obj:
            return "[]"
        return "[\n" + ",\n".join(pad + _dump(v, level + 1) for v in obj) + "\n" + end + "]"
    raise FormatError(f"cannot serialize {type(obj).__name__}")


def _stat_dict(st: ElementStat) -> dict:
    return {"score_agg": st.score_agg, "cost_agg": st.cost_agg, "support": st.support}


def model_stats_dict(stats: ModelStats) -> dict:
    return {
        "knowledge_stats": {e: _stat_dict(s) for e, s in stats.knowledge.items()},
        "capability_stats": {e: _stat_dict(s) for e, s in stats.capability.items()},
        "overall_mean_score": stats.overall_mean_score,
        "overall_mean_cost": stats.overall_mean_cost,
    }


def index_to_dict(index: ScoreIndex) -> dict:
    return {
        "version": FORMAT_VERSION,
        "index_version": index.version,
        "alpha_used": float(index.alpha_used),
        "max_tags": index.max_tags,
        "taxonomy": list(index.taxonomy.names),
        "vocabulary": index.vocabulary.to_dict(),
        "models": {m: model_stats_dict(s) for m, s in index.models.items()},
    }


def dumps_index(index: ScoreIndex) -> str:
    return _dump(index_to_dict(index)) + "\n"


def dumps_model_stats(stats: ModelStats) -> str:
    """Canonical text of one model's stats; used for byte-identity checks."""
    return _dump(model_stats_dict(stats))


def _stat_from(d) -> ElementStat:
    support = d["support"]
    if isinstance(support, bool) or not isinstance(support, int) or support < 1:
        raise FormatError(f"invalid support {support!r}")
    return ElementStat(float(d["score_agg"]), float(d["cost_agg"]), support)


def index_from_dict(d: dict) -> ScoreIndex:
    if not isinstance(d, dict) or "version" not in d:
        raise FormatError("missing format version")
    if d["version"] != FORMAT_VERSION:
        raise VersionError(f"unsupported index format version {d['version']!r}")
    try:
        models = {
            m: ModelStats(
                knowledge={e: _stat_from(s) for e, s in md["knowledge_stats"].items()},
                capability={e: _stat_from(s) for e, s in md["capability_stats"].items()},
                overall_mean_score=float(md["overall_mean_score"]),
                overall_mean_cost=float(md["overall_mean_cost"]),
            )
            for m, md in d["models"].items()
        }
        return ScoreIndex(
            vocabulary=Vocabulary.from_dict(d["vocabulary"]),
            taxonomy=CapabilityTaxonomy(tuple(d["taxonomy"])),
            alpha_used=float(d["alpha_used"]),
            models=models,
            version=int(d["index_version"]),
            max_tags=int(d.get("max_tags", DEFAULT_MAX_TAGS)),
        )
    except FormatError:
        raise
    except (KeyError, TypeError, ValueError, AttributeError) as exc:
        raise FormatError(f"malformed index document: {exc!r}") from exc


def loads_index(text: str) -> ScoreIndex:
    try:
        d = json.loads(text)
    except json.JSONDecodeError as exc:
        raise FormatError(f"index file is not valid JSON: {exc}") from None
    return index_from_dict(d)


def save_index(index: ScoreIndex, path: str | os.PathLike) -> None:
    tmp = f"{path}.tmp"
    with open(tmp, "w", encoding="utf-8", newline="\n") as fh:
        fh.write(dumps_index(index))
    os.replace(tmp, path)


def load_index(path: str | os.PathLike) -> ScoreIndex:
    with open(path, encoding="utf-8") as fh:
        return loads_index(fh.read())


def normalize_tags_input(knowledge, capabilities) -> TagSet:
    """Best-effort TagSet from untrusted lists (used by the gateway and CLI)."""
    if not isinstance(knowledge, list) or not isinstance(capabilities, list):
        raise InvalidLabel("knowledge and capabilities must be lists")
    if not all(isinstance(x, str) for x in knowledge + capabilities):
        raise InvalidLabel("tags must be strings")
    return TagSet(tuple(knowledge), tuple(capabilities))
