"""Rank-weighted element scores, corpus aggregates, KS/CS and the routing argmax.

Everything here is a pure function over immutable inputs. Stored aggregates
keep the score part and the cost part apart; the cost penalty ``beta`` is
applied only at query time, which is exact because every formula is affine
in ``beta``.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from statistics import fmean
from typing import Iterable, Mapping, Sequence

from .core import (
    OTHER,
    EvalAggregate,
    ModelScoreBreakdown,
    RoutingConfig,
    RoutingDecision,
    TagSet,
)
from .errors import AlphaMismatch, ElementUnsupported, EmptyPool, InvalidConfig, UnknownModel

# fallback kinds reported in ModelScoreBreakdown.fallbacks_used
FALLBACK_OTHER = "other"
FALLBACK_OVERALL = "overall_mean"
FALLBACK_ZERO = "zero"


def rank_weights(alpha: float, length: int) -> list[float]:
    """Normalized geometric rank weights ``alpha**(j-1) / sum_m alpha**(m-1)``."""
    if not (isinstance(alpha, (int, float)) and math.isfinite(alpha)) or alpha <= 0:
        raise InvalidConfig(f"alpha must be > 0, got {alpha!r}")
    if length < 1:
        raise InvalidConfig(f"length must be >= 1, got {length}")
    raw = [alpha**j for j in range(length)]
    total = math.fsum(raw)
    return [r / total for r in raw]


def per_query_element_score(
    agg: EvalAggregate, tags: Sequence[str], element: str, alpha: float, beta: float
) -> float:
    """Contribution of one query to ``element``: ``(score - beta*cost) * w_rank``, or 0."""
    try:
        j = list(tags).index(element)
    except ValueError:
        return 0.0
    w = rank_weights(alpha, len(tags))[j]
    return (agg.score - beta * agg.cost) * w


@dataclass(frozen=True)
class ElementStat:
    score_agg: float
    cost_agg: float
    support: int

    def value(self, beta: float) -> float:
        return self.score_agg - beta * self.cost_agg


def aggregate_element(contributions: Sequence[tuple[float, float]]) -> ElementStat:
    """Mean of per-query (score_part, cost_part) over the queries that carry the element."""
    if not contributions:
        raise ElementUnsupported("element has no supporting queries")
    return ElementStat(
        fmean(c[0] for c in contributions),
        fmean(c[1] for c in contributions),
        len(contributions),
    )


def element_contributions(
    queries: Iterable[tuple[Sequence[str], EvalAggregate]], alpha: float
) -> dict[str, list[tuple[float, float]]]:
    """Group rank-weighted (score, cost) parts by element, in corpus order.

    ``queries`` yields (ranked element list, aggregate) per corpus query.
    """
    out: dict[str, list[tuple[float, float]]] = {}
    for labels, agg in queries:
        if not labels:
            continue
        ws = rank_weights(alpha, len(labels))
        for lab, w in zip(labels, ws):
            out.setdefault(lab, []).append((agg.score * w, agg.cost * w))
    return out


@dataclass(frozen=True)
class Fallback:
    """Where to look when a (model, element) stat is missing.

    The chain is: the element itself, then ``other`` (the model's OTHER
    bucket), then ``overall`` (the model's mean raw score and cost), then 0.
    A field left as ``None`` removes that step.
    """

    other: ElementStat | None = None
    overall: tuple[float, float] | None = None


def _resolve(stats: Mapping[str, ElementStat], element: str, fallback: Fallback):
    st = stats.get(element)
    if st is not None:
        return st.score_agg, st.cost_agg, None
    if fallback.other is not None and element != OTHER:
        return fallback.other.score_agg, fallback.other.cost_agg, FALLBACK_OTHER
    if fallback.overall is not None:
        return fallback.overall[0], fallback.overall[1], FALLBACK_OVERALL
    return 0.0, 0.0, FALLBACK_ZERO


def weighted_score(
    stats: Mapping[str, ElementStat],
    tags: Sequence[str],
    alpha: float,
    beta: float,
    fallback: Fallback = Fallback(),
) -> tuple[float, float, list[tuple[str, str]]]:
    """Return (score, beta-free cost term, fallbacks_used) for a ranked element list."""
    if not tags:
        return 0.0, 0.0, []
    ws = rank_weights(alpha, len(tags))
    used = []
    score = 0.0
    cost = 0.0
    for lab, w in zip(tags, ws):
        s, c, kind = _resolve(stats, lab, fallback)
        if kind is not None:
            used.append((lab, kind))
        score += (s - beta * c) * w
        cost += c * w
    return score, cost, used


def knowledge_score(stats, tags, alpha, beta, fallback=Fallback()):
    """KS: rank-weighted sum of a model's knowledge aggregates for a query's knowledge tags."""
    score, _, used = weighted_score(stats, tags, alpha, beta, fallback)
    return score, used


def capability_score(stats, tags, alpha, beta, fallback=Fallback()):
    score, _, used = weighted_score(stats, tags, alpha, beta, fallback)
    return score, used


@dataclass(frozen=True)
class ModelStats:
    knowledge: dict[str, ElementStat] = field(default_factory=dict)
    capability: dict[str, ElementStat] = field(default_factory=dict)
    overall_mean_score: float = 0.0
    overall_mean_cost: float = 0.0

    def fallback(self) -> Fallback:
        return Fallback(
            other=self.knowledge.get(OTHER),
            overall=(self.overall_mean_score, self.overall_mean_cost),
        )

    def breakdown(self, tags: TagSet, config: RoutingConfig) -> ModelScoreBreakdown:
        fb = self.fallback()
        ks, kc, kused = weighted_score(self.knowledge, tags.knowledge, config.alpha, config.beta, fb)
        # capabilities have no OTHER bucket; skip straight to the overall mean
        cfb = Fallback(overall=fb.overall)
        cs, cc, cused = weighted_score(self.capability, tags.capabilities, config.alpha, config.beta, cfb)
        return ModelScoreBreakdown(
            knowledge_score=ks,
            capability_score=cs,
            mixed_score=config.gamma * ks + config.delta * cs,
            knowledge_cost=kc,
            capability_cost=cc,
            fallbacks_used=tuple(kused + cused),
        )


def argmax_model(breakdown: Mapping[str, ModelScoreBreakdown]) -> str:
    """Highest mixed score; exact ties go to the lexicographically smallest id."""
    best = None
    for mid in sorted(breakdown):
        if best is None or breakdown[mid].mixed_score > breakdown[best].mixed_score:
            best = mid
    return best


def route(
    index,
    tags: TagSet,
    config: RoutingConfig = RoutingConfig(),
    pool: Iterable[str] | None = None,
    allow_alpha_mismatch: bool = False,
) -> RoutingDecision:
    """Pick the pool model maximizing ``gamma*KS + delta*CS``.

    ``index`` is a :class:`kcroute.index.ScoreIndex`. Knowledge tags are
    canonicalized through the index vocabulary first (idempotent on
    already-canonical tags). ``pool`` defaults to every indexed model.
    """
    if not allow_alpha_mismatch and config.alpha != index.alpha_used:
        raise AlphaMismatch(f"config alpha {config.alpha} != index alpha {index.alpha_used}")
    pool = sorted(index.models) if pool is None else sorted(set(pool))
    if not pool:
        raise EmptyPool("routing pool is empty")
    missing = [m for m in pool if m not in index.models]
    if missing:
        raise UnknownModel(f"models not in index: {missing}")
    tags = index.prepare_tags(tags)
    breakdown = {m: index.models[m].breakdown(tags, config) for m in pool}
    return RoutingDecision(argmax_model(breakdown), breakdown)
