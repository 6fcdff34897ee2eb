"""Offline evaluation: trace replay, cost sweeps, dynamic pools and synthetic workloads."""

from __future__ import annotations

import csv
import io
import json
import math
import random
from dataclasses import dataclass, field
from statistics import fmean
from typing import Callable, Iterable, Sequence

import numpy as np

from .core import CapabilityTaxonomy, EvalAggregate, RoutingConfig, TagSet, normalize_label
from .errors import EmptyInput, InvalidConfig, ParseError, TraceError
from .index import IndexCorpus, ScoreIndex, add_model, build_index, dumps_model_stats
from .scoring import rank_weights, route
from .vocab import StubProvider, build_vocabulary

ROUTING_KINDS = ("mixed", "knowledge_only", "capability_only")
STRATEGY_KINDS = ROUTING_KINDS + ("random", "fixed", "oracle")

CSV_COLUMNS = [
    "benchmark", "strategy", "beta", "routed_score", "best_single",
    "performance_ratio", "routed_cost", "cost_ratio",
]
ALL_BENCHMARKS = "all"


@dataclass(frozen=True)
class Outcome:
    score: float
    cost: float


@dataclass(frozen=True)
class TraceEntry:
    query_id: str
    tags: TagSet
    benchmark: str
    tagging_cost: float
    outcomes: dict[str, Outcome]

    def to_dict(self) -> dict:
        return {
            "query_id": self.query_id,
            "tags": self.tags.to_dict(),
            "benchmark": self.benchmark,
            "tagging_cost": self.tagging_cost,
            "outcomes": {m: {"score": o.score, "cost": o.cost} for m, o in sorted(self.outcomes.items())},
        }


@dataclass(frozen=True)
class TraceSet:
    entries: tuple[TraceEntry, ...] = ()

    def models(self) -> list[str]:
        if not self.entries:
            return []
        common = set(self.entries[0].outcomes)
        for e in self.entries[1:]:
            common &= set(e.outcomes)
        return sorted(common)

    def benchmarks(self) -> list[str]:
        return sorted({e.benchmark for e in self.entries})

    def dumps(self) -> str:
        return "".join(json.dumps(e.to_dict(), sort_keys=True) + "\n" for e in self.entries)


def load_trace(lines: Iterable[str]) -> TraceSet:
    entries = []
    for n, line in enumerate(lines, start=1):
        if not line.strip():
            continue
        try:
            d = json.loads(line)
            outcomes = {}
            for m, o in d["outcomes"].items():
                s, c = float(o["score"]), float(o["cost"])
                if not 0.0 <= s <= 1.0 or c < 0:
                    raise ParseError(f"outcome for {m!r} out of range", n)
                outcomes[m] = Outcome(s, c)
            entries.append(TraceEntry(
                query_id=str(d["query_id"]),
                tags=TagSet.from_dict(d["tags"]),
                benchmark=str(d.get("benchmark", "default")),
                tagging_cost=float(d.get("tagging_cost", 0.0)),
                outcomes=outcomes,
            ))
        except ParseError:
            raise
        except (json.JSONDecodeError, KeyError, TypeError, ValueError, AttributeError) as exc:
            raise ParseError(f"malformed trace entry: {exc!r}", n) from None
    return TraceSet(tuple(entries))


# -- strategies ----------------------------------------------------------------


@dataclass(frozen=True)
class Strategy:
    kind: str = "mixed"
    seed: int = 0
    model: str | None = None

    def __post_init__(self):
        if self.kind not in STRATEGY_KINDS:
            raise InvalidConfig(f"unknown strategy {self.kind!r}")
        if self.kind == "fixed" and not self.model:
            raise InvalidConfig("fixed strategy needs a model id")

    @classmethod
    def parse(cls, text: str) -> "Strategy":
        """``mixed``, ``random:7`` or ``fixed:<model id>``."""
        kind, _, arg = text.partition(":")
        if kind == "random":
            return cls("random", seed=int(arg) if arg else 0)
        if kind == "fixed":
            return cls("fixed", model=arg or None)
        return cls(kind)

    @property
    def name(self) -> str:
        if self.kind == "random":
            return f"random:{self.seed}"
        if self.kind == "fixed":
            return f"fixed:{self.model}"
        return self.kind

    def config_for(self, config: RoutingConfig) -> RoutingConfig:
        if self.kind == "knowledge_only":
            return config.replace(delta=0.0)
        if self.kind == "capability_only":
            return config.replace(gamma=0.0)
        return config


@dataclass(frozen=True)
class BenchmarkReport:
    routed_score: float
    best_single_model_id: str
    best_single_score: float
    performance_ratio: float
    routed_cost: float
    best_single_cost: float
    cost_ratio: float
    selection_counts: dict[str, int]
    single_scores: dict[str, float] = field(default_factory=dict)


@dataclass(frozen=True)
class HarnessReport:
    strategy: str
    beta: float
    pool: tuple[str, ...]
    benchmarks: dict[str, BenchmarkReport]
    choices: dict[str, str]
    # gamma*knowledge_cost + delta*capability_cost of the chosen model, routing strategies only
    cost_slopes: dict[str, float] = field(default_factory=dict)

    def rows(self) -> list[dict]:
        out = []
        for b, r in self.benchmarks.items():
            row = {
                "benchmark": b, "strategy": self.strategy, "beta": self.beta,
                "routed_score": r.routed_score, "best_single": r.best_single_score,
                "performance_ratio": r.performance_ratio, "routed_cost": r.routed_cost,
                "cost_ratio": r.cost_ratio,
            }
            row.update({m: r.selection_counts.get(m, 0) for m in self.pool})
            out.append(row)
        return out

    def summary(self) -> dict:
        return {
            "strategy": self.strategy,
            "beta": self.beta,
            "pool": list(self.pool),
            "benchmarks": {
                b: {
                    "routed_score": r.routed_score,
                    "best_single_model_id": r.best_single_model_id,
                    "best_single_score": r.best_single_score,
                    "performance_ratio": r.performance_ratio,
                    "routed_cost": r.routed_cost,
                    "best_single_cost": r.best_single_cost,
                    "cost_ratio": r.cost_ratio,
                    "selection_counts": dict(sorted(r.selection_counts.items())),
                    "single_scores": dict(sorted(r.single_scores.items())),
                }
                for b, r in self.benchmarks.items()
            },
        }


def _ratio(num: float, den: float) -> float:
    return 100.0 * num / den if den else math.nan


def _check_coverage(trace: TraceSet, pool: Sequence[str]):
    for e in trace.entries:
        gap = [m for m in pool if m not in e.outcomes]
        if gap:
            raise TraceError(f"entry {e.query_id!r} lacks outcomes for {gap}")


def _per_benchmark(entries: list[TraceEntry], picks: list[str], pool, include_tagging) -> BenchmarkReport:
    singles = {m: fmean(e.outcomes[m].score for e in entries) for m in pool}
    best = min(pool, key=lambda m: (-singles[m], m))
    routed_score = fmean(e.outcomes[p].score for e, p in zip(entries, picks))
    routed_cost = math.fsum(e.outcomes[p].cost for e, p in zip(entries, picks))
    if include_tagging:
        routed_cost += math.fsum(e.tagging_cost for e in entries)
    best_cost = math.fsum(e.outcomes[best].cost for e in entries)
    counts = {m: 0 for m in pool}
    for p in picks:
        counts[p] += 1
    return BenchmarkReport(
        routed_score=routed_score,
        best_single_model_id=best,
        best_single_score=singles[best],
        performance_ratio=_ratio(routed_score, singles[best]),
        routed_cost=routed_cost,
        best_single_cost=best_cost,
        cost_ratio=_ratio(routed_cost, best_cost),
        selection_counts=counts,
        single_scores=singles,
    )


def replay(
    trace: TraceSet,
    index: ScoreIndex,
    config: RoutingConfig = RoutingConfig(),
    strategy: Strategy | str = "mixed",
    pool: Sequence[str] | None = None,
) -> HarnessReport:
    """Route every trace entry and score the choices against recorded outcomes.

    Routing strategies are charged the per-entry tagging cost; the random,
    fixed and oracle baselines are not. An ``all`` row is added when the
    trace spans more than one benchmark.
    """
    if isinstance(strategy, str):
        strategy = Strategy.parse(strategy)
    if not trace.entries:
        raise EmptyInput("trace is empty")
    pool = tuple(sorted(index.models if pool is None else set(pool)))
    _check_coverage(trace, pool)
    if strategy.kind == "fixed" and strategy.model not in pool:
        raise TraceError(f"fixed model {strategy.model!r} is not in the pool")

    cfg = strategy.config_for(config)
    rng = random.Random(strategy.seed)
    picks, slopes = [], {}
    for e in trace.entries:
        if strategy.kind in ROUTING_KINDS:
            d = route(index, e.tags, cfg, pool)
            picks.append(d.model_id)
            slopes[e.query_id] = d.chosen.cost_slope(cfg.gamma, cfg.delta)
        elif strategy.kind == "random":
            picks.append(rng.choice(pool))
        elif strategy.kind == "fixed":
            picks.append(strategy.model)
        else:
            picks.append(min(pool, key=lambda m: (-e.outcomes[m].score, m)))

    include_tagging = strategy.kind in ROUTING_KINDS
    groups: dict[str, list[int]] = {}
    for i, e in enumerate(trace.entries):
        groups.setdefault(e.benchmark, []).append(i)
    benchmarks = {}
    for b in sorted(groups):
        idx = groups[b]
        benchmarks[b] = _per_benchmark([trace.entries[i] for i in idx], [picks[i] for i in idx],
                                       pool, include_tagging)
    if len(groups) > 1:
        benchmarks[ALL_BENCHMARKS] = _per_benchmark(list(trace.entries), picks, pool, include_tagging)
    return HarnessReport(
        strategy=strategy.name,
        beta=cfg.beta,
        pool=pool,
        benchmarks=benchmarks,
        choices={e.query_id: p for e, p in zip(trace.entries, picks)},
        cost_slopes=slopes,
    )


def overall_score(report: HarnessReport) -> float:
    key = ALL_BENCHMARKS if ALL_BENCHMARKS in report.benchmarks else next(iter(report.benchmarks))
    return report.benchmarks[key].routed_score


@dataclass(frozen=True)
class SweepPoint:
    beta: float
    report: HarnessReport

    @property
    def mean_cost_slope(self) -> float:
        return fmean(self.report.cost_slopes.values()) if self.report.cost_slopes else 0.0


def beta_sweep(
    trace: TraceSet,
    index: ScoreIndex,
    config: RoutingConfig = RoutingConfig(),
    betas: Sequence[float] = (0.0,),
    strategy: Strategy | str = "mixed",
    pool: Sequence[str] | None = None,
) -> list[SweepPoint]:
    betas = [float(b) for b in betas]
    if not betas:
        raise InvalidConfig("beta grid is empty")
    if any(b < 0 for b in betas) or any(b2 < b1 for b1, b2 in zip(betas, betas[1:])):
        raise InvalidConfig("beta grid must be non-negative and ascending")
    return [SweepPoint(b, replay(trace, index, config.replace(beta=b), strategy, pool)) for b in betas]


@dataclass(frozen=True)
class PoolStep:
    pool: tuple[str, ...]
    added: str
    report: HarnessReport
    routed_score: float
    single_scores: dict[str, float]
    stats_unchanged: bool


def dynamic_pool_experiment(
    trace: TraceSet,
    index: ScoreIndex,
    config: RoutingConfig = RoutingConfig(),
    pool_sequence: Sequence[str] = (),
    corpus: IndexCorpus | None = None,
) -> list[PoolStep]:
    """Grow the candidate pool one model at a time and replay at every step.

    Models missing from ``index`` are profiled from ``corpus`` via
    :func:`kcroute.index.add_model`; each step checks that the stats of models
    already indexed are byte-identical before and after the addition.
    """
    if not pool_sequence:
        raise InvalidConfig("pool sequence is empty")
    steps = []
    current = index
    for i, mid in enumerate(pool_sequence):
        before = {m: dumps_model_stats(s) for m, s in current.models.items()}
        if mid not in current.models:
            if corpus is None:
                raise TraceError(f"model {mid!r} not in index and no corpus given")
            current = add_model(current, corpus.slice([mid]))
        unchanged = all(dumps_model_stats(current.models[m]) == txt for m, txt in before.items())
        pool = tuple(pool_sequence[: i + 1])
        rep = replay(trace, current, config, "mixed", pool)
        singles = {m: fmean(e.outcomes[m].score for e in trace.entries) for m in pool}
        steps.append(PoolStep(tuple(sorted(pool)), mid, rep,
                              fmean(e.outcomes[rep.choices[e.query_id]].score for e in trace.entries),
                              singles, unchanged))
    return steps


# -- domain distribution ---------------------------------------------------------


@dataclass(frozen=True)
class DomainDistribution:
    percentages: dict[str, float]
    scores: dict[str, float]


def domain_distribution(
    tag_lists: Iterable[Sequence[str]], weights: Callable[[int], float] | None = None
) -> DomainDistribution:
    """Rank-weighted share of each domain; rank r counts ``weights(r)`` (default 1/r)."""
    weights = weights or (lambda r: 1.0 / r)
    parts: dict[str, list[float]] = {}
    for lst in tag_lists:
        for r, dom in enumerate(lst, start=1):
            parts.setdefault(dom, []).append(weights(r))
    if not parts:
        raise EmptyInput("no domain labels given")
    scores = {d: math.fsum(v) for d, v in sorted(parts.items())}
    total = math.fsum(scores.values())
    if total <= 0:
        raise EmptyInput("domain weights sum to zero")
    return DomainDistribution({d: 100.0 * s / total for d, s in scores.items()}, scores)


# -- synthetic workloads ---------------------------------------------------------


@dataclass(frozen=True)
class SyntheticSpec:
    models: tuple[str, ...]
    domains: tuple[str, ...]
    expertise: tuple[tuple[float, ...], ...]  # [model][domain] success probability
    n_index: int = 2000
    n_trace: int = 1000
    seed: int = 0
    max_knowledge: int = 1
    alpha: float = 0.5
    costs: tuple[float, ...] | None = None
    trials: int = 1
    tagging_cost: float = 0.0
    benchmark: str = "synthetic"
    taxonomy: CapabilityTaxonomy = CapabilityTaxonomy()

    def __post_init__(self):
        ex = np.asarray(self.expertise, dtype=float)
        if ex.shape != (len(self.models), len(self.domains)):
            raise InvalidConfig(f"expertise shape {ex.shape} != models x domains")
        if ((ex < 0) | (ex > 1)).any():
            raise InvalidConfig("expertise values must lie in [0, 1]")
        if self.costs is not None and len(self.costs) != len(self.models):
            raise InvalidConfig("costs must have one entry per model")
        if not 1 <= self.max_knowledge <= len(self.domains):
            raise InvalidConfig("max_knowledge must be in 1..len(domains)")


def planted_spec(n_models=4, diag=0.9, off=0.5, **kw) -> SyntheticSpec:
    """Each model is the expert on exactly one domain."""
    models = tuple(f"model-{chr(ord('a') + i)}" for i in range(n_models))
    domains = tuple(f"domain {chr(ord('a') + i)}" for i in range(n_models))
    expertise = tuple(tuple(diag if i == j else off for j in range(n_models)) for i in range(n_models))
    return SyntheticSpec(models, domains, expertise, **kw)


def generate_synthetic(spec: SyntheticSpec) -> tuple[IndexCorpus, TraceSet]:
    """Reproducible (index corpus, held-out trace) pair.

    Each query gets 1..max_knowledge distinct ranked domains and one or two
    capabilities. A model succeeds on a trial with probability equal to the
    rank-weighted mean of its expertise over the query's domains.
    """
    rng = np.random.default_rng(spec.seed)
    ex = np.asarray(spec.expertise, dtype=float)
    costs = spec.costs or tuple(1.0 for _ in spec.models)
    domains = [normalize_label(d) for d in spec.domains]
    caps = list(spec.taxonomy.names)

    def draw_query():
        k = int(rng.integers(1, spec.max_knowledge + 1))
        dom_idx = rng.choice(len(domains), size=k, replace=False)
        n_caps = int(rng.integers(1, 3))
        cap_idx = rng.choice(len(caps), size=n_caps, replace=False)
        w = np.asarray(rank_weights(spec.alpha, k))
        p = ex[:, dom_idx] @ w
        tags = TagSet(tuple(domains[i] for i in dom_idx), tuple(caps[i] for i in cap_idx))
        return tags, p

    queries, records = {}, {}
    for i in range(spec.n_index):
        qid = f"q{i:05d}"
        tags, p = draw_query()
        queries[qid] = tags
        for m, mid in enumerate(spec.models):
            wins = rng.random(spec.trials) < p[m]
            records[(mid, qid)] = EvalAggregate(float(wins.mean()), float(costs[m]))
    corpus = IndexCorpus(queries, dict(sorted(records.items())))

    entries = []
    for i in range(spec.n_trace):
        tags, p = draw_query()
        draws = rng.random(len(spec.models)) < p
        outcomes = {mid: Outcome(float(draws[m]), float(costs[m])) for m, mid in enumerate(spec.models)}
        entries.append(TraceEntry(f"t{i:05d}", tags, spec.benchmark, spec.tagging_cost, outcomes))
    return corpus, TraceSet(tuple(entries))


def synthetic_index(
    corpus: IndexCorpus, alpha: float = 0.5, models: Sequence[str] | None = None, floor: int = 10
) -> ScoreIndex:
    """Index a synthetic corpus with a stub embedder (domain names never merge)."""
    vocab = build_vocabulary(corpus.knowledge_occurrences(), StubProvider(0), floor=floor)
    if models is not None:
        corpus = corpus.slice(models)
    return build_index(corpus, vocab, CapabilityTaxonomy(), alpha)


def corpus_to_lines(corpus: IndexCorpus) -> tuple[list[str], list[str]]:
    """(records lines, tags lines) in the index_store file formats."""
    recs = [
        json.dumps({"model_id": m, "query_id": q, "trial_scores": [a.score], "trial_costs": [a.cost]})
        for (m, q), a in sorted(corpus.records.items())
    ]
    tags = [
        json.dumps({"query_id": q, "knowledge": list(t.knowledge), "capabilities": list(t.capabilities)})
        for q, t in sorted(corpus.queries.items())
    ]
    return recs, tags


# -- output -------------------------------------------------------------------------


def reports_to_csv(reports: Sequence[HarnessReport], extra: Sequence[dict] | None = None) -> str:
    """Sorted CSV of report rows; ``extra`` adds per-report trailing columns."""
    models = sorted({m for r in reports for m in r.pool})
    extra_cols = sorted({k for d in (extra or []) for k in d})
    rows = []
    for i, rep in enumerate(reports):
        for row in rep.rows():
            row = {**{m: 0 for m in models}, **row}
            if extra:
                row.update(extra[i])
            rows.append(row)
    rows.sort(key=lambda r: (r["benchmark"], r["strategy"], r["beta"]))
    buf = io.StringIO()
    w = csv.DictWriter(buf, fieldnames=CSV_COLUMNS + models + extra_cols, lineterminator="\n")
    w.writeheader()
    for row in rows:
        w.writerow({k: (repr(v) if isinstance(v, float) else v) for k, v in row.items()})
    return buf.getvalue()
