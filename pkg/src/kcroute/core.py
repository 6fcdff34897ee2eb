"""Shared domain types: labels, tag sets, evaluation records, routing config."""

from __future__ import annotations

import logging
import math
import re
from dataclasses import dataclass, field
from statistics import fmean
from typing import Sequence

from .errors import InvalidConfig, InvalidLabel

log = logging.getLogger(__name__)

# Reserved knowledge element for low-frequency and unseen labels. Angle
# brackets keep it out of reach of anything normalize_label can produce
# from a real domain name.
OTHER = "<other>"

DEFAULT_MAX_TAGS = 10

DEFAULT_CAPABILITIES = (
    "Reasoning",
    "Comprehension",
    "Instruction Following",
    "Agentic",
    "Knowledge Retrieval",
    "Coding",
    "In-context Learning",
    "Multilingual",
)

_WS = re.compile(r"\s+")


def normalize_label(raw: str) -> str:
    """Lowercase, trim and collapse internal whitespace.

    >>> normalize_label(" Linear  Algebra ")
    'linear algebra'
    """
    if raw is None:
        raise InvalidLabel("label is None")
    out = _WS.sub(" ", str(raw).strip()).lower()
    if not out:
        raise InvalidLabel(f"empty label: {raw!r}")
    return out


@dataclass(frozen=True)
class CapabilityTaxonomy:
    names: tuple[str, ...] = DEFAULT_CAPABILITIES

    def __post_init__(self):
        if not self.names:
            raise InvalidConfig("capability taxonomy is empty")
        normed = [normalize_label(n) for n in self.names]
        if len(set(normed)) != len(normed):
            raise InvalidConfig(f"duplicate capability labels in {self.names!r}")
        object.__setattr__(self, "names", tuple(normed))

    def __contains__(self, label: str) -> bool:
        return label in self.names

    def __iter__(self):
        return iter(self.names)

    def __len__(self):
        return len(self.names)


@dataclass(frozen=True)
class TagSet:
    """Ranked knowledge and capability labels for one query (rank 1 first)."""

    knowledge: tuple[str, ...] = ()
    capabilities: tuple[str, ...] = ()

    def __post_init__(self):
        object.__setattr__(self, "knowledge", tuple(self.knowledge))
        object.__setattr__(self, "capabilities", tuple(self.capabilities))

    def to_dict(self) -> dict:
        return {"knowledge": list(self.knowledge), "capabilities": list(self.capabilities)}

    @classmethod
    def from_dict(cls, d: dict) -> "TagSet":
        return cls(tuple(d.get("knowledge") or ()), tuple(d.get("capabilities") or ()))


def _dedupe(labels: Sequence[str]) -> list[str]:
    seen = set()
    out = []
    for lab in labels:
        if lab not in seen:
            seen.add(lab)
            out.append(lab)
    return out


def validate_tagset(
    tags: TagSet,
    taxonomy: CapabilityTaxonomy,
    max_tags: int = DEFAULT_MAX_TAGS,
    diagnostics: list[str] | None = None,
) -> TagSet:
    """Lenient cleanup of a tag set.

    Labels are normalized, duplicates dropped (first occurrence wins),
    capabilities outside ``taxonomy`` dropped, and both lists truncated to
    ``max_tags``. Every dropped item is reported via ``diagnostics`` (if
    given) and the module logger; nothing raises.
    """
    if diagnostics is None:
        diagnostics = []

    def clean(labels):
        out = []
        for raw in labels:
            try:
                out.append(normalize_label(raw))
            except InvalidLabel:
                diagnostics.append(f"dropped empty label {raw!r}")
        return _dedupe(out)

    knowledge = clean(tags.knowledge)
    caps = []
    for c in clean(tags.capabilities):
        if c in taxonomy:
            caps.append(c)
        else:
            diagnostics.append(f"unknown capability {c!r} dropped")
    for name, lst in (("knowledge", knowledge), ("capabilities", caps)):
        if len(lst) > max_tags:
            diagnostics.append(f"{name} truncated from {len(lst)} to {max_tags}")
            del lst[max_tags:]
    for msg in diagnostics:
        log.warning("validate_tagset: %s", msg)
    return TagSet(tuple(knowledge), tuple(caps))


@dataclass(frozen=True)
class EvalAggregate:
    score: float
    cost: float


@dataclass(frozen=True)
class EvalRecord:
    model_id: str
    query_id: str
    trial_scores: tuple[float, ...]
    trial_costs: tuple[float, ...]

    def __post_init__(self):
        object.__setattr__(self, "trial_scores", tuple(float(s) for s in self.trial_scores))
        object.__setattr__(self, "trial_costs", tuple(float(c) for c in self.trial_costs))
        if not self.trial_scores:
            raise ValueError("trial_scores is empty")
        if len(self.trial_scores) != len(self.trial_costs):
            raise ValueError("trial_scores and trial_costs differ in length")

    def aggregate(self) -> EvalAggregate:
        return EvalAggregate(fmean(self.trial_scores), fmean(self.trial_costs))


@dataclass(frozen=True)
class RoutingConfig:
    alpha: float = 0.5
    beta: float = 0.0
    gamma: float = 1.0
    delta: float = 1.0

    def __post_init__(self):
        for name in ("alpha", "beta", "gamma", "delta"):
            v = getattr(self, name)
            if not isinstance(v, (int, float)) or not math.isfinite(v):
                raise InvalidConfig(f"{name} must be a finite number, got {v!r}")
        if self.alpha <= 0:
            raise InvalidConfig(f"alpha must be > 0, got {self.alpha}")
        if self.beta < 0 or self.gamma < 0 or self.delta < 0:
            raise InvalidConfig("beta, gamma and delta must be >= 0")
        if self.gamma + self.delta <= 0:
            raise InvalidConfig("gamma + delta must be > 0")

    def replace(self, **changes) -> "RoutingConfig":
        vals = {k: getattr(self, k) for k in ("alpha", "beta", "gamma", "delta")}
        vals.update({k: v for k, v in changes.items() if v is not None})
        return RoutingConfig(**vals)


@dataclass(frozen=True)
class ModelScoreBreakdown:
    knowledge_score: float
    capability_score: float
    mixed_score: float
    # beta-free cost terms, so that score(beta) = score(0) - beta * cost
    knowledge_cost: float = 0.0
    capability_cost: float = 0.0
    fallbacks_used: tuple[tuple[str, str], ...] = ()

    def cost_slope(self, gamma: float, delta: float) -> float:
        return gamma * self.knowledge_cost + delta * self.capability_cost


@dataclass(frozen=True)
class RoutingDecision:
    model_id: str
    breakdown: dict[str, ModelScoreBreakdown] = field(default_factory=dict)

    @property
    def chosen(self) -> ModelScoreBreakdown:
        return self.breakdown[self.model_id]
