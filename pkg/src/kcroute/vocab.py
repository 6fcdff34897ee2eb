"""Knowledge-label consolidation by embedding similarity plus a frequency floor."""

from __future__ import annotations

import hashlib
import json
import logging
import os
import threading
from collections import Counter
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable, Mapping

import numpy as np

from .core import OTHER, normalize_label
from .errors import EmbeddingUnavailable, InvalidConfig

log = logging.getLogger(__name__)

DEFAULT_SIMILARITY_THRESHOLD = 0.6
DEFAULT_FREQUENCY_FLOOR = 10


class EmbeddingProvider:
    """Maps a label to a unit-norm vector. Subclasses implement ``embed``."""

    def embed(self, label: str) -> np.ndarray:
        raise NotImplementedError

    def embed_many(self, labels: list[str]) -> np.ndarray:
        return np.stack([self.embed(lab) for lab in labels]) if labels else np.zeros((0, 0))

    def similarity(self, a: str, b: str) -> float:
        return float(self.embed(a) @ self.embed(b))

    def similarity_matrix(self, labels: list[str]) -> np.ndarray:
        if not labels:
            return np.zeros((0, 0))
        vecs = self.embed_many(labels)
        return vecs @ vecs.T


def _unit(v) -> np.ndarray:
    v = np.asarray(v, dtype=np.float64)
    n = np.linalg.norm(v)
    if not np.isfinite(n) or n == 0:
        raise EmbeddingUnavailable("embedding has zero or non-finite norm")
    return v / n


class StubProvider(EmbeddingProvider):
    """Deterministic hash-seeded unit vectors for offline tests.

    In 256 dimensions unrelated labels land near-orthogonal (cosine spread
    about 0.06), far below any sensible threshold. ``overrides`` pins the
    cosine for specific label pairs, e.g. ``{("algebra", "linear algebra"): 0.8}``.
    """

    def __init__(self, seed: int = 0, dim: int = 256, overrides: Mapping[tuple[str, str], float] | None = None):
        self.seed = seed
        self.dim = dim
        self.overrides = {
            frozenset((normalize_label(a), normalize_label(b))): float(v)
            for (a, b), v in (overrides or {}).items()
        }

    def embed(self, label: str) -> np.ndarray:
        digest = hashlib.sha256(f"{self.seed}\x00{label}".encode()).digest()
        rng = np.random.default_rng(int.from_bytes(digest[:8], "little"))
        return _unit(rng.standard_normal(self.dim))

    def similarity(self, a, b):
        key = frozenset((a, b))
        if key in self.overrides and a != b:
            return self.overrides[key]
        return super().similarity(a, b)

    def similarity_matrix(self, labels):
        sim = super().similarity_matrix(labels)
        if self.overrides:
            pos = {lab: i for i, lab in enumerate(labels)}
            for key, v in self.overrides.items():
                if len(key) == 2:
                    a, b = tuple(key)
                    if a in pos and b in pos:
                        sim[pos[a], pos[b]] = sim[pos[b], pos[a]] = v
        return sim


def stub_provider(seed: int = 0, overrides=None) -> StubProvider:
    return StubProvider(seed=seed, overrides=overrides)


class HttpEmbeddingProvider(EmbeddingProvider):
    """OpenAI-style ``/embeddings`` client with an append-only JSONL cache.

    Cache lines are ``{"label": ..., "vector": [...]}``; a label found in the
    cache is never requested again.
    """

    def __init__(self, url: str, model: str = "", api_key: str | None = None,
                 cache_path: str | os.PathLike | None = None, client=None, timeout: float = 30.0):
        import httpx

        self.url = url
        self.model = model
        self.api_key = api_key
        self.cache_path = Path(cache_path) if cache_path else None
        self._client = client or httpx.Client(timeout=timeout)
        self._cache: dict[str, np.ndarray] = {}
        self._lock = threading.Lock()
        if self.cache_path and self.cache_path.exists():
            for line in self.cache_path.read_text().splitlines():
                if line.strip():
                    rec = json.loads(line)
                    self._cache[rec["label"]] = _unit(rec["vector"])

    @classmethod
    def from_env(cls, cache_path=None, client=None):
        url = os.environ.get("EMBED_API_URL")
        if not url:
            raise EmbeddingUnavailable("EMBED_API_URL is not set")
        return cls(url, os.environ.get("EMBED_MODEL", ""), os.environ.get("EMBED_API_KEY"),
                   cache_path=cache_path, client=client)

    def _fetch(self, labels: list[str]) -> list[np.ndarray]:
        headers = {"Authorization": f"Bearer {self.api_key}"} if self.api_key else {}
        try:
            resp = self._client.post(self.url, json={"model": self.model, "input": labels}, headers=headers)
            resp.raise_for_status()
            data = resp.json()["data"]
            vecs = [_unit(item["embedding"]) for item in sorted(data, key=lambda d: d.get("index", 0))]
        except EmbeddingUnavailable:
            raise
        except Exception as exc:
            raise EmbeddingUnavailable(f"embedding request failed: {exc}") from exc
        if len(vecs) != len(labels):
            raise EmbeddingUnavailable(f"expected {len(labels)} embeddings, got {len(vecs)}")
        return vecs

    def embed_many(self, labels):
        with self._lock:
            missing = [lab for lab in dict.fromkeys(labels) if lab not in self._cache]
            if missing:
                vecs = self._fetch(missing)
                lines = []
                for lab, v in zip(missing, vecs):
                    self._cache[lab] = v
                    lines.append(json.dumps({"label": lab, "vector": v.tolist()}))
                if self.cache_path:
                    with self.cache_path.open("a") as fh:
                        fh.write("\n".join(lines) + "\n")
            if not labels:
                return np.zeros((0, 0))
            return np.stack([self._cache[lab] for lab in labels])

    def embed(self, label):
        return self.embed_many([label])[0]


@dataclass(frozen=True)
class Vocabulary:
    clusters: dict[str, tuple[str, ...]] = field(default_factory=dict)
    frequencies: dict[str, int] = field(default_factory=dict)
    other_members: frozenset[str] = frozenset()
    similarity_threshold: float = DEFAULT_SIMILARITY_THRESHOLD
    frequency_floor: int = DEFAULT_FREQUENCY_FLOOR

    def __post_init__(self):
        lookup = {}
        for canon, members in self.clusters.items():
            for m in members:
                lookup[m] = canon
        object.__setattr__(self, "_lookup", lookup)

    def canonical(self, label: str) -> str:
        return self._lookup.get(label, OTHER)

    def elements(self) -> list[str]:
        return sorted(self.clusters)

    def to_dict(self) -> dict:
        return {
            "clusters": {k: list(v) for k, v in sorted(self.clusters.items())},
            "frequencies": dict(sorted(self.frequencies.items())),
            "other_members": sorted(self.other_members),
            "thresholds": {
                "similarity": self.similarity_threshold,
                "frequency_floor": self.frequency_floor,
            },
        }

    @classmethod
    def from_dict(cls, d: dict) -> "Vocabulary":
        th = d.get("thresholds", {})
        return cls(
            clusters={k: tuple(v) for k, v in d["clusters"].items()},
            frequencies={k: int(v) for k, v in d.get("frequencies", {}).items()},
            other_members=frozenset(d.get("other_members", ())),
            similarity_threshold=float(th.get("similarity", DEFAULT_SIMILARITY_THRESHOLD)),
            frequency_floor=int(th.get("frequency_floor", DEFAULT_FREQUENCY_FLOOR)),
        )


def canonicalize(vocab: Vocabulary, label: str) -> str:
    """Cluster canonical for a member label; OTHER for filtered or unseen labels."""
    return vocab.canonical(label)


def _components(sim: np.ndarray, threshold: float) -> list[int]:
    n = sim.shape[0]
    parent = list(range(n))

    def find(i):
        while parent[i] != i:
            parent[i] = parent[parent[i]]
            i = parent[i]
        return i

    ii, jj = np.nonzero(np.triu(sim > threshold, k=1))
    for i, j in zip(ii.tolist(), jj.tolist()):
        ri, rj = find(i), find(j)
        if ri != rj:
            # smaller index (more frequent) stays root
            parent[max(ri, rj)] = min(ri, rj)
    return [find(i) for i in range(n)]


def _greedy(sim: np.ndarray, threshold: float) -> list[int]:
    reps: list[int] = []
    assign = []
    for i in range(sim.shape[0]):
        best, best_sim = None, threshold
        for r in reps:
            if sim[i, r] > best_sim:
                best, best_sim = r, sim[i, r]
        if best is None:
            reps.append(i)
            best = i
        assign.append(best)
    return assign


def build_vocabulary(
    tag_occurrences: Iterable[tuple[str, int]] | Iterable[str],
    provider: EmbeddingProvider,
    threshold: float = DEFAULT_SIMILARITY_THRESHOLD,
    floor: int = DEFAULT_FREQUENCY_FLOOR,
    method: str = "linkage",
) -> Vocabulary:
    """Cluster observed knowledge labels and fold rare clusters into OTHER.

    Distinct labels are ordered by descending frequency (ties lexicographic).
    ``method="linkage"`` (default) joins two labels whenever their cosine is
    strictly above ``threshold`` and takes connected components, which makes
    raising the threshold only ever split clusters. ``method="greedy"``
    assigns each label to the best-matching existing representative instead;
    it is cheaper to reason about per label but not threshold-monotone.

    Each cluster's canonical label is its most frequent member. Clusters whose
    summed frequency is below ``floor`` are dissolved into ``other_members``.
    """
    if method not in ("linkage", "greedy"):
        raise InvalidConfig(f"unknown clustering method {method!r}")
    freq: Counter[str] = Counter()
    for occ in tag_occurrences:
        label = occ[0] if isinstance(occ, tuple) else occ
        freq[label] += 1
    freq.pop(OTHER, None)
    labels = sorted(freq, key=lambda lab: (-freq[lab], lab))
    try:
        sim = np.asarray(provider.similarity_matrix(labels), dtype=np.float64)
    except EmbeddingUnavailable:
        raise
    except Exception as exc:
        raise EmbeddingUnavailable(f"embedding provider failed: {exc}") from exc
    if labels and sim.shape != (len(labels), len(labels)):
        raise EmbeddingUnavailable(f"similarity matrix has shape {sim.shape}")

    roots = _components(sim, threshold) if method == "linkage" else _greedy(sim, threshold)
    groups: dict[int, list[str]] = {}
    for i, r in enumerate(roots):
        groups.setdefault(r, []).append(labels[i])

    clusters = {}
    other = set()
    for members in groups.values():
        # members already in (-freq, label) order, so members[0] is canonical
        if sum(freq[m] for m in members) < floor:
            other.update(members)
        else:
            clusters[members[0]] = tuple(sorted(members))
    return Vocabulary(
        clusters=dict(sorted(clusters.items())),
        frequencies=dict(sorted(freq.items())),
        other_members=frozenset(other),
        similarity_threshold=threshold,
        frequency_floor=floor,
    )
