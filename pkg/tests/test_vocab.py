import json

import httpx
import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from kcroute.core import OTHER
from kcroute.errors import EmbeddingUnavailable
from kcroute.vocab import (
    EmbeddingProvider,
    HttpEmbeddingProvider,
    build_vocabulary,
    canonicalize,
    stub_provider,
)


def occ(freqs):
    return [(lab, 1) for lab, n in freqs.items() for _ in range(n)]


def test_stub_provider_deterministic_unit_vectors():
    p = stub_provider(3)
    v1, v2 = p.embed("algebra"), p.embed("algebra")
    assert np.array_equal(v1, v2)
    for lab in ("algebra", "x", "organic chemistry"):
        assert abs(np.linalg.norm(p.embed(lab)) - 1) < 1e-9
    assert not np.array_equal(p.embed("algebra"), stub_provider(4).embed("algebra"))


def test_stub_provider_override():
    p = stub_provider(0, {("algebra", "linear algebra"): 0.8})
    assert p.similarity("algebra", "linear algebra") == 0.8
    assert p.similarity("linear algebra", "algebra") == 0.8
    m = p.similarity_matrix(["algebra", "linear algebra", "poetry"])
    assert m[0, 1] == m[1, 0] == 0.8
    assert abs(m[0, 2]) < 0.4


def test_synonyms_merge_under_most_frequent():
    p = stub_provider(0, {("algebra", "linear algebra"): 0.8})
    vocab = build_vocabulary(occ({"algebra": 12, "linear algebra": 11}), p)
    assert vocab.clusters == {"algebra": ("algebra", "linear algebra")}
    assert canonicalize(vocab, "linear algebra") == "algebra"
    assert canonicalize(vocab, "algebra") == "algebra"


def test_frequency_floor_sends_rare_label_to_other():
    vocab = build_vocabulary(occ({"algebra": 12, "numismatics": 3}), stub_provider(0), floor=10)
    assert "numismatics" in vocab.other_members
    assert canonicalize(vocab, "numismatics") == OTHER
    assert canonicalize(vocab, "xylography") == OTHER


def test_threshold_is_strict():
    p = stub_provider(0, {("a", "b"): 0.6})
    vocab = build_vocabulary(occ({"a": 10, "b": 10}), p, threshold=0.6)
    assert set(vocab.clusters) == {"a", "b"}


def test_cluster_total_frequency_counts_against_floor():
    # two rare synonyms together clear the floor
    p = stub_provider(0, {("calc", "calculus"): 0.9})
    vocab = build_vocabulary(occ({"calculus": 6, "calc": 5}), p, floor=10)
    assert vocab.clusters == {"calculus": ("calc", "calculus")}


def test_canonical_tie_break_is_lexicographic():
    p = stub_provider(0, {("beta", "alpha"): 0.9})
    vocab = build_vocabulary(occ({"beta": 10, "alpha": 10}), p)
    assert list(vocab.clusters) == ["alpha"]


def test_linkage_threshold_monotone_where_greedy_is_not():
    # b is close to a, c is close to b, c is far from a
    p = stub_provider(0, {("a", "b"): 0.7, ("b", "c"): 0.9})
    freqs = occ({"a": 30, "b": 20, "c": 10})
    greedy_low = build_vocabulary(freqs, p, 0.6, 1, method="greedy")
    greedy_high = build_vocabulary(freqs, p, 0.75, 1, method="greedy")
    assert greedy_low.canonical("b") != greedy_low.canonical("c")
    assert greedy_high.canonical("b") == greedy_high.canonical("c")  # new merge at higher threshold
    link_low = build_vocabulary(freqs, p, 0.6, 1)
    link_high = build_vocabulary(freqs, p, 0.75, 1)
    assert link_low.clusters == {"a": ("a", "b", "c")}
    assert link_high.clusters == {"a": ("a",), "b": ("b", "c")}


def test_provider_failure_aborts_build():
    class Broken(EmbeddingProvider):
        def embed(self, label):
            raise RuntimeError("down")

    with pytest.raises(EmbeddingUnavailable):
        build_vocabulary(occ({"a": 10}), Broken())


def test_round_trip_dict():
    p = stub_provider(0, {("algebra", "linear algebra"): 0.8})
    vocab = build_vocabulary(occ({"algebra": 12, "linear algebra": 11, "rare": 2}), p)
    from kcroute.vocab import Vocabulary

    assert Vocabulary.from_dict(json.loads(json.dumps(vocab.to_dict()))) == vocab


# -- fuzzed properties ------------------------------------------------------------

LABELS = [f"l{i}" for i in range(12)]


@st.composite
def fuzz_vocab_inputs(draw):
    freqs = draw(st.dictionaries(st.sampled_from(LABELS), st.integers(1, 15), min_size=1))
    pairs = draw(st.dictionaries(
        st.tuples(st.sampled_from(LABELS), st.sampled_from(LABELS)).filter(lambda t: t[0] != t[1]),
        st.floats(0.0, 1.0), max_size=20))
    return freqs, pairs


@settings(max_examples=100, deadline=None)
@given(fuzz_vocab_inputs(), st.randoms(use_true_random=False))
def test_partition_and_order_determinism(inp, rnd):
    freqs, pairs = inp
    p = stub_provider(0, pairs)
    occs = occ(freqs)
    v1 = build_vocabulary(occs, p)
    shuffled = list(occs)
    rnd.shuffle(shuffled)
    v2 = build_vocabulary(shuffled, p)
    assert v1 == v2
    seen = []
    for members in v1.clusters.values():
        seen.extend(members)
    seen.extend(v1.other_members)
    assert sorted(seen) == sorted(freqs)  # each raw label lands exactly once
    for lab in freqs:
        dest = canonicalize(v1, lab)
        assert dest == OTHER or lab in v1.clusters[dest]
    for lab in v1.other_members:
        assert freqs[lab] < v1.frequency_floor
    for canon, members in v1.clusters.items():
        assert canon == min(members, key=lambda m: (-freqs[m], m))


@settings(max_examples=100, deadline=None)
@given(fuzz_vocab_inputs(), st.floats(0.0, 1.0), st.floats(0.0, 1.0))
def test_raising_threshold_never_merges(inp, t1, t2):
    lo, hi = sorted((t1, t2))
    freqs, pairs = inp
    p = stub_provider(0, pairs)
    v_lo = build_vocabulary(occ(freqs), p, lo, floor=1)
    v_hi = build_vocabulary(occ(freqs), p, hi, floor=1)
    for a in freqs:
        for b in freqs:
            if v_hi.canonical(a) == v_hi.canonical(b):
                assert v_lo.canonical(a) == v_lo.canonical(b)


# -- http adapter -------------------------------------------------------------------


def _fake_embedder(calls):
    def handler(request):
        body = json.loads(request.content)
        calls.append(body["input"])
        assert request.headers["authorization"] == "Bearer k"
        data = [{"index": i, "embedding": [1.0, float(len(lab)), 0.5]} for i, lab in enumerate(body["input"])]
        return httpx.Response(200, json={"data": data})

    return httpx.Client(transport=httpx.MockTransport(handler))


def test_http_provider_caches_on_disk(tmp_path):
    calls = []
    cache = tmp_path / "emb.jsonl"
    p = HttpEmbeddingProvider("http://embed/v1/embeddings", "mini", "k", cache, _fake_embedder(calls))
    v = p.embed_many(["ab", "abc", "ab"])
    assert v.shape == (3, 3)
    assert abs(np.linalg.norm(v[1]) - 1) < 1e-12
    assert calls == [["ab", "abc"]]
    p.embed("ab")
    assert len(calls) == 1
    # a fresh provider reads the cache and never calls out
    calls2 = []
    p2 = HttpEmbeddingProvider("http://embed/v1/embeddings", "mini", "k", cache, _fake_embedder(calls2))
    assert np.allclose(p2.embed("abc"), v[1])
    assert calls2 == []
    lines = cache.read_text().splitlines()
    assert [json.loads(x)["label"] for x in lines] == ["ab", "abc"]


def test_http_provider_failure(monkeypatch):
    client = httpx.Client(transport=httpx.MockTransport(lambda r: httpx.Response(500)))
    p = HttpEmbeddingProvider("http://embed", client=client)
    with pytest.raises(EmbeddingUnavailable):
        build_vocabulary(occ({"a": 10}), p)
    monkeypatch.delenv("EMBED_API_URL", raising=False)
    with pytest.raises(EmbeddingUnavailable):
        HttpEmbeddingProvider.from_env()
