import json

import pytest

from kcroute.core import OTHER, EvalAggregate, TagSet
from kcroute.errors import Conflict, FormatError, ParseError, RangeError, VersionError
from kcroute.index import (
    IndexCorpus,
    add_model,
    build_index,
    dumps_index,
    dumps_model_stats,
    ingest_records,
    ingest_tags,
    load_index,
    loads_index,
    refresh_knowledge,
    save_index,
)
from kcroute.vocab import StubProvider, Vocabulary, build_vocabulary


def rec(m, q, scores, costs=None):
    return json.dumps({"model_id": m, "query_id": q, "trial_scores": scores,
                       "trial_costs": costs or [0.01] * len(scores)})


def ident_vocab(*labels):
    return Vocabulary(clusters={lab: (lab,) for lab in labels})


# -- ingest ------------------------------------------------------------------------


def test_ingest_averages_trials():
    c = ingest_records([rec("m", "q", [1, 0, 1, 1], [0.02] * 4)])
    agg = c.records[("m", "q")]
    assert agg.score == 0.75
    assert agg.cost == pytest.approx(0.02, abs=1e-15)
    assert ingest_records([rec("m", "q", [0.5])]).records[("m", "q")].score == 0.5


def test_ingest_pools_duplicate_lines():
    c = ingest_records([rec("m", "q", [1.0], [0.1]), rec("m", "q", [0.0, 0.0], [0.4, 0.4])])
    assert c.records[("m", "q")] == EvalAggregate(pytest.approx(1 / 3), pytest.approx(0.3))


def test_ingest_errors_carry_line_numbers():
    with pytest.raises(RangeError, match="line 2"):
        ingest_records([rec("m", "a", [1.0]), rec("m", "q", [1.2])])
    with pytest.raises(ParseError, match="line 1"):
        ingest_records(["{not json"])
    with pytest.raises(ParseError, match="fields"):
        ingest_records([json.dumps({"model_id": "m", "query_id": "q", "trial_scores": [1]})])
    with pytest.raises(ParseError, match="differ"):
        ingest_records([rec("m", "q", [1.0], [0.1, 0.2])])
    with pytest.raises(RangeError):
        ingest_records([rec("m", "q", [1.0], [-0.1])])
    with pytest.raises(ParseError, match="unknown query_id"):
        ingest_records([rec("m", "zz", [1.0])], {"q": TagSet()})


def test_ingest_tags_validates():
    lines = [json.dumps({"query_id": "q1", "knowledge": ["Math", "math", " Algebra"],
                         "capabilities": ["Reasoning", "Telepathy"]})]
    tags = ingest_tags(lines)
    assert tags["q1"] == TagSet(("math", "algebra"), ("reasoning",))
    with pytest.raises(ParseError, match="duplicate"):
        ingest_tags(lines * 2)
    with pytest.raises(ParseError):
        ingest_tags([json.dumps({"query_id": "q", "knowledge": "math", "capabilities": []})])


# -- build -------------------------------------------------------------------------


def test_single_query_identity():
    c = IndexCorpus({"q": TagSet(("k1",), ())}, {("m", "q"): EvalAggregate(0.8, 0.05)})
    idx = build_index(c, ident_vocab("k1"), alpha=0.5)
    st = idx.models["m"].knowledge["k1"]
    assert (st.score_agg, st.cost_agg, st.support) == (0.8, 0.05, 1)


def test_two_queries_same_element():
    c = IndexCorpus({"q1": TagSet(("k1",)), "q2": TagSet(("k1",))},
                    {("m", "q1"): EvalAggregate(0.8, 0), ("m", "q2"): EvalAggregate(0.4, 0)})
    idx = build_index(c, ident_vocab("k1"), alpha=0.5)
    assert idx.models["m"].knowledge["k1"].score_agg == pytest.approx(0.6, abs=1e-15)


def test_rank_weighted_contributions():
    c = IndexCorpus({"q": TagSet(("k1", "k2"))}, {("m", "q"): EvalAggregate(0.9, 0.3)})
    idx = build_index(c, ident_vocab("k1", "k2"), alpha=0.5)
    k = idx.models["m"].knowledge
    assert k["k1"].score_agg == pytest.approx(0.9 * 2 / 3, abs=1e-15)
    assert k["k2"].score_agg == pytest.approx(0.9 / 3, abs=1e-15)
    assert k["k2"].cost_agg == pytest.approx(0.1, abs=1e-15)


def test_other_bucket_and_canonical_dedupe():
    # two labels that both map to OTHER collapse into one rank
    c = IndexCorpus({"q": TagSet(("rare1", "k1", "rare2"))}, {("m", "q"): EvalAggregate(1.0, 0)})
    idx = build_index(c, ident_vocab("k1"), alpha=0.5)
    k = idx.models["m"].knowledge
    assert set(k) == {OTHER, "k1"}
    assert k[OTHER].score_agg == pytest.approx(2 / 3)


def test_support_matches_brute_force(fixture_corpus, fixture_index):
    vocab = fixture_index.vocabulary
    for mid, stats in fixture_index.models.items():
        answered = [q for (m, q) in fixture_corpus.records if m == mid]
        for e, st in stats.knowledge.items():
            n = sum(1 for q in answered
                    if e in {vocab.canonical(lab) for lab in fixture_corpus.queries[q].knowledge})
            assert st.support == n
        for e, st in stats.capability.items():
            assert st.support == sum(1 for q in answered if e in fixture_corpus.queries[q].capabilities)


def test_overall_means(fixture_corpus, fixture_index):
    for mid, stats in fixture_index.models.items():
        rows = [a for (m, _), a in fixture_corpus.records.items() if m == mid]
        assert stats.overall_mean_score == pytest.approx(sum(a.score for a in rows) / len(rows), abs=1e-15)


def test_rebuild_is_byte_identical(fixture_corpus):
    v = build_vocabulary(fixture_corpus.knowledge_occurrences(), StubProvider(0))
    a = dumps_index(build_index(fixture_corpus, v))
    b = dumps_index(build_index(fixture_corpus, v))
    assert a == b


# -- add_model ---------------------------------------------------------------------


def test_add_model_isolated_and_equivalent(fixture_corpus, fixture_index):
    base_models = ["atlas-large", "boreal-mini"]
    base = build_index(fixture_corpus.slice(base_models), fixture_index.vocabulary)
    before = {m: dumps_model_stats(s) for m, s in base.models.items()}
    grown = add_model(base, fixture_corpus.slice(["cirrus-pro"]))
    assert grown.version == base.version + 1
    assert sorted(grown.models) == sorted(fixture_index.models)
    for m, txt in before.items():
        assert dumps_model_stats(grown.models[m]) == txt
    assert grown.models == fixture_index.models


def test_add_model_partial_corpus(fixture_corpus, fixture_index):
    half = sorted(fixture_corpus.queries)[::2]
    sl = IndexCorpus(fixture_corpus.queries,
                     {("newbie", q): EvalAggregate(1.0, 0.5) for q in half})
    grown = add_model(fixture_index, sl)
    stats = grown.models["newbie"]
    vocab = fixture_index.vocabulary
    for e, st in stats.knowledge.items():
        carrying = [q for q in half
                    if e in {vocab.canonical(lab) for lab in fixture_corpus.queries[q].knowledge}]
        assert st.support == len(carrying)
    assert stats.overall_mean_score == 1.0


def test_add_existing_model_conflicts(fixture_corpus, fixture_index):
    with pytest.raises(Conflict):
        add_model(fixture_index, fixture_corpus.slice(["atlas-large"]))


# -- refresh -------------------------------------------------------------------------


def test_refresh_knowledge_only_touches_affected(fixture_corpus, fixture_index):
    occs = fixture_corpus.knowledge_occurrences()
    merged = build_vocabulary(occs, StubProvider(0, overrides={("algebra", "calculus"): 0.95}))
    refreshed = refresh_knowledge(fixture_index, fixture_corpus, merged)
    full = build_index(fixture_corpus, merged)
    assert refreshed.models == full.models
    assert refreshed.version == fixture_index.version + 1
    from kcroute.index import canonical_knowledge

    affected = set()
    for t in fixture_corpus.queries.values():
        before = canonical_knowledge(t.knowledge, fixture_index.vocabulary)
        after = canonical_knowledge(t.knowledge, merged)
        if before != after:
            affected |= set(before) | set(after)
    assert "calculus" in affected
    for m in fixture_index.models:
        old, new = fixture_index.models[m].knowledge, refreshed.models[m].knowledge
        assert len({"algebra", "calculus"} & set(new)) == 1
        for e in set(old) - affected:
            assert new[e] is old[e]


def test_refresh_keeps_unaffected_stat_objects():
    occs = ["a"] * 10 + ["b"] * 10 + ["c"] * 10
    queries = {"q1": TagSet(("a", "b")), "q2": TagSet(("c",)), "q3": TagSet(("b",))}
    records = {("m", q): EvalAggregate(0.5, 0.1) for q in queries}
    corpus = IndexCorpus(queries, records)
    v_old = build_vocabulary(occs, StubProvider(0))
    v_new = build_vocabulary(occs, StubProvider(0, overrides={("a", "b"): 0.9}))
    idx = build_index(corpus, v_old)
    ref = refresh_knowledge(idx, corpus, v_new)
    assert ref.models["m"].knowledge["c"] is idx.models["m"].knowledge["c"]
    assert "b" not in ref.models["m"].knowledge
    assert ref.models == build_index(corpus, v_new).models


# -- persistence -----------------------------------------------------------------------


def test_round_trip(tmp_path, fixture_index):
    p = tmp_path / "idx.json"
    save_index(fixture_index, p)
    loaded = load_index(p)
    assert loaded == fixture_index
    assert dumps_index(loaded) == p.read_text()


def test_golden_index_file_stable(fixtures_dir, fixture_index):
    golden = (fixtures_dir / "golden_index.json").read_text()
    assert dumps_index(fixture_index) == golden
    assert loads_index(golden) == fixture_index


def test_float_format_17_digits(fixture_index):
    text = dumps_index(fixture_index)
    assert '"alpha_used": 0.5' in text
    assert "0.38541666666666663" in text  # 17 significant digits


def test_version_gate_and_corruption(fixtures_dir):
    golden = (fixtures_dir / "golden_index.json").read_text()
    d = json.loads(golden)
    d["version"] = 999
    with pytest.raises(VersionError):
        loads_index(json.dumps(d))
    with pytest.raises(FormatError):
        loads_index(golden[: len(golden) // 2])
    del d["version"]
    with pytest.raises(FormatError):
        loads_index(json.dumps(d))
    d = json.loads(golden)
    del d["models"]
    with pytest.raises(FormatError):
        loads_index(json.dumps(d))
