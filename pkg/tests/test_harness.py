import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from kcroute.core import RoutingConfig
from kcroute.errors import EmptyInput, InvalidConfig, TraceError
from kcroute.harness import (
    Strategy,
    SyntheticSpec,
    TraceEntry,
    TraceSet,
    beta_sweep,
    domain_distribution,
    dynamic_pool_experiment,
    generate_synthetic,
    load_trace,
    overall_score,
    planted_spec,
    replay,
    reports_to_csv,
    synthetic_index,
)
from kcroute.index import dumps_index


@pytest.fixture(scope="module")
def planted():
    spec = planted_spec(n_index=800, n_trace=300, seed=11, costs=(4.0, 2.0, 1.0, 0.5), tagging_cost=0.01)
    corpus, trace = generate_synthetic(spec)
    return spec, corpus, trace, synthetic_index(corpus)


# -- trace files -------------------------------------------------------------------


def test_trace_round_trip(planted):
    _, _, trace, _ = planted
    again = load_trace(trace.dumps().splitlines())
    assert again == trace


def test_trace_parse_errors():
    from kcroute.errors import ParseError

    with pytest.raises(ParseError, match="line 1"):
        load_trace(['{"query_id": "q"}'])
    with pytest.raises(ParseError):
        load_trace(['{"query_id": "q", "tags": {}, "outcomes": {"m": {"score": 2, "cost": 0}}}'])


# -- replay ---------------------------------------------------------------------------


def test_fixed_best_model_is_100_percent(planted):
    _, _, trace, index = planted
    base = replay(trace, index, strategy="mixed")
    best = base.benchmarks["synthetic"].best_single_model_id
    rep = replay(trace, index, strategy=Strategy("fixed", model=best))
    b = rep.benchmarks["synthetic"]
    assert b.performance_ratio == 100.0
    assert b.cost_ratio == 100.0  # tagging cost excluded for fixed baselines


def test_single_model_pool_matches_fixed(planted):
    _, _, trace, index = planted
    for strat in ("mixed", "knowledge_only", "capability_only", "random:3"):
        rep = replay(trace, index, strategy=strat, pool=["model-c"])
        fixed = replay(trace, index, strategy=Strategy("fixed", model="model-c"), pool=["model-c"])
        assert rep.benchmarks["synthetic"].routed_score == fixed.benchmarks["synthetic"].routed_score
        assert rep.choices == fixed.choices


def test_planted_routing_beats_best_single(planted):
    _, _, trace, index = planted
    rep = replay(trace, index, strategy="mixed")
    b = rep.benchmarks["synthetic"]
    assert b.routed_score > b.best_single_score
    oracle = replay(trace, index, strategy="oracle").benchmarks["synthetic"]
    assert oracle.performance_ratio >= b.performance_ratio


def test_routing_cost_includes_tagging(planted):
    _, _, trace, index = planted
    rep = replay(trace, index, strategy="mixed")
    chosen_cost = math.fsum(e.outcomes[rep.choices[e.query_id]].cost for e in trace.entries)
    assert rep.benchmarks["synthetic"].routed_cost == pytest.approx(chosen_cost + 0.01 * len(trace.entries))


def test_mixed_with_one_sided_weights_equals_single_score_strategies(planted):
    _, _, trace, index = planted
    k = replay(trace, index, RoutingConfig(gamma=1.0, delta=1.0), "knowledge_only")
    m = replay(trace, index, RoutingConfig(gamma=1.0, delta=0.0), "mixed")
    assert k.choices == m.choices and k.benchmarks == m.benchmarks
    c = replay(trace, index, RoutingConfig(gamma=1.0, delta=1.0), "capability_only")
    m = replay(trace, index, RoutingConfig(gamma=0.0, delta=1.0), "mixed")
    assert c.choices == m.choices and c.benchmarks == m.benchmarks


def test_random_is_seeded_and_bounded(planted):
    _, _, trace, index = planted
    a = replay(trace, index, strategy="random:7")
    b = replay(trace, index, strategy="random:7")
    assert a.choices == b.choices
    singles = a.benchmarks["synthetic"].single_scores
    means = [overall_score(replay(trace, index, strategy=f"random:{s}")) for s in range(20)]
    assert min(singles.values()) <= np.mean(means) <= max(singles.values())


def test_coverage_gap_raises(planted):
    _, _, trace, index = planted
    e = trace.entries[0]
    broken = TraceSet((TraceEntry(e.query_id, e.tags, e.benchmark, 0.0, {"model-a": e.outcomes["model-a"]}),)
                      + trace.entries[1:])
    with pytest.raises(TraceError):
        replay(broken, index)
    with pytest.raises(TraceError):
        replay(trace, index, strategy=Strategy("fixed", model="nope"))


def test_multi_benchmark_adds_all_row(planted):
    _, _, trace, index = planted
    entries = tuple(TraceEntry(e.query_id, e.tags, "even" if i % 2 else "odd", e.tagging_cost, e.outcomes)
                    for i, e in enumerate(trace.entries))
    rep = replay(TraceSet(entries), index)
    assert list(rep.benchmarks) == ["even", "odd", "all"]
    csv_text = reports_to_csv([rep])
    header = csv_text.splitlines()[0].split(",")
    assert header[:8] == ["benchmark", "strategy", "beta", "routed_score", "best_single",
                          "performance_ratio", "routed_cost", "cost_ratio"]
    assert header[8:] == ["model-a", "model-b", "model-c", "model-d"]
    assert len(csv_text.splitlines()) == 4


# -- beta sweep ----------------------------------------------------------------------


def test_beta_zero_equals_default_replay(planted):
    _, _, trace, index = planted
    pts = beta_sweep(trace, index, RoutingConfig(), [0.0, 1.0])
    assert pts[0].report == replay(trace, index, RoutingConfig())


def test_sweep_slopes_non_increasing_per_query(planted):
    _, _, trace, index = planted
    pts = beta_sweep(trace, index, RoutingConfig(), [float(b) for b in range(0, 21, 2)])
    for e in trace.entries:
        slopes = [p.report.cost_slopes[e.query_id] for p in pts]
        assert all(b <= a + 1e-12 for a, b in zip(slopes, slopes[1:]))
    costs = [p.report.benchmarks["synthetic"].routed_cost for p in pts]
    assert costs[-1] < costs[0]


def test_large_beta_picks_cheapest(planted):
    _, _, trace, index = planted
    (pt,) = beta_sweep(trace, index, RoutingConfig(), [1000.0])
    counts = pt.report.benchmarks["synthetic"].selection_counts
    assert counts["model-d"] == len(trace.entries)


def test_bad_grids():
    with pytest.raises(InvalidConfig):
        beta_sweep(TraceSet(), None, RoutingConfig(), [])
    with pytest.raises(InvalidConfig):
        beta_sweep(TraceSet(), None, RoutingConfig(), [1.0, 0.0])
    with pytest.raises(InvalidConfig):
        beta_sweep(TraceSet(), None, RoutingConfig(), [-1.0])


# -- dynamic pools -------------------------------------------------------------------


def test_dynamic_pool_steps(planted):
    _, corpus, trace, _ = planted
    start = synthetic_index(corpus, models=["model-a"])
    steps = dynamic_pool_experiment(trace, start, RoutingConfig(), ["model-a", "model-b", "model-c"], corpus)
    assert steps[0].routed_score == steps[0].single_scores["model-a"]
    assert all(s.stats_unchanged for s in steps)
    # the planted expert takes its own domain once it joins
    last = steps[-1].report
    for e in trace.entries:
        if e.tags.knowledge[0] == "domain c":
            assert last.choices[e.query_id] == "model-c"


def test_adding_dominated_model_changes_nothing():
    spec = SyntheticSpec(
        models=("good-1", "good-2", "dud"),
        domains=("x", "y"),
        expertise=((0.9, 0.5), (0.5, 0.9), (0.2, 0.2)),
        n_index=600, n_trace=200, seed=5,
    )
    corpus, trace = generate_synthetic(spec)
    index = synthetic_index(corpus)
    steps = dynamic_pool_experiment(trace, index, RoutingConfig(), ["good-1", "good-2", "dud"])
    assert steps[2].routed_score == steps[1].routed_score
    assert steps[2].report.choices == steps[1].report.choices


def test_dynamic_pool_needs_corpus_for_missing_models(planted):
    _, corpus, trace, _ = planted
    start = synthetic_index(corpus, models=["model-a"])
    with pytest.raises(TraceError):
        dynamic_pool_experiment(trace, start, RoutingConfig(), ["model-a", "model-b"])


# -- domain distribution ----------------------------------------------------------------


def test_domain_distribution_hand_example():
    d = domain_distribution([["math"], ["math"], ["physics", "math"]])
    assert d.scores == {"math": 2.5, "physics": 1.0}
    assert d.percentages["math"] == pytest.approx(71.4285714, abs=1e-7)
    assert abs(d.percentages["math"] - 250 / 3.5) <= 1e-9


def test_domain_distribution_edges():
    assert domain_distribution([["only"]]).percentages == {"only": 100.0}
    with pytest.raises(EmptyInput):
        domain_distribution([])
    with pytest.raises(EmptyInput):
        domain_distribution([[], []])
    flat = domain_distribution([["a", "b"]], weights=lambda r: 1.0)
    assert flat.percentages == {"a": 50.0, "b": 50.0}


@settings(max_examples=100)
@given(st.lists(st.lists(st.sampled_from("abcdefg"), min_size=1, max_size=5), min_size=1, max_size=30),
       st.randoms(use_true_random=False))
def test_domain_distribution_sums_and_permutes(lists, rnd):
    d = domain_distribution(lists)
    assert abs(math.fsum(d.percentages.values()) - 100) <= 1e-9
    shuffled = list(lists)
    rnd.shuffle(shuffled)
    d2 = domain_distribution(shuffled)
    assert d2.percentages.keys() == d.percentages.keys()
    for k in d.percentages:
        assert d2.percentages[k] == pytest.approx(d.percentages[k], abs=1e-12)


# -- synthetic generator ---------------------------------------------------------------


def test_perfect_expertise_gives_all_ones():
    spec = SyntheticSpec(("a", "b"), ("x", "y", "z"), ((1.0,) * 3, (1.0,) * 3), n_index=50, n_trace=20,
                         max_knowledge=3)
    corpus, trace = generate_synthetic(spec)
    assert all(a.score == 1.0 for a in corpus.records.values())
    assert all(o.score == 1.0 for e in trace.entries for o in e.outcomes.values())


def test_generator_is_reproducible():
    spec = planted_spec(n_index=200, n_trace=50, seed=3)
    c1, t1 = generate_synthetic(spec)
    c2, t2 = generate_synthetic(spec)
    assert t1.dumps() == t2.dumps()
    assert dumps_index(synthetic_index(c1)) == dumps_index(synthetic_index(c2))
    _, t3 = generate_synthetic(planted_spec(n_index=200, n_trace=50, seed=4))
    assert t3.dumps() != t1.dumps()


def test_planted_expectations():
    # analytic: best single 0.25*0.9 + 0.75*0.5 = 0.6, per-query expert 0.9
    _, trace = generate_synthetic(planted_spec(n_index=10, n_trace=1000, seed=21))
    singles = {m: np.mean([e.outcomes[m].score for e in trace.entries]) for m in trace.models()}
    expert = {f"domain {c}": f"model-{c}" for c in "abcd"}
    routed = np.mean([e.outcomes[expert[e.tags.knowledge[0]]].score for e in trace.entries])
    assert max(singles.values()) == pytest.approx(0.6, abs=0.05)
    assert routed == pytest.approx(0.9, abs=0.03)


def test_synthetic_spec_validation():
    with pytest.raises(InvalidConfig):
        SyntheticSpec(("a",), ("x",), ((1.5,),))
    with pytest.raises(InvalidConfig):
        SyntheticSpec(("a",), ("x", "y"), ((0.5,),))
