"""Command-line entry point: ``kcroute <subcommand> ...``.

Exit codes: 0 ok, 2 usage or unreadable/invalid input, 3 dependency
unavailable (tagger, embedder), 4 data error (trace gaps, alpha mismatch,
unknown models, conflicts).
"""

from __future__ import annotations

import argparse
import json
import logging
import os
import sys
from pathlib import Path

from .core import CapabilityTaxonomy, RoutingConfig, TagSet
from .errors import (
    AlphaMismatch,
    Conflict,
    EmbeddingUnavailable,
    EmptyInput,
    EmptyPool,
    FormatError,
    InvalidConfig,
    InvalidLabel,
    InvalidQuery,
    KCRouteError,
    MissingTags,
    ParseError,
    TaggerParseError,
    TaggerUnavailable,
    TraceError,
    UnknownModel,
    VersionError,
)

EXIT_OK, EXIT_USAGE, EXIT_DEPENDENCY, EXIT_DATA = 0, 2, 3, 4

log = logging.getLogger("kcroute.cli")


class CLIError(Exception):
    def __init__(self, message, code=EXIT_USAGE):
        super().__init__(message)
        self.code = code


def _exit_code(exc: Exception) -> int:
    if isinstance(exc, CLIError):
        return exc.code
    if isinstance(exc, (TaggerUnavailable, EmbeddingUnavailable)):
        return EXIT_DEPENDENCY
    if isinstance(exc, (TraceError, AlphaMismatch, EmptyPool, UnknownModel, Conflict, MissingTags, EmptyInput)):
        return EXIT_DATA
    if isinstance(exc, (ParseError, FormatError, VersionError, InvalidConfig, InvalidLabel,
                        InvalidQuery, TaggerParseError, OSError)):
        return EXIT_USAGE
    return EXIT_DATA


def _existing(path: str | None, what: str) -> Path | None:
    if path is None:
        return None
    p = Path(path)
    if not p.is_file():
        raise CLIError(f"{what} not found: {path}")
    return p


def _writable(path: str | None) -> Path | None:
    if path is None:
        return None
    p = Path(path)
    if p.parent and not p.parent.exists():
        raise CLIError(f"output directory does not exist: {p.parent}")
    return p


def _csv_list(text: str | None) -> list[str] | None:
    if text is None:
        return None
    return [t.strip() for t in text.split(",") if t.strip()]


def _emit(obj, out: Path | None = None):
    text = json.dumps(obj, indent=2, sort_keys=True)
    if out:
        out.write_text(text + "\n")
    else:
        print(text)


def _write_text(text: str, out: Path | None):
    if out:
        out.write_text(text)
    else:
        sys.stdout.write(text)


# -- config precedence: flags > environment > config file > defaults -------------

_ENV = {"alpha": "ROUTER_ALPHA", "beta": "ROUTER_BETA", "gamma": "ROUTER_GAMMA", "delta": "ROUTER_DELTA"}


def resolve_config(args, default_alpha: float = 0.5) -> RoutingConfig:
    file_cfg = {}
    if getattr(args, "config", None):
        path = _existing(args.config, "config file")
        try:
            file_cfg = json.loads(path.read_text())
        except json.JSONDecodeError as exc:
            raise CLIError(f"config file is not valid JSON: {exc}") from None
    vals = {"alpha": default_alpha, "beta": 0.0, "gamma": 1.0, "delta": 1.0}
    for key in vals:
        if key in file_cfg:
            vals[key] = file_cfg[key]
        if os.environ.get(_ENV[key]):
            try:
                vals[key] = float(os.environ[_ENV[key]])
            except ValueError:
                raise CLIError(f"{_ENV[key]} is not a number") from None
        flag = getattr(args, key, None)
        if flag is not None:
            vals[key] = flag
    return RoutingConfig(**{k: float(v) for k, v in vals.items()})


def _taxonomy(args) -> CapabilityTaxonomy:
    names = _csv_list(getattr(args, "taxonomy", None))
    return CapabilityTaxonomy(tuple(names)) if names else CapabilityTaxonomy()


def _provider(args):
    from .vocab import HttpEmbeddingProvider, StubProvider

    kind = args.embedder or ("http" if os.environ.get("EMBED_API_URL") else "stub")
    if kind == "http":
        return HttpEmbeddingProvider.from_env(cache_path=args.embed_cache)
    return StubProvider(seed=args.seed)


def _load_index(path):
    from .index import load_index

    return load_index(_existing(path, "index file"))


def _load_trace(path):
    from .harness import load_trace

    with open(_existing(path, "trace file")) as fh:
        return load_trace(fh)


# -- subcommands ------------------------------------------------------------------


def cmd_build_index(args):
    from .index import build_index, load_corpus, save_index
    from .vocab import build_vocabulary

    records = _existing(args.records, "records file")
    tags = _existing(args.tags, "tags file")
    out = _writable(args.out)
    if not args.alpha > 0:
        raise CLIError(f"--alpha must be > 0, got {args.alpha}")
    taxonomy = _taxonomy(args)
    corpus = load_corpus(records, tags, taxonomy, args.max_tags)
    vocab = build_vocabulary(corpus.knowledge_occurrences(), _provider(args),
                             args.sim_threshold, args.freq_floor, args.cluster_method)
    index = build_index(corpus, vocab, taxonomy, args.alpha, args.max_tags)
    save_index(index, out)
    _emit(index.stats_summary())


def cmd_route(args):
    from .gateway import decision_body
    from .scoring import route

    if (args.tags_json is None) == (args.text is None):
        raise CLIError("give exactly one of --tags-json or --text")
    index = _load_index(args.index)
    config = resolve_config(args, default_alpha=index.alpha_used)
    tagging_cost = 0.0
    if args.tags_json is not None:
        try:
            d = json.loads(args.tags_json)
        except json.JSONDecodeError as exc:
            raise CLIError(f"--tags-json is not valid JSON: {exc}") from None
        if not isinstance(d, dict):
            raise CLIError("--tags-json must be an object with knowledge/capabilities")
        tags = TagSet.from_dict(d)
    else:
        from .tagger import ChatTagger

        try:
            tagger = ChatTagger.from_env(index.taxonomy)
        except TaggerUnavailable as exc:
            raise CLIError(f"no tagger configured: {exc}", EXIT_DEPENDENCY) from None
        result = tagger.tag(args.text)
        tags, tagging_cost = result.tags, result.tagging_cost
    decision = route(index, tags, config, _csv_list(args.pool))
    _emit(decision_body(decision, index, index.prepare_tags(tags), tagging_cost))


def cmd_simulate(args):
    from .harness import Strategy, replay, reports_to_csv

    index = _load_index(args.index)
    trace = _load_trace(args.trace)
    out, summary = _writable(args.out), _writable(args.summary)
    config = resolve_config(args, default_alpha=index.alpha_used)
    strategy = Strategy(args.strategy, seed=args.seed, model=args.model)
    report = replay(trace, index, config, strategy, _csv_list(args.pool))
    _write_text(reports_to_csv([report]), out)
    if summary:
        _emit(report.summary(), summary)


def cmd_sweep_beta(args):
    from .harness import Strategy, beta_sweep, reports_to_csv

    index = _load_index(args.index)
    trace = _load_trace(args.trace)
    out = _writable(args.out)
    try:
        betas = [float(b) for b in _csv_list(args.betas)]
    except ValueError:
        raise CLIError(f"--betas must be comma-separated numbers: {args.betas}") from None
    config = resolve_config(args, default_alpha=index.alpha_used)
    points = beta_sweep(trace, index, config, betas, Strategy(args.strategy), _csv_list(args.pool))
    text = reports_to_csv([p.report for p in points], [{"cost_slope": p.mean_cost_slope} for p in points])
    _write_text(text, out)


def cmd_dynamic_pool(args):
    import csv
    import io

    from .harness import dynamic_pool_experiment
    from .index import load_corpus

    index = _load_index(args.index)
    trace = _load_trace(args.trace)
    out = _writable(args.out)
    sequence = _csv_list(args.pool_sequence)
    corpus = None
    if args.records or args.tags:
        if not (args.records and args.tags):
            raise CLIError("--records and --tags must be given together")
        corpus = load_corpus(_existing(args.records, "records file"), _existing(args.tags, "tags file"),
                             index.taxonomy, index.max_tags)
        index = index.restrict([m for m in index.models if m in sequence[:1]] or sequence[:1])
    config = resolve_config(args, default_alpha=index.alpha_used)
    steps = dynamic_pool_experiment(trace, index, config, sequence, corpus)
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(["step", "added", "pool_size", "routed_score", "best_single", "best_single_model",
                "routed_rank", "stats_unchanged"] + sequence)
    for i, st in enumerate(steps, start=1):
        best = min(st.single_scores, key=lambda m: (-st.single_scores[m], m))
        rank = 1 + sum(1 for v in st.single_scores.values() if v > st.routed_score)
        w.writerow([i, st.added, len(st.pool), repr(st.routed_score), repr(st.single_scores[best]), best,
                    rank, st.stats_unchanged] + [repr(st.single_scores[m]) if m in st.single_scores else ""
                                                 for m in sequence])
    _write_text(buf.getvalue(), out)


def cmd_domain_dist(args):
    from .harness import domain_distribution
    from .index import ingest_tags

    with open(_existing(args.tags, "tags file")) as fh:
        tags = ingest_tags(fh, _taxonomy(args))
    lists = [t.knowledge for _, t in sorted(tags.items())]
    dist = domain_distribution(lists)
    _emit({"percentages": dist.percentages, "scores": dist.scores}, _writable(args.out))


def cmd_generate(args):
    from .harness import corpus_to_lines, generate_synthetic, planted_spec

    out_dir = Path(args.out_dir)
    if not out_dir.is_dir():
        raise CLIError(f"output directory does not exist: {out_dir}")
    costs = tuple(float(c) for c in _csv_list(args.costs)) if args.costs else None
    spec = planted_spec(args.models, args.diag, args.off, n_index=args.n_index, n_trace=args.n_trace,
                        seed=args.seed, max_knowledge=args.max_knowledge, costs=costs,
                        tagging_cost=args.tagging_cost)
    corpus, trace = generate_synthetic(spec)
    recs, tags = corpus_to_lines(corpus)
    (out_dir / "records.jsonl").write_text("\n".join(recs) + "\n")
    (out_dir / "tags.jsonl").write_text("\n".join(tags) + "\n")
    (out_dir / "trace.jsonl").write_text(trace.dumps())
    _emit({"models": list(spec.models), "domains": list(spec.domains),
           "index_queries": spec.n_index, "trace_entries": spec.n_trace})


def cmd_serve(args):
    from .gateway import ServiceState, load_registry, serve
    from .index import IndexCorpus, ingest_records, ingest_tags
    from .tagger import ChatTagger

    index = _load_index(args.index)
    registry = load_registry(_existing(args.registry, "registry file")) if args.registry else None
    corpus = None
    if args.tags:
        with open(_existing(args.tags, "tags file")) as fh:
            queries = ingest_tags(fh, index.taxonomy, index.max_tags)
        corpus = IndexCorpus(queries, {})
        if args.records:
            with open(_existing(args.records, "records file")) as fh:
                corpus = ingest_records(fh, queries)
    try:
        tagger = ChatTagger.from_env(index.taxonomy, args.transcript)
    except TaggerUnavailable:
        tagger = None
        log.info("no tagger configured; /v1/route accepts pre-extracted tags only")
    config = resolve_config(args, default_alpha=index.alpha_used)
    state = ServiceState(index, config, corpus, registry, tagger,
                         tagger_concurrency=args.tagger_concurrency)
    serve(state, args.bind)


# -- parser -----------------------------------------------------------------------


def _routing_flags(p):
    p.add_argument("--alpha", type=float, help="rank decay (must match the index)")
    p.add_argument("--beta", type=float, help="cost penalty coefficient")
    p.add_argument("--gamma", type=float, help="knowledge score weight")
    p.add_argument("--delta", type=float, help="capability score weight")
    p.add_argument("--config", help="JSON file with alpha/beta/gamma/delta defaults")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="kcroute", description=__doc__.splitlines()[0])
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("build-index", help="build a score index from records and tags")
    p.add_argument("--records", required=True, help="evaluation records (JSON lines)")
    p.add_argument("--tags", required=True, help="query tags (JSON lines)")
    p.add_argument("--alpha", type=float, default=0.5, help="rank decay (default 0.5)")
    p.add_argument("--sim-threshold", type=float, default=0.6, help="cosine merge threshold (default 0.6)")
    p.add_argument("--freq-floor", type=int, default=10, help="minimum cluster frequency (default 10)")
    p.add_argument("--max-tags", type=int, default=10, help="per-list tag cap (default 10)")
    p.add_argument("--cluster-method", choices=["linkage", "greedy"], default="linkage")
    p.add_argument("--embedder", choices=["stub", "http"], help="default: http if EMBED_API_URL is set")
    p.add_argument("--embed-cache", help="JSONL cache for the http embedder")
    p.add_argument("--taxonomy", help="comma-separated capability labels")
    p.add_argument("--seed", type=int, default=0, help="stub embedder seed")
    p.add_argument("--out", required=True, help="index file to write")
    p.set_defaults(func=cmd_build_index)

    p = sub.add_parser("route", help="route one query")
    p.add_argument("--index", required=True)
    p.add_argument("--tags-json", help='inline tags, e.g. {"knowledge": [...], "capabilities": [...]}')
    p.add_argument("--text", help="raw query text (needs TAGGER_API_URL)")
    p.add_argument("--pool", help="comma-separated model ids to consider")
    _routing_flags(p)
    p.set_defaults(func=cmd_route)

    p = sub.add_parser("simulate", help="replay a trace with one strategy")
    p.add_argument("--index", required=True)
    p.add_argument("--trace", required=True)
    p.add_argument("--strategy", default="mixed",
                   choices=["mixed", "knowledge_only", "capability_only", "random", "fixed", "oracle"])
    p.add_argument("--seed", type=int, default=0, help="seed for the random strategy")
    p.add_argument("--model", help="model id for the fixed strategy")
    p.add_argument("--pool", help="comma-separated model ids")
    p.add_argument("--out", help="report CSV (default stdout)")
    p.add_argument("--summary", help="JSON summary path")
    _routing_flags(p)
    p.set_defaults(func=cmd_simulate)

    p = sub.add_parser("sweep-beta", help="replay a trace over a grid of cost penalties")
    p.add_argument("--index", required=True)
    p.add_argument("--trace", required=True)
    p.add_argument("--betas", default="0,5,10,15", help="comma-separated ascending grid")
    p.add_argument("--strategy", default="mixed", choices=["mixed", "knowledge_only", "capability_only"])
    p.add_argument("--pool", help="comma-separated model ids")
    p.add_argument("--out", help="report CSV (default stdout)")
    _routing_flags(p)
    p.set_defaults(func=cmd_sweep_beta)

    p = sub.add_parser("dynamic-pool", help="grow the candidate pool one model at a time")
    p.add_argument("--index", required=True)
    p.add_argument("--trace", required=True)
    p.add_argument("--pool-sequence", required=True, help="comma-separated model ids, in order of addition")
    p.add_argument("--records", help="records for incremental add_model (with --tags)")
    p.add_argument("--tags", help="index tags for incremental add_model (with --records)")
    p.add_argument("--out", help="CSV (default stdout)")
    _routing_flags(p)
    p.set_defaults(func=cmd_dynamic_pool)

    p = sub.add_parser("domain-dist", help="rank-weighted knowledge domain distribution")
    p.add_argument("--tags", required=True, help="tags file (JSON lines)")
    p.add_argument("--taxonomy", help="comma-separated capability labels")
    p.add_argument("--out", help="JSON output (default stdout)")
    p.set_defaults(func=cmd_domain_dist)

    p = sub.add_parser("generate", help="write a planted synthetic corpus and trace")
    p.add_argument("--out-dir", required=True)
    p.add_argument("--models", type=int, default=4)
    p.add_argument("--diag", type=float, default=0.9)
    p.add_argument("--off", type=float, default=0.5)
    p.add_argument("--n-index", type=int, default=2000)
    p.add_argument("--n-trace", type=int, default=1000)
    p.add_argument("--max-knowledge", type=int, default=1)
    p.add_argument("--costs", help="comma-separated per-model cost")
    p.add_argument("--tagging-cost", type=float, default=0.0)
    p.add_argument("--seed", type=int, default=0)
    p.set_defaults(func=cmd_generate)

    p = sub.add_parser("serve", help="run the HTTP gateway")
    p.add_argument("--index", required=True)
    p.add_argument("--bind", help="host:port (default ROUTER_BIND_ADDR or 127.0.0.1:8080)")
    p.add_argument("--tags", help="index tags; enables record uploads")
    p.add_argument("--records", help="index records")
    p.add_argument("--registry", help="JSON model registry")
    p.add_argument("--transcript", help="append tagger request/response pairs here")
    p.add_argument("--tagger-concurrency", type=int, default=4)
    _routing_flags(p)
    p.set_defaults(func=cmd_serve)
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.ERROR,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        args.func(args)
    except (CLIError, KCRouteError, OSError) as exc:
        print(f"kcroute {args.command}: {exc}", file=sys.stderr)
        return _exit_code(exc)
    return EXIT_OK


if __name__ == "__main__":
    sys.exit(main())
