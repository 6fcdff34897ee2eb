"""Grow the candidate pool one model at a time without rebuilding existing stats.

    python scripts/run_dynamic_pool.py --models 6
"""

import argparse

from kcroute.core import RoutingConfig
from kcroute.harness import dynamic_pool_experiment, generate_synthetic, planted_spec, synthetic_index


def main():
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--models", type=int, default=4)
    ap.add_argument("--n-index", type=int, default=2000)
    ap.add_argument("--n-trace", type=int, default=1000)
    ap.add_argument("--seed", type=int, default=0)
    args = ap.parse_args()
    spec = planted_spec(args.models, n_index=args.n_index, n_trace=args.n_trace, seed=args.seed)
    corpus, trace = generate_synthetic(spec)
    order = list(spec.models)
    start = synthetic_index(corpus, models=order[:1])
    steps = dynamic_pool_experiment(trace, start, RoutingConfig(), order, corpus)
    print(f"{'step':>4}  {'added':<10}{'routed':>8}{'best single':>13}{'rank':>6}  stats unchanged")
    for i, st in enumerate(steps, start=1):
        best = max(st.single_scores.values())
        rank = 1 + sum(v > st.routed_score for v in st.single_scores.values())
        print(f"{i:>4}  {st.added:<10}{st.routed_score:>8.4f}{best:>13.4f}{rank:>6}  {st.stats_unchanged}")


if __name__ == "__main__":
    main()
