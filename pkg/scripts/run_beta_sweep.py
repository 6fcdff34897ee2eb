"""Cost-penalty sweep on a planted corpus where stronger models cost more.

Prints accuracy, total cost and mean cost slope of the chosen models per beta.

    python scripts/run_beta_sweep.py --betas 0,1,2,5,10,15,20
"""

import argparse
from dataclasses import dataclass
from pathlib import Path

from kcroute.core import RoutingConfig
from kcroute.harness import SyntheticSpec, beta_sweep, generate_synthetic, reports_to_csv, synthetic_index


@dataclass
class SweepConfig:
    betas: str = "0,1,2,5,10,15,20"
    n_index: int = 2000
    n_trace: int = 1000
    seed: int = 0


# a generalist that is expensive, two cheaper specialists and a cheap weak model
MODELS = ("generalist", "spec-math", "spec-code", "budget")
DOMAINS = ("math", "code", "law", "biology")
EXPERTISE = (
    (0.92, 0.92, 0.85, 0.85),
    (0.90, 0.55, 0.50, 0.55),
    (0.55, 0.90, 0.50, 0.50),
    (0.60, 0.60, 0.55, 0.55),
)
COSTS = (0.030, 0.008, 0.008, 0.001)


def main():
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    for name, default in vars(SweepConfig()).items():
        ap.add_argument(f"--{name.replace('_', '-')}", type=type(default), default=default)
    ap.add_argument("--out", type=Path)
    args = ap.parse_args()
    spec = SyntheticSpec(MODELS, DOMAINS, EXPERTISE, n_index=args.n_index, n_trace=args.n_trace,
                         seed=args.seed, costs=COSTS)
    corpus, trace = generate_synthetic(spec)
    index = synthetic_index(corpus)
    betas = [float(b) for b in args.betas.split(",")]
    points = beta_sweep(trace, index, RoutingConfig(), betas)
    print(f"{'beta':>6}{'accuracy':>10}{'cost':>10}{'cost %':>9}{'slope':>10}  picks")
    for p in points:
        b = p.report.benchmarks["synthetic"]
        picks = " ".join(f"{m}={n}" for m, n in b.selection_counts.items())
        print(f"{p.beta:>6g}{b.routed_score:>10.4f}{b.routed_cost:>10.3f}{b.cost_ratio:>9.1f}"
              f"{p.mean_cost_slope:>10.5f}  {picks}")
    if args.out:
        args.out.parent.mkdir(parents=True, exist_ok=True)
        args.out.write_text(reports_to_csv([p.report for p in points],
                                           [{"cost_slope": p.mean_cost_slope} for p in points]))


if __name__ == "__main__":
    main()
