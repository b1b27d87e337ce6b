#!/usr/bin/env python3
"""Per-response reward sensitivity under different mappings.

For a fixed group of metrics, prints g'(x_i) / sigma for each response,
where sigma is the population std of the mapped rewards. Identity spreads sensitivity evenly; convex mappings
concentrate it on the best response.

    python scripts/sensitivity_profiles.py [--metrics 0.1,0.2,0.3,0.4,0.5,0.6,0.7,0.9]
"""

import argparse

from arspo_lab.dynamics import sensitivity_profile
from arspo_lab.rewards import Exponential, Identity, NormalizedExponential


def main():
    ap = argparse.ArgumentParser()
    ap.add_argument("--metrics", default="0.05,0.1,0.2,0.3,0.4,0.5,0.6,0.9")
    args = ap.parse_args()
    x = [float(v) for v in args.metrics.split(",")]

    mappings = {
        "identity": Identity(),
        "exp(a=3)": Exponential(3.0),
        "normexp(alpha=1)": NormalizedExponential(1.0),
        "normexp(alpha=3)": NormalizedExponential(3.0),
        "normexp(alpha=6)": NormalizedExponential(6.0),
    }
    print(f"{'mapping':<18}" + "".join(f"{v:>8.2f}" for v in x) + f"{'max/mean':>10}")
    for name, g in mappings.items():
        prof = sensitivity_profile(x, g)
        print(f"{name:<18}" + "".join(f"{v:8.3f}" for v in prof.values) + f"{prof.max_to_mean:10.3f}")


if __name__ == "__main__":
    main()
