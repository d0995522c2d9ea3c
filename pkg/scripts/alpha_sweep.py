"""Tightness and coverage after refinement for a range of coverage weights.

``inf`` selects hard refinement. Values are reported before and after the
coverage postprocess.

    python scripts/alpha_sweep.py --alphas inf 100 10 1
"""

import argparse
import json
import logging

from tightbox.experiments import alpha_sweep
from tightbox.fixtures import CATALOG, MODES, catalog


def main():
    ap = argparse.ArgumentParser(description=__doc__, formatter_class=argparse.RawDescriptionHelpFormatter)
    ap.add_argument("--names", nargs="*", choices=sorted(CATALOG), default=None)
    ap.add_argument("--modes", nargs="*", choices=MODES, default=["clean", "over_merged"])
    ap.add_argument("--alphas", nargs="*", type=float, default=[float("inf"), 100.0, 10.0, 1.0])
    ap.add_argument("--epsilon", type=float, default=-0.02)
    ap.add_argument("--out", help="write results as JSON")
    args = ap.parse_args()
    logging.basicConfig(level=logging.WARNING)

    results = {}
    print(f"{'shape':<20}{'mode':<15}{'alpha':>8}{'tgt_pre':>10}{'cov_pre':>10}{'tgt':>10}{'n_box':>7}")
    for name, fx in catalog(args.names).items():
        for mode in args.modes:
            r = alpha_sweep(fx, mode, args.alphas, args.epsilon)
            results[f"{name}/{mode}"] = {str(a): v for a, v in r.items()}
            for a, v in r.items():
                print(f"{name:<20}{mode:<15}{a:>8g}{v['tgt_pre']:>10.4f}{v['cov_pre']:>10.4f}"
                      f"{v['tgt']:>10.4f}{v['n_box']:>7d}")
    if args.out:
        with open(args.out, "w") as fh:
            json.dump(results, fh, indent=1)


if __name__ == "__main__":
    main()
