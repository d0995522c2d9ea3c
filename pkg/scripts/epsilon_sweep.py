"""Final box count and tightness of the merge-only pipeline across merge thresholds.

    python scripts/epsilon_sweep.py --eps 0 -0.004 -0.02 -0.1 --out eps.json
"""

import argparse
import json
import logging

from tightbox.experiments import epsilon_sweep
from tightbox.fixtures import CATALOG, MODES, catalog


def main():
    ap = argparse.ArgumentParser(description=__doc__, formatter_class=argparse.RawDescriptionHelpFormatter)
    ap.add_argument("--names", nargs="*", choices=sorted(CATALOG), default=None)
    ap.add_argument("--modes", nargs="*", choices=MODES, default=list(MODES))
    ap.add_argument("--eps", nargs="*", type=float, default=[0.0, -0.004, -0.02, -0.1])
    ap.add_argument("--out", help="write results as JSON")
    args = ap.parse_args()
    logging.basicConfig(level=logging.WARNING)

    results = {}
    print(f"{'shape':<20}{'mode':<15}" + "".join(f"{e:>10g}" for e in args.eps))
    for name, fx in catalog(args.names).items():
        for mode in args.modes:
            r = epsilon_sweep(fx, mode, args.eps)
            results[f"{name}/{mode}"] = {str(e): v for e, v in r.items()}
            print(f"{name:<20}{mode:<15}" + "".join(f"{r[e]['n_box']:>10d}" for e in args.eps))
    if args.out:
        with open(args.out, "w") as fh:
            json.dump(results, fh, indent=1)


if __name__ == "__main__":
    main()
