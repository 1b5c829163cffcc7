"""Overfit four generated scenes and report training-set AP / AP50.

    python scripts/run_overfit.py [--iterations 2000] [--seed 0]
"""

import argparse
import logging

from queryis import experiments


def main():
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--iterations", type=int, default=2000)
    ap.add_argument("--seed", type=int, default=0)
    ap.add_argument("--scenes", type=int, default=4)
    ap.add_argument("--data-seed", type=int, default=100)
    ap.add_argument("--log-every", type=int, default=100)
    args = ap.parse_args()
    logging.basicConfig(level=logging.INFO, format="%(message)s")

    cfg = experiments.overfit_config()
    cfg.train.iterations = args.iterations
    cfg.train.seed = args.seed
    res = experiments.run_overfit(cfg, args.scenes, args.data_seed)
    for entry in res.logs[:: args.log_every] + res.logs[-1:]:
        print(entry.line())
    print(f"train AP={res.report.mean_ap:.4f} AP50={res.report.mean_ap50:.4f} ({res.seconds:.0f}s)")


if __name__ == "__main__":
    main()
