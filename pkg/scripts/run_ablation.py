"""Representative-point and query-type ablation on generated scenes, over several seeds.

Each seed draws fresh train/test scenes and a fresh initialisation; all five variants
share them.  Prints one table per seed and the mean RPG-minus-Random AP50 gap.

    python scripts/run_ablation.py [--seeds 0 1 2] [--iterations 600] [--variants all|rpg,random]
"""

import argparse
import logging

import numpy as np

from queryis import experiments


def main():
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--seeds", type=int, nargs="+", default=[0, 1, 2])
    ap.add_argument("--train", type=int, default=16)
    ap.add_argument("--test", type=int, default=8)
    ap.add_argument("--iterations", type=int, default=600)
    ap.add_argument("--threads", type=int, default=1)
    args = ap.parse_args()
    logging.basicConfig(level=logging.INFO, format="%(message)s")

    gaps = []
    for seed in args.seeds:
        base = experiments.overfit_config()
        base.train.iterations = args.iterations
        base.train.seed = seed
        base.train.threads = args.threads
        data_seed = 5000 + 1000 * seed
        train_set = experiments.make_samples(base, args.train, data_seed)
        test_set = experiments.make_samples(base, args.test, data_seed + args.train)
        rows = experiments.run_ablation(base, train_set, test_set)
        print(f"seed {seed}")
        print(experiments.format_table(rows))
        by = dict(rows)
        gaps.append(by["RPG"].mean_ap50 - by["Random"].mean_ap50)
    print("rpg - random AP50 per seed:", " ".join(f"{g:+.4f}" for g in gaps), f"mean {np.mean(gaps):+.4f}")


if __name__ == "__main__":
    main()
