#!/usr/bin/env python3
"""Cross-rate accuracy spread with and without sampling-rate augmentation, per seed."""
import argparse
import json
import logging

from ikrnet.data import SyntheticProtocolSpec
from ikrnet.train import TrainConfig, experiment_config, prepare_dataset, train_and_evaluate,
                         without_train_augmentation


def main() -> None:
    p = argparse.ArgumentParser(description=__doc__)
    p.add_argument("--patients", type=int, default=50)
    p.add_argument("--seeds", type=int, default=5)
    p.add_argument("--epochs", type=int, default=10)
    args = p.parse_args()
    logging.basicConfig(level=logging.WARNING)

    wins = 0
    for seed in range(args.seeds):
        spec = SyntheticProtocolSpec(n_patients=args.patients, seed=seed)
        row = {"seed": seed}
        manifest, originals = prepare_dataset(spec, seed=seed, augment=True)
        for augment in (True, False):
            if not augment:
                manifest = without_train_augmentation(manifest)
            res = train_and_evaluate(manifest, originals, experiment_config(),
                                     TrainConfig(epochs=args.epochs, seed=seed), seed)
            key = "with" if augment else "without"
            row[f"spread_{key}"] = res.report.apd_rates
            row[f"per_rate_{key}"] = res.report.per_rate
        wins += row["spread_with"] <= row["spread_without"]
        print(json.dumps(row, sort_keys=True), flush=True)
    print(f"augmentation spread <= baseline in {wins}/{args.seeds} seeds")


if __name__ == "__main__":
    main()
