#!/usr/bin/env python3
"""Train the desk-scale model on a synthetic cohort and print the holdout report.

    python scripts/toy_experiment.py --patients 50 --epochs 10
    python scripts/toy_experiment.py --null            # zero drug footprint
    python scripts/toy_experiment.py --null --stress-delta 0
"""
import argparse
import json
import logging
import time

from ikrnet.data import DrugEffect, SyntheticProtocolSpec
from ikrnet.model import toy_config
from ikrnet.train import TrainConfig, experiment_config, report_summary, run_experiment


def main() -> None:
    p = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    p.add_argument("--patients", type=int, default=50)
    p.add_argument("--epochs", type=int, default=10)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--model", choices=("desk", "toy"), default="desk")
    p.add_argument("--no-augment", action="store_true")
    p.add_argument("--null", action="store_true", help="no QT or heart-rate drug effect")
    p.add_argument("--stress-delta", type=float, help="override the stress-test HR increase (bpm)")
    p.add_argument("--json", help="write the summaries here")
    args = p.parse_args()
    logging.basicConfig(level=logging.INFO, format="%(asctime)s %(message)s")

    kw = {"n_patients": args.patients, "seed": args.seed}
    if args.null:
        kw["drug_effect"] = DrugEffect(qt_prolongation_ms=0.0, hr_reduction_bpm=0.0)
    if args.stress_delta is not None:
        kw["stress_hr_delta_bpm"] = args.stress_delta
    cfg = experiment_config() if args.model == "desk" else toy_config()
    t0 = time.perf_counter()
    res = run_experiment(SyntheticProtocolSpec(**kw), cfg, TrainConfig(epochs=args.epochs, seed=args.seed),
                         augment=not args.no_augment, seed=args.seed)
    out = {"seconds": round(time.perf_counter() - t0, 1), "best_epoch": res.train.best_epoch,
           "holdout": report_summary(res.report),
           "balanced_holdout": report_summary(res.balanced_report)}
    text = json.dumps(out, indent=1, sort_keys=True)
    print(text)
    if args.json:
        with open(args.json, "w") as fh:
            fh.write(text + "\n")


if __name__ == "__main__":
    main()
