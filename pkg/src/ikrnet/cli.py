"""Command-line entry point: gen-data, augment, train, eval, report.

Exit codes: 0 success, 2 user/config error, 3 data-integrity error.
"""
from __future__ import annotations

import argparse
import json
import logging
import os
import sys
from dataclasses import asdict, replace
from pathlib import Path

from . import __version__
from .data import (
    DEFAULT_RATIOS,
    HOLDOUT_RATES,
    TRAIN_RATES,
    DatasetManifest,
    SyntheticProtocolSpec,
    augment_sampling_rates,
    balance_training,
    generate,
    load_originals,
    partition,
    write_dataset,
)
from .errors import ConfigError, DataIntegrityError, IKrNetError, InvalidArgumentError
from .metrics import rate_table_csv, threshold_curve_csv, zone_table_csv, EvalReport
from .model import IKrNetConfig, build, count_parameters, toy_config
from .train import (
    SELECTION_PARTITIONS,
    TrainConfig,
    build_arrays,
    evaluate,
    experiment_config,
    load_checkpoint,
    save_checkpoint,
    train_model,
    worker_count,
)

log = logging.getLogger("ikrnet")

EXIT_OK, EXIT_USER, EXIT_INTEGRITY = 0, 2, 3
MANIFEST = "manifest.json"
CHECKPOINT = "model.ckpt"
NAMED_MODELS = {"toy": toy_config, "desk": experiment_config, "full": IKrNetConfig}


class UserError(IKrNetError):
    pass


def _read_json(path: str) -> dict:
    try:
        return json.loads(Path(path).read_text())
    except FileNotFoundError as exc:
        raise UserError(f"no such file: {path}") from exc
    except json.JSONDecodeError as exc:
        raise UserError(f"{path}: invalid JSON ({exc})") from exc


def _rates(text: str | None, default) -> tuple[float, ...]:
    if text is None:
        return tuple(float(r) for r in default)
    try:
        rates = tuple(float(t) for t in text.split(",") if t.strip())
    except ValueError as exc:
        raise UserError(f"bad rate list {text!r}") from exc
    if not rates or any(r <= 0 for r in rates):
        raise UserError(f"rates must be positive: {text!r}")
    return rates


def _model_config(arg: str | None) -> IKrNetConfig:
    if arg is None or arg in NAMED_MODELS:
        return NAMED_MODELS[arg or "toy"]()
    return IKrNetConfig.from_dict(_read_json(arg))


def _manifest_path(data: str) -> Path:
    p = Path(data)
    return p / MANIFEST if p.is_dir() else p


def _load_dataset(data: str):
    path = _manifest_path(data)
    if not path.exists():
        raise UserError(f"no manifest at {path}")
    manifest = DatasetManifest.load(path)
    manifest.check_patient_disjoint()
    return manifest, load_originals(manifest, path.parent)


def _out_dir(args) -> Path:
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    return out


def _snapshot(out: Path, command: str, resolved: dict) -> None:
    body = {"command": command, "version": __version__, **resolved}
    (out / f"{command}_config.json").write_text(json.dumps(body, indent=1, sort_keys=True) + "\n")


# -- commands -------------------------------------------------------------
def cmd_gen_data(args) -> int:
    raw = _read_json(args.config) if args.config else {}
    ratios = tuple(raw.pop("ratios", DEFAULT_RATIOS))
    if args.seed is not None:
        raw["seed"] = args.seed
    if args.patients is not None:
        raw["n_patients"] = args.patients
    spec = SyntheticProtocolSpec.from_dict(raw)
    out = _out_dir(args)
    records, manifest = generate(spec, workers=worker_count())
    manifest = partition(manifest, ratios=ratios, seed=spec.seed)
    if not args.no_balance:
        manifest = balance_training(manifest, seed=spec.seed, partitions=SELECTION_PARTITIONS)
    write_dataset(records, manifest, out)
    _snapshot(out, "gen-data", {"spec": spec.to_dict(), "ratios": list(ratios),
                                "balance": not args.no_balance})
    print(f"wrote {len(records)} records for {spec.n_patients} patients to {out}")
    return EXIT_OK


def cmd_augment(args) -> int:
    src = _manifest_path(args.data)
    if not src.exists():
        raise UserError(f"no manifest at {src}")
    manifest = DatasetManifest.load(src)
    train_rates = _rates(args.rates, TRAIN_RATES)
    holdout_rates = _rates(args.holdout_rates, HOLDOUT_RATES)
    aug = augment_sampling_rates(manifest, train_rates, holdout_rates)
    out = _out_dir(args)
    if out.resolve() != src.parent.resolve():
        rel = os.path.relpath(src.parent.resolve(), out.resolve())
        aug = replace(aug, entries=[replace(e, path=str(Path(rel) / e.path)) for e in aug.entries])
    aug.save(out / MANIFEST)
    _snapshot(out, "augment", {"data": str(src), "train_rates": list(train_rates),
                               "holdout_rates": list(holdout_rates)})
    added = len(aug.entries) - len(manifest.entries)
    print(f"added {added} augmented entries ({len(aug.entries)} total)")
    return EXIT_OK


def cmd_train(args) -> int:
    cfg = _model_config(args.model_config)
    tcfg = TrainConfig(epochs=args.epochs, batch_size=args.batch_size, lr=args.lr,
                       weight_decay=args.weight_decay, clip_norm=args.clip_norm,
                       seed=args.seed if args.seed is not None else 0)
    if tcfg.epochs < 0 or tcfg.batch_size < 2 or tcfg.lr < 0:
        raise UserError("epochs >= 0, batch size >= 2 and lr >= 0 required")
    manifest, originals = _load_dataset(args.data)
    if not manifest.by_partition("train") or not manifest.by_partition("val"):
        raise UserError("manifest needs train and val partitions")
    out = _out_dir(args)
    if args.resume:
        model = load_checkpoint(args.resume, cfg)
    else:
        model = build(cfg, seed=tcfg.seed)
    Xtr, ytr = build_arrays(manifest.by_partition("train"), originals)
    Xva, yva = build_arrays(manifest.by_partition("val"), originals)
    _snapshot(out, "train", {"data": str(_manifest_path(args.data)), "model": cfg.to_dict(),
                             "model_hash": cfg.config_hash(), "train": asdict(tcfg),
                             "resume": args.resume, "n_parameters": count_parameters(model)})
    ckpt = out / CHECKPOINT
    result = train_model(model, Xtr, ytr, Xva, yva, tcfg, log_path=out / "train_log.jsonl",
                         checkpoint_path=ckpt)
    if not ckpt.exists():  # zero epochs: keep the initial weights
        save_checkpoint(model, ckpt, {"epoch": 0})
    print(f"best epoch {result.best_epoch} val_loss {result.best_val_loss:.5f}; saved {ckpt}")
    return EXIT_OK


def _write_tables(report: EvalReport, out: Path) -> None:
    (out / "zones.csv").write_text(zone_table_csv(report))
    (out / "rates.csv").write_text(rate_table_csv(report))
    (out / "threshold_curve.csv").write_text(threshold_curve_csv(report))


def cmd_eval(args) -> int:
    cfg = _model_config(args.model_config) if args.model_config else None
    model = load_checkpoint(args.checkpoint, cfg)
    manifest, originals = _load_dataset(args.data)
    if not manifest.by_partition(args.partition):
        raise UserError(f"manifest has no {args.partition} partition")
    out = _out_dir(args)
    report, _ = evaluate(model, manifest, originals, args.partition)
    (out / "report.json").write_text(report.to_json() + "\n")
    _write_tables(report, out)
    _snapshot(out, "eval", {"data": str(_manifest_path(args.data)),
                            "checkpoint": str(args.checkpoint), "partition": args.partition,
                            "model_hash": model.config.config_hash()})
    acc = report.overall.get("accuracy")
    print(f"{report.n_predictions} predictions, accuracy {acc:.4f}, "
          f"zone APD {report.apd_zones}, rate APD {report.apd_rates}")
    return EXIT_OK


def cmd_report(args) -> int:
    path = Path(args.report)
    if path.is_dir():
        path = path / "report.json"
    try:
        report = EvalReport.from_json(path.read_text())
    except FileNotFoundError as exc:
        raise UserError(f"no such report: {path}") from exc
    except (json.JSONDecodeError, TypeError) as exc:
        raise DataIntegrityError(f"{path}: not an evaluation report ({exc})") from exc
    out = _out_dir(args)
    _write_tables(report, out)
    _snapshot(out, "report", {"report": str(path)})
    print(f"accuracy {report.overall.get('accuracy')}")
    for zone, acc in sorted(report.per_zone.items()):
        print(f"  zone {zone:<10} {acc:.4f}")
    for rate, acc in sorted(report.per_rate.items(), key=lambda kv: float(kv[0])):
        print(f"  rate {float(rate):>6g} Hz {acc:.4f}")
    print(f"APD zones {report.apd_zones}  APD rates {report.apd_rates}")
    return EXIT_OK


# -- parser ---------------------------------------------------------------
def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="ikrnet", description=__doc__.splitlines()[0])
    p.add_argument("--version", action="version", version=__version__)
    p.add_argument("-v", "--verbose", action="store_true")
    sub = p.add_subparsers(dest="command", required=True)

    g = sub.add_parser("gen-data", help="generate, partition and balance a synthetic dataset")
    g.add_argument("--config", help="generator spec JSON (may include 'ratios')")
    g.add_argument("--seed", type=int)
    g.add_argument("--patients", type=int)
    g.add_argument("--no-balance", action="store_true")
    g.add_argument("--out", required=True)
    g.set_defaults(func=cmd_gen_data)

    a = sub.add_parser("augment", help="add sampling-rate variants to a manifest")
    a.add_argument("--data", required=True, help="dataset dir or manifest path")
    a.add_argument("--rates", help="train/val/eval rates, comma separated")
    a.add_argument("--holdout-rates")
    a.add_argument("--out", required=True)
    a.set_defaults(func=cmd_augment)

    t = sub.add_parser("train", help="train on the train partition, select on val")
    t.add_argument("--data", required=True)
    t.add_argument("--model-config", help="JSON path or one of: " + ", ".join(NAMED_MODELS))
    t.add_argument("--epochs", type=int, default=10)
    t.add_argument("--batch-size", type=int, default=32)
    t.add_argument("--lr", type=float, default=1e-3)
    t.add_argument("--weight-decay", type=float, default=0.01)
    t.add_argument("--clip-norm", type=float, default=5.0)
    t.add_argument("--seed", type=int)
    t.add_argument("--resume", help="checkpoint to continue from")
    t.add_argument("--out", required=True)
    t.set_defaults(func=cmd_train)

    e = sub.add_parser("eval", help="evaluate a checkpoint on the holdout")
    e.add_argument("--data", required=True)
    e.add_argument("--checkpoint", required=True)
    e.add_argument("--model-config")
    e.add_argument("--partition", default="holdout")
    e.add_argument("--out", required=True)
    e.set_defaults(func=cmd_eval)

    r = sub.add_parser("report", help="print an evaluation report and export its tables")
    r.add_argument("--report", required=True, help="report.json or the eval output dir")
    r.add_argument("--out", required=True)
    r.set_defaults(func=cmd_report)
    return p


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        return args.func(args)
    except DataIntegrityError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_INTEGRITY
    except (UserError, ConfigError, InvalidArgumentError, ValueError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_USER


if __name__ == "__main__":
    sys.exit(main())
