"""Training loop, checkpoints, holdout evaluation and the desk-scale
experiment used by the scripts and the acceptance suite."""
from __future__ import annotations

import json
import logging
import os
from dataclasses import asdict, dataclass, field, replace
from pathlib import Path
from typing import Sequence

import numpy as np

from .data import (
    HOLDOUT_RATES,
    TRAIN_RATES,
    DatasetManifest,
    ManifestEntry,
    SyntheticProtocolSpec,
    augment_sampling_rates,
    balance_training,
    generate,
    materialize,
    partition,
)
from .errors import DataIntegrityError
from .metrics import EvalReport, Prediction, PredictionSet, build_report
from .model import IKrNetConfig, IKrNetModel, build, classify_scores, predict_scores
from .nn.checkpoint import load_arrays, save_arrays
from .nn.layers import bce_loss
from .nn.optim import adamw_init, adamw_step, clip_grad_norm
from .nn.tensor import Tensor, no_grad
from .signal import SOT_PLUS, EcgRecord, average_heart_rate, standardize_array

log = logging.getLogger(__name__)

# model selection sees the same class balance as training
SELECTION_PARTITIONS = ("train", "val")


@dataclass(frozen=True)
class TrainConfig:
    epochs: int = 10
    batch_size: int = 32
    lr: float = 1e-3
    weight_decay: float = 0.01
    clip_norm: float = 5.0
    seed: int = 0


def worker_count() -> int:
    """Thread cap from ``IKRNET_THREADS`` (default 1)."""
    try:
        return max(1, int(os.environ.get("IKRNET_THREADS", "1")))
    except ValueError:
        return 1


# -- arrays ---------------------------------------------------------------
def to_input(rec: EcgRecord, dtype=np.float32) -> np.ndarray:
    return standardize_array(rec.samples).astype(dtype)


def build_arrays(entries: Sequence[ManifestEntry], originals: dict[str, EcgRecord],
                 dtype=np.float32) -> tuple[np.ndarray, np.ndarray]:
    if not entries:
        return np.zeros((0, 1, 0), dtype=dtype), np.zeros(0, dtype=np.int64)
    X = np.stack([to_input(materialize(e, originals), dtype) for e in entries])[:, None, :]
    y = np.array([1 if e.label == SOT_PLUS else 0 for e in entries], dtype=np.int64)
    return X, y


# -- checkpoints ----------------------------------------------------------
def model_arrays(model: IKrNetModel) -> list[tuple[str, str, np.ndarray]]:
    out = [(n, "param", p.data) for n, p in model.named_parameters()]
    out += [(n, "buffer", b) for n, b in model.named_buffers()]
    return out


def save_checkpoint(model: IKrNetModel, path: str | Path, extra: dict | None = None) -> None:
    meta = {"config": model.config.to_dict()}
    meta.update(extra or {})
    save_arrays(path, model_arrays(model), model.config.config_hash(), meta)


def load_checkpoint(path: str | Path, config: IKrNetConfig | None = None) -> IKrNetModel:
    """Rebuild the model from a checkpoint.  If ``config`` is given its hash
    must match the one stored in the header."""
    header, arrays = load_arrays(path)
    stored = IKrNetConfig.from_dict(header["extra"]["config"])
    if stored.config_hash() != header["config_hash"]:
        raise DataIntegrityError(f"{path}: header config does not match its hash")
    if config is not None and config.config_hash() != header["config_hash"]:
        raise DataIntegrityError(f"{path}: checkpoint was written for a different model config")
    dtype = next(a.dtype for _, kind, a in arrays if kind == "param")
    model = build(stored, seed=0, dtype=dtype)
    params = dict(model.named_parameters())
    buffers = dict(model.named_buffers())
    if {n for n, k, _ in arrays if k == "param"} != set(params) or \
            {n for n, k, _ in arrays if k == "buffer"} != set(buffers):
        raise DataIntegrityError(f"{path}: tensor names do not match the model")
    for name, kind, arr in arrays:
        target = params[name].data if kind == "param" else buffers[name]
        if target.shape != arr.shape:
            raise DataIntegrityError(f"{path}: shape mismatch for {name}")
        if kind == "param":
            params[name].data = arr.astype(target.dtype)
        else:
            target[...] = arr
    return model


def snapshot(model: IKrNetModel) -> list[np.ndarray]:
    return [a.copy() for _, _, a in model_arrays(model)]


def restore(model: IKrNetModel, state: list[np.ndarray]) -> None:
    params = model.parameters()
    for p, a in zip(params, state[:len(params)]):
        p.data = a.copy()
    for (_, b), a in zip(model.named_buffers(), state[len(params):]):
        b[...] = a


# -- training -------------------------------------------------------------
def mean_loss(model: IKrNetModel, X: np.ndarray, y: np.ndarray, batch_size: int = 64) -> float:
    scores = predict_scores(model, X, batch_size)
    with no_grad():
        return float(bce_loss(Tensor(scores.astype(np.float64)), y.astype(np.float64)).data)


@dataclass
class TrainResult:
    history: list[dict] = field(default_factory=list)
    best_epoch: int = 0
    best_val_loss: float = float("inf")


def train_model(model: IKrNetModel, X_train: np.ndarray, y_train: np.ndarray,
                X_val: np.ndarray, y_val: np.ndarray, cfg: TrainConfig,
                log_path: str | Path | None = None,
                checkpoint_path: str | Path | None = None) -> TrainResult:
    """BCE + AdamW with global-norm clipping.  Epoch 0 is the untrained model.

    The best-validation parameters are restored into ``model`` at the end.
    """
    params = model.parameters()
    state = adamw_init(params, lr=cfg.lr, weight_decay=cfg.weight_decay)
    rng = np.random.default_rng(cfg.seed)
    result = TrainResult()
    sink = open(log_path, "w") if log_path else None

    def record(entry: dict) -> None:
        result.history.append(entry)
        if sink:
            sink.write(json.dumps(entry, sort_keys=True) + "\n")
            sink.flush()
        log.info("epoch %(epoch)d train_loss %(train_loss).5f val_loss %(val_loss).5f", entry)

    best_state = None
    try:
        record({"epoch": 0, "train_loss": mean_loss(model, X_train, y_train),
                "val_loss": mean_loss(model, X_val, y_val) if len(y_val) else float("nan")})
        for epoch in range(1, cfg.epochs + 1):
            model.train()
            order = rng.permutation(len(y_train))
            total, seen = 0.0, 0
            for i in range(0, len(order), cfg.batch_size):
                idx = order[i:i + cfg.batch_size]
                if len(idx) < 2:
                    continue  # batchnorm needs two rows
                model.zero_grad()
                loss = bce_loss(model(Tensor(X_train[idx])), y_train[idx])
                loss.backward()
                grads = [p.grad for p in params]
                clip_grad_norm(grads, cfg.clip_norm)
                adamw_step(params, grads, state)
                total += float(loss.data) * len(idx)
                seen += len(idx)
            val = mean_loss(model, X_val, y_val) if len(y_val) else float("nan")
            record({"epoch": epoch, "train_loss": total / max(seen, 1), "val_loss": val})
            if not val >= result.best_val_loss:  # NaN-safe: first epoch always wins
                result.best_val_loss = val
                result.best_epoch = epoch
                best_state = snapshot(model)
                if checkpoint_path:
                    save_checkpoint(model, checkpoint_path, {"epoch": epoch, "val_loss": val})
    finally:
        if sink:
            sink.close()
    if best_state is not None:
        restore(model, best_state)
    model.eval()
    return result


# -- evaluation -----------------------------------------------------------
def predict_entries(model: IKrNetModel, entries: Sequence[ManifestEntry],
                    originals: dict[str, EcgRecord], batch_size: int = 64,
                    with_heart_rate: bool = True) -> PredictionSet:
    preds = []
    dtype = model.parameters()[0].dtype
    for i in range(0, len(entries), 256):
        chunk = entries[i:i + 256]
        recs = [materialize(e, originals) for e in chunk]
        X = np.stack([to_input(r, dtype) for r in recs])[:, None, :]
        scores = predict_scores(model, X, batch_size)
        labels = classify_scores(scores)
        for e, r, s, yhat in zip(chunk, recs, scores, labels):
            preds.append(Prediction(
                record_id=e.record_id, patient_id=e.patient_id, zone=e.zone,
                fs=float(e.source_fs), y_true=1 if e.label == SOT_PLUS else 0,
                y_pred=int(yhat), score=float(np.clip(s, 0.0, 1.0)),
                average_bpm=average_heart_rate(r) if with_heart_rate else float("nan")))
    return PredictionSet(preds)


def evaluate(model: IKrNetModel, manifest: DatasetManifest, originals: dict[str, EcgRecord],
             partition_name: str = "holdout") -> tuple[EvalReport, PredictionSet]:
    preds = predict_entries(model, manifest.by_partition(partition_name), originals)
    return build_report(preds), preds


# -- desk-scale experiment -------------------------------------------------
def experiment_config() -> IKrNetConfig:
    """Single (75, 15) branch, three inverted blocks; the model used for the
    synthetic end-to-end runs on a CPU."""
    return IKrNetConfig(branches=((75, 15),), strides=(5, 4, 2), initial_filters=8, n_blocks=3,
                        filter_growth_every=2, branch_out_len=8, branch_out_channels=16,
                        bilstm_layers=1, bilstm_hidden=16, se_reduction=4, expansion_factor=2)


@dataclass
class ExperimentResult:
    train: TrainResult
    report: EvalReport
    balanced_report: EvalReport
    predictions: PredictionSet
    manifest: DatasetManifest


def prepare_dataset(spec: SyntheticProtocolSpec, seed: int, augment: bool,
                    train_rates=TRAIN_RATES, holdout_rates=HOLDOUT_RATES):
    records, manifest = generate(spec, workers=worker_count())
    originals = {r.record_id: r for r in records}
    manifest = partition(manifest, seed=seed)
    manifest = balance_training(manifest, seed=seed, partitions=SELECTION_PARTITIONS)
    manifest = augment_sampling_rates(manifest, train_rates if augment else (),
                                      holdout_rates)
    return manifest, originals


def without_train_augmentation(manifest: DatasetManifest) -> DatasetManifest:
    """Drop the rate variants outside the holdout, keeping the holdout rates."""
    keep = [e for e in manifest.entries if not e.is_augmented or e.partition == "holdout"]
    return replace(manifest, entries=keep)


def train_and_evaluate(manifest: DatasetManifest, originals: dict[str, EcgRecord],
                       model_config: IKrNetConfig, train_cfg: TrainConfig = TrainConfig(),
                       seed: int = 0) -> ExperimentResult:
    """Train on ``train``, select on ``val``, report on ``holdout``.

    ``balanced_report`` restricts the holdout to a per-patient class-balanced
    subset of base records (all their rate variants kept), so chance level is 0.5.
    """
    Xtr, ytr = build_arrays(manifest.by_partition("train"), originals)
    Xva, yva = build_arrays(manifest.by_partition("val"), originals)
    model = build(model_config, seed=seed)
    result = train_model(model, Xtr, ytr, Xva, yva, train_cfg)
    report, preds = evaluate(model, manifest, originals)
    balanced = balance_training(manifest, seed=seed, partitions=("holdout",))
    keep = {e.record_id for e in balanced.by_partition("holdout")}
    balanced_report = build_report(preds.subset(lambda p: p.record_id in keep))
    return ExperimentResult(result, report, balanced_report, preds, manifest)


def run_experiment(spec: SyntheticProtocolSpec, model_config: IKrNetConfig | None = None,
                   train_cfg: TrainConfig = TrainConfig(), augment: bool = True,
                   seed: int = 0) -> ExperimentResult:
    """generate -> partition -> balance -> (augment) -> train -> evaluate on holdout."""
    manifest, originals = prepare_dataset(spec, seed, augment)
    return train_and_evaluate(manifest, originals, model_config or experiment_config(),
                              train_cfg, seed)


def report_summary(report: EvalReport) -> dict:
    return {"accuracy": report.overall["accuracy"], "per_zone": report.per_zone,
            "apd_zones": report.apd_zones, "per_rate": report.per_rate,
            "apd_rates": report.apd_rates}


def dump(obj) -> str:
    return json.dumps(obj if isinstance(obj, dict) else asdict(obj), indent=1, sort_keys=True,
                      default=str)
