"""Deterministic training loop, early stopping and checkpoint round-trips."""

from __future__ import annotations

import base64
import json
from dataclasses import dataclass

import numpy as np

from .config import ExperimentConfig, config_from_dict, config_to_dict
from .data import DatasetSplit
from .engine import Adam, Tensor
from .losses import DilateConfig, dilate_training_loss, mse_loss
from .models import (ForecastModel, NBeatsConfig, NHitsConfig, TftConfig,
                     build_model)


class TrainingDiverged(RuntimeError):
    """Loss became non-finite; carries the epoch/batch diagnostic."""


@dataclass
class TrainingResult:
    history: list          # one dict per epoch: epoch, train_loss, val_loss
    best_epoch: int
    best_val_loss: float


def samples_to_arrays(samples):
    inputs = np.stack([s.input for s in samples])
    targets = np.stack([s.target for s in samples])
    return inputs, targets


def model_from_config(cfg: ExperimentConfig, n_channels: int) -> ForecastModel:
    return build_model(
        cfg.model, n_channels, seed=cfg.seed,
        nbeats=NBeatsConfig(cfg.n_stacks, cfg.blocks_per_stack,
                            cfg.hidden_width, cfg.theta_dim),
        nhits=NHitsConfig(cfg.n_stacks, cfg.blocks_per_stack, cfg.hidden_width,
                          cfg.theta_dim, tuple(cfg.pool_kernels),
                          tuple(cfg.coarse_lens)),
        tft=TftConfig(cfg.tft_hidden, cfg.tft_heads, cfg.tft_dropout),
    )


def _batch_loss(model: ForecastModel, x: np.ndarray, y: np.ndarray,
                loss_kind: str, dilate_cfg: DilateConfig) -> Tensor:
    pred = model.forward(Tensor(x))
    if loss_kind == "dilate":
        return dilate_training_loss(pred, y, dilate_cfg)
    return mse_loss(pred, y)


def train_model(model: ForecastModel, split: DatasetSplit,
                loss_kind: str = "mse",
                dilate_cfg: DilateConfig | None = None,
                lr: float = 1e-3, batch_size: int = 32, max_epochs: int = 100,
                patience: int = 10, seed: int = 0,
                log=None) -> TrainingResult:
    """Train with adaptive moments and early stopping on validation loss.

    Deterministic per seed: batch order comes from a dedicated generator and
    reduction order is fixed.  The best-validation parameters are restored
    before returning.  Raises :class:`TrainingDiverged` on a non-finite loss.
    """
    dilate_cfg = (dilate_cfg or DilateConfig()).validate()
    x_train, y_train = samples_to_arrays(split.train)
    has_val = bool(split.validation)
    if has_val:
        x_val, y_val = samples_to_arrays(split.validation)
    optimizer = Adam(model.parameters(), lr=lr)
    rng = np.random.default_rng(seed)
    history = []
    best_val = np.inf
    best_epoch = 0
    best_state = [p.data.copy() for p in optimizer.params]
    stale = 0
    n = x_train.shape[0]
    for epoch in range(1, max_epochs + 1):
        model.train(True)
        order = rng.permutation(n)
        epoch_loss = 0.0
        for start in range(0, n, batch_size):
            idx = order[start:start + batch_size]
            loss = _batch_loss(model, x_train[idx], y_train[idx],
                               loss_kind, dilate_cfg)
            value = loss.item()
            if not np.isfinite(value):
                raise TrainingDiverged(
                    f"non-finite loss {value} at epoch {epoch}, "
                    f"batch starting at sample {start}")
            optimizer.zero_grad()
            loss.backward()
            optimizer.step()
            epoch_loss += value * len(idx)
        train_loss = epoch_loss / n
        model.train(False)
        if has_val:
            val_loss = _batch_loss(model, x_val, y_val, loss_kind,
                                   dilate_cfg).item()
        else:
            val_loss = train_loss
        history.append({"epoch": epoch, "train_loss": train_loss,
                        "val_loss": val_loss})
        if log is not None:
            log(f"epoch {epoch:3d}  train {train_loss:.6f}  val {val_loss:.6f}")
        if val_loss < best_val:
            best_val = val_loss
            best_epoch = epoch
            best_state = [p.data.copy() for p in optimizer.params]
            stale = 0
        else:
            stale += 1
            if stale >= patience:
                break
    for p, saved in zip(optimizer.params, best_state):
        p.data[...] = saved
    return TrainingResult(history=history, best_epoch=best_epoch,
                          best_val_loss=float(best_val))


# -- checkpoints -------------------------------------------------------------------

CHECKPOINT_FORMAT = "vitalcast-checkpoint-v1"


def save_checkpoint(path, cfg: ExperimentConfig, model: ForecastModel,
                    n_channels: int) -> None:
    """Single JSON document: config echo plus named parameter tensors.
    Arrays are stored as raw little-endian float64 bytes, so the round trip
    is bit-exact."""
    params = {}
    for name, tensor in model.named_parameters().items():
        data = np.ascontiguousarray(tensor.data, dtype="<f8")
        params[name] = {
            "shape": list(tensor.data.shape),
            "data": base64.b64encode(data.tobytes()).decode("ascii"),
        }
    doc = {
        "format": CHECKPOINT_FORMAT,
        "config": config_to_dict(cfg),
        "n_channels": n_channels,
        "params": params,
    }
    with open(path, "w", encoding="utf-8") as fh:
        json.dump(doc, fh, sort_keys=True, indent=1)
        fh.write("\n")


def load_checkpoint(path) -> dict:
    with open(path, encoding="utf-8") as fh:
        doc = json.load(fh)
    if doc.get("format") != CHECKPOINT_FORMAT:
        raise ValueError(f"not a recognized checkpoint: {path}")
    return doc


def restore_model(doc: dict) -> tuple[ForecastModel, ExperimentConfig, int]:
    """Rebuild the checkpointed model with bit-exact parameters."""
    cfg = config_from_dict(doc["config"])
    n_channels = int(doc["n_channels"])
    model = model_from_config(cfg, n_channels)
    named = model.named_parameters()
    stored = doc["params"]
    if set(named) != set(stored):
        raise ValueError("checkpoint parameters do not match the model built "
                         "from its embedded config")
    for name, tensor in named.items():
        entry = stored[name]
        data = np.frombuffer(base64.b64decode(entry["data"]), dtype="<f8")
        tensor.data[...] = data.reshape(entry["shape"])
    return model, cfg, n_channels
