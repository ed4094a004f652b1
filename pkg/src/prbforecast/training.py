"""Training: weighted MSE + pinball objective, Adam with decoupled weight
decay and global-norm gradient clipping, epoch loop with chronological
validation and early stopping, and a binary checkpoint format.

Checkpoint layout: magic ``RUPF``, u32 LE version, u32 LE header length, a
UTF-8 JSON header (hyperparams, train config, normalizer, tensor manifest,
CRC32 of the payload), then the concatenated little-endian f32 tensor
payloads in manifest order. Round trips are bit-exact.
"""

from __future__ import annotations

import json
import logging
import os
import struct
import tempfile
import zlib
from dataclasses import dataclass

import numpy as np

from . import tensor as T
from .data import Normalizer, TrainingSample, batch_samples
from .model import ForecastModel, Hyperparams
from .tensor import Tensor

log = logging.getLogger(__name__)

CHECKPOINT_MAGIC = b"RUPF"
CHECKPOINT_VERSION = 1


class TrainingError(RuntimeError):
    """Numerical failure (NaN loss/gradients) during training."""


class CheckpointError(ValueError):
    pass


@dataclass
class TrainConfig:
    epochs: int = 200
    batch_size: int = 400
    lr: float = 1e-4
    weight_decay: float = 1e-5
    clip_norm: float = 1.0
    patience: int = 10
    min_delta: float = 1e-5
    alpha: float = 0.9
    beta: float = 1.2
    seed: int = 0

    def validate(self):
        for name in ("epochs", "batch_size", "lr", "clip_norm", "patience",
                     "alpha", "beta"):
            if getattr(self, name) <= 0:
                raise ValueError(f"{name} must be positive")
        if self.weight_decay < 0 or self.min_delta < 0:
            raise ValueError("weight_decay and min_delta must be nonnegative")

    def to_dict(self) -> dict:
        return {k: getattr(self, k) for k in
                ("epochs", "batch_size", "lr", "weight_decay", "clip_norm",
                 "patience", "min_delta", "alpha", "beta", "seed")}

    @classmethod
    def from_dict(cls, d: dict) -> "TrainConfig":
        cfg = cls(**d)
        cfg.validate()
        return cfg


# -- losses ---------------------------------------------------------------

def pinball_loss(y: Tensor, y_hat: Tensor, q: float) -> Tensor:
    """Mean quantile loss: q*(y - ŷ) when under-predicting, (1-q)*(ŷ - y)
    otherwise. Its minimizer over a sample is the empirical q-quantile."""
    if not 0.0 < q < 1.0:
        raise ValueError(f"quantile must be in (0,1), got {q}")
    under = T.relu(T.sub(y, y_hat))
    over = T.relu(T.sub(y_hat, y))
    return T.mean(T.add(T.scale(under, q), T.scale(over, 1.0 - q)))


def total_loss(det: Tensor, quant: Tensor, targets: np.ndarray,
               alpha: float, beta: float,
               quantiles=(0.1, 0.5, 0.9)) -> Tensor:
    """alpha * MSE over the 8 deterministic KPI columns plus beta * summed
    pinball losses over the residual column."""
    n_det = det.shape[-1]
    if targets.shape[:-1] != det.shape[:-1] or targets.shape[-1] != n_det + 1:
        raise T.ShapeError(f"target shape {targets.shape} does not match "
                           f"head output {det.shape}")
    dtype = det.data.dtype
    det_target = Tensor(targets[..., :n_det], dtype=dtype)
    residual = Tensor(targets[..., n_det], dtype=dtype)
    err = T.sub(det, det_target)
    mse = T.mean(T.mul(err, err))
    loss = T.scale(mse, alpha)
    for i, q in enumerate(quantiles):
        pred_q = T.slice_lastdim(quant, i, i + 1)
        pred_q = T.reshape(pred_q, residual.shape)
        loss = T.add(loss, T.scale(pinball_loss(residual, pred_q, q), beta))
    return loss


# -- optimizer ------------------------------------------------------------

class AdamState:
    def __init__(self, params: list[Tensor]):
        self.m = [np.zeros_like(p.data) for p in params]
        self.v = [np.zeros_like(p.data) for p in params]
        self.t = 0


def adam_step(params: list[Tensor], state: AdamState, lr: float,
              beta1: float = 0.9, beta2: float = 0.999, eps: float = 1e-8,
              weight_decay: float = 0.0) -> None:
    """Bias-corrected Adam with decoupled weight decay applied before the
    Adam delta. Raises on NaN gradients."""
    state.t += 1
    t = state.t
    for i, p in enumerate(params):
        g = p.grad
        if g is None:
            continue
        if not np.isfinite(g).all():
            raise TrainingError("NaN or Inf gradient encountered")
        if weight_decay:
            p.data *= np.float32(1.0 - lr * weight_decay)
        state.m[i] = beta1 * state.m[i] + (1 - beta1) * g
        state.v[i] = beta2 * state.v[i] + (1 - beta2) * g * g
        m_hat = state.m[i] / (1 - beta1 ** t)
        v_hat = state.v[i] / (1 - beta2 ** t)
        p.data -= (lr * m_hat / (np.sqrt(v_hat) + eps)).astype(p.data.dtype)


def clip_gradients(params: list[Tensor], max_norm: float = 1.0) -> float:
    """Global L2-norm clipping; returns the scale that was applied."""
    total = 0.0
    for p in params:
        if p.grad is not None:
            total += float(np.sum(p.grad.astype(np.float64) ** 2))
    norm = np.sqrt(total)
    if norm <= max_norm or norm == 0.0:
        return 1.0
    scale = max_norm / norm
    for p in params:
        if p.grad is not None:
            p.grad *= np.float32(scale)
    return scale


# -- epoch loop -----------------------------------------------------------

def _evaluate_loss(model: ForecastModel, samples: list[TrainingSample],
                   cfg: TrainConfig, batch_size: int) -> float:
    """Teacher-forced loss with dropout off, averaged over samples."""
    total = 0.0
    with T.no_grad():
        for start in range(0, len(samples), batch_size):
            enc_x, enc_meta, targets, dec_meta = batch_samples(
                samples[start:start + batch_size])
            det, quant = model.forward_training(enc_x, enc_meta, targets,
                                                dec_meta, training=False)
            loss = total_loss(det, quant, targets, cfg.alpha, cfg.beta,
                              model.hp.quantiles)
            total += float(loss.data) * len(targets)
    return total / len(samples)


def train(train_samples: list[TrainingSample], val_samples: list[TrainingSample],
          hp: Hyperparams, cfg: TrainConfig) -> tuple[ForecastModel, list[dict]]:
    """Train a fresh model; returns (model with best-validation parameters,
    per-epoch history). Fully determined by (samples, hp, cfg)."""
    if not train_samples or not val_samples:
        raise ValueError("training and validation splits must be nonempty")
    cfg.validate()
    T.seed_all(cfg.seed)
    model = ForecastModel(hp)
    params = model.params()
    state = AdamState(params)

    best_val = np.inf
    best_snapshot = None
    stale_epochs = 0
    history: list[dict] = []

    for epoch in range(1, cfg.epochs + 1):
        order = np.random.default_rng((cfg.seed, epoch)).permutation(len(train_samples))
        epoch_losses = []
        for start in range(0, len(order), cfg.batch_size):
            batch = [train_samples[i] for i in order[start:start + cfg.batch_size]]
            enc_x, enc_meta, targets, dec_meta = batch_samples(batch)
            model.zero_grads()
            det, quant = model.forward_training(enc_x, enc_meta, targets,
                                                dec_meta, training=True)
            loss = total_loss(det, quant, targets, cfg.alpha, cfg.beta, hp.quantiles)
            value = float(loss.data)
            if not np.isfinite(value):
                raise TrainingError(f"non-finite training loss at epoch {epoch}")
            T.backward(loss)
            clip_gradients(params, cfg.clip_norm)
            adam_step(params, state, cfg.lr, weight_decay=cfg.weight_decay)
            epoch_losses.append(value * len(batch))
        train_loss = sum(epoch_losses) / len(train_samples)
        val_loss = _evaluate_loss(model, val_samples, cfg, cfg.batch_size)
        if not np.isfinite(val_loss):
            raise TrainingError(f"non-finite validation loss at epoch {epoch}")

        improved = best_val - val_loss > cfg.min_delta
        if improved:
            best_val = val_loss
            best_snapshot = [p.data.copy() for p in params]
            stale_epochs = 0
        else:
            stale_epochs += 1
        stopped = stale_epochs >= cfg.patience
        history.append({"epoch": epoch, "train_loss": train_loss,
                        "val_loss": val_loss, "lr": cfg.lr, "stopped": stopped})
        log.info("epoch %d: train %.6f val %.6f%s", epoch, train_loss, val_loss,
                 " (stopping)" if stopped else "")
        if stopped:
            break

    if best_snapshot is not None:
        for p, saved in zip(params, best_snapshot):
            p.data = saved
    return model, history


def write_history(history: list[dict], path: str) -> None:
    atomic_write_bytes(
        path, "".join(json.dumps(h, sort_keys=True) + "\n" for h in history).encode())


# -- checkpoint persistence -----------------------------------------------

def atomic_write_bytes(path: str, blob: bytes) -> None:
    """Temp-file-and-rename write so interrupted runs never leave partial files."""
    directory = os.path.dirname(os.path.abspath(path))
    fd, tmp = tempfile.mkstemp(dir=directory, prefix=".tmp-")
    try:
        with os.fdopen(fd, "wb") as f:
            f.write(blob)
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise


def checkpoint_bytes(model: ForecastModel, cfg: TrainConfig,
                     normalizer: Normalizer | None) -> bytes:
    manifest = []
    payloads = []
    offset = 0
    for name, p in model.named_params():
        raw = np.ascontiguousarray(p.data.astype("<f4")).tobytes()
        manifest.append({"name": name, "shape": list(p.shape),
                         "offset": offset, "nbytes": len(raw)})
        payloads.append(raw)
        offset += len(raw)
    payload = b"".join(payloads)
    header = {
        "hyperparams": model.hp.to_dict(),
        "train_config": cfg.to_dict(),
        "normalizer": normalizer.to_dict() if normalizer is not None else None,
        "manifest": manifest,
        "payload_crc32": zlib.crc32(payload),
    }
    header_bytes = json.dumps(header, sort_keys=True).encode("utf-8")
    return (CHECKPOINT_MAGIC
            + struct.pack("<II", CHECKPOINT_VERSION, len(header_bytes))
            + header_bytes + payload)


def save_checkpoint(path: str, model: ForecastModel, cfg: TrainConfig,
                    normalizer: Normalizer | None) -> None:
    atomic_write_bytes(path, checkpoint_bytes(model, cfg, normalizer))


def load_checkpoint(path: str) -> tuple[ForecastModel, TrainConfig, Normalizer | None]:
    with open(path, "rb") as f:
        blob = f.read()
    if len(blob) < 12 or blob[:4] != CHECKPOINT_MAGIC:
        raise CheckpointError(f"{path}: not a checkpoint file (bad magic)")
    version, header_len = struct.unpack("<II", blob[4:12])
    if version != CHECKPOINT_VERSION:
        raise CheckpointError(f"{path}: unsupported checkpoint version {version}")
    if len(blob) < 12 + header_len:
        raise CheckpointError(f"{path}: truncated header")
    try:
        header = json.loads(blob[12:12 + header_len].decode("utf-8"))
    except (UnicodeDecodeError, json.JSONDecodeError) as e:
        raise CheckpointError(f"{path}: corrupt header: {e}") from None
    payload = blob[12 + header_len:]

    manifest = header["manifest"]
    expected = 0
    for entry in manifest:
        if entry["offset"] != expected:
            raise CheckpointError(f"{path}: manifest offsets not contiguous")
        expected += entry["nbytes"]
    if expected != len(payload):
        raise CheckpointError(
            f"{path}: payload size {len(payload)} disagrees with manifest {expected}")
    if zlib.crc32(payload) != header["payload_crc32"]:
        raise CheckpointError(f"{path}: payload CRC mismatch")

    hp = Hyperparams.from_dict(header["hyperparams"])
    cfg = TrainConfig.from_dict(header["train_config"])
    normalizer = (Normalizer.from_dict(header["normalizer"])
                  if header["normalizer"] is not None else None)
    model = ForecastModel(hp, rng=np.random.default_rng(0))
    tensors = dict(model.named_params())
    if set(tensors) != {e["name"] for e in manifest}:
        raise CheckpointError(f"{path}: manifest tensor names do not match model")
    for entry in manifest:
        t = tensors[entry["name"]]
        raw = payload[entry["offset"]:entry["offset"] + entry["nbytes"]]
        arr = np.frombuffer(raw, dtype="<f4").reshape(entry["shape"])
        if arr.shape != t.shape:
            raise CheckpointError(
                f"{path}: tensor {entry['name']} has shape {arr.shape}, "
                f"expected {t.shape}")
        t.data = arr.astype(np.float32).copy()
    return model, cfg, normalizer
