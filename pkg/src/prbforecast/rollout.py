"""Recursive block-wise inference.

Each block runs one autoregressive forward pass for the next M steps, then
feeds the predictions back: the fed-back vector per step is the 8
deterministic outputs (clipped to [0,1] in normalized units) plus the
median residual quantile, bit-exactly the emitted q=0.5 value. The window
always holds exactly N vectors; future calendar metadata is computed from
the grid, never predicted.
"""

from __future__ import annotations

import csv
from dataclasses import dataclass
from datetime import datetime

import numpy as np

from .data import (FEATURE_NAMES, N_FEATURES, STEP, Normalizer,
                   calendar_indices, format_timestamp)
from .model import ForecastModel


@dataclass
class ForecastStep:
    timestamp: datetime
    carrier_id: int
    q10: float
    q50: float
    q90: float
    det: np.ndarray  # 8 deterministic KPI predictions, normalized units


@dataclass
class RolloutState:
    window: np.ndarray       # (N, 9) normalized features
    window_meta: np.ndarray  # (N, 5) calendar/carrier indices
    next_timestamp: datetime
    carrier_id: int
    blocks_emitted: int = 0


def rollout(model: ForecastModel, initial_window: np.ndarray,
            initial_meta: np.ndarray, next_timestamp: datetime,
            carrier_id: int, horizon: int) -> list[ForecastStep]:
    """Emit `horizon` forecast steps starting at `next_timestamp`, rolling
    M-step blocks through the fixed-length window. The last block is
    truncated if the horizon is not a multiple of M."""
    hp = model.hp
    if horizon < 1:
        raise ValueError(f"horizon must be >= 1, got {horizon}")
    initial_window = np.asarray(initial_window, dtype=np.float32)
    if initial_window.shape != (hp.n_past, N_FEATURES):
        raise ValueError(f"initial window must have shape "
                         f"({hp.n_past}, {N_FEATURES}), got {initial_window.shape}")
    state = RolloutState(window=initial_window.copy(),
                         window_meta=np.asarray(initial_meta, dtype=np.int64).copy(),
                         next_timestamp=next_timestamp, carrier_id=carrier_id)
    steps: list[ForecastStep] = []
    while len(steps) < horizon:
        block_times = [state.next_timestamp + i * STEP for i in range(hp.n_future)]
        dec_meta = np.array(
            [calendar_indices(ts, carrier_id) for ts in block_times], dtype=np.int64)
        out = model.forward_block(state.window, state.window_meta, dec_meta)
        det = out.det[0]          # (M, 8)
        quant = out.quantiles[0]  # (M, 3), sorted + clipped

        fed = np.empty((hp.n_future, N_FEATURES), dtype=np.float32)
        fed[:, :hp.n_det] = np.clip(det, 0.0, 1.0)
        fed[:, hp.n_det] = quant[:, 1]
        state.window = np.concatenate([state.window[hp.n_future:], fed])
        state.window_meta = np.concatenate([state.window_meta[hp.n_future:], dec_meta])
        state.blocks_emitted += 1
        state.next_timestamp = block_times[-1] + STEP

        for i, ts in enumerate(block_times):
            if len(steps) == horizon:
                break
            steps.append(ForecastStep(
                timestamp=ts, carrier_id=carrier_id,
                q10=float(quant[i, 0]), q50=float(quant[i, 1]),
                q90=float(quant[i, 2]), det=det[i].copy()))
    return steps


def window_from_records(records, normalizer: Normalizer, carrier_id: int):
    """Build (window, meta, next_timestamp) from the N most recent records."""
    feats = np.stack([r.features() for r in records])
    window = normalizer.apply(feats).astype(np.float32)
    meta = np.array([calendar_indices(r.timestamp, carrier_id) for r in records],
                    dtype=np.int64)
    return window, meta, records[-1].timestamp + STEP


def forecast_to_csv(forecasts: list[ForecastStep], normalizer: Normalizer,
                    path: str) -> None:
    """One row per step: quantiles in ratio units, deterministic KPIs
    denormalized back to native units."""
    with open(path, "w", newline="", encoding="utf-8") as f:
        writer = csv.writer(f)
        writer.writerow(["timestamp", "carrier_id", "q10", "q50", "q90"]
                        + FEATURE_NAMES)
        for step in forecasts:
            padded = np.concatenate([step.det, [step.q50]])
            det_raw = normalizer.invert(padded)[:len(FEATURE_NAMES)]
            writer.writerow(
                [format_timestamp(step.timestamp), step.carrier_id,
                 f"{step.q10:.6f}", f"{step.q50:.6f}", f"{step.q90:.6f}"]
                + [f"{v:.6f}" for v in det_raw])
