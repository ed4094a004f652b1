"""Forecast evaluation: median MAE, 80% prediction-interval hit
probability, absolute-error spread, per-carrier rollout evaluation with
anchor averaging, and an SVG plot of truth vs. the forecast band.
"""

from __future__ import annotations

import hashlib
import json

import numpy as np

from .data import KpiSeries, Normalizer, format_timestamp
from .model import ForecastModel
from .rollout import ForecastStep, rollout, window_from_records
from .training import TrainConfig, atomic_write_bytes, checkpoint_bytes


def mae(truth, median_pred) -> float:
    """Mean absolute error of the median forecast."""
    truth = np.asarray(truth, dtype=np.float64)
    pred = np.asarray(median_pred, dtype=np.float64)
    if truth.shape != pred.shape or truth.size == 0:
        raise ValueError(f"length mismatch: {truth.shape} vs {pred.shape}")
    return float(np.mean(np.abs(truth - pred)))


def hit_probability(truth, q10, q90) -> float:
    """Fraction of steps whose true value lies inside [q10, q90];
    boundary values count as hits."""
    truth = np.asarray(truth, dtype=np.float64)
    lo = np.asarray(q10, dtype=np.float64)
    hi = np.asarray(q90, dtype=np.float64)
    if truth.shape != lo.shape or truth.shape != hi.shape:
        raise ValueError("length mismatch between truth and interval bounds")
    if np.any(lo > hi):
        raise ValueError("crossing prediction interval (q10 > q90)")
    return float(np.mean((lo <= truth) & (truth <= hi)))


def abs_err_std(truth, median_pred) -> float:
    """Population standard deviation of the absolute median error."""
    truth = np.asarray(truth, dtype=np.float64)
    pred = np.asarray(median_pred, dtype=np.float64)
    if truth.shape != pred.shape or truth.size < 2:
        raise ValueError("need at least 2 matched values")
    return float(np.std(np.abs(truth - pred)))


def anchor_positions(series_len: int, n_past: int, horizon: int,
                     n_anchors: int) -> list[int]:
    """Evenly spaced anchor indices: each leaves N history and K future."""
    lo, hi = n_past, series_len - horizon
    if hi < lo:
        raise ValueError(
            f"series of {series_len} steps too short for N={n_past} history "
            f"plus K={horizon} horizon")
    if n_anchors < 1:
        raise ValueError("need at least one anchor")
    if n_anchors == 1:
        return [lo]
    span = hi - lo
    return sorted({lo + round(i * span / (n_anchors - 1)) for i in range(n_anchors)})


def evaluate(model: ForecastModel, normalizer: Normalizer,
             test_series: list[KpiSeries], horizon: int,
             n_anchors: int = 1) -> dict:
    """Per-carrier rollout metrics on residual PRB, averaged over anchors,
    plus carrier-level aggregates."""
    hp = model.hp
    per_carrier = []
    for series in sorted(test_series, key=lambda s: s.carrier_id):
        residuals = np.array([r.residual_prb for r in series.records])
        anchors = anchor_positions(len(series), hp.n_past, horizon, n_anchors)
        maes, stds, hits = [], [], []
        for a in anchors:
            window, meta, next_ts = window_from_records(
                series.records[a - hp.n_past:a], normalizer, series.carrier_id)
            steps = rollout(model, window, meta, next_ts, series.carrier_id, horizon)
            truth = residuals[a:a + horizon]
            q10 = np.array([s.q10 for s in steps])
            q50 = np.array([s.q50 for s in steps])
            q90 = np.array([s.q90 for s in steps])
            maes.append(mae(truth, q50))
            stds.append(abs_err_std(truth, q50))
            hits.append(hit_probability(truth, q10, q90))
        per_carrier.append({
            "carrier_id": series.carrier_id,
            "mae": float(np.mean(maes)),
            "abs_err_std": float(np.mean(stds)),
            "hit_prob": float(np.mean(hits)),
            "horizon": horizon,
            "anchors": anchors,
        })
    carrier_maes = [c["mae"] for c in per_carrier]
    return {
        "per_carrier": per_carrier,
        "aggregate": {
            "mean_mae": float(np.mean(carrier_maes)),
            "mae_std": float(np.std(carrier_maes)),
            "mean_hit_prob": float(np.mean([c["hit_prob"] for c in per_carrier])),
        },
        "metadata": {
            "horizon": horizon,
            "n_anchors": n_anchors,
            "carriers": [c["carrier_id"] for c in per_carrier],
        },
    }


def model_hash(model: ForecastModel, cfg: TrainConfig,
               normalizer: Normalizer | None) -> str:
    return hashlib.sha256(checkpoint_bytes(model, cfg, normalizer)).hexdigest()


def write_report(report: dict, path: str) -> None:
    atomic_write_bytes(path, (json.dumps(report, indent=2, sort_keys=True) + "\n").encode())


def emit_plot_svg(truth, forecast: list[ForecastStep], path: str,
                  width: int = 960, height: int = 360) -> None:
    """Standalone SVG: ground-truth polyline, median polyline, and the
    q10-q90 band as one polygon (q90 forward then q10 reversed, 2K vertices)."""
    truth = np.asarray(truth, dtype=np.float64)
    if truth.size == 0 or not forecast:
        raise ValueError("cannot plot an empty series")
    if truth.size != len(forecast):
        raise ValueError(f"truth has {truth.size} steps, forecast {len(forecast)}")
    k = len(forecast)
    q10 = np.array([s.q10 for s in forecast])
    q50 = np.array([s.q50 for s in forecast])
    q90 = np.array([s.q90 for s in forecast])

    margin = 40.0
    def x(i):
        return margin + (width - 2 * margin) * (i / max(k - 1, 1))

    def y(v):
        return height - margin - (height - 2 * margin) * float(np.clip(v, 0.0, 1.0))

    def polyline(values):
        return " ".join(f"{x(i):.2f},{y(v):.2f}" for i, v in enumerate(values))

    band = [f"{x(i):.2f},{y(v):.2f}" for i, v in enumerate(q90)]
    band += [f"{x(i):.2f},{y(v):.2f}" for i, v in zip(range(k - 1, -1, -1), q10[::-1])]

    start = format_timestamp(forecast[0].timestamp)
    end = format_timestamp(forecast[-1].timestamp)
    svg = f"""<?xml version="1.0" encoding="UTF-8"?>
<svg xmlns="http://www.w3.org/2000/svg" width="{width}" height="{height}" viewBox="0 0 {width} {height}">
  <rect width="{width}" height="{height}" fill="white"/>
  <line x1="{margin}" y1="{height - margin}" x2="{width - margin}" y2="{height - margin}" stroke="black"/>
  <line x1="{margin}" y1="{margin}" x2="{margin}" y2="{height - margin}" stroke="black"/>
  <text x="{margin}" y="20" font-size="13">carrier {forecast[0].carrier_id}: residual PRB, {start} to {end}</text>
  <polygon points="{' '.join(band)}" fill="#7aa6d9" fill-opacity="0.35" stroke="none"/>
  <polyline points="{polyline(truth)}" fill="none" stroke="#222222" stroke-width="1.2"/>
  <polyline points="{polyline(q50)}" fill="none" stroke="#d9662a" stroke-width="1.2"/>
</svg>
"""
    atomic_write_bytes(path, svg.encode("utf-8"))
