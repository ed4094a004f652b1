"""Command-line entry point: gen / train / forecast / eval.

All commands are pure functions of (flags, config file, input files, seed);
reruns produce byte-identical outputs. Exit codes: 0 success, 1 usage or
validation error, 2 numerical failure, 3 I/O error.
"""

from __future__ import annotations

import argparse
import json
import logging
import os
import sys

import numpy as np

from . import metrics as M
from . import synth
from .data import (IngestionError, Normalizer, chronological_split, load_csv,
                   make_samples, parse_timestamp, save_csv)
from .model import ForecastModel, Hyperparams
from .rollout import forecast_to_csv, rollout, window_from_records
from .synth import STEPS_PER_DAY
from .training import (CheckpointError, TrainConfig, TrainingError,
                       load_checkpoint, save_checkpoint, train, write_history)

log = logging.getLogger("prbforecast")

EXIT_OK = 0
EXIT_USAGE = 1
EXIT_NUMERICAL = 2
EXIT_IO = 3


class UsageError(ValueError):
    pass


DEFAULT_SPLIT = {"train_days": 150, "val_days": 15, "test_days": 15}


class RunConfig:
    """JSON run configuration; unknown keys are rejected and absent keys
    fall back to the default model/training configuration."""

    SECTIONS = {"hyperparams", "train", "data", "split", "seed"}

    def __init__(self, doc: dict | None = None):
        doc = dict(doc or {})
        unknown = set(doc) - self.SECTIONS
        if unknown:
            raise UsageError(f"unknown config keys: {sorted(unknown)}")
        self.hyperparams = self._merge(Hyperparams().to_dict(),
                                       doc.get("hyperparams", {}), "hyperparams")
        self.train = self._merge(TrainConfig().to_dict(), doc.get("train", {}), "train")
        self.data = self._merge({"csv_path": None, "synth": {}},
                                doc.get("data", {}), "data")
        self.split = self._merge(dict(DEFAULT_SPLIT), doc.get("split", {}), "split")
        self.seed = doc.get("seed", 0)
        if "seed" in doc:
            self.train["seed"] = doc["seed"]

    @staticmethod
    def _merge(defaults: dict, overrides: dict, section: str) -> dict:
        unknown = set(overrides) - set(defaults)
        if unknown:
            raise UsageError(f"unknown keys in config section {section!r}: "
                             f"{sorted(unknown)}")
        out = dict(defaults)
        out.update(overrides)
        return out

    @classmethod
    def load(cls, path: str | None) -> "RunConfig":
        if path is None:
            return cls()
        with open(path, encoding="utf-8") as f:
            try:
                doc = json.load(f)
            except json.JSONDecodeError as e:
                raise UsageError(f"{path}: invalid JSON: {e}") from None
        return cls(doc)

    def hp(self) -> Hyperparams:
        return Hyperparams.from_dict(self.hyperparams)

    def train_config(self) -> TrainConfig:
        return TrainConfig.from_dict(self.train)


def _require_new_file(path: str, force: bool):
    if os.path.exists(path) and not force:
        raise UsageError(f"{path} exists; pass --force to overwrite")


def cmd_gen(args) -> int:
    config = RunConfig.load(args.config)
    if not 1 <= args.carriers <= synth.N_CARRIERS:
        raise UsageError(f"--carriers must be in 1..{synth.N_CARRIERS}")
    if args.days < 1:
        raise UsageError("--days must be >= 1")
    _require_new_file(args.out, args.force)
    seed = args.seed if args.seed is not None else config.seed
    profiles = synth.default_profiles(args.carriers, seed)
    series = synth.generate(profiles, n_days=args.days, seed=seed)
    rows = save_csv(series, args.out)
    print(f"wrote {rows} rows to {args.out}")
    return EXIT_OK


def cmd_train(args) -> int:
    config = RunConfig.load(args.config)
    hp = config.hp()
    cfg = config.train_config()
    series = load_csv(args.data)

    split = config.split
    steps = (split["train_days"] * STEPS_PER_DAY,
             split["val_days"] * STEPS_PER_DAY,
             split["test_days"] * STEPS_PER_DAY)
    available = min(len(s) for s in series)
    if steps[0] + steps[1] > available:
        raise UsageError(
            f"data has {available} steps per carrier but the split needs "
            f"{steps[0]}+{steps[1]} for train+val; shrink split days")
    # the test span may be held in a separate file; only train+val are required
    test_steps = min(steps[2], available - steps[0] - steps[1])
    if test_steps < 1:
        test_steps = 0
    if test_steps:
        train_series, val_series, _ = chronological_split(
            series, (steps[0], steps[1], test_steps))
    else:
        train_series, val_series, _ = chronological_split(
            series, (steps[0], available - steps[0] - 1, 1))

    normalizer = Normalizer.fit(train_series)
    train_samples = make_samples(train_series, normalizer, hp.n_past, hp.n_future)
    val_samples = make_samples(val_series, normalizer, hp.n_past, hp.n_future)
    model, history = train(train_samples, val_samples, hp, cfg)
    save_checkpoint(args.out, model, cfg, normalizer)
    if args.history:
        write_history(history, args.history)
    print(f"trained {len(history)} epochs; checkpoint written to {args.out}")
    return EXIT_OK


def cmd_forecast(args) -> int:
    model, cfg, normalizer = load_checkpoint(args.model)
    if normalizer is None:
        raise UsageError(f"{args.model} has no normalizer; cannot forecast raw data")
    if args.horizon < 1:
        raise UsageError("--horizon must be >= 1")
    series = {s.carrier_id: s for s in load_csv(args.data)}
    if args.carrier not in series:
        raise UsageError(f"carrier {args.carrier} not present in {args.data}")
    target = series[args.carrier]
    start = parse_timestamp(getattr(args, "from"))
    index = {r.timestamp: i for i, r in enumerate(target.records)}
    if start not in index:
        raise UsageError(f"--from {getattr(args, 'from')} not found in the data")
    at = index[start]
    n_past = model.hp.n_past
    if at < n_past:
        raise UsageError(
            f"--from needs at least {n_past} preceding observations, found {at}")
    window, meta, next_ts = window_from_records(
        target.records[at - n_past:at], normalizer, args.carrier)
    steps = rollout(model, window, meta, next_ts, args.carrier, args.horizon)
    forecast_to_csv(steps, normalizer, args.out)
    print(f"wrote {len(steps)} forecast rows to {args.out}")
    return EXIT_OK


def cmd_eval(args) -> int:
    model, cfg, normalizer = load_checkpoint(args.model)
    if normalizer is None:
        raise UsageError(f"{args.model} has no normalizer; cannot evaluate raw data")
    series = load_csv(args.data)
    report = M.evaluate(model, normalizer, series, args.horizon, args.anchors)
    report["metadata"]["model_hash"] = M.model_hash(model, cfg, normalizer)
    report["metadata"]["data_span"] = {
        "start": min(str(s.records[0].timestamp) for s in series),
        "end": max(str(s.records[-1].timestamp) for s in series),
    }
    M.write_report(report, args.report)
    if args.plot_dir:
        os.makedirs(args.plot_dir, exist_ok=True)
        hp = model.hp
        for s in sorted(series, key=lambda x: x.carrier_id):
            anchor = M.anchor_positions(len(s), hp.n_past, args.horizon, 1)[0]
            window, meta, next_ts = window_from_records(
                s.records[anchor - hp.n_past:anchor], normalizer, s.carrier_id)
            steps = rollout(model, window, meta, next_ts, s.carrier_id, args.horizon)
            truth = np.array([r.residual_prb for r in
                              s.records[anchor:anchor + args.horizon]])
            M.emit_plot_svg(truth, steps,
                            os.path.join(args.plot_dir, f"carrier_{s.carrier_id}.svg"))
    agg = report["aggregate"]
    print(f"mean MAE {agg['mean_mae']:.4f}, "
          f"mean hit probability {agg['mean_hit_prob']:.4f}; "
          f"report written to {args.report}")
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="prbforecast",
        description="Residual-PRB forecasting on 15-minute LTE KPI series")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("gen", help="generate synthetic multi-carrier KPI traffic")
    p.add_argument("--config")
    p.add_argument("--out", required=True)
    p.add_argument("--days", type=int, default=30)
    p.add_argument("--carriers", type=int, default=3)
    p.add_argument("--seed", type=int)
    p.add_argument("--force", action="store_true")
    p.set_defaults(func=cmd_gen)

    p = sub.add_parser("train", help="train a model on a KPI CSV")
    p.add_argument("--data", required=True)
    p.add_argument("--config")
    p.add_argument("--out", required=True)
    p.add_argument("--history")
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("forecast", help="recursive forecast from a trained model")
    p.add_argument("--model", required=True)
    p.add_argument("--data", required=True)
    p.add_argument("--carrier", type=int, required=True)
    p.add_argument("--from", required=True,
                   help="first forecast instant (ISO-8601 UTC, on the grid)")
    p.add_argument("--horizon", type=int, required=True)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_forecast)

    p = sub.add_parser("eval", help="evaluate rollout metrics on held-out data")
    p.add_argument("--model", required=True)
    p.add_argument("--data", required=True)
    p.add_argument("--horizon", type=int, default=96)
    p.add_argument("--anchors", type=int, default=1)
    p.add_argument("--report", required=True)
    p.add_argument("--plot-dir")
    p.set_defaults(func=cmd_eval)
    return parser


def main(argv=None) -> int:
    logging.basicConfig(
        level=os.environ.get("PRBFORECAST_LOG", "WARNING").upper(),
        format="%(levelname)s %(name)s: %(message)s")
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as e:
        return EXIT_USAGE if e.code not in (0, None) else EXIT_OK
    try:
        return args.func(args)
    except (UsageError, IngestionError, CheckpointError, ValueError) as e:
        print(f"error: {e}", file=sys.stderr)
        return EXIT_USAGE
    except TrainingError as e:
        print(f"numerical failure: {e}", file=sys.stderr)
        return EXIT_NUMERICAL
    except OSError as e:
        print(f"I/O error: {e}", file=sys.stderr)
        return EXIT_IO


if __name__ == "__main__":
    sys.exit(main())
