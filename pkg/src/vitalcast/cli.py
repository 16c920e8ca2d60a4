"""Command-line entry points: synth, train, evaluate, forecast.

Exit codes: 0 success, 2 invalid configuration or input (with a field-level
message), 3 checkpoint/config mismatch, 1 aborted run (non-finite loss).
All outputs are written to a temporary file and atomically renamed, so a
failed command leaves no partial files.
"""

from __future__ import annotations

import argparse
import json
import os
import sys
from dataclasses import replace

import numpy as np

from . import __version__
from .config import (ConfigError, ExperimentConfig, config_to_dict,
                     load_config, model_fingerprint)
from .data import (CHANNELS, GroupExcluded, INPUT_STEPS, PulsePressureError,
                   ScalingSpec, STEP_MINUTES, SyntheticConfig,
                   exclude_low_variance, generate_synthetic, ingest_csv,
                   load_dataset, scale_array, scale_group, split_dataset,
                   synthetic_to_csv, unscale_array, grid_channel_value,
                   impute_forward_fill)
from .evaluation import compare_to_persistence, evaluate_model
from .losses import DilateConfig
from .models import PersistenceModel
from .report import (horizon_csv, plot_forecast_examples, plot_horizon_curves,
                     render_results_table)
from .training import (TrainingDiverged, load_checkpoint, model_from_config,
                       restore_model, save_checkpoint, train_model)

EXIT_OK = 0
EXIT_ABORT = 1
EXIT_BAD_INPUT = 2
EXIT_MISMATCH = 3


def _fail(code: int, message: str) -> int:
    print(f"vitalcast: {message}", file=sys.stderr)
    return code


def _write_atomic(path: str, content: str | bytes) -> None:
    tmp = f"{path}.tmp"
    mode = "wb" if isinstance(content, bytes) else "w"
    with open(tmp, mode) as fh:
        fh.write(content)
    os.replace(tmp, path)


def _save_figure_atomic(path: str, plot_fn) -> None:
    tmp = f"{path}.tmp"
    plot_fn(tmp)
    os.replace(tmp, path)


def build_split(cfg: ExperimentConfig):
    """Materialize the configured dataset: scaled groups, screened, split."""
    spec = ScalingSpec()
    if cfg.data == "synthetic":
        groups = generate_synthetic(
            cfg.synthetic_patients, cfg.synthetic_seed,
            SyntheticConfig(noise_std=cfg.synthetic_noise_std,
                            deterioration=cfg.synthetic_deterioration))
        scaled = [scale_group(g, spec) for g in groups]
        kept, exclusions = exclude_low_variance(scaled)
    else:
        kept, exclusions = load_dataset(cfg.vitals_csv, cfg.diagnosis_csv, spec)
    split = split_dataset(kept, cfg.seed, cfg.target, cfg.covariates)
    n_channels = len(CHANNELS) if cfg.covariates else 1
    return split, exclusions, n_channels


def _exclusion_text(exclusions) -> str:
    lines = ["group_id,reason_code"]
    lines += [f"{gid},{reason}" for gid, reason in exclusions]
    return "\n".join(lines) + "\n"


# -- synth ---------------------------------------------------------------------


def cmd_synth(args) -> int:
    if args.patients < 1:
        return _fail(EXIT_BAD_INPUT, "--patients must be >= 1")
    os.makedirs(args.out, exist_ok=True)
    groups = generate_synthetic(
        args.patients, args.seed,
        SyntheticConfig(noise_std=args.noise_std,
                        deterioration=not args.no_deterioration))
    vitals = os.path.join(args.out, "vitals.csv")
    diagnoses = os.path.join(args.out, "diagnoses.csv")
    synthetic_to_csv(groups, f"{vitals}.tmp", f"{diagnoses}.tmp",
                     label="sepsis" if args.no_deterioration else "septic_shock")
    os.replace(f"{vitals}.tmp", vitals)
    os.replace(f"{diagnoses}.tmp", diagnoses)
    print(f"wrote {len(groups)} groups for {args.patients} patients to {args.out}")
    return EXIT_OK


# -- train ----------------------------------------------------------------------


def cmd_train(args) -> int:
    try:
        cfg = load_config(args.config)
    except ConfigError as exc:
        return _fail(EXIT_BAD_INPUT, str(exc))
    if cfg.model == "persistence":
        return _fail(EXIT_BAD_INPUT,
                     "config field 'model': persistence has no trainable "
                     "parameters; run evaluate instead")
    os.makedirs(args.out, exist_ok=True)
    try:
        split, exclusions, n_channels = build_split(cfg)
        if not split.train:
            return _fail(EXIT_BAD_INPUT, "empty training partition")
        model = model_from_config(cfg, n_channels)
    except (ValueError, OSError) as exc:
        return _fail(EXIT_BAD_INPUT, str(exc))
    try:
        result = train_model(
            model, split, loss_kind=cfg.loss,
            dilate_cfg=DilateConfig(cfg.alpha, cfg.gamma),
            lr=cfg.lr, batch_size=cfg.batch_size, max_epochs=cfg.max_epochs,
            patience=cfg.patience, seed=cfg.seed,
            log=None if args.quiet else print)
    except TrainingDiverged as exc:
        return _fail(EXIT_ABORT, f"training aborted: {exc}")
    ckpt_path = os.path.join(args.out, "checkpoint.json")
    save_checkpoint(f"{ckpt_path}.tmp", cfg, model, n_channels)
    os.replace(f"{ckpt_path}.tmp", ckpt_path)
    log_lines = ["epoch,train_loss,val_loss"]
    log_lines += [f"{h['epoch']},{repr(h['train_loss'])},{repr(h['val_loss'])}"
                  for h in result.history]
    _write_atomic(os.path.join(args.out, "training_log.csv"),
                  "\n".join(log_lines) + "\n")
    _write_atomic(os.path.join(args.out, "exclusions.csv"),
                  _exclusion_text(exclusions))
    print(f"best epoch {result.best_epoch} "
          f"(val loss {result.best_val_loss:.6f}); checkpoint at {ckpt_path}")
    return EXIT_OK


# -- evaluate ----------------------------------------------------------------------


def cmd_evaluate(args) -> int:
    try:
        cfg = load_config(args.config)
    except ConfigError as exc:
        return _fail(EXIT_BAD_INPUT, str(exc))
    if args.model:
        cfg = replace(cfg, model=args.model)
    if cfg.model == "persistence":
        model = None
    else:
        if not args.checkpoint:
            return _fail(EXIT_BAD_INPUT,
                         f"model {cfg.model!r} needs --checkpoint "
                         "(only persistence runs without one)")
        try:
            doc = load_checkpoint(args.checkpoint)
            model, ckpt_cfg, _ = restore_model(doc)
        except (OSError, ValueError, KeyError) as exc:
            return _fail(EXIT_BAD_INPUT, f"cannot load checkpoint: {exc}")
        if model_fingerprint(ckpt_cfg) != model_fingerprint(cfg):
            return _fail(EXIT_MISMATCH,
                         "checkpoint was trained under a different model "
                         "configuration than the one supplied")
    os.makedirs(args.out, exist_ok=True)
    try:
        split, exclusions, n_channels = build_split(cfg)
    except (ValueError, OSError) as exc:
        return _fail(EXIT_BAD_INPUT, str(exc))
    if not split.test:
        return _fail(EXIT_BAD_INPUT, "empty test partition")
    persistence = PersistenceModel(n_channels)
    persistence_report = evaluate_model(persistence, split.test, "persistence",
                                        loss_mode=cfg.loss)
    reports = [persistence_report]
    curves = {"persistence": persistence_report.horizon_curve}
    forecasts = {"persistence": persistence.predict_batch(
        np.stack([s.input for s in split.test]))}
    crossover = None
    if model is not None:
        model.eval()
        report = evaluate_model(model, split.test, cfg.model, loss_mode=cfg.loss)
        reports.insert(0, report)
        curves[cfg.model] = report.horizon_curve
        forecasts[cfg.model] = model.predict_batch(
            np.stack([s.input for s in split.test]))
        crossover = compare_to_persistence(report, persistence_report)

    doc = {
        "config": config_to_dict(cfg),
        "reports": [r.to_dict() for r in reports],
        "crossover_horizon": ("never" if crossover is None else crossover)
                             if model is not None else None,
        "n_excluded_groups": len(exclusions),
    }
    _write_atomic(os.path.join(args.out, "metrics.json"),
                  json.dumps(doc, sort_keys=True, indent=2) + "\n")
    table_reports = []
    for rep in reports:
        if rep.model == "persistence":
            for loss_mode in ("mse", "dilate"):
                entry = rep.to_dict()
                entry["loss_mode"] = loss_mode
                table_reports.append(entry)
        else:
            table_reports.append(rep.to_dict())
    _write_atomic(os.path.join(args.out, "results_table.txt"),
                  render_results_table(table_reports))
    _write_atomic(os.path.join(args.out, "horizon_curve.csv"),
                  horizon_csv(curves))
    _write_atomic(os.path.join(args.out, "exclusions.csv"),
                  _exclusion_text(exclusions))
    _save_figure_atomic(
        os.path.join(args.out, "horizon_curve.png"),
        lambda p: plot_horizon_curves(p, curves, cfg.target))
    _save_figure_atomic(
        os.path.join(args.out, "forecast_examples.png"),
        lambda p: plot_forecast_examples(p, split.test, forecasts))
    if crossover is not None:
        print(f"{cfg.model} drops below persistence at horizon step {crossover}")
    elif model is not None:
        print(f"{cfg.model} never drops below persistence within the horizon")
    print(f"evaluation written to {args.out}")
    return EXIT_OK


# -- forecast -----------------------------------------------------------------------


def _forecast_window(records, target: str, covariates: bool):
    """Scaled [C, 72] window from the tail of a single-patient vitals CSV."""
    patients = sorted({r.patient_id for r in records})
    if len(patients) != 1:
        raise ValueError(f"input must contain exactly one patient, got {patients}")
    offsets = [r.offset_min for r in records]
    if len(offsets) < INPUT_STEPS:
        raise ValueError(
            f"input provides {len(offsets)} steps; at least {INPUT_STEPS} "
            "steps of history are required")
    anchor = offsets[-1]
    grid = [anchor - (INPUT_STEPS - 1 - i) * STEP_MINUTES
            for i in range(INPUT_STEPS)]
    by_offset = {r.offset_min: r for r in records}
    order = [target] + [c for c in CHANNELS if c != target] if covariates else [target]
    rows = []
    for channel in order:
        raw = np.array([grid_channel_value(by_offset.get(o), channel) for o in grid])
        filled = impute_forward_fill(raw)
        rows.append(scale_array(filled, channel))
    return np.stack(rows)


def cmd_forecast(args) -> int:
    if args.model == "persistence" or not args.checkpoint:
        if args.model != "persistence":
            return _fail(EXIT_BAD_INPUT,
                         "either --checkpoint or --model persistence is required")
        model = PersistenceModel(1)
        target = args.target
        covariates = False
    else:
        try:
            doc = load_checkpoint(args.checkpoint)
            model, ckpt_cfg, _ = restore_model(doc)
        except (OSError, ValueError, KeyError) as exc:
            return _fail(EXIT_BAD_INPUT, f"cannot load checkpoint: {exc}")
        if ckpt_cfg.target != args.target:
            return _fail(EXIT_MISMATCH,
                         f"checkpoint forecasts {ckpt_cfg.target!r}, "
                         f"but --target is {args.target!r}")
        model.eval()
        target = ckpt_cfg.target
        covariates = ckpt_cfg.covariates
    try:
        records = ingest_csv(args.input)
        window = _forecast_window(records, target, covariates)
    except (OSError, ValueError, GroupExcluded, PulsePressureError) as exc:
        return _fail(EXIT_BAD_INPUT, f"cannot build forecast input: {exc}")
    scaled_forecast = model.predict(window)
    physical = unscale_array(scaled_forecast, target)
    lines = ["step,minutes_ahead,value"]
    lines += [f"{step},{step * STEP_MINUTES},{repr(float(v))}"
              for step, v in enumerate(physical, start=1)]
    _write_atomic(args.out, "\n".join(lines) + "\n")
    print(f"36-step {target} forecast written to {args.out}")
    return EXIT_OK


# -- entry point -------------------------------------------------------------------


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="vitalcast",
        description="Multi-horizon ICU vital-sign forecasting experiments.")
    parser.add_argument("--version", action="version", version=__version__)
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("synth", help="generate a synthetic vitals/diagnosis CSV pair")
    p.add_argument("--patients", type=int, required=True)
    p.add_argument("--seed", type=int, required=True)
    p.add_argument("--out", required=True, help="output directory")
    p.add_argument("--noise-std", type=float, default=1.5)
    p.add_argument("--no-deterioration", action="store_true",
                   help="disable the late MBP-decline / HR-rise ramp")
    p.set_defaults(func=cmd_synth)

    p = sub.add_parser("train", help="train a model from an experiment config")
    p.add_argument("--config", required=True)
    p.add_argument("--out", required=True, help="output directory")
    p.add_argument("--quiet", action="store_true")
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("evaluate", help="score a checkpoint (plus the "
                                        "persistence baseline) on the test split")
    p.add_argument("--checkpoint")
    p.add_argument("--config", required=True)
    p.add_argument("--out", required=True, help="output directory")
    p.add_argument("--model", choices=["persistence"],
                   help="evaluate the persistence baseline without a checkpoint")
    p.set_defaults(func=cmd_evaluate)

    p = sub.add_parser("forecast", help="forecast 36 steps from a vitals CSV tail")
    p.add_argument("--checkpoint")
    p.add_argument("--input", required=True, help="vitals CSV with >= 72 steps")
    p.add_argument("--target", required=True, choices=["hr", "mbp"])
    p.add_argument("--model", choices=["persistence"])
    p.add_argument("--out", default="forecast.csv")
    p.set_defaults(func=cmd_forecast)
    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        return args.func(args)
    except ConfigError as exc:
        return _fail(EXIT_BAD_INPUT, str(exc))


if __name__ == "__main__":
    sys.exit(main())
