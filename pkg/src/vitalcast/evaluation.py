"""Non-differentiable evaluation: MSE, hard DTW, horizon sweeps and the
comparison against the persistence baseline.

Metrics are computed on scaled [0, 1] values per sample and averaged over
the test set in a fixed order, so reports are deterministic.  MSE is also
reported times 1e4 (the compact convention used in results tables).
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .data import HORIZON_STEPS

MSE_TABLE_FACTOR = 1e4


def _dtw_batch(a: np.ndarray, b: np.ndarray) -> np.ndarray:
    """Classical DTW over squared differences for a batch of equal-length
    pairs: a is [s, m], b is [s, n]; returns [s] minimal path costs."""
    s, m = a.shape
    n = b.shape[1]
    acc = np.full((s, m + 1, n + 1), np.inf)
    acc[:, 0, 0] = 0.0
    for i in range(1, m + 1):
        for j in range(1, n + 1):
            cost = (a[:, i - 1] - b[:, j - 1]) ** 2
            acc[:, i, j] = cost + np.minimum(
                np.minimum(acc[:, i - 1, j], acc[:, i, j - 1]), acc[:, i - 1, j - 1])
    return acc[:, m, n]


def hard_dtw(a, b) -> float:
    """Minimal accumulated squared-difference cost over monotone alignments."""
    a = np.asarray(a, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    if a.ndim != 1 or b.ndim != 1 or a.size < 1 or b.size < 1:
        raise ValueError(
            f"hard_dtw needs two non-empty vectors, got shapes {a.shape}, {b.shape}")
    return float(_dtw_batch(a[None], b[None])[0])


@dataclass
class EvalReport:
    """Metrics for one (model, target, covariate-mode, loss-mode) cell."""

    model: str
    target_channel: str
    covariates: bool
    loss_mode: str
    mse: float
    mse_scaled: float
    dtw: float
    horizon_curve: np.ndarray
    n_samples: int

    def to_dict(self) -> dict:
        return {
            "model": self.model,
            "target_channel": self.target_channel,
            "covariates": self.covariates,
            "loss_mode": self.loss_mode,
            "mse": self.mse,
            "mse_scaled": self.mse_scaled,
            "dtw": self.dtw,
            "horizon_curve": [float(v) for v in self.horizon_curve],
            "n_samples": self.n_samples,
        }


def _forecasts_and_truth(model, samples):
    inputs = np.stack([s.input for s in samples])
    truth = np.stack([s.target for s in samples])
    return model.predict_batch(inputs), truth


def horizon_sweep(model, samples) -> np.ndarray:
    """Mean hard DTW of forecast/truth prefixes for every horizon 1..36."""
    forecasts, truth = _forecasts_and_truth(model, samples)
    return _horizon_curve(forecasts, truth)


def _horizon_curve(forecasts: np.ndarray, truth: np.ndarray) -> np.ndarray:
    curve = np.empty(HORIZON_STEPS)
    for h in range(1, HORIZON_STEPS + 1):
        curve[h - 1] = _dtw_batch(forecasts[:, :h], truth[:, :h]).mean()
    return curve


def evaluate_model(model, samples, model_name: str, loss_mode: str = "mse") -> EvalReport:
    """Score a frozen model on a test set."""
    if not samples:
        raise ValueError("cannot evaluate on an empty test set")
    forecasts, truth = _forecasts_and_truth(model, samples)
    mse = float(((forecasts - truth) ** 2).mean(axis=1).mean())
    curve = _horizon_curve(forecasts, truth)
    sample = samples[0]
    return EvalReport(
        model=model_name,
        target_channel=sample.target_channel,
        covariates=bool(sample.covariate_channels),
        loss_mode=loss_mode,
        mse=mse,
        mse_scaled=mse * MSE_TABLE_FACTOR,
        dtw=float(curve[-1]),
        horizon_curve=curve,
        n_samples=len(samples),
    )


def compare_to_persistence(report: EvalReport,
                           persistence_report: EvalReport) -> int | None:
    """First horizon (1-based) where the model's DTW drops below the
    persistence baseline's, or None when it never does."""
    model_curve = np.asarray(report.horizon_curve)
    base_curve = np.asarray(persistence_report.horizon_curve)
    below = np.nonzero(model_curve < base_curve)[0]
    return int(below[0]) + 1 if below.size else None
