"""Results-table rendering, delimited plot data and matplotlib figures."""

from __future__ import annotations

import matplotlib

matplotlib.use("Agg")

import matplotlib.pyplot as plt
import numpy as np

from .data import STEP_MINUTES

CHANNEL_TITLES = {
    "mbp": "Mean Blood Pressure",
    "hr": "Heart Rate",
    "rr": "Respiration Rate",
}

LOSS_COLUMNS = (("mse", "L-1"), ("dilate", "L-2"))
MISSING = "—"


def _cov_label(covariates: bool | None) -> str:
    if covariates is None:
        return "-"
    return "W C" if covariates else "W/o C"


def render_results_table(reports) -> str:
    """Text grid of MSE* / DTW columns per target channel, rows keyed by
    (model, covariate mode).  MSE* is MSE times 1e4; absent cells render as
    an em dash.  Accepts EvalReport objects or equivalent dicts."""
    rows: dict[tuple, dict] = {}
    targets: list[str] = []
    for rep in reports:
        rec = rep.to_dict() if hasattr(rep, "to_dict") else dict(rep)
        cov = None if rec["model"] == "persistence" else rec["covariates"]
        key = (rec["model"], cov)
        cells = rows.setdefault(key, {})
        target = rec["target_channel"]
        if target not in targets:
            targets.append(target)
        cells[(target, "mse", rec["loss_mode"])] = rec["mse"] * 1e4
        cells[(target, "dtw", rec["loss_mode"])] = rec["dtw"]

    col_w = 8
    name_w = max([len("Model")] + [len(k[0]) for k in rows]) + 2
    cov_w = 6

    def fmt(value) -> str:
        if value is None:
            return MISSING.rjust(col_w)
        text = f"{value:.2f}"
        if text.lstrip("-") == "0.00" and value != 0.0:
            text = f"{value:.4f}"
        return text.rjust(col_w)

    group_w = 4 * (col_w + 1) - 1
    lines = []
    header1 = " " * (name_w + cov_w + 1)
    header2 = "Model".ljust(name_w) + "Cov.".ljust(cov_w) + " "
    header3 = " " * (name_w + cov_w + 1)
    for target in targets:
        header1 += "| " + CHANNEL_TITLES.get(target, target).center(group_w) + " "
        header2 += "| " + "MSE*".center(2 * col_w + 1) + " " + "DTW".center(2 * col_w + 1) + " "
        cell = " ".join(label.center(col_w) for _, label in LOSS_COLUMNS)
        header3 += "| " + cell + " " + cell + " "
    lines.extend([header1.rstrip(), header2.rstrip(), header3.rstrip()])
    lines.append("-" * max(len(l) for l in lines))
    for (model, cov), cells in rows.items():
        line = model.ljust(name_w) + _cov_label(cov).ljust(cov_w) + " "
        for target in targets:
            group = " ".join(
                fmt(cells.get((target, metric, loss)))
                for metric in ("mse", "dtw") for loss, _ in LOSS_COLUMNS)
            line += "| " + group + " "
        lines.append(line.rstrip())
    return "\n".join(lines) + "\n"


def horizon_csv(curves: dict[str, np.ndarray]) -> str:
    """Delimited horizon sweep: one row per (horizon step, model)."""
    lines = ["horizon_step,model,dtw"]
    for model, curve in curves.items():
        for h, value in enumerate(curve, start=1):
            lines.append(f"{h},{model},{repr(float(value))}")
    return "\n".join(lines) + "\n"


def plot_horizon_curves(path, curves: dict[str, np.ndarray],
                        target_channel: str = "") -> None:
    """DTW error versus forecast horizon for each model, saved to `path`."""
    fig, ax = plt.subplots(figsize=(6, 4))
    minutes = np.arange(1, len(next(iter(curves.values()))) + 1) * STEP_MINUTES
    for model, curve in curves.items():
        ax.plot(minutes, curve, label=model, linewidth=1.6)
    ax.set_xlabel("forecast horizon (minutes)")
    ax.set_ylabel("DTW error")
    title = "Horizon sweep"
    if target_channel:
        title += f" ({CHANNEL_TITLES.get(target_channel, target_channel)})"
    ax.set_title(title)
    ax.grid(alpha=0.3)
    ax.legend()
    fig.tight_layout()
    fig.savefig(path, dpi=120, format="png")
    plt.close(fig)


def plot_forecast_examples(path, samples, forecasts: dict[str, np.ndarray],
                           max_examples: int = 3) -> None:
    """Overlay of input tail, truth, and each model's forecast for a few
    test windows."""
    n = min(max_examples, len(samples))
    fig, axes = plt.subplots(n, 1, figsize=(6, 2.6 * n), squeeze=False)
    for row in range(n):
        ax = axes[row][0]
        sample = samples[row]
        history = sample.input[0]
        past_t = np.arange(-len(history) + 1, 1) * STEP_MINUTES
        future_t = np.arange(1, len(sample.target) + 1) * STEP_MINUTES
        ax.plot(past_t, history, color="gray", linewidth=1.0, label="input")
        ax.plot(future_t, sample.target, color="black", linewidth=1.4, label="truth")
        for model, preds in forecasts.items():
            ax.plot(future_t, preds[row], linewidth=1.2, label=model)
        ax.axvline(0, color="gray", linestyle=":", linewidth=0.8)
        ax.set_ylabel(sample.target_channel)
        ax.grid(alpha=0.3)
        if row == 0:
            ax.legend(fontsize=8, ncol=2)
    axes[-1][0].set_xlabel("minutes from forecast origin")
    fig.tight_layout()
    fig.savefig(path, dpi=120, format="png")
    plt.close(fig)
