"""Acceptance gate: one test per criterion, each at its stated tolerance.

Run with ``pytest tests/test_acceptance.py -v -s`` to see one pass line per
criterion.  Tolerances are pinned here, not calibrated elsewhere.
"""

import os
import time

import numpy as np

from helpers import max_rel_error, model_gradient_vs_fd
from oracles import brute_soft_dtw, brute_temporal
from vitalcast.cli import main
from vitalcast.data import (SyntheticConfig, derive_mbp, exclude_low_variance,
                            generate_synthetic, impute_forward_fill,
                            GroupExcluded, scale, scale_group, split_dataset,
                            unscale)
from vitalcast.engine import Adam, Tensor, finite_difference_gradient
from vitalcast.evaluation import (compare_to_persistence, evaluate_model,
                                  hard_dtw)
from vitalcast.losses import (DilateConfig, cost_matrix, dilate_backward,
                              dilate_loss, mse_loss, omega_matrix, soft_dtw,
                              soft_dtw_expected_path, temporal_loss)
from vitalcast.models import (NBeatsConfig, NBeatsModel, NHitsConfig,
                              NHitsModel, PersistenceModel, TftConfig,
                              TftModel)
from vitalcast.report import render_results_table
from vitalcast.training import train_model

# regression fixture: first horizon step where the trained benchmark model
# drops below persistence (deterministic for the pinned seeds below)
BENCHMARK_CROSSOVER_STEP = 3


def _ok(n, message):
    print(f"\n[PASS] criterion {n}: {message}")


def test_criterion_1_soft_dtw_matches_enumeration_oracle():
    rng = np.random.default_rng(101)
    started = time.time()
    worst = 0.0
    for _ in range(100):
        k = int(rng.integers(1, 5))
        y_hat = rng.uniform(0, 1, k)
        y_true = rng.uniform(0, 1, k)
        delta = cost_matrix(y_hat, y_true)
        for gamma in (1.0, 0.1, 0.01):
            value, _ = soft_dtw(delta, gamma)
            worst = max(worst, abs(value - brute_soft_dtw(delta, gamma)))
    elapsed = time.time() - started
    assert worst < 1e-8, f"worst deviation {worst}"
    assert elapsed < 5.0, f"took {elapsed:.2f}s"
    _ok(1, f"soft-DTW vs enumeration on 100 pairs: "
           f"worst {worst:.2e} in {elapsed:.2f}s")


def test_criterion_2_temporal_term_matches_enumeration_oracle():
    rng = np.random.default_rng(102)
    k = 3
    om = omega_matrix(k)
    worst = 0.0
    for _ in range(50):
        y_hat = rng.uniform(0, 1, k)
        y_true = rng.uniform(0, 1, k)
        delta = cost_matrix(y_hat, y_true)
        gamma = float(rng.choice([1.0, 0.1, 0.01]))
        _, r = soft_dtw(delta, gamma)
        e = soft_dtw_expected_path(r, delta, gamma)
        worst = max(worst, abs(temporal_loss(e, om)
                               - brute_temporal(delta, om, gamma)))
    assert worst < 1e-10, f"worst deviation {worst}"
    _ok(2, f"temporal term vs enumeration on 50 pairs at k=3: worst {worst:.2e}")


def test_criterion_3_gamma_to_zero_reaches_hard_dtw():
    # the gap equals gamma * log(sum over paths of exp(-excess/gamma)), so a
    # near-tie between two warping paths can push a single pair slightly past
    # the tolerance; the pinned draw keeps every pair inside it, and the
    # monotone-convergence and mean-gap assertions hold for any draw
    rng = np.random.default_rng(103)
    worst = 0.0
    mean = 0.0
    for _ in range(50):
        a = rng.normal(0.0, 1.0, 10)
        b = rng.normal(0.0, 1.0, 10)
        delta = cost_matrix(a, b)
        hard = hard_dtw(a, b)
        previous_gap = np.inf
        for gamma in (1.0, 0.1, 0.01, 0.001):
            value, _ = soft_dtw(delta, gamma)
            assert value <= hard
            gap = hard - value
            assert gap <= previous_gap + 1e-12
            previous_gap = gap
        worst = max(worst, previous_gap)
        mean += previous_gap / 50.0
    assert worst < 1e-3, f"worst gap {worst}"
    assert mean < 1e-3
    _ok(3, f"|soft_dtw(1e-3) - hard_dtw| on 50 pairs at k=10: "
           f"worst {worst:.2e}, mean {mean:.2e}, convergence monotone")


def test_criterion_4_gradient_suite_matches_finite_differences():
    rng = np.random.default_rng(104)

    worst_dilate = 0.0
    cfg = DilateConfig(alpha=0.5, gamma=0.01)
    for _ in range(10):
        y_hat = rng.uniform(0, 1, 8)
        y_true = rng.uniform(0, 1, 8)
        grad = dilate_backward(y_hat, y_true, cfg)
        fd = finite_difference_gradient(lambda v: dilate_loss(v, y_true, cfg),
                                        y_hat, 1e-5)
        worst_dilate = max(worst_dilate, max_rel_error(grad, fd))
    assert worst_dilate < 1e-4

    worst_mse = 0.0
    for _ in range(10):
        pred0 = rng.uniform(0, 1, 12)
        target = rng.uniform(0, 1, 12)
        pred = Tensor(pred0, requires_grad=True)
        mse_loss(pred, target).backward()
        fd = finite_difference_gradient(
            lambda v: float(((v - target) ** 2).mean()), pred0, 1e-5)
        worst_mse = max(worst_mse, max_rel_error(pred.grad, fd))
    assert worst_mse < 1e-4

    worst_models = {}
    for kind in ("nbeats", "nhits"):
        worst = 0.0
        for trial in range(10):
            if kind == "nbeats":
                model = NBeatsModel(NBeatsConfig(1, 1, 8, 4), seed=200 + trial)
            else:
                model = NHitsModel(NHitsConfig(1, 1, 8, 4, (8,), (12,)),
                                   seed=300 + trial)
            x = rng.uniform(0, 1, (2, 1, 72))
            y = rng.uniform(0, 1, (2, 36))
            worst = max(worst, model_gradient_vs_fd(model, x, y, mse_loss))
        worst_models[kind] = worst
        assert worst < 1e-4, f"{kind} worst relative error {worst}"

    _ok(4, "gradients vs central differences: "
           f"dilate {worst_dilate:.2e}, mse {worst_mse:.2e}, "
           f"nbeats {worst_models['nbeats']:.2e}, "
           f"nhits {worst_models['nhits']:.2e}")


def test_criterion_5_construction_invariants():
    rng = np.random.default_rng(105)
    x = rng.uniform(0, 1, (3, 1, 72))

    nbeats = NBeatsModel(NBeatsConfig(3, 1, 32, 8), seed=51)
    total, pieces = nbeats.forward_with_blocks(Tensor(x))
    gap_nbeats = np.abs(total.data - sum(p.data for p in pieces)).max()
    assert gap_nbeats < 1e-12

    nhits = NHitsModel(NHitsConfig(3, 1, 32, 8), seed=52)
    total_h, pieces_h = nhits.forward_with_blocks(Tensor(x))
    gap_nhits = np.abs(total_h.data - sum(p.data for p in pieces_h)).max()
    assert gap_nhits < 1e-12

    degenerate = NHitsModel(NHitsConfig(3, 1, 32, 8, (1, 1, 1), (36, 36, 36)),
                            seed=53)
    reference = NBeatsModel(NBeatsConfig(3, 1, 32, 8), seed=53)
    gap_equiv = np.abs(degenerate.forward(Tensor(x)).data
                       - reference.forward(Tensor(x)).data).max()
    assert gap_equiv < 1e-12

    tft = TftModel(TftConfig(16, 4, 0.0), n_channels=3, seed=54)
    x3 = rng.uniform(0, 1, (2, 3, 72))
    _, attn, vsn = tft.forward_with_details(Tensor(x3))
    attn_gap = np.abs(attn.data.sum(axis=-1) - 1.0).max()
    vsn_gap = np.abs(vsn.data.sum(axis=-1) - 1.0).max()
    assert attn_gap < 1e-12 and vsn_gap < 1e-12
    for t in range(36):
        assert (attn.data[:, :, t, 73 + t:] == 0.0).all()

    _ok(5, "residual-sum identities "
           f"(nbeats {gap_nbeats:.1e}, nhits {gap_nhits:.1e}), "
           f"kernel-1 equivalence {gap_equiv:.1e}, attention/selection "
           f"sums within {max(attn_gap, vsn_gap):.1e}, causal mask exact")


def test_criterion_6_overfit_smoke_test():
    rng = np.random.default_rng(106)
    x = np.empty((8, 1, 72))
    y = np.empty((8, 36))
    t = np.arange(108)
    for i in range(8):
        period = rng.uniform(18, 40)
        phase = rng.uniform(0, 2 * np.pi)
        series = 0.5 + 0.25 * np.sin(2 * np.pi * t / period + phase)
        x[i, 0] = series[:72]
        y[i] = series[72:]

    budget_started = time.time()
    results = {}
    for name, model in (
        ("nbeats", NBeatsModel(NBeatsConfig(3, 1, 64, 16), seed=61)),
        ("nhits", NHitsModel(NHitsConfig(3, 1, 64, 16), seed=62)),
        ("tft", TftModel(TftConfig(32, 4, 0.0), seed=63)),
    ):
        optimizer = Adam(model.parameters(), lr=1e-3)
        model.train(True)
        value = np.inf
        for step in range(1, 2001):
            loss = mse_loss(model.forward(Tensor(x)), y)
            value = loss.item()
            if value < 1e-3:
                break
            optimizer.zero_grad()
            loss.backward()
            optimizer.step()
        results[name] = (step, value)
        assert value < 1e-3, f"{name} stuck at {value} after {step} steps"
    elapsed = time.time() - budget_started
    assert elapsed < 300.0, f"overfit suite took {elapsed:.0f}s"
    summary = ", ".join(f"{k} {v[1]:.1e} in {v[0]} steps"
                        for k, v in results.items())
    _ok(6, f"8-sample overfit within 2000 steps ({summary}; {elapsed:.0f}s total)")


def test_criterion_7_desk_scale_benchmark_beats_persistence():
    groups = generate_synthetic(200, seed=7,
                                config=SyntheticConfig(noise_std=1.5,
                                                       deterioration=True))
    scaled = [scale_group(g) for g in groups]
    kept, _ = exclude_low_variance(scaled)
    split = split_dataset(kept, seed=42, target_channel="mbp",
                          with_covariates=False)
    model = NHitsModel(NHitsConfig(hidden_width=128, theta_dim=16), seed=42)
    train_model(model, split, loss_kind="mse", lr=1e-3, batch_size=32,
                max_epochs=60, patience=10, seed=42)
    model.eval()
    report = evaluate_model(model, split.test, "nhits")
    baseline = evaluate_model(PersistenceModel(1), split.test, "persistence")

    diffs = np.diff(baseline.horizon_curve)
    assert (diffs >= -1e-15).all(), "persistence curve must be non-decreasing"
    crossover = compare_to_persistence(report, baseline)
    assert crossover is not None and crossover <= 36
    assert crossover == BENCHMARK_CROSSOVER_STEP, (
        f"crossover moved: expected {BENCHMARK_CROSSOVER_STEP}, got {crossover}")
    _ok(7, f"trained model crosses below persistence at h={crossover} "
           f"(model DTW {report.dtw:.4f} vs persistence {baseline.dtw:.4f})")


def test_criterion_8_pipeline_determinism_and_hygiene(tmp_path):
    # byte-identical splits
    def split_bytes():
        groups = generate_synthetic(20, seed=5)
        scaled = [scale_group(g) for g in groups]
        kept, _ = exclude_low_variance(scaled)
        split = split_dataset(kept, seed=9, target_channel="hr",
                              with_covariates=True)
        blob = b""
        for part in (split.train, split.validation, split.test):
            for s in part:
                blob += s.group_id.encode() + s.input.tobytes() + s.target.tobytes()
        return blob

    assert split_bytes() == split_bytes()

    # byte-identical checkpoints and reports through the CLI
    config = tmp_path / "exp.cfg"
    config.write_text("data = synthetic\nsynthetic_patients = 12\n"
                      "synthetic_seed = 3\nmodel = nbeats\nhidden_width = 32\n"
                      "theta_dim = 8\nn_stacks = 1\nmax_epochs = 3\nseed = 2\n")
    outputs = []
    for run in ("r1", "r2"):
        train_dir = str(tmp_path / run)
        eval_dir = str(tmp_path / (run + "_eval"))
        assert main(["train", "--config", str(config), "--out", train_dir,
                     "--quiet"]) == 0
        assert main(["evaluate", "--checkpoint",
                     os.path.join(train_dir, "checkpoint.json"),
                     "--config", str(config), "--out", eval_dir]) == 0
        blob = b""
        for name in ("checkpoint.json", "training_log.csv"):
            blob += open(os.path.join(train_dir, name), "rb").read()
        for name in ("metrics.json", "results_table.txt", "horizon_curve.csv"):
            blob += open(os.path.join(eval_dir, name), "rb").read()
        outputs.append(blob)
    assert outputs[0] == outputs[1]

    # exclusions carry machine-readable reason codes
    try:
        impute_forward_fill([1.0] + [np.nan] * 6 + [2.0])
        raise AssertionError("gap should exclude")
    except GroupExcluded as exc:
        assert exc.reason == "gap-too-long"

    # scale/unscale round trip to 1e-12
    worst_roundtrip = 0.0
    for channel, hi in (("hr", 300.0), ("mbp", 190.0), ("rr", 100.0)):
        for value in np.linspace(0.0, hi, 97):
            worst_roundtrip = max(
                worst_roundtrip,
                abs(unscale(scale(value, channel), channel) - value))
    assert worst_roundtrip < 1e-12

    # MBP derivation is exactly dbp + (sbp - dbp)/3
    rng = np.random.default_rng(108)
    for _ in range(100):
        dbp = rng.uniform(40, 110)
        sbp = dbp + rng.uniform(0, 80)
        assert derive_mbp(sbp, dbp) == dbp + (sbp - dbp) / 3.0

    _ok(8, "byte-identical splits/checkpoints/reports, coded exclusions, "
           f"scale round trip within {worst_roundtrip:.1e}, exact MBP formula")


def test_criterion_9_results_table_fixture():
    reports = []
    for target, mse_scaled, dtw in (("mbp", 24.55, 34.50), ("hr", 7.35, 17.52)):
        for loss_mode in ("mse", "dilate"):
            reports.append({
                "model": "persistence", "target_channel": target,
                "covariates": False, "loss_mode": loss_mode,
                "mse": mse_scaled / 1e4, "mse_scaled": mse_scaled,
                "dtw": dtw, "horizon_curve": [0.0] * 36, "n_samples": 402,
            })
    text = render_results_table(reports)
    lines = text.splitlines()
    assert "Mean Blood Pressure" in lines[0] and "Heart Rate" in lines[0]
    assert "MSE*" in lines[1] and "DTW" in lines[1]
    assert "L-1" in lines[2] and "L-2" in lines[2]
    row = next(l for l in lines if l.startswith("persistence"))
    for value in ("24.55", "34.50", "7.35", "17.52"):
        assert row.count(value) == 2

    scaled = render_results_table([{
        "model": "nhits", "target_channel": "mbp", "covariates": True,
        "loss_mode": "mse", "mse": 0.001878, "mse_scaled": 18.78, "dtw": 20.44,
        "horizon_curve": [0.0] * 36, "n_samples": 1,
    }])
    assert "18.78" in scaled  # the 1e4 display convention

    _ok(9, "table fixture renders 24.55/34.50 and 7.35/17.52 with x1e4 MSE")
