import logging

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from pvfewshot.config import ChannelConfig, LossConfig, ModelConfig, PoolConfig, TrainConfig
from pvfewshot.data import NormalizerParams, SplitSpec, SynthProfile, make_windows, synth_generate
from pvfewshot.model import Forecaster
from pvfewshot.optim import NumericError
from pvfewshot.train import (
    BandStats,
    band_stats,
    evaluate_metrics,
    evaluate_on_windows,
    fit,
    one_factor_sweep,
    penalized_mse,
    predict,
    sensitivity_std,
)


# ---------------------------------------------------------------------------
# penalized loss


def test_in_band_loss_equals_plain_mse_exactly():
    rng = np.random.default_rng(0)
    y = rng.uniform(0.4, 0.6, size=(20, 1))  # tight spread, nothing leaves the band
    pred = y + rng.normal(0, 0.01, size=(20, 1))
    cfg = LossConfig()
    stats = band_stats(y, cfg)
    loss = penalized_mse(pred, y, cfg, stats).item()
    assert loss == float(((y - pred) ** 2).mean())


def test_ten_point_hand_case():
    y = np.array([0.0] * 9 + [10.0]).reshape(-1, 1)
    pred = y.copy()
    pred[-1] = 9.0
    cfg = LossConfig()
    stats = band_stats(y, cfg)
    assert stats.mean == 1.0 and stats.std == 3.0  # population std
    loss = penalized_mse(pred, y, cfg, stats).item()
    assert abs(loss - 0.3) < 1e-12


def test_perfect_prediction_zero_loss():
    y = np.arange(10.0).reshape(-1, 1)
    cfg = LossConfig()
    assert penalized_mse(y, y, cfg, band_stats(y, cfg)).item() == 0.0


def test_zero_std_no_penalty_with_warning(caplog):
    y = np.full((5, 1), 2.0)
    pred = y + 0.1
    cfg = LossConfig()
    stats = band_stats(y, cfg)
    with caplog.at_level(logging.WARNING):
        loss = penalized_mse(pred, y, cfg, stats).item()
    assert "band" in caplog.text
    assert loss == pytest.approx(0.01)


def test_penalized_never_below_plain_mse():
    rng = np.random.default_rng(1)
    cfg = LossConfig()
    for _ in range(100):
        n = rng.integers(3, 50)
        y = rng.normal(size=(n, 1)) * rng.uniform(0.5, 5)
        pred = y + rng.normal(size=(n, 1))
        stats = band_stats(y, cfg)
        plain = float(((y - pred) ** 2).mean())
        assert penalized_mse(pred, y, cfg, stats).item() >= plain - 1e-15


def test_band_on_raw_scale_with_normalized_residuals():
    # residuals on one scale, band membership decided on another
    y_norm = np.array([[0.1], [0.2], [0.9]])
    pred = np.array([[0.1], [0.2], [0.8]])
    y_raw = np.array([[1.0], [2.0], [9.0]])
    cfg = LossConfig(z_threshold=1.0)
    stats = BandStats(mean=2.0, std=1.0)  # only the 9.0 point is outside
    loss = penalized_mse(pred, y_norm, cfg, stats, band_values=y_raw).item()
    expect = (0.0 + 0.0 + 3.0 * 0.1 ** 2) / 3.0
    assert abs(loss - expect) < 1e-12


def test_per_day_band_scope():
    y = np.concatenate([np.zeros(96), np.full(96, 5.0)]).reshape(-1, 1)
    y[10, 0] = 3.0  # spike within day 0
    idx = np.arange(192)
    cfg = LossConfig(stats_scope="per_day", z_threshold=1.0)
    stats = band_stats(y, cfg, target_index=idx)
    assert set(stats.per_day) == {0, 1}
    pred = y - 0.1
    loss = penalized_mse(pred, y, cfg, stats, target_index=idx).item()
    assert loss > float(((y - pred) ** 2).mean())  # the spike is penalized


# ---------------------------------------------------------------------------
# metrics


def test_metrics_golden_case():
    m = evaluate_metrics(np.array([1.0, 2.0, 4.0]), np.array([1.0, 2.0, 3.0]))
    assert abs(m.mse - 1.0 / 3.0) < 1e-9
    assert abs(m.mae - 1.0 / 3.0) < 1e-9
    assert abs(m.rmse - 0.57735026919) < 1e-9
    assert abs(m.r2 - 0.5) < 1e-9


def test_metrics_perfect_fit():
    m = evaluate_metrics(np.array([1.0, 2.0]), np.array([1.0, 2.0]))
    assert (m.mse, m.mae, m.rmse, m.r2) == (0.0, 0.0, 0.0, 1.0)


def test_metrics_null_model_r2_zero():
    y = np.array([1.0, 2.0, 3.0, 4.0])
    m = evaluate_metrics(np.full(4, y.mean()), y)
    assert abs(m.r2) < 1e-12


def test_metrics_errors():
    with pytest.raises(ValueError, match="constant"):
        evaluate_metrics(np.array([1.0, 2.0]), np.array([3.0, 3.0]))
    with pytest.raises(ValueError, match="at least 2"):
        evaluate_metrics(np.array([1.0]), np.array([1.0]))
    with pytest.raises(ValueError, match="lengths"):
        evaluate_metrics(np.ones(3), np.ones(4))


@given(st.integers(0, 10_000))
@settings(max_examples=30, deadline=None)
def test_metrics_match_bruteforce(seed):
    rng = np.random.default_rng(seed)
    n = int(rng.integers(2, 40))
    t = rng.normal(size=n)
    if np.ptp(t) == 0:
        t[0] += 1.0
    p = t + rng.normal(size=n)
    m = evaluate_metrics(p, t)
    sq = [(pi - ti) ** 2 for pi, ti in zip(p, t)]
    assert abs(m.mse - sum(sq) / n) < 1e-12
    assert abs(m.mae - sum(abs(pi - ti) for pi, ti in zip(p, t)) / n) < 1e-12
    assert abs(m.rmse - (sum(sq) / n) ** 0.5) < 1e-12
    mean_t = sum(t) / n
    assert abs(m.r2 - (1 - sum(sq) / sum((ti - mean_t) ** 2 for ti in t))) < 1e-9
    assert abs(m.rmse - np.sqrt(m.mse)) < 1e-12


def test_sensitivity_std_goldens():
    assert abs(sensitivity_std([1.0, 2.0, 3.0]) - 0.816496580927726) < 1e-9
    assert sensitivity_std([4.2, 4.2, 4.2]) == 0.0
    with pytest.raises(ValueError):
        sensitivity_std([1.0])


def test_one_factor_sweep_holds_other_factors():
    base = TrainConfig()
    sweeps = one_factor_sweep(base)
    assert set(sweeps) == {"max_epoch", "lookback", "batch_size"}
    assert [c.max_epoch for c in sweeps["max_epoch"]] == [100, 200, 300, 500]
    for factor, cfgs in sweeps.items():
        for c in cfgs:
            for other in set(sweeps) - {factor}:
                assert getattr(c, other) == getattr(base, other)


# ---------------------------------------------------------------------------
# fit loop


TOY_MODEL_CFG = ModelConfig(
    pool=PoolConfig(hidden_size=8, attention_heads=4),
    channels=ChannelConfig(input_dim=8, hidden=8),
    head_hidden=8,
)


def _toy_windows(days=3, lookback=8, seed=0):
    series = synth_generate(seed=seed, days=days, profile=SynthProfile(cloud_noise=0.1))
    split = SplitSpec(days * 96 - 96, 48, 48)
    params = NormalizerParams.fit(series, split)
    return make_windows(series, split, lookback, params), params


def _toy_model(seed=0):
    return Forecaster(TOY_MODEL_CFG, n_features=4, lookback=8, seed=seed)


def test_fit_zero_epochs_leaves_model_untouched():
    ws, _ = _toy_windows()
    model = _toy_model()
    before = model.state_arrays()
    result = fit(model, ws["train"], ws["val"], TrainConfig(max_epoch=0, lookback=8), LossConfig())
    after = model.state_arrays()
    assert result.history == []
    assert all(np.array_equal(before[k], after[k]) for k in before)


def test_fit_deterministic_per_seed():
    ws, _ = _toy_windows()
    cfg = TrainConfig(max_epoch=2, batch_size=32, lookback=8, seed=11, lr=1e-3)
    r1 = fit(_toy_model(1), ws["train"], ws["val"], cfg, LossConfig())
    r2 = fit(_toy_model(1), ws["train"], ws["val"], cfg, LossConfig())
    for a, b in zip(r1.history, r2.history):
        assert abs(a.train_loss - b.train_loss) < 1e-9
        assert abs(a.val_loss - b.val_loss) < 1e-9


def test_fit_learns_toy_task():
    ws, _ = _toy_windows(days=3)
    model = _toy_model(2)
    cfg = TrainConfig(max_epoch=200, batch_size=64, lookback=8, seed=3, lr=1e-3)
    result = fit(model, ws["train"], ws["val"], cfg, LossConfig())
    assert result.history[-1].train_loss < 0.1 * result.history[0].train_loss


def test_fit_keeps_best_validation_checkpoint():
    ws, _ = _toy_windows(days=3, seed=5)
    model = _toy_model(4)
    cfg = TrainConfig(max_epoch=8, batch_size=64, lookback=8, seed=5, lr=3e-3)
    result = fit(model, ws["train"], ws["val"], cfg, LossConfig())
    val_losses = [h.val_loss for h in result.history]
    assert result.best_val_loss == min(val_losses)
    # the restored model reproduces the best validation loss, not the last
    from pvfewshot.train import _epoch_val_loss
    stats = band_stats(ws["train"].targets_raw, LossConfig(), ws["train"].target_index)
    assert _epoch_val_loss(model, ws["val"], LossConfig(), stats) == pytest.approx(
        result.best_val_loss, abs=1e-12)
    assert result.best_val_loss <= val_losses[-1]


def test_fit_without_validation_returns_last_epoch():
    ws, _ = _toy_windows()
    model = _toy_model(6)
    result = fit(model, ws["train"], None, TrainConfig(max_epoch=2, batch_size=64, lookback=8),
                 LossConfig())
    assert result.best_epoch is None
    assert all(h.val_loss is None for h in result.history)


def test_fit_aborts_on_nonfinite_loss():
    ws, _ = _toy_windows()
    bad = ws["train"]
    object.__setattr__(bad, "targets_norm", np.full_like(bad.targets_norm, np.inf))
    with pytest.raises(NumericError, match="epoch 0"):
        fit(_toy_model(7), bad, None, TrainConfig(max_epoch=1, lookback=8), LossConfig())


def test_predict_and_evaluate_on_windows():
    ws, params = _toy_windows()
    model = _toy_model(8)
    preds = predict(model, ws["test"])
    assert preds.shape == (len(ws["test"]), 1)
    report, raw = evaluate_on_windows(model, ws["test"], params)
    assert raw.shape == preds.shape
    assert np.isfinite(list(report.as_dict().values())).all()
