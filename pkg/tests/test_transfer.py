import numpy as np
import pytest
from hypothesis import given, strategies as st

from pvfewshot.config import (
    ChannelConfig,
    ModelConfig,
    PoolConfig,
    ReliefFConfig,
    RunConfig,
    SplitConfig,
    TrainConfig,
    TransferConfig,
)
from pvfewshot.data import DataError, SynthProfile, synth_generate
from pvfewshot.transfer import (
    decide,
    fine_tune,
    pretrain,
    preprocess_station,
    probe_and_decide,
    run_transfer,
    target_windows,
)
from pvfewshot.data import SplitSpec


def tiny_config(seed=3):
    return RunConfig(
        seed=seed,
        relieff=ReliefFConfig(k_neighbors=5, n_bins=4, top_n=3),
        model=ModelConfig(pool=PoolConfig(hidden_size=8, attention_heads=4),
                          channels=ChannelConfig(input_dim=8, hidden=8),
                          head_hidden=8),
        train=TrainConfig(max_epoch=2, batch_size=64, lookback=8, lr=1e-3, seed=seed),
        transfer=TransferConfig(probe_len=50, finetune_max_epoch=2, finetune_batch=16),
        source_split=SplitConfig(188, 50, 50),
        target_split=SplitConfig(92, 0, 100),
    )


def _source(seed=20):
    return synth_generate(seed=seed, days=3, station_id=f"src{seed}")


def _target(seed=30):
    return synth_generate(seed=seed, days=2, station_id="target",
                          profile=SynthProfile(peak_kw=13.0, cloud_noise=0.25))


# ---------------------------------------------------------------------------
# decision rule


def test_decision_boundary():
    cfg = TransferConfig(mae_threshold=0.2)
    assert decide(0.25, cfg).fine_tune is True
    assert decide(0.15, cfg).fine_tune is False
    assert decide(0.2, cfg).fine_tune is False          # at the threshold: skip
    assert decide(0.2 + 1e-9, cfg).fine_tune is True    # just above: fine-tune


@given(st.floats(min_value=0.0, max_value=10.0, allow_nan=False))
def test_decision_is_pure_threshold_function(mae):
    cfg = TransferConfig(mae_threshold=0.2)
    d = decide(mae, cfg)
    assert d.fine_tune == (mae > cfg.mae_threshold)
    assert d.probe_mae == mae


# ---------------------------------------------------------------------------
# preprocessing stage


def test_preprocess_corrects_training_split_only():
    cfg = tiny_config()
    src = _source()
    power = src.power.copy()
    power[50] = 200.0   # training-split spike
    power[250] = 200.0  # test-split spike, must survive
    spiky = src.with_power(power)
    prep = preprocess_station(spiky, SplitSpec(188, 50, 50), cfg)
    assert 50 in prep.outlier_indices
    assert prep.series.power[50] != 200.0
    assert prep.series.power[250] == 200.0
    assert len(prep.selected) == 3


def test_preprocess_without_ranking_keeps_all_columns():
    cfg = tiny_config()
    prep = preprocess_station(_source(), SplitSpec(188, 50, 50), cfg, rank_features=False)
    assert prep.ranking is None
    assert prep.selected == [0, 1, 2, 3]


def test_preprocess_ranks_informative_features_first():
    cfg = tiny_config()
    prep = preprocess_station(_source(), SplitSpec(188, 50, 50), cfg)
    # irradiance is a noisy copy of the power driver: must rank first
    assert prep.ranking.order[0] == 0
    assert 0 in prep.selected


# ---------------------------------------------------------------------------
# pretraining and probe


@pytest.fixture(scope="module")
def bundle():
    return pretrain(_source(), tiny_config())


def test_pretrain_bundle_contents(bundle):
    assert bundle.model.n_features == 3
    assert len(bundle.fit_result.history) == 2
    assert bundle.test_metrics is not None
    assert np.isfinite(bundle.test_metrics.mse)


def test_probe_uses_target_scale_and_decides(bundle):
    cfg = tiny_config()
    windows, params = target_windows(_target(), bundle.selected, cfg)
    decision = probe_and_decide(bundle.model, windows["test"], params, cfg.transfer)
    assert decision.probe_mae > 0
    assert decision.fine_tune == (decision.probe_mae > cfg.transfer.mae_threshold)


def test_probe_too_short_rejected(bundle):
    cfg = tiny_config()
    cfg.transfer.probe_len = 1000
    windows, params = target_windows(_target(), bundle.selected, cfg)
    with pytest.raises(DataError, match="probe"):
        probe_and_decide(bundle.model, windows["test"], params, cfg.transfer)


def test_fine_tune_zero_epochs_is_identity(bundle):
    cfg = tiny_config()
    cfg.transfer.finetune_max_epoch = 0
    windows, _ = target_windows(_target(), bundle.selected, cfg)
    adapted, result = fine_tune(bundle, windows["train"], cfg)
    assert result.history == []
    before = bundle.model.state_arrays()
    after = adapted.state_arrays()
    assert all(np.array_equal(before[k], after[k]) for k in before)


def test_fine_tune_never_mutates_pretrained_model(bundle):
    cfg = tiny_config()
    windows, _ = target_windows(_target(), bundle.selected, cfg)
    before = bundle.model.state_arrays()
    adapted, _ = fine_tune(bundle, windows["train"], cfg)
    after = bundle.model.state_arrays()
    assert all(np.array_equal(before[k], after[k]) for k in before)
    changed = any(not np.array_equal(adapted.state_arrays()[k], before[k]) for k in before)
    assert changed


def test_fine_tune_deterministic(bundle):
    cfg = tiny_config()
    windows, _ = target_windows(_target(), bundle.selected, cfg)
    a, _ = fine_tune(bundle, windows["train"], cfg)
    b, _ = fine_tune(bundle, windows["train"], cfg)
    sa, sb = a.state_arrays(), b.state_arrays()
    assert all(np.array_equal(sa[k], sb[k]) for k in sa)


def test_fine_tune_empty_split_rejected(bundle):
    cfg = tiny_config()
    windows, _ = target_windows(_target(), bundle.selected, cfg)
    empty = windows["test"]
    object.__setattr__(empty, "inputs_pv", empty.inputs_pv[:0])
    with pytest.raises(DataError, match="empty"):
        fine_tune(bundle, empty, cfg)


# ---------------------------------------------------------------------------
# full run


def test_run_transfer_report_contract():
    cfg = tiny_config()
    candidates = [_source(21), _source(20)]
    report = run_transfer(candidates, _target(), cfg)
    assert report.source_id in {"src20", "src21"}
    assert len(report.mmd_table) == 2
    assert set(report.metrics) == {"direct", "transfer", "fine_tuned"}
    assert report.fine_tune_applied == report.decision.fine_tune
    d = report.as_dict()
    assert d["metrics"]["transfer"]["mae"] == report.metrics["transfer"].mae
    assert len(report.selected_features) == 3


def test_run_transfer_stage_errors_are_labeled():
    cfg = tiny_config()
    with pytest.raises(ValueError, match="empty"):
        run_transfer([], _target(), cfg)
