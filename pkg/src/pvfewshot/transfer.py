"""Probe-and-decide transfer of a pre-trained forecaster to a few-shot station.

Pipeline: pick the source station by distribution distance, correct its
training split, rank and select features, pre-train; then evaluate the
frozen model on the target's probe segment and fine-tune (lower
learning rate, fewer epochs, every parameter trainable) only when the
probe MAE exceeds the configured threshold. A from-scratch model on the
target's own small split provides the direct-prediction baseline.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass, field, replace

import numpy as np

from .config import RunConfig, SplitConfig, TrainConfig, TransferConfig
from .data import (
    DataError,
    NormalizerParams,
    SplitSpec,
    StationSeries,
    WindowSet,
    make_windows,
)
from .model import Forecaster
from .preprocess import (
    FeatureRanking,
    SourceSelection,
    discretize_targets,
    hampel_correct,
    relieff_rank,
    select_features,
    select_source,
)
from .train import (
    BandStats,
    FitResult,
    MetricsReport,
    band_stats,
    evaluate_on_windows,
    fit,
)

log = logging.getLogger(__name__)


def _split_spec(cfg: SplitConfig) -> SplitSpec:
    return SplitSpec(cfg.train_len, cfg.val_len, cfg.test_len)


# ---------------------------------------------------------------------------
# preprocessing stage


@dataclass
class PreprocessResult:
    series: StationSeries          # training-split power corrected
    outlier_indices: np.ndarray
    ranking: FeatureRanking | None
    selected: list[int]            # kept feature indices (original order of columns)


def preprocess_station(series: StationSeries, split: SplitSpec, cfg: RunConfig,
                       rank_features: bool = True) -> PreprocessResult:
    """Outlier-correct the training split and rank/select feature columns.

    Correction touches the training segment only; validation and test
    stay bit-identical. Feature ranking runs on the corrected training
    rows against the equal-frequency-discretized power target. With
    ``rank_features`` off (the no-feature-engineering ablation) every
    column is kept.
    """
    split.validate(len(series))
    lo, hi = split.segments()["train"]
    res = hampel_correct(series.power[lo:hi], cfg.hampel)
    power = series.power.copy()
    power[lo:hi] = res.corrected
    corrected = series.with_power(power)

    if not rank_features:
        return PreprocessResult(corrected, res.outlier_indices + lo, None,
                                list(range(series.n_features)))
    classes = discretize_targets(corrected.power[lo:hi], cfg.relieff.n_bins)
    ranking = relieff_rank(corrected.features[lo:hi], classes, cfg.relieff,
                           seed=cfg.seed, feature_names=list(series.feature_names))
    selected = select_features(ranking, min(cfg.relieff.top_n, series.n_features))
    return PreprocessResult(corrected, res.outlier_indices + lo, ranking, selected)


# ---------------------------------------------------------------------------
# pre-training stage


@dataclass
class PretrainedBundle:
    model: Forecaster
    normalizer: NormalizerParams   # source-station scaling
    selected: list[int]
    feature_names: list[str]
    stats: BandStats
    fit_result: FitResult
    test_metrics: MetricsReport | None
    preprocess: PreprocessResult


def pretrain(source: StationSeries, cfg: RunConfig,
             evaluate_test: bool = True) -> PretrainedBundle:
    split = _split_spec(cfg.source_split)
    prep = preprocess_station(source, split, cfg, rank_features=cfg.use_feature_selection)
    series = prep.series.select_features(prep.selected)
    params = NormalizerParams.fit(series, split)
    windows = make_windows(series, split, cfg.train.lookback, params)
    model = Forecaster(cfg.model, n_features=len(prep.selected),
                       lookback=cfg.train.lookback, seed=cfg.seed)
    stats = band_stats(windows["train"].targets_raw, cfg.loss, windows["train"].target_index)
    result = fit(model, windows["train"], windows["val"], cfg.train, cfg.loss, stats)
    metrics = None
    if evaluate_test and windows["test"] is not None:
        metrics, _ = evaluate_on_windows(model, windows["test"], params)
    return PretrainedBundle(model, params, prep.selected, series.feature_names,
                            stats, result, metrics, prep)


def target_windows(target: StationSeries, selected: list[int],
                   cfg: RunConfig) -> tuple[dict[str, WindowSet | None], NormalizerParams]:
    """Target-station windows on the source-selected feature columns.

    Scaling is the target's own, fitted on its training split.
    """
    split = _split_spec(cfg.target_split)
    series = target.select_features(selected)
    params = NormalizerParams.fit(series, split)
    return make_windows(series, split, cfg.train.lookback, params), params


# ---------------------------------------------------------------------------
# probe-and-decide


@dataclass
class TransferDecision:
    probe_mae: float
    fine_tune: bool


def decide(probe_mae: float, cfg: TransferConfig) -> TransferDecision:
    """Strictly-greater threshold rule: MAE at the threshold skips fine-tuning."""
    return TransferDecision(probe_mae, probe_mae > cfg.mae_threshold)


def probe_and_decide(model: Forecaster, test_ws: WindowSet, params: NormalizerParams,
                     cfg: TransferConfig) -> TransferDecision:
    """Zero-shot raw-scale MAE on the probe segment, compared to the threshold.

    The probe windows live entirely inside the target test segment; its
    raw length must cover ``probe_len`` points.
    """
    probe_points = len(test_ws) + test_ws.lookback
    if probe_points < cfg.probe_len:
        raise DataError(f"probe segment has {probe_points} points, needs {cfg.probe_len}")
    metrics, _ = evaluate_on_windows(model, test_ws, params)
    return decide(metrics.mae, cfg)


def fine_tune(bundle: PretrainedBundle, train_ws: WindowSet,
              cfg: RunConfig) -> tuple[Forecaster, FitResult]:
    """Adapt a copy of the pre-trained model on the target training windows.

    All parameters stay trainable; only the learning rate, epoch budget,
    and batch size shrink. Loss band statistics are recomputed from the
    target training targets. The incoming bundle is never mutated.
    """
    if len(train_ws) == 0:
        raise DataError("fine_tune: empty target training window set")
    adapted = bundle.model.clone()
    ft_cfg = replace(cfg.train,
                     lr=cfg.train.lr * cfg.transfer.finetune_lr_factor,
                     max_epoch=cfg.transfer.finetune_max_epoch,
                     batch_size=cfg.transfer.finetune_batch,
                     seed=cfg.seed + 2)
    stats = band_stats(train_ws.targets_raw, cfg.loss, train_ws.target_index)
    result = fit(adapted, train_ws, None, ft_cfg, cfg.loss, stats)
    return adapted, result


# ---------------------------------------------------------------------------
# full transfer run


@dataclass
class TransferReport:
    source_id: str
    mmd_table: list[tuple[str, float]]
    decision: TransferDecision
    fine_tune_applied: bool
    metrics: dict[str, MetricsReport]          # direct / transfer / fine_tuned
    selected_features: list[str]
    fusion_lambdas: dict[str, float | None] = field(default_factory=dict)
    source_test_metrics: MetricsReport | None = None

    def as_dict(self) -> dict:
        return {
            "source_id": self.source_id,
            "mmd_table": [{"station": s, "mmd2": v} for s, v in self.mmd_table],
            "decision": {"probe_mae": self.decision.probe_mae,
                         "fine_tune": self.decision.fine_tune},
            "fine_tune_applied": self.fine_tune_applied,
            "metrics": {k: m.as_dict() for k, m in self.metrics.items()},
            "selected_features": self.selected_features,
            "fusion_lambdas": self.fusion_lambdas,
            "source_test_metrics": (self.source_test_metrics.as_dict()
                                    if self.source_test_metrics else None),
        }


def train_direct(target: StationSeries, selected: list[int],
                 cfg: RunConfig) -> tuple[Forecaster, dict[str, WindowSet | None], NormalizerParams]:
    """From-scratch model on the target's own small training split."""
    windows, params = target_windows(target, selected, cfg)
    model = Forecaster(cfg.model, n_features=len(selected),
                       lookback=cfg.train.lookback, seed=cfg.seed + 1)
    stats = band_stats(windows["train"].targets_raw, cfg.loss, windows["train"].target_index)
    fit(model, windows["train"], windows["val"], cfg.train, cfg.loss, stats)
    return model, windows, params


def run_transfer(candidates: list[StationSeries], target: StationSeries,
                 cfg: RunConfig, include_all_variants: bool = True,
                 bundle: PretrainedBundle | None = None) -> TransferReport:
    """End-to-end few-shot run producing the three-variant comparison.

    ``include_all_variants`` forces the fine-tuned variant into the
    report even when the probe decision would skip it; the decision
    itself is always reported faithfully. A pre-built ``bundle`` skips
    source selection and pre-training (reuse across ablation variants).
    """
    if bundle is None:
        selection = select_source(candidates, target, cfg.mmd)
        source = next(c for c in candidates if c.station_id == selection.station_id)
        log.info("selected source %s", selection.station_id)
        bundle = pretrain(source, cfg)
        mmd_table = selection.table
        source_id = selection.station_id
    else:
        mmd_table = []
        source_id = "prebuilt"

    windows, params = target_windows(target, bundle.selected, cfg)
    test_ws = windows["test"]
    decision = probe_and_decide(bundle.model, test_ws, params, cfg.transfer)
    log.info("probe MAE %.4f -> fine_tune=%s", decision.probe_mae, decision.fine_tune)

    metrics: dict[str, MetricsReport] = {}
    lambdas: dict[str, float | None] = {}

    direct_model, _, _ = train_direct(target, bundle.selected, cfg)
    metrics["direct"], _ = evaluate_on_windows(direct_model, test_ws, params)
    lambdas["direct"] = direct_model.fusion_lambda()

    metrics["transfer"], _ = evaluate_on_windows(bundle.model, test_ws, params)
    lambdas["transfer"] = bundle.model.fusion_lambda()

    applied = decision.fine_tune
    if decision.fine_tune or include_all_variants:
        adapted, _ = fine_tune(bundle, windows["train"], cfg)
        metrics["fine_tuned"], _ = evaluate_on_windows(adapted, test_ws, params)
        lambdas["fine_tuned"] = adapted.fusion_lambda()

    return TransferReport(
        source_id=source_id,
        mmd_table=mmd_table,
        decision=decision,
        fine_tune_applied=applied,
        metrics=metrics,
        selected_features=list(bundle.feature_names),
        fusion_lambdas=lambdas,
        source_test_metrics=bundle.test_metrics,
    )
