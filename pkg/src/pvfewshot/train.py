"""Peak-penalized training, evaluation metrics, and sensitivity math.

The loss is squared error with a multiplier on points whose raw target
deviates from the training-split mean by more than ``z_threshold``
population standard deviations; everything inside the band reduces to
plain MSE. Losses run on the normalized scale while band membership is
decided on raw kilowatts; reported metrics are raw-scale.
"""

from __future__ import annotations

import contextlib
import logging
import time
from dataclasses import dataclass, field

import numpy as np

try:
    from threadpoolctl import threadpool_limits
except ImportError:  # pragma: no cover
    def threadpool_limits(limits=None):
        return contextlib.nullcontext()

from .autodiff import Tensor, reduce_mean
from .config import LossConfig, TrainConfig, TRAIN_SWEEP
from .data import POINTS_PER_DAY, NormalizerParams, WindowSet, denormalize
from .model import Forecaster
from .optim import AdamW, NumericError

log = logging.getLogger(__name__)


# ---------------------------------------------------------------------------
# loss


@dataclass
class BandStats:
    """Mean and population std of the raw training targets.

    ``per_day`` holds day-indexed statistics when the per-day scope is
    configured; points from unseen days fall back to the global pair.
    """

    mean: float
    std: float
    per_day: dict[int, tuple[float, float]] | None = None


def band_stats(y_raw: np.ndarray, cfg: LossConfig,
               target_index: np.ndarray | None = None) -> BandStats:
    y = np.asarray(y_raw, dtype=np.float64).ravel()
    stats = BandStats(float(y.mean()), float(y.std()))
    if cfg.stats_scope == "per_day":
        if target_index is None:
            raise ValueError("band_stats: per_day scope needs target_index")
        days = np.asarray(target_index).ravel() // POINTS_PER_DAY
        stats.per_day = {int(d): (float(y[days == d].mean()), float(y[days == d].std()))
                         for d in np.unique(days)}
    return stats


def peak_weights(band_values: np.ndarray, stats: BandStats, cfg: LossConfig,
                 target_index: np.ndarray | None = None) -> np.ndarray:
    """Per-point multipliers: ``penalty_multiplier`` outside the band, else 1."""
    v = np.asarray(band_values, dtype=np.float64).ravel()
    if stats.per_day is not None and target_index is not None:
        days = np.asarray(target_index).ravel() // POINTS_PER_DAY
        mean = np.array([stats.per_day.get(int(d), (stats.mean, stats.std))[0] for d in days])
        std = np.array([stats.per_day.get(int(d), (stats.mean, stats.std))[1] for d in days])
    else:
        mean, std = stats.mean, stats.std
    if np.all(std == 0.0):
        log.warning("peak_weights: zero std, band is infinitely wide; no penalty applied")
        return np.ones_like(v)
    outside = np.abs(v - mean) > cfg.z_threshold * std
    return np.where(outside, cfg.penalty_multiplier, 1.0)


def penalized_mse(pred: Tensor | np.ndarray, target: np.ndarray, cfg: LossConfig,
                  stats: BandStats, band_values: np.ndarray | None = None,
                  target_index: np.ndarray | None = None) -> Tensor:
    """Mean of per-point weighted squared errors.

    ``band_values`` are the values tested against the band (raw-scale
    targets in the pipeline); they default to ``target`` itself so the
    direct-call form works on one scale.
    """
    pred_t = pred if isinstance(pred, Tensor) else Tensor(pred)
    target = np.asarray(target, dtype=np.float64)
    if pred_t.shape != target.shape:
        raise ValueError(f"penalized_mse: shapes disagree, {pred_t.shape} vs {target.shape}")
    if band_values is None:
        band_values = target
    weights = peak_weights(band_values, stats, cfg, target_index).reshape(target.shape)
    residual = Tensor(target) - pred_t
    return reduce_mean(residual * residual * Tensor(weights))


# ---------------------------------------------------------------------------
# training loop


@dataclass
class EpochStats:
    epoch: int
    train_loss: float
    val_loss: float | None
    wall_time: float


@dataclass
class FitResult:
    history: list[EpochStats] = field(default_factory=list)
    best_epoch: int | None = None
    best_val_loss: float | None = None


def predict(model: Forecaster, ws: WindowSet, batch_size: int = 512) -> np.ndarray:
    """Normalized-scale predictions, deterministic inference mode."""
    out = np.empty((len(ws), 1))
    with threadpool_limits(limits=1):  # tiny matrices: BLAS threading only adds overhead
        for lo in range(0, len(ws), batch_size):
            hi = min(lo + batch_size, len(ws))
            pred = model.forward(Tensor(ws.inputs_pv[lo:hi]), Tensor(ws.inputs_feat[lo:hi]))
            out[lo:hi] = pred.data
    return out


def _epoch_val_loss(model: Forecaster, ws: WindowSet, loss_cfg: LossConfig,
                    stats: BandStats) -> float:
    pred = predict(model, ws)
    return penalized_mse(pred, ws.targets_norm, loss_cfg, stats,
                         band_values=ws.targets_raw, target_index=ws.target_index).item()


def fit(model: Forecaster, train_ws: WindowSet, val_ws: WindowSet | None,
        cfg: TrainConfig, loss_cfg: LossConfig,
        stats: BandStats | None = None) -> FitResult:
    """Mini-batch AdamW training with best-validation checkpointing.

    Shuffling and dropout draw from generators derived from
    ``cfg.seed``, so single-threaded runs are exactly repeatable.
    Validation (inference mode: dropout off, hard gates) runs after
    every epoch; the best-validation parameters are restored at the
    end. Without a validation set the final epoch stands.
    """
    if len(train_ws) == 0:
        raise ValueError("fit: empty training window set")
    if stats is None:
        stats = band_stats(train_ws.targets_raw, loss_cfg, train_ws.target_index)
    seeds = np.random.SeedSequence(cfg.seed).spawn(2)
    rng_shuffle = np.random.default_rng(seeds[0])
    rng_dropout = np.random.default_rng(seeds[1])
    opt = AdamW(dict(model.named_parameters()), lr=cfg.lr, betas=(cfg.beta1, cfg.beta2),
                eps=cfg.eps, weight_decay=cfg.weight_decay)

    result = FitResult()
    best_state: dict[str, np.ndarray] | None = None
    stale = 0
    n = len(train_ws)
    with threadpool_limits(limits=1):  # tiny matrices: BLAS threading only adds overhead
        for epoch in range(cfg.max_epoch):
            t0 = time.perf_counter()
            perm = rng_shuffle.permutation(n)
            total = 0.0
            for b, lo in enumerate(range(0, n, cfg.batch_size)):
                idx = perm[lo:lo + cfg.batch_size]
                opt.zero_grad()
                pred = model.forward(Tensor(train_ws.inputs_pv[idx]),
                                     Tensor(train_ws.inputs_feat[idx]),
                                     train=True, rng=rng_dropout)
                loss = penalized_mse(pred, train_ws.targets_norm[idx], loss_cfg, stats,
                                     band_values=train_ws.targets_raw[idx],
                                     target_index=train_ws.target_index[idx])
                value = loss.item()
                if not np.isfinite(value):
                    raise NumericError(f"fit: non-finite loss {value} at epoch {epoch} batch {b}")
                loss.backward()
                opt.step()
                total += value * len(idx)
            train_loss = total / n

            val_loss = None
            if val_ws is not None and len(val_ws) > 0:
                val_loss = _epoch_val_loss(model, val_ws, loss_cfg, stats)
                if result.best_val_loss is None or val_loss < result.best_val_loss:
                    result.best_val_loss = val_loss
                    result.best_epoch = epoch
                    best_state = model.state_arrays()
                    stale = 0
                else:
                    stale += 1
            result.history.append(EpochStats(epoch, train_loss, val_loss,
                                             time.perf_counter() - t0))
            if cfg.patience and stale >= cfg.patience:
                break
    if best_state is not None:
        model.load_state(best_state)
    return result


# ---------------------------------------------------------------------------
# metrics


@dataclass
class MetricsReport:
    mse: float
    mae: float
    rmse: float
    r2: float

    def as_dict(self) -> dict[str, float]:
        return {"mse": self.mse, "mae": self.mae, "rmse": self.rmse, "r2": self.r2}


def evaluate_metrics(y_pred: np.ndarray, y_true: np.ndarray) -> MetricsReport:
    """MSE, MAE, RMSE, and R-squared about the target mean."""
    p = np.asarray(y_pred, dtype=np.float64).ravel()
    t = np.asarray(y_true, dtype=np.float64).ravel()
    if p.shape != t.shape:
        raise ValueError(f"evaluate_metrics: lengths disagree, {p.shape} vs {t.shape}")
    if len(t) < 2:
        raise ValueError(f"evaluate_metrics: need at least 2 points, got {len(t)}")
    ss_tot = float(((t - t.mean()) ** 2).sum())
    if ss_tot == 0.0:
        raise ValueError("evaluate_metrics: constant target, r2 undefined")
    err = p - t
    mse = float((err ** 2).mean())
    return MetricsReport(
        mse=mse,
        mae=float(np.abs(err).mean()),
        rmse=float(np.sqrt(mse)),
        r2=1.0 - float((err ** 2).sum()) / ss_tot,
    )


def evaluate_on_windows(model: Forecaster, ws: WindowSet,
                        params: NormalizerParams) -> tuple[MetricsReport, np.ndarray]:
    """Raw-scale metrics of the model on a window set; returns predictions too."""
    pred_raw = denormalize(predict(model, ws), params)
    return evaluate_metrics(pred_raw, ws.targets_raw), pred_raw


# ---------------------------------------------------------------------------
# sensitivity


def sensitivity_std(values) -> float:
    """Population standard deviation of a one-factor metric sweep."""
    v = np.asarray(list(values), dtype=np.float64)
    if len(v) < 2:
        raise ValueError(f"sensitivity_std: need at least 2 values, got {len(v)}")
    return float(v.std())


def one_factor_sweep(base: TrainConfig,
                     sweep: dict[str, tuple[int, ...]] | None = None) -> dict[str, list[TrainConfig]]:
    """Single-factor configs: vary one of max_epoch/lookback/batch_size.

    Every other swept field keeps the base (starred) value, so each list
    isolates exactly one hyper-parameter.
    """
    from dataclasses import replace

    sweep = sweep or TRAIN_SWEEP
    out: dict[str, list[TrainConfig]] = {}
    for factor, values in sweep.items():
        out[factor] = [replace(base, **{factor: v}) for v in values]
    return out
