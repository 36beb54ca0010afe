"""Source-domain selection, outlier correction, and feature ranking.

Three independent, pure preprocessing stages:

* kernel two-sample distance (squared MMD, biased V-statistic, summed
  over a Gaussian bandwidth set) between sets of daily power profiles,
  minimized over candidate stations to pick the pre-training source;
* sliding-window median/MAD outlier correction of the training power
  series, replacing flagged points with the local median;
* neighbor-based feature weighting over a discretized power target,
  keeping the strongest columns.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .config import HampelConfig, MmdConfig, ReliefFConfig
from .data import POINTS_PER_DAY, DataError, StationSeries


# ---------------------------------------------------------------------------
# maximum mean discrepancy


def _sq_dists(a: np.ndarray, b: np.ndarray) -> np.ndarray:
    # explicit difference form: entries of d(a,b) and d(b,a).T are
    # bitwise identical, which keeps mmd_squared exactly symmetric
    return ((a[:, None, :] - b[None, :, :]) ** 2).sum(axis=2)


def _kernel_mean(sq: np.ndarray, sigma: float) -> float:
    return math.fsum(np.exp(sq / (-2.0 * sigma * sigma)).ravel()) / sq.size


def mmd_squared(a: np.ndarray, b: np.ndarray, cfg: MmdConfig) -> float:
    """Biased squared MMD between sample sets ``a`` [n, d] and ``b`` [m, d].

    Sum over the configured Gaussian bandwidths of
    ``E[K(a,a)] + E[K(b,b)] - 2 E[K(a,b)]``. Exactly symmetric in its
    arguments and zero for identical sets.
    """
    a = np.atleast_2d(np.asarray(a, dtype=np.float64))
    b = np.atleast_2d(np.asarray(b, dtype=np.float64))
    if a.size == 0 or b.size == 0:
        raise ValueError("mmd_squared: sample sets must be nonempty")
    if a.shape[1] != b.shape[1]:
        raise ValueError(f"mmd_squared: sample dimensions disagree, {a.shape[1]} vs {b.shape[1]}")
    sigmas = cfg.resolved_bandwidths(lambda: median_bandwidth(np.vstack([a, b])))
    saa, sbb, sab = _sq_dists(a, a), _sq_dists(b, b), _sq_dists(a, b)
    total = 0.0
    for sigma in sigmas:
        total += _kernel_mean(saa, sigma) + _kernel_mean(sbb, sigma) - 2.0 * _kernel_mean(sab, sigma)
    return total


def median_bandwidth(samples: np.ndarray) -> float:
    """Median pairwise Euclidean distance; 1.0 when degenerate."""
    sq = _sq_dists(samples, samples)
    upper = sq[np.triu_indices(len(samples), k=1)]
    med = float(np.sqrt(np.median(upper))) if upper.size else 0.0
    return med if med > 0 else 1.0


def daily_profiles(series: StationSeries) -> np.ndarray:
    """Per-day power rows scaled by the series' own min-max."""
    days = len(series) // POINTS_PER_DAY
    if days < 1:
        raise DataError(f"series {series.station_id!r} shorter than one day")
    p = series.power[:days * POINTS_PER_DAY]
    lo, hi = p.min(), p.max()
    scaled = (p - lo) / (hi - lo) if hi > lo else np.zeros_like(p)
    return scaled.reshape(days, POINTS_PER_DAY)


@dataclass
class SourceSelection:
    station_id: str
    table: list[tuple[str, float]]  # (candidate id, mmd^2), input order
    bandwidths: tuple[float, ...]


def select_source(candidates: list[StationSeries], target: StationSeries,
                  cfg: MmdConfig) -> SourceSelection:
    """Pick the candidate whose day-shape distribution is closest to the target.

    One sample is one normalized daily profile. A single bandwidth set,
    derived from the pooled days of all series unless configured, makes
    the per-candidate values comparable; ties go to the earliest
    candidate.
    """
    if not candidates:
        raise ValueError("select_source: empty candidate list")
    target_days = daily_profiles(target)
    candidate_days = [daily_profiles(c) for c in candidates]
    sigmas = cfg.resolved_bandwidths(
        lambda: median_bandwidth(np.vstack(candidate_days + [target_days])))
    fixed = MmdConfig(bandwidths=sigmas)
    table = [(c.station_id, mmd_squared(days, target_days, fixed))
             for c, days in zip(candidates, candidate_days)]
    best = int(np.argmin([v for _, v in table]))
    return SourceSelection(candidates[best].station_id, table, sigmas)


# ---------------------------------------------------------------------------
# Hampel identifier


@dataclass
class HampelResult:
    corrected: np.ndarray
    outlier_indices: np.ndarray
    local_medians: np.ndarray


def hampel_correct(series: np.ndarray, cfg: HampelConfig) -> HampelResult:
    """Replace outliers with the local median of the original series.

    A point is flagged when its deviation from the window median
    strictly exceeds ``n_sigma * lambda_mad * MAD``; with MAD = 0
    (constant plateaus, e.g. night zeros) nothing is flagged. Edge
    windows shrink to the available points. Non-flagged points are
    returned bit-identical.
    """
    x = np.asarray(series, dtype=np.float64)
    if x.ndim != 1:
        raise ValueError(f"hampel_correct: expected 1-D series, got shape {x.shape}")
    if len(x) < cfg.window_size:
        raise ValueError(f"hampel_correct: series length {len(x)} < window {cfg.window_size}")
    k = cfg.window_size // 2
    n = len(x)

    medians = np.empty(n)
    mads = np.empty(n)
    if n >= cfg.window_size:
        views = np.lib.stride_tricks.sliding_window_view(x, cfg.window_size)
        interior = np.median(views, axis=1)
        medians[k:n - k] = interior
        mads[k:n - k] = np.median(np.abs(views - interior[:, None]), axis=1)
    for i in list(range(k)) + list(range(n - k, n)):
        w = x[max(0, i - k):min(n, i + k + 1)]
        medians[i] = np.median(w)
        mads[i] = np.median(np.abs(w - medians[i]))

    bound = cfg.n_sigma * cfg.lambda_mad * mads
    flagged = np.abs(x - medians) > bound
    corrected = x.copy()
    corrected[flagged] = medians[flagged]
    return HampelResult(corrected, np.nonzero(flagged)[0], medians)


# ---------------------------------------------------------------------------
# ReliefF feature weighting


@dataclass
class FeatureRanking:
    weights: np.ndarray            # per-feature, in [-1, 1]
    order: np.ndarray              # feature indices, descending weight
    feature_names: list[str] = field(default_factory=list)


def discretize_targets(y: np.ndarray, n_bins: int) -> np.ndarray:
    """Equal-frequency classes for a continuous target.

    Duplicate quantile edges (zero-inflated PV power) collapse, so the
    realized class count may be below ``n_bins`` but is at least 2.
    """
    if n_bins < 2:
        raise ValueError(f"discretize_targets: n_bins must be >= 2, got {n_bins}")
    qs = np.quantile(y, np.linspace(0.0, 1.0, n_bins + 1)[1:-1])
    edges = np.unique(qs)
    classes = np.searchsorted(edges, y, side="right")
    if len(np.unique(classes)) < 2:
        raise ValueError("discretize_targets: target collapses to a single class")
    return classes


def relieff_rank(features: np.ndarray, classes: np.ndarray, cfg: ReliefFConfig,
                 seed: int | None = None,
                 feature_names: list[str] | None = None) -> FeatureRanking:
    """Neighbor-based feature weights over a discretized target.

    For each sampled instance, the k nearest same-class hits pull a
    feature's weight down by its normalized value difference and the k
    nearest misses of every other class push it up, prior-weighted by
    ``P(C) / (1 - P(class))``. Distances are Euclidean over
    range-normalized features; ties break toward lower row index.
    Constant features score exactly 0.
    """
    x = np.asarray(features, dtype=np.float64)
    classes = np.asarray(classes)
    if x.ndim != 2 or len(x) != len(classes):
        raise ValueError(f"relieff_rank: features {x.shape} do not align with {len(classes)} targets")
    m_total, n_feat = x.shape
    k = cfg.k_neighbors
    labels, counts = np.unique(classes, return_counts=True)
    for label, count in zip(labels, counts):
        if count < k + 1:
            raise ValueError(
                f"relieff_rank: class {label} has {count} instances, needs >= {k + 1} for k={k}")
    priors = {int(l): c / m_total for l, c in zip(labels, counts)}

    span = x.max(axis=0) - x.min(axis=0)
    safe = np.where(span > 0, span, 1.0)
    xn = (x - x.min(axis=0)) / safe  # constant columns become all-zero: diff == 0

    if cfg.m_samples is None or cfg.m_samples >= m_total:
        sample_idx = np.arange(m_total)
    else:
        rng = np.random.default_rng(seed)
        sample_idx = np.sort(rng.choice(m_total, size=cfg.m_samples, replace=False))
    m = len(sample_idx)

    class_rows = {int(l): np.nonzero(classes == l)[0] for l in labels}
    weights = np.zeros(n_feat)
    for r in sample_idx:
        dists = np.sqrt(((xn - xn[r]) ** 2).sum(axis=1))
        own = int(classes[r])
        for label in labels:
            label = int(label)
            rows = class_rows[label]
            if label == own:
                rows = rows[rows != r]
            order = rows[np.argsort(dists[rows], kind="stable")]
            near = order[:k]
            diffs = np.abs(xn[near] - xn[r]).sum(axis=0)
            if label == own:
                weights -= diffs / (m * k)
            else:
                weights += priors[label] / (1.0 - priors[own]) * diffs / (m * k)
    order = np.argsort(-weights, kind="stable")
    return FeatureRanking(weights, order, feature_names or [])


def select_features(ranking: FeatureRanking, top_n: int) -> list[int]:
    """Indices of the ``top_n`` largest weights, descending, stable ties."""
    n = len(ranking.weights)
    if top_n < 1:
        raise ValueError(f"select_features: top_n must be >= 1, got {top_n}")
    if top_n > n:
        raise ValueError(f"select_features: top_n={top_n} exceeds {n} features")
    return [int(i) for i in ranking.order[:top_n]]
