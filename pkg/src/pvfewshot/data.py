"""Station series ingestion, normalization, windowing, and synthetic data.

A station is a 15-minute power series plus auxiliary weather-style
feature columns. Splits are consecutive raw-point segments; supervised
windows are built per segment with stride 1 and a one-step horizon, and
never span a split boundary. Scaling is per-station min-max fitted on
the training split only.
"""

from __future__ import annotations

import csv
from dataclasses import dataclass, field
from datetime import datetime, timedelta
from pathlib import Path

import numpy as np

POINTS_PER_DAY = 96
STEP = timedelta(minutes=15)


class DataError(ValueError):
    """Malformed input data (parse failures, invariant violations)."""


@dataclass
class StationSeries:
    """One station: timestamps, power (kW), and a T x N feature matrix."""

    station_id: str
    timestamps: np.ndarray  # datetime64[s], strictly increasing, 15-minute spacing
    power: np.ndarray
    features: np.ndarray
    feature_names: list[str]

    def __post_init__(self):
        self.timestamps = np.asarray(self.timestamps, dtype="datetime64[s]")
        self.power = np.asarray(self.power, dtype=np.float64)
        self.features = np.asarray(self.features, dtype=np.float64)
        t = len(self.timestamps)
        if self.power.shape != (t,):
            raise DataError(f"power length {self.power.shape} does not match {t} timestamps")
        if self.features.shape[0] != t or self.features.ndim != 2:
            raise DataError(f"feature matrix {self.features.shape} does not match {t} timestamps")
        if len(self.feature_names) != self.features.shape[1]:
            raise DataError("feature_names length does not match feature columns")
        _check_spacing(self.timestamps)
        if (self.power < 0).any():
            first = int(np.argmax(self.power < 0))
            raise DataError(f"negative power {self.power[first]} at row {first}")
        if not np.isfinite(self.power).all() or not np.isfinite(self.features).all():
            raise DataError("series contains non-finite cells")

    def __len__(self) -> int:
        return len(self.power)

    @property
    def n_features(self) -> int:
        return self.features.shape[1]

    def with_power(self, power: np.ndarray) -> "StationSeries":
        return StationSeries(self.station_id, self.timestamps, power,
                             self.features, list(self.feature_names))

    def select_features(self, indices) -> "StationSeries":
        idx = list(indices)
        return StationSeries(self.station_id, self.timestamps, self.power,
                             self.features[:, idx], [self.feature_names[i] for i in idx])


def _check_spacing(timestamps: np.ndarray) -> None:
    if len(timestamps) < 2:
        return
    gaps = np.diff(timestamps).astype("timedelta64[s]").astype(np.int64)
    bad = np.nonzero(gaps != 900)[0]
    if bad.size:
        i = int(bad[0])
        raise DataError(
            f"irregular timestamp spacing: gap of {gaps[i]}s between rows {i} and {i + 1}"
            f" ({timestamps[i]} -> {timestamps[i + 1]})")


@dataclass
class SplitSpec:
    """Consecutive raw-point counts for train / validation / test segments."""

    train_len: int
    val_len: int
    test_len: int

    def __post_init__(self):
        if min(self.train_len, self.val_len, self.test_len) < 0:
            raise DataError("split lengths must be non-negative")

    def validate(self, total: int) -> None:
        if self.train_len + self.val_len + self.test_len > total:
            raise DataError(f"split {self} exceeds series length {total}")

    def segments(self) -> dict[str, tuple[int, int]]:
        t0 = self.train_len
        v0 = t0 + self.val_len
        return {"train": (0, t0), "val": (t0, v0), "test": (v0, v0 + self.test_len)}


LARGE_SPLIT = SplitSpec(8528, 300, 100)
SMALL_SPLIT = SplitSpec(284, 0, 100)


@dataclass
class NormalizerParams:
    """Per-channel min-max over power plus each feature, fitted on one split."""

    mins: np.ndarray
    maxs: np.ndarray
    channel_names: list[str]

    @classmethod
    def fit(cls, series: StationSeries, split: SplitSpec) -> "NormalizerParams":
        lo, hi = split.segments()["train"]
        cols = np.column_stack([series.power[lo:hi], series.features[lo:hi]])
        names = ["power"] + list(series.feature_names)
        mins = cols.min(axis=0)
        maxs = cols.max(axis=0)
        flat = np.nonzero(maxs <= mins)[0]
        if flat.size:
            raise DataError(f"degenerate channel {names[int(flat[0])]!r}: max == min on the fitting split")
        return cls(mins, maxs, names)

    def transform_power(self, values: np.ndarray) -> np.ndarray:
        return (values - self.mins[0]) / (self.maxs[0] - self.mins[0])

    def inverse_power(self, values: np.ndarray) -> np.ndarray:
        return values * (self.maxs[0] - self.mins[0]) + self.mins[0]

    def transform_features(self, features: np.ndarray) -> np.ndarray:
        return (features - self.mins[1:]) / (self.maxs[1:] - self.mins[1:])


def normalize(series: StationSeries, params: NormalizerParams) -> StationSeries:
    """Affine map of all channels into the fitting split's [0, 1] box.

    Values outside the fitting split may land outside [0, 1]; no clipping.
    """
    out = StationSeries.__new__(StationSeries)  # skip power>=0 check: normalized scale
    out.station_id = series.station_id
    out.timestamps = series.timestamps
    out.power = params.transform_power(series.power)
    out.features = params.transform_features(series.features)
    out.feature_names = list(series.feature_names)
    return out


def denormalize(values: np.ndarray, params: NormalizerParams) -> np.ndarray:
    """Inverse of the power-channel normalization (exact within 1e-12)."""
    return params.inverse_power(np.asarray(values, dtype=np.float64))


@dataclass
class WindowSet:
    """Supervised stride-1 windows with a single-step-ahead target.

    ``inputs_pv`` is [count, LW, 1] and ``inputs_feat`` [count, LW, N],
    both normalized; targets are kept on both scales. ``target_index``
    maps each target back to its raw series row.
    """

    inputs_pv: np.ndarray
    inputs_feat: np.ndarray
    targets_norm: np.ndarray
    targets_raw: np.ndarray
    target_index: np.ndarray

    def __post_init__(self):
        for a in (self.inputs_pv, self.inputs_feat, self.targets_norm, self.targets_raw):
            a.setflags(write=False)

    def __len__(self) -> int:
        return self.inputs_pv.shape[0]

    @property
    def lookback(self) -> int:
        return self.inputs_pv.shape[1]


def _segment_windows(power_n: np.ndarray, feats_n: np.ndarray, power_raw: np.ndarray,
                     lo: int, hi: int, lookback: int) -> WindowSet:
    seg_len = hi - lo
    if seg_len <= lookback:
        raise DataError(f"segment length {seg_len} must exceed look-back {lookback}")
    count = seg_len - lookback
    idx = lo + lookback + np.arange(count)
    pv = np.lib.stride_tricks.sliding_window_view(power_n[lo:hi - 1], lookback)[:count]
    ft = np.lib.stride_tricks.sliding_window_view(
        feats_n[lo:hi - 1], (lookback, feats_n.shape[1]))[:count, 0]
    return WindowSet(
        inputs_pv=pv[..., None].copy(),
        inputs_feat=ft.copy(),
        targets_norm=power_n[idx, None].copy(),
        targets_raw=power_raw[idx, None].copy(),
        target_index=idx,
    )


def make_windows(series: StationSeries, split: SplitSpec, lookback: int,
                 params: NormalizerParams) -> dict[str, WindowSet | None]:
    """Build per-segment window sets; boundary-crossing windows never exist.

    Empty segments map to ``None`` (the small-dataset split has no
    validation segment).
    """
    if lookback < 1:
        raise DataError(f"look-back must be >= 1, got {lookback}")
    split.validate(len(series))
    power_n = params.transform_power(series.power)
    feats_n = params.transform_features(series.features)
    out: dict[str, WindowSet | None] = {}
    for name, (lo, hi) in split.segments().items():
        out[name] = None if hi == lo else _segment_windows(
            power_n, feats_n, series.power, lo, hi, lookback)
    return out


# ---------------------------------------------------------------------------
# CSV interface: header `timestamp,power,<feature...>`, ISO-8601 stamps


def load_csv(path: str | Path, station_id: str | None = None) -> StationSeries:
    path = Path(path)
    with path.open(newline="") as fh:
        reader = csv.reader(fh)
        try:
            header = next(reader)
        except StopIteration:
            raise DataError(f"{path}: empty file") from None
        if len(header) < 2 or header[0] != "timestamp" or header[1] != "power":
            raise DataError(f"{path}: header must start with 'timestamp,power', got {header[:2]}")
        feature_names = header[2:]
        stamps: list[np.datetime64] = []
        rows: list[list[float]] = []
        bad_rows: list[int] = []
        for lineno, row in enumerate(reader, start=2):
            if len(row) != len(header):
                bad_rows.append(lineno)
                continue
            try:
                stamp = np.datetime64(datetime.fromisoformat(row[0]), "s")
                values = [float(v) for v in row[1:]]
                if not np.isfinite(values).all():
                    raise ValueError
            except ValueError:
                bad_rows.append(lineno)
                continue
            stamps.append(stamp)
            rows.append(values)
    if bad_rows:
        shown = ", ".join(map(str, bad_rows[:10]))
        more = "" if len(bad_rows) <= 10 else f" (+{len(bad_rows) - 10} more)"
        raise DataError(f"{path}: unparseable cells at rows {shown}{more}")
    if not rows:
        raise DataError(f"{path}: no data rows")
    table = np.array(rows)
    return StationSeries(
        station_id=station_id or path.stem,
        timestamps=np.array(stamps),
        power=table[:, 0],
        features=table[:, 1:],
        feature_names=feature_names,
    )


def write_csv(series: StationSeries, path: str | Path) -> None:
    path = Path(path)
    with path.open("w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["timestamp", "power"] + list(series.feature_names))
        for i in range(len(series)):
            stamp = series.timestamps[i].astype(datetime).isoformat()
            writer.writerow([stamp, repr(float(series.power[i]))]
                            + [repr(float(v)) for v in series.features[i]])


# ---------------------------------------------------------------------------
# synthetic PV benchmark data


@dataclass
class SynthProfile:
    """Shape parameters of a synthetic station.

    Power is a clipped daylight sine scaled by ``peak_kw``, attenuated
    by a smooth cloud factor of strength ``cloud_noise``, and exactly
    zero through the night span.
    """

    peak_kw: float = 15.0
    cloud_noise: float = 0.2
    daylight_hours: float = 12.0
    base_temp: float = 20.0
    temp_swing: float = 8.0
    irradiance_scale: float = 1000.0
    irradiance_noise: float = 0.03
    start: str = "2024-06-01T00:00:00"

    def __post_init__(self):
        if not 0.0 <= self.cloud_noise < 1.0:
            raise DataError(f"cloud_noise must lie in [0, 1), got {self.cloud_noise}")
        if not 0.0 < self.daylight_hours < 24.0:
            raise DataError(f"daylight_hours must lie in (0, 24), got {self.daylight_hours}")


FEATURE_NAMES = ["irradiance", "temperature", "noise_a", "noise_b"]


def synth_generate(seed: int, days: int, profile: SynthProfile | None = None,
                   station_id: str = "synth") -> StationSeries:
    """Deterministic synthetic station: 96 points per day.

    Features are an irradiance proxy (noisy copy of the power driver),
    a smooth diurnal temperature proxy, and two pure-noise columns, so
    downstream feature ranking has both signal and distractors.
    """
    if days < 1:
        raise DataError(f"days must be >= 1, got {days}")
    profile = profile or SynthProfile()
    rng = np.random.default_rng(seed)
    total = days * POINTS_PER_DAY

    frac = (np.arange(total) % POINTS_PER_DAY) / POINTS_PER_DAY
    half_span = profile.daylight_hours / 48.0
    dawn, dusk = 0.5 - half_span, 0.5 + half_span
    daylight = (frac >= dawn) & (frac < dusk)
    phase = np.clip((frac - dawn) / (dusk - dawn), 0.0, 1.0)
    base = np.where(daylight, np.maximum(np.sin(np.pi * phase), 0.0), 0.0)

    # AR(1) cloud process, squashed into an attenuation factor in (0, 1]
    eps = rng.normal(size=total)
    cloud = np.empty(total)
    state = 0.0
    for i in range(total):
        state = 0.9 * state + 0.435 * eps[i]  # stationary std ~1
        cloud[i] = state
    attenuation = 1.0 - profile.cloud_noise * np.clip(np.abs(cloud), 0.0, 2.0) / 2.0

    driver = base * attenuation
    power = np.maximum(profile.peak_kw * driver, 0.0)
    power[~daylight] = 0.0

    irr = profile.irradiance_scale * driver
    irr = np.maximum(irr + daylight * rng.normal(0.0, profile.irradiance_scale
                                                 * profile.irradiance_noise, total), 0.0)
    day_idx = np.arange(total) // POINTS_PER_DAY
    temp = (profile.base_temp
            + profile.temp_swing * np.sin(2.0 * np.pi * (frac - 0.3))
            + 1.5 * np.sin(2.0 * np.pi * day_idx / 31.0))
    noise_a = rng.normal(size=total)
    noise_b = rng.normal(size=total)

    start = datetime.fromisoformat(profile.start)
    stamps = np.array([np.datetime64(start + i * STEP, "s") for i in range(total)])
    return StationSeries(
        station_id=station_id,
        timestamps=stamps,
        power=power,
        features=np.column_stack([irr, temp, noise_a, noise_b]),
        feature_names=list(FEATURE_NAMES),
    )
