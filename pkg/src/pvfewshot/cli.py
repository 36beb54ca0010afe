"""Command-line entry point.

Subcommands cover the whole pipeline: synthetic data generation, source
selection, preprocessing, pre-training, transfer, evaluation, the
ablation and sensitivity harnesses, and the ensemble explanation
report. Every run writes its artifacts atomically under ``--out``
together with a manifest (file hashes plus the exact config snapshot),
so any result is reproducible from the manifest alone.

Exit codes: 0 success, 2 config error, 3 data error, 4 numeric failure.
"""

from __future__ import annotations

import argparse
import csv
import hashlib
import io
import json
import logging
import sys
from dataclasses import replace
from pathlib import Path

import numpy as np

from .autodiff import ShapeError
from .checkpoint import (
    CheckpointError,
    atomic_write,
    canonical_json,
    config_hash,
    load_model,
    save_model,
)
from .config import (
    ConfigError,
    RunConfig,
    TRAIN_SWEEP,
    flatten_config,
    load_config,
)
from .data import (
    DataError,
    NormalizerParams,
    StationSeries,
    SynthProfile,
    load_csv,
    make_windows,
    synth_generate,
    write_csv,
)
from .model import Forecaster
from .optim import NumericError
from .preprocess import select_source
from .train import FitResult, MetricsReport, evaluate_on_windows, sensitivity_std
from .transfer import (
    PretrainedBundle,
    TransferReport,
    preprocess_station,
    pretrain,
    run_transfer,
    _split_spec,
)

log = logging.getLogger(__name__)

EXIT_OK = 0
EXIT_CONFIG = 2
EXIT_DATA = 3
EXIT_NUMERIC = 4


# ---------------------------------------------------------------------------
# artifact plumbing


class ArtifactWriter:
    """Collects artifacts for one command and writes them atomically."""

    def __init__(self, out_dir: str | Path, command: str, cfg: RunConfig):
        self.out = Path(out_dir)
        self.out.mkdir(parents=True, exist_ok=True)
        self.command = command
        self.cfg = cfg
        self.hashes: dict[str, str] = {}

    def write(self, name: str, payload: bytes | str) -> Path:
        data = payload.encode() if isinstance(payload, str) else payload
        path = self.out / name
        atomic_write(path, data)
        self.hashes[name] = hashlib.sha256(data).hexdigest()
        return path

    def write_csv_rows(self, name: str, header: list[str], rows) -> Path:
        buf = io.StringIO()
        writer = csv.writer(buf)
        writer.writerow(header)
        writer.writerows(rows)
        return self.write(name, buf.getvalue())

    def write_json(self, name: str, obj) -> Path:
        return self.write(name, json.dumps(obj, indent=2, sort_keys=True) + "\n")

    def track(self, path: Path) -> None:
        self.hashes[path.name] = hashlib.sha256(path.read_bytes()).hexdigest()

    def finish(self) -> Path:
        flat = flatten_config(self.cfg)
        manifest = {
            "command": self.command,
            "files": dict(sorted(self.hashes.items())),
            "config": flat,
            "config_hash": config_hash(flat),
        }
        path = self.out / "manifest.json"
        atomic_write(path, canonical_json(manifest) + b"\n")
        return path


def _history_csv(writer: ArtifactWriter, name: str, result: FitResult) -> None:
    writer.write_csv_rows(name, ["epoch", "train_loss", "val_loss", "wall_time"],
                          [[h.epoch, repr(h.train_loss),
                            "" if h.val_loss is None else repr(h.val_loss),
                            f"{h.wall_time:.3f}"] for h in result.history])


def _metrics_row(m: MetricsReport) -> list[str]:
    return [repr(m.mse), repr(m.mae), repr(m.rmse), repr(m.r2)]


def _pipeline_meta(bundle: PretrainedBundle) -> dict:
    return {
        "selected": bundle.selected,
        "feature_names": bundle.feature_names,
        "normalizer": {
            "mins": [float(v) for v in bundle.normalizer.mins],
            "maxs": [float(v) for v in bundle.normalizer.maxs],
            "channels": bundle.normalizer.channel_names,
        },
        "stats": {"mean": bundle.stats.mean, "std": bundle.stats.std},
    }


def _normalizer_from_meta(meta: dict) -> NormalizerParams:
    n = meta["normalizer"]
    return NormalizerParams(np.array(n["mins"]), np.array(n["maxs"]), list(n["channels"]))


def _digest(bundle: PretrainedBundle) -> dict:
    digest = {
        "epochs": len(bundle.fit_result.history),
        "best_epoch": bundle.fit_result.best_epoch,
        "best_val_loss": bundle.fit_result.best_val_loss,
    }
    if bundle.fit_result.history:
        digest["final_train_loss"] = bundle.fit_result.history[-1].train_loss
    if bundle.test_metrics is not None:
        digest["test_metrics"] = bundle.test_metrics.as_dict()
    return digest


def _save_bundle(writer: ArtifactWriter, name: str, bundle: PretrainedBundle,
                 cfg: RunConfig) -> Path:
    path = writer.out / name
    save_model(path, bundle.model, {
        "config": flatten_config(cfg),
        "pipeline": _pipeline_meta(bundle),
        "digest": _digest(bundle),
    })
    writer.track(path)
    return path


def _load_stations(paths: list[str]) -> list[StationSeries]:
    return [load_csv(p) for p in paths]


# ---------------------------------------------------------------------------
# subcommand implementations


def cmd_synth(args, cfg: RunConfig) -> int:
    profile = SynthProfile(peak_kw=args.peak_kw, cloud_noise=args.cloud_noise,
                           daylight_hours=args.daylight_hours)
    series = synth_generate(seed=args.seed if args.seed is not None else cfg.seed,
                            days=args.days, profile=profile, station_id=args.station_id)
    writer = ArtifactWriter(args.out, "synth", cfg)
    path = writer.out / f"{args.station_id}.csv"
    write_csv(series, path)
    writer.track(path)
    writer.finish()
    print(f"wrote {path} ({len(series)} rows)")
    return EXIT_OK


def cmd_select_source(args, cfg: RunConfig) -> int:
    candidates = _load_stations(args.candidates)
    target = load_csv(args.target)
    sel = select_source(candidates, target, cfg.mmd)
    writer = ArtifactWriter(args.out, "select-source", cfg)
    writer.write_csv_rows("mmd_table.csv", ["candidate", "mmd2"],
                          [[sid, repr(v)] for sid, v in sel.table])
    writer.write_json("selection.json", {
        "selected": sel.station_id,
        "bandwidths": list(sel.bandwidths),
        "table": [{"station": s, "mmd2": v} for s, v in sel.table],
    })
    writer.finish()
    print(f"selected source: {sel.station_id}")
    return EXIT_OK


def cmd_preprocess(args, cfg: RunConfig) -> int:
    candidates = _load_stations(args.candidates)
    target = load_csv(args.target)
    sel = select_source(candidates, target, cfg.mmd)
    source = next(c for c in candidates if c.station_id == sel.station_id)
    prep = preprocess_station(source, _split_spec(cfg.source_split), cfg,
                              rank_features=cfg.use_feature_selection)
    writer = ArtifactWriter(args.out, "preprocess", cfg)
    writer.write_csv_rows("mmd_table.csv", ["candidate", "mmd2"],
                          [[sid, repr(v)] for sid, v in sel.table])
    corrected = writer.out / "corrected_series.csv"
    write_csv(prep.series, corrected)
    writer.track(corrected)
    writer.write_csv_rows("outliers.csv", ["index", "original", "replaced_by"],
                          [[int(i), repr(float(source.power[i])), repr(float(prep.series.power[i]))]
                           for i in prep.outlier_indices])
    if prep.ranking is not None:
        writer.write_csv_rows(
            "feature_ranking.csv", ["feature", "weight", "rank"],
            [[prep.ranking.feature_names[i] if prep.ranking.feature_names else str(i),
              repr(float(prep.ranking.weights[i])),
              int(np.nonzero(prep.ranking.order == i)[0][0])]
             for i in range(len(prep.ranking.weights))])
    writer.finish()
    print(f"source {sel.station_id}: {len(prep.outlier_indices)} outliers corrected, "
          f"features kept: {prep.selected}")
    return EXIT_OK


def cmd_pretrain(args, cfg: RunConfig) -> int:
    source = load_csv(args.source)
    bundle = pretrain(source, cfg)
    writer = ArtifactWriter(args.out, "pretrain", cfg)
    _save_bundle(writer, "checkpoint.ckpt", bundle, cfg)
    _history_csv(writer, "history.csv", bundle.fit_result)
    writer.write_json("metrics.json", _digest(bundle))
    writer.finish()
    if bundle.test_metrics:
        print(f"pretrained on {source.station_id}; test MAE {bundle.test_metrics.mae:.4f}")
    return EXIT_OK


def _report_csv(writer: ArtifactWriter, report: TransferReport) -> None:
    rows = [[variant] + _metrics_row(m) for variant, m in report.metrics.items()]
    writer.write_csv_rows("report.csv", ["variant", "mse", "mae", "rmse", "r2"], rows)


def cmd_transfer(args, cfg: RunConfig) -> int:
    candidates = _load_stations(args.candidates)
    target = load_csv(args.target)
    report = run_transfer(candidates, target, cfg)
    writer = ArtifactWriter(args.out, "transfer", cfg)
    writer.write_json("report.json", report.as_dict())
    _report_csv(writer, report)
    writer.finish()
    print(f"source={report.source_id} probe_mae={report.decision.probe_mae:.4f} "
          f"fine_tune={report.decision.fine_tune}")
    for variant, m in report.metrics.items():
        print(f"  {variant:<11} mse={m.mse:.4f} mae={m.mae:.4f} rmse={m.rmse:.4f} r2={m.r2:.4f}")
    return EXIT_OK


def cmd_evaluate(args, cfg: RunConfig) -> int:
    model, meta = load_model(args.checkpoint)
    if "pipeline" not in meta:
        raise CheckpointError(f"{args.checkpoint}: checkpoint lacks pipeline metadata")
    station = load_csv(args.station)
    pipeline = meta["pipeline"]
    series = station.select_features(pipeline["selected"])
    params = _normalizer_from_meta(pipeline)
    split_cfg = cfg.source_split if args.role == "source" else cfg.target_split
    windows = make_windows(series, _split_spec(split_cfg), model.lookback, params)
    ws = windows[args.segment]
    if ws is None:
        raise DataError(f"{args.segment!r} segment is empty for role {args.role!r}")
    metrics, _ = evaluate_on_windows(model, ws, params)
    writer = ArtifactWriter(args.out, "evaluate", cfg)
    writer.write_json("metrics.json", {"segment": args.segment, "role": args.role,
                                       "metrics": metrics.as_dict()})
    writer.finish()
    print(json.dumps(metrics.as_dict(), indent=2, sort_keys=True))
    return EXIT_OK


ABLATION_VARIANTS = ("full", "no_feature_engineering", "no_fusion", "no_weighted", "plain_loss")


def ablation_config(cfg: RunConfig, variant: str) -> RunConfig:
    """Identical run with exactly one block disabled."""
    if variant == "full":
        return cfg
    if variant == "no_feature_engineering":
        return replace(cfg, use_feature_selection=False)
    if variant == "no_fusion":
        return replace(cfg, model=replace(cfg.model, use_fusion=False))
    if variant == "no_weighted":
        return replace(cfg, model=replace(cfg.model, use_weighted=False))
    if variant == "plain_loss":
        return replace(cfg, loss=replace(cfg.loss, penalty_multiplier=1.0))
    raise ConfigError(f"unknown ablation variant {variant!r}")


def run_ablation(candidates: list[StationSeries], target: StationSeries,
                 cfg: RunConfig) -> dict[str, TransferReport]:
    """All ablations under one seed and data pipeline; 'full' runs last-listed first."""
    reports = {}
    for variant in ABLATION_VARIANTS:
        log.info("ablation variant: %s", variant)
        reports[variant] = run_transfer(candidates, target, ablation_config(cfg, variant))
    return reports


def cmd_ablate(args, cfg: RunConfig) -> int:
    candidates = _load_stations(args.candidates)
    target = load_csv(args.target)
    reports = run_ablation(candidates, target, cfg)
    writer = ArtifactWriter(args.out, "ablate", cfg)
    rows = []
    for variant, report in reports.items():
        large = report.source_test_metrics
        small = report.metrics["fine_tuned"]
        rows.append([variant] + (_metrics_row(large) if large else [""] * 4)
                    + _metrics_row(small))
    writer.write_csv_rows(
        "ablation.csv",
        ["variant", "large_mse", "large_mae", "large_rmse", "large_r2",
         "small_mse", "small_mae", "small_rmse", "small_r2"], rows)
    writer.write_json("ablation.json", {v: r.as_dict() for v, r in reports.items()})
    writer.finish()
    for row in rows:
        print(" ".join(str(c) for c in row))
    return EXIT_OK


def _parse_sweep_override(text: str | None) -> tuple[int, ...] | None:
    if text is None:
        return None
    return tuple(int(v) for v in text.split(","))


def run_sensitivity(candidates: list[StationSeries], target: StationSeries, cfg: RunConfig,
                    sweep: dict[str, tuple[int, ...]]) -> dict[str, dict[str, float]]:
    """One-factor STD of the fine-tuned metrics on the few-shot test split.

    Only the pre-training stage changes across a factor's values; the
    transfer and fine-tuning settings stay fixed.
    """
    out: dict[str, dict[str, float]] = {}
    for factor, values in sweep.items():
        metrics: dict[str, list[float]] = {"rmse": [], "mae": [], "r2": []}
        for value in values:
            run_cfg = replace(cfg, train=replace(cfg.train, **{factor: value}))
            report = run_transfer(candidates, target, run_cfg)
            m = report.metrics["fine_tuned"]
            metrics["rmse"].append(m.rmse)
            metrics["mae"].append(m.mae)
            metrics["r2"].append(m.r2)
        out[factor] = {name: sensitivity_std(vals) for name, vals in metrics.items()}
    return out


def cmd_sensitivity(args, cfg: RunConfig) -> int:
    candidates = _load_stations(args.candidates)
    target = load_csv(args.target)
    sweep = {}
    for factor in ("max_epoch", "lookback", "batch_size"):
        override = _parse_sweep_override(getattr(args, f"values_{factor}"))
        sweep[factor] = override if override is not None else TRAIN_SWEEP[factor]
    table = run_sensitivity(candidates, target, cfg, sweep)
    writer = ArtifactWriter(args.out, "sensitivity", cfg)
    rows = [[factor, metric, repr(std)]
            for factor, stds in table.items() for metric, std in stds.items()]
    writer.write_csv_rows("sensitivity.csv", ["factor", "metric", "std"], rows)
    writer.write_json("sensitivity.json", table)
    writer.finish()
    for row in rows:
        print(" ".join(str(c) for c in row))
    return EXIT_OK


def cmd_explain(args, cfg: RunConfig) -> int:
    model, _ = load_model(args.checkpoint)
    coeffs = model.coefficients()
    writer = ArtifactWriter(args.out, "explain", cfg)
    writer.write_csv_rows("explain.csv", ["kind", "weight", "gate", "coefficient"],
                          [[r["kind"], repr(r["weight"]), repr(r["gate"]), repr(r["coefficient"])]
                           for r in coeffs.rows()])
    text = model.explain()
    writer.write("explain.txt", text + "\n")
    writer.finish()
    print(text)
    return EXIT_OK


# ---------------------------------------------------------------------------
# argument parsing


def _add_common(parser: argparse.ArgumentParser, suppress: bool) -> None:
    # registered on the root parser and again on every subparser (with
    # SUPPRESS defaults) so the options work on either side of the
    # subcommand name
    default = argparse.SUPPRESS if suppress else None
    parser.add_argument("--config", default=default, help="flat key=value config file")
    parser.add_argument("--seed", type=int, default=default, help="override the config seed")
    parser.add_argument("-v", "--verbose", action="store_true",
                        default=argparse.SUPPRESS if suppress else False)


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="pvfewshot",
        description="Few-shot PV power forecasting: preprocessing, ensemble training, transfer")
    _add_common(parser, suppress=False)
    sub = parser.add_subparsers(dest="command", required=True)

    def add_parser(name: str, help_text: str) -> argparse.ArgumentParser:
        p = sub.add_parser(name, help=help_text)
        _add_common(p, suppress=True)
        return p

    p = add_parser("synth", "generate a synthetic station CSV")
    p.add_argument("--days", type=int, required=True)
    p.add_argument("--station-id", default="synth")
    p.add_argument("--peak-kw", type=float, default=15.0)
    p.add_argument("--cloud-noise", type=float, default=0.2)
    p.add_argument("--daylight-hours", type=float, default=12.0)
    p.add_argument("--out", required=True)
    p.set_defaults(fn=cmd_synth)

    p = add_parser("select-source", "rank candidate stations by distribution distance")
    p.add_argument("--target", required=True)
    p.add_argument("--candidates", nargs="+", required=True)
    p.add_argument("--out", required=True)
    p.set_defaults(fn=cmd_select_source)

    p = add_parser("preprocess", "source selection, outlier correction, feature ranking")
    p.add_argument("--target", required=True)
    p.add_argument("--candidates", nargs="+", required=True)
    p.add_argument("--out", required=True)
    p.set_defaults(fn=cmd_preprocess)

    p = add_parser("pretrain", "train on a source station and write a checkpoint")
    p.add_argument("--source", required=True)
    p.add_argument("--out", required=True)
    p.set_defaults(fn=cmd_pretrain)

    p = add_parser("transfer", "full probe-and-decide transfer run")
    p.add_argument("--target", required=True)
    p.add_argument("--candidates", nargs="+", required=True)
    p.add_argument("--out", required=True)
    p.set_defaults(fn=cmd_transfer)

    p = add_parser("evaluate", "evaluate a checkpoint on a station CSV")
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--station", required=True)
    p.add_argument("--role", choices=("source", "target"), default="source")
    p.add_argument("--segment", choices=("train", "val", "test"), default="test")
    p.add_argument("--out", required=True)
    p.set_defaults(fn=cmd_evaluate)

    p = add_parser("ablate", "per-block ablation comparison table")
    p.add_argument("--target", required=True)
    p.add_argument("--candidates", nargs="+", required=True)
    p.add_argument("--out", required=True)
    p.set_defaults(fn=cmd_ablate)

    p = add_parser("sensitivity", "one-factor hyper-parameter sensitivity table")
    p.add_argument("--target", required=True)
    p.add_argument("--candidates", nargs="+", required=True)
    p.add_argument("--values-max-epoch", default=None, help="comma list overriding the sweep")
    p.add_argument("--values-lookback", default=None)
    p.add_argument("--values-batch-size", default=None)
    p.add_argument("--out", required=True)
    p.set_defaults(fn=cmd_sensitivity)

    p = add_parser("explain", "ensemble weight/gate/lambda report from a checkpoint")
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--out", required=True)
    p.set_defaults(fn=cmd_explain)

    return parser


def main(argv: list[str] | None = None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        cfg = load_config(args.config) if args.config else RunConfig()
        if args.seed is not None:
            cfg = replace(cfg, seed=args.seed, train=replace(cfg.train, seed=args.seed))
        return args.fn(args, cfg)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except (DataError, CheckpointError, FileNotFoundError) as exc:
        print(f"data error: {exc}", file=sys.stderr)
        return EXIT_DATA
    except (NumericError, ShapeError) as exc:
        print(f"numeric failure: {exc}", file=sys.stderr)
        return EXIT_NUMERIC
    except ValueError as exc:
        print(f"data error: {exc}", file=sys.stderr)
        return EXIT_DATA


if __name__ == "__main__":
    sys.exit(main())
