import csv
import json
from pathlib import Path

import numpy as np
import pytest

from pvfewshot.cli import EXIT_CONFIG, EXIT_DATA, ABLATION_VARIANTS, ablation_config, main
from pvfewshot.config import RunConfig
from pvfewshot.data import load_csv


TINY_CONFIG = """
seed = 3
relieff.k_neighbors = 5
relieff.n_bins = 4
relieff.top_n = 3
model.pool.hidden_size = 8
model.pool.attention_heads = 4
model.channels.input_dim = 8
model.channels.hidden = 8
model.head_hidden = 8
train.max_epoch = 2
train.batch_size = 64
train.lookback = 8
train.lr = 0.001
train.seed = 3
transfer.probe_len = 50
transfer.finetune_max_epoch = 1
transfer.finetune_batch = 16
source_split.train_len = 188
source_split.val_len = 50
source_split.test_len = 50
target_split.train_len = 92
target_split.val_len = 0
target_split.test_len = 100
"""


@pytest.fixture(scope="module")
def workspace(tmp_path_factory):
    root = tmp_path_factory.mktemp("cliws")
    cfg_path = root / "tiny.cfg"
    cfg_path.write_text(TINY_CONFIG)
    assert main(["synth", "--days", "3", "--seed", "20", "--station-id", "src_a",
                 "--out", str(root / "data")]) == 0
    assert main(["synth", "--days", "3", "--seed", "21", "--station-id", "src_b",
                 "--cloud-noise", "0.6", "--out", str(root / "data")]) == 0
    assert main(["synth", "--days", "2", "--seed", "30", "--station-id", "tgt",
                 "--peak-kw", "13", "--out", str(root / "data")]) == 0
    return root


def _rows(path):
    with open(path, newline="") as fh:
        return list(csv.reader(fh))


def test_synth_row_count(tmp_path):
    assert main(["synth", "--days", "93", "--seed", "7", "--station-id", "big",
                 "--out", str(tmp_path)]) == 0
    rows = _rows(tmp_path / "big.csv")
    assert len(rows) == 8929  # header + 8928 points
    series = load_csv(tmp_path / "big.csv")
    assert len(series) == 8928


def test_manifest_written_with_hashes(workspace):
    manifest = json.loads((workspace / "data" / "manifest.json").read_text())
    assert manifest["command"] == "synth"
    assert "tgt.csv" in manifest["files"]
    assert manifest["config_hash"]
    assert manifest["config"]["train.lookback"] == "96"


def test_select_source_outputs(workspace, tmp_path):
    out = tmp_path / "sel"
    rc = main(["--config", str(workspace / "tiny.cfg"), "select-source",
               "--target", str(workspace / "data" / "tgt.csv"),
               "--candidates", str(workspace / "data" / "src_a.csv"),
               str(workspace / "data" / "src_b.csv"),
               "--out", str(out)])
    assert rc == 0
    rows = _rows(out / "mmd_table.csv")
    assert rows[0] == ["candidate", "mmd2"]
    assert len(rows) == 3
    sel = json.loads((out / "selection.json").read_text())
    assert sel["selected"] in ("src_a", "src_b")


def test_preprocess_outputs(workspace, tmp_path):
    out = tmp_path / "prep"
    rc = main(["--config", str(workspace / "tiny.cfg"), "preprocess",
               "--target", str(workspace / "data" / "tgt.csv"),
               "--candidates", str(workspace / "data" / "src_a.csv"),
               str(workspace / "data" / "src_b.csv"),
               "--out", str(out)])
    assert rc == 0
    for name in ("mmd_table.csv", "corrected_series.csv", "outliers.csv",
                 "feature_ranking.csv", "manifest.json"):
        assert (out / name).exists(), name
    ranking = _rows(out / "feature_ranking.csv")
    assert ranking[0] == ["feature", "weight", "rank"]
    assert len(ranking) == 5  # four features


@pytest.fixture(scope="module")
def pretrained(workspace):
    out = workspace / "pre"
    rc = main(["--config", str(workspace / "tiny.cfg"), "pretrain",
               "--source", str(workspace / "data" / "src_a.csv"),
               "--out", str(out)])
    assert rc == 0
    return out


def test_pretrain_artifacts(pretrained):
    assert (pretrained / "checkpoint.ckpt").exists()
    history = _rows(pretrained / "history.csv")
    assert history[0] == ["epoch", "train_loss", "val_loss", "wall_time"]
    assert len(history) == 3  # header + 2 epochs
    digest = json.loads((pretrained / "metrics.json").read_text())
    assert "test_metrics" in digest


def test_evaluate_matches_checkpoint_digest(workspace, pretrained, tmp_path):
    out = tmp_path / "eval"
    rc = main(["--config", str(workspace / "tiny.cfg"), "evaluate",
               "--checkpoint", str(pretrained / "checkpoint.ckpt"),
               "--station", str(workspace / "data" / "src_a.csv"),
               "--role", "source", "--segment", "test",
               "--out", str(out)])
    assert rc == 0
    got = json.loads((out / "metrics.json").read_text())["metrics"]
    digest = json.loads((pretrained / "metrics.json").read_text())["test_metrics"]
    for key in ("mse", "mae", "rmse", "r2"):
        assert abs(got[key] - digest[key]) < 1e-9


def test_explain_outputs(workspace, pretrained, tmp_path):
    out = tmp_path / "explain"
    rc = main(["--config", str(workspace / "tiny.cfg"), "explain",
               "--checkpoint", str(pretrained / "checkpoint.ckpt"),
               "--out", str(out)])
    assert rc == 0
    rows = _rows(out / "explain.csv")
    assert rows[0] == ["kind", "weight", "gate", "coefficient"]
    assert len(rows) == 9  # eight pool members
    text = (out / "explain.txt").read_text()
    assert "lambda" in text


def test_transfer_report_files(workspace, tmp_path):
    out = tmp_path / "xfer"
    rc = main(["--config", str(workspace / "tiny.cfg"), "transfer",
               "--target", str(workspace / "data" / "tgt.csv"),
               "--candidates", str(workspace / "data" / "src_a.csv"),
               str(workspace / "data" / "src_b.csv"),
               "--out", str(out)])
    assert rc == 0
    report = json.loads((out / "report.json").read_text())
    assert set(report["metrics"]) == {"direct", "transfer", "fine_tuned"}
    rows = _rows(out / "report.csv")
    assert rows[0] == ["variant", "mse", "mae", "rmse", "r2"]
    assert len(rows) == 4


def test_invalid_config_exit_code(tmp_path):
    bad = tmp_path / "bad.cfg"
    bad.write_text("train.lr = not_a_number\n")
    rc = main(["--config", str(bad), "synth", "--days", "1", "--out", str(tmp_path / "o")])
    assert rc == EXIT_CONFIG


def test_unknown_config_key_exit_code(tmp_path):
    bad = tmp_path / "bad2.cfg"
    bad.write_text("nonsense.key = 1\n")
    rc = main(["--config", str(bad), "synth", "--days", "1", "--out", str(tmp_path / "o")])
    assert rc == EXIT_CONFIG


def test_missing_checkpoint_exit_code(tmp_path):
    rc = main(["explain", "--checkpoint", str(tmp_path / "nope.ckpt"),
               "--out", str(tmp_path / "o")])
    assert rc == EXIT_DATA


def test_missing_station_exit_code(tmp_path):
    rc = main(["select-source", "--target", str(tmp_path / "nope.csv"),
               "--candidates", str(tmp_path / "also_nope.csv"),
               "--out", str(tmp_path / "o")])
    assert rc == EXIT_DATA


def test_ablation_config_variants():
    base = RunConfig()
    assert ablation_config(base, "full") is base
    assert ablation_config(base, "no_feature_engineering").use_feature_selection is False
    assert ablation_config(base, "no_fusion").model.use_fusion is False
    assert ablation_config(base, "no_weighted").model.use_weighted is False
    assert ablation_config(base, "plain_loss").loss.penalty_multiplier == 1.0
    assert len(ABLATION_VARIANTS) == 5
    # variants never touch the seed or the data pipeline settings
    for variant in ABLATION_VARIANTS:
        v = ablation_config(base, variant)
        assert v.seed == base.seed
        assert v.train.seed == base.train.seed
        assert v.source_split == base.source_split
