import numpy as np
import pytest

from pvfewshot.autodiff import Tensor
from pvfewshot.checkpoint import (
    CheckpointError,
    config_hash,
    load_checkpoint,
    load_model,
    save_checkpoint,
    save_model,
    serialize_checkpoint,
)
from pvfewshot.config import ChannelConfig, ModelConfig, PoolConfig, RunConfig, flatten_config
from pvfewshot.model import Forecaster


def _params(seed=0):
    rng = np.random.default_rng(seed)
    return {"a.w": rng.normal(size=(3, 4)), "a.b": rng.normal(size=(4,)),
            "z": rng.normal(size=(1,))}


def _model(seed=0):
    cfg = ModelConfig(pool=PoolConfig(hidden_size=8, attention_heads=4),
                      channels=ChannelConfig(input_dim=8, hidden=8), head_hidden=8)
    return Forecaster(cfg, n_features=3, lookback=6, seed=seed)


def test_roundtrip_bitwise(tmp_path):
    path = tmp_path / "c.ckpt"
    params = _params()
    save_checkpoint(path, params, {"note": "hello", "value": 1.5})
    loaded, meta = load_checkpoint(path)
    assert meta == {"note": "hello", "value": 1.5}
    for k in params:
        assert loaded[k].tobytes() == params[k].astype("<f8").tobytes()


def test_save_load_save_byte_identical(tmp_path):
    p1, p2 = tmp_path / "a.ckpt", tmp_path / "b.ckpt"
    params = _params(1)
    meta = {"config": {"train.lr": "0.0001"}, "digest": {"final": 0.123}}
    save_checkpoint(p1, params, meta)
    loaded, meta2 = load_checkpoint(p1)
    save_checkpoint(p2, loaded, meta2)
    assert p1.read_bytes() == p2.read_bytes()


def test_bad_magic(tmp_path):
    p = tmp_path / "x.ckpt"
    p.write_bytes(b"NOTACKPT" + b"\x00" * 32)
    with pytest.raises(CheckpointError, match="magic"):
        load_checkpoint(p)


def test_version_mismatch(tmp_path):
    blob = serialize_checkpoint(_params(), {})
    patched = blob.replace(b'"version":1', b'"version":2', 1)
    p = tmp_path / "v.ckpt"
    p.write_bytes(patched)
    with pytest.raises(CheckpointError, match="version"):
        load_checkpoint(p)


def test_truncated_payload(tmp_path):
    blob = serialize_checkpoint(_params(), {})
    p = tmp_path / "t.ckpt"
    p.write_bytes(blob[:-16])
    with pytest.raises(CheckpointError, match="truncated"):
        load_checkpoint(p)


def test_model_roundtrip_forward_bitwise(tmp_path):
    model = _model(5)
    path = tmp_path / "model.ckpt"
    save_model(path, model, {"digest": {"val": 0.5}})
    rebuilt, meta = load_model(path)
    assert meta["digest"] == {"val": 0.5}
    rng = np.random.default_rng(0)
    pv = Tensor(rng.uniform(0, 1, (2, 6, 1)))
    feats = Tensor(rng.uniform(0, 1, (2, 6, 3)))
    assert model.forward(pv, feats).data.tobytes() == rebuilt.forward(pv, feats).data.tobytes()


def test_config_hash_stable_and_sensitive():
    cfg = RunConfig()
    flat = flatten_config(cfg)
    assert config_hash(flat) == config_hash(dict(flat))
    flat2 = dict(flat)
    flat2["train.lr"] = "0.001"
    assert config_hash(flat) != config_hash(flat2)
