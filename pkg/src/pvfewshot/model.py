"""The assembled forecaster: pool, dual channels, fusion branch, head.

The PV window runs through all eight extractors; the two channels turn
a fixed random vector into interpretable weights and selection gates
that blend the extracted feature maps; the auxiliary-feature window is
projected by the convolutional branch and mixed in through the convex
fusion coefficient; a small MLP head emits the one-step prediction.

Ablation switches: ``use_weighted=False`` averages the pool uniformly
with no channels, ``use_fusion=False`` concatenates the features onto
the PV input channel-wise and drops the fusion branch entirely.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .autodiff import ShapeError, Tensor, concat
from .config import ModelConfig
from .ensemble import ChannelNet, EnsembleCoefficients, combine, explain, interpret_weights, select_gates
from .fusion import FConvNet, FusionLambda, HeadMlp, fuse
from .pool import POOL_ORDER, POOL_SIZE, ModelPool
from .nn import Block


class Forecaster(Block):
    def __init__(self, cfg: ModelConfig, n_features: int, lookback: int, seed: int):
        super().__init__()
        self.cfg = cfg
        self.n_features = n_features
        self.lookback = lookback
        self.seed = seed
        rng = np.random.default_rng(seed)
        pool_in = 1 if cfg.use_fusion else 1 + n_features
        self.pool: ModelPool = self.add_block("pool", ModelPool(cfg.pool, rng, in_dim=pool_in))
        if cfg.use_weighted:
            self.channel1 = self.add_block("channel1", ChannelNet(cfg.channels, POOL_SIZE, rng))
            self.channel2 = self.add_block("channel2", ChannelNet(cfg.channels, POOL_SIZE, rng))
        if cfg.use_fusion:
            self.fconv = self.add_block("fconv", FConvNet(
                n_features, cfg.pool.hidden_size, cfg.pool.kernel_size, cfg.pool.padding, rng))
            self.fusion = self.add_block("fusion", FusionLambda())
        self.head = self.add_block("head", HeadMlp(
            lookback * cfg.pool.hidden_size, cfg.head_hidden, cfg.head_dropout, rng))

    def _check_inputs(self, pv: Tensor, feats: Tensor) -> None:
        if pv.ndim != 3 or pv.shape[2] != 1:
            raise ShapeError(f"forecaster: pv window must be [BS, LW, 1], got {pv.shape}")
        if feats.ndim != 3 or feats.shape[2] != self.n_features:
            raise ShapeError(f"forecaster: feature window must be [BS, LW, {self.n_features}], "
                             f"got {feats.shape}")
        if pv.shape[:2] != feats.shape[:2]:
            raise ShapeError(f"forecaster: pv {pv.shape} and features {feats.shape} disagree")
        if pv.shape[1] != self.lookback:
            raise ShapeError(f"forecaster: look-back {pv.shape[1]} does not match built {self.lookback}")

    def forward(self, pv: Tensor, feats: Tensor, train: bool = False, rng=None,
                gate_mode: str | None = None) -> Tensor:
        self._check_inputs(pv, feats)
        gate_mode = gate_mode or ("train" if train else "infer")
        x = pv if self.cfg.use_fusion else concat([pv, feats], axis=2)
        maps = self.pool.extract_all(x, train, rng)
        if self.cfg.use_weighted:
            w = interpret_weights(self.channel1, train, rng)
            g = select_gates(self.channel2, self.cfg.channels.gate_steepness, gate_mode, train, rng)
            combined = combine(maps, w, g, renormalize=self.cfg.channels.renormalize)
        else:
            combined = maps[0] * (1.0 / POOL_SIZE)
            for m in maps[1:]:
                combined = combined + m * (1.0 / POOL_SIZE)
        if self.cfg.use_fusion:
            aux = self.fconv.forward(feats, train, rng)
            fused = fuse(combined, aux, self.fusion.tensor())
        else:
            fused = combined
        return self.head.forward(fused, train, rng)

    def coefficients(self, mode: str = "infer") -> EnsembleCoefficients:
        """Evaluation-mode snapshot of weights, gates, and combined coefficients."""
        kinds = [k.value for k in POOL_ORDER]
        if not self.cfg.use_weighted:
            uniform = np.full(POOL_SIZE, 1.0 / POOL_SIZE)
            return EnsembleCoefficients(kinds, uniform, np.ones(POOL_SIZE), uniform)
        w = interpret_weights(self.channel1).data[0]
        g = select_gates(self.channel2, self.cfg.channels.gate_steepness, mode).data[0]
        c = w * g
        total = c.sum()
        if total > 0.0:
            if self.cfg.channels.renormalize:
                c = c / total
        else:
            c = w.copy()
        return EnsembleCoefficients(kinds, w, g, c)

    def fusion_lambda(self) -> float | None:
        return self.fusion.value() if self.cfg.use_fusion else None

    def explain(self) -> str:
        return explain(self.coefficients(), self.fusion_lambda())

    def arch_meta(self) -> dict:
        from .config import flatten_config

        return {"model": flatten_config(self.cfg), "n_features": self.n_features,
                "lookback": self.lookback, "seed": self.seed}

    @classmethod
    def from_arch_meta(cls, meta: dict) -> "Forecaster":
        from .config import ModelConfig, unflatten_config

        cfg = unflatten_config(ModelConfig, dict(meta["model"]))
        return cls(cfg, int(meta["n_features"]), int(meta["lookback"]), int(meta["seed"]))

    def clone(self) -> "Forecaster":
        twin = Forecaster(self.cfg, self.n_features, self.lookback, self.seed)
        twin.load_state(self.state_arrays())
        return twin


@dataclass
class PredictionBatch:
    """Raw-scale predictions alongside their targets, for reporting."""

    predicted: np.ndarray
    actual: np.ndarray
