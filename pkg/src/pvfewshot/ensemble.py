"""Dual-channel combination weights over the extractor pool.

Channel 1 produces interpretable simplex weights (softmax, sum 1);
Channel 2 produces selection gates, continuous in (0, 1) through a
steep sigmoid while training and hard 0/1 at inference. Both channels
transform a fixed random seed vector through a small MLP stack, so all
learnability lives in the channel weights.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass

import numpy as np

from .autodiff import ShapeError, Tensor, div, mul, reduce_sum, sigmoid, softmax
from .config import ChannelConfig
from .nn import Block, Linear, MlpBlock

log = logging.getLogger(__name__)


class ChannelNet(Block):
    """Two MLP blocks and an output affine over an immutable input vector."""

    def __init__(self, cfg: ChannelConfig, n_models: int, rng: np.random.Generator):
        super().__init__()
        z = rng.standard_normal((1, cfg.input_dim))
        z.setflags(write=False)
        self.z = Tensor(z)  # constant input, never a parameter
        self.n_models = n_models
        self.mlp0 = self.add_block("mlp0", MlpBlock(cfg.input_dim, cfg.hidden, cfg.dropout, rng))
        self.mlp1 = self.add_block("mlp1", MlpBlock(cfg.hidden, cfg.hidden, cfg.dropout, rng))
        self.out = self.add_block("out", Linear(cfg.hidden, n_models, rng))

    def logits(self, train: bool = False, rng=None) -> Tensor:
        return self.out.forward(self.mlp1.forward(self.mlp0.forward(self.z, train, rng), train, rng))


def interpret_weights(channel: ChannelNet, train: bool = False, rng=None) -> Tensor:
    """Simplex weights [1, K]: positive, summing to one."""
    return softmax(channel.logits(train, rng), axis=-1)


def select_gates(channel: ChannelNet, steepness: float, mode: str,
                 train: bool = False, rng=None) -> Tensor:
    """Selection gates [1, K].

    ``mode='train'`` keeps them continuous in (0, 1) via the steep
    sigmoid so gradient flows; ``mode='infer'`` thresholds the logits at
    zero (strictly positive selects), yielding exact 0/1 constants.
    """
    if steepness <= 0:
        raise ValueError(f"select_gates: steepness must be positive, got {steepness}")
    logits = channel.logits(train, rng)
    if mode == "train":
        return sigmoid(logits, steepness=steepness)
    if mode == "infer":
        return Tensor((logits.data > 0.0).astype(np.float64))
    raise ValueError(f"select_gates: mode must be 'train' or 'infer', got {mode!r}")


def combine(features: list[Tensor], weights: Tensor, gates: Tensor,
            renormalize: bool = True) -> Tensor:
    """Coefficient-weighted sum of the pool's feature maps.

    Per-model coefficients are ``w * g``, renormalized to sum one while
    any gate is active so the simplex interpretation survives gating.
    With every gate at zero (possible only for hard inference gates) the
    combination falls back to the pure interpretability weights and the
    event is logged.
    """
    if len(features) != weights.shape[-1]:
        raise ShapeError(f"combine: {len(features)} feature maps vs {weights.shape[-1]} weights")
    shape = features[0].shape
    for f in features[1:]:
        if f.shape != shape:
            raise ShapeError(f"combine: feature map shapes disagree, {shape} vs {f.shape}")
    if np.all(gates.data == 1.0):
        coeff = weights  # renormalizing w * 1 by sum(w) = 1 is a no-op
    else:
        coeff = mul(weights, gates)
        total = float(coeff.data.sum())
        if total > 0.0:
            if renormalize:
                coeff = div(coeff, reduce_sum(coeff))
        else:
            log.warning("combine: all gates are zero; falling back to interpretability weights")
            coeff = weights
    out = mul(coeff[:, 0:1], features[0])
    for k in range(1, len(features)):
        out = out + mul(coeff[:, k:k + 1], features[k])
    return out


@dataclass
class EnsembleCoefficients:
    """Snapshot of the channel outputs for one model state."""

    kinds: list[str]
    weights: np.ndarray   # Channel 1, sums to 1
    gates: np.ndarray     # Channel 2, hard 0/1 at inference
    combined: np.ndarray  # effective per-model coefficients

    def rows(self) -> list[dict]:
        order = np.argsort(-self.combined, kind="stable")
        return [{"kind": self.kinds[i],
                 "weight": float(self.weights[i]),
                 "gate": float(self.gates[i]),
                 "coefficient": float(self.combined[i])}
                for i in order]


def explain(coeffs: EnsembleCoefficients, fusion_lambda: float | None = None) -> str:
    """Human-readable contribution table, strongest model first."""
    lines = [f"{'model':<18} {'weight':>10} {'gate':>6} {'coefficient':>12}"]
    for row in coeffs.rows():
        lines.append(f"{row['kind']:<18} {row['weight']:>10.4f} "
                     f"{row['gate']:>6.0f} {row['coefficient']:>12.4f}")
    if fusion_lambda is not None:
        lines.append(f"fusion lambda (pv share): {fusion_lambda:.4f}")
    return "\n".join(lines)
