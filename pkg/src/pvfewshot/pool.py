"""The extractor pool: eight per-timestep feature extractors.

Every member maps a window [BS, LW, C_in] to a feature map
[BS, LW, HF], so the downstream weighted combination and fusion stay
shape-uniform. The convolutional member therefore uses no pooling (a
pooled variant with stride 2, which halves the time axis, survives only
in the standalone diagnostic head).
"""

from __future__ import annotations

from enum import Enum

import numpy as np

from .autodiff import ShapeError, Tensor, reduce_mean, relu, reshape
from .config import PoolConfig
from .nn import (
    BiLstmLayer,
    Block,
    Conv1d,
    GruLayer,
    Linear,
    LstmLayer,
    MlpBlock,
    MultiHeadSelfAttention,
    RnnLayer,
)


class ExtractorKind(str, Enum):
    LR = "lr"
    MLP = "mlp"
    CNN = "cnn"
    RNN = "rnn"
    GRU = "gru"
    LSTM = "lstm"
    BILSTM = "bilstm"
    BILSTM_ATTENTION = "bilstm_attention"


POOL_ORDER: tuple[ExtractorKind, ...] = tuple(ExtractorKind)
POOL_SIZE = len(POOL_ORDER)


class LrExtractor(Block):
    """Stacked affine maps, no activation."""

    def __init__(self, in_dim: int, hidden: int, layers: int, rng):
        super().__init__()
        self.layers = [self.add_block(f"layer{i}", Linear(in_dim if i == 0 else hidden, hidden, rng))
                       for i in range(layers)]

    def forward(self, x: Tensor, train: bool = False, rng=None) -> Tensor:
        for layer in self.layers:
            x = layer.forward(x)
        return x


class MlpExtractor(Block):
    def __init__(self, in_dim: int, hidden: int, layers: int, dropout: float, rng):
        super().__init__()
        self.layers = [self.add_block(f"layer{i}",
                                      MlpBlock(in_dim if i == 0 else hidden, hidden, dropout, rng))
                       for i in range(layers)]

    def forward(self, x: Tensor, train: bool = False, rng=None) -> Tensor:
        for layer in self.layers:
            x = layer.forward(x, train, rng)
        return x


class CnnExtractor(Block):
    """Two stride-1 convolutions with ReLU between; time axis preserved."""

    def __init__(self, in_dim: int, hidden: int, kernel: int, padding: int, rng):
        super().__init__()
        self.conv0 = self.add_block("conv0", Conv1d(in_dim, hidden, kernel, padding, rng))
        self.conv1 = self.add_block("conv1", Conv1d(hidden, hidden, kernel, padding, rng))

    def forward(self, x: Tensor, train: bool = False, rng=None) -> Tensor:
        return self.conv1.forward(relu(self.conv0.forward(x)))


class RecurrentExtractor(Block):
    def __init__(self, layer_cls, in_dim: int, hidden: int, layers: int, rng):
        super().__init__()
        self.layers = [self.add_block(f"layer{i}",
                                      layer_cls(in_dim if i == 0 else hidden, hidden, rng))
                       for i in range(layers)]

    def forward(self, x: Tensor, train: bool = False, rng=None) -> Tensor:
        for layer in self.layers:
            x = layer.forward(x)
        return x


class BiLstmExtractor(Block):
    """Stacked bidirectional layers at half width per direction."""

    def __init__(self, in_dim: int, hidden: int, layers: int, rng):
        super().__init__()
        half = hidden // 2
        self.layers = [self.add_block(f"layer{i}",
                                      BiLstmLayer(in_dim if i == 0 else hidden, half, rng))
                       for i in range(layers)]

    def forward(self, x: Tensor, train: bool = False, rng=None) -> Tensor:
        for layer in self.layers:
            x = layer.forward(x)
        return x


class BiLstmAttentionExtractor(Block):
    def __init__(self, in_dim: int, hidden: int, layers: int, heads: int, rng):
        super().__init__()
        self.bilstm = self.add_block("bilstm", BiLstmExtractor(in_dim, hidden, layers, rng))
        self.attn = self.add_block("attn", MultiHeadSelfAttention(hidden, heads, rng))

    def forward(self, x: Tensor, train: bool = False, rng=None) -> Tensor:
        return self.attn.forward(self.bilstm.forward(x))


class ModelPool(Block):
    """All eight extractors, built once from a seed, applied per window."""

    def __init__(self, cfg: PoolConfig, rng: np.random.Generator, in_dim: int = 1):
        super().__init__()
        self.cfg = cfg
        self.in_dim = in_dim
        h, layers = cfg.hidden_size, cfg.num_layers
        self.members: dict[ExtractorKind, Block] = {}
        for kind in POOL_ORDER:
            if kind is ExtractorKind.LR:
                blk = LrExtractor(in_dim, h, layers, rng)
            elif kind is ExtractorKind.MLP:
                blk = MlpExtractor(in_dim, h, layers, cfg.dropout, rng)
            elif kind is ExtractorKind.CNN:
                blk = CnnExtractor(in_dim, h, cfg.kernel_size, cfg.padding, rng)
            elif kind is ExtractorKind.RNN:
                blk = RecurrentExtractor(RnnLayer, in_dim, h, layers, rng)
            elif kind is ExtractorKind.GRU:
                blk = RecurrentExtractor(GruLayer, in_dim, h, layers, rng)
            elif kind is ExtractorKind.LSTM:
                blk = RecurrentExtractor(LstmLayer, in_dim, h, layers, rng)
            elif kind is ExtractorKind.BILSTM:
                blk = BiLstmExtractor(in_dim, h, layers, rng)
            else:
                blk = BiLstmAttentionExtractor(in_dim, h, layers, cfg.attention_heads, rng)
            self.members[kind] = self.add_block(kind.value, blk)

    def _check_input(self, window: Tensor) -> None:
        if window.ndim != 3 or window.shape[2] != self.in_dim:
            raise ShapeError(
                f"pool: window must be [BS, LW, {self.in_dim}], got {window.shape}")

    def extract(self, kind: ExtractorKind, window: Tensor,
                train: bool = False, rng=None) -> Tensor:
        self._check_input(window)
        return self.members[kind].forward(window, train, rng)

    def extract_all(self, window: Tensor, train: bool = False, rng=None) -> list[Tensor]:
        self._check_input(window)
        return [blk.forward(window, train, rng) for blk in self.members.values()]

    def parameter_counts(self) -> dict[str, int]:
        return {kind.value: blk.parameter_count() for kind, blk in self.members.items()}


def build_pool(cfg: PoolConfig, seed: int, in_dim: int = 1) -> ModelPool:
    """Deterministic pool construction: same seed, same initial weights."""
    return ModelPool(cfg, np.random.default_rng(seed), in_dim=in_dim)


class StandaloneCnnHead(Block):
    """Diagnostic CNN forecaster with the published stride-2 pooling.

    Pooling halves the time axis, which is incompatible with the pool's
    per-timestep feature contract, so this head lives outside the pool
    and is used only for side-by-side diagnostics.
    """

    def __init__(self, cfg: PoolConfig, lookback: int, rng: np.random.Generator, in_dim: int = 1):
        super().__init__()
        if lookback % cfg.pool_stride != 0:
            raise ShapeError(f"standalone cnn: pool stride {cfg.pool_stride} "
                             f"must divide look-back {lookback}")
        h = cfg.hidden_size
        self.stride = cfg.pool_stride
        self.conv0 = self.add_block("conv0", Conv1d(in_dim, h, cfg.kernel_size, cfg.padding, rng))
        self.conv1 = self.add_block("conv1", Conv1d(h, h, cfg.kernel_size, cfg.padding, rng))
        self.out = self.add_block("out", Linear((lookback // cfg.pool_stride) * h, 1, rng))

    def forward(self, x: Tensor, train: bool = False, rng=None) -> Tensor:
        bsz, t_len = x.shape[0], x.shape[1]
        y = relu(self.conv0.forward(x))
        pooled = reduce_mean(reshape(y, (bsz, t_len // self.stride, self.stride, -1)), axis=2)
        y = relu(self.conv1.forward(pooled))
        return self.out.forward(reshape(y, (bsz, -1)))
