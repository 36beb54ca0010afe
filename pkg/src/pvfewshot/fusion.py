"""Auxiliary-feature branch, convex cross-embedding, and prediction head.

The weather-feature window is projected to the same [BS, LW, HF] space
as the pooled PV features by a two-layer convolutional net, then mixed
with them through a single learnable convex coefficient; a small MLP
head flattens the fused map into the one-step prediction.
"""

from __future__ import annotations

import numpy as np

from .autodiff import ShapeError, Tensor, dropout, flatten, relu, sigmoid
from .nn import Block, Conv1d, Linear


class FConvNet(Block):
    """Two stride-1 convolutions over time: [BS, LW, N] -> [BS, LW, HF]."""

    def __init__(self, n_features: int, hidden: int, kernel: int, padding: int,
                 rng: np.random.Generator):
        super().__init__()
        self.n_features = n_features
        self.conv0 = self.add_block("conv0", Conv1d(n_features, hidden, kernel, padding, rng))
        self.conv1 = self.add_block("conv1", Conv1d(hidden, hidden, kernel, padding, rng))

    def forward(self, aux: Tensor, train: bool = False, rng=None) -> Tensor:
        if aux.ndim != 3 or aux.shape[2] != self.n_features:
            raise ShapeError(f"fconv: expected [BS, LW, {self.n_features}], got {aux.shape}")
        return self.conv1.forward(relu(self.conv0.forward(aux)))


class FusionLambda(Block):
    """Learnable convex mixing coefficient, sigmoid-bounded to (0, 1).

    The raw parameter starts at zero, i.e. an even 0.5/0.5 mix.
    """

    def __init__(self):
        super().__init__()
        self.theta = self.add_param("theta", np.zeros((1, 1)))

    def tensor(self) -> Tensor:
        return sigmoid(self.theta)

    def value(self) -> float:
        return float(self.tensor().data[0, 0])


def fuse(pv_feat: Tensor, aux_feat: Tensor, lam: Tensor) -> Tensor:
    """``lam * pv + (1 - lam) * aux``, elementwise convex combination."""
    if pv_feat.shape != aux_feat.shape:
        raise ShapeError(f"fuse: branch shapes disagree, {pv_feat.shape} vs {aux_feat.shape}")
    return lam * pv_feat + (1.0 - lam) * aux_feat


class HeadMlp(Block):
    """Flatten -> affine -> ReLU -> dropout -> affine(1)."""

    def __init__(self, in_width: int, hidden: int, dropout_rate: float,
                 rng: np.random.Generator):
        super().__init__()
        self.in_width = in_width
        self.dropout_rate = dropout_rate
        self.fc0 = self.add_block("fc0", Linear(in_width, hidden, rng))
        self.fc1 = self.add_block("fc1", Linear(hidden, 1, rng))

    def forward(self, fused: Tensor, train: bool = False, rng=None) -> Tensor:
        flat = flatten(fused)
        if flat.shape[1] != self.in_width:
            raise ShapeError(f"head: flattened width {flat.shape[1]} does not match "
                             f"built width {self.in_width}")
        return self.fc1.forward(dropout(relu(self.fc0.forward(flat)), self.dropout_rate, train, rng))
