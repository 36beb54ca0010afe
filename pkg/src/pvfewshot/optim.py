"""AdamW with decoupled weight decay."""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .autodiff import Tensor


class NumericError(RuntimeError):
    """Raised when a numeric invariant breaks (non-finite grads or losses)."""


@dataclass
class AdamWState:
    """Per-parameter first/second moment estimates plus the shared step count."""

    m: dict[str, np.ndarray] = field(default_factory=dict)
    v: dict[str, np.ndarray] = field(default_factory=dict)
    t: int = 0


def adamw_step(params: dict[str, Tensor], grads: dict[str, np.ndarray], state: AdamWState,
               lr: float, betas: tuple[float, float] = (0.9, 0.999), eps: float = 1e-8,
               weight_decay: float = 0.0) -> None:
    """One decoupled-weight-decay Adam update, in place on ``params``.

    Weight decay multiplies each parameter by ``1 - lr * weight_decay``
    before the moment-based update, independent of the gradient.
    """
    if lr <= 0:
        raise ValueError(f"adamw_step: lr must be positive, got {lr}")
    beta1, beta2 = betas
    state.t += 1
    bc1 = 1.0 - beta1 ** state.t
    bc2 = 1.0 - beta2 ** state.t
    for name, p in params.items():
        g = grads[name]
        if g.shape != p.data.shape:
            raise ValueError(f"adamw_step: grad shape {g.shape} does not match parameter {name!r} {p.data.shape}")
        if not np.all(np.isfinite(g)):
            raise NumericError(f"adamw_step: non-finite gradient for parameter {name!r}")
        if name not in state.m:
            state.m[name] = np.zeros_like(p.data)
            state.v[name] = np.zeros_like(p.data)
        m = state.m[name]
        v = state.v[name]
        m *= beta1
        m += (1.0 - beta1) * g
        v *= beta2
        v += (1.0 - beta2) * (g * g)
        if weight_decay:
            p.data *= 1.0 - lr * weight_decay
        p.data -= lr * (m / bc1) / (np.sqrt(v / bc2) + eps)


class AdamW:
    """Stateful wrapper over :func:`adamw_step` for a named parameter set."""

    def __init__(self, params: dict[str, Tensor], lr: float, betas: tuple[float, float] = (0.9, 0.999),
                 eps: float = 1e-8, weight_decay: float = 0.0):
        self.params = dict(params)
        self.lr = lr
        self.betas = betas
        self.eps = eps
        self.weight_decay = weight_decay
        self.state = AdamWState()

    def zero_grad(self) -> None:
        for p in self.params.values():
            p.grad = None

    def step(self) -> None:
        grads = {}
        for name, p in self.params.items():
            if p.grad is None:
                grads[name] = np.zeros_like(p.data)
            else:
                grads[name] = p.grad
        adamw_step(self.params, grads, self.state, self.lr, self.betas, self.eps, self.weight_decay)
