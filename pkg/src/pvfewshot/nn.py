"""Neural building blocks on top of the autodiff engine.

Blocks own named parameters; composite blocks expose them with stable
dotted names (e.g. ``pool.lstm.layer0.w_in``) used by the optimizer and
the checkpoint format. Recurrent sequence layers run their time loop
inside a single taped op with a hand-rolled backward pass, which keeps
the graph small; gradient correctness is covered by the finite
difference suite.
"""

from __future__ import annotations

from typing import Iterator

import numpy as np

from . import _recurrent_kernels as kernels
from .autodiff import (
    Tensor,
    ShapeError,
    _accum,
    _node,
    add,
    affine,
    concat,
    conv1d,
    dropout,
    matmul,
    relu,
    reshape,
    softmax,
    transpose,
)


def xavier_uniform(rng: np.random.Generator, rows: int, cols: int, gates: int = 1) -> np.ndarray:
    """Glorot-uniform init; ``gates`` > 1 treats cols as stacked gate blocks."""
    limit = np.sqrt(6.0 / (rows + cols / gates))
    return rng.uniform(-limit, limit, size=(rows, cols))


class Block:
    """Parameter container with hierarchical naming."""

    def __init__(self):
        self._params: dict[str, Tensor] = {}
        self._blocks: dict[str, Block] = {}

    def add_param(self, name: str, array: np.ndarray) -> Tensor:
        t = Tensor(array, requires_grad=True)
        self._params[name] = t
        return t

    def add_block(self, name: str, block: "Block") -> "Block":
        self._blocks[name] = block
        return block

    def named_parameters(self, prefix: str = "") -> Iterator[tuple[str, Tensor]]:
        for name, t in self._params.items():
            yield prefix + name, t
        for name, blk in self._blocks.items():
            yield from blk.named_parameters(prefix + name + ".")

    def parameters(self) -> list[Tensor]:
        return [t for _, t in self.named_parameters()]

    def parameter_count(self) -> int:
        return sum(t.size for t in self.parameters())

    def state_arrays(self) -> dict[str, np.ndarray]:
        return {name: np.array(t.data) for name, t in self.named_parameters()}

    def load_state(self, arrays: dict[str, np.ndarray]) -> None:
        own = dict(self.named_parameters())
        missing = sorted(set(own) - set(arrays))
        extra = sorted(set(arrays) - set(own))
        if missing or extra:
            raise ValueError(f"load_state: missing={missing} unexpected={extra}")
        for name, t in own.items():
            a = np.asarray(arrays[name], dtype=np.float64)
            if a.shape != t.data.shape:
                raise ShapeError(f"load_state: {name} has shape {a.shape}, expected {t.data.shape}")
            t.data = a.copy()


class Linear(Block):
    def __init__(self, in_dim: int, out_dim: int, rng: np.random.Generator):
        super().__init__()
        self.w = self.add_param("w", xavier_uniform(rng, in_dim, out_dim))
        self.b = self.add_param("b", np.zeros(out_dim))

    def forward(self, x: Tensor, train: bool = False, rng=None) -> Tensor:
        return affine(x, self.w, self.b)


class Conv1d(Block):
    def __init__(self, in_ch: int, out_ch: int, kernel: int, padding: int, rng: np.random.Generator):
        super().__init__()
        limit = np.sqrt(6.0 / (kernel * in_ch + kernel * out_ch))
        self.w = self.add_param("w", rng.uniform(-limit, limit, size=(kernel, in_ch, out_ch)))
        self.b = self.add_param("b", np.zeros(out_ch))
        self.padding = padding

    def forward(self, x: Tensor, train: bool = False, rng=None) -> Tensor:
        return conv1d(x, self.w, self.b, padding=self.padding)


class MlpBlock(Block):
    """Affine -> ReLU -> dropout, the basic nonlinear unit."""

    def __init__(self, in_dim: int, out_dim: int, dropout_rate: float, rng: np.random.Generator):
        super().__init__()
        self.fc = self.add_block("fc", Linear(in_dim, out_dim, rng))
        self.dropout_rate = dropout_rate

    def forward(self, x: Tensor, train: bool = False, rng=None) -> Tensor:
        return dropout(relu(self.fc.forward(x)), self.dropout_rate, train, rng)


# ---------------------------------------------------------------------------
# fused recurrent sequence ops


def _time_major(x: Tensor) -> np.ndarray:
    # [B, T, I] -> contiguous [T*B, I]; per-step views stay contiguous
    bsz, t_len, in_dim = x.shape
    return np.ascontiguousarray(x.data.transpose(1, 0, 2)).reshape(t_len * bsz, in_dim)


def _batch_major(a: np.ndarray, bsz: int, t_len: int) -> np.ndarray:
    return np.ascontiguousarray(a.reshape(t_len, bsz, -1).transpose(1, 0, 2))


def rnn_seq(x: Tensor, w_in: Tensor, w_rec: Tensor, bias: Tensor) -> Tensor:
    """Elman RNN over [B, T, I]: h_t = tanh(x_t W + h_{t-1} U + b), h_0 = 0."""
    bsz, t_len, in_dim = x.shape
    hidden = w_rec.shape[0]
    x2 = _time_major(x)
    pre = (x2 @ w_in.data + bias.data).reshape(t_len, bsz, hidden)
    hs = np.empty((t_len, bsz, hidden))
    kernels.rnn_forward(pre, w_rec.data, hs)

    def backward():
        g = np.ascontiguousarray(out.grad.transpose(1, 0, 2))
        acts = np.empty((t_len, bsz, hidden))
        kernels.rnn_backward(g, np.ascontiguousarray(w_rec.data.T), hs, acts)
        hprev = np.concatenate([np.zeros((1, bsz, hidden)), hs[:-1]])
        a2 = acts.reshape(t_len * bsz, hidden)
        _accum(w_in, x2.T @ a2)
        _accum(w_rec, hprev.reshape(t_len * bsz, hidden).T @ a2)
        _accum(bias, a2.sum(axis=0))
        _accum(x, _batch_major(a2 @ w_in.data.T, bsz, t_len))

    out = _node(_batch_major(hs, bsz, t_len), (x, w_in, w_rec, bias), "rnn_seq", backward)
    return out


def lstm_seq(x: Tensor, w_in: Tensor, w_rec: Tensor, bias: Tensor) -> Tensor:
    """LSTM over [B, T, I] with fused gate matrices in (i, f, o, g) order.

    ``w_in`` is [I, 4H], ``w_rec`` is [H, 4H], ``bias`` is [4H]; returns
    the full hidden sequence [B, T, H] from zero initial state. The
    three sigmoid gates occupy one contiguous block so each step does a
    single logistic and a single tanh evaluation.
    """
    bsz, t_len, in_dim = x.shape
    hidden = w_rec.shape[0]
    x2 = _time_major(x)
    pre = (x2 @ w_in.data + bias.data).reshape(t_len, bsz, 4 * hidden)
    hs = np.empty((t_len, bsz, hidden))
    gates = np.empty((t_len, bsz, 4 * hidden))
    cs = np.empty((t_len, bsz, hidden))
    tcs = np.empty((t_len, bsz, hidden))
    kernels.lstm_forward(pre, w_rec.data, hs, gates, cs, tcs)

    def backward():
        g_out = np.ascontiguousarray(out.grad.transpose(1, 0, 2))
        acts = np.empty((t_len, bsz, 4 * hidden))
        kernels.lstm_backward(g_out, np.ascontiguousarray(w_rec.data.T), gates, cs, tcs, acts)
        hprev = np.concatenate([np.zeros((1, bsz, hidden)), hs[:-1]])
        a2 = acts.reshape(t_len * bsz, 4 * hidden)
        _accum(w_in, x2.T @ a2)
        _accum(w_rec, hprev.reshape(t_len * bsz, hidden).T @ a2)
        _accum(bias, a2.sum(axis=0))
        _accum(x, _batch_major(a2 @ w_in.data.T, bsz, t_len))

    out = _node(_batch_major(hs, bsz, t_len), (x, w_in, w_rec, bias), "lstm_seq", backward)
    return out


def gru_seq(x: Tensor, w_in: Tensor, w_zr: Tensor, w_n: Tensor, bias: Tensor) -> Tensor:
    """GRU over [B, T, I], textbook form with the reset gate inside tanh.

    ``w_in`` is [I, 3H] for the (z, r, n) input projections, ``w_zr`` is
    [H, 2H] recurrent for z and r, ``w_n`` is [H, H] recurrent for the
    candidate: n_t = tanh(x_t W_n + (r_t * h_{t-1}) U_n + b_n) and
    h_t = (1 - z_t) * n_t + z_t * h_{t-1}.
    """
    bsz, t_len, in_dim = x.shape
    hidden = w_n.shape[0]
    h2 = 2 * hidden
    x2 = _time_major(x)
    pre = (x2 @ w_in.data + bias.data).reshape(t_len, bsz, 3 * hidden)
    hs = np.empty((t_len, bsz, hidden))
    gates = np.empty((t_len, bsz, 3 * hidden))  # z, r sigmoid blocks then tanh n
    rh = np.empty((t_len, bsz, hidden))
    kernels.gru_forward(pre, w_zr.data, w_n.data, hs, gates, rh)

    def backward():
        g_out = np.ascontiguousarray(out.grad.transpose(1, 0, 2))
        acts = np.empty((t_len, bsz, 3 * hidden))
        kernels.gru_backward(g_out, np.ascontiguousarray(w_zr.data.T),
                             np.ascontiguousarray(w_n.data.T), gates, hs, acts)
        hprev = np.concatenate([np.zeros((1, bsz, hidden)), hs[:-1]])
        a2 = acts.reshape(t_len * bsz, 3 * hidden)
        _accum(w_in, x2.T @ a2)
        _accum(w_zr, hprev.reshape(t_len * bsz, hidden).T @ a2[:, :h2])
        _accum(w_n, rh.reshape(t_len * bsz, hidden).T @ a2[:, h2:])
        _accum(bias, a2.sum(axis=0))
        _accum(x, _batch_major(a2 @ w_in.data.T, bsz, t_len))

    out = _node(_batch_major(hs, bsz, t_len), (x, w_in, w_zr, w_n, bias), "gru_seq", backward)
    return out


class RnnLayer(Block):
    def __init__(self, in_dim: int, hidden: int, rng: np.random.Generator):
        super().__init__()
        self.w_in = self.add_param("w_in", xavier_uniform(rng, in_dim, hidden))
        self.w_rec = self.add_param("w_rec", xavier_uniform(rng, hidden, hidden))
        self.b = self.add_param("b", np.zeros(hidden))

    def forward(self, x: Tensor, train: bool = False, rng=None) -> Tensor:
        return rnn_seq(x, self.w_in, self.w_rec, self.b)


class LstmLayer(Block):
    def __init__(self, in_dim: int, hidden: int, rng: np.random.Generator):
        super().__init__()
        self.w_in = self.add_param("w_in", xavier_uniform(rng, in_dim, 4 * hidden, gates=4))
        self.w_rec = self.add_param("w_rec", xavier_uniform(rng, hidden, 4 * hidden, gates=4))
        self.b = self.add_param("b", np.zeros(4 * hidden))

    def forward(self, x: Tensor, train: bool = False, rng=None) -> Tensor:
        return lstm_seq(x, self.w_in, self.w_rec, self.b)


class GruLayer(Block):
    def __init__(self, in_dim: int, hidden: int, rng: np.random.Generator):
        super().__init__()
        self.w_in = self.add_param("w_in", xavier_uniform(rng, in_dim, 3 * hidden, gates=3))
        self.w_zr = self.add_param("w_zr", xavier_uniform(rng, hidden, 2 * hidden, gates=2))
        self.w_n = self.add_param("w_n", xavier_uniform(rng, hidden, hidden))
        self.b = self.add_param("b", np.zeros(3 * hidden))

    def forward(self, x: Tensor, train: bool = False, rng=None) -> Tensor:
        return gru_seq(x, self.w_in, self.w_zr, self.w_n, self.b)


class BiLstmLayer(Block):
    """Forward and reversed LSTM passes concatenated to ``2 * hidden``."""

    def __init__(self, in_dim: int, hidden_per_dir: int, rng: np.random.Generator):
        super().__init__()
        self.fwd = self.add_block("fwd", LstmLayer(in_dim, hidden_per_dir, rng))
        self.bwd = self.add_block("bwd", LstmLayer(in_dim, hidden_per_dir, rng))

    def forward(self, x: Tensor, train: bool = False, rng=None) -> Tensor:
        rev = x[:, ::-1]
        back = self.bwd.forward(rev)[:, ::-1]
        return concat([self.fwd.forward(x), back], axis=2)


class MultiHeadSelfAttention(Block):
    """Scaled dot-product self-attention over the time axis, with residual."""

    def __init__(self, dim: int, heads: int, rng: np.random.Generator):
        super().__init__()
        if dim % heads != 0:
            raise ValueError(f"attention: {heads} heads do not divide width {dim}")
        self.dim = dim
        self.heads = heads
        self.head_dim = dim // heads
        self.wq = self.add_block("wq", Linear(dim, dim, rng))
        self.wk = self.add_block("wk", Linear(dim, dim, rng))
        self.wv = self.add_block("wv", Linear(dim, dim, rng))
        self.wo = self.add_block("wo", Linear(dim, dim, rng))
        self.last_weights: np.ndarray | None = None  # [B, heads, T, T], eval introspection

    def _split(self, t: Tensor, bsz: int, t_len: int) -> Tensor:
        return transpose(reshape(t, (bsz, t_len, self.heads, self.head_dim)), (0, 2, 1, 3))

    def forward(self, x: Tensor, train: bool = False, rng=None) -> Tensor:
        bsz, t_len, _ = x.shape
        q = self._split(self.wq.forward(x), bsz, t_len)
        k = self._split(self.wk.forward(x), bsz, t_len)
        v = self._split(self.wv.forward(x), bsz, t_len)
        scores = matmul(q, transpose(k, (0, 1, 3, 2))) * (1.0 / np.sqrt(self.head_dim))
        weights = softmax(scores, axis=-1)
        self.last_weights = weights.data  # read-only introspection, never mutated
        ctx = transpose(matmul(weights, v), (0, 2, 1, 3))
        merged = reshape(ctx, (bsz, t_len, self.dim))
        return add(self.wo.forward(merged), x)
