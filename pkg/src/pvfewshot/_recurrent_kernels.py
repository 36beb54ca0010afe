"""Inner time loops of the recurrent layers.

Each kernel fills preallocated stash arrays in place; all are pure
float64 array math, so the compiled and plain-numpy versions agree to
the usual ulp-level libm differences. Compilation is optional: without
numba the module falls back to the identical numpy implementations.

Layout notes: every array is time-major ([T, B, ...], contiguous per
step); LSTM gates are ordered (i, f, o, g) so the sigmoid block is one
contiguous slab, GRU gates (z, r, n) likewise.
"""

from __future__ import annotations

import numpy as np

try:
    from numba import njit

    HAVE_NUMBA = True
except ImportError:  # pragma: no cover - environment without numba
    HAVE_NUMBA = False

    def njit(*args, **kwargs):
        if args and callable(args[0]):
            return args[0]

        def wrap(fn):
            return fn

        return wrap


@njit(cache=True)
def rnn_forward(pre, u, hs):
    t_len, bsz, hidden = pre.shape
    h = np.zeros((bsz, hidden))
    for t in range(t_len):
        hs[t] = np.tanh(pre[t] + np.dot(h, u))
        h = hs[t]


@njit(cache=True)
def rnn_backward(g_out, u_t, hs, acts):
    t_len, bsz, hidden = acts.shape
    carry = np.zeros((bsz, hidden))
    for t in range(t_len - 1, -1, -1):
        acts[t] = (g_out[t] + carry) * (1.0 - hs[t] * hs[t])
        carry = np.dot(acts[t], u_t)


@njit(cache=True)
def lstm_forward(pre, u, hs, gates, cs, tcs):
    t_len, bsz, h4 = pre.shape
    hidden = h4 // 4
    h3 = 3 * hidden
    h = np.zeros((bsz, hidden))
    c = np.zeros((bsz, hidden))
    for t in range(t_len):
        s = pre[t] + np.dot(h, u)
        g = gates[t]
        g[:, :h3] = 1.0 / (1.0 + np.exp(-s[:, :h3]))
        g[:, h3:] = np.tanh(s[:, h3:])
        c = g[:, hidden:2 * hidden] * c + g[:, :hidden] * g[:, h3:]
        tc = np.tanh(c)
        h = g[:, 2 * hidden:h3] * tc
        cs[t] = c
        tcs[t] = tc
        hs[t] = h


@njit(cache=True)
def lstm_backward(g_out, u_t, gates, cs, tcs, acts):
    t_len, bsz, h4 = acts.shape
    hidden = h4 // 4
    h3 = 3 * hidden
    dh_next = np.zeros((bsz, hidden))
    dc_next = np.zeros((bsz, hidden))
    for t in range(t_len - 1, -1, -1):
        g = gates[t]
        a = acts[t]
        tc = tcs[t]
        dh = g_out[t] + dh_next
        dc = dh * g[:, 2 * hidden:h3] * (1.0 - tc * tc) + dc_next
        a[:, :hidden] = dc * g[:, h3:]
        if t > 0:
            a[:, hidden:2 * hidden] = dc * cs[t - 1]
        else:
            a[:, hidden:2 * hidden] = 0.0
        a[:, 2 * hidden:h3] = dh * tc
        a[:, h3:] = dc * g[:, :hidden]
        a[:, :h3] *= g[:, :h3] * (1.0 - g[:, :h3])
        a[:, h3:] *= 1.0 - g[:, h3:] * g[:, h3:]
        dh_next = np.dot(a, u_t)
        dc_next = dc * g[:, hidden:2 * hidden]


@njit(cache=True)
def gru_forward(pre, u_zr, u_n, hs, gates, rh):
    t_len, bsz, h3 = pre.shape
    hidden = h3 // 3
    h2 = 2 * hidden
    h = np.zeros((bsz, hidden))
    for t in range(t_len):
        g = gates[t]
        g[:, :h2] = 1.0 / (1.0 + np.exp(-(pre[t, :, :h2] + np.dot(h, u_zr))))
        rh[t] = g[:, hidden:h2] * h
        g[:, h2:] = np.tanh(pre[t, :, h2:] + np.dot(rh[t], u_n))
        h = (1.0 - g[:, :hidden]) * g[:, h2:] + g[:, :hidden] * h
        hs[t] = h


@njit(cache=True)
def gru_backward(g_out, u_zr_t, u_n_t, gates, hs, acts):
    t_len, bsz, h3 = acts.shape
    hidden = h3 // 3
    h2 = 2 * hidden
    carry = np.zeros((bsz, hidden))
    zeros = np.zeros((bsz, hidden))
    for t in range(t_len - 1, -1, -1):
        g = gates[t]
        a = acts[t]
        h_prev = hs[t - 1] if t > 0 else zeros
        dh = g_out[t] + carry
        a[:, h2:] = dh * (1.0 - g[:, :hidden]) * (1.0 - g[:, h2:] * g[:, h2:])
        drh = np.dot(np.ascontiguousarray(a[:, h2:]), u_n_t)
        a[:, :hidden] = dh * (h_prev - g[:, h2:])
        a[:, hidden:h2] = drh * h_prev
        a[:, :h2] *= g[:, :h2] * (1.0 - g[:, :h2])
        carry = (dh * g[:, :hidden] + drh * g[:, hidden:h2]
                 + np.dot(np.ascontiguousarray(a[:, :h2]), u_zr_t))
