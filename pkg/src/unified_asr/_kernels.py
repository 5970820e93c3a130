"""LSTM recurrence kernels.

Only the sequential part of an LSTM lives here: the input projection
``x @ Wx + b`` is one big matmul done by the caller, and the weight
gradients are reductions the caller does with ``tensordot``.  What remains
is a loop over time (or frequency) steps that numpy cannot vectorise.

Two implementations exist.  The numba one is used when numba imports and
``UASR_KERNELS`` is not set to ``numpy``; the pure-numpy one is the
fallback and the reference the numba kernels are tested against.

Gate layout in the last axis is ``[input, forget, cell, output]``.
"""

import math
import os

import numpy as np

try:
    from numba import njit

    HAVE_NUMBA = True
except ImportError:  # pragma: no cover - numba is a hard dependency in CI
    HAVE_NUMBA = False

BACKEND = "numba" if HAVE_NUMBA and os.environ.get("UASR_KERNELS", "numba") != "numpy" else "numpy"


def _sigmoid(z):
    return 0.5 * (1.0 + np.tanh(0.5 * z))


def lstm_forward_numpy(zx, wh, h0, c0, reverse):
    """Run the recurrence over axis 0 of ``zx`` (S, B, 4H).

    Returns hidden states, cell states and post-activation gates, all
    indexed by step position (not processing order).
    """
    n_steps, batch, n_gates = zx.shape
    hid = n_gates // 4
    hs = np.empty((n_steps, batch, hid))
    cs = np.empty((n_steps, batch, hid))
    acts = np.empty((n_steps, batch, n_gates))
    h, c = h0, c0
    order = range(n_steps - 1, -1, -1) if reverse else range(n_steps)
    for s in order:
        z = zx[s] + h @ wh
        a = acts[s]
        a[:, : 2 * hid] = _sigmoid(z[:, : 2 * hid])
        a[:, 2 * hid : 3 * hid] = np.tanh(z[:, 2 * hid : 3 * hid])
        a[:, 3 * hid :] = _sigmoid(z[:, 3 * hid :])
        c = a[:, hid : 2 * hid] * c + a[:, :hid] * a[:, 2 * hid : 3 * hid]
        h = a[:, 3 * hid :] * np.tanh(c)
        cs[s] = c
        hs[s] = h
    return hs, cs, acts


def lstm_backward_numpy(dh_seq, wh, acts, cs, c0, reverse):
    """Backpropagate through the recurrence.

    ``dh_seq`` is the loss gradient w.r.t. every emitted hidden state.
    Returns the pre-activation gradients ``dz`` (S, B, 4H) plus the
    gradients w.r.t. the initial hidden and cell state.
    """
    n_steps, batch, hid = dh_seq.shape
    dz = np.empty((n_steps, batch, 4 * hid))
    dh_next = np.zeros((batch, hid))
    dc_next = np.zeros((batch, hid))
    order = range(n_steps) if reverse else range(n_steps - 1, -1, -1)
    wh_t = wh.T
    for s in order:
        prev = s + 1 if reverse else s - 1
        c_prev = c0 if (prev < 0 or prev >= n_steps) else cs[prev]
        a = acts[s]
        i = a[:, :hid]
        f = a[:, hid : 2 * hid]
        g = a[:, 2 * hid : 3 * hid]
        o = a[:, 3 * hid :]
        tc = np.tanh(cs[s])
        dh = dh_seq[s] + dh_next
        dc = dh * o * (1.0 - tc * tc) + dc_next
        d = dz[s]
        d[:, :hid] = dc * g * i * (1.0 - i)
        d[:, hid : 2 * hid] = dc * c_prev * f * (1.0 - f)
        d[:, 2 * hid : 3 * hid] = dc * i * (1.0 - g * g)
        d[:, 3 * hid :] = dh * tc * o * (1.0 - o)
        dc_next = dc * f
        dh_next = d @ wh_t
    return dz, dh_next, dc_next


if HAVE_NUMBA:

    # scalar libm tanh is ~4x slower than exp here; build both gates from exp
    @njit(cache=True)
    def _sig(x):
        return 1.0 / (1.0 + math.exp(-x))

    @njit(cache=True)
    def _tanh(x):
        return 2.0 / (1.0 + math.exp(-2.0 * x)) - 1.0

    @njit(cache=True)
    def lstm_forward_numba(zx, wh, h0, c0, reverse):
        n_steps, batch, n_gates = zx.shape
        hid = n_gates // 4
        hs = np.empty((n_steps, batch, hid))
        cs = np.empty((n_steps, batch, hid))
        acts = np.empty((n_steps, batch, n_gates))
        h = h0.copy()
        c = c0.copy()
        for step in range(n_steps):
            s = n_steps - 1 - step if reverse else step
            z = np.dot(h, wh)
            for b in range(batch):
                for j in range(hid):
                    ig = _sig(zx[s, b, j] + z[b, j])
                    fg = _sig(zx[s, b, hid + j] + z[b, hid + j])
                    gg = _tanh(zx[s, b, 2 * hid + j] + z[b, 2 * hid + j])
                    og = _sig(zx[s, b, 3 * hid + j] + z[b, 3 * hid + j])
                    cn = fg * c[b, j] + ig * gg
                    hn = og * _tanh(cn)
                    acts[s, b, j] = ig
                    acts[s, b, hid + j] = fg
                    acts[s, b, 2 * hid + j] = gg
                    acts[s, b, 3 * hid + j] = og
                    c[b, j] = cn
                    h[b, j] = hn
                    cs[s, b, j] = cn
                    hs[s, b, j] = hn
        return hs, cs, acts

    @njit(cache=True)
    def lstm_backward_numba(dh_seq, wh, acts, cs, c0, reverse):
        n_steps, batch, hid = dh_seq.shape
        dz = np.empty((n_steps, batch, 4 * hid))
        dh_next = np.zeros((batch, hid))
        dc_next = np.zeros((batch, hid))
        wh_t = np.ascontiguousarray(wh.T)
        d = np.empty((batch, 4 * hid))
        for step in range(n_steps):
            s = step if reverse else n_steps - 1 - step
            prev = s + 1 if reverse else s - 1
            first = prev < 0 or prev >= n_steps
            for b in range(batch):
                for j in range(hid):
                    ig = acts[s, b, j]
                    fg = acts[s, b, hid + j]
                    gg = acts[s, b, 2 * hid + j]
                    og = acts[s, b, 3 * hid + j]
                    cp = c0[b, j] if first else cs[prev, b, j]
                    tc = _tanh(cs[s, b, j])
                    dh = dh_seq[s, b, j] + dh_next[b, j]
                    dc = dh * og * (1.0 - tc * tc) + dc_next[b, j]
                    d[b, j] = dc * gg * ig * (1.0 - ig)
                    d[b, hid + j] = dc * cp * fg * (1.0 - fg)
                    d[b, 2 * hid + j] = dc * ig * (1.0 - gg * gg)
                    d[b, 3 * hid + j] = dh * tc * og * (1.0 - og)
                    dc_next[b, j] = dc * fg
            dz[s] = d
            dh_next = np.dot(d, wh_t)
        return dz, dh_next, dc_next


def lstm_forward(zx, wh, h0, c0, reverse=False):
    zx = np.ascontiguousarray(zx, dtype=np.float64)
    if BACKEND == "numba":
        return lstm_forward_numba(zx, np.ascontiguousarray(wh), np.ascontiguousarray(h0), np.ascontiguousarray(c0), reverse)
    return lstm_forward_numpy(zx, wh, h0, c0, reverse)


def lstm_backward(dh_seq, wh, acts, cs, c0, reverse=False):
    dh_seq = np.ascontiguousarray(dh_seq, dtype=np.float64)
    if BACKEND == "numba":
        return lstm_backward_numba(dh_seq, np.ascontiguousarray(wh), acts, cs, np.ascontiguousarray(c0), reverse)
    return lstm_backward_numpy(dh_seq, wh, acts, cs, c0, reverse)
