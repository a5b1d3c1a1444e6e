"""Bidirectional LSTM with max pooling, forward and backward passes by hand.

The recurrence follows the standard formulation with gates stacked in the
order input, forget, candidate, output:

    z_t = W x_t + U h_{t-1} + b
    i_t = sigmoid(z[:m])      f_t = sigmoid(z[m:2m])
    g_t = tanh(z[2m:3m])      o_t = sigmoid(z[3m:])
    c_t = f_t c_{t-1} + i_t g_t
    h_t = o_t tanh(c_t)

One direction reads the sequence as given, the other reads it reversed, and
the per-step states are concatenated after re-aligning the reversed run, so
``states[t]`` is ``[h_fw_t ; h_bw_t]`` for the original position t.  The
sentence vector is the componentwise max over steps; its gradient flows only
to the argmax step of each component (first occurrence on ties).

Backward passes are exact backpropagation through time and return parameter
gradients plus gradients with respect to the inputs, so the layer composes
with upstream trainable projections.
"""

from __future__ import annotations

from typing import NamedTuple

import numpy as np
from scipy.special import expit

from .errors import ValidationError
from .optim import xavier_uniform

__all__ = ["BiLstm"]

PARAM_KEYS = ("w_fw", "u_fw", "b_fw", "w_bw", "u_bw", "b_bw")


class _DirCache(NamedTuple):
    x: np.ndarray   # (S, d) inputs as seen by this direction
    i: np.ndarray
    f: np.ndarray
    g: np.ndarray
    o: np.ndarray
    tc: np.ndarray  # tanh(c_t)
    c: np.ndarray
    h: np.ndarray


def _forward_dir(w, u, b, x) -> _DirCache:
    steps = x.shape[0]
    m = u.shape[1]
    i = np.empty((steps, m))
    f = np.empty((steps, m))
    g = np.empty((steps, m))
    o = np.empty((steps, m))
    c = np.empty((steps, m))
    tc = np.empty((steps, m))
    h = np.empty((steps, m))
    h_prev = np.zeros(m)
    c_prev = np.zeros(m)
    for t in range(steps):
        z = w @ x[t] + u @ h_prev + b
        i[t] = expit(z[:m])
        f[t] = expit(z[m : 2 * m])
        g[t] = np.tanh(z[2 * m : 3 * m])
        o[t] = expit(z[3 * m :])
        c[t] = f[t] * c_prev + i[t] * g[t]
        tc[t] = np.tanh(c[t])
        h[t] = o[t] * tc[t]
        h_prev = h[t]
        c_prev = c[t]
    return _DirCache(x, i, f, g, o, tc, c, h)


def _backward_dir(w, u, cache: _DirCache, dh_seq):
    steps, m = cache.h.shape
    dw = np.zeros_like(w)
    du = np.zeros_like(u)
    db = np.zeros(4 * m)
    dx = np.zeros_like(cache.x)
    dh_next = np.zeros(m)
    dc_next = np.zeros(m)
    zeros = np.zeros(m)
    for t in range(steps - 1, -1, -1):
        i, f, g, o, tc = cache.i[t], cache.f[t], cache.g[t], cache.o[t], cache.tc[t]
        c_prev = cache.c[t - 1] if t > 0 else zeros
        h_prev = cache.h[t - 1] if t > 0 else zeros
        dh = dh_seq[t] + dh_next
        do = dh * tc
        dc = dh * o * (1.0 - tc * tc) + dc_next
        di = dc * g
        df = dc * c_prev
        dg = dc * i
        dc_next = dc * f
        dz = np.concatenate([
            di * i * (1.0 - i),
            df * f * (1.0 - f),
            dg * (1.0 - g * g),
            do * o * (1.0 - o),
        ])
        dw += np.outer(dz, cache.x[t])
        du += np.outer(dz, h_prev)
        db += dz
        dx[t] = w.T @ dz
        dh_next = u.T @ dz
    return dw, du, db, dx


class BiLstm:
    """A bidirectional LSTM layer over (S, in_dim) sequences."""

    def __init__(self, in_dim: int, hidden: int, rng: np.random.Generator):
        if in_dim < 1 or hidden < 1:
            raise ValidationError(f"in_dim and hidden must be positive, got {in_dim}, {hidden}")
        self.in_dim = in_dim
        self.hidden = hidden
        self.p = {}
        for direction in ("fw", "bw"):
            b = np.zeros(4 * hidden)
            b[hidden : 2 * hidden] = 1.0  # open the forget gate at init
            self.p[f"w_{direction}"] = xavier_uniform(rng, 4 * hidden, in_dim)
            self.p[f"u_{direction}"] = xavier_uniform(rng, 4 * hidden, hidden)
            self.p[f"b_{direction}"] = b

    @property
    def out_dim(self) -> int:
        return 2 * self.hidden

    def forward(self, x):
        """Per-step states for sequence *x*: (S, 2*hidden) plus a cache."""
        x = np.asarray(x, dtype=np.float64)
        if x.ndim != 2 or x.shape[1] != self.in_dim:
            raise ValidationError(f"expected sequence of shape (S, {self.in_dim}), got {x.shape}")
        if x.shape[0] < 1:
            raise ValidationError("sequence must have at least one step")
        fw = _forward_dir(self.p["w_fw"], self.p["u_fw"], self.p["b_fw"], x)
        bw = _forward_dir(self.p["w_bw"], self.p["u_bw"], self.p["b_bw"], x[::-1])
        states = np.hstack([fw.h, bw.h[::-1]])
        return states, (fw, bw)

    def backward(self, cache, d_states):
        """Gradients for one forward() call.

        Returns (dx, grads) where dx has the input's shape and grads uses the
        same keys as ``self.p``.
        """
        fw, bw = cache
        m = self.hidden
        dw_f, du_f, db_f, dx_f = _backward_dir(self.p["w_fw"], self.p["u_fw"], fw, d_states[:, :m])
        dw_b, du_b, db_b, dx_b = _backward_dir(self.p["w_bw"], self.p["u_bw"], bw, d_states[::-1, m:])
        dx = dx_f + dx_b[::-1]
        grads = {
            "w_fw": dw_f, "u_fw": du_f, "b_fw": db_f,
            "w_bw": dw_b, "u_bw": du_b, "b_bw": db_b,
        }
        return dx, grads

    def encode(self, x):
        """Max-pooled sentence vector of shape (2*hidden,) plus a cache."""
        states, cache = self.forward(x)
        argmax = np.argmax(states, axis=0)
        vec = states[argmax, np.arange(states.shape[1])]
        return vec, (cache, argmax, states.shape[0])

    def encode_backward(self, enc_cache, d_vec):
        """Gradients for one encode() call; see :meth:`backward`."""
        cache, argmax, steps = enc_cache
        d_states = np.zeros((steps, 2 * self.hidden))
        d_states[argmax, np.arange(2 * self.hidden)] = d_vec
        return self.backward(cache, d_states)
