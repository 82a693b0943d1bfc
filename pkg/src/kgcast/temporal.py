"""Attentive bidirectional GRU encoder and the feed-forward prediction head."""

from __future__ import annotations

import numpy as np

from . import autodiff as ad
from .autodiff import Parameter
from .errors import DimensionError
from .nn import BatchNorm, dropout, glorot

GATE_NAMES = ("W_z", "W_r", "W_h", "U_z", "U_r", "U_h", "b_z", "b_r", "b_h")


class GruParams:
    """Update, reset and candidate weights for one direction."""

    def __init__(self, d_in, hidden, rng, name):
        self.d_in, self.hidden = d_in, hidden
        self.weights = {}
        for g in GATE_NAMES:
            if g.startswith("W"):
                data = glorot(rng, (d_in, hidden))
            elif g.startswith("U"):
                data = glorot(rng, (hidden, hidden))
            else:
                data = np.zeros(hidden)
            self.weights[g] = Parameter(data, name=f"{name}.{g}")

    def parameters(self):
        return [self.weights[g] for g in GATE_NAMES]


def gru_cell(x, h_prev, params):
    """h' = (1-z)*h + z*tanh(W_h x + U_h (r*h) + b_h), gates by sigmoid."""
    x, h_prev = ad.as_tensor(x), ad.as_tensor(h_prev)
    squeeze = x.ndim == 1
    if squeeze:
        x, h_prev = ad.reshape(x, (1, -1)), ad.reshape(h_prev, (1, -1))
    if x.shape[1] != params.d_in or h_prev.shape[1] != params.hidden:
        raise DimensionError(
            f"gru_cell expects input width {params.d_in} and hidden {params.hidden}, "
            f"got {x.shape[1]} and {h_prev.shape[1]}"
        )
    h = ad.gru_cell(x, h_prev, *params.parameters())
    return ad.reshape(h, (params.hidden,)) if squeeze else h


def bidirectional(steps, fwd, bwd, combine="concat"):
    """Run both directions over a list of (R, d_in) inputs; zero initial states.

    Returns one combined (R, width) state per step, the backward-direction
    state first when concatenating.
    """
    T = len(steps)
    if T == 0:
        raise DimensionError("empty sequence")
    R = steps[0].shape[0]
    h = ad.Tensor(np.zeros((R, fwd.hidden)))
    forward_states = []
    for t in range(T):
        h = gru_cell(steps[t], h, fwd)
        forward_states.append(h)
    h = ad.Tensor(np.zeros((R, bwd.hidden)))
    backward_states = [None] * T
    for t in reversed(range(T)):
        h = gru_cell(steps[t], h, bwd)
        backward_states[t] = h
    if combine == "concat":
        return [ad.concat([b, f], axis=1) for b, f in zip(backward_states, forward_states)]
    return [b + f for b, f in zip(backward_states, forward_states)]


def attention_pool(states, u):
    """beta = softmax_t(u . h_t); v = sum_t beta_t h_t. Returns (v, beta array)."""
    H = ad.stack(states, axis=1)  # (R, T, C)
    scores = ad.sum(H * u, axis=2)  # (R, T)
    beta = ad.softmax(scores, axis=1)
    v = ad.sum(H * ad.reshape(beta, beta.shape + (1,)), axis=1)
    return v, beta.data


class PoolingParams:
    """Context vector u and the two-layer FFN ending in one output."""

    def __init__(self, width, ffn_in, ffn_hidden, rng, name="head", batch_norm=True, momentum=0.9):
        self.u = Parameter(rng.normal(0.0, 0.1, size=width), name=f"{name}.u")
        self.W1 = Parameter(glorot(rng, (ffn_in, ffn_hidden)), name=f"{name}.W1")
        self.b1 = Parameter(np.zeros(ffn_hidden), name=f"{name}.b1")
        self.W2 = Parameter(glorot(rng, (ffn_hidden, 1)), name=f"{name}.W2")
        self.b2 = Parameter(np.zeros(1), name=f"{name}.b2")
        self.bn = BatchNorm(ffn_hidden, f"{name}.bn", momentum=momentum) if batch_norm else None

    def parameters(self):
        out = [self.u, self.W1, self.b1, self.W2, self.b2]
        if self.bn is not None:
            out += self.bn.parameters()
        return out


def encode_location(sequence, fwd, bwd, pool, combine="concat"):
    """Encode one location's T-step sequence; returns (v, beta)."""
    steps = [ad.reshape(ad.as_tensor(x), (1, -1)) for x in sequence]
    if not steps:
        raise DimensionError("empty sequence")
    states = bidirectional(steps, fwd, bwd, combine)
    v, beta = attention_pool(states, pool.u)
    return ad.reshape(v, (v.shape[1],)), beta[0]


def predict_head(v, pool, training=False, activation="relu", dropout_p=0.0, rng=None):
    """Two affine layers with a nonlinearity, BN and dropout between them.

    Returns the unclamped output of shape (R,); callers clamp at inference.
    """
    v = ad.as_tensor(v)
    squeeze = v.ndim == 1
    if squeeze:
        v = ad.reshape(v, (1, -1))
    if v.shape[1] != pool.W1.shape[0]:
        raise DimensionError(f"head expects width {pool.W1.shape[0]}, got {v.shape[1]}")
    hidden = ad.activation(ad.matmul(v, pool.W1) + pool.b1, activation)
    if pool.bn is not None:
        hidden = pool.bn(hidden, training=training)
    hidden = dropout(hidden, dropout_p, rng, training)
    out = ad.reshape(ad.matmul(hidden, pool.W2) + pool.b2, (v.shape[0],))
    return ad.reshape(out, ()) if squeeze else out


def clamp_nonnegative(values):
    return np.maximum(np.asarray(values, dtype=np.float64), 0.0)
