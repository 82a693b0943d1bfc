"""Regularizers and parameter initialization."""

from __future__ import annotations

import numpy as np

from . import autodiff as ad
from .autodiff import Parameter, Tensor
from .errors import ConfigurationError


def dropout(x, p, rng=None, training=False):
    """Inverted dropout: zero with probability ``p`` and rescale survivors.

    Identity in eval mode or when ``p == 0``.
    """
    if not 0.0 <= p < 1.0:
        raise ConfigurationError(f"dropout probability must lie in [0, 1), got {p}")
    x = ad.as_tensor(x)
    if not training or p == 0.0:
        return x
    if rng is None:
        raise ConfigurationError("train-mode dropout needs a random generator")
    keep = (rng.random(x.shape) >= p) / (1.0 - p)
    return ad.mul(x, keep)


class BatchNorm:
    """Per-feature batch normalization over the rows of a 2-D input.

    A single-row batch in train mode falls back to the running statistics,
    which turns the layer into a per-feature affine map.
    """

    def __init__(self, width, name, momentum=0.9, eps=1e-5):
        self.gamma = Parameter(np.ones(width), name=f"{name}.gamma")
        self.beta = Parameter(np.zeros(width), name=f"{name}.beta")
        self.running_mean = np.zeros(width)
        self.running_var = np.ones(width)
        self.momentum = momentum
        self.eps = eps
        self.name = name

    def parameters(self):
        return [self.gamma, self.beta]

    def buffers(self):
        return {
            f"{self.name}.running_mean": self.running_mean,
            f"{self.name}.running_var": self.running_var,
        }

    def __call__(self, x, training=False):
        x = ad.as_tensor(x)
        gamma, beta = self.gamma, self.beta
        use_batch = training and x.shape[0] > 1
        if use_batch:
            mu = x.data.mean(axis=0)
            var = x.data.var(axis=0)
            self.running_mean *= self.momentum
            self.running_mean += (1.0 - self.momentum) * mu
            self.running_var *= self.momentum
            self.running_var += (1.0 - self.momentum) * var
        else:
            mu, var = self.running_mean.copy(), self.running_var.copy()
        inv_std = 1.0 / np.sqrt(var + self.eps)
        xhat = (x.data - mu) * inv_std
        out = gamma.data * xhat + beta.data
        n = x.shape[0]

        def bw(g):
            dxhat = g * gamma.data
            if use_batch:
                dx = inv_std / n * (
                    n * dxhat - dxhat.sum(axis=0) - xhat * (dxhat * xhat).sum(axis=0)
                )
            else:
                dx = dxhat * inv_std
            return dx, (g * xhat).sum(axis=0), g.sum(axis=0)

        return ad._record(out, (x, gamma, beta), bw)


def glorot(rng, shape, fan_in=None, fan_out=None):
    fan_in = shape[-2] if fan_in is None else fan_in
    fan_out = shape[-1] if fan_out is None else fan_out
    limit = np.sqrt(6.0 / (fan_in + fan_out))
    return rng.uniform(-limit, limit, size=shape)


__all__ = ["BatchNorm", "Parameter", "Tensor", "dropout", "glorot"]
