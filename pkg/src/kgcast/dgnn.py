"""Multi-head dynamic graph attention layer.

For each head p the layer projects inputs (``z = W_p x``), scores every
directed neighbor pair with ``LeakyReLU(w_p . [z_i || z_j])``, normalizes the
scores over each node's neighborhood, and averages the attention-weighted
neighbor projections across heads before the output nonlinearity.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import autodiff as ad
from .autodiff import Parameter, scatter_add
from .errors import ConsistencyError, EmptyNeighborhoodError
from .nn import glorot
from .window import KIND_CODE


class DgnnParams:
    """Projection matrices W_p (hidden x d_in) and scoring vectors w_p (2 hidden)."""

    def __init__(self, d_in, hidden, heads, rng, name="dgnn", activation="elu", slope=0.2):
        if heads < 1:
            raise ValueError("heads must be >= 1")
        self.heads, self.hidden, self.d_in = heads, hidden, d_in
        self.activation, self.slope = activation, slope
        self.W = Parameter(glorot(rng, (heads, hidden, d_in), fan_in=d_in, fan_out=hidden), name=f"{name}.W")
        self.w = Parameter(glorot(rng, (heads, 2 * hidden), fan_in=2 * hidden, fan_out=1), name=f"{name}.w")

    def parameters(self):
        return [self.W, self.w]


def dgnn_propagate(x, src, dst, num_nodes, params):
    """One attention propagation over directed edges ``src -> dst``.

    Returns the node outputs (num_nodes, hidden) and the normalized attention
    weights (num_edges, heads) as a plain array.
    """
    H, hid = params.heads, params.hidden
    if np.bincount(dst, minlength=num_nodes).min(initial=1) < 1:
        lonely = int(np.flatnonzero(np.bincount(dst, minlength=num_nodes) == 0)[0])
        raise EmptyNeighborhoodError(f"node {lonely} has no neighbors; enable self-loops")
    w_flat = ad.reshape(params.W, (H * hid, params.d_in))
    z = ad.reshape(ad.matmul(x, ad.transpose(w_flat)), (num_nodes, H, hid))
    w_self = ad.getitem(params.w, (slice(None), slice(0, hid)))
    w_nbr = ad.getitem(params.w, (slice(None), slice(hid, 2 * hid)))
    s_self = ad.sum(z * w_self, axis=2)  # (N, H)
    s_nbr = ad.sum(z * w_nbr, axis=2)
    e = ad.leaky_relu(ad.take(s_self, dst) + ad.take(s_nbr, src), params.slope)
    alpha = ad.segment_softmax(e, dst, num_nodes)  # (E, H)
    msg = ad.take(z, src) * ad.reshape(alpha, alpha.shape + (1,))
    agg = ad.segment_sum(msg, dst, num_nodes)  # (N, H, hid)
    out = ad.activation(ad.mean(agg, axis=1), params.activation)
    return out, alpha.data


@dataclass
class AttentionRecord:
    src: np.ndarray
    dst: np.ndarray
    kind: np.ndarray
    alpha: np.ndarray  # (E, H)
    is_location: np.ndarray  # bool per node
    stale: bool = False

    def head_average(self):
        return self.alpha.mean(axis=1)

    def node_sums(self, num_nodes=None):
        n = len(self.is_location) if num_nodes is None else num_nodes
        return scatter_add(self.dst, self.alpha, n)


def export_attention(record, edge_type="LE"):
    """Head-averaged attention on one edge type as (source, target, weight).

    For Location-Entity edges only the entity -> location direction is
    returned, i.e. how much each location copy attends to each entity.
    """
    if record.stale:
        raise ConsistencyError("attention record predates the current parameters")
    code = KIND_CODE[edge_type]
    avg = record.head_average()
    sel = record.kind == code
    if edge_type == "LE":
        sel &= record.is_location[record.dst] & ~record.is_location[record.src]
    idx = np.flatnonzero(sel)
    return [(int(record.src[k]), int(record.dst[k]), float(avg[k])) for k in idx]


def dgnn_forward(features, graph, params, training=False, bn=None, dropout_p=0.0, rng=None):
    """Run the layer on one graph; returns (x', AttentionRecord).

    ``features`` is a FeatureMatrix or raw array. Batch norm and dropout, when
    given, apply to the location rows only, since those are the rows the
    temporal encoder consumes.
    """
    from .nn import dropout

    x = getattr(features, "rows", features)
    out, alpha = dgnn_propagate(ad.as_tensor(x), graph.src, graph.dst, graph.num_nodes, params)
    is_loc = np.array([graph.is_location(i) for i in range(graph.num_nodes)])
    if bn is not None or dropout_p:
        rows = np.flatnonzero(is_loc)
        loc_out = ad.take(out, rows)
        if bn is not None:
            loc_out = bn(loc_out, training=training)
        loc_out = dropout(loc_out, dropout_p, rng, training)
        out = ad.segment_sum(loc_out, rows, graph.num_nodes) + ad.mul(out, (~is_loc)[:, None].astype(float))
    record = AttentionRecord(graph.src, graph.dst, graph.kind, alpha, is_loc)
    return out, record
