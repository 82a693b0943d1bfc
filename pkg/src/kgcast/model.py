"""The full forecaster: graph attention, attentive Bi-GRU and FFN head."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import autodiff as ad
from .autodiff import Parameter
from .dgnn import AttentionRecord, DgnnParams, dgnn_propagate
from .nn import BatchNorm, dropout
from .temporal import GruParams, PoolingParams, attention_pool, bidirectional, predict_head


@dataclass
class Batch:
    """Several windows stacked as one disjoint graph."""

    X: np.ndarray  # (N, d_e + d_t), already normalized
    learned_rows: np.ndarray  # rows that receive a learned location embedding
    learned_locs: np.ndarray  # location index for each of those rows
    src: np.ndarray
    dst: np.ndarray
    kind: np.ndarray
    is_location: np.ndarray
    loc_rows: np.ndarray  # (R, T) node index per (example, location) and day
    history: np.ndarray  # (R, T, d_t) normalized statistics per location copy
    y: np.ndarray  # (R,) normalized targets (nan when unknown)
    row_example: np.ndarray  # example index per R row
    row_location: np.ndarray  # location index per R row
    node_offsets: np.ndarray  # first node of each example

    @property
    def num_nodes(self):
        return self.X.shape[0]

    @property
    def R(self):
        return self.loc_rows.shape[0]


class Normalizer:
    """Per-location affine scaling of counts (identity when disabled)."""

    def __init__(self, mean, std):
        self.mean = np.asarray(mean, dtype=np.float64)
        self.std = np.asarray(std, dtype=np.float64)

    @classmethod
    def identity(cls, num_locations):
        return cls(np.zeros(num_locations), np.ones(num_locations))

    def forward(self, values, loc):
        return (values - self.mean[loc]) / self.std[loc]

    def inverse(self, values, loc):
        return values * self.std[loc] + self.mean[loc]


def collate(examples, normalizer, with_targets=True):
    X, learned_rows, learned_locs = [], [], []
    src, dst, kind, is_loc = [], [], [], []
    loc_rows, history, ys, row_ex, row_loc, offsets = [], [], [], [], [], []
    offset = 0
    for k, ex in enumerate(examples):
        f, g = ex.features, ex.graph
        rows = f.rows.copy()
        loc_mask = f.is_location
        if f.d_t:
            locs = f.row_location[loc_mask]
            rows[loc_mask, f.d_e :] = normalizer.forward(rows[loc_mask, f.d_e :], locs[:, None])
        X.append(rows)
        lr = np.flatnonzero(f.learned_embedding)
        learned_rows.append(lr + offset)
        learned_locs.append(f.row_location[lr])
        src.append(g.src + offset)
        dst.append(g.dst + offset)
        kind.append(g.kind)
        is_loc.append(loc_mask)
        L = g.num_locations
        loc_rows.append(g.location_rows + offset)
        hist = ex.history
        if hist.shape[-1]:
            hist = normalizer.forward(hist, np.arange(L)[:, None, None])
        history.append(hist)
        if with_targets:
            ys.append(normalizer.forward(ex.target, np.arange(L)))
        else:
            ys.append(np.full(L, np.nan))
        row_ex.append(np.full(L, k))
        row_loc.append(np.arange(L))
        offsets.append(offset)
        offset += g.num_nodes
    return Batch(
        X=np.concatenate(X),
        learned_rows=np.concatenate(learned_rows).astype(np.intp),
        learned_locs=np.concatenate(learned_locs).astype(np.intp),
        src=np.concatenate(src),
        dst=np.concatenate(dst),
        kind=np.concatenate(kind),
        is_location=np.concatenate(is_loc),
        loc_rows=np.concatenate(loc_rows),
        history=np.concatenate(history),
        y=np.concatenate(ys),
        row_example=np.concatenate(row_ex),
        row_location=np.concatenate(row_loc),
        node_offsets=np.array(offsets, dtype=np.intp),
    )


class ForecastModel:
    """All learnable tensors plus batch-norm state for one forecasting task."""

    def __init__(self, config, locations, rng):
        cfg = self.config = config
        self.locations = list(locations)
        L = len(self.locations)
        d_in = cfg.d_e + cfg.d_t
        self.loc_embed = Parameter(rng.normal(0.0, 0.01, size=(L, cfg.d_e)), name="location_embedding")
        self.dgnn = []
        width = d_in
        for k in range(cfg.dgnn_layers):
            self.dgnn.append(
                DgnnParams(width, cfg.dgnn_hidden, cfg.heads, rng, name=f"dgnn.{k}",
                           activation=cfg.dgnn_activation, slope=cfg.leaky_slope)
            )
            width = cfg.dgnn_hidden
        self.dgnn_bn = BatchNorm(cfg.dgnn_hidden, "dgnn.bn", momentum=cfg.bn_momentum) if cfg.batch_norm else None
        seq_width = cfg.d_t if cfg.bypass_dgnn else cfg.dgnn_hidden
        self.gru_fwd = GruParams(seq_width, cfg.rnn_hidden, rng, "gru.fwd")
        self.gru_bwd = GruParams(seq_width, cfg.rnn_hidden, rng, "gru.bwd")
        ffn_in = seq_width if cfg.mean_pool_instead_of_birnn else cfg.rnn_output_width
        self.pool = PoolingParams(cfg.rnn_output_width, ffn_in, cfg.rnn_output_width, rng,
                                  batch_norm=cfg.batch_norm, momentum=cfg.bn_momentum)
        self.normalizer = Normalizer.identity(L)
        self.last_record = None

    # -------------------------------------------------------------- state

    def parameters(self):
        params = [self.loc_embed]
        for layer in self.dgnn:
            params += layer.parameters()
        if self.dgnn_bn is not None:
            params += self.dgnn_bn.parameters()
        params += self.gru_fwd.parameters() + self.gru_bwd.parameters() + self.pool.parameters()
        return params

    def buffers(self):
        out = {}
        for bn in (self.dgnn_bn, self.pool.bn):
            if bn is not None:
                out.update(bn.buffers())
        out["normalizer.mean"] = self.normalizer.mean
        out["normalizer.std"] = self.normalizer.std
        return out

    def state_dict(self):
        state = {p.name: p.data.copy() for p in self.parameters()}
        state.update({k: v.copy() for k, v in self.buffers().items()})
        return state

    def load_state_dict(self, state):
        for p in self.parameters():
            p.data[...] = state[p.name]
        for bn in (self.dgnn_bn, self.pool.bn):
            if bn is not None:
                bn.running_mean[...] = state[f"{bn.name}.running_mean"]
                bn.running_var[...] = state[f"{bn.name}.running_var"]
        self.normalizer = Normalizer(state["normalizer.mean"].copy(), state["normalizer.std"].copy())
        self.mark_stale()

    def expected_shapes(self):
        return {k: v.shape for k, v in self.state_dict().items()}

    def mark_stale(self):
        if self.last_record is not None:
            self.last_record.stale = True

    # ------------------------------------------------------------ forward

    def forward(self, batch, training=False, rng=None):
        """Returns (raw normalized predictions (R,), attention record or None, beta)."""
        cfg = self.config
        T = batch.loc_rows.shape[1]
        R = batch.R
        record = None
        if cfg.bypass_dgnn:
            seq = [ad.Tensor(batch.history[:, t, :]) for t in range(T)]
        else:
            N = batch.num_nodes
            x = ad.Tensor(batch.X)
            if batch.learned_rows.size:
                emb = ad.take(self.loc_embed, batch.learned_locs)
                if cfg.d_t:
                    emb = ad.concat([emb, np.zeros((len(batch.learned_rows), cfg.d_t))], axis=1)
                x = x + ad.segment_sum(emb, batch.learned_rows, N)
            h = x
            alpha = None
            for layer in self.dgnn:
                h, alpha = dgnn_propagate(h, batch.src, batch.dst, N, layer)
            record = AttentionRecord(batch.src, batch.dst, batch.kind, alpha, batch.is_location)
            loc = ad.take(h, batch.loc_rows.T.reshape(-1))  # day-major rows
            if self.dgnn_bn is not None:
                loc = self.dgnn_bn(loc, training=training)
            loc = dropout(loc, cfg.dropout, rng, training)
            loc = ad.reshape(loc, (T, R, cfg.dgnn_hidden))
            seq = [ad.getitem(loc, t) for t in range(T)]
        if cfg.mean_pool_instead_of_birnn:
            v = ad.mean(ad.stack(seq, axis=1), axis=1)
            beta = np.full((R, T), 1.0 / T)
        else:
            states = bidirectional(seq, self.gru_fwd, self.gru_bwd, cfg.combine)
            v, beta = attention_pool(states, self.pool.u)
        out = predict_head(v, self.pool, training, cfg.ffn_activation, cfg.dropout, rng)
        if record is not None:
            self.mark_stale()
            self.last_record = record
        return out, record, beta

    def predict(self, batch):
        """Inference: de-normalized, clamped at zero. Returns (pred (R,), record)."""
        with ad.no_grad():
            out, record, _ = self.forward(batch, training=False)
        raw = self.normalizer.inverse(out.data, batch.row_location)
        return np.maximum(raw, 0.0), record
