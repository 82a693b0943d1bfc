"""Aggregation of T daily snapshots into one spatial-temporal graph.

Node layout: the T x L location copies come first (day-major, so node
``d * L + j`` is location ``j`` on window day ``d``), followed by the merged
entity nodes sorted by representative id.
"""

from __future__ import annotations

import datetime as dt
from collections import defaultdict
from dataclasses import dataclass, field, replace

import numpy as np

from .errors import ConfigurationError, CoverageError, DataError, WindowError
from .merge import merge_entities

EE, LE, LL, SELF = "EE", "LE", "LL", "SELF"
EDGE_KINDS = (EE, LE, LL, SELF)
KIND_CODE = {k: i for i, k in enumerate(EDGE_KINDS)}


@dataclass
class SpatialTemporalGraph:
    dates: list
    locations: list
    entities: list  # merged Entity objects, node order
    edges: np.ndarray  # (E, 2) undirected pairs u < v, self-loops excluded
    edge_types: list  # EE / LE / LL per undirected edge
    self_loops: bool
    remap: dict = field(default_factory=dict)
    location_embeddings: dict = field(default_factory=dict)  # (day index, loc) -> vector

    def __post_init__(self):
        n = self.num_nodes
        src, dst, kind = [], [], []
        for (u, v), t in zip(self.edges, self.edge_types):
            src += [u, v]
            dst += [v, u]
            kind += [KIND_CODE[t]] * 2
        if self.self_loops:
            src += range(n)
            dst += range(n)
            kind += [KIND_CODE[SELF]] * n
        order = np.lexsort((np.asarray(src, dtype=np.intp), np.asarray(dst, dtype=np.intp))) if src else []
        # directed message arrays: node dst[k] attends to node src[k]
        self.src = np.asarray(src, dtype=np.intp)[order] if src else np.zeros(0, np.intp)
        self.dst = np.asarray(dst, dtype=np.intp)[order] if src else np.zeros(0, np.intp)
        self.kind = np.asarray(kind, dtype=np.int8)[order] if src else np.zeros(0, np.int8)

    @property
    def T(self):
        return len(self.dates)

    @property
    def num_locations(self):
        return len(self.locations)

    @property
    def num_location_nodes(self):
        return self.T * self.num_locations

    @property
    def num_nodes(self):
        return self.num_location_nodes + len(self.entities)

    def location_node(self, day_index, loc_index):
        return day_index * self.num_locations + loc_index

    def entity_node(self, k):
        return self.num_location_nodes + k

    def is_location(self, node):
        return node < self.num_location_nodes

    def node_label(self, node):
        if self.is_location(node):
            d, j = divmod(node, self.num_locations)
            return ("location", self.locations[j], self.dates[d])
        return ("entity", self.entities[node - self.num_location_nodes].id, None)

    @property
    def location_rows(self):
        """(L, T) node indices of every location's day copies, chronological."""
        L, T = self.num_locations, self.T
        return np.arange(T * L).reshape(T, L).T.copy()

    def edge_counts(self):
        counts = {k: 0 for k in EDGE_KINDS}
        for t in self.edge_types:
            counts[t] += 1
        counts[SELF] = self.num_nodes if self.self_loops else 0
        return counts

    def neighbors(self, node):
        """(N_S, N_E): location and entity neighbors, self-loop included when enabled."""
        nbrs = self.src[self.dst == node]
        loc = sorted(int(j) for j in nbrs if self.is_location(j))
        ent = sorted(int(j) for j in nbrs if not self.is_location(j))
        return loc, ent

    def degrees(self):
        return np.bincount(self.dst, minlength=self.num_nodes)


def aggregate_window(
    snapshots,
    self_loops=True,
    merge_eps=None,
    merge_min_pts=1,
    mobility_threshold=0.0,
    drop_entity_entity_edges=False,
    drop_location_entity_edges=False,
):
    """Build the spatial-temporal graph for consecutive daily snapshots.

    Location nodes are copied per day; entities are unioned across days by
    id (after optional DBSCAN merging), and each merged entity links to the
    day copy of every location that mentioned it that day. Location-location
    edges stay within their day: adjacency pairs, plus mobility pairs whose
    window-summed flow exceeds ``mobility_threshold`` on days with positive
    flow.
    """
    snapshots = list(snapshots)
    if len(snapshots) < 1:
        raise ConfigurationError("window length must be >= 1")
    for prev, cur in zip(snapshots, snapshots[1:]):
        if cur.date - prev.date != dt.timedelta(days=1):
            raise WindowError(f"snapshots not consecutive: {prev.date} -> {cur.date}")
    locations = list(snapshots[0].locations)
    for s in snapshots[1:]:
        if sorted(s.locations) != sorted(locations):
            raise WindowError(f"location universe differs on {s.date}")
    locations = sorted(locations)
    loc_idx = {loc: j for j, loc in enumerate(locations)}
    L, T = len(locations), len(snapshots)

    union = {}
    for s in snapshots:
        for e in s.entities.values():
            if e.id in union:
                union[e.id] = replace(e, count=union[e.id].count + e.count)
            else:
                union[e.id] = e
    pooled = [union[k] for k in sorted(union)]
    if merge_eps is not None and pooled:
        merged, remap = merge_entities(pooled, merge_eps, merge_min_pts)
    else:
        merged, remap = pooled, {e.id: e.id for e in pooled}
    merged = sorted(merged, key=lambda e: e.id)
    ent_node = {e.id: L * T + k for k, e in enumerate(merged)}

    edges = {}

    def add(u, v, kind):
        if u == v:
            return
        key = (u, v) if u < v else (v, u)
        edges.setdefault(key, kind)

    flow = defaultdict(float)
    for s in snapshots:
        for src, dst, w in s.mobility:
            flow[(src, dst)] += w

    for d, s in enumerate(snapshots):
        if not drop_entity_entity_edges:
            for a, b in s.relations:
                add(ent_node[remap[a]], ent_node[remap[b]], EE)
        if not drop_location_entity_edges:
            for loc, eid in s.location_mentions:
                add(d * L + loc_idx[loc], ent_node[remap[eid]], LE)
        for a, b in s.adjacency:
            add(d * L + loc_idx[a], d * L + loc_idx[b], LL)
        for src, dst, w in s.mobility:
            if w > 0 and flow[(src, dst)] > mobility_threshold:
                add(d * L + loc_idx[src], d * L + loc_idx[dst], LL)

    keys = sorted(edges)
    loc_emb = {}
    for d, s in enumerate(snapshots):
        for loc, vec in s.location_embeddings.items():
            loc_emb[(d, loc)] = vec
    return SpatialTemporalGraph(
        dates=[s.date for s in snapshots],
        locations=locations,
        entities=merged,
        edges=np.array(keys, dtype=np.intp).reshape(-1, 2),
        edge_types=[edges[k] for k in keys],
        self_loops=self_loops,
        remap=remap,
        location_embeddings=loc_emb,
    )


@dataclass
class FeatureMatrix:
    rows: np.ndarray  # (num_nodes, d_e + d_t)
    is_location: np.ndarray  # bool per row
    row_location: np.ndarray  # location index per row, -1 for entities
    learned_embedding: np.ndarray  # bool: location row without a provided embedding
    d_e: int
    d_t: int

    @property
    def width(self):
        return self.d_e + self.d_t

    @property
    def history(self):
        """(num_location_rows, d_t) statistic block of the location rows."""
        return self.rows[self.is_location, self.d_e :]


def build_features(stg, stats, d_t, d_e=None, kind="cases"):
    """Assemble node inputs: semantic embedding followed by d_t past counts.

    A location copy on day D carries the counts of days D-d_t .. D-1, oldest
    first. Entity rows end in d_t zeros. Location rows without a provided
    embedding get zeros in the semantic part and are flagged so the model can
    add a learned embedding.
    """
    if d_e is None:
        dims = {len(e.embedding) for e in stg.entities} | {len(v) for v in stg.location_embeddings.values()}
        if len(dims) != 1:
            raise DataError("cannot infer the semantic dimension; pass d_e explicitly")
        d_e = dims.pop()
    if d_t < 0:
        raise ConfigurationError("d_t must be non-negative")
    n = stg.num_nodes
    rows = np.zeros((n, d_e + d_t))
    is_loc = np.zeros(n, dtype=bool)
    row_loc = np.full(n, -1, dtype=np.intp)
    learned = np.zeros(n, dtype=bool)
    for d, day in enumerate(stg.dates):
        for j, loc in enumerate(stg.locations):
            i = stg.location_node(d, j)
            is_loc[i] = True
            row_loc[i] = j
            emb = stg.location_embeddings.get((d, loc))
            if emb is None:
                learned[i] = True
            else:
                if len(emb) != d_e:
                    raise DataError(f"location {loc} embedding length {len(emb)} != {d_e}")
                rows[i, :d_e] = emb
            if d_t:
                try:
                    rows[i, d_e:] = stats.history(loc, day, d_t, kind)
                except CoverageError as exc:
                    raise CoverageError(f"{exc} (needed for the {day.isoformat()} copy of {loc})") from None
    for k, e in enumerate(stg.entities):
        if len(e.embedding) != d_e:
            raise DataError(f"entity {e.id} embedding length {len(e.embedding)} != {d_e}")
        rows[stg.entity_node(k), :d_e] = e.embedding
    return FeatureMatrix(rows, is_loc, row_loc, learned, d_e, d_t)
