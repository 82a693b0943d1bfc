"""Near-duplicate entity merging with DBSCAN."""

from __future__ import annotations

from collections import deque
from dataclasses import replace

import numpy as np

from .errors import ConfigurationError, DataError

NOISE = -1


def dbscan(points, eps, min_pts=1):
    """Label points by density-based clustering under Euclidean distance.

    A point is core when at least ``min_pts`` points (itself included) lie
    within distance ``eps``. Clusters are numbered in discovery order while
    scanning points by index; border points join the first cluster that
    reaches them. Noise is labelled -1.
    """
    if eps <= 0:
        raise ConfigurationError(f"eps must be positive, got {eps}")
    if min_pts < 1:
        raise ConfigurationError(f"min_pts must be >= 1, got {min_pts}")
    pts = np.asarray(points, dtype=np.float64)
    if pts.ndim != 2:
        raise DataError(f"expected a 2-D point array, got shape {pts.shape}")
    n = len(pts)
    if not np.isfinite(pts).all():
        raise DataError("non-finite embedding")
    labels = np.full(n, NOISE, dtype=np.int64)
    if n == 0:
        return labels
    sq = (pts * pts).sum(axis=1)
    d2 = np.maximum(sq[:, None] + sq[None, :] - 2.0 * pts @ pts.T, 0.0)
    # exact recomputation near the threshold avoids Gram-matrix rounding flips
    close = d2 <= eps * eps * (1 + 1e-9) + 1e-12
    near_edge = close & (np.abs(d2 - eps * eps) <= 1e-7 * max(1.0, eps * eps))
    for i, j in zip(*np.nonzero(near_edge)):
        close[i, j] = np.linalg.norm(pts[i] - pts[j]) <= eps
    neighbors = [np.flatnonzero(row) for row in close]
    core = np.array([len(nb) >= min_pts for nb in neighbors])

    visited = np.zeros(n, dtype=bool)
    cluster = 0
    for i in range(n):
        if visited[i] or not core[i]:
            continue
        queue = deque([i])
        visited[i] = True
        labels[i] = cluster
        while queue:
            p = queue.popleft()
            if not core[p]:
                continue
            for q in neighbors[p]:
                if labels[q] == NOISE:
                    labels[q] = cluster
                if not visited[q]:
                    visited[q] = True
                    queue.append(q)
        cluster += 1
    return labels


def merge_entities(entities, eps, min_pts=1):
    """Collapse semantically near-duplicate entities onto cluster heads.

    The head of each cluster is the member with the highest mention count
    (ties: smallest id). The merged node keeps the head's id, name, type and
    embedding, and its count is the cluster total. Noise points stay as
    singletons.

    Returns ``(merged, remap)`` where ``remap`` maps every input id to its
    representative id. Output order follows the first appearance of each
    representative in the input.
    """
    entities = list(entities)
    if not entities:
        return [], {}
    dims = {len(e.embedding) for e in entities}
    if len(dims) != 1:
        raise DataError(f"embedding lengths differ: {sorted(dims)}")
    labels = dbscan(np.stack([e.embedding for e in entities]), eps, min_pts)

    groups = {}
    for k, (e, lab) in enumerate(zip(entities, labels)):
        key = ("c", int(lab)) if lab != NOISE else ("n", k)
        groups.setdefault(key, []).append(e)

    remap, merged, order = {}, {}, {}
    for k, e in enumerate(entities):
        key = ("c", int(labels[k])) if labels[k] != NOISE else ("n", k)
        members = groups[key]
        head = min(members, key=lambda m: (-m.count, m.id))
        remap[e.id] = head.id
        if head.id not in merged:
            merged[head.id] = replace(head, count=int(sum(m.count for m in members)))
            order[head.id] = k
    return [merged[i] for i in sorted(merged, key=order.get)], remap
