"""Attention-based risk factor ranking.

For each location the dates with the largest confirmed counts form a high
set; an entity's risk score at that location is its mean head-averaged
Location-Entity attention over the high-set inferences in which the edge
exists.
"""

from __future__ import annotations

import csv
import datetime as dt
import math
from collections import defaultdict
from dataclasses import dataclass, field

from .dgnn import export_attention
from .errors import ConfigurationError, CoverageError

DAY = dt.timedelta(days=1)
RISK_HEADER = ["location", "rank", "entity", "entity_type", "risk_score"]


def build_high_set(counts_by_date, fraction=0.2):
    """Top ceil(fraction * N) dates by count, descending; ties go to the later date."""
    items = list(counts_by_date.items()) if isinstance(counts_by_date, dict) else list(counts_by_date)
    if not items:
        raise CoverageError("no statistics to build a high set from")
    size = math.ceil(fraction * len(items))
    ranked = sorted(items, key=lambda kv: (kv[1], kv[0]), reverse=True)
    return [d for d, _ in ranked[:size]]


def location_entity_weights(record, graph, offset=0):
    """{(location, entity id): weight} for one window, from an attention record.

    A merged entity can attach to several day copies of a location; its
    weights across those copies are averaged.
    """
    n = graph.num_nodes
    acc = defaultdict(list)
    for s, d, w in export_attention(record, "LE"):
        s, d = s - offset, d - offset
        if not (0 <= d < n and 0 <= s < n):
            continue
        _, loc, _ = graph.node_label(d)
        _, eid, _ = graph.node_label(s)
        acc[(loc, eid)].append(w)
    return {k: sum(v) / len(v) for k, v in acc.items()}


@dataclass
class RiskScoreTable:
    scores: dict = field(default_factory=dict)  # location -> {entity: score}
    entity_types: dict = field(default_factory=dict)
    high_sets: dict = field(default_factory=dict)  # location -> [dates]


def risk_scores(exports, high_set, location, denominator="present"):
    """Average one location's entity attention over its high-set dates.

    ``exports`` maps date -> {(location, entity): weight}. With the default
    ``"present"`` denominator an entity is averaged over the dates where its
    edge exists; ``"all"`` divides by the full high-set size instead.
    """
    if denominator not in ("present", "all"):
        raise ConfigurationError(f"denominator must be 'present' or 'all', got {denominator!r}")
    sums, counts = defaultdict(float), defaultdict(int)
    for date in high_set:
        if date not in exports:
            raise CoverageError(f"no inference recorded for high-set date {date}")
        for (loc, eid), w in exports[date].items():
            if loc == location:
                sums[eid] += w
                counts[eid] += 1
    denom = {eid: (counts[eid] if denominator == "present" else len(high_set)) for eid in sums}
    return {eid: sums[eid] / denom[eid] for eid in sums}


def top_k(table, location, k, entity_type=None):
    """Entities ranked by descending score, ties by entity id."""
    if k < 1:
        raise ConfigurationError(f"k must be >= 1, got {k}")
    scores = table.scores.get(location, {})
    items = [
        (eid, s)
        for eid, s in scores.items()
        if entity_type is None or table.entity_types.get(eid) == entity_type
    ]
    items.sort(key=lambda kv: (-kv[1], kv[0]))
    return items[:k]


def build_risk_table(exports, counts, entity_types, locations, fraction=0.2, denominator="present"):
    """exports: date -> weights; counts: location -> {date: confirmed count}."""
    table = RiskScoreTable(entity_types=dict(entity_types))
    for loc in locations:
        available = {d: c for d, c in counts[loc].items() if d in exports}
        high = build_high_set(available, fraction)
        table.high_sets[loc] = high
        table.scores[loc] = risk_scores(exports, high, loc, denominator)
    return table


def write_risk_report(table, k, fh, entity_type=None):
    w = csv.writer(fh, lineterminator="\n")
    w.writerow(RISK_HEADER)
    for loc in sorted(table.scores):
        for rank, (eid, score) in enumerate(top_k(table, loc, k, entity_type), start=1):
            w.writerow([loc, rank, eid, table.entity_types.get(eid, ""), repr(float(score))])


def attention_exports(model, corpus, ends, horizon, chunk=16):
    """Run inference for each window end; key the LE weights by target date."""
    from .model import collate

    exports, types = {}, {}
    for i in range(0, len(ends), chunk):
        examples = [corpus.example(e, horizon) for e in ends[i : i + chunk]]
        batch = collate(examples, model.normalizer, with_targets=False)
        _, record = model.predict(batch)
        for k, ex in enumerate(examples):
            exports[ex.target_date] = location_entity_weights(record, ex.graph, offset=int(batch.node_offsets[k]))
            for e in ex.graph.entities:
                types[e.id] = e.type
    return exports, types


def risk_from_model(model, corpus, horizon, fraction=0.2, denominator="present"):
    """Risk table from in-sample inference over every window with a known target."""
    ends = [e for e in corpus.window_ends() if corpus.has_target(e + horizon * DAY)]
    if not ends:
        raise CoverageError("no windows with known targets")
    exports, types = attention_exports(model, corpus, ends, horizon)
    counts = {
        loc: {d: corpus.stats.value(d, loc, "cases") for d in exports if corpus.stats.has(d, loc, "cases")}
        for loc in corpus.locations
    }
    return build_risk_table(exports, counts, types, corpus.locations, fraction, denominator)
