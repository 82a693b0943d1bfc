"""Synthetic snapshot and statistics corpora with planted event effects.

Counts follow a log-AR(1) process per location. When a driver entity is
mentioned at a location, that location's counts are multiplied by
``1 + effect`` for ``duration`` days starting ``lag`` days later. Background
entities are mentioned at random and have no effect.
"""

from __future__ import annotations

import csv
import datetime as dt
import json
import math
import os
from dataclasses import dataclass, field

import numpy as np

from .errors import ConfigurationError
from .snapshots import STATS_HEADER

DAY = dt.timedelta(days=1)
MANIFEST_HEADER = ["driver_entity", "location", "mention_date", "effect_start", "effect_end"]
BACKGROUND_TYPES = ("person", "organization", "place", "event")


@dataclass
class SynthSpec:
    num_locations: int = 10
    num_background: int = 40
    num_drivers: int = 3
    lag: int = 10
    effect: float = 0.5
    duration: int = 7
    d_e: int = 16
    seed: int = 0
    # base process: log counts revert to a per-location level
    level_low: float = 50.0
    level_high: float = 500.0
    ar_phi: float = 0.8
    ar_sigma: float = 0.05
    death_rate: float = 0.02
    # mentions
    driver_rate: float = 0.01  # per (driver, location, day)
    background_rate: float = 2.0  # Poisson mean per (location, day)
    relation_rate: float = 0.5  # relations per mentioned entity per day
    driver_spread: float = 0.3  # drivers scatter around a shared direction
    num_aliases: int = 0  # near-duplicate background ids for the merge step
    alias_noise: float = 0.01
    mobility: str = "ring"  # ring | none
    history_days: int = 7  # statistics rows before the first snapshot
    start_date: dt.date = field(default_factory=lambda: dt.date(2020, 3, 1))

    def validate(self):
        if self.lag < 1:
            raise ConfigurationError("lag must be >= 1")
        if self.num_drivers < 1:
            raise ConfigurationError("need at least one driver entity")
        if self.num_locations < 1 or self.num_background < 0 or self.num_aliases < 0:
            raise ConfigurationError("entity and location counts must be non-negative (locations >= 1)")
        if self.num_aliases > self.num_background:
            raise ConfigurationError("num_aliases cannot exceed num_background")
        if self.duration < 1 or self.d_e < 2 or self.history_days < 0:
            raise ConfigurationError("duration >= 1, d_e >= 2 and history_days >= 0 required")
        rates = {
            "effect": self.effect, "ar_sigma": self.ar_sigma, "death_rate": self.death_rate,
            "driver_rate": self.driver_rate, "background_rate": self.background_rate,
            "relation_rate": self.relation_rate, "driver_spread": self.driver_spread,
            "alias_noise": self.alias_noise, "level_low": self.level_low,
        }
        for name, v in rates.items():
            if not math.isfinite(v) or v < 0:
                raise ConfigurationError(f"{name} must be finite and non-negative, got {v}")
        if not (0 < self.level_low <= self.level_high) or not math.isfinite(self.level_high):
            raise ConfigurationError("need 0 < level_low <= level_high")
        if not (0 <= self.ar_phi < 1):
            raise ConfigurationError("ar_phi must lie in [0, 1)")
        if self.death_rate > 1 or self.driver_rate > 1:
            raise ConfigurationError("death_rate and driver_rate are probabilities")
        if self.mobility not in ("ring", "none"):
            raise ConfigurationError(f"unknown mobility topology {self.mobility!r}")


@dataclass
class SynthCorpus:
    spec: SynthSpec
    records: list  # snapshot records (dicts), one per day
    stats: list  # (date, location, cases, deaths)
    manifest: list  # (driver, location, mention_date, effect_start, effect_end)
    drivers: list
    locations: list


def _streams(seed):
    names = ("base", "embed", "mention", "graph", "death")
    return dict(zip(names, (np.random.default_rng(s) for s in np.random.SeedSequence(seed).spawn(len(names)))))


def location_ids(n):
    return [f"loc{j:02d}" for j in range(n)]


def base_process(spec, days):
    """Log-AR(1) intensity per location, shape (history_days + days, L)."""
    rng = _streams(spec.seed)["base"]
    L, n = spec.num_locations, spec.history_days + days
    mu = np.log(rng.uniform(spec.level_low, spec.level_high, size=L))
    sd = spec.ar_sigma / math.sqrt(1 - spec.ar_phi**2)
    x = np.empty((n, L))
    x[0] = mu + sd * rng.standard_normal(L)
    for t in range(1, n):
        x[t] = mu + spec.ar_phi * (x[t - 1] - mu) + spec.ar_sigma * rng.standard_normal(L)
    return np.exp(x)


def _unit(v):
    return v / np.linalg.norm(v, axis=-1, keepdims=True)


def _embeddings(spec, rng):
    """(driver embeddings, background embeddings); drivers sit >= 0.5 from every background point."""
    center = _unit(rng.standard_normal(spec.d_e))
    drivers = _unit(center + spec.driver_spread * rng.standard_normal((spec.num_drivers, spec.d_e)) / math.sqrt(spec.d_e))
    background = np.empty((spec.num_background, spec.d_e))
    for i in range(spec.num_background):
        for _ in range(10_000):
            v = _unit(rng.standard_normal(spec.d_e))
            if np.min(np.linalg.norm(drivers - v, axis=1)) >= 0.5:
                break
        else:
            raise ConfigurationError("could not place background entities away from drivers; raise d_e")
        background[i] = v
    return drivers, background


def affected_days(manifest, spec, days):
    """Boolean (days, L) mask of snapshot days under a driver effect."""
    locs = {loc: j for j, loc in enumerate(location_ids(spec.num_locations))}
    mask = np.zeros((days, spec.num_locations), dtype=bool)
    for _, loc, _, start, end in manifest:
        a = (start - spec.start_date).days
        b = (end - spec.start_date).days
        if b < 0 or a >= days:
            continue
        mask[max(a, 0) : min(b, days - 1) + 1, locs[loc]] = True
    return mask


def generate(spec, days, window=7, max_horizon=14):
    spec.validate()
    if days <= spec.lag + window + max_horizon:
        raise ConfigurationError(
            f"days must exceed lag + window + max horizon = {spec.lag + window + max_horizon}, got {days}"
        )
    rs = _streams(spec.seed)
    L, K = spec.num_locations, spec.num_drivers
    locs = location_ids(L)
    n_total = spec.num_background + K
    ids = [f"e{i:03d}" for i in range(n_total)]
    driver_idx = sorted(rs["embed"].choice(n_total, size=K, replace=False).tolist())
    drivers = [ids[i] for i in driver_idx]
    background = [e for e in ids if e not in set(drivers)]
    d_emb, b_emb = _embeddings(spec, rs["embed"])
    info = {}
    for k, eid in enumerate(drivers):
        info[eid] = ("event", d_emb[k])
    for k, eid in enumerate(background):
        info[eid] = (BACKGROUND_TYPES[k % len(BACKGROUND_TYPES)], b_emb[k])
    # near-duplicate aliases of the first few background entities
    aliases = {}
    for k in range(spec.num_aliases):
        src = background[k]
        alias = f"a{k:03d}"
        emb = _unit(info[src][1] + spec.alias_noise * rs["embed"].standard_normal(spec.d_e) / math.sqrt(spec.d_e))
        info[alias] = (info[src][0], emb)
        aliases[src] = alias

    records, manifest = [], []
    mrng, grng = rs["mention"], rs["graph"]
    for t in range(days):
        date = spec.start_date + t * DAY
        counts = {}  # entity -> mention count
        mentions = []
        for j, loc in enumerate(locs):
            hits = mrng.random(K) < spec.driver_rate
            for k in np.flatnonzero(hits):
                eid = drivers[k]
                mentions.append([loc, eid])
                counts[eid] = counts.get(eid, 0) + 1 + int(mrng.poisson(3))
                manifest.append((eid, loc, date, date + spec.lag * DAY, date + (spec.lag + spec.duration - 1) * DAY))
            n_bg = int(mrng.poisson(spec.background_rate)) if background else 0
            for b in mrng.choice(len(background), size=min(n_bg, len(background)), replace=False) if n_bg else []:
                eid = background[b]
                if eid in aliases and mrng.random() < 0.5:
                    eid = aliases[eid]
                if [loc, eid] in mentions:
                    continue
                mentions.append([loc, eid])
                counts[eid] = counts.get(eid, 0) + 1 + int(mrng.poisson(3))
        present = sorted(counts)
        relations = set()
        n_rel = int(grng.poisson(spec.relation_rate * len(present))) if len(present) > 1 else 0
        for _ in range(n_rel):
            a, b = grng.choice(len(present), size=2, replace=False)
            relations.add(tuple(sorted((present[a], present[b]))))
        mobility, adjacency = [], []
        if spec.mobility == "ring" and L > 1:
            for j in range(L):
                nxt = (j + 1) % L
                if nxt == j or (L == 2 and j == 1):
                    continue
                adjacency.append(sorted([locs[j], locs[nxt]]))
                mobility.append([locs[j], locs[nxt], round(float(grng.uniform(0.5, 1.5)), 6)])
                mobility.append([locs[nxt], locs[j], round(float(grng.uniform(0.5, 1.5)), 6)])
        records.append(
            {
                "date": date.isoformat(),
                "locations": [{"id": loc} for loc in locs],
                "entities": [
                    {"id": eid, "name": f"entity {eid}", "type": info[eid][0],
                     "embedding": [round(float(v), 8) for v in info[eid][1]], "count": counts[eid]}
                    for eid in present
                ],
                "relations": [list(r) for r in sorted(relations)],
                "location_mentions": mentions,
                "mobility": mobility,
                "adjacency": adjacency,
            }
        )

    intensity = base_process(spec, days)
    mult = np.ones_like(intensity)
    h = spec.history_days
    mult[h:][affected_days(manifest, spec, days)] = 1.0 + spec.effect
    cases = np.rint(intensity * mult).astype(np.int64)
    deaths = rs["death"].binomial(cases, spec.death_rate)
    stats = []
    first = spec.start_date - h * DAY
    for t in range(h + days):
        for j, loc in enumerate(locs):
            stats.append((first + t * DAY, loc, int(cases[t, j]), int(deaths[t, j])))
    return SynthCorpus(spec, records, stats, manifest, drivers, locs)


def write_corpus(corpus, out_dir):
    """Write snapshots.jsonl, stats.csv and manifest.csv; returns their paths."""
    os.makedirs(out_dir, exist_ok=True)
    paths = {name: os.path.join(out_dir, name) for name in ("snapshots.jsonl", "stats.csv", "manifest.csv")}
    with open(paths["snapshots.jsonl"], "w", encoding="utf-8", newline="\n") as fh:
        for rec in corpus.records:
            fh.write(json.dumps(rec, separators=(",", ":")) + "\n")
    with open(paths["stats.csv"], "w", encoding="utf-8", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(STATS_HEADER)
        for d, loc, c, k in corpus.stats:
            w.writerow([d.isoformat(), loc, c, k])
    with open(paths["manifest.csv"], "w", encoding="utf-8", newline="") as fh:
        write_manifest(corpus.manifest, fh)
    return paths


def write_manifest(manifest, fh):
    w = csv.writer(fh, lineterminator="\n")
    w.writerow(MANIFEST_HEADER)
    for eid, loc, m, a, b in manifest:
        w.writerow([eid, loc, m.isoformat(), a.isoformat(), b.isoformat()])


def read_manifest(path):
    with open(path, encoding="utf-8", newline="") as fh:
        reader = csv.reader(fh)
        if next(reader, None) != MANIFEST_HEADER:
            raise ConfigurationError(f"manifest header must be {','.join(MANIFEST_HEADER)}")
        return [
            (eid, loc, dt.date.fromisoformat(m), dt.date.fromisoformat(a), dt.date.fromisoformat(b))
            for eid, loc, m, a, b in reader
        ]


def drivers_by_location(manifest):
    """{location: set of driver ids with at least one planted effect there}."""
    out = {}
    for eid, loc, *_ in manifest:
        out.setdefault(loc, set()).add(eid)
    return out
