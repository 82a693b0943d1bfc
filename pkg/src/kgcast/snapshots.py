"""Daily knowledge-graph snapshots and the per-location statistics table.

Snapshot files hold one JSON object per line (one per day)::

    {"date": "2020-05-15",
     "locations": [{"id": "CA", "embedding": [...]}, ...],
     "entities": [{"id": "e1", "name": "marathon", "type": "EVENT",
                   "embedding": [...], "count": 12}, ...],
     "relations": [["e1", "e2"]],
     "location_mentions": [["CA", "e1"]],
     "mobility": [["CA", "NV", 31.0]],
     "adjacency": [["CA", "NV"]]}

Statistics files are CSV with header ``date,location,new_cases,new_deaths``.
"""

from __future__ import annotations

import csv
import datetime as dt
import io
import json
import math
from collections import Counter
from dataclasses import dataclass, field

import numpy as np

from .errors import CoverageError, DataError, ParseError, ReferentialError

SNAPSHOT_FIELDS = ("date", "locations", "entities", "relations", "location_mentions", "mobility", "adjacency")
ENTITY_FIELDS = ("id", "name", "type", "embedding", "count")
STATS_HEADER = ["date", "location", "new_cases", "new_deaths"]
TARGET_COLUMNS = {"cases": "new_cases", "deaths": "new_deaths"}


@dataclass
class Entity:
    id: str
    name: str
    type: str
    embedding: np.ndarray
    count: int


@dataclass
class GraphSnapshot:
    date: dt.date
    locations: list
    entities: dict  # id -> Entity, in file order
    relations: list  # unique unordered (id, id) pairs
    location_mentions: Counter  # (location, entity id) -> multiplicity
    mobility: list  # (src, dst, weight)
    adjacency: list  # (loc, loc)
    location_embeddings: dict = field(default_factory=dict)

    @property
    def embedding_dim(self):
        for e in self.entities.values():
            return len(e.embedding)
        for emb in self.location_embeddings.values():
            return len(emb)
        return None

    def edge_counts(self):
        ll = set()
        for a, b in self.adjacency:
            if a != b:
                ll.add(frozenset((a, b)))
        for src, dst, w in self.mobility:
            if src != dst and w > 0:
                ll.add(frozenset((src, dst)))
        return {"EE": len(self.relations), "LE": len(self.location_mentions), "LL": len(ll)}


def parse_date(text, lineno=0):
    try:
        return dt.date.fromisoformat(text)
    except (TypeError, ValueError):
        raise ParseError(lineno, f"invalid ISO-8601 date {text!r}") from None


def _pair(item, lineno, what):
    if not isinstance(item, (list, tuple)) or len(item) != 2:
        raise ParseError(lineno, f"{what} entries must be 2-element lists, got {item!r}")
    return str(item[0]), str(item[1])


def _vector(values, lineno, what):
    if not isinstance(values, list) or not values:
        raise ParseError(lineno, f"{what} must be a non-empty list of numbers")
    try:
        vec = np.array(values, dtype=np.float64)
    except (TypeError, ValueError):
        raise ParseError(lineno, f"{what} must contain numbers only") from None
    if vec.ndim != 1:
        raise ParseError(lineno, f"{what} must be flat")
    if not np.isfinite(vec).all():
        raise DataError(f"line {lineno}: {what} contains non-finite values")
    return vec


def parse_snapshot(record, lineno=1):
    """Validate one day record (a JSON string or an already-decoded dict)."""
    if isinstance(record, (str, bytes)):
        try:
            record = json.loads(record)
        except json.JSONDecodeError as exc:
            raise ParseError(lineno, f"malformed JSON ({exc.msg})") from None
    if not isinstance(record, dict):
        raise ParseError(lineno, "record must be a JSON object")
    missing = [k for k in SNAPSHOT_FIELDS if k not in record]
    extra = sorted(set(record) - set(SNAPSHOT_FIELDS))
    if missing:
        raise ParseError(lineno, f"missing fields {missing}")
    if extra:
        raise ParseError(lineno, f"unexpected fields {extra}")
    for key in SNAPSHOT_FIELDS[1:]:
        if not isinstance(record[key], list):
            raise ParseError(lineno, f"field {key!r} must be a list")

    date = parse_date(record["date"], lineno)

    locations, loc_emb = [], {}
    for item in record["locations"]:
        if not isinstance(item, dict) or "id" not in item or set(item) - {"id", "embedding"}:
            raise ParseError(lineno, f"location entries need 'id' and optional 'embedding', got {item!r}")
        lid = str(item["id"])
        if lid in loc_emb or lid in locations:
            raise DataError(f"line {lineno}: duplicate location id {lid!r}")
        locations.append(lid)
        if item.get("embedding") is not None:
            loc_emb[lid] = _vector(item["embedding"], lineno, f"embedding of location {lid!r}")
    loc_set = set(locations)

    entities = {}
    for item in record["entities"]:
        if not isinstance(item, dict) or set(item) != set(ENTITY_FIELDS):
            raise ParseError(lineno, f"entity entries need exactly {list(ENTITY_FIELDS)}")
        eid = str(item["id"])
        if eid in entities:
            raise DataError(f"line {lineno}: duplicate entity id {eid!r}")
        count = item["count"]
        if isinstance(count, bool) or not isinstance(count, (int, float)) or count < 0 or count != int(count):
            raise ParseError(lineno, f"entity {eid!r} count must be a non-negative integer")
        entities[eid] = Entity(
            id=eid,
            name=str(item["name"]),
            type=str(item["type"]),
            embedding=_vector(item["embedding"], lineno, f"embedding of entity {eid!r}"),
            count=int(count),
        )

    dims = {len(e.embedding) for e in entities.values()} | {len(v) for v in loc_emb.values()}
    if len(dims) > 1:
        raise DataError(f"line {lineno}: inconsistent embedding lengths {sorted(dims)}")

    def need_entity(eid):
        if eid not in entities:
            raise ReferentialError(f"line {lineno}: unknown entity id {eid!r}")

    def need_location(lid):
        if lid not in loc_set:
            raise ReferentialError(f"line {lineno}: unknown location id {lid!r}")

    relations, seen = [], set()
    for item in record["relations"]:
        a, b = _pair(item, lineno, "relations")
        need_entity(a)
        need_entity(b)
        key = tuple(sorted((a, b)))
        if a != b and key not in seen:
            seen.add(key)
            relations.append(key)

    mentions = Counter()
    for item in record["location_mentions"]:
        loc, eid = _pair(item, lineno, "location_mentions")
        need_location(loc)
        need_entity(eid)
        mentions[(loc, eid)] += 1

    mobility = []
    for item in record["mobility"]:
        if not isinstance(item, (list, tuple)) or len(item) != 3:
            raise ParseError(lineno, f"mobility entries must be [src, dst, weight], got {item!r}")
        src, dst = str(item[0]), str(item[1])
        need_location(src)
        need_location(dst)
        try:
            w = float(item[2])
        except (TypeError, ValueError):
            raise ParseError(lineno, f"mobility weight must be numeric, got {item[2]!r}") from None
        if not math.isfinite(w) or w < 0:
            raise DataError(f"line {lineno}: mobility weight must be finite and non-negative, got {w}")
        mobility.append((src, dst, w))

    adjacency = []
    for item in record["adjacency"]:
        a, b = _pair(item, lineno, "adjacency")
        need_location(a)
        need_location(b)
        adjacency.append((a, b))

    return GraphSnapshot(
        date=date,
        locations=locations,
        entities=entities,
        relations=relations,
        location_mentions=mentions,
        mobility=mobility,
        adjacency=adjacency,
        location_embeddings=loc_emb,
    )


def read_snapshots(source):
    """Parse a snapshot file (path or text stream) into date-ordered snapshots."""
    if isinstance(source, (str, bytes)) or hasattr(source, "__fspath__"):
        with open(source, encoding="utf-8") as fh:
            return read_snapshots(fh)
    snapshots = []
    dims = set()
    for lineno, line in enumerate(source, start=1):
        if not line.strip():
            continue
        snap = parse_snapshot(line, lineno)
        if snap.embedding_dim is not None:
            dims.add(snap.embedding_dim)
        snapshots.append(snap)
    if len(dims) > 1:
        raise DataError(f"embedding length differs across days: {sorted(dims)}")
    dates = [s.date for s in snapshots]
    if len(set(dates)) != len(dates):
        raise DataError("duplicate snapshot dates")
    snapshots.sort(key=lambda s: s.date)
    return snapshots


def snapshot_to_record(snap):
    """Inverse of parse_snapshot, used by the synthetic generator."""
    locs = []
    for lid in snap.locations:
        item = {"id": lid}
        if lid in snap.location_embeddings:
            item["embedding"] = [float(v) for v in snap.location_embeddings[lid]]
        locs.append(item)
    mentions = []
    for (loc, eid), n in snap.location_mentions.items():
        mentions.extend([[loc, eid]] * n)
    return {
        "date": snap.date.isoformat(),
        "locations": locs,
        "entities": [
            {
                "id": e.id,
                "name": e.name,
                "type": e.type,
                "embedding": [float(v) for v in e.embedding],
                "count": int(e.count),
            }
            for e in snap.entities.values()
        ],
        "relations": [list(r) for r in snap.relations],
        "location_mentions": mentions,
        "mobility": [[s, d, float(w)] for s, d, w in snap.mobility],
        "adjacency": [list(a) for a in snap.adjacency],
    }


class StatsTable:
    """Daily new cases and deaths per location, indexed by date."""

    def __init__(self, rows):
        # rows: iterable of (date, location, cases, deaths)
        rows = list(rows)
        self.locations = sorted({r[1] for r in rows})
        self.dates = sorted({r[0] for r in rows})
        self._date_idx = {d: i for i, d in enumerate(self.dates)}
        self._loc_idx = {loc: i for i, loc in enumerate(self.locations)}
        shape = (len(self.dates), len(self.locations))
        self.values = {"cases": np.full(shape, np.nan), "deaths": np.full(shape, np.nan)}
        for d, loc, cases, deaths in rows:
            i, j = self._date_idx[d], self._loc_idx[loc]
            self.values["cases"][i, j] = cases
            self.values["deaths"][i, j] = deaths

    @property
    def first_date(self):
        return self.dates[0]

    @property
    def last_date(self):
        return self.dates[-1]

    def has(self, date, location, kind="cases"):
        i = self._date_idx.get(date)
        j = self._loc_idx.get(location)
        return i is not None and j is not None and not np.isnan(self.values[kind][i, j])

    def value(self, date, location, kind="cases"):
        if not self.has(date, location, kind):
            raise CoverageError(f"missing {kind} statistic for ({location}, {date.isoformat()})")
        return float(self.values[kind][self._date_idx[date], self._loc_idx[location]])

    def history(self, location, day, length, kind="cases"):
        """The ``length`` values strictly before ``day``, oldest first."""
        return [self.value(day - dt.timedelta(days=k), location, kind) for k in range(length, 0, -1)]

    def series(self, location, kind="cases", end=None):
        """(dates, values) for one location, optionally up to ``end`` inclusive."""
        dates, vals = [], []
        j = self._loc_idx[location]
        for d in self.dates:
            if end is not None and d > end:
                break
            v = self.values[kind][self._date_idx[d], j]
            if not np.isnan(v):
                dates.append(d)
                vals.append(float(v))
        return dates, vals


def read_stats(source):
    if isinstance(source, (str, bytes)) or hasattr(source, "__fspath__"):
        with open(source, encoding="utf-8", newline="") as fh:
            return read_stats(fh)
    reader = csv.reader(source)
    header = next(reader, None)
    if header is None or [h.strip() for h in header] != STATS_HEADER:
        raise ParseError(1, f"statistics header must be {','.join(STATS_HEADER)}")
    rows, seen = [], set()
    for lineno, row in enumerate(reader, start=2):
        if not row or all(not c.strip() for c in row):
            continue
        if len(row) != 4:
            raise ParseError(lineno, f"expected 4 columns, got {len(row)}")
        date = parse_date(row[0].strip(), lineno)
        loc = row[1].strip()
        try:
            cases, deaths = float(row[2]), float(row[3])
        except ValueError:
            raise ParseError(lineno, "new_cases and new_deaths must be numeric") from None
        if not (math.isfinite(cases) and math.isfinite(deaths)) or cases < 0 or deaths < 0:
            raise DataError(f"line {lineno}: statistics must be finite and non-negative")
        if (date, loc) in seen:
            raise DataError(f"line {lineno}: duplicate row for ({loc}, {date.isoformat()})")
        seen.add((date, loc))
        rows.append((date, loc, cases, deaths))
    if not rows:
        raise DataError("statistics file has no rows")
    return StatsTable(rows)


def write_stats(rows, fh):
    """Write (date, location, cases, deaths) rows in file order."""
    writer = csv.writer(fh, lineterminator="\n")
    writer.writerow(STATS_HEADER)
    for d, loc, cases, deaths in rows:
        writer.writerow([d.isoformat(), loc, _fmt_count(cases), _fmt_count(deaths)])


def _fmt_count(v):
    return str(int(v)) if float(v).is_integer() else repr(float(v))


def stats_from_text(text):
    return read_stats(io.StringIO(text))
