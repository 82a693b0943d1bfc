import datetime as dt
import io
import json

import numpy as np
import pytest

from kgcast.errors import ConfigurationError, CoverageError, DataError, ParseError, ReferentialError, WindowError
from kgcast.merge import dbscan, merge_entities
from kgcast.snapshots import Entity, parse_snapshot, read_snapshots, snapshot_to_record, stats_from_text
from kgcast.window import EE, LE, LL, SELF, aggregate_window, build_features
from oracles import quadratic_dbscan, window_union_counts

D0 = dt.date(2020, 5, 15)


def record(day=0, locations=("A", "B"), entities=(), relations=(), mentions=(), mobility=(), adjacency=(), d_e=4):
    return {
        "date": (D0 + dt.timedelta(days=day)).isoformat(),
        "locations": [{"id": loc} for loc in locations],
        "entities": [
            {"id": e, "name": e, "type": "misc", "embedding": [float(i)] * d_e, "count": 1}
            for i, e in enumerate(entities)
        ],
        "relations": [list(r) for r in relations],
        "location_mentions": [list(m) for m in mentions],
        "mobility": [list(m) for m in mobility],
        "adjacency": [list(a) for a in adjacency],
    }


# ----------------------------------------------------------------- parsing


def test_parse_empty_entities_one_adjacency():
    snap = parse_snapshot(record(adjacency=[("A", "B")]))
    assert len(snap.entities) == 0
    assert snap.edge_counts() == {"EE": 0, "LE": 0, "LL": 1}


def test_parse_dangling_relation():
    with pytest.raises(ReferentialError):
        parse_snapshot(record(entities=["e1"], relations=[("e1", "e9")]))


def test_parse_counts_brute_force():
    rec = record(
        entities=["e1", "e2", "e3"],
        relations=[("e1", "e2"), ("e2", "e3")],
        mentions=[("A", "e1"), ("A", "e2"), ("B", "e2"), ("B", "e3")],
    )
    line = json.dumps(rec)
    parsed = json.loads(line)
    expected_ee = len({frozenset(r) for r in parsed["relations"]})
    expected_le = len({tuple(m) for m in parsed["location_mentions"]})
    counts = parse_snapshot(line).edge_counts()
    assert (counts["EE"], counts["LE"]) == (expected_ee, expected_le) == (2, 4)


def test_parse_collapses_duplicate_mentions():
    snap = parse_snapshot(record(entities=["e1"], mentions=[("A", "e1"), ("A", "e1")]))
    assert snap.location_mentions[("A", "e1")] == 2
    assert snap.edge_counts()["LE"] == 1


@pytest.mark.parametrize(
    "line",
    ["{not json", "[]", json.dumps({"date": "2020-01-01"}), json.dumps({**record(), "extra": 1})],
)
def test_parse_errors_carry_line_number(line):
    with pytest.raises(ParseError) as exc:
        read_snapshots(io.StringIO("\n".join([json.dumps(record()), line])))
    assert exc.value.lineno == 2


def test_parse_rejects_non_finite_and_wrong_length():
    rec = record(entities=["e1"])
    rec["entities"][0]["embedding"][0] = float("nan")
    with pytest.raises(DataError):
        parse_snapshot(json.dumps(rec))
    rec = record(entities=["e1", "e2"])
    rec["entities"][1]["embedding"] = [1.0]
    with pytest.raises(DataError):
        parse_snapshot(rec)


def test_snapshot_round_trip():
    rec = record(entities=["e1", "e2"], relations=[("e1", "e2")], mentions=[("A", "e1")],
                 mobility=[("A", "B", 2.5)], adjacency=[("A", "B")])
    snap = parse_snapshot(rec)
    again = parse_snapshot(snapshot_to_record(snap))
    assert again.edge_counts() == snap.edge_counts()
    assert again.entities.keys() == snap.entities.keys()


def test_stats_parsing():
    table = stats_from_text("date,location,new_cases,new_deaths\n2020-01-01,A,5,0\n2020-01-02,A,7,1\n")
    assert table.value(dt.date(2020, 1, 2), "A") == 7.0
    assert table.value(dt.date(2020, 1, 2), "A", "deaths") == 1.0
    with pytest.raises(CoverageError):
        table.value(dt.date(2020, 1, 3), "A")
    with pytest.raises(ParseError):
        stats_from_text("date,loc,cases\n")
    with pytest.raises(DataError):
        stats_from_text("date,location,new_cases,new_deaths\n2020-01-01,A,-1,0\n")


# ------------------------------------------------------------------ DBSCAN


def test_dbscan_pair_merges_to_highest_count():
    a = Entity("a", "a", "t", np.array([0.0, 0.0]), 5)
    b = Entity("b", "b", "t", np.array([0.1, 0.0]), 2)
    merged, remap = merge_entities([b, a], eps=0.5)
    assert [e.id for e in merged] == ["a"]
    assert remap == {"a": "a", "b": "a"}


def test_dbscan_single_entity_unchanged():
    a = Entity("a", "a", "t", np.array([1.0, 2.0]), 3)
    merged, remap = merge_entities([a], eps=0.5)
    assert merged == [a] and remap == {"a": "a"}


def test_dbscan_errors():
    with pytest.raises(DataError):
        dbscan(np.array([[np.inf, 0.0]]), 0.5)
    with pytest.raises(ConfigurationError):
        dbscan(np.zeros((2, 2)), 0.0)
    with pytest.raises(ConfigurationError):
        dbscan(np.zeros((2, 2)), 1.0, min_pts=0)


def random_point_set(seed):
    rng = np.random.default_rng(seed)
    n = int(rng.integers(1, 51))
    dim = int(rng.integers(1, 5))
    centers = rng.normal(scale=3.0, size=(int(rng.integers(1, 6)), dim))
    pts = centers[rng.integers(0, len(centers), size=n)] + rng.normal(scale=0.5, size=(n, dim))
    return pts, float(rng.uniform(0.2, 1.5)), int(rng.integers(1, 5))


@pytest.mark.parametrize("seed", range(20))
def test_dbscan_matches_quadratic_oracle(seed):
    pts, eps, min_pts = random_point_set(seed)
    got = dbscan(pts, eps, min_pts).tolist()
    assert got == quadratic_dbscan(pts.tolist(), eps, min_pts)


@pytest.mark.parametrize("seed", range(5))
def test_merge_is_idempotent(seed):
    pts, eps, _ = random_point_set(seed)
    rng = np.random.default_rng(seed)
    ents = [Entity(f"e{i}", f"e{i}", "t", p, int(rng.integers(1, 9))) for i, p in enumerate(pts)]
    once, _ = merge_entities(ents, eps)
    twice, remap = merge_entities(once, eps)
    assert [e.id for e in twice] == [e.id for e in once]
    assert all(k == v for k, v in remap.items())


# -------------------------------------------------------------- aggregation


def random_window(seed, days=None, n_loc=None, n_ent=None):
    rng = np.random.default_rng(seed)
    days = days or int(rng.integers(1, 11))
    n_loc = n_loc or int(rng.integers(1, 6))
    n_ent = n_ent or int(rng.integers(0, 51))
    locs = [f"L{j}" for j in range(n_loc)]
    ents = [f"x{k:02d}" for k in range(n_ent)]
    emb = {e: rng.normal(size=3).tolist() for e in ents}
    recs = []
    for d in range(days):
        present = [e for e in ents if rng.random() < 0.3]
        rel = set()
        for _ in range(int(rng.integers(0, 2 * len(present) + 1))):
            if len(present) > 1:
                a, b = rng.choice(len(present), size=2, replace=False)
                rel.add((present[a], present[b]))
        mentions = [(locs[int(rng.integers(n_loc))], e) for e in present for _ in range(int(rng.integers(0, 3)))]
        adjacency, mobility = [], []
        for a in range(n_loc):
            for b in range(n_loc):
                if a != b and rng.random() < 0.2:
                    adjacency.append((locs[a], locs[b]))
                if a != b and rng.random() < 0.3:
                    mobility.append((locs[a], locs[b], float(rng.choice([0.0, rng.uniform(0.1, 5)]))))
        recs.append({
            "date": (D0 + dt.timedelta(days=d)).isoformat(),
            "locations": [{"id": loc} for loc in locs],
            "entities": [{"id": e, "name": e, "type": "t", "embedding": emb[e], "count": 1} for e in present],
            "relations": [list(r) for r in sorted(rel)],
            "location_mentions": [list(m) for m in mentions],
            "mobility": [list(m) for m in mobility],
            "adjacency": [list(a) for a in adjacency],
        })
    return recs


@pytest.mark.parametrize("seed", range(50))
def test_aggregation_matches_set_union_oracle(seed):
    recs = random_window(seed)
    g = aggregate_window([parse_snapshot(r) for r in recs])
    counts = g.edge_counts()
    want = window_union_counts(recs)
    assert g.num_nodes == want["nodes"]
    assert len(g.entities) == want["entities"]
    assert (counts[EE], counts[LE], counts[LL], counts[SELF]) == (want["EE"], want["LE"], want["LL"], want["SELF"])


def test_entity_mentioned_two_days_links_both_copies():
    recs = [record(0, locations=["A"], entities=["e1"], mentions=[("A", "e1")]),
            record(1, locations=["A"], entities=["e1", "e2"], mentions=[("A", "e1")])]
    g = aggregate_window([parse_snapshot(r) for r in recs])
    assert len(g.entities) == 2 and g.num_location_nodes == 2
    e1 = g.entity_node(0)
    _, ents = g.neighbors(g.location_node(0, 0))
    assert e1 in ents
    assert e1 in g.neighbors(g.location_node(1, 0))[1]


def test_single_day_is_snapshot_plus_self_loops():
    rec = record(entities=["e1", "e2"], relations=[("e1", "e2")], mentions=[("A", "e1")], adjacency=[("A", "B")])
    snap = parse_snapshot(rec)
    g = aggregate_window([snap])
    counts = g.edge_counts()
    assert {k: counts[k] for k in (EE, LE, LL)} == snap.edge_counts()
    assert counts[SELF] == g.num_nodes == 4
    assert np.all(g.degrees() >= 1)


def test_window_errors():
    a, c = parse_snapshot(record(0)), parse_snapshot(record(2))
    with pytest.raises(WindowError):
        aggregate_window([a, c])
    with pytest.raises(ConfigurationError):
        aggregate_window([])
    with pytest.raises(WindowError):
        aggregate_window([a, parse_snapshot(record(1, locations=["A", "C"]))])


def test_no_edge_crosses_days():
    recs = random_window(3, days=4, n_loc=3, n_ent=10)
    g = aggregate_window([parse_snapshot(r) for r in recs])
    for (u, v), kind in zip(g.edges, g.edge_types):
        if kind == LL:
            assert u // g.num_locations == v // g.num_locations


@pytest.mark.parametrize("seed", range(5))
def test_relabeling_entities_is_isomorphic(seed):
    recs = random_window(seed, days=3, n_loc=3, n_ent=20)
    rng = np.random.default_rng(seed)
    names = sorted({e["id"] for r in recs for e in r["entities"]})
    perm = dict(zip(names, [f"y{k}" for k in rng.permutation(len(names))]))
    relabeled = json.loads(json.dumps(recs))
    for r in relabeled:
        for e in r["entities"]:
            e["id"] = perm[e["id"]]
        r["relations"] = [[perm[a], perm[b]] for a, b in r["relations"]]
        r["location_mentions"] = [[loc, perm[e]] for loc, e in r["location_mentions"]]
    g1 = aggregate_window([parse_snapshot(r) for r in recs])
    g2 = aggregate_window([parse_snapshot(r) for r in relabeled])
    assert sorted(g1.degrees()) == sorted(g2.degrees())
    assert g1.edge_counts() == g2.edge_counts()


def test_mobility_threshold_on_window_sum():
    recs = [record(0, mobility=[("A", "B", 1.0)]), record(1, mobility=[("A", "B", 1.5)])]
    snaps = [parse_snapshot(r) for r in recs]
    assert aggregate_window(snaps, mobility_threshold=2.0).edge_counts()[LL] == 2
    assert aggregate_window(snaps, mobility_threshold=3.0).edge_counts()[LL] == 0


def test_merge_inside_window():
    rec = record(entities=["e1", "e2"], mentions=[("A", "e1"), ("B", "e2")])
    rec["entities"][0]["embedding"] = [0.0, 0.0, 0.0, 0.0]
    rec["entities"][1]["embedding"] = [0.05, 0.0, 0.0, 0.0]
    rec["entities"][1]["count"] = 4
    g = aggregate_window([parse_snapshot(rec)], merge_eps=0.1)
    assert [e.id for e in g.entities] == ["e2"]
    assert g.entities[0].count == 5
    assert g.edge_counts()[LE] == 2


# ---------------------------------------------------------------- features


def _stats(locs, days, start=-3, value=lambda d, loc: 10 * d + ord(loc[0])):
    lines = ["date,location,new_cases,new_deaths"]
    for d in range(start, days):
        for loc in locs:
            lines.append(f"{(D0 + dt.timedelta(days=d)).isoformat()},{loc},{value(d, loc)},0")
    return stats_from_text("\n".join(lines) + "\n")


def test_entity_row_is_embedding_then_zeros():
    rec = record(locations=["A"], entities=["e1"], mentions=[("A", "e1")])
    rec["entities"][0]["embedding"] = [1.0, 2.0, 3.0, 4.0]
    g = aggregate_window([parse_snapshot(rec)])
    f = build_features(g, _stats(["A"], 1), d_t=2, d_e=4)
    assert f.rows[g.entity_node(0)].tolist() == [1, 2, 3, 4, 0, 0]


def test_location_row_history_oldest_first():
    recs = [record(d, locations=["A"]) for d in range(2)]
    g = aggregate_window([parse_snapshot(r) for r in recs])
    f = build_features(g, _stats(["A"], 2), d_t=2, d_e=4)
    a = ord("A")
    assert f.rows[g.location_node(1, 0), 4:].tolist() == [10 * -1 + a, 10 * 0 + a]
    assert f.rows[g.location_node(0, 0), 4:].tolist() == [10 * -2 + a, 10 * -1 + a]
    assert f.learned_embedding[g.location_node(0, 0)]


def test_zero_history_location_row():
    g = aggregate_window([parse_snapshot(record(locations=["A"]))])
    f = build_features(g, _stats(["A"], 1, value=lambda d, loc: 0), d_t=3, d_e=4)
    assert f.rows[0].tolist() == [0.0] * 7


def test_missing_statistic_names_location_and_date():
    g = aggregate_window([parse_snapshot(record(locations=["A"]))])
    with pytest.raises(CoverageError) as exc:
        build_features(g, _stats(["A"], 1, start=-1), d_t=2, d_e=4)
    assert "A" in str(exc.value) and (D0 - dt.timedelta(days=2)).isoformat() in str(exc.value)


def test_default_feature_width():
    rec = record(locations=["A"], entities=["e1"], mentions=[("A", "e1")], d_e=768)
    g = aggregate_window([parse_snapshot(rec)])
    f = build_features(g, _stats(["A"], 1, start=-7, value=lambda d, loc: 5), d_t=7, d_e=768)
    assert f.rows.shape[1] == 775
    assert np.all(f.rows[~f.is_location, 768:] == 0)
