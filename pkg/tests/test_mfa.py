import json
from datetime import date

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from shapely.geometry import box, shape

from helpers import (
    daily_from_partitions,
    exhaustive_best,
    feed_from_rows,
    modularity_dense,
    random_graph,
    two_cliques_bridge,
)
from odmforge.errors import AlphaOutOfRange, EmptyDay, MissingGeometry
from odmforge.harmonise import HarmonizedODM
from odmforge.mfa import (
    DailyMFA,
    MobilityGraph,
    PersistentMFA,
    build_graph,
    cluster_daily,
    daily_stability,
    export_mfa_geojson,
    fuzzy_intersect,
    load_zone_geometries,
    modularity,
    read_daily_mfa,
    write_daily_mfa,
    write_membership,
)

DAY = date(2020, 3, 2)


# graph ---------------------------------------------------------------------

def test_symmetrised_edge():
    g = build_graph(HarmonizedODM.from_cells(DAY, {("a", "b"): 10, ("b", "a"): 5}))
    assert g.edges == {("a", "b"): 15.0} and g.day == DAY


def test_self_loop_only_gives_singleton():
    g = build_graph(HarmonizedODM.from_cells(DAY, {("a", "a"): 100}))
    assert g.nodes == ("a",) and g.edges == {}
    d = cluster_daily(g)
    assert d.clusters == () and d.singletons == {"a"}


def test_disjoint_pairs():
    g = build_graph(HarmonizedODM.from_cells(DAY, {("a", "b"): 10, ("c", "d"): 2}))
    assert g.edges == {("a", "b"): 10.0, ("c", "d"): 2.0}
    assert set(cluster_daily(g).clusters) == {frozenset("ab"), frozenset("cd")}


def test_empty_day():
    with pytest.raises(EmptyDay):
        build_graph(HarmonizedODM.from_cells(DAY, {}))
    with pytest.raises(EmptyDay):
        build_graph(HarmonizedODM.from_cells(DAY, {("a", "b"): 1}), date(2020, 3, 3))


def test_graph_from_feed_selects_day():
    feed = feed_from_rows([("a", "b", "2020-03-02T00:00", 10), ("b", "a", "2020-03-02T05:00", 4),
                           ("a", "c", "2020-03-03T00:00", 7)])
    assert build_graph(feed, DAY).edges == {("a", "b"): 14.0}
    with pytest.raises(ValueError):
        build_graph(feed)


def test_graph_invariants():
    with pytest.raises(ValueError):
        MobilityGraph(DAY, ("a",), {("a", "a"): 1.0})
    with pytest.raises(ValueError):
        MobilityGraph(DAY, ("a", "b"), {("a", "b"): 0.0})


# clustering ----------------------------------------------------------------

def test_two_cliques():
    d = cluster_daily(two_cliques_bridge())
    assert set(d.clusters) == {frozenset("abcd"), frozenset("efgh")}
    best, winners = exhaustive_best(two_cliques_bridge())
    assert abs(d.modularity - best) < 1e-12 and len(winners) == 1


def test_triangle_single_cluster():
    g = MobilityGraph(None, ("a", "b", "c"), {("a", "b"): 1.0, ("b", "c"): 1.0, ("a", "c"): 1.0})
    d = cluster_daily(g)
    assert d.clusters == (frozenset("abc"),)


def test_no_edges():
    d = cluster_daily(MobilityGraph(None, ("a", "b"), {}))
    assert d.clusters == () and d.singletons == {"a", "b"} and d.modularity == 0.0


def test_modularity_matches_dense_formula_and_networkx():
    nx = pytest.importorskip("networkx")
    rng = np.random.default_rng(11)
    for _ in range(20):
        g = random_graph(rng, 7, 0.6)
        if not g.edges:
            continue
        d = cluster_daily(g)
        ours = modularity(g, d.clusters)
        assert abs(ours - modularity_dense(g, d.clusters)) < 1e-12
        G = nx.Graph()
        G.add_nodes_from(z for c in d.clusters for z in c)
        G.add_weighted_edges_from((a, b, w) for (a, b), w in g.edges.items())
        assert abs(ours - nx.community.modularity(G, d.clusters, weight="weight")) < 1e-12


@settings(max_examples=50, deadline=None)
@given(st.integers(0, 2**32 - 1), st.integers(2, 12), st.floats(0.1, 0.9), st.floats(0.01, 100))
def test_partition_properties(seed, n, p, c):
    g = random_graph(np.random.default_rng(seed), n, p)
    d = cluster_daily(g)
    deg = g.degrees()
    # partition of edge-bearing nodes, singletons are the rest
    assert set().union(*d.clusters, d.singletons) == set(g.nodes)
    assert sum(len(x) for x in d.clusters) == len(frozenset().union(*d.clusters))
    assert d.singletons == {z for z in g.nodes if deg[z] == 0}
    if g.edges:
        active = [z for z in g.nodes if deg[z] > 0]
        assert d.modularity >= modularity(g, [frozenset([z]) for z in active]) - 1e-12
        assert d.modularity >= modularity(g, [frozenset(active)]) - 1e-12
    # determinism and scale invariance
    assert cluster_daily(g) == d
    assert cluster_daily(g.scaled(c)).clusters == d.clusters


# fuzzy intersection ----------------------------------------------------------

def test_identical_partitions():
    part = [frozenset("abc"), frozenset("de")]
    for alpha in (0.1, 0.5, 1.0):
        mfas = fuzzy_intersect(daily_from_partitions([part] * 5), alpha)
        assert {m.zones for m in mfas} == set(part)
        assert all(w == 1.0 for m in mfas for _, w in m.members)
        assert all(m.support_days == 5 for m in mfas)


def _three_of_four():
    ab = [frozenset("ab"), frozenset("cd")]
    swap = [frozenset("ac"), frozenset("bd")]
    return daily_from_partitions([ab, ab, ab, swap])


def test_three_of_four_days():
    mfas = fuzzy_intersect(_three_of_four(), 0.5)
    ab = next(m for m in mfas if m.zones == {"a", "b"})
    assert dict(ab.members) == {"a": 0.75, "b": 0.75}
    assert ab.support_days == 3 and ab.alpha == 0.5


def test_alpha_above_score():
    assert not any({"a", "b"} <= m.zones for m in fuzzy_intersect(_three_of_four(), 0.8))


@pytest.mark.parametrize("alpha", [0.0, -0.1, 1.5])
def test_alpha_out_of_range(alpha):
    with pytest.raises(AlphaOutOfRange):
        fuzzy_intersect(_three_of_four(), alpha)


def test_membership_at_least_alpha():
    rng = np.random.default_rng(5)
    zones = list("abcdefgh")
    parts = []
    for _ in range(10):
        labels = rng.integers(0, 3, len(zones))
        parts.append([frozenset(z for z, l in zip(zones, labels) if l == k) for k in range(3)
                      if any(labels == k)])
    for alpha in (0.3, 0.5, 0.7):
        for m in fuzzy_intersect(daily_from_partitions(parts), alpha):
            assert len(m.members) >= 2 and all(w >= alpha for _, w in m.members)


def test_stability():
    st_ = daily_stability(_three_of_four())
    assert [round(v, 6) for _, v in st_] == [1.0, 1.0, 0.0]


# files and geometry ----------------------------------------------------------

def test_daily_file_round_trip(tmp_path):
    d = [DailyMFA(DAY, (frozenset("ab"), frozenset("cde")), 0.25, frozenset("z")),
         DailyMFA(date(2020, 3, 3), (frozenset("abc"),), 0.1)]
    write_daily_mfa(d, tmp_path / "d.csv")
    assert read_daily_mfa(tmp_path / "d.csv") == d


def test_membership_file(tmp_path):
    write_membership([PersistentMFA(1, (("a", 0.75), ("b", 1.0)), 0.5, 3)], tmp_path / "m.csv")
    assert (tmp_path / "m.csv").read_text().splitlines() == [
        "mfa_id,zone_code,membership,support_days", "1,a,0.75,3", "1,b,1.0,3"]


def _geoms():
    return {z: box(i, 0, i + 1, 1) for i, z in enumerate("abcd")}


def test_geojson_two_features():
    mfas = [PersistentMFA(1, (("a", 1.0), ("b", 1.0)), 0.5, 4), PersistentMFA(2, (("c", 1.0), ("d", 0.9)), 0.5, 2)]
    doc = json.loads(json.dumps(export_mfa_geojson(mfas, _geoms())))
    assert doc["type"] == "FeatureCollection" and len(doc["features"]) == 2
    f = doc["features"][0]
    assert f["properties"] == {"id": 1, "support_days": 4, "member_count": 2}
    assert shape(f["geometry"]).equals(box(0, 0, 2, 1))
    ring = f["geometry"]["coordinates"][0]
    area2 = sum(x0 * y1 - x1 * y0 for (x0, y0), (x1, y1) in zip(ring, ring[1:]))
    assert area2 > 0  # exterior ring counter-clockwise


def test_geojson_empty_and_missing():
    assert export_mfa_geojson([], {}) == {"type": "FeatureCollection", "features": []}
    with pytest.raises(MissingGeometry) as err:
        export_mfa_geojson([PersistentMFA(1, (("a", 1.0), ("q", 1.0)), 0.5, 1)], _geoms())
    assert "q" in str(err.value)


def test_load_geometries_csv_and_geojson(tmp_path):
    (tmp_path / "g.csv").write_text("zone_code,wkt\na,\"POLYGON ((0 0, 1 0, 1 1, 0 1, 0 0))\"\n")
    assert load_zone_geometries(tmp_path / "g.csv")["a"].area == 1.0
    doc = {"type": "FeatureCollection", "features": [
        {"type": "Feature", "properties": {"zone_code": "b"},
         "geometry": {"type": "Polygon", "coordinates": [[[0, 0], [2, 0], [2, 1], [0, 1], [0, 0]]]}}]}
    (tmp_path / "g.geojson").write_text(json.dumps(doc))
    assert load_zone_geometries(tmp_path / "g.geojson")["b"].area == 2.0
