"""Independent oracles and random fixtures shared by the test modules."""

from __future__ import annotations

import itertools
from datetime import date, datetime, timedelta

import numpy as np
import pandas as pd

from odmforge.harmonise import HarmonizedODM, ZoneCrosswalk
from odmforge.ingest import ATTRIBUTE_COLUMNS, ProviderProfile, canonicalize
from odmforge.mfa import DailyMFA, MobilityGraph


def make_profile(**kw) -> ProviderProfile:
    base = dict(provider_id="P", zoning_id="Z", window_minutes=60, stop_time_minutes=30,
                extrapolated=False, market_share=0.5, threshold_k=1)
    base.update(kw)
    return ProviderProfile(**base)


def feed_from_rows(rows, profile: ProviderProfile | None = None, **attrs):
    """rows: (origin, destination, 'YYYY-MM-DDTHH:MM' or datetime, count)."""
    profile = profile or make_profile()
    frame = pd.DataFrame({
        "window_start": pd.to_datetime([r[2] for r in rows]),
        "origin": [r[0] for r in rows],
        "destination": [r[1] for r in rows],
        "count": [float(r[3]) for r in rows],
    })
    for col, values in attrs.items():
        frame[col] = values
    return canonicalize(frame, profile)


def nuts3_codes(n: int, country: str = "XX") -> list[str]:
    """n NUTS3 codes spread over a two-branch hierarchy."""
    out = []
    for i in range(n):
        out.append(f"{country}{1 + i % 2}{1 + (i // 2) % 3}{i // 6}")
    return sorted(set(out))


def random_crosswalk(rng, zones, nuts3, zoning_id="Z", max_targets=3) -> ZoneCrosswalk:
    entries = {}
    for z in zones:
        k = int(rng.integers(1, min(max_targets, len(nuts3)) + 1))
        targets = rng.choice(len(nuts3), size=k, replace=False)
        w = rng.dirichlet(np.ones(k))
        entries[z] = [(nuts3[t], float(x)) for t, x in zip(targets, w)]
    return ZoneCrosswalk(zoning_id, entries)


def random_feed(rng, zones, n_cells, window=60, days=2, start=date(2020, 3, 2), integer=True,
                profile=None):
    profile = profile or make_profile(window_minutes=window)
    per_day = 1440 // window
    day = rng.integers(0, days, n_cells)
    slot = rng.integers(0, per_day, n_cells)
    ts = [datetime.combine(start + timedelta(days=int(d)), datetime.min.time()) + timedelta(minutes=int(s) * window)
          for d, s in zip(day, slot)]
    counts = rng.integers(1, 1000, n_cells).astype(float) if integer else rng.uniform(0.1, 1000, n_cells)
    frame = pd.DataFrame({
        "window_start": pd.to_datetime(ts),
        "origin": rng.choice(zones, n_cells),
        "destination": rng.choice(zones, n_cells),
        "count": counts,
    })
    return canonicalize(frame, profile)


def random_odm(rng, regions, day, n_cells, provider="P", integer=True) -> HarmonizedODM:
    cells = {}
    for _ in range(n_cells):
        o, d = rng.choice(regions), rng.choice(regions)
        c = float(rng.integers(1, 500)) if integer else float(rng.uniform(0.5, 500))
        cells[(str(o), str(d))] = cells.get((str(o), str(d)), 0.0) + c
    return HarmonizedODM.from_cells(day, cells, 3, provider)


def cells_by_key(feed) -> dict:
    f = feed.frame
    keys = ["window_start", "origin", "destination", *ATTRIBUTE_COLUMNS]
    if "day_class" in f:
        keys.insert(1, "day_class")
    return {tuple(str(x) for x in k): c for k, c in zip(f[keys].itertuples(index=False), f["count"])}


# ---------------------------------------------------------------------------
# clustering oracles

def set_partitions(items):
    """Every set partition of ``items`` (Bell-number many)."""
    items = list(items)
    if not items:
        yield []
        return
    first, rest = items[0], items[1:]
    for part in set_partitions(rest):
        for i in range(len(part)):
            yield part[:i] + [[first] + part[i]] + part[i + 1:]
        yield [[first]] + part


def modularity_dense(graph: MobilityGraph, clusters) -> float:
    """Textbook Q = 1/2m * sum_ij (A_ij - k_i k_j / 2m) delta(c_i, c_j)."""
    nodes = sorted({z for c in clusters for z in c})
    idx = {z: i for i, z in enumerate(nodes)}
    a = np.zeros((len(nodes), len(nodes)))
    for (u, v), w in graph.edges.items():
        a[idx[u], idx[v]] += w
        a[idx[v], idx[u]] += w
    m2 = a.sum()
    if m2 == 0:
        return 0.0
    k = a.sum(axis=1)
    lab = np.empty(len(nodes), dtype=int)
    for ci, c in enumerate(clusters):
        for z in c:
            lab[idx[z]] = ci
    same = lab[:, None] == lab[None, :]
    return float(((a - np.outer(k, k) / m2) * same).sum() / m2)


def exhaustive_best(graph: MobilityGraph):
    """(best Q, every partition attaining it within 1e-12) over edge-bearing nodes."""
    deg = graph.degrees()
    active = [z for z in graph.nodes if deg[z] > 0]
    scored = [(modularity_dense(graph, p), p) for p in set_partitions(active)]
    best = max(q for q, _ in scored)
    winners = [frozenset(frozenset(c) for c in p) for q, p in scored if q >= best - 1e-12]
    return best, winners


def random_graph(rng, n_nodes: int, p: float = 0.5) -> MobilityGraph:
    nodes = [f"n{i}" for i in range(n_nodes)]
    edges = {}
    for i, j in itertools.combinations(range(n_nodes), 2):
        if rng.random() < p:
            edges[(nodes[i], nodes[j])] = float(rng.integers(1, 10))
    return MobilityGraph(None, tuple(nodes), edges)


def two_cliques_bridge() -> MobilityGraph:
    edges = {}
    for block in (("a", "b", "c", "d"), ("e", "f", "g", "h")):
        for u, v in itertools.combinations(block, 2):
            edges[(u, v)] = 10.0
    edges[("d", "e")] = 1.0
    return MobilityGraph(None, tuple("abcdefgh"), edges)


def planted_blocks(rng, sizes=(3, 3, 2), inner=(8, 12), outer=1.0, p_out=0.2) -> MobilityGraph:
    nodes, block = [], []
    for b, s in enumerate(sizes):
        for _ in range(s):
            block.append(b)
            nodes.append(f"v{len(nodes)}")
    edges = {}
    for i, j in itertools.combinations(range(len(nodes)), 2):
        if block[i] == block[j]:
            edges[(nodes[i], nodes[j])] = float(rng.integers(*inner))
        elif rng.random() < p_out:
            edges[(nodes[i], nodes[j])] = outer
    # keep blocks linked so the graph is connected
    firsts = [block.index(b) for b in range(len(sizes))]
    for a, b in zip(firsts, firsts[1:]):
        edges.setdefault((nodes[a], nodes[b]), outer)
    return MobilityGraph(None, tuple(nodes), edges)


# ---------------------------------------------------------------------------
# fuzzy intersection oracle

def random_partition(rng, zones):
    labels = rng.integers(0, max(1, len(zones) // 2 + 1), len(zones))
    groups: dict[int, set] = {}
    for z, l in zip(zones, labels):
        groups.setdefault(int(l), set()).add(z)
    return [frozenset(g) for g in groups.values()]


def daily_from_partitions(partitions, start=date(2020, 1, 6)) -> list[DailyMFA]:
    return [DailyMFA(start + timedelta(days=i), tuple(p), 0.0) for i, p in enumerate(partitions)]


def meet_oracle(partitions) -> set[frozenset]:
    """Blocks (size >= 2) of the common refinement of full partitions."""
    zones = sorted(set().union(*partitions[0]))
    sig: dict[tuple, set] = {}
    for z in zones:
        key = tuple(next(i for i, c in enumerate(p) if z in c) for p in partitions)
        sig.setdefault(key, set()).add(z)
    return {frozenset(s) for s in sig.values() if len(s) > 1}


def jaccard(a, b) -> float:
    a, b = set(a), set(b)
    return len(a & b) / len(a | b) if a | b else 1.0
