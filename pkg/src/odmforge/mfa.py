"""Mobility Functional Areas.

Daily areas are communities of the undirected movement graph at provider
granularity, found by greedy modularity maximisation.  Persistent areas come
from how often two zones share a daily community:

    s(i, j) = days i and j are in the same community / days both are clustered

Zones joined by s >= alpha form persistent areas; a zone's membership is its
mean s to the other members, and members below alpha are pruned so every
listed membership is at least alpha.
"""

from __future__ import annotations

import json
import logging
from collections import deque
from dataclasses import dataclass, field
from datetime import date
from pathlib import Path
from typing import Mapping, Sequence

import numpy as np
import pandas as pd

from .errors import AlphaOutOfRange, EmptyDay, MissingGeometry
from .harmonise import HarmonizedODM
from .ingest import ATTRIBUTE_COLUMNS, CanonicalFeed

logger = logging.getLogger(__name__)

DEFAULT_ALPHA = 0.5
_MAX_PASSES = 1000


@dataclass(frozen=True)
class MobilityGraph:
    day: date | None
    nodes: tuple[str, ...]
    edges: Mapping[tuple[str, str], float] = field(repr=False)

    def __post_init__(self):
        nodes = tuple(sorted(set(self.nodes)))
        object.__setattr__(self, "nodes", nodes)
        known = set(nodes)
        clean = {}
        for (a, b), w in self.edges.items():
            if a == b:
                raise ValueError(f"self-loop on {a}")
            if not w > 0:
                raise ValueError(f"edge {a}-{b} has non-positive weight {w}")
            if a not in known or b not in known:
                raise ValueError(f"edge {a}-{b} references an unknown node")
            key = (a, b) if a < b else (b, a)
            clean[key] = clean.get(key, 0.0) + float(w)
        object.__setattr__(self, "edges", dict(sorted(clean.items())))

    @property
    def total_weight(self) -> float:
        return float(sum(self.edges.values()))

    def degrees(self) -> dict[str, float]:
        deg = dict.fromkeys(self.nodes, 0.0)
        for (a, b), w in self.edges.items():
            deg[a] += w
            deg[b] += w
        return deg

    def scaled(self, c: float) -> "MobilityGraph":
        return MobilityGraph(self.day, self.nodes, {k: w * c for k, w in self.edges.items()})


@dataclass(frozen=True)
class DailyMFA:
    day: date | None
    clusters: tuple[frozenset[str], ...]
    modularity: float
    singletons: frozenset[str] = frozenset()

    def __post_init__(self):
        clusters = tuple(sorted((frozenset(c) for c in self.clusters), key=min))
        object.__setattr__(self, "clusters", clusters)
        object.__setattr__(self, "singletons", frozenset(self.singletons))
        seen: set[str] = set()
        for c in clusters:
            if not c:
                raise ValueError("empty cluster")
            if seen & c:
                raise ValueError(f"clusters overlap on {sorted(seen & c)}")
            seen |= c
        if seen & self.singletons:
            raise ValueError("a zone is both clustered and a singleton")

    @property
    def nodes(self) -> frozenset[str]:
        return frozenset().union(*self.clusters, self.singletons)

    def labels(self) -> dict[str, int]:
        return {z: i for i, c in enumerate(self.clusters) for z in c}


@dataclass(frozen=True)
class PersistentMFA:
    id: int
    members: tuple[tuple[str, float], ...]
    alpha: float
    support_days: int

    @property
    def zones(self) -> frozenset[str]:
        return frozenset(z for z, _ in self.members)


# ---------------------------------------------------------------------------
# graph

def build_graph(source: HarmonizedODM | CanonicalFeed, day: date | None = None) -> MobilityGraph:
    """Symmetrised movement graph of one day; self-flows only add nodes."""
    if isinstance(source, HarmonizedODM):
        if day is not None and day != source.day:
            raise EmptyDay(f"matrix is for {source.day}, not {day}")
        t = source.table
        day = source.day
    else:
        f = source.frame
        if f.empty:
            raise EmptyDay("feed is empty")
        days = f["window_start"].dt.normalize()
        if day is None:
            uniq = days.unique()
            if len(uniq) != 1:
                raise ValueError("feed spans several days; pass the day to build")
            day = pd.Timestamp(uniq[0]).date()
        mask = (days == pd.Timestamp(day)).to_numpy()
        for col in ATTRIBUTE_COLUMNS:
            mask &= (f[col] == "").to_numpy()
        t = f.loc[mask, ["origin", "destination", "count"]]
    if t.empty:
        raise EmptyDay(f"no movements on {day}")

    o = t["origin"].astype(str).to_numpy()
    d = t["destination"].astype(str).to_numpy()
    c = np.nan_to_num(t["count"].to_numpy(dtype=float))
    nodes = sorted(set(o) | set(d))
    keep = (o != d) & (c > 0)
    a = np.where(o < d, o, d)[keep]
    b = np.where(o < d, d, o)[keep]
    if keep.any():
        summed = pd.DataFrame({"a": a, "b": b, "w": c[keep]}).groupby(["a", "b"], sort=True)["w"].sum()
        edges = {(x, y): float(w) for (x, y), w in summed.items()}
    else:
        edges = {}
    return MobilityGraph(day, tuple(nodes), edges)


def modularity(graph: MobilityGraph, clusters: Sequence[frozenset[str]] | Sequence[set[str]],
               resolution: float = 1.0) -> float:
    """Weighted Newman modularity of a partition of the graph's edge-bearing nodes."""
    m = graph.total_weight
    if m == 0:
        return 0.0
    label = {z: i for i, c in enumerate(clusters) for z in c}
    internal = np.zeros(len(clusters))
    degree = np.zeros(len(clusters))
    for (a, b), w in graph.edges.items():
        la, lb = label.get(a), label.get(b)
        if la is None or lb is None:
            raise ValueError(f"edge {a}-{b} touches a node outside the partition")
        if la == lb:
            internal[la] += w
        degree[la] += w
        degree[lb] += w
    return float(np.sum(internal / m - resolution * (degree / (2 * m)) ** 2))


# ---------------------------------------------------------------------------
# Louvain

def _move_nodes(adj: list[dict[int, float]], k: list[float], m2: float, resolution: float, tol: float):
    """Local moving phase.  Nodes are visited in index order; on equal gain
    the community holding the lowest-indexed node wins."""
    n = len(adj)
    comm = list(range(n))
    members = [{i} for i in range(n)]
    tot = list(k)
    moved_any = False
    for _ in range(_MAX_PASSES):
        moved = 0
        for i in range(n):
            ci, ki = comm[i], k[i]
            links: dict[int, float] = {}
            for j, w in adj[i].items():
                cj = comm[j]
                links[cj] = links.get(cj, 0.0) + w
            tot[ci] -= ki
            members[ci].discard(i)
            scale = resolution * ki / m2
            best = ci
            best_gain = links.get(ci, 0.0) - tot[ci] * scale
            best_low = min(members[ci]) if members[ci] else i
            for c, w in links.items():
                if c == ci:
                    continue
                gain = w - tot[c] * scale
                if gain > best_gain + tol:
                    best, best_gain, best_low = c, gain, min(members[c])
                elif gain >= best_gain - tol:
                    low = min(members[c])
                    if low < best_low:
                        best, best_gain, best_low = c, gain, low
            comm[i] = best
            tot[best] += ki
            members[best].add(i)
            if best != ci:
                moved += 1
        if not moved:
            break
        moved_any = True
    else:
        logger.warning("local moving stopped after %d passes", _MAX_PASSES)
    return comm, moved_any


def _aggregate(adj, selfw, comm):
    # relabel communities by their lowest member so aggregated order follows zone order
    first: dict[int, int] = {}
    for i, c in enumerate(comm):
        first.setdefault(c, i)
    order = sorted(first, key=first.get)
    relabel = {c: r for r, c in enumerate(order)}
    lab = [relabel[c] for c in comm]
    n = len(order)
    new_adj: list[dict[int, float]] = [dict() for _ in range(n)]
    new_self = [0.0] * n
    for i, nbrs in enumerate(adj):
        li = lab[i]
        new_self[li] += selfw[i]
        for j, w in nbrs.items():
            lj = lab[j]
            if li == lj:
                new_self[li] += w / 2.0
            else:
                new_adj[li][lj] = new_adj[li].get(lj, 0.0) + w
    return new_adj, new_self, lab


def louvain_partition(graph: MobilityGraph, resolution: float = 1.0) -> list[frozenset[str]]:
    """Deterministic Louvain over the graph's edge-bearing nodes."""
    deg = graph.degrees()
    active = [z for z in graph.nodes if deg[z] > 0]
    if not active:
        return []
    index = {z: i for i, z in enumerate(active)}
    adj: list[dict[int, float]] = [dict() for _ in active]
    for (a, b), w in graph.edges.items():
        i, j = index[a], index[b]
        adj[i][j] = adj[i].get(j, 0.0) + w
        adj[j][i] = adj[j].get(i, 0.0) + w
    selfw = [0.0] * len(active)
    m2 = 2.0 * graph.total_weight
    tol = 1e-12 * m2
    groups = [[i] for i in range(len(active))]  # original nodes per current super-node

    while True:
        k = [sum(nb.values()) + 2.0 * s for nb, s in zip(adj, selfw)]
        comm, moved = _move_nodes(adj, k, m2, resolution, tol)
        if not moved:
            break
        adj, selfw, lab = _aggregate(adj, selfw, comm)
        new_groups: list[list[int]] = [[] for _ in range(len(adj))]
        for node, l in enumerate(lab):
            new_groups[l].extend(groups[node])
        groups = new_groups
        if len(adj) == 1:
            break
    clusters = [frozenset(active[i] for i in g) for g in groups]
    return sorted(clusters, key=min)


def connected_components(graph: MobilityGraph) -> list[frozenset[str]]:
    deg = graph.degrees()
    nbrs: dict[str, list[str]] = {z: [] for z in graph.nodes if deg[z] > 0}
    for a, b in graph.edges:
        nbrs[a].append(b)
        nbrs[b].append(a)
    seen: set[str] = set()
    out = []
    for z in sorted(nbrs):
        if z in seen:
            continue
        comp, queue = {z}, deque([z])
        seen.add(z)
        while queue:
            for y in nbrs[queue.popleft()]:
                if y not in seen:
                    seen.add(y)
                    comp.add(y)
                    queue.append(y)
        out.append(frozenset(comp))
    return out


def cluster_daily(graph: MobilityGraph, resolution: float = 1.0) -> DailyMFA:
    """Partition one day's graph into disjoint areas of dense exchange.

    Zero-degree zones are returned as singletons, not clusters.  If the greedy
    result scores below the connected-components partition (which can never
    score below one all-inclusive cluster) the components are returned.
    """
    deg = graph.degrees()
    singletons = frozenset(z for z in graph.nodes if deg[z] == 0)
    clusters = louvain_partition(graph, resolution)
    q = modularity(graph, clusters, resolution)
    comps = connected_components(graph)
    q_comp = modularity(graph, comps, resolution)
    if q_comp > q + 1e-12:
        logger.info("%s: components partition beats greedy result (%.6f > %.6f)", graph.day, q_comp, q)
        clusters, q = comps, q_comp
    return DailyMFA(graph.day, tuple(clusters), q, singletons)


# ---------------------------------------------------------------------------
# persistent areas

def co_assignment(daily: Sequence[DailyMFA]) -> tuple[list[str], np.ndarray, np.ndarray]:
    """Zones, same-cluster day counts and both-clustered day counts."""
    zones = sorted(set().union(*(set().union(*d.clusters) for d in daily if d.clusters)))
    idx = {z: i for i, z in enumerate(zones)}
    n = len(zones)
    together = np.zeros((n, n), dtype=np.int32)
    both = np.zeros((n, n), dtype=np.int32)
    for d in daily:
        lab = np.full(n, -1, dtype=np.int64)
        for ci, c in enumerate(d.clusters):
            lab[[idx[z] for z in c]] = ci
        present = lab >= 0
        both += np.outer(present, present)
        together += (lab[:, None] == lab[None, :]) & present[:, None]
    return zones, together, both


def _components(nodes: list[int], adj: np.ndarray) -> list[list[int]]:
    remaining = set(nodes)
    out = []
    for start in nodes:
        if start not in remaining:
            continue
        comp, queue = [start], deque([start])
        remaining.discard(start)
        while queue:
            u = queue.popleft()
            for v in np.flatnonzero(adj[u]):
                v = int(v)
                if v in remaining:
                    remaining.discard(v)
                    comp.append(v)
                    queue.append(v)
        out.append(sorted(comp))
    return out


def fuzzy_intersect(daily: Sequence[DailyMFA], alpha: float = DEFAULT_ALPHA) -> list[PersistentMFA]:
    """Reduce daily partitions to persistent areas with fuzzy membership."""
    if not 0.0 < alpha <= 1.0:
        raise AlphaOutOfRange(f"alpha={alpha} outside (0, 1]")
    if not daily:
        raise ValueError("need at least one daily partition")
    zones, together, both = co_assignment(daily)
    if not zones:
        return []
    with np.errstate(divide="ignore", invalid="ignore"):
        s = np.where(both > 0, together / np.maximum(both, 1), 0.0)
    np.fill_diagonal(s, 0.0)
    linked = s >= alpha

    final: list[list[int]] = []
    work = deque(c for c in _components(list(range(len(zones))), linked) if len(c) > 1)
    while work:
        comp = work.popleft()
        sub = s[np.ix_(comp, comp)]
        member = sub.sum(axis=1) / (len(comp) - 1)
        worst = int(np.argmin(member))  # first minimum = lowest zone code
        if member[worst] >= alpha:
            final.append(comp)
            continue
        rest = [z for i, z in enumerate(comp) if i != worst]
        work.extend(c for c in _components(rest, linked) if len(c) > 1)

    final.sort(key=lambda c: zones[c[0]])
    out = []
    for n, comp in enumerate(final, start=1):
        sub = s[np.ix_(comp, comp)]
        member = sub.sum(axis=1) / (len(comp) - 1)
        zs = {zones[i] for i in comp}
        support = sum(1 for d in daily if any(len(c & zs) >= 2 for c in d.clusters))
        members = tuple((zones[i], float(member[j])) for j, i in enumerate(comp))
        out.append(PersistentMFA(n, members, alpha, support))
    return out


def daily_stability(daily: Sequence[DailyMFA]) -> list[tuple[date, float]]:
    """Jaccard similarity of co-clustered zone pairs between consecutive days."""
    def pairs(d: DailyMFA) -> set[tuple[str, str]]:
        out = set()
        for c in d.clusters:
            cs = sorted(c)
            out.update((a, b) for i, a in enumerate(cs) for b in cs[i + 1:])
        return out

    ordered = sorted(daily, key=lambda d: d.day)
    result = []
    for prev, cur in zip(ordered, ordered[1:]):
        p, c = pairs(prev), pairs(cur)
        union = p | c
        result.append((cur.day, len(p & c) / len(union) if union else 1.0))
    return result


# ---------------------------------------------------------------------------
# files

def write_daily_mfa(daily: Sequence[DailyMFA], path: str | Path) -> None:
    rows = []
    for d in sorted(daily, key=lambda x: x.day):
        for ci, c in enumerate(d.clusters):
            rows.extend((d.day, z, ci, round(d.modularity, 12)) for z in sorted(c))
        rows.extend((d.day, z, "", round(d.modularity, 12)) for z in sorted(d.singletons))
    pd.DataFrame(rows, columns=["day", "zone_code", "cluster", "modularity"]).to_csv(
        path, index=False, lineterminator="\n")


def read_daily_mfa(path: str | Path) -> list[DailyMFA]:
    df = pd.read_csv(path, dtype={"zone_code": str, "cluster": str, "day": str}, keep_default_na=False)
    out = []
    for day, g in df.groupby("day", sort=True):
        clusters: dict[int, set[str]] = {}
        singles = set()
        for z, c in zip(g["zone_code"], g["cluster"]):
            if c == "":
                singles.add(z)
            else:
                clusters.setdefault(int(c), set()).add(z)
        q = float(g["modularity"].iloc[0]) if len(g) else 0.0
        out.append(DailyMFA(date.fromisoformat(day), tuple(frozenset(v) for _, v in sorted(clusters.items())),
                            q, frozenset(singles)))
    return out


def write_membership(mfas: Sequence[PersistentMFA], path: str | Path) -> None:
    rows = [(m.id, z, round(w, 12), m.support_days) for m in mfas for z, w in m.members]
    pd.DataFrame(rows, columns=["mfa_id", "zone_code", "membership", "support_days"]).to_csv(
        path, index=False, lineterminator="\n")


def load_zone_geometries(path: str | Path) -> dict:
    """Zone geometries from a CSV (``zone_code``, ``wkt``) or a GeoJSON file."""
    from shapely import wkt
    from shapely.geometry import shape

    path = Path(path)
    if path.suffix.lower() in (".geojson", ".json"):
        doc = json.loads(path.read_text(encoding="utf-8"))
        out = {}
        for feat in doc.get("features", []):
            props = feat.get("properties") or {}
            code = props.get("zone_code", feat.get("id"))
            out[str(code)] = shape(feat["geometry"])
        return out
    df = pd.read_csv(path, dtype=str, keep_default_na=False)
    col = "wkt" if "wkt" in df.columns else "geometry"
    return {z: wkt.loads(g) for z, g in zip(df["zone_code"], df[col])}


def export_mfa_geojson(mfas: Sequence[PersistentMFA], geometries: Mapping[str, object]) -> dict:
    """One RFC 7946 FeatureCollection; each area is the union of its zones."""
    from shapely.geometry import mapping
    from shapely.geometry.polygon import orient
    from shapely.ops import unary_union

    missing = sorted({z for m in mfas for z, _ in m.members if z not in geometries})
    if missing:
        raise MissingGeometry(missing)
    features = []
    for m in mfas:
        geom = unary_union([geometries[z] for z, _ in m.members])
        if geom.geom_type == "Polygon":
            geom = orient(geom, 1.0)
        elif geom.geom_type == "MultiPolygon":
            geom = type(geom)([orient(p, 1.0) for p in geom.geoms])
        features.append({
            "type": "Feature",
            "geometry": mapping(geom),
            "properties": {"id": m.id, "support_days": m.support_days, "member_count": len(m.members)},
        })
    return {"type": "FeatureCollection", "features": features}


def write_geojson(doc: dict, path: str | Path) -> None:
    Path(path).write_text(json.dumps(doc, sort_keys=True) + "\n", encoding="utf-8")
