"""The ten numbered acceptance criteria, run at their stated tolerances.

A pass/fail line per criterion is printed in the terminal summary
(see ``conftest.py``).  Run just this file with::

    pytest tests/test_acceptance.py -v
"""

from __future__ import annotations

import itertools
import json
import subprocess
import sys
import time
from datetime import date, timedelta
from pathlib import Path

import numpy as np
import pandas as pd
import pytest

from helpers import (
    daily_from_partitions,
    exhaustive_best,
    jaccard,
    meet_oracle,
    modularity_dense,
    nuts3_codes,
    planted_blocks,
    random_crosswalk,
    random_feed,
    random_graph,
    random_odm,
    random_partition,
    two_cliques_bridge,
)
from odmforge.cli import load_run_config, run_pipeline
from odmforge.harmonise import HarmonizedODM, map_zones, rebin_time
from odmforge.ingest import load_profile
from odmforge.mfa import cluster_daily, fuzzy_intersect
from odmforge.privacy import COUNT_COLUMNS, SuppressionPolicy, small_counts, suppress
from odmforge.products import compute_trend, connectivity_matrix, mobility_indicators
from odmforge.synth import constant_scenario, generate_scenario

HERE = Path(__file__).parent


# 1 -------------------------------------------------------------------------

@pytest.mark.acceptance(1, "conservation: 1000 random (feed, crosswalk) pairs")
def test_conservation_suite():
    rng = np.random.default_rng(1001)
    t0 = time.perf_counter()
    worst = 0.0
    for trial in range(1000):
        n_zones = int(rng.integers(1, 12))
        zones = [f"z{i}" for i in range(n_zones)]
        nuts3 = nuts3_codes(int(rng.integers(1, 10)))
        window = int(rng.choice([60, 120, 240, 480, 1440]))
        feed = random_feed(rng, zones, int(rng.integers(1, 60)), window=window, days=int(rng.integers(1, 4)))
        xw = random_crosswalk(rng, zones, nuts3)
        level = int(rng.integers(0, 4))
        mapped = map_zones(feed, xw, level)
        rel = abs(mapped.total - feed.total) / feed.total
        worst = max(worst, rel)
        assert rel <= 1e-9, f"trial {trial}: relative drift {rel}"
        daily = rebin_time(feed, "daily")
        weekly = rebin_time(feed, "weekly")
        assert daily.total == feed.total
        assert weekly.total == feed.total
    elapsed = time.perf_counter() - t0
    print(f"max relative drift {worst:.2e}, {elapsed:.1f} s")
    assert elapsed < 30


# 2 -------------------------------------------------------------------------

@pytest.mark.acceptance(2, "flow balance on 200 random single-country matrices")
def test_flow_balance_suite():
    rng = np.random.default_rng(2002)
    regions = nuts3_codes(12)
    for trial in range(200):
        odm = random_odm(rng, regions[: int(rng.integers(2, 13))], date(2020, 3, 2), int(rng.integers(1, 80)))
        for level in (0, 1, 2, 3):
            series = mobility_indicators([odm], level)
            inward = sum(s.points[0].inward for s in series)
            outward = sum(s.points[0].outward for s in series)
            assert inward == outward, f"trial {trial} level {level}"
            for s in series:
                p = s.points[0]
                assert abs(p.total - (p.internal + p.inward + p.outward)) <= 1e-9 * max(1.0, p.total)


# 3 -------------------------------------------------------------------------

@pytest.mark.acceptance(3, "connectivity row sums equal weekday outward sums")
def test_marginal_consistency():
    rng = np.random.default_rng(3003)
    regions = nuts3_codes(10)
    for trial in range(50):
        monday = date(2020, 1, 6) + timedelta(weeks=int(rng.integers(0, 50)))
        days = [monday + timedelta(days=i) for i in range(7) if rng.random() < 0.85]
        odms = [random_odm(rng, regions, d, int(rng.integers(5, 60)), integer=False) for d in days]
        if not odms:
            continue
        weekday, _ = connectivity_matrix(odms, monday, k_out=None)
        outward = {}
        for s in mobility_indicators([o for o in odms if o.day.weekday() < 5], 3):
            outward[s.region] = sum(p.outward for p in s.points)
        rows = weekday.row_sums()
        for region, expected in outward.items():
            got = rows.get(region, 0.0)
            assert abs(got - expected) <= 1e-9 * max(1.0, expected), (trial, region, got, expected)


# 4 -------------------------------------------------------------------------

def _is_partition(graph, daily):
    deg = graph.degrees()
    covered = set().union(*daily.clusters) if daily.clusters else set()
    assert covered | daily.singletons == set(graph.nodes)
    assert daily.singletons == {z for z in graph.nodes if deg[z] == 0}
    assert sum(len(c) for c in daily.clusters) == len(covered)


@pytest.mark.acceptance(4, "clustering against the exhaustive modularity oracle")
def test_clustering_oracle():
    rng = np.random.default_rng(4004)
    corpus = [random_graph(rng, int(rng.integers(2, 9)), float(rng.uniform(0.2, 0.8))) for _ in range(100)]
    corpus = [g for g in corpus if g.edges]
    oracle = [exhaustive_best(g) for g in corpus]  # oracle first

    separable = [two_cliques_bridge()] + [
        planted_blocks(rng, sizes) for sizes in ((3, 3, 2), (2, 3, 3), (3, 2, 3), (2, 2, 2), (3, 3, 2))
    ]
    for g in separable:
        best, winners = exhaustive_best(g)
        assert len(winners) == 1, "separable fixture must have a unique optimum"
        got = cluster_daily(g)
        assert frozenset(got.clusters) == winners[0]
        assert abs(got.modularity - best) <= 1e-12

    optimal = 0
    for g, (best, _) in zip(corpus, oracle):
        got = cluster_daily(g)
        _is_partition(g, got)
        active = [z for z in g.nodes if g.degrees()[z] > 0]
        q_single = modularity_dense(g, [[z] for z in active])
        q_one = modularity_dense(g, [active])
        assert abs(got.modularity - modularity_dense(g, got.clusters)) <= 1e-12
        assert got.modularity >= q_single - 1e-12
        assert got.modularity >= q_one - 1e-12
        assert got.modularity <= best + 1e-12
        assert cluster_daily(g) == got  # deterministic
        optimal += got.modularity >= best - 1e-12
    print(f"{optimal}/{len(corpus)} random graphs reach the exhaustive optimum")


# 5 -------------------------------------------------------------------------

@pytest.mark.acceptance(5, "fuzzy intersection at alpha -> 1 equals the meet of partitions")
def test_fuzzy_intersection_oracle():
    rng = np.random.default_rng(5005)
    alpha = 1 - 1e-12
    for trial in range(100):
        zones = [f"z{i}" for i in range(int(rng.integers(2, 11)))]
        partitions = [random_partition(rng, zones) for _ in range(int(rng.integers(1, 7)))]
        expected = meet_oracle(partitions)  # oracle first
        got = fuzzy_intersect(daily_from_partitions(partitions), alpha)
        assert {m.zones for m in got} == expected, f"trial {trial}"
        assert all(w == 1.0 for m in got for _, w in m.members)


# 6 -------------------------------------------------------------------------

def _numeric_count_violations(root: Path, k_out: int) -> list[str]:
    bad = []
    for path in sorted(root.rglob("*.csv")):
        df = pd.read_csv(path)
        hits = small_counts(df, k_out, COUNT_COLUMNS)
        if len(hits):
            bad.append(f"{path.relative_to(root)}: {len(hits)} row(s)")
    return bad


@pytest.mark.acceptance(6, "no emitted count in (0, k_out); suppression monotone in k_out")
def test_privacy_property(default_run, tmp_path):
    scen, cfg, result, _ = default_run
    assert result.exit_code == 0, result.message
    k_eff = result.manifest["k_out_effective"]
    assert k_eff >= cfg.k_out
    out = Path(cfg.output_dir)
    assert list(out.rglob("*.csv"))
    assert _numeric_count_violations(out, k_eff) == []

    # full rerun with a stricter threshold
    strict = run_pipeline(load_run_config(scen.config, output_dir=tmp_path / "k50", k_out=50))
    assert strict.exit_code == 0, strict.message
    assert _numeric_count_violations(tmp_path / "k50", 50) == []

    # monotonicity on the unsuppressed harmonised matrices of every provider
    from odmforge.harmonise import build_harmonized, harmonise_feed, load_crosswalks, load_reference_zones
    from odmforge.ingest import read_feed

    registry = load_reference_zones(scen.reference_zones)
    xwalks = load_crosswalks(scen.crosswalks)
    for pid in scen.profiles:
        prof = load_profile(scen.profiles[pid])
        odms = build_harmonized([harmonise_feed(read_feed(scen.odms[pid], prof), xwalks[prof.zoning_id],
                                                prof, 3, registry)], 3, registry)
        kept = {}
        for k in (5, 20, 50):
            cells = set()
            for h in odms:
                s, _ = suppress(h, SuppressionPolicy(k))
                assert not ((s.table["count"] > 0) & (s.table["count"] < k)).any()
                cells |= {(h.day, o, d) for o, d in zip(s.table["origin"], s.table["destination"])}
            kept[k] = cells
        assert kept[50] <= kept[20] <= kept[5]


# 7 -------------------------------------------------------------------------

def _truth_trends(scen) -> dict[str, pd.Series]:
    truth = scen.truth_frame()
    base = pd.read_csv(scen.root / "base_zones.csv", dtype=str).set_index("code")["nuts3"]
    truth["o3"] = truth["origin"].map(base)
    truth["d3"] = truth["destination"].map(base)
    agg = truth.groupby(["date", "o3", "d3"])["flow"].sum()
    odms = []
    for day, grp in agg.groupby(level=0):
        cells = {(o, d): float(v) for (_, o, d), v in grp.items()}
        odms.append(HarmonizedODM.from_cells(pd.Timestamp(day).date(), cells, 3, "truth"))
    out = {}
    for s in mobility_indicators(odms, 3):
        s = compute_trend(s)
        out[s.region] = pd.Series(s.trends(), index=pd.to_datetime(s.dates))
    return out


@pytest.mark.acceptance(7, "trend correlation across heterogeneous providers and truth")
def test_heterogeneity_robustness(default_run):
    scen, cfg, result, elapsed = default_run
    assert result.exit_code == 0, result.message
    assert elapsed < 120, f"generate + pipeline took {elapsed:.1f} s"
    ind = pd.read_csv(Path(cfg.output_dir) / "products" / "indicators.csv", parse_dates=["date"])
    ind = ind[ind["level"] == 3]
    series = {pid: {r: g.set_index("date")["trend_pct"] for r, g in grp.groupby("nuts_code")}
              for pid, grp in ind.groupby("provider_id")}
    series["truth"] = _truth_trends(scen)
    assert set(series) == {"mno_fine", "mno_coarse", "mno_mid", "truth"}
    regions = sorted(series["truth"])
    worst = 1.0
    for a, b in itertools.combinations(sorted(series), 2):
        for r in regions:
            x = pd.concat([series[a][r], series[b][r]], axis=1, join="inner").dropna()
            assert len(x) >= 28, (a, b, r)
            rho = float(np.corrcoef(x.iloc[:, 0], x.iloc[:, 1])[0, 1])
            worst = min(worst, rho)
            assert rho >= 0.9, f"{a} vs {b} in {r}: r={rho:.3f}"
    print(f"minimum pairwise Pearson r = {worst:.4f}; generate + pipeline {elapsed:.1f} s")


# 8 -------------------------------------------------------------------------

@pytest.mark.acceptance(8, "two planted metros recovered as persistent MFAs")
def test_mfa_recovery(default_run):
    scen, cfg, result, _ = default_run
    assert result.exit_code == 0, result.message
    assert cfg.alpha == 0.5
    provider = result.manifest["stages"]["mfa"]["provider"]
    zoning = load_profile(scen.profiles[provider]).zoning_id
    members = pd.read_csv(Path(cfg.output_dir) / "mfa" / "membership.csv", dtype={"zone_code": str})
    found = [set(g["zone_code"]) for _, g in members.groupby("mfa_id")]
    assert len(found) == 2, f"{len(found)} persistent MFAs"
    planted = [set(v[zoning]) for v in scen.planted.values()]
    for want in planted:
        best = max(jaccard(want, got) for got in found)
        assert best >= 0.9, f"planted metro best Jaccard {best:.3f}"


# 9 -------------------------------------------------------------------------

@pytest.mark.acceptance(9, "spike and drop flagged; no false flags on a constant scenario")
def test_anomaly_detection(tmp_path):
    flat = constant_scenario()
    scen = generate_scenario(flat, tmp_path / "flat")
    res = run_pipeline(load_run_config(scen.config, output_dir=tmp_path / "flat_out"))
    assert res.exit_code == 0, res.message
    flags = pd.read_csv(tmp_path / "flat_out" / "products" / "anomalies.csv")
    assert len(flags) == 0, flags.head()

    spike_day = flat.start + timedelta(days=30)
    drop_day = flat.start + timedelta(days=36)
    assert spike_day.weekday() != drop_day.weekday()
    noisy = constant_scenario(noise_sigma=0.1, sampling_noise=True,
                              modulation={spike_day: 5.0, drop_day: 0.2})
    scen = generate_scenario(noisy, tmp_path / "events")
    res = run_pipeline(load_run_config(scen.config, output_dir=tmp_path / "events_out"))
    assert res.exit_code == 0, res.message
    flags = pd.read_csv(tmp_path / "events_out" / "products" / "anomalies.csv", parse_dates=["date"])
    country = flags[(flags["nuts_code"] == "XX") & (flags["metric"] == "total")]
    for pid in scen.profiles:
        mine = country[country["provider_id"] == pid]
        spike = mine[mine["date"].dt.date == spike_day]
        drop = mine[mine["date"].dt.date == drop_day]
        assert len(spike) == 1 and spike["direction"].iat[0] == "spike" and spike["zscore"].iat[0] >= 3, pid
        assert len(drop) == 1 and drop["direction"].iat[0] == "drop" and drop["zscore"].iat[0] <= -3, pid


# 10 ------------------------------------------------------------------------

@pytest.mark.acceptance(10, "10M cells, 60 days, 1000 zones: < 60 s and < 4 GB")
def test_performance():
    proc = subprocess.run([sys.executable, str(HERE / "perf_harness.py")], capture_output=True, text=True,
                          timeout=600)
    assert proc.returncode == 0, proc.stderr
    stats = json.loads(proc.stdout.strip().splitlines()[-1])
    print(stats)
    assert stats["cells"] == 10_000_000
    assert stats["days"] == 60 and stats["zones"] == 1000
    assert abs(stats["total_out"] - stats["total_in"]) <= 1e-9 * stats["total_in"]
    assert stats["seconds"] < 60
    assert stats["peak_rss_mb"] < 4096


if __name__ == "__main__":
    sys.exit(pytest.main([__file__, "-v", "-s"]))
