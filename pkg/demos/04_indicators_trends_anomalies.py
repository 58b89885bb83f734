"""Mobility indicators, baseline trends and early-warning flags.

Absolute counts differ between operators (different market shares, windows,
thresholds), but trends against each operator's own pre-lockdown baseline
line up.  The anomaly detector scores each day against the same weekday in
the previous four weeks.
"""

import numpy as np

from _common import banner, scenario

from odmforge.harmonise import build_harmonized, harmonise_feed, load_crosswalks, load_reference_zones
from odmforge.ingest import load_profile, read_feed
from odmforge.products import compute_trend, connectivity_matrix, detect_anomalies, mobility_indicators

scen = scenario()
registry = load_reference_zones(scen.reference_zones)
xwalks = load_crosswalks(scen.crosswalks)

country = {}
for pid in sorted(scen.odms):
    prof = load_profile(scen.profiles[pid])
    mapped = harmonise_feed(read_feed(scen.odms[pid], prof), xwalks[prof.zoning_id], prof, 3, registry)
    odms = build_harmonized([mapped], 3, registry)
    (series,) = mobility_indicators(odms, 0, registry)
    country[pid] = compute_trend(series)
    if pid == "mno_fine":
        weekday, weekend = connectivity_matrix(odms, odms[0].day, k_out=None)

banner("country-level total trend (% of baseline), weekly means")
dates = country["mno_fine"].dates
print("week starting  " + "  ".join(f"{p:>10s}" for p in country))
for w in range(0, len(dates), 7):
    row = [np.nanmean(s.trends()[w:w + 7]) for s in country.values()]
    print(f"{dates[w]}     " + "  ".join(f"{v:10.1f}" for v in row))

banner("indicator decomposition on the first day (mno_fine, level 0)")
p = country["mno_fine"].points[0]
print(f"internal={p.internal:,.0f} inward={p.inward:,.0f} outward={p.outward:,.0f} total={p.total:,.0f}")

banner(f"connectivity {weekday.week}")
print(f"weekday pairs: {len(weekday)}, weekend pairs: {len(weekend)}")

banner("anomaly flags on the country total")
for pid, s in country.items():
    flags = detect_anomalies(s, trigger=3.0, window_weeks=4, metrics=("total",))
    shown = ", ".join(f"{f.date} {f.direction} z={f.zscore:.1f}" for f in flags[:4])
    print(f"  {pid:10s} {len(flags)} flag(s) {shown}")
