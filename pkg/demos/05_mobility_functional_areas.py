"""Daily clusters of intense exchange, and the areas that persist.

Each day's fine-grid movement graph is partitioned by greedy modularity
maximisation.  Zones that keep landing in the same cluster on most days form
a persistent functional area; the scenario plants two metros, and those are
what come back.
"""

import json

from _common import banner, scenario

from odmforge.harmonise import rebin_time
from odmforge.ingest import load_profile, read_feed
from odmforge.mfa import (
    build_graph,
    cluster_daily,
    daily_stability,
    export_mfa_geojson,
    fuzzy_intersect,
    load_zone_geometries,
)

scen = scenario()
prof = load_profile(scen.profiles["mno_fine"])
feed = rebin_time(read_feed(scen.odms["mno_fine"], prof), "daily")
daily = [cluster_daily(build_graph(feed, d)) for d in feed.days]

banner("daily partitions")
for d in daily[:5]:
    print(f"  {d.day}: {len(d.clusters)} clusters, Q={d.modularity:.3f}")
stab = daily_stability(daily)
print(f"  day-over-day co-clustering Jaccard: min {min(v for _, v in stab):.2f}, "
      f"mean {sum(v for _, v in stab) / len(stab):.2f}")

for alpha in (0.5, 0.9):
    banner(f"persistent areas at alpha={alpha}")
    mfas = fuzzy_intersect(daily, alpha)
    for m in mfas:
        low = min(w for _, w in m.members)
        print(f"  MFA {m.id}: {len(m.members)} zones, support {m.support_days} days, min membership {low:.2f}")

planted = json.loads((scen.root / "planted.json").read_text())
mfas = fuzzy_intersect(daily, 0.5)
banner("match against the planted metros")
for metro, zonings in planted.items():
    truth = set(zonings[prof.zoning_id])
    best = max(len(truth & m.zones) / len(truth | m.zones) for m in mfas)
    print(f"  metro {metro}: best Jaccard {best:.2f}")

doc = export_mfa_geojson(mfas, load_zone_geometries(scen.geometries))
print(f"\nGeoJSON FeatureCollection with {len(doc['features'])} features")
