"""From provider zones and windows to daily NUTS3 matrices.

Zones are fanned out over the reference regions through area-share weights,
windows are rebinned to UTC days, and device counts are scaled by market
share.  Totals survive the trip: what goes in comes out.
"""

from _common import banner, scenario

from odmforge.harmonise import build_harmonized, harmonise_feed, load_crosswalks, load_reference_zones
from odmforge.ingest import load_profile, read_feed

scen = scenario()
registry = load_reference_zones(scen.reference_zones)
xwalks = load_crosswalks(scen.crosswalks)

for pid in sorted(scen.odms):
    prof = load_profile(scen.profiles[pid])
    feed = read_feed(scen.odms[pid], prof)
    scale = 1.0 if prof.extrapolated else 1.0 / prof.market_share
    mapped = harmonise_feed(feed, xwalks[prof.zoning_id], prof, 3, registry)
    daily = build_harmonized([mapped], 3, registry)
    banner(pid)
    print(f"{len(feed.zones)} provider zones -> {len(set(mapped.zones))} NUTS3 regions, "
          f"{len(feed)} cells -> {sum(len(d) for d in daily)} daily cells")
    print(f"population-scale total in : {feed.total * scale:,.1f}")
    print(f"harmonised total out      : {sum(d.total for d in daily):,.1f}")
    first = daily[0]
    print(f"first day {first.day}: {len(first)} region pairs, top flows:")
    print(first.table.sort_values("count", ascending=False).head(3).to_string(index=False))
