"""The reasonability audit as a gate, then output suppression.

A clean feed passes every check.  Slip one small cell into it and the audit
names the offending cell.  Downstream, cells under the output threshold are
dropped (or masked) before anything is written.
"""

import shutil

from _common import banner, scenario

from odmforge.harmonise import build_harmonized, harmonise_feed, load_crosswalks, load_reference_zones
from odmforge.ingest import load_profile, read_feed
from odmforge.privacy import SuppressionPolicy, reasonability_test, suppress

scen = scenario()
pid = "mno_mid"
prof = load_profile(scen.profiles[pid])

banner("audit of the feed as delivered")
report = reasonability_test(read_feed(scen.odms[pid], prof), prof)
for c in report.checks:
    print(f"  {c.name:20s} {'pass' if c.passed else 'FAIL'}  {c.details}")

banner("audit after injecting a count of 2")
bad = scen.root / "tampered.csv"
shutil.copy(scen.odms[pid], bad)
with bad.open("a") as fh:
    fh.write("mid-00-00,mid-00-01,2020-06-01T08:00,2\n")
report = reasonability_test(read_feed(bad, prof, strict=False), prof)
print(f"verdict: {report.verdict}")
print(f"threshold check: {report.check('threshold').details}")

banner("output suppression on harmonised matrices")
feed = read_feed(scen.odms[pid], prof)
mapped = harmonise_feed(feed, load_crosswalks(scen.crosswalks)[prof.zoning_id], prof, 3,
                        load_reference_zones(scen.reference_zones))
daily = build_harmonized([mapped], 3)
for k in (5, 20, 50):
    kept = dropped = 0
    for d in daily:
        out, stats = suppress(d, SuppressionPolicy(k))
        kept += len(out)
        dropped += stats.cells_suppressed
    print(f"  k_out={k:3d}: {kept:5d} cells kept, {dropped:4d} suppressed")
