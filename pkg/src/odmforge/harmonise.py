"""Bringing provider feeds onto shared reference zones and calendar bins.

Spatially, every provider zone is spread over NUTS3 regions with the weights
of a :class:`ZoneCrosswalk`, then rolled up the NUTS hierarchy.  Temporally,
provider windows are summed into UTC calendar days, or ISO weeks split into
weekday and weekend parts.  Counts stay fractional; nothing here rounds.
"""

from __future__ import annotations

import logging
import math
from dataclasses import dataclass, field
from datetime import date
from pathlib import Path
from typing import Iterable, Mapping, Sequence

import numpy as np
import pandas as pd

from .errors import (
    AlreadyExtrapolated,
    BadWeights,
    LevelUnavailable,
    MissingField,
    NonDivisibleWindow,
    UnmappedZone,
)
from .ingest import ATTRIBUTE_COLUMNS, CanonicalFeed, ProviderProfile, merge_duplicates, zone_categoricals

logger = logging.getLogger(__name__)

WEIGHT_TOL = 1e-9
WEEKDAY, WEEKEND = "weekday", "weekend"
REFERENCE_ZONING = "NUTS"


@dataclass(frozen=True)
class RefZone:
    nuts_code: str
    level: int
    parent: str | None = None
    population: int | None = None

    def __post_init__(self):
        if self.level not in (0, 1, 2, 3):
            raise ValueError(f"{self.nuts_code}: level {self.level} outside 0..3")
        if self.level == 0 and self.parent:
            raise ValueError(f"{self.nuts_code}: level-0 zone cannot have a parent")
        if self.level > 0 and not self.parent:
            raise ValueError(f"{self.nuts_code}: level-{self.level} zone needs a parent")
        if self.parent and not self.nuts_code.startswith(self.parent):
            raise ValueError(f"{self.nuts_code} does not extend its parent code {self.parent}")
        if self.population is not None and self.population <= 0:
            raise ValueError(f"{self.nuts_code}: population must be positive")


class ZoneRegistry(Mapping[str, RefZone]):
    """The reference hierarchy, checked for parent/level consistency."""

    def __init__(self, zones: Iterable[RefZone]):
        self._zones = {z.nuts_code: z for z in zones}
        for z in self._zones.values():
            if z.parent is None:
                continue
            p = self._zones.get(z.parent)
            if p is None:
                raise ValueError(f"{z.nuts_code}: parent {z.parent} not in registry")
            if p.level != z.level - 1:
                raise ValueError(f"{z.nuts_code}: parent {z.parent} is level {p.level}, expected {z.level - 1}")

    def __getitem__(self, code):
        return self._zones[code]

    def __iter__(self):
        return iter(sorted(self._zones))

    def __len__(self):
        return len(self._zones)

    def codes_at(self, level: int) -> list[str]:
        return sorted(c for c, z in self._zones.items() if z.level == level)

    def ancestor(self, code: str, level: int) -> str:
        z = self._zones[code]
        if z.level < level:
            raise LevelUnavailable(f"{code} is level {z.level}; cannot express it at level {level}")
        while z.level > level:
            z = self._zones[z.parent]
        return z.nuts_code


def load_reference_zones(path: str | Path) -> ZoneRegistry:
    df = pd.read_csv(path, dtype=str, keep_default_na=False)
    zones = []
    for row in df.itertuples(index=False):
        pop = getattr(row, "population", "")
        zones.append(RefZone(
            nuts_code=row.nuts_code,
            level=int(row.level),
            parent=row.parent or None,
            population=int(float(pop)) if pop not in ("", None) else None,
        ))
    return ZoneRegistry(zones)


def write_reference_zones(registry: ZoneRegistry, path: str | Path) -> None:
    rows = [(z.nuts_code, z.level, z.parent or "", "" if z.population is None else z.population)
            for z in (registry[c] for c in registry)]
    pd.DataFrame(rows, columns=["nuts_code", "level", "parent", "population"]).to_csv(
        path, index=False, lineterminator="\n")


def ancestor_codes(codes: Sequence[str], level: int, registry: ZoneRegistry | None = None) -> list[str]:
    """Level-``level`` ancestor of each code.

    Without a registry the NUTS convention applies: a level-L code is the
    country code plus L characters, so the ancestor is a prefix.
    """
    if registry is not None:
        return [registry.ancestor(c, level) for c in codes]
    out = []
    for c in codes:
        if len(c) - 2 < level:
            raise LevelUnavailable(f"{c} is coarser than level {level}")
        out.append(c[: 2 + level])
    return out


@dataclass(frozen=True)
class ZoneCrosswalk:
    """Provider zone code -> ((nuts3 code, weight), ...), weights summing to 1."""

    zoning_id: str
    entries: Mapping[str, tuple[tuple[str, float], ...]] = field(default_factory=dict)

    def __post_init__(self):
        clean = {}
        for zone, targets in self.entries.items():
            targets = tuple((str(n), float(w)) for n, w in targets)
            if not targets:
                raise BadWeights(f"{self.zoning_id}:{zone} has no targets")
            ws = [w for _, w in targets]
            if any(not (0.0 < w <= 1.0 + WEIGHT_TOL) for w in ws):
                raise BadWeights(f"{self.zoning_id}:{zone} weight outside (0, 1]: {ws}")
            s = math.fsum(ws)
            if abs(s - 1.0) > WEIGHT_TOL:
                raise BadWeights(f"{self.zoning_id}:{zone} weights sum to {s!r}, not 1")
            # exact renormalisation keeps map_zones conservative to rounding error
            clean[str(zone)] = tuple((n, w / s) for n, w in targets)
        object.__setattr__(self, "entries", clean)

    def nuts3_codes(self) -> list[str]:
        return sorted({n for t in self.entries.values() for n, _ in t})

    def to_frame(self) -> pd.DataFrame:
        rows = [(self.zoning_id, z, n, w) for z in sorted(self.entries) for n, w in self.entries[z]]
        return pd.DataFrame(rows, columns=["zoning_id", "zone_code", "nuts3_code", "weight"])


def load_crosswalks(path: str | Path, weight_column: str = "weight") -> dict[str, ZoneCrosswalk]:
    """Read a crosswalk CSV; returns one crosswalk per ``zoning_id`` present.

    ``weight_column`` selects an alternative weight column (for example
    population shares) when the file carries one.
    """
    df = pd.read_csv(path, float_precision="round_trip",
                     dtype={"zoning_id": str, "zone_code": str, "nuts3_code": str})
    if weight_column not in df.columns:
        raise MissingField(f"crosswalk {path} has no column {weight_column!r}")
    out = {}
    for zoning, grp in df.groupby("zoning_id", sort=True):
        entries: dict[str, list] = {}
        for z, n, w in zip(grp["zone_code"], grp["nuts3_code"], grp[weight_column]):
            entries.setdefault(z, []).append((n, float(w)))
        out[zoning] = ZoneCrosswalk(zoning, entries)
    return out


def write_crosswalks(crosswalks: Iterable[ZoneCrosswalk], path: str | Path) -> None:
    frames = [x.to_frame() for x in crosswalks]
    df = pd.concat(frames, ignore_index=True) if frames else pd.DataFrame(
        columns=["zoning_id", "zone_code", "nuts3_code", "weight"])
    df.to_csv(path, index=False, lineterminator="\n", float_format="%.17g")


# ---------------------------------------------------------------------------
# spatial mapping

def _fan_out(codes: np.ndarray, ptr: np.ndarray, lengths: np.ndarray):
    """Expand each row into its crosswalk targets.

    Returns (row index, flat target position) for every (row, target) pair.
    """
    n = lengths[codes]
    rows = np.repeat(np.arange(len(codes)), n)
    first = np.repeat(np.cumsum(n) - n, n)
    pos = np.repeat(ptr[codes], n) + (np.arange(len(rows)) - first)
    return rows, pos


def _aggregate(window: np.ndarray, o: np.ndarray, d: np.ndarray, attr: np.ndarray,
               count: np.ndarray, n_zones: int):
    """Sum counts over identical (window, origin, destination, attribute) keys."""
    w_codes, w_uniques = pd.factorize(window, sort=True)
    n_attr = int(attr.max()) + 1 if len(attr) else 1
    key = ((w_codes.astype(np.int64) * n_zones + o) * n_zones + d) * n_attr + attr
    k_codes, k_uniques = pd.factorize(key, sort=True)
    sums = np.bincount(k_codes, weights=count, minlength=len(k_uniques))
    rest, a = np.divmod(k_uniques, n_attr)
    rest, dd = np.divmod(rest, n_zones)
    ww, oo = np.divmod(rest, n_zones)
    return w_uniques[ww], oo, dd, a, sums


def map_zones(feed: CanonicalFeed, xwalk: ZoneCrosswalk, level: int = 3,
              registry: ZoneRegistry | None = None) -> CanonicalFeed:
    """Express a provider-zoned feed on reference zones at ``level``.

    A cell (o, d, c) becomes cells (O, D, c * w(o->O) * w(d->D)) over NUTS3
    pairs, which are then summed up to the requested level.
    """
    if level not in (0, 1, 2, 3):
        raise ValueError(f"level {level} outside 0..3")
    if feed.level is not None:
        raise ValueError(f"feed {feed.provider_id} is already on reference zones (level {feed.level})")
    if xwalk.zoning_id != feed.zoning_id:
        raise ValueError(f"crosswalk is for zoning {xwalk.zoning_id!r}, feed uses {feed.zoning_id!r}")
    f = feed.frame
    cats = list(f["origin"].cat.categories)
    used = np.zeros(len(cats), dtype=bool)
    if len(f):
        used[np.unique(f["origin"].cat.codes.to_numpy())] = True
        used[np.unique(f["destination"].cat.codes.to_numpy())] = True
    unmapped = [c for c, u in zip(cats, used) if u and c not in xwalk.entries]
    if unmapped:
        raise UnmappedZone(unmapped)

    nuts3 = xwalk.nuts3_codes()
    regions = sorted(set(ancestor_codes(nuts3, level, registry)))
    region_of_nuts3 = pd.Index(regions).get_indexer(ancestor_codes(nuts3, level, registry)).astype(np.int64)
    nuts3_index = {n: i for i, n in enumerate(nuts3)}
    lengths = np.zeros(len(cats), dtype=np.int64)
    tgt, wts = [], []
    for i, c in enumerate(cats):
        targets = xwalk.entries.get(c, ())
        lengths[i] = len(targets)
        tgt.extend(region_of_nuts3[nuts3_index[n]] for n, _ in targets)
        wts.extend(w for _, w in targets)
    tgt = np.asarray(tgt, dtype=np.int64)
    wts = np.asarray(wts, dtype=np.float64)
    ptr = np.cumsum(lengths) - lengths

    oc = f["origin"].cat.codes.to_numpy().astype(np.int64)
    dc = f["destination"].cat.codes.to_numpy().astype(np.int64)
    rows_o, pos_o = _fan_out(oc, ptr, lengths)
    rows_d, pos_d = _fan_out(dc[rows_o], ptr, lengths)
    src = rows_o[rows_d]
    count = f["count"].to_numpy()[src] * wts[pos_o[rows_d]] * wts[pos_d]
    o_reg = tgt[pos_o[rows_d]]
    d_reg = tgt[pos_d]

    attr_keys = f[list(ATTRIBUTE_COLUMNS)]
    attr_codes, attr_uniques = pd.MultiIndex.from_frame(attr_keys.astype(str)).factorize(sort=True) \
        if len(f) else (np.zeros(0, dtype=np.int64), pd.MultiIndex.from_tuples([], names=ATTRIBUTE_COLUMNS))
    attr_codes = np.asarray(attr_codes, dtype=np.int64)

    extra = ["day_class"] if "day_class" in f else []
    if extra:
        # fold day_class into the window key so the two sub-bins never merge
        dc_codes = (f["day_class"].astype(str).to_numpy() == WEEKEND).astype(np.int64)
        window = f["window_start"].to_numpy().astype("datetime64[ns]").astype(np.int64) * 2 + dc_codes
    else:
        window = f["window_start"].to_numpy().astype("datetime64[ns]").astype(np.int64)

    ww, oo, dd, aa, sums = _aggregate(window[src], o_reg, d_reg, attr_codes[src], count, len(regions))
    if extra:
        ww, is_weekend = np.divmod(ww, 2)
    o_cat, d_cat = zone_categoricals(np.asarray(regions, dtype=object)[oo],
                                     np.asarray(regions, dtype=object)[dd], regions)
    out = pd.DataFrame({
        "window_start": ww.astype("datetime64[ns]"),
        "origin": o_cat,
        "destination": d_cat,
        "count": sums,
    })
    for j, col in enumerate(ATTRIBUTE_COLUMNS):
        vals = np.asarray([t[j] for t in attr_uniques], dtype=object)[aa] if len(aa) else np.array([], dtype=object)
        out[col] = pd.Categorical(vals)
    if extra:
        out["day_class"] = pd.Categorical(np.where(is_weekend == 1, WEEKEND, WEEKDAY),
                                          categories=[WEEKDAY, WEEKEND])
        out = out.sort_values(["window_start", "day_class", "origin", "destination", *ATTRIBUTE_COLUMNS],
                              kind="stable", ignore_index=True)
    out = out[["window_start", *extra, "origin", "destination", *ATTRIBUTE_COLUMNS, "count"]]
    return feed.with_frame(out, zoning_id=REFERENCE_ZONING, level=level)


# ---------------------------------------------------------------------------
# temporal rebinning

def rebin_time(feed: CanonicalFeed, target: str = "daily") -> CanonicalFeed:
    """Sum provider windows into UTC days, or ISO weeks split by day class."""
    if target not in ("daily", "weekly"):
        raise ValueError(f"target must be 'daily' or 'weekly', not {target!r}")
    if feed.granularity == "weekly":
        if target == "weekly":
            return feed
        raise NonDivisibleWindow("weekly feed cannot be rebinned to days")
    if 1440 % feed.window_minutes:
        raise NonDivisibleWindow(f"{feed.window_minutes}-minute windows do not divide a day")
    if target == "daily" and feed.granularity == "daily":
        return feed

    f = feed.frame
    day = f["window_start"].dt.floor("D")
    keys = ["window_start", "origin", "destination", *ATTRIBUTE_COLUMNS]
    if target == "daily":
        g = f.assign(window_start=day)
        out = merge_duplicates(g, keys)
        return feed.with_frame(out, granularity="daily", window_minutes=1440)

    weekday = day.dt.weekday
    monday = day - pd.to_timedelta(weekday, unit="D")
    day_class = pd.Categorical(np.where(weekday >= 5, WEEKEND, WEEKDAY), categories=[WEEKDAY, WEEKEND])
    g = f.assign(window_start=monday, day_class=day_class)
    out = merge_duplicates(g, ["window_start", "day_class", "origin", "destination", *ATTRIBUTE_COLUMNS])
    return feed.with_frame(out, granularity="weekly", window_minutes=7 * 1440)


def iso_week_id(d: date) -> str:
    y, w, _ = d.isocalendar()
    return f"{y}-W{w:02d}"


# ---------------------------------------------------------------------------
# extrapolation

def extrapolate(feed: CanonicalFeed, profile: ProviderProfile) -> CanonicalFeed:
    """Scale subscriber counts to the whole population by ``1 / market_share``."""
    if feed.extrapolated or profile.extrapolated:
        raise AlreadyExtrapolated(f"feed {feed.provider_id} is already extrapolated")
    if profile.market_share is None:
        raise MissingField(f"profile {profile.provider_id} has no market_share")
    f = feed.frame.copy()
    f["count"] = f["count"] / float(profile.market_share)
    return feed.with_frame(f, extrapolated=True, market_share=profile.market_share)


# ---------------------------------------------------------------------------
# harmonised daily matrices

@dataclass(frozen=True)
class HarmonizedODM:
    """One provider's movements for one UTC day on reference zones.

    ``table`` holds ``origin``, ``destination``, ``count``.  A masked count
    (suppression with strategy "mask") is NaN.
    """

    day: date
    level: int
    provider_ids: tuple[str, ...]
    table: pd.DataFrame = field(repr=False)
    stop_time: int | str | None = None

    @property
    def provider_id(self) -> str:
        return self.provider_ids[0] if len(self.provider_ids) == 1 else "+".join(self.provider_ids)

    @property
    def granularity(self) -> int:
        return self.level

    @property
    def cells(self) -> dict[tuple[str, str, int], float]:
        t = self.table
        return {(str(o), str(d), self.level): float(c)
                for o, d, c in zip(t["origin"], t["destination"], t["count"])}

    @property
    def total(self) -> float:
        return float(np.nansum(self.table["count"].to_numpy()))

    def __len__(self):
        return len(self.table)

    @classmethod
    def from_cells(cls, day: date, cells: Mapping[tuple, float], level: int = 3,
                   provider_id: str = "P") -> "HarmonizedODM":
        """Build from ``{(origin, destination): count}`` (a third key element, if given, is ignored)."""
        keys = sorted(cells)
        o, d = zone_categoricals([k[0] for k in keys], [k[1] for k in keys])
        table = pd.DataFrame({"origin": o, "destination": d,
                              "count": np.array([cells[k] for k in keys], dtype=float)})
        if (table["count"] < 0).any():
            raise ValueError("counts must be non-negative")
        return cls(day, level, (provider_id,), table)


def build_harmonized(feeds: Sequence[CanonicalFeed], level: int = 3,
                     registry: ZoneRegistry | None = None) -> list[HarmonizedODM]:
    """Split mapped, daily-binned feeds into one matrix per (day, provider).

    Providers are never summed together.  Attribute-disaggregated cells are
    left out: they are a separate population from the attribute-free totals.
    """
    out = []
    for feed in feeds:
        if feed.level is None:
            raise ValueError(f"feed {feed.provider_id} is not on reference zones; run map_zones first")
        if feed.granularity != "daily":
            raise ValueError(f"feed {feed.provider_id} is not daily; run rebin_time(feed, 'daily') first")
        if feed.level < level:
            raise LevelUnavailable(f"feed {feed.provider_id} is at level {feed.level}, finer level {level} requested")
        f = feed.frame
        plain = np.ones(len(f), dtype=bool)
        for col in ATTRIBUTE_COLUMNS:
            plain &= (f[col] == "").to_numpy()
        if not plain.all():
            logger.info("%s: %d attribute-bearing cells kept out of harmonised totals",
                        feed.provider_id, int((~plain).sum()))
            f = f[plain]
        if feed.level > level:
            f = roll_up(f, level, registry)
        elif registry is not None:
            unknown = sorted(set(f["origin"].cat.categories) - set(registry.codes_at(level)))
            if unknown:
                raise LevelUnavailable(f"codes not in registry at level {level}: {unknown[:10]}")
        out.extend(_split_days(f, level, feed))
    out.sort(key=lambda h: (h.day, h.provider_ids))
    return out


def roll_up(frame: pd.DataFrame, level: int, registry: ZoneRegistry | None = None) -> pd.DataFrame:
    """Aggregate a reference-zoned table to a coarser level by ancestry."""
    cats = list(frame["origin"].cat.categories)
    anc = ancestor_codes(cats, level, registry)
    regions = sorted(set(anc))
    remap = pd.Index(regions).get_indexer(anc)
    o = remap[frame["origin"].cat.codes.to_numpy()]
    d = remap[frame["destination"].cat.codes.to_numpy()]
    dtype = pd.CategoricalDtype(regions, ordered=True)
    g = frame.assign(origin=pd.Categorical.from_codes(o, dtype=dtype),
                     destination=pd.Categorical.from_codes(d, dtype=dtype))
    keys = [k for k in frame.columns if k != "count"]
    return merge_duplicates(g, keys)


def _split_days(frame: pd.DataFrame, level: int, feed: CanonicalFeed) -> list[HarmonizedODM]:
    if frame.empty:
        return []
    frame = frame.sort_values(["window_start", "origin", "destination"], kind="stable")
    starts = frame["window_start"].to_numpy()
    bounds = np.flatnonzero(starts[1:] != starts[:-1]) + 1
    edges = np.concatenate([[0], bounds, [len(frame)]])
    cols = frame[["origin", "destination", "count"]]
    out = []
    for a, b in zip(edges[:-1], edges[1:]):
        day = pd.Timestamp(starts[a]).date()
        table = cols.iloc[a:b].reset_index(drop=True)
        out.append(HarmonizedODM(day, level, (feed.provider_id,), table, stop_time=feed.stop_time))
    return out


def harmonise_feed(feed: CanonicalFeed, xwalk: ZoneCrosswalk, profile: ProviderProfile | None = None,
                   level: int = 3, registry: ZoneRegistry | None = None) -> CanonicalFeed:
    """Daily bins, optional extrapolation, then reference zones."""
    daily = rebin_time(feed, "daily")
    if profile is not None and not (profile.extrapolated or feed.extrapolated):
        daily = extrapolate(daily, profile)
    return map_zones(daily, xwalk, level, registry)
