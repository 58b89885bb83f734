"""Mobility indicators, weekly connectivity matrices, trends and anomaly flags."""

from __future__ import annotations

import logging
import math
from dataclasses import dataclass, field, replace
from datetime import date, timedelta
from pathlib import Path
from typing import Iterable, Sequence

import numpy as np
import pandas as pd

from .errors import InsufficientBaseline, LevelUnavailable, MixedProviders
from .harmonise import WEEKDAY, WEEKEND, HarmonizedODM, ZoneRegistry, ancestor_codes, iso_week_id
from .privacy import DEFAULT_K_OUT, SuppressionPolicy, SuppressionStats, suppress_table

logger = logging.getLogger(__name__)

METRICS = ("internal", "inward", "outward", "total")
MAD_SCALE = 1.4826


def day_class(d: date) -> str:
    return WEEKEND if d.weekday() >= 5 else WEEKDAY


@dataclass(frozen=True)
class IndicatorPoint:
    date: date
    internal: float
    inward: float
    outward: float
    total: float
    trend_pct: float | None = None


@dataclass(frozen=True)
class MobilityIndicatorSeries:
    region: str
    level: int
    provider_id: str
    points: tuple[IndicatorPoint, ...]

    def __post_init__(self):
        pts = tuple(self.points)
        object.__setattr__(self, "points", pts)
        for a, b in zip(pts, pts[1:]):
            if not a.date < b.date:
                raise ValueError(f"{self.region}: dates not strictly increasing at {b.date}")
        for p in pts:
            s = p.internal + p.inward + p.outward
            if not math.isclose(p.total, s, rel_tol=1e-9, abs_tol=1e-9):
                raise ValueError(f"{self.region} {p.date}: total {p.total} != {s}")

    @property
    def dates(self) -> list[date]:
        return [p.date for p in self.points]

    def values(self, metric: str) -> np.ndarray:
        return np.array([getattr(p, metric) for p in self.points], dtype=float)

    def trends(self) -> np.ndarray:
        return np.array([np.nan if p.trend_pct is None else p.trend_pct for p in self.points])

    def scaled(self, c: float) -> "MobilityIndicatorSeries":
        pts = tuple(IndicatorPoint(p.date, p.internal * c, p.inward * c, p.outward * c, p.total * c, p.trend_pct)
                    for p in self.points)
        return replace(self, points=pts)

    def frame(self) -> pd.DataFrame:
        return pd.DataFrame({
            "provider_id": self.provider_id,
            "nuts_code": self.region,
            "level": self.level,
            "date": self.dates,
            **{m: self.values(m) for m in METRICS},
            "trend_pct": self.trends(),
        })


def _single_provider(odms: Sequence[HarmonizedODM]) -> str:
    providers = {o.provider_id for o in odms}
    if len(providers) > 1:
        raise MixedProviders(f"indicators need a single provider, got {sorted(providers)}")
    return providers.pop() if providers else ""


def mobility_indicators(odms: Sequence[HarmonizedODM], level: int = 3,
                        registry: ZoneRegistry | None = None) -> list[MobilityIndicatorSeries]:
    """Per-region daily internal, inward, outward and total movements.

    For region R: internal sums cells with both ends in R, inward cells ending
    in R from elsewhere, outward cells leaving R.  Regions with no movement on
    a day get zeros for that day.  Masked (NaN) cells count as zero.
    """
    if not odms:
        return []
    provider = _single_provider(odms)
    for o in odms:
        if o.level < level:
            raise LevelUnavailable(f"matrix for {o.day} is at level {o.level}; level {level} requested")
    days = sorted({o.day for o in odms})
    if len(days) != len(odms):
        raise ValueError("more than one matrix for the same day")
    day_index = {d: i for i, d in enumerate(days)}

    anc_cache: dict[tuple, list[str]] = {}
    parts = []
    for o in odms:
        t = o.table
        cats = tuple(t["origin"].cat.categories)
        if cats not in anc_cache:
            anc_cache[cats] = ancestor_codes(cats, level, registry) if o.level != level else list(cats)
        parts.append((day_index[o.day], anc_cache[cats], t))
    regions = sorted({r for _, anc, _ in parts for r in anc})
    rindex = pd.Index(regions)
    n_r = len(regions)

    acc = {m: np.zeros(len(days) * n_r) for m in ("internal", "inward", "outward")}
    for di, anc, t in parts:
        if t.empty:
            continue
        remap = rindex.get_indexer(anc)
        ro = remap[t["origin"].cat.codes.to_numpy()]
        rd = remap[t["destination"].cat.codes.to_numpy()]
        c = np.nan_to_num(t["count"].to_numpy(dtype=float), nan=0.0)
        same = ro == rd
        base = di * n_r
        acc["internal"] += np.bincount(base + ro[same], weights=c[same], minlength=len(days) * n_r)
        acc["outward"] += np.bincount(base + ro[~same], weights=c[~same], minlength=len(days) * n_r)
        acc["inward"] += np.bincount(base + rd[~same], weights=c[~same], minlength=len(days) * n_r)

    internal, inward, outward = (acc[m].reshape(len(days), n_r) for m in ("internal", "inward", "outward"))
    total = internal + inward + outward
    out = []
    for j, r in enumerate(regions):
        pts = tuple(IndicatorPoint(d, float(internal[i, j]), float(inward[i, j]), float(outward[i, j]),
                                   float(total[i, j]))
                    for i, d in enumerate(days))
        out.append(MobilityIndicatorSeries(r, level, provider, pts))
    return out


# ---------------------------------------------------------------------------
# trends

def default_baseline(dates: Sequence[date], weeks: int = 4) -> tuple[date, date]:
    """The earliest ``weeks`` full ISO weeks covered by ``dates``."""
    present = set(dates)
    if not present:
        raise InsufficientBaseline("empty series")
    d = min(present)
    d += timedelta(days=(7 - d.weekday()) % 7)
    start = d
    return start, start + timedelta(days=7 * weeks - 1)


def compute_trend(series: MobilityIndicatorSeries,
                  baseline: tuple[date, date] | None = None) -> MobilityIndicatorSeries:
    """Fill ``trend_pct``: 100 * total / median baseline total of the same day class."""
    if baseline is None:
        baseline = default_baseline(series.dates)
    start, end = baseline
    medians = {}
    for cls in (WEEKDAY, WEEKEND):
        vals = [p.total for p in series.points
                if start <= p.date <= end and day_class(p.date) == cls and not math.isnan(p.total)]
        if len(vals) < 2:
            raise InsufficientBaseline(
                f"{series.region}: baseline {start}..{end} has {len(vals)} {cls} day(s), need 2")
        medians[cls] = float(np.median(vals))
    pts = []
    for p in series.points:
        m = medians[day_class(p.date)]
        trend = 100.0 * p.total / m if m > 0 and not math.isnan(p.total) else None
        pts.append(replace(p, trend_pct=trend))
    return replace(series, points=tuple(pts))


# ---------------------------------------------------------------------------
# anomalies

@dataclass(frozen=True)
class AnomalyFlag:
    region: str
    date: date
    metric: str
    zscore: float
    direction: str  # "spike" or "drop"
    provider_id: str = ""


def robust_zscore(x: float, window: Sequence[float]) -> float | None:
    """(x - median) / (1.4826 * MAD) of ``window``; None when the MAD is zero."""
    w = np.asarray(window, dtype=float)
    med = float(np.median(w))
    mad = float(np.median(np.abs(w - med)))
    if mad == 0.0:
        return None
    return (x - med) / (MAD_SCALE * mad)


def detect_anomalies(series: MobilityIndicatorSeries, trigger: float = 3.0, window_weeks: int = 4,
                     metrics: Sequence[str] = METRICS) -> list[AnomalyFlag]:
    """Flag days deviating from the same weekday over the previous weeks.

    A date is scored against the ``window_weeks`` most recent earlier values
    on the same weekday; dates with fewer such values, or a zero MAD, are
    skipped.
    """
    flags = []
    skipped = 0
    for metric in metrics:
        by_weekday: dict[int, list[tuple[date, float]]] = {}
        for p in series.points:
            v = getattr(p, metric)
            if v is None or math.isnan(v):
                continue
            by_weekday.setdefault(p.date.weekday(), []).append((p.date, v))
        for obs in by_weekday.values():
            for i in range(window_weeks, len(obs)):
                d, x = obs[i]
                z = robust_zscore(x, [v for _, v in obs[i - window_weeks:i]])
                if z is None:
                    skipped += 1
                    continue
                if abs(z) >= trigger:
                    flags.append(AnomalyFlag(series.region, d, metric, float(z),
                                             "spike" if z > 0 else "drop", series.provider_id))
    if skipped:
        logger.debug("%s: %d date(s) unscorable (zero MAD)", series.region, skipped)
    flags.sort(key=lambda f: (f.date, METRICS.index(f.metric) if f.metric in METRICS else 99))
    return flags


# ---------------------------------------------------------------------------
# connectivity

@dataclass(frozen=True)
class ConnectivityMatrix:
    week: str
    day_class: str
    provider_id: str
    entries: dict[tuple[str, str], float] = field(repr=False)
    missing_days: tuple[date, ...] = ()
    level: int = 3
    suppression: SuppressionStats | None = None

    def __post_init__(self):
        if any(o == d for o, d in self.entries):
            raise ValueError("connectivity matrices carry no diagonal entries")

    def __len__(self):
        return len(self.entries)

    def row_sums(self) -> dict[str, float]:
        out: dict[str, float] = {}
        for (o, _), c in self.entries.items():
            out[o] = out.get(o, 0.0) + c
        return out

    def frame(self) -> pd.DataFrame:
        keys = sorted(self.entries)
        return pd.DataFrame({
            "provider_id": self.provider_id,
            "week": self.week,
            "day_class": self.day_class,
            "origin": [k[0] for k in keys],
            "destination": [k[1] for k in keys],
            "count": [self.entries[k] for k in keys],
        }, columns=["provider_id", "week", "day_class", "origin", "destination", "count"])


def week_monday(week) -> date:
    """Monday of an ISO week given as "2020-W10", (year, week) or any date in it."""
    if isinstance(week, date):
        return week - timedelta(days=week.weekday())
    if isinstance(week, str):
        y, w = week.upper().split("-W")
        return date.fromisocalendar(int(y), int(w), 1)
    y, w = week
    return date.fromisocalendar(int(y), int(w), 1)


def connectivity_matrix(odms: Sequence[HarmonizedODM], week, k_out: int | None = DEFAULT_K_OUT,
                        strategy: str = "drop") -> tuple[ConnectivityMatrix, ConnectivityMatrix]:
    """Weekday and weekend bilateral NUTS3 flows for one ISO week.

    Diagonal (internal) flows are left out.  ``k_out=None`` skips suppression.
    """
    monday = week_monday(week)
    days = [monday + timedelta(days=i) for i in range(7)]
    wk = iso_week_id(monday)
    in_week = [o for o in odms if monday <= o.day < monday + timedelta(days=7)]
    provider = _single_provider(in_week) if in_week else (odms[0].provider_id if odms else "")
    for o in in_week:
        if o.level != 3:
            raise LevelUnavailable(f"connectivity needs NUTS3 matrices, got level {o.level} for {o.day}")
    covered = {o.day for o in in_week}
    missing = tuple(d for d in days if d not in covered)

    out = []
    for cls in (WEEKDAY, WEEKEND):
        tables = []
        for o in in_week:
            if day_class(o.day) != cls or o.table.empty:
                continue
            t = o.table
            off = (t["origin"].astype(str).to_numpy() != t["destination"].astype(str).to_numpy())
            tables.append(pd.DataFrame({"origin": t["origin"].astype(str).to_numpy()[off],
                                        "destination": t["destination"].astype(str).to_numpy()[off],
                                        "count": np.nan_to_num(t["count"].to_numpy(dtype=float)[off])}))
        if tables:
            summed = (pd.concat(tables, ignore_index=True)
                      .groupby(["origin", "destination"], sort=True)["count"].sum().reset_index())
        else:
            summed = pd.DataFrame({"origin": [], "destination": [], "count": []})
        stats = None
        if k_out is not None:
            summed, stats = suppress_table(summed, SuppressionPolicy(k_out, strategy))
        entries = {(o, d): float(c) for o, d, c in zip(summed["origin"], summed["destination"], summed["count"])}
        out.append(ConnectivityMatrix(wk, cls, provider, entries, missing, 3, stats))
    return out[0], out[1]


def weeks_covered(odms: Iterable[HarmonizedODM]) -> list[str]:
    return sorted({iso_week_id(o.day) for o in odms})


# ---------------------------------------------------------------------------
# export

def _round_counts(values) -> pd.Series:
    # half-to-even; NaN (masked) becomes <NA> and is written as an empty field
    return pd.Series(np.rint(np.asarray(values, dtype=float))).astype("Int64")


def indicators_frame(series: Iterable[MobilityIndicatorSeries]) -> pd.DataFrame:
    frames = [s.frame() for s in series]
    cols = ["provider_id", "nuts_code", "level", "date", *METRICS, "trend_pct"]
    if not frames:
        return pd.DataFrame(columns=cols)
    return pd.concat(frames, ignore_index=True)[cols]


def write_indicators(series: Iterable[MobilityIndicatorSeries], path: str | Path) -> pd.DataFrame:
    df = indicators_frame(series)
    for m in METRICS:
        df[m] = _round_counts(df[m]).array if len(df) else df[m]
    df["trend_pct"] = pd.to_numeric(df["trend_pct"]).round(4)
    df = df.sort_values(["provider_id", "level", "nuts_code", "date"], kind="stable")
    df.to_csv(path, index=False, lineterminator="\n")
    return df


def write_connectivity(matrices: Iterable[ConnectivityMatrix], path: str | Path) -> pd.DataFrame:
    frames = [m.frame() for m in matrices]
    cols = ["provider_id", "week", "day_class", "origin", "destination", "count"]
    df = pd.concat(frames, ignore_index=True) if frames else pd.DataFrame(columns=cols)
    if len(df):
        df["count"] = _round_counts(df["count"]).array
    df = df.sort_values(["provider_id", "week", "day_class", "origin", "destination"], kind="stable")
    df.to_csv(path, index=False, lineterminator="\n")
    return df


def write_anomalies(flags: Iterable[AnomalyFlag], path: str | Path) -> pd.DataFrame:
    rows = [(f.provider_id, f.region, f.date, f.metric, round(f.zscore, 4), f.direction) for f in flags]
    df = pd.DataFrame(rows, columns=["provider_id", "nuts_code", "date", "metric", "zscore", "direction"])
    df = df.sort_values(["provider_id", "nuts_code", "date", "metric"], kind="stable")
    df.to_csv(path, index=False, lineterminator="\n")
    return df
