"""Reading provider profiles and ODM feeds into one canonical representation.

Every feed, whatever its provider layout, ends up as a :class:`CanonicalFeed`:
an immutable columnar table (one row per movement cell) plus the metadata
describing how the provider produced it.  The per-row :class:`ODMCell` view is
kept for small inputs and for tests.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass, field, replace
from datetime import date, datetime, timezone
from pathlib import Path
from typing import Any, Iterable, Iterator, Mapping, Sequence

import numpy as np
import pandas as pd
import yaml

from .errors import (
    MalformedRow,
    MissingField,
    MixedProviders,
    NegativeCount,
    ThresholdViolation,
    UnknownZoning,
    WindowMisaligned,
    InvalidRange,
)

logger = logging.getLogger(__name__)

ALLOWED_WINDOWS = (15, 30, 60, 120, 240, 480, 720, 1440)
SUB_HOUR_WINDOWS = (15, 30)
MAJORITY_STOP_TIME = "time-window-majority"

REQUIRED_COLUMNS = ("origin", "destination", "window_start", "count")
ATTRIBUTE_COLUMNS = ("age_band", "sex", "roamer")
CANONICAL_COLUMNS = REQUIRED_COLUMNS + ATTRIBUTE_COLUMNS

PROFILE_FIELDS = (
    "provider_id",
    "zoning_id",
    "window_minutes",
    "stop_time_minutes",
    "extrapolated",
    "market_share",
    "threshold_k",
    "column_map",
    "crs_id",
)

TIMESTAMP_FORMAT = "%Y-%m-%dT%H:%M"


@dataclass(frozen=True, order=True)
class ZoneId:
    provider_scope: str
    code: str

    def __post_init__(self):
        if not self.code:
            raise ValueError("zone code must be non-empty")

    def __str__(self):
        return f"{self.provider_scope}:{self.code}"


@dataclass(frozen=True, order=True)
class TimeWindow:
    start: datetime
    duration: int

    def __post_init__(self):
        if self.duration not in ALLOWED_WINDOWS:
            raise InvalidRange(f"window duration {self.duration} not in {ALLOWED_WINDOWS}")
        start = _as_utc_naive(self.start)
        object.__setattr__(self, "start", start)
        minutes = start.hour * 60 + start.minute
        if start.second or start.microsecond or minutes % self.duration:
            raise InvalidRange(f"window start {start:%Y-%m-%dT%H:%M} not aligned to {self.duration} min")

    @property
    def day(self) -> date:
        return self.start.date()


@dataclass(frozen=True)
class ODMCell:
    origin: ZoneId
    destination: ZoneId
    window: TimeWindow
    count: float
    attributes: Mapping[str, str] = field(default_factory=dict)
    synthetic: bool = False  # test-only: cell predates provider suppression

    def __post_init__(self):
        if self.origin.provider_scope != self.destination.provider_scope:
            raise MixedProviders(
                f"origin scope {self.origin.provider_scope!r} != destination scope "
                f"{self.destination.provider_scope!r}"
            )
        unknown = set(self.attributes) - set(ATTRIBUTE_COLUMNS)
        if unknown:
            raise ValueError(f"unknown attribute keys: {sorted(unknown)}")


@dataclass(frozen=True)
class ProviderProfile:
    """How one provider builds and ships its origin-destination matrices."""

    provider_id: str
    zoning_id: str
    window_minutes: int
    stop_time_minutes: int | str
    extrapolated: bool
    threshold_k: int
    market_share: float | None = None
    column_map: Mapping[str, str] = field(default_factory=dict)
    crs_id: str = "EPSG:4326"

    def __post_init__(self):
        if not self.provider_id:
            raise MissingField("provider_id is empty")
        if not self.zoning_id:
            raise MissingField("zoning_id is empty")
        if isinstance(self.window_minutes, bool) or not isinstance(self.window_minutes, int):
            raise InvalidRange(f"window_minutes must be an integer, got {self.window_minutes!r}")
        if self.window_minutes not in ALLOWED_WINDOWS:
            raise InvalidRange(f"window_minutes={self.window_minutes} not in {ALLOWED_WINDOWS}")
        if self.window_minutes in SUB_HOUR_WINDOWS:
            logger.warning(
                "provider %s declares %d-minute windows, below the usual 1-24 h range",
                self.provider_id, self.window_minutes,
            )
        stop = self.stop_time_minutes
        if isinstance(stop, str):
            if stop != MAJORITY_STOP_TIME:
                raise InvalidRange(f"stop_time_minutes={stop!r}; expected 15..60 or {MAJORITY_STOP_TIME!r}")
        elif isinstance(stop, bool) or not isinstance(stop, int) or not 15 <= stop <= 60:
            raise InvalidRange(f"stop_time_minutes={stop!r} outside [15, 60]")
        if not isinstance(self.extrapolated, bool):
            raise InvalidRange(f"extrapolated must be a boolean, got {self.extrapolated!r}")
        if self.market_share is None:
            if not self.extrapolated:
                raise MissingField("market_share is required when extrapolated is false")
        elif not 0.0 < float(self.market_share) <= 1.0:
            raise InvalidRange(f"market_share={self.market_share} outside (0, 1]")
        if isinstance(self.threshold_k, bool) or not isinstance(self.threshold_k, int) or self.threshold_k < 1:
            raise InvalidRange(f"threshold_k={self.threshold_k!r} must be a positive integer")
        cmap = {name: name for name in REQUIRED_COLUMNS}
        cmap.update(dict(self.column_map))
        object.__setattr__(self, "column_map", cmap)

    def to_dict(self) -> dict[str, Any]:
        return {
            "provider_id": self.provider_id,
            "zoning_id": self.zoning_id,
            "window_minutes": self.window_minutes,
            "stop_time_minutes": self.stop_time_minutes,
            "extrapolated": self.extrapolated,
            "market_share": self.market_share,
            "threshold_k": self.threshold_k,
            "column_map": dict(self.column_map),
            "crs_id": self.crs_id,
        }


def profile_from_mapping(doc: Mapping[str, Any], known_zonings: Iterable[str] | None = None) -> ProviderProfile:
    """Build a validated profile from a parsed document."""
    if not isinstance(doc, Mapping):
        raise MissingField("profile document is not a mapping")
    required = [f for f in PROFILE_FIELDS if f not in ("market_share", "column_map", "crs_id")]
    missing = [f for f in required if f not in doc or doc[f] is None]
    if missing:
        raise MissingField(f"profile lacks required field(s): {', '.join(missing)}")
    extra = set(doc) - set(PROFILE_FIELDS)
    if extra:
        logger.warning("ignoring unknown profile keys: %s", ", ".join(sorted(extra)))
    zoning = str(doc["zoning_id"])
    if known_zonings is not None and zoning not in set(known_zonings):
        raise UnknownZoning(f"zoning {zoning!r} is not registered")
    column_map = doc.get("column_map") or {}
    if not isinstance(column_map, Mapping):
        raise InvalidRange("column_map must be a mapping of field name to CSV column")
    return ProviderProfile(
        provider_id=str(doc["provider_id"]),
        zoning_id=zoning,
        window_minutes=doc["window_minutes"],
        stop_time_minutes=doc["stop_time_minutes"],
        extrapolated=doc["extrapolated"],
        threshold_k=doc["threshold_k"],
        market_share=None if doc.get("market_share") is None else float(doc["market_share"]),
        column_map={str(k): str(v) for k, v in column_map.items()},
        crs_id=str(doc.get("crs_id") or "EPSG:4326"),
    )


def load_profile(path: str | Path, known_zonings: Iterable[str] | None = None) -> ProviderProfile:
    """Load a YAML (or JSON) provider profile and validate it.

    If ``known_zonings`` is given, the profile's ``zoning_id`` must be one of
    them, otherwise :class:`UnknownZoning` is raised.
    """
    with open(path, encoding="utf-8") as fh:
        doc = yaml.safe_load(fh)
    return profile_from_mapping(doc, known_zonings)


def dump_profile(profile: ProviderProfile, path: str | Path) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        yaml.safe_dump(profile.to_dict(), fh, sort_keys=False)


# ---------------------------------------------------------------------------
# Canonical feed

@dataclass(frozen=True)
class CanonicalFeed:
    """Immutable single-provider cell table plus provenance.

    ``frame`` columns: ``window_start`` (naive UTC datetime64), ``origin`` and
    ``destination`` (categoricals sharing one sorted category list),
    ``count`` (float64) and the attribute columns ``age_band``, ``sex``,
    ``roamer`` ("" when absent).  Weekly feeds also carry ``day_class``.

    ``level`` is None while the feed is on provider zones and the reference
    level (0-3) after :func:`odmforge.harmonise.map_zones`.
    """

    frame: pd.DataFrame
    provider_id: str
    zoning_id: str
    window_minutes: int
    threshold_k: int
    extrapolated: bool = False
    market_share: float | None = None
    stop_time: int | str | None = None
    granularity: str = "window"
    level: int | None = None
    source_columns: tuple[str, ...] = ()

    def __len__(self):
        return len(self.frame)

    @property
    def total(self) -> float:
        return float(self.frame["count"].sum())

    @property
    def zones(self) -> list[str]:
        return list(self.frame["origin"].cat.categories)

    @property
    def days(self) -> list[date]:
        return sorted({ts.date() for ts in pd.to_datetime(self.frame["window_start"].unique())})

    @property
    def has_attributes(self) -> bool:
        return bool(any((self.frame[c] != "").any() for c in ATTRIBUTE_COLUMNS))

    def with_frame(self, frame: pd.DataFrame, **changes) -> "CanonicalFeed":
        return replace(self, frame=frame, **changes)

    def cells(self) -> Iterator[ODMCell]:
        duration = self.window_minutes if self.window_minutes in ALLOWED_WINDOWS else 1440
        f = self.frame
        for start, o, d, c, a, s, r in zip(
            f["window_start"], f["origin"], f["destination"], f["count"],
            f["age_band"], f["sex"], f["roamer"],
        ):
            attrs = {k: v for k, v in zip(ATTRIBUTE_COLUMNS, (a, s, r)) if v}
            yield ODMCell(
                ZoneId(self.zoning_id, str(o)),
                ZoneId(self.zoning_id, str(d)),
                TimeWindow(start.to_pydatetime(), duration),
                float(c),
                attrs,
                synthetic=True,
            )


def zone_categoricals(origin, destination, categories=None) -> tuple[pd.Categorical, pd.Categorical]:
    """Encode origin/destination with one shared, sorted category list."""
    if categories is None:
        o = pd.unique(np.asarray(origin, dtype=object))
        d = pd.unique(np.asarray(destination, dtype=object))
        categories = sorted(set(o) | set(d))
    dtype = pd.CategoricalDtype(categories=list(categories), ordered=True)
    return pd.Categorical(origin, dtype=dtype), pd.Categorical(destination, dtype=dtype)


def _as_utc_naive(ts: datetime) -> datetime:
    if ts.tzinfo is not None:
        ts = ts.astimezone(timezone.utc).replace(tzinfo=None)
    return ts


def _empty_frame() -> pd.DataFrame:
    o, d = zone_categoricals([], [], categories=[])
    return pd.DataFrame({
        "window_start": pd.Series([], dtype="datetime64[ns]"),
        "origin": o,
        "destination": d,
        "count": pd.Series([], dtype="float64"),
        **{c: pd.Series([], dtype=str).astype("category") for c in ATTRIBUTE_COLUMNS},
    })


def _cells_to_frame(cells: Sequence[ODMCell]) -> tuple[pd.DataFrame, set[str]]:
    scopes = {c.origin.provider_scope for c in cells} | {c.destination.provider_scope for c in cells}
    frame = pd.DataFrame({
        "window_start": pd.to_datetime([c.window.start for c in cells]).astype("datetime64[ns]"),
        "origin": [c.origin.code for c in cells],
        "destination": [c.destination.code for c in cells],
        "count": np.array([c.count for c in cells], dtype=float),
        **{a: [c.attributes.get(a, "") for c in cells] for a in ATTRIBUTE_COLUMNS},
    })
    return frame, scopes


def canonicalize(cells: Sequence[ODMCell] | pd.DataFrame, profile: ProviderProfile,
                 source_columns: Sequence[str] = ()) -> CanonicalFeed:
    """Merge duplicate keys by summation and sort into canonical order.

    Accepts either parsed :class:`ODMCell` objects or the cell table returned
    by :func:`read_odm_frame`.  Row order of the result is
    ``(window_start, origin, destination, attributes)``.
    """
    if isinstance(cells, pd.DataFrame):
        frame = cells
        scopes = set(frame["scope"].unique()) if "scope" in frame else {profile.zoning_id}
    else:
        cells = list(cells)
        if not cells:
            return CanonicalFeed(_empty_frame(), profile.provider_id, profile.zoning_id,
                                 profile.window_minutes, profile.threshold_k, profile.extrapolated,
                                 profile.market_share, profile.stop_time_minutes,
                                 source_columns=tuple(source_columns))
        frame, scopes = _cells_to_frame(cells)
    if len(scopes) > 1 or (scopes and scopes != {profile.zoning_id}):
        raise MixedProviders(f"cells span zoning scopes {sorted(scopes)}; profile expects {profile.zoning_id!r}")

    frame = frame.copy()
    for col in ATTRIBUTE_COLUMNS:
        if col not in frame:
            frame[col] = ""
    ws = frame["window_start"]
    if getattr(ws.dtype, "tz", None) is not None:
        ws = ws.dt.tz_convert("UTC").dt.tz_localize(None)
    frame["window_start"] = ws.astype("datetime64[ns]")
    if isinstance(frame["origin"].dtype, pd.CategoricalDtype):
        cats = sorted(set(frame["origin"].cat.categories) | set(frame["destination"].cat.categories))
        origin = frame["origin"].astype(object)
        destination = frame["destination"].astype(object)
        o, d = zone_categoricals(origin, destination, cats)
    else:
        o, d = zone_categoricals(frame["origin"].astype(str), frame["destination"].astype(str))
    frame["origin"], frame["destination"] = o, d
    for col in ATTRIBUTE_COLUMNS:
        frame[col] = frame[col].astype(str).astype("category")
    frame["count"] = frame["count"].astype("float64")

    merged = merge_duplicates(frame, ["window_start", "origin", "destination", *ATTRIBUTE_COLUMNS])
    return CanonicalFeed(
        frame=merged,
        provider_id=profile.provider_id,
        zoning_id=profile.zoning_id,
        window_minutes=profile.window_minutes,
        threshold_k=profile.threshold_k,
        extrapolated=profile.extrapolated,
        market_share=profile.market_share,
        stop_time=profile.stop_time_minutes,
        source_columns=tuple(source_columns),
    )


def merge_duplicates(frame: pd.DataFrame, keys: list[str]) -> pd.DataFrame:
    """Sum ``count`` over identical keys; output sorted by ``keys``."""
    if frame.empty:
        return frame[keys + ["count"]].reset_index(drop=True)
    out = frame.groupby(keys, observed=True, sort=True)["count"].sum().reset_index()
    # groupby may widen categoricals of unused attribute values; keep dtypes stable
    for k in keys:
        if isinstance(frame[k].dtype, pd.CategoricalDtype) and not isinstance(out[k].dtype, pd.CategoricalDtype):
            out[k] = out[k].astype(frame[k].dtype)
    return out


# ---------------------------------------------------------------------------
# CSV I/O

def _to_float(text: str) -> float:
    try:
        return float(text)
    except ValueError:
        return np.nan


def _parse_counts(values: pd.Series) -> pd.Series:
    # correctly rounded parse; pd.to_numeric's fast path can be off by an ulp
    try:
        return values.astype("float64")
    except ValueError:
        return values.map(_to_float).astype("float64")


def read_odm_frame(path: str | Path, profile: ProviderProfile, strict: bool = True) -> pd.DataFrame:
    """Parse an ODM CSV into a canonical-column table, preserving row order.

    Line numbers in errors are 1-based file lines (the header is line 1).
    With ``strict=False`` cells below the provider threshold are kept so that
    an audit can report them.
    """
    path = Path(path)
    if path.stat().st_size == 0:
        return _empty_frame()
    raw = pd.read_csv(path, dtype=str, keep_default_na=False, encoding="utf-8")
    cmap = profile.column_map
    missing = [cmap[c] for c in REQUIRED_COLUMNS if cmap[c] not in raw.columns]
    if missing:
        raise MalformedRow(1, f"header lacks column(s) {missing}")
    if raw.empty:
        return _empty_frame()

    line = np.arange(2, len(raw) + 2)
    origin = raw[cmap["origin"]].str.strip()
    destination = raw[cmap["destination"]].str.strip()
    bad = (origin == "") | (destination == "")
    if bad.any():
        raise MalformedRow(int(line[bad.to_numpy().argmax()]), "empty origin or destination")

    count = _parse_counts(raw[cmap["count"]])
    bad = count.isna() | ~np.isfinite(count)
    if bad.any():
        i = int(bad.to_numpy().argmax())
        raise MalformedRow(int(line[i]), f"count {raw[cmap['count']].iat[i]!r} is not a number")
    neg = count < 0
    if neg.any():
        i = int(neg.to_numpy().argmax())
        raise NegativeCount(int(line[i]), f"negative count {count.iat[i]}")

    starts = pd.to_datetime(raw[cmap["window_start"]], utc=True, format="ISO8601", errors="coerce")
    bad = starts.isna()
    if bad.any():
        i = int(bad.to_numpy().argmax())
        raise MalformedRow(int(line[i]), f"unparseable window_start {raw[cmap['window_start']].iat[i]!r}")
    starts = starts.dt.tz_localize(None).astype("datetime64[ns]")
    minutes = (starts - starts.dt.normalize()) // pd.Timedelta(minutes=1)
    seconds_off = (starts - starts.dt.floor("min")) != pd.Timedelta(0)
    bad = (minutes % profile.window_minutes != 0) | seconds_off
    if bad.any():
        i = int(bad.to_numpy().argmax())
        raise WindowMisaligned(int(line[i]), f"window_start {starts.iat[i]} not aligned to "
                                             f"{profile.window_minutes}-minute windows")

    if strict:
        low = count < profile.threshold_k
        if low.any():
            i = int(low.to_numpy().argmax())
            raise ThresholdViolation(
                int(line[i]),
                f"count {count.iat[i]} below provider {profile.provider_id} threshold {profile.threshold_k}",
            )

    frame = pd.DataFrame({
        "window_start": starts,
        "origin": origin,
        "destination": destination,
        "count": count.astype("float64"),
    })
    for col in ATTRIBUTE_COLUMNS:
        name = cmap.get(col, col)
        frame[col] = raw[name].str.strip() if name in raw.columns else ""
    frame.attrs["source_columns"] = tuple(raw.columns)
    return frame


def parse_odm(path: str | Path, profile: ProviderProfile, strict: bool = True) -> list[ODMCell]:
    """Parse an ODM CSV into :class:`ODMCell` objects (one per row, file order).

    ``strict=False`` is the permissive test mode: cells under the threshold are
    returned, flagged ``synthetic``.
    """
    frame = read_odm_frame(path, profile, strict=strict)
    scope = profile.zoning_id
    out = []
    for start, o, d, c, a, s, r in zip(
        frame["window_start"], frame["origin"], frame["destination"], frame["count"],
        frame["age_band"], frame["sex"], frame["roamer"],
    ):
        attrs = {k: v for k, v in zip(ATTRIBUTE_COLUMNS, (a, s, r)) if v}
        out.append(ODMCell(
            ZoneId(scope, o), ZoneId(scope, d),
            TimeWindow(start.to_pydatetime(), profile.window_minutes),
            float(c), attrs, synthetic=c < profile.threshold_k,
        ))
    return out


def read_feed(path: str | Path, profile: ProviderProfile, strict: bool = True) -> CanonicalFeed:
    """Parse and canonicalise in one go, without materialising cell objects."""
    frame = read_odm_frame(path, profile, strict=strict)
    return canonicalize(frame, profile, source_columns=frame.attrs.get("source_columns", ()))


def format_count(x: float) -> str:
    """Shortest text that parses back to the same float; integers without '.0'."""
    x = float(x)
    if x.is_integer():
        return str(int(x))
    return repr(x)


def write_feed(feed: CanonicalFeed, path: str | Path) -> None:
    """Write a canonical feed as an ingestable CSV (canonical column names)."""
    f = feed.frame
    cols = ["origin", "destination", "window_start", "count"]
    attrs = [c for c in ATTRIBUTE_COLUMNS if (f[c] != "").any()] if len(f) else []
    out = pd.DataFrame({
        "origin": f["origin"].astype(str),
        "destination": f["destination"].astype(str),
        "window_start": f["window_start"].dt.strftime(TIMESTAMP_FORMAT),
        "count": [format_count(c) for c in f["count"]],
    })
    for c in attrs:
        out[c] = f[c].astype(str)
    if "day_class" in f:
        out["day_class"] = f["day_class"].astype(str)
    out.to_csv(path, index=False, columns=cols + attrs + (["day_class"] if "day_class" in f else []),
               lineterminator="\n")
