"""Confidentiality suppression, the feed reasonability audit, data retention."""

from __future__ import annotations

import json
import logging
import re
from dataclasses import dataclass, field
from datetime import date, datetime, timedelta, timezone
from pathlib import Path
from typing import Iterable, Sequence

import numpy as np
import pandas as pd

from .errors import InvalidRange, StorageUnavailable
from .harmonise import HarmonizedODM
from .ingest import ATTRIBUTE_COLUMNS, CANONICAL_COLUMNS, CanonicalFeed, ProviderProfile

logger = logging.getLogger(__name__)

DEFAULT_K_OUT = 20
DEFAULT_MAX_ZONES = 5000
MIN_WINDOW_MINUTES = 15
MASKED = float("nan")

# columns of product files that hold movement counts
COUNT_COLUMNS = ("count", "internal", "inward", "outward", "total")

_IDENTIFIER = re.compile(
    r"(^|[_\W])(imsi|imei|msisdn|tmsi|iccid|msid|(user|device|subscriber|customer|account|person|caller|callee)"
    r"_?(id|key|hash)?|phone(_?(number|no))?|mac_?addr(ess)?|ip_?addr(ess)?)($|[_\W])",
    re.IGNORECASE,
)

REPORT_NOTE = (
    "Check set reconstructed from the aggregate-only and low re-identification requirements; "
    "no published quantitative risk bound exists, thresholds are configuration."
)


@dataclass(frozen=True)
class SuppressionPolicy:
    k_out: int = DEFAULT_K_OUT
    strategy: str = "drop"  # or "mask": count replaced by NaN

    def __post_init__(self):
        if isinstance(self.k_out, bool) or not isinstance(self.k_out, int) or self.k_out < 1:
            raise InvalidRange(f"k_out={self.k_out!r} must be a positive integer")
        if self.strategy not in ("drop", "mask"):
            raise InvalidRange(f"unknown suppression strategy {self.strategy!r}")

    @classmethod
    def for_providers(cls, profiles: Iterable[ProviderProfile], k_out: int = DEFAULT_K_OUT,
                      strategy: str = "drop", lift: bool = False) -> "SuppressionPolicy":
        """Policy that never undercuts the strictest provider threshold.

        With ``lift=True`` a too-low ``k_out`` is raised to that threshold
        instead of being rejected.
        """
        floor = max((p.threshold_k for p in profiles), default=1)
        if k_out < floor:
            if not lift:
                raise InvalidRange(f"k_out={k_out} below the strictest provider threshold {floor}")
            logger.warning("k_out raised from %d to provider threshold %d", k_out, floor)
            k_out = floor
        return cls(k_out, strategy)


@dataclass(frozen=True)
class SuppressionStats:
    cells_in: int = 0
    cells_suppressed: int = 0
    count_in: float = 0.0
    count_suppressed: float = 0.0

    def __add__(self, other: "SuppressionStats") -> "SuppressionStats":
        return SuppressionStats(
            self.cells_in + other.cells_in,
            self.cells_suppressed + other.cells_suppressed,
            self.count_in + other.count_in,
            self.count_suppressed + other.count_suppressed,
        )

    def as_dict(self) -> dict:
        return {"cells_in": self.cells_in, "cells_suppressed": self.cells_suppressed,
                "count_in": self.count_in, "count_suppressed": self.count_suppressed}


def suppress_table(table: pd.DataFrame, policy: SuppressionPolicy,
                   column: str = "count") -> tuple[pd.DataFrame, SuppressionStats]:
    """Drop or mask every row whose ``column`` lies strictly between 0 and k_out."""
    values = table[column].to_numpy(dtype=float)
    low = (values > 0) & (values < policy.k_out)
    stats = SuppressionStats(
        cells_in=len(values),
        cells_suppressed=int(low.sum()),
        count_in=float(np.nansum(values)),
        count_suppressed=float(values[low].sum()),
    )
    if not low.any():
        return table, stats
    if policy.strategy == "drop":
        return table.loc[~low].reset_index(drop=True), stats
    out = table.copy()
    out.loc[low, column] = MASKED
    return out, stats


def suppress(odm: HarmonizedODM, policy: SuppressionPolicy) -> tuple[HarmonizedODM, SuppressionStats]:
    table, stats = suppress_table(odm.table, policy)
    if table is odm.table:
        return odm, stats
    return HarmonizedODM(odm.day, odm.level, odm.provider_ids, table, odm.stop_time), stats


def small_counts(frame: pd.DataFrame, k_out: float, columns: Sequence[str] = COUNT_COLUMNS) -> pd.DataFrame:
    """Rows of ``frame`` with any movement-count column in (0, k_out)."""
    hit = np.zeros(len(frame), dtype=bool)
    for col in columns:
        if col in frame:
            v = pd.to_numeric(frame[col], errors="coerce").to_numpy(dtype=float)
            hit |= (v > 0) & (v < k_out)
    return frame.loc[hit]


# ---------------------------------------------------------------------------
# reasonability audit

@dataclass(frozen=True)
class Check:
    name: str
    passed: bool
    details: str


@dataclass(frozen=True)
class ReasonabilityReport:
    feed_id: str
    checks: tuple[Check, ...]
    generated_at: str = field(default_factory=lambda: datetime.now(timezone.utc).isoformat(timespec="seconds"))
    note: str = REPORT_NOTE

    @property
    def verdict(self) -> str:
        return "pass" if all(c.passed for c in self.checks) else "fail"

    @property
    def passed(self) -> bool:
        return self.verdict == "pass"

    def check(self, name: str) -> Check:
        for c in self.checks:
            if c.name == name:
                return c
        raise KeyError(name)

    def to_dict(self, timestamps: bool = True) -> dict:
        doc = {
            "feed_id": self.feed_id,
            "verdict": self.verdict,
            "note": self.note,
            "checks": [{"name": c.name, "result": "pass" if c.passed else "fail", "details": c.details}
                       for c in self.checks],
        }
        if timestamps:
            doc["generated_at"] = self.generated_at
        return doc

    def write(self, path: str | Path) -> None:
        Path(path).write_text(json.dumps(self.to_dict(), indent=2) + "\n", encoding="utf-8")


def _schema_check(feed: CanonicalFeed, profile: ProviderProfile) -> Check:
    names = set(profile.column_map) | set(profile.column_map.values()) | set(feed.source_columns)
    flagged = sorted(n for n in names if _IDENTIFIER.search(n))
    if flagged:
        return Check("schema_aggregate", False, f"user- or device-level fields present: {', '.join(flagged)}")
    unknown = sorted(set(profile.column_map) - set(CANONICAL_COLUMNS))
    extra = f"; unmapped extra fields ignored: {', '.join(unknown)}" if unknown else ""
    return Check("schema_aggregate", True, "aggregate fields only" + extra)


def _threshold_check(feed: CanonicalFeed, k: int, limit: int = 10) -> Check:
    f = feed.frame
    if f.empty:
        return Check("threshold", True, "empty feed")
    low = f["count"].to_numpy() < k
    if not low.any():
        return Check("threshold", True, f"min count {f['count'].min():g} >= {k}")
    bad = f.loc[low]
    shown = [f"{o}->{d}@{ts:%Y-%m-%dT%H:%M}={c:g}"
             for ts, o, d, c in zip(bad["window_start"], bad["origin"], bad["destination"], bad["count"])][:limit]
    more = f" (+{len(bad) - limit} more)" if len(bad) > limit else ""
    return Check("threshold", False, f"{len(bad)} cell(s) below {k}: {', '.join(shown)}{more}")


def _granularity_check(feed: CanonicalFeed, max_zones: int) -> Check:
    problems = []
    if feed.window_minutes < MIN_WINDOW_MINUTES:
        problems.append(f"window {feed.window_minutes} min < {MIN_WINDOW_MINUTES}")
    n_zones = len(feed.zones)
    if n_zones > max_zones:
        problems.append(f"{n_zones} zones > ceiling {max_zones}")
    if problems:
        return Check("granularity", False, "; ".join(problems))
    return Check("granularity", True, f"{feed.window_minutes}-min windows, {n_zones} zones (ceiling {max_zones})")


def _attribute_check(feed: CanonicalFeed, k: int) -> Check:
    f = feed.frame
    failing, seen = [], []
    for col in ATTRIBUTE_COLUMNS:
        if f.empty:
            break
        has = (f[col] != "").to_numpy()
        if not has.any():
            continue
        sub = f.loc[has]
        mins = sub.groupby(sub[col].astype(str))["count"].min()
        for value, m in mins.items():
            seen.append(f"{col}={value}")
            if m < k:
                failing.append(f"{col}={value} min {m:g}")
    if not seen:
        return Check("attribute_sparsity", True, "no attribute-bearing cells")
    if failing:
        return Check("attribute_sparsity", False, f"slices below {k}: {', '.join(failing)}")
    return Check("attribute_sparsity", True, f"{len(seen)} attribute slice(s) all >= {k}")


def reasonability_test(feed: CanonicalFeed, profile: ProviderProfile,
                       max_zones: int = DEFAULT_MAX_ZONES, generated_at: str | None = None) -> ReasonabilityReport:
    """Audit one feed before any product is derived from it.

    Failures are recorded in the report; nothing is raised.
    """
    checks = (
        _schema_check(feed, profile),
        _threshold_check(feed, profile.threshold_k),
        _granularity_check(feed, max_zones),
        _attribute_check(feed, profile.threshold_k),
    )
    kw = {"generated_at": generated_at} if generated_at else {}
    report = ReasonabilityReport(feed_id=profile.provider_id, checks=checks, **kw)
    for c in checks:
        if not c.passed:
            logger.warning("%s: %s check failed: %s", profile.provider_id, c.name, c.details)
    return report


# ---------------------------------------------------------------------------
# retention

_DATE_IN_NAME = re.compile(r"(\d{4}-\d{2}-\d{2})")


def data_date(path: Path) -> date | None:
    """Date embedded in a stored file name (last ``YYYY-MM-DD`` occurrence)."""
    found = _DATE_IN_NAME.findall(path.name)
    if not found:
        return None
    try:
        return date.fromisoformat(found[-1])
    except ValueError:
        return None


def retention_sweep(store_root: str | Path, horizon_days: int, now: date) -> list[str]:
    """Delete dated files older than ``now - horizon_days``.

    Returns the purged paths relative to ``store_root``, sorted.  Undated
    files (manifests, reports, aggregate products) are never touched.
    """
    if horizon_days < 1:
        raise InvalidRange(f"horizon_days={horizon_days} must be positive")
    root = Path(store_root)
    if not root.is_dir():
        raise StorageUnavailable(f"store {root} does not exist or is not a directory")
    cutoff = now - timedelta(days=horizon_days)
    purged = []
    try:
        for path in sorted(root.rglob("*")):
            if not path.is_file():
                continue
            d = data_date(path)
            if d is not None and d < cutoff:
                path.unlink()
                purged.append(path.relative_to(root).as_posix())
    except OSError as exc:
        raise StorageUnavailable(f"sweep of {root} failed: {exc}") from exc
    logger.info("retention sweep: %d file(s) older than %s purged", len(purged), cutoff)
    return purged
