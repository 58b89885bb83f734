"""Synthetic multi-provider ODM scenarios with a known ground truth.

Movements between base grid cells follow a gravity law,

    flow(i, j, day) = scale * pop(i) * pop(j) / dist(i, j) ** decay * modulation(day) * noise

and every provider re-expresses that truth in its own way: coarser zones,
its own time windows, subscriber sampling, threshold suppression and, for
some, extrapolation back to the full population.  The files written are the
exact inputs the ingest module expects.
"""

from __future__ import annotations

import json
import logging
from dataclasses import dataclass, field, replace
from datetime import date, datetime, timedelta
from pathlib import Path
from typing import Any, Mapping, Sequence

import numpy as np
import pandas as pd
import yaml

from .errors import InvalidSpec
from .harmonise import RefZone, ZoneCrosswalk, ZoneRegistry, write_crosswalks, write_reference_zones
from .ingest import TIMESTAMP_FORMAT, ProviderProfile, dump_profile, format_count, profile_from_mapping

logger = logging.getLogger(__name__)

# share of a day's movements starting in each UTC hour
DIURNAL = np.array([
    0.6, 0.4, 0.3, 0.3, 0.4, 0.8, 2.0, 4.5, 6.5, 5.5, 4.8, 5.0,
    5.6, 5.4, 5.0, 5.3, 6.2, 7.2, 6.8, 5.6, 4.4, 3.4, 2.3, 1.2,
])
DIURNAL = DIURNAL / DIURNAL.sum()


@dataclass(frozen=True)
class SynthZone:
    code: str
    col: int
    row: int
    population: float
    nuts3: str
    metro: str = ""


@dataclass(frozen=True)
class SynthProvider:
    """A provider profile plus how its zoning is cut from the base grid.

    Provider zones are ``block`` x ``block`` squares of base cells, shifted
    by ``offset`` cells so that they can straddle NUTS3 borders.
    """

    profile: ProviderProfile
    block: int = 1
    offset: int = 0

    def zone_of(self, col: int, row: int) -> str:
        return f"{self.profile.zoning_id}-{(col + self.offset) // self.block:02d}-{(row + self.offset) // self.block:02d}"


@dataclass(frozen=True)
class ScenarioSpec:
    zones: tuple[SynthZone, ...]
    providers: tuple[SynthProvider, ...]
    start: date
    days: int
    gravity_scale: float
    distance_decay: float
    modulation: Mapping[date, float] = field(default_factory=dict)
    seed: int = 0
    noise_sigma: float = 0.1
    sampling_noise: bool = True
    cell_km: float = 1.0
    intra_km: float = 0.5
    origin_lonlat: tuple[float, float] = (10.0, 47.0)
    cell_deg: float = 0.01
    country: str = "XX"

    def __post_init__(self):
        if not self.zones:
            raise InvalidSpec("scenario has no zones")
        if not self.distance_decay > 0:
            raise InvalidSpec(f"distance_decay must be > 0, got {self.distance_decay}")
        if any(not z.population > 0 for z in self.zones):
            raise InvalidSpec("all zone populations must be > 0")
        if len({z.code for z in self.zones}) != len(self.zones):
            raise InvalidSpec("duplicate zone codes")
        if len({(z.col, z.row) for z in self.zones}) != len(self.zones):
            raise InvalidSpec("two zones share a grid position")
        if self.days < 1:
            raise InvalidSpec("days must be >= 1")
        if not self.providers:
            raise InvalidSpec("scenario has no providers")
        if len({p.profile.provider_id for p in self.providers}) != len(self.providers):
            raise InvalidSpec("duplicate provider ids")
        if any(p.block < 1 or p.offset < 0 for p in self.providers):
            raise InvalidSpec("provider block must be >= 1 and offset >= 0")
        if any(v < 0 for v in self.modulation.values()):
            raise InvalidSpec("modulation multipliers must be >= 0")
        if self.noise_sigma < 0 or self.gravity_scale < 0:
            raise InvalidSpec("noise_sigma and gravity_scale must be >= 0")
        if not 0 <= int(self.seed) < 2 ** 64:
            raise InvalidSpec("seed must be a 64-bit unsigned integer")
        for z in self.zones:
            if not z.nuts3.startswith(self.country) or len(z.nuts3) != len(self.country) + 3:
                raise InvalidSpec(f"{z.code}: NUTS3 code {z.nuts3!r} must be {self.country} + 3 characters")

    @property
    def dates(self) -> list[date]:
        return [self.start + timedelta(days=i) for i in range(self.days)]

    def multiplier(self, d: date) -> float:
        return float(self.modulation.get(d, 1.0))

    def with_modulation(self, modulation: Mapping[date, float]) -> "ScenarioSpec":
        return replace(self, modulation=dict(modulation))

    def to_dict(self) -> dict[str, Any]:
        return {
            "start": self.start.isoformat(),
            "days": self.days,
            "seed": int(self.seed),
            "gravity": {"scale": self.gravity_scale, "distance_decay": self.distance_decay},
            "noise_sigma": self.noise_sigma,
            "sampling_noise": self.sampling_noise,
            "cell_km": self.cell_km,
            "intra_km": self.intra_km,
            "origin_lonlat": list(self.origin_lonlat),
            "cell_deg": self.cell_deg,
            "country": self.country,
            "modulation": {d.isoformat(): float(v) for d, v in sorted(self.modulation.items())},
            "zones": [{"code": z.code, "col": z.col, "row": z.row, "population": float(z.population),
                       "nuts3": z.nuts3, "metro": z.metro} for z in self.zones],
            "providers": [{"block": p.block, "offset": p.offset, "profile": p.profile.to_dict()}
                          for p in self.providers],
        }

    @classmethod
    def from_dict(cls, doc: Mapping[str, Any]) -> "ScenarioSpec":
        try:
            grav = doc["gravity"]
            return cls(
                zones=tuple(SynthZone(str(z["code"]), int(z["col"]), int(z["row"]), float(z["population"]),
                                      str(z["nuts3"]), str(z.get("metro", ""))) for z in doc["zones"]),
                providers=tuple(SynthProvider(profile_from_mapping(p["profile"]), int(p.get("block", 1)),
                                              int(p.get("offset", 0))) for p in doc["providers"]),
                start=date.fromisoformat(str(doc["start"])),
                days=int(doc["days"]),
                gravity_scale=float(grav["scale"]),
                distance_decay=float(grav["distance_decay"]),
                modulation={date.fromisoformat(k): float(v) for k, v in (doc.get("modulation") or {}).items()},
                seed=int(doc.get("seed", 0)),
                noise_sigma=float(doc.get("noise_sigma", 0.1)),
                sampling_noise=bool(doc.get("sampling_noise", True)),
                cell_km=float(doc.get("cell_km", 1.0)),
                intra_km=float(doc.get("intra_km", 0.5)),
                origin_lonlat=tuple(doc.get("origin_lonlat", (10.0, 47.0))),
                cell_deg=float(doc.get("cell_deg", 0.01)),
                country=str(doc.get("country", "XX")),
            )
        except (KeyError, TypeError, ValueError) as exc:
            if isinstance(exc, InvalidSpec):
                raise
            raise InvalidSpec(f"bad scenario document: {exc}") from exc


def load_scenario(path: str | Path) -> ScenarioSpec:
    with open(path, encoding="utf-8") as fh:
        return ScenarioSpec.from_dict(yaml.safe_load(fh))


def dump_scenario(spec: ScenarioSpec, path: str | Path) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        yaml.safe_dump(spec.to_dict(), fh, sort_keys=False)


# ---------------------------------------------------------------------------
# ready-made scenarios

def default_providers() -> tuple[SynthProvider, ...]:
    """Fine grid / 1 h / K=10 subscriber counts, coarse / 24 h / K=30
    extrapolated, mid / 8 h / K=20 majority-presence."""
    fine = ProviderProfile("mno_fine", "grid", 60, 30, extrapolated=False, threshold_k=10, market_share=0.35)
    coarse = ProviderProfile(
        "mno_coarse", "coarse", 1440, 60, extrapolated=True, threshold_k=30, market_share=0.4,
        column_map={"origin": "from_zone", "destination": "to_zone", "window_start": "day", "count": "trips"},
        crs_id="EPSG:3035",
    )
    mid = ProviderProfile(
        "mno_mid", "mid", 480, "time-window-majority", extrapolated=False, threshold_k=20, market_share=0.25,
        column_map={"origin": "o", "destination": "d", "window_start": "t", "count": "n"},
    )
    return (SynthProvider(fine, 1, 0), SynthProvider(coarse, 4, 2), SynthProvider(mid, 2, 0))


def two_metro_zones(size: int = 6, gap: int = 4, peak: float = 60000.0, floor: float = 6000.0,
                    spread: float = 1.5, country: str = "XX") -> tuple[SynthZone, ...]:
    """Two square metro areas separated by an empty gap.

    Each metro is one NUTS2 region split into four NUTS3 quadrants; population
    peaks at the metro centre.
    """
    zones = []
    half = size // 2
    for m, (name, x0) in enumerate((("A", 0), ("B", size + gap))):
        cx = cy = (size - 1) / 2.0
        for dx in range(size):
            for dy in range(size):
                r2 = (dx - cx) ** 2 + (dy - cy) ** 2
                pop = floor + peak * np.exp(-r2 / (2 * spread ** 2))
                quadrant = 1 + (dx >= half) + 2 * (dy >= half)
                nuts3 = f"{country}1{m + 1}{quadrant}"
                col, row = x0 + dx, dy
                zones.append(SynthZone(f"C{col:02d}{row:02d}", col, row, round(float(pop), 1), nuts3, name))
    return tuple(zones)


def lockdown_modulation(start: date, days: int, weekend: float = 0.75, onset_week: int = 4,
                        ramp_days: int = 7, floor: float = 0.35, recovery: float = 0.6) -> dict[date, float]:
    """Normal weeks, a ramp into lockdown, then partial recovery in the last week."""
    out = {}
    onset = start + timedelta(weeks=onset_week)
    for i in range(days):
        d = start + timedelta(days=i)
        level = 1.0
        if d >= onset:
            k = (d - onset).days
            level = 1.0 - (1.0 - floor) * min(1.0, (k + 1) / ramp_days)
            if days - i <= 7 and days >= 8 * 7:
                level = recovery
        out[d] = level * (weekend if d.weekday() >= 5 else 1.0)
    return out


def default_scenario(seed: int = 20200408, start: date = date(2020, 2, 3), days: int = 56,
                     **overrides) -> ScenarioSpec:
    """Two planted metros, three heterogeneous providers, a lockdown dip."""
    spec = ScenarioSpec(
        zones=two_metro_zones(),
        providers=default_providers(),
        start=start,
        days=days,
        gravity_scale=1.0e-6,
        distance_decay=2.0,
        modulation=lockdown_modulation(start, days),
        seed=seed,
    )
    return replace(spec, **overrides) if overrides else spec


def constant_scenario(seed: int = 7, start: date = date(2020, 2, 3), days: int = 42, **overrides) -> ScenarioSpec:
    """Flat mobility: every day identical (noise-free unless overridden)."""
    base = dict(noise_sigma=0.0, sampling_noise=False, modulation={})
    base.update(overrides)
    return default_scenario(seed=seed, start=start, days=days, **base)


# ---------------------------------------------------------------------------
# generation

def reference_registry(spec: ScenarioSpec) -> ZoneRegistry:
    """NUTS0-3 hierarchy implied by the zones' NUTS3 codes, with populations."""
    pops: dict[str, float] = {}
    for z in spec.zones:
        for lvl in range(4):
            code = z.nuts3[: len(spec.country) + lvl]
            pops[code] = pops.get(code, 0.0) + z.population
    zones = []
    for code, pop in sorted(pops.items()):
        lvl = len(code) - len(spec.country)
        zones.append(RefZone(code, lvl, code[:-1] if lvl else None, max(1, int(round(pop)))))
    return ZoneRegistry(zones)


def provider_crosswalk(spec: ScenarioSpec, provider: SynthProvider) -> ZoneCrosswalk:
    """Area-share weights: base cells of each provider zone per NUTS3 region."""
    cells: dict[str, dict[str, int]] = {}
    for z in spec.zones:
        pz = provider.zone_of(z.col, z.row)
        cells.setdefault(pz, {}).setdefault(z.nuts3, 0)
        cells[pz][z.nuts3] += 1
    entries = {}
    for pz, by in cells.items():
        n = sum(by.values())
        entries[pz] = [(nuts, c / n) for nuts, c in sorted(by.items())]
    return ZoneCrosswalk(provider.profile.zoning_id, entries)


def gravity_matrix(spec: ScenarioSpec) -> np.ndarray:
    """Noise-free daily flows between base cells at multiplier 1."""
    xy = np.array([(z.col, z.row) for z in spec.zones], dtype=float) * spec.cell_km
    pop = np.array([z.population for z in spec.zones], dtype=float)
    dist = np.sqrt(((xy[:, None, :] - xy[None, :, :]) ** 2).sum(axis=-1))
    np.fill_diagonal(dist, spec.intra_km)
    return spec.gravity_scale * np.outer(pop, pop) / dist ** spec.distance_decay


def truth_flows(spec: ScenarioSpec) -> list[np.ndarray]:
    """Per-day noisy ground-truth matrices between base cells."""
    rng = np.random.default_rng(np.random.SeedSequence([int(spec.seed), 0]))
    base = gravity_matrix(spec)
    out = []
    sigma = spec.noise_sigma
    for d in spec.dates:
        noise = rng.normal(-0.5 * sigma ** 2, sigma, size=base.shape) if sigma > 0 else 0.0
        out.append(base * spec.multiplier(d) * np.exp(noise))
    return out


def _window_shares(window_minutes: int) -> np.ndarray:
    per_minute = np.repeat(DIURNAL / 60.0, 60)
    return per_minute.reshape(-1, window_minutes).sum(axis=1)


@dataclass
class GeneratedScenario:
    root: Path
    spec: ScenarioSpec
    profiles: dict[str, Path]
    odms: dict[str, Path]
    crosswalks: Path
    reference_zones: Path
    geometries: Path
    truth: Path
    config: Path
    planted: dict[str, dict[str, list[str]]]

    def truth_frame(self) -> pd.DataFrame:
        return pd.read_csv(self.truth, dtype={"origin": str, "destination": str}, parse_dates=["date"])


def _cell_polygon(spec: ScenarioSpec, cells: Sequence[SynthZone]):
    from shapely.geometry import box
    from shapely.ops import unary_union

    lon0, lat0 = spec.origin_lonlat
    s = spec.cell_deg
    return unary_union([box(lon0 + z.col * s, lat0 + z.row * s, lon0 + (z.col + 1) * s, lat0 + (z.row + 1) * s)
                        for z in cells])


def _emit_provider(spec: ScenarioSpec, provider: SynthProvider, index: int,
                   flows: Sequence[np.ndarray]) -> pd.DataFrame:
    prof = provider.profile
    zone_codes = [provider.zone_of(z.col, z.row) for z in spec.zones]
    pzones = sorted(set(zone_codes))
    member = np.zeros((len(spec.zones), len(pzones)))
    member[np.arange(len(spec.zones)), pd.Index(pzones).get_indexer(zone_codes)] = 1.0
    shares = _window_shares(prof.window_minutes)
    share_market = prof.market_share if prof.market_share is not None else 1.0
    rng = np.random.default_rng(np.random.SeedSequence([int(spec.seed), index + 1]))
    oo, dd = np.meshgrid(np.arange(len(pzones)), np.arange(len(pzones)), indexing="ij")
    oo, dd = oo.ravel(), dd.ravel()
    codes = np.asarray(pzones, dtype=object)

    parts = []
    for d, truth in zip(spec.dates, flows):
        agg = (member.T @ truth @ member).ravel()
        expected = np.outer(shares, agg) * share_market  # windows x pairs, subscriber scale
        if spec.sampling_noise:
            observed = rng.poisson(expected).astype(float)
        else:
            observed = np.rint(expected)
        if prof.extrapolated:
            observed = np.round(observed / share_market, 3)
        keep = observed >= prof.threshold_k
        w_idx, p_idx = np.nonzero(keep)
        if not len(w_idx):
            continue
        starts = datetime(d.year, d.month, d.day) + pd.to_timedelta(w_idx * prof.window_minutes, unit="min")
        parts.append(pd.DataFrame({
            "origin": codes[oo[p_idx]],
            "destination": codes[dd[p_idx]],
            "window_start": starts.strftime(TIMESTAMP_FORMAT),
            "count": observed[w_idx, p_idx],
        }))
    cols = ["origin", "destination", "window_start", "count"]
    df = pd.concat(parts, ignore_index=True) if parts else pd.DataFrame(columns=cols)
    df = df.sort_values(["window_start", "origin", "destination"], kind="stable", ignore_index=True)
    df["count"] = [format_count(c) for c in df["count"]]
    return df.rename(columns={c: prof.column_map[c] for c in cols})


def generate_scenario(spec: ScenarioSpec, out_dir: str | Path) -> GeneratedScenario:
    """Write provider feeds, profiles, reference data and the ground truth.

    The same scenario and seed give byte-identical files.
    """
    root = Path(out_dir)
    (root / "providers").mkdir(parents=True, exist_ok=True)
    dump_scenario(spec, root / "scenario.yaml")

    registry = reference_registry(spec)
    write_reference_zones(registry, root / "reference_zones.csv")
    xwalks = [provider_crosswalk(spec, p) for p in spec.providers]
    write_crosswalks(xwalks, root / "crosswalks.csv")

    geo_rows = []
    for z in spec.zones:
        geo_rows.append(("base", z.code, _cell_polygon(spec, [z]).wkt))
    for p in spec.providers:
        groups: dict[str, list[SynthZone]] = {}
        for z in spec.zones:
            groups.setdefault(p.zone_of(z.col, z.row), []).append(z)
        for code in sorted(groups):
            geo_rows.append((p.profile.zoning_id, code, _cell_polygon(spec, groups[code]).wkt))
    pd.DataFrame(geo_rows, columns=["zoning_id", "zone_code", "wkt"]).to_csv(
        root / "geometries.csv", index=False, lineterminator="\n")

    lon0, lat0 = spec.origin_lonlat
    pd.DataFrame([{
        "code": z.code, "col": z.col, "row": z.row,
        "lon": round(lon0 + (z.col + 0.5) * spec.cell_deg, 6), "lat": round(lat0 + (z.row + 0.5) * spec.cell_deg, 6),
        "population": z.population, "nuts3": z.nuts3, "metro": z.metro,
    } for z in spec.zones]).to_csv(root / "base_zones.csv", index=False, lineterminator="\n")

    flows = truth_flows(spec)
    codes = np.array([z.code for z in spec.zones], dtype=object)
    n = len(codes)
    truth_parts = []
    for d, f in zip(spec.dates, flows):
        nz = np.flatnonzero(f.ravel() > 0)
        truth_parts.append(pd.DataFrame({"date": d.isoformat(), "origin": codes[nz // n],
                                         "destination": codes[nz % n], "flow": f.ravel()[nz]}))
    truth = pd.concat(truth_parts, ignore_index=True)
    truth.to_csv(root / "truth.csv", index=False, lineterminator="\n", float_format="%.6f")

    profiles, odms = {}, {}
    for i, p in enumerate(spec.providers):
        pid = p.profile.provider_id
        pdir = root / "providers" / pid
        pdir.mkdir(parents=True, exist_ok=True)
        profiles[pid] = pdir / "profile.yaml"
        dump_profile(p.profile, profiles[pid])
        odms[pid] = pdir / "odm.csv"
        _emit_provider(spec, p, i, flows).to_csv(odms[pid], index=False, lineterminator="\n")
        logger.info("synth: wrote %s", odms[pid])

    planted: dict[str, dict[str, list[str]]] = {}
    for metro in sorted({z.metro for z in spec.zones if z.metro}):
        cells = [z for z in spec.zones if z.metro == metro]
        planted[metro] = {"base": sorted(z.code for z in cells)}
        for p in spec.providers:
            planted[metro][p.profile.zoning_id] = sorted({p.zone_of(z.col, z.row) for z in cells})
    (root / "planted.json").write_text(json.dumps(planted, indent=2, sort_keys=True) + "\n", encoding="utf-8")

    config = {
        "profiles": [{"profile": f"providers/{pid}/profile.yaml", "odm": f"providers/{pid}/odm.csv"}
                     for pid in profiles],
        "crosswalks": ["crosswalks.csv"],
        "zones": "reference_zones.csv",
        "geometries": "geometries.csv",
        "level": 3,
        "k_out": 20,
        "alpha": 0.5,
        "output_dir": "out",
    }
    config_path = root / "run.yaml"
    with open(config_path, "w", encoding="utf-8") as fh:
        yaml.safe_dump(config, fh, sort_keys=False)

    return GeneratedScenario(root, spec, profiles, odms, root / "crosswalks.csv", root / "reference_zones.csv",
                             root / "geometries.csv", root / "truth.csv", config_path, planted)
