"""Command line entry point and the end-to-end pipeline.

    odmforge run --config run.yaml
    odmforge synth --output scen/
    odmforge audit --profile p.yaml --odm feed.csv
    odmforge harmonise --config run.yaml --output out/
    odmforge indicators --input out/harmonised --output indicators.csv
    odmforge connectivity --input out/harmonised --output connectivity.csv
    odmforge mfa --input out/mfa/daily --alpha 0.5 --output out/mfa
    odmforge sweep --store out/ --retention-days 30

Exit codes: 0 success, 2 bad configuration, 3 reasonability audit failed,
4 any other stage failure.
"""

from __future__ import annotations

import argparse
import hashlib
import json
import logging
import os
import sys
from concurrent.futures import ThreadPoolExecutor
from dataclasses import asdict, dataclass, field, replace
from datetime import date, datetime, timezone
from pathlib import Path
from typing import Any, Sequence

import numpy as np
import pandas as pd
import yaml

from . import __version__
from .errors import InsufficientBaseline, OdmForgeError
from .harmonise import (
    HarmonizedODM,
    build_harmonized,
    harmonise_feed,
    load_crosswalks,
    load_reference_zones,
    rebin_time,
    zone_categoricals,
)
from .ingest import CanonicalFeed, ProviderProfile, load_profile, read_feed
from .mfa import (
    build_graph,
    cluster_daily,
    daily_stability,
    export_mfa_geojson,
    fuzzy_intersect,
    load_zone_geometries,
    read_daily_mfa,
    write_daily_mfa,
    write_geojson,
    write_membership,
)
from .privacy import (
    DEFAULT_K_OUT,
    DEFAULT_MAX_ZONES,
    SuppressionPolicy,
    SuppressionStats,
    reasonability_test,
    retention_sweep,
    small_counts,
    suppress,
)
from .products import (
    compute_trend,
    connectivity_matrix,
    detect_anomalies,
    mobility_indicators,
    weeks_covered,
    write_anomalies,
    write_connectivity,
    write_indicators,
)

logger = logging.getLogger("odmforge")

EXIT_OK, EXIT_CONFIG, EXIT_AUDIT, EXIT_STAGE = 0, 2, 3, 4


class StageError(Exception):
    def __init__(self, stage: str, message: str, code: int = EXIT_STAGE):
        self.stage = stage
        self.code = code
        super().__init__(f"[{stage}] {message}")


def threads() -> int:
    env = os.environ.get("ODMFORGE_THREADS")
    if env:
        try:
            return max(1, int(env))
        except ValueError:
            logger.warning("ignoring non-integer ODMFORGE_THREADS=%r", env)
    return os.cpu_count() or 1


# ---------------------------------------------------------------------------
# configuration

@dataclass(frozen=True)
class FeedSource:
    profile: Path
    odm: Path


@dataclass(frozen=True)
class RunConfig:
    feeds: tuple[FeedSource, ...]
    crosswalks: tuple[Path, ...]
    zones: Path
    output_dir: Path
    level: int = 3
    k_out: int = DEFAULT_K_OUT
    baseline: tuple[date, date] | None = None
    alpha: float = 0.5
    retention_days: int | None = None
    geometries: Path | None = None
    strict: bool = False
    trigger: float = 3.0
    window_weeks: int = 4
    mfa_provider: str | None = None
    max_zones: int = DEFAULT_MAX_ZONES
    strategy: str = "drop"
    now: date | None = None

    def validate(self) -> None:
        if self.level not in (0, 1, 2, 3):
            raise StageError("config", f"level {self.level} outside 0..3", EXIT_CONFIG)
        if self.k_out < 1:
            raise StageError("config", "k_out must be positive", EXIT_CONFIG)
        if not 0 < self.alpha <= 1:
            raise StageError("config", f"alpha {self.alpha} outside (0, 1]", EXIT_CONFIG)
        if not self.feeds:
            raise StageError("config", "no feeds configured", EXIT_CONFIG)
        paths = [self.zones, *self.crosswalks, *(f.profile for f in self.feeds), *(f.odm for f in self.feeds)]
        if self.geometries:
            paths.append(self.geometries)
        missing = [str(p) for p in paths if not Path(p).exists()]
        if missing:
            raise StageError("config", f"missing input file(s): {', '.join(missing)}", EXIT_CONFIG)
        out = Path(self.output_dir)
        out.mkdir(parents=True, exist_ok=True)
        if not os.access(out, os.W_OK):
            raise StageError("config", f"output directory {out} is not writable", EXIT_CONFIG)

    def to_dict(self) -> dict[str, Any]:
        d = asdict(self)
        d["feeds"] = [{"profile": str(f.profile), "odm": str(f.odm)} for f in self.feeds]
        d["crosswalks"] = [str(p) for p in self.crosswalks]
        for k in ("zones", "output_dir", "geometries"):
            d[k] = None if d[k] is None else str(d[k])
        d["baseline"] = None if self.baseline is None else [x.isoformat() for x in self.baseline]
        d["now"] = None if self.now is None else self.now.isoformat()
        return d

    def digest(self) -> str:
        return hashlib.sha256(json.dumps(self.to_dict(), sort_keys=True).encode()).hexdigest()


def parse_baseline(text: str | None) -> tuple[date, date] | None:
    if not text:
        return None
    start, _, end = str(text).partition(":")
    try:
        return date.fromisoformat(start), date.fromisoformat(end)
    except ValueError as exc:
        raise StageError("config", f"bad baseline {text!r}; expected START:END dates", EXIT_CONFIG) from exc


def load_run_config(path: str | Path, **overrides) -> RunConfig:
    """Read a YAML run configuration; relative paths resolve against its folder."""
    path = Path(path)
    try:
        doc = yaml.safe_load(path.read_text(encoding="utf-8")) or {}
    except (OSError, yaml.YAMLError) as exc:
        raise StageError("config", f"cannot read {path}: {exc}", EXIT_CONFIG) from exc
    base = path.parent

    def rel(p):
        return None if p is None else (base / p if not Path(p).is_absolute() else Path(p))

    try:
        feeds = tuple(FeedSource(rel(f["profile"]), rel(f["odm"])) for f in doc.get("profiles", []))
        xw = doc.get("crosswalks", [])
        cfg = RunConfig(
            feeds=feeds,
            crosswalks=tuple(rel(p) for p in ([xw] if isinstance(xw, str) else xw)),
            zones=rel(doc["zones"]),
            output_dir=rel(doc.get("output_dir", "out")),
            level=int(doc.get("level", 3)),
            k_out=int(doc.get("k_out", DEFAULT_K_OUT)),
            baseline=parse_baseline(doc.get("baseline")),
            alpha=float(doc.get("alpha", 0.5)),
            retention_days=None if doc.get("retention_days") is None else int(doc["retention_days"]),
            geometries=rel(doc.get("geometries")),
            strict=bool(doc.get("strict", False)),
            trigger=float(doc.get("trigger", 3.0)),
            window_weeks=int(doc.get("window_weeks", 4)),
            mfa_provider=doc.get("mfa_provider"),
            max_zones=int(doc.get("max_zones", DEFAULT_MAX_ZONES)),
            strategy=str(doc.get("strategy", "drop")),
            now=date.fromisoformat(str(doc["now"])) if doc.get("now") else None,
        )
    except (KeyError, TypeError, ValueError) as exc:
        raise StageError("config", f"invalid run configuration {path}: {exc}", EXIT_CONFIG) from exc
    overrides = {k: v for k, v in overrides.items() if v is not None}
    return replace(cfg, **overrides) if overrides else cfg


# ---------------------------------------------------------------------------
# intermediate files

def write_harmonized(odm: HarmonizedODM, path: str | Path) -> pd.DataFrame:
    t = odm.table
    df = pd.DataFrame({
        "provider_id": odm.provider_id,
        "date": odm.day.isoformat(),
        "level": odm.level,
        "origin": t["origin"].astype(str).to_numpy(),
        "destination": t["destination"].astype(str).to_numpy(),
        "count": pd.Series(np.rint(t["count"].to_numpy(dtype=float))).astype("Int64").array,
    })
    df.to_csv(path, index=False, lineterminator="\n")
    return df


def read_harmonized(path: str | Path) -> HarmonizedODM:
    df = pd.read_csv(path, dtype={"provider_id": str, "origin": str, "destination": str, "date": str})
    if df.empty:
        raise StageError("harmonise", f"{path} holds no cells")
    o, d = zone_categoricals(df["origin"], df["destination"])
    table = pd.DataFrame({"origin": o, "destination": d, "count": df["count"].astype(float)})
    return HarmonizedODM(date.fromisoformat(df["date"].iat[0]), int(df["level"].iat[0]),
                         (str(df["provider_id"].iat[0]),), table)


def read_harmonized_dir(root: str | Path) -> dict[str, list[HarmonizedODM]]:
    out: dict[str, list[HarmonizedODM]] = {}
    for p in sorted(Path(root).rglob("odm_*.csv")):
        h = read_harmonized(p)
        out.setdefault(h.provider_id, []).append(h)
    for v in out.values():
        v.sort(key=lambda h: h.day)
    return out


def _checked_write(df: pd.DataFrame, k_out: int, what: str) -> None:
    bad = small_counts(df, k_out)
    if len(bad):
        raise StageError("suppress", f"{what}: {len(bad)} value(s) below k_out={k_out} reached export")


def _sha256(path: Path) -> str:
    return hashlib.sha256(path.read_bytes()).hexdigest()


# ---------------------------------------------------------------------------
# pipeline

@dataclass
class PipelineResult:
    exit_code: int
    manifest: dict
    outputs: list[Path] = field(default_factory=list)
    message: str = ""


def _ingest(cfg: RunConfig, zonings: set[str]):
    def one(src: FeedSource):
        prof = load_profile(src.profile, known_zonings=zonings)
        return prof, read_feed(src.odm, prof, strict=cfg.strict)

    with ThreadPoolExecutor(max_workers=threads()) as pool:
        loaded = list(pool.map(one, cfg.feeds))
    ids = [p.provider_id for p, _ in loaded]
    if len(set(ids)) != len(ids):
        raise StageError("ingest", f"duplicate provider ids {ids}")
    return loaded


def run_pipeline(cfg: RunConfig) -> PipelineResult:
    """ingest -> audit -> harmonise -> suppress -> products and MFAs.

    A failed audit stops the run before any product file exists.
    """
    manifest: dict[str, Any] = {
        "tool": "odmforge",
        "version": __version__,
        "config_sha256": cfg.digest(),
        "config": cfg.to_dict(),
        "stages": {},
        "generated_at": datetime.now(timezone.utc).isoformat(timespec="seconds"),
    }
    out_dir = Path(cfg.output_dir)
    written: list[Path] = []

    def finish(code: int, message: str = "") -> PipelineResult:
        manifest["status"] = "ok" if code == EXIT_OK else "failed"
        if message:
            manifest["error"] = message
        manifest["outputs"] = {p.relative_to(out_dir).as_posix(): _sha256(p) for p in sorted(written)}
        try:
            out_dir.mkdir(parents=True, exist_ok=True)
            (out_dir / "manifest.json").write_text(json.dumps(manifest, indent=2, sort_keys=True) + "\n",
                                                   encoding="utf-8")
        except OSError as exc:
            logger.error("cannot write manifest to %s: %s", out_dir, exc)
        return PipelineResult(code, manifest, sorted(written), message)

    try:
        cfg.validate()
        registry = load_reference_zones(cfg.zones)
        xwalks = {}
        for p in cfg.crosswalks:
            xwalks.update(load_crosswalks(p))

        # ingest
        try:
            loaded = _ingest(cfg, set(xwalks))
        except OdmForgeError as exc:
            raise StageError("ingest", str(exc)) from exc
        manifest["stages"]["ingest"] = {p.provider_id: {"rows": len(f), "total": f.total} for p, f in loaded}

        # audit gate
        audit_dir = out_dir / "audit"
        audit_dir.mkdir(parents=True, exist_ok=True)
        verdicts = {}
        for prof, feed in loaded:
            report = reasonability_test(feed, prof, cfg.max_zones)
            path = audit_dir / f"{prof.provider_id}.json"
            report.write(path)
            verdicts[prof.provider_id] = report.verdict
        manifest["stages"]["audit"] = verdicts
        failed = sorted(k for k, v in verdicts.items() if v != "pass")
        if failed:
            raise StageError("audit", f"reasonability test failed for {', '.join(failed)}", EXIT_AUDIT)

        # harmonise
        harmonised: dict[str, list[HarmonizedODM]] = {}
        for prof, feed in loaded:
            try:
                mapped = harmonise_feed(feed, xwalks[prof.zoning_id], prof, 3, registry)
                harmonised[prof.provider_id] = build_harmonized([mapped], 3, registry)
            except OdmForgeError as exc:
                raise StageError("harmonise", f"{prof.provider_id}: {exc}") from exc
        manifest["stages"]["harmonise"] = {pid: {"days": len(v), "cells": sum(len(h) for h in v)}
                                           for pid, v in harmonised.items()}

        # suppress
        policy = SuppressionPolicy.for_providers([p for p, _ in loaded], cfg.k_out, cfg.strategy, lift=True)
        manifest["k_out_effective"] = policy.k_out
        suppressed: dict[str, list[HarmonizedODM]] = {}
        sup_stats = {}
        for pid, odms in harmonised.items():
            total = SuppressionStats()
            kept = []
            for h in odms:
                s, st = suppress(h, policy)
                kept.append(s)
                total = total + st
            suppressed[pid] = kept
            sup_stats[pid] = total.as_dict()
        manifest["stages"]["suppress"] = sup_stats

        hdir = out_dir / "harmonised"
        for pid, odms in suppressed.items():
            (hdir / pid).mkdir(parents=True, exist_ok=True)
            for h in odms:
                path = hdir / pid / f"odm_{h.day.isoformat()}.csv"
                _checked_write(write_harmonized(h, path), policy.k_out, path.name)
                written.append(path)

        # products
        pdir = out_dir / "products"
        pdir.mkdir(parents=True, exist_ok=True)
        series_all, flags, matrices = [], [], []
        no_trend = 0
        for pid in sorted(suppressed):
            odms = suppressed[pid]
            for lvl in range(cfg.level + 1):
                for s in mobility_indicators(odms, lvl, registry):
                    try:
                        s = compute_trend(s, cfg.baseline)
                    except InsufficientBaseline as exc:
                        no_trend += 1
                        logger.warning("no trend for %s/%s: %s", pid, s.region, exc)
                    series_all.append(s)
                    flags.extend(detect_anomalies(s, cfg.trigger, cfg.window_weeks))
            for wk in weeks_covered(odms):
                matrices.extend(connectivity_matrix(odms, wk, policy.k_out, policy.strategy))

        ind = write_indicators(series_all, pdir / "indicators.csv")
        _checked_write(ind, policy.k_out, "indicators.csv")
        written.append(pdir / "indicators.csv")
        df = write_connectivity(matrices, pdir / "connectivity.csv")
        _checked_write(df, policy.k_out, "connectivity.csv")
        written.append(pdir / "connectivity.csv")
        write_anomalies(flags, pdir / "anomalies.csv")
        written.append(pdir / "anomalies.csv")
        manifest["stages"]["products"] = {
            "indicator_rows": len(ind),
            "series": len(series_all),
            "series_without_trend": no_trend,
            "connectivity_matrices": len(matrices),
            "connectivity_entries": sum(len(m) for m in matrices),
            "anomaly_flags": len(flags),
        }

        # mobility functional areas on the finest provider zoning
        mdir = out_dir / "mfa"
        (mdir / "daily").mkdir(parents=True, exist_ok=True)
        pick = cfg.mfa_provider or max(loaded, key=lambda pf: (len(pf[1].zones), pf[0].provider_id))[0].provider_id
        feed = dict((p.provider_id, f) for p, f in loaded).get(pick)
        if feed is None:
            raise StageError("mfa", f"mfa_provider {pick!r} is not among the feeds")
        daily_feed = rebin_time(feed, "daily")

        def cluster_day(d):
            return cluster_daily(build_graph(daily_feed, d))

        with ThreadPoolExecutor(max_workers=threads()) as pool:
            daily = list(pool.map(cluster_day, daily_feed.days))
        for d in daily:
            path = mdir / "daily" / f"mfa_{d.day.isoformat()}.csv"
            write_daily_mfa([d], path)
            written.append(path)
        mfas = fuzzy_intersect(daily, cfg.alpha) if daily else []
        write_membership(mfas, mdir / "membership.csv")
        written.append(mdir / "membership.csv")
        stab = daily_stability(daily)
        pd.DataFrame([(d.isoformat(), round(j, 12)) for d, j in stab], columns=["date", "jaccard"]).to_csv(
            mdir / "stability.csv", index=False, lineterminator="\n")
        written.append(mdir / "stability.csv")
        if cfg.geometries:
            try:
                doc = export_mfa_geojson(mfas, load_zone_geometries(cfg.geometries))
            except OdmForgeError as exc:
                raise StageError("mfa", str(exc)) from exc
            write_geojson(doc, mdir / "mfa.geojson")
            written.append(mdir / "mfa.geojson")
        manifest["stages"]["mfa"] = {"provider": pick, "days": len(daily), "persistent_mfas": len(mfas),
                                     "alpha": cfg.alpha}

        if cfg.retention_days:
            now = cfg.now or datetime.now(timezone.utc).date()
            purged = retention_sweep(out_dir, cfg.retention_days, now)
            purged_set = {out_dir / p for p in purged}
            written[:] = [p for p in written if p not in purged_set]
            manifest["stages"]["retention"] = {"horizon_days": cfg.retention_days, "purged": purged}
    except StageError as exc:
        logger.error("%s", exc)
        return finish(exc.code, str(exc))
    except OdmForgeError as exc:
        logger.error("[%s] %s", exc.stage, exc)
        return finish(EXIT_STAGE, f"[{exc.stage}] {exc}")
    return finish(EXIT_OK)


# ---------------------------------------------------------------------------
# subcommands

def _cmd_run(args) -> int:
    cfg = load_run_config(
        args.config, level=args.level, k_out=args.k_out, alpha=args.alpha,
        baseline=parse_baseline(args.baseline), output_dir=Path(args.output) if args.output else None,
        retention_days=args.retention_days, strict=args.strict,
    )
    result = run_pipeline(cfg)
    if result.exit_code:
        print(result.message, file=sys.stderr)
    else:
        print(f"wrote {len(result.outputs)} file(s) to {cfg.output_dir}")
    return result.exit_code


def _cmd_synth(args) -> int:
    from .synth import default_scenario, generate_scenario, load_scenario

    spec = load_scenario(args.config) if args.config else default_scenario()
    if args.seed is not None:
        spec = replace(spec, seed=args.seed)
    g = generate_scenario(spec, args.output)
    print(f"scenario written to {g.root}; run with: odmforge run --config {g.config}")
    return EXIT_OK


def _cmd_audit(args) -> int:
    prof = load_profile(args.profile)
    feed = read_feed(args.odm, prof, strict=False)
    report = reasonability_test(feed, prof, args.max_zones)
    if args.output:
        report.write(args.output)
    print(json.dumps(report.to_dict(), indent=2))
    return EXIT_OK if report.passed else EXIT_AUDIT


def _cmd_harmonise(args) -> int:
    cfg = load_run_config(args.config, k_out=args.k_out, output_dir=Path(args.output) if args.output else None)
    cfg.validate()
    registry = load_reference_zones(cfg.zones)
    xwalks = {}
    for p in cfg.crosswalks:
        xwalks.update(load_crosswalks(p))
    loaded = _ingest(cfg, set(xwalks))
    policy = SuppressionPolicy.for_providers([p for p, _ in loaded], cfg.k_out, cfg.strategy, lift=True)
    n = 0
    for prof, feed in loaded:
        mapped = harmonise_feed(feed, xwalks[prof.zoning_id], prof, 3, registry)
        d = Path(cfg.output_dir) / "harmonised" / prof.provider_id
        d.mkdir(parents=True, exist_ok=True)
        for h in build_harmonized([mapped], 3, registry):
            s, _ = suppress(h, policy)
            path = d / f"odm_{s.day.isoformat()}.csv"
            _checked_write(write_harmonized(s, path), policy.k_out, path.name)
            n += 1
    print(f"wrote {n} harmonised daily matrices under {Path(cfg.output_dir) / 'harmonised'}")
    return EXIT_OK


def _cmd_indicators(args) -> int:
    registry = load_reference_zones(args.zones) if args.zones else None
    series = []
    for pid, odms in read_harmonized_dir(args.input).items():
        for s in mobility_indicators(odms, args.level, registry):
            try:
                s = compute_trend(s, parse_baseline(args.baseline))
            except InsufficientBaseline as exc:
                logger.warning("no trend for %s/%s: %s", pid, s.region, exc)
            series.append(s)
    write_indicators(series, args.output)
    if args.anomalies:
        flags = [f for s in series for f in detect_anomalies(s, args.trigger, args.window_weeks)]
        write_anomalies(flags, args.anomalies)
    print(f"wrote {len(series)} series to {args.output}")
    return EXIT_OK


def _cmd_connectivity(args) -> int:
    matrices = []
    for pid, odms in read_harmonized_dir(args.input).items():
        for wk in weeks_covered(odms):
            matrices.extend(connectivity_matrix(odms, wk, args.k_out))
    df = write_connectivity(matrices, args.output)
    _checked_write(df, args.k_out, str(args.output))
    print(f"wrote {len(matrices)} matrices to {args.output}")
    return EXIT_OK


def _cmd_mfa(args) -> int:
    out = Path(args.output)
    out.mkdir(parents=True, exist_ok=True)
    if args.profile and args.odm:
        prof = load_profile(args.profile)
        feed = rebin_time(read_feed(args.odm, prof, strict=False), "daily")
        daily = [cluster_daily(build_graph(feed, d)) for d in feed.days]
        (out / "daily").mkdir(exist_ok=True)
        for d in daily:
            write_daily_mfa([d], out / "daily" / f"mfa_{d.day.isoformat()}.csv")
    else:
        src = Path(args.input)
        files = sorted(src.glob("*.csv")) if src.is_dir() else [src]
        daily = [d for f in files for d in read_daily_mfa(f)]
    mfas = fuzzy_intersect(daily, args.alpha)
    write_membership(mfas, out / "membership.csv")
    if args.geometries:
        write_geojson(export_mfa_geojson(mfas, load_zone_geometries(args.geometries)), out / "mfa.geojson")
    print(f"{len(mfas)} persistent MFA(s) from {len(daily)} day(s) at alpha={args.alpha}")
    return EXIT_OK


def _cmd_sweep(args) -> int:
    now = date.fromisoformat(args.now) if args.now else datetime.now(timezone.utc).date()
    for p in retention_sweep(args.store, args.retention_days, now):
        print(p)
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="odmforge", description=__doc__.split("\n\n")[0])
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("run", help="full pipeline from a run configuration")
    p.add_argument("--config", required=True)
    p.add_argument("--level", type=int)
    p.add_argument("--k-out", type=int)
    p.add_argument("--alpha", type=float)
    p.add_argument("--baseline", help="START:END ISO dates")
    p.add_argument("--output")
    p.add_argument("--retention-days", type=int)
    mode = p.add_mutually_exclusive_group()
    mode.add_argument("--strict", dest="strict", action="store_true", default=None,
                      help="reject below-threshold cells while parsing")
    mode.add_argument("--permissive", dest="strict", action="store_false",
                      help="parse everything and let the audit decide (default)")
    p.set_defaults(func=_cmd_run)

    p = sub.add_parser("synth", help="generate a synthetic scenario")
    p.add_argument("--config", help="scenario YAML; default scenario if omitted")
    p.add_argument("--output", required=True)
    p.add_argument("--seed", type=int)
    p.set_defaults(func=_cmd_synth)

    p = sub.add_parser("audit", help="reasonability test of one feed")
    p.add_argument("--profile", required=True)
    p.add_argument("--odm", required=True)
    p.add_argument("--output")
    p.add_argument("--max-zones", type=int, default=DEFAULT_MAX_ZONES)
    p.set_defaults(func=_cmd_audit)

    p = sub.add_parser("harmonise", help="daily NUTS3 matrices, suppressed")
    p.add_argument("--config", required=True)
    p.add_argument("--output")
    p.add_argument("--k-out", type=int)
    p.set_defaults(func=_cmd_harmonise)

    p = sub.add_parser("indicators", help="mobility indicators from harmonised matrices")
    p.add_argument("--input", required=True)
    p.add_argument("--output", required=True)
    p.add_argument("--level", type=int, default=3)
    p.add_argument("--zones")
    p.add_argument("--baseline")
    p.add_argument("--anomalies", help="also write anomaly flags here")
    p.add_argument("--trigger", type=float, default=3.0)
    p.add_argument("--window-weeks", type=int, default=4)
    p.set_defaults(func=_cmd_indicators)

    p = sub.add_parser("connectivity", help="weekly weekday/weekend connectivity matrices")
    p.add_argument("--input", required=True)
    p.add_argument("--output", required=True)
    p.add_argument("--k-out", type=int, default=DEFAULT_K_OUT)
    p.set_defaults(func=_cmd_connectivity)

    p = sub.add_parser("mfa", help="persistent MFAs from daily MFA files (or a feed)")
    p.add_argument("--input")
    p.add_argument("--profile")
    p.add_argument("--odm")
    p.add_argument("--alpha", type=float, default=0.5)
    p.add_argument("--output", required=True)
    p.add_argument("--geometries")
    p.set_defaults(func=_cmd_mfa)

    p = sub.add_parser("sweep", help="delete dated files past the retention horizon")
    p.add_argument("--store", required=True)
    p.add_argument("--retention-days", type=int, required=True)
    p.add_argument("--now", help="reference date, default today (UTC)")
    p.set_defaults(func=_cmd_sweep)
    return parser


def main(argv: Sequence[str] | None = None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    if args.command == "mfa" and not (args.input or (args.profile and args.odm)):
        parser.error("mfa needs --input, or --profile with --odm")
    try:
        return args.func(args)
    except StageError as exc:
        print(str(exc), file=sys.stderr)
        return exc.code
    except OdmForgeError as exc:
        print(f"[{exc.stage}] {exc}", file=sys.stderr)
        return EXIT_STAGE


if __name__ == "__main__":
    sys.exit(main())
