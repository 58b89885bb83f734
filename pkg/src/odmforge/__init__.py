"""Harmonise multi-operator origin-destination matrices into privacy-safe mobility products."""

__version__ = "0.1.0"

from .errors import OdmForgeError
from .ingest import CanonicalFeed, ODMCell, ProviderProfile, TimeWindow, ZoneId, load_profile, parse_odm, read_feed
from .harmonise import (
    HarmonizedODM,
    ZoneCrosswalk,
    build_harmonized,
    extrapolate,
    harmonise_feed,
    load_crosswalks,
    load_reference_zones,
    map_zones,
    rebin_time,
)
from .privacy import SuppressionPolicy, reasonability_test, retention_sweep, suppress
from .products import (
    ConnectivityMatrix,
    MobilityIndicatorSeries,
    compute_trend,
    connectivity_matrix,
    detect_anomalies,
    mobility_indicators,
)
from .mfa import DailyMFA, MobilityGraph, PersistentMFA, build_graph, cluster_daily, export_mfa_geojson, fuzzy_intersect
from .synth import ScenarioSpec, default_scenario, generate_scenario

__all__ = [name for name in dir() if not name.startswith("_") and name != "annotations"]
