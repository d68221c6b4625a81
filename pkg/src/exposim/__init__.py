"""exposim: deterministic agent-based simulator of decentralized,
privacy-preserving contact tracing, with a headless batch harness and a
live steering session for the interactive UI."""

from .protocol import (
    ContactRecord,
    DiagnosisKey,
    MatchedExposure,
    RollingProximityIdentifier,
    TemporaryExposureKey,
    derive_day_rpis,
    derive_rpi,
    generate_tek,
    interval_number,
    match_observations,
    match_permanent,
    permanent_id,
)
from .risk import RiskBracket, RiskConfig, bucket_of, default_config, load_config, normalized_exposure, total_risk
from .server import ServerState
from .world import Agent, Device, HealthState, IdMode, SimParams, World, attenuation_of, init_world
from .harness import (
    ComparisonReport,
    MetricsSeries,
    RunSummary,
    compare,
    privacy_audit,
    run_cluster_scenario,
    run_scenario,
)
from .session import SessionServer, serve_session

__version__ = "0.1.0"
