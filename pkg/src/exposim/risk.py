"""Local risk scoring: attenuation buckets, weighted exposure time, brackets.

Each matched contact minute is weighted by how close the contact was
(four signal-strength buckets) and by the transmission risk value of the
published key it matched. The weighted minutes sum to a normalized
exposure time, which is bracketed into one of three outcomes. Every
threshold lives in a config document so it can be tuned without a new
release.
"""

from __future__ import annotations

import json
from bisect import bisect_right
from dataclasses import dataclass
from enum import Enum
from importlib import resources

from .protocol import TRL_MAX, TRL_MIN, MatchedExposure

N_BUCKETS = 4

DEFAULT_CONFIG_RESOURCE = "risk_config.default"


class RiskConfigError(ValueError):
    """Malformed or invalid risk configuration document."""


class RiskBracket(Enum):
    LOW_RISK = "low_risk"
    LOW_RISK_WITH_ENCOUNTERS = "low_risk_with_encounters"
    HIGH_RISK = "high_risk"


@dataclass(frozen=True, slots=True)
class RiskConfig:
    """Tunable scoring parameters, normally loaded from a config document."""

    bucket_boundaries_db: tuple[float, float, float]
    bucket_weights: tuple[float, float, float, float]
    trv_by_trl: tuple[float, float, float, float, float, float, float, float]
    high_risk_threshold: float
    config_version: int = 1

    def __post_init__(self) -> None:
        b = self.bucket_boundaries_db
        if len(b) != N_BUCKETS - 1:
            raise RiskConfigError(f"bucket_boundaries_db must have {N_BUCKETS - 1} entries")
        if not (b[0] < b[1] < b[2]):
            raise RiskConfigError("bucket_boundaries_db not ascending")
        if len(self.bucket_weights) != N_BUCKETS:
            raise RiskConfigError(f"bucket_weights must have {N_BUCKETS} entries")
        if any(w < 0 for w in self.bucket_weights):
            raise RiskConfigError("bucket_weights must be non-negative")
        if len(self.trv_by_trl) != TRL_MAX:
            raise RiskConfigError(f"trv_by_trl must have {TRL_MAX} entries")
        if any(v < 0 for v in self.trv_by_trl):
            raise RiskConfigError("trv_by_trl must be non-negative")
        if not self.high_risk_threshold > 0:
            raise RiskConfigError("high_risk_threshold must be > 0")


def bucket_of(attenuation_db: float, config: RiskConfig) -> int:
    """Bucket index 0 (close) .. 3 (very far); a boundary value belongs to
    the farther bucket."""
    if attenuation_db < 0:
        raise ValueError(f"attenuation_db must be >= 0, got {attenuation_db}")
    return bisect_right(config.bucket_boundaries_db, attenuation_db)


def normalized_exposure(exposure: MatchedExposure, trl: int, config: RiskConfig) -> float:
    """Weighted contact minutes for one matched key, scaled by its TRV."""
    if not TRL_MIN <= trl <= TRL_MAX:
        raise RiskConfigError(f"trl must be in [{TRL_MIN}, {TRL_MAX}], got {trl}")
    minutes = 0.0
    for rec in exposure.records:
        minutes += config.bucket_weights[bucket_of(rec.attenuation_db, config)] * rec.duration_minutes
    return config.trv_by_trl[trl - 1] * minutes


def total_risk(
    exposures: list[tuple[MatchedExposure, int]],
    config: RiskConfig,
) -> RiskBracket:
    """Sum normalized exposures over all matched keys and bracket the total.

    An empty exposure list means no encounter at all; a positive list with
    a zero total still counts as an encounter (the contact happened, it
    just scored zero).
    """
    if not exposures:
        return RiskBracket.LOW_RISK
    total = 0.0
    for exposure, trl in exposures:
        total += normalized_exposure(exposure, trl, config)
    if total >= config.high_risk_threshold:
        return RiskBracket.HIGH_RISK
    return RiskBracket.LOW_RISK_WITH_ENCOUNTERS


_FIELDS = {
    "bucket_boundaries_db": (list, 3),
    "bucket_weights": (list, 4),
    "trv_by_trl": (list, 8),
    "high_risk_threshold": (float, None),
    "config_version": (int, None),
}


def load_config(document: str) -> RiskConfig:
    """Parse and validate a risk configuration document (JSON key/value tree)."""
    try:
        raw = json.loads(document)
    except json.JSONDecodeError as exc:
        raise RiskConfigError(f"config parse error: {exc}") from exc
    if not isinstance(raw, dict):
        raise RiskConfigError("config parse error: top level must be an object")

    unknown = set(raw) - set(_FIELDS)
    if unknown:
        raise RiskConfigError(f"unknown config field(s): {', '.join(sorted(unknown))}")
    missing = {name for name in _FIELDS if name != "config_version"} - set(raw)
    if missing:
        raise RiskConfigError(f"missing config field(s): {', '.join(sorted(missing))}")

    def numbers(name: str, n: int) -> tuple[float, ...]:
        value = raw[name]
        if not isinstance(value, list) or len(value) != n:
            raise RiskConfigError(f"{name} must be a list of {n} numbers")
        if not all(isinstance(x, (int, float)) and not isinstance(x, bool) for x in value):
            raise RiskConfigError(f"{name} must contain only numbers")
        return tuple(float(x) for x in value)

    threshold = raw["high_risk_threshold"]
    if not isinstance(threshold, (int, float)) or isinstance(threshold, bool):
        raise RiskConfigError("high_risk_threshold must be a number")
    version = raw.get("config_version", 1)
    if not isinstance(version, int) or isinstance(version, bool):
        raise RiskConfigError("config_version must be an integer")

    return RiskConfig(
        bucket_boundaries_db=numbers("bucket_boundaries_db", 3),
        bucket_weights=numbers("bucket_weights", 4),
        trv_by_trl=numbers("trv_by_trl", 8),
        high_risk_threshold=float(threshold),
        config_version=version,
    )


def load_config_file(path: str) -> RiskConfig:
    with open(path, "r", encoding="utf-8") as fh:
        return load_config(fh.read())


def default_config() -> RiskConfig:
    """The shipped default configuration."""
    text = resources.files(__package__).joinpath(DEFAULT_CONFIG_RESOURCE).read_text("utf-8")
    return load_config(text)
