"""Key schedule, rolling identifiers, and diagnosis-key matching.

Every device owns one secret key per day (the temporary exposure key).
Broadcast identifiers are derived from that key with a keyed hash and
rotate every few minutes, so an eavesdropper cannot link two broadcasts
without the key. After a positive test the day keys are published, and
every other device re-derives the day's identifiers locally to find out
whether it has seen them. All functions here are pure: byte-identical
inputs give byte-identical outputs.
"""

from __future__ import annotations

import hashlib
import hmac
from dataclasses import dataclass, field

MINUTES_PER_DAY = 1440
ROTATION_MIN_MINUTES = 10
ROTATION_MAX_MINUTES = 20
DEFAULT_ROTATION_MINUTES = 10
KEY_BYTES = 16
TRL_MIN = 1
TRL_MAX = 8

_RPI_TAG = b"EXPOSIM-RPI"


@dataclass(frozen=True, slots=True)
class TemporaryExposureKey:
    """Per-day secret seed of one device's broadcast identity."""

    key_bytes: bytes
    day_index: int

    def __post_init__(self) -> None:
        if len(self.key_bytes) != KEY_BYTES:
            raise ValueError(f"key_bytes must be {KEY_BYTES} bytes, got {len(self.key_bytes)}")
        if self.day_index < 0:
            raise ValueError(f"day_index must be >= 0, got {self.day_index}")


@dataclass(frozen=True, slots=True)
class RollingProximityIdentifier:
    """Short-lived broadcast token, a pure function of (key, interval)."""

    rpi_bytes: bytes
    interval_number: int

    def __post_init__(self) -> None:
        if len(self.rpi_bytes) != KEY_BYTES:
            raise ValueError(f"rpi_bytes must be {KEY_BYTES} bytes, got {len(self.rpi_bytes)}")
        if self.interval_number < 0:
            raise ValueError(f"interval_number must be >= 0, got {self.interval_number}")

    def hex_prefix(self, n: int = 8) -> str:
        return self.rpi_bytes.hex()[:n]


@dataclass(slots=True)
class ContactRecord:
    """One locally stored observation of a foreign identifier.

    Lives only on the observing device. Duration never spans a rotation
    boundary, so a record always belongs to exactly one interval.
    """

    observed_rpi: RollingProximityIdentifier
    attenuation_db: float
    start_interval: int
    duration_minutes: float


@dataclass(frozen=True, slots=True)
class DiagnosisKey:
    """A published day key plus its transmission risk level.

    Carries no device or agent identity, by construction.
    """

    tek: TemporaryExposureKey
    transmission_risk_level: int

    def __post_init__(self) -> None:
        trl = self.transmission_risk_level
        if not TRL_MIN <= trl <= TRL_MAX:
            raise ValueError(f"transmission_risk_level must be in [{TRL_MIN}, {TRL_MAX}], got {trl}")


@dataclass(slots=True)
class MatchedExposure:
    """All stored records that a single published key explains."""

    diagnosis_key_ref: int
    records: list[ContactRecord] = field(default_factory=list)


def generate_tek(rng, day_index: int) -> TemporaryExposureKey:
    """Draw a fresh 16-byte day key from a seeded generator."""
    if day_index < 0:
        raise ValueError(f"day_index must be >= 0, got {day_index}")
    return TemporaryExposureKey(bytes(rng.bytes(KEY_BYTES)), day_index)


def _check_rotation(rotation_minutes: int) -> None:
    if not ROTATION_MIN_MINUTES <= rotation_minutes <= ROTATION_MAX_MINUTES:
        raise ValueError(
            f"rotation_minutes must be in [{ROTATION_MIN_MINUTES}, {ROTATION_MAX_MINUTES}], "
            f"got {rotation_minutes}"
        )


def interval_number(sim_minute: int, rotation_minutes: int = DEFAULT_ROTATION_MINUTES) -> int:
    """Rotation interval index containing a simulation minute."""
    _check_rotation(rotation_minutes)
    if sim_minute < 0:
        raise ValueError(f"sim_minute must be >= 0, got {sim_minute}")
    return sim_minute // rotation_minutes


def day_interval_range(day_index: int, rotation_minutes: int = DEFAULT_ROTATION_MINUTES) -> range:
    """Intervals whose start minute falls within the given day."""
    _check_rotation(rotation_minutes)
    first = -((-day_index * MINUTES_PER_DAY) // rotation_minutes)  # ceil division
    stop = -((-(day_index + 1) * MINUTES_PER_DAY) // rotation_minutes)
    return range(first, stop)


def rpi_bytes_for(key_bytes: bytes, interval: int) -> bytes:
    """Raw identifier bytes for (key, interval); the hot inner derivation."""
    return hmac.digest(key_bytes, _RPI_TAG + interval.to_bytes(4, "little"), hashlib.sha256)[:KEY_BYTES]


def derive_rpi(
    tek: TemporaryExposureKey,
    interval: int,
    rotation_minutes: int = DEFAULT_ROTATION_MINUTES,
) -> RollingProximityIdentifier:
    """Derive the identifier broadcast during one interval of the key's day.

    HMAC-SHA256 keyed with the day key over a domain tag plus the interval
    encoded as 4-byte little-endian, truncated to 16 bytes.
    """
    window = day_interval_range(tek.day_index, rotation_minutes)
    if interval not in window:
        raise ValueError(
            f"interval {interval} outside day {tek.day_index} "
            f"(expected {window.start}..{window.stop - 1})"
        )
    return RollingProximityIdentifier(rpi_bytes_for(tek.key_bytes, interval), interval)


def derive_day_rpis(
    tek: TemporaryExposureKey,
    rotation_minutes: int = DEFAULT_ROTATION_MINUTES,
) -> list[RollingProximityIdentifier]:
    """All identifiers of the key's day, in interval order."""
    return [derive_rpi(tek, i, rotation_minutes) for i in day_interval_range(tek.day_index, rotation_minutes)]


def match_observations(
    published: list[DiagnosisKey],
    stored: list[ContactRecord],
    rotation_minutes: int = DEFAULT_ROTATION_MINUTES,
) -> list[MatchedExposure]:
    """Find which stored observations the published keys explain.

    A record matches a key when the identifier derived from the key at the
    record's interval is byte-identical to the observed one. Purely local:
    no network access, no mutation of inputs. Keys with no matching record
    are omitted from the result.
    """
    _check_rotation(rotation_minutes)
    # (interval, rpi bytes) -> refs of every published key deriving it
    index: dict[tuple[int, bytes], list[int]] = {}
    for ref, dk in enumerate(published):
        for rpi in derive_day_rpis(dk.tek, rotation_minutes):
            index.setdefault((rpi.interval_number, rpi.rpi_bytes), []).append(ref)

    by_ref: dict[int, MatchedExposure] = {}
    for rec in stored:
        refs = index.get((rec.start_interval, rec.observed_rpi.rpi_bytes))
        if not refs:
            continue
        for ref in refs:
            by_ref.setdefault(ref, MatchedExposure(ref)).records.append(rec)
    return [by_ref[ref] for ref in sorted(by_ref)]


def permanent_id(agent_id: int) -> RollingProximityIdentifier:
    """Fixed identifier for the simplified mode: the agent id, never rotated.

    Deliberately linkable (and invertible), in contrast with the rotating
    identifiers of the faithful mode.
    """
    if agent_id < 0:
        raise ValueError(f"agent_id must be >= 0, got {agent_id}")
    token = agent_id.to_bytes(4, "little") + bytes(KEY_BYTES - 4)
    return RollingProximityIdentifier(token, 0)


def agent_id_from_token(token: bytes) -> int:
    """Invert permanent_id. Raises if the token is not a permanent id."""
    if len(token) != KEY_BYTES or any(token[4:]):
        raise ValueError("not a permanent-id token")
    return int.from_bytes(token[:4], "little")


def match_permanent(
    published: list[DiagnosisKey],
    stored: list[ContactRecord],
) -> list[MatchedExposure]:
    """Simplified-mode matching: plain byte equality against published ids.

    In simplified mode the published key bytes are the broadcast token
    itself, so matching is a list lookup, independent of intervals.
    """
    index: dict[bytes, list[int]] = {}
    for ref, dk in enumerate(published):
        index.setdefault(dk.tek.key_bytes, []).append(ref)

    by_ref: dict[int, MatchedExposure] = {}
    for rec in stored:
        refs = index.get(rec.observed_rpi.rpi_bytes)
        if not refs:
            continue
        for ref in refs:
            by_ref.setdefault(ref, MatchedExposure(ref)).records.append(rec)
    return [by_ref[ref] for ref in sorted(by_ref)]
