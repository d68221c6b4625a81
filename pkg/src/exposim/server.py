"""The central-but-ignorant key server.

Accepts published day keys, holds them back until a batch threshold is
reached (so a lone reporter is not exposed), purges everything older than
the retention window, and serves the same published list to every caller.
The data model has no field that could hold an agent or device identity,
and contact observations never reach it. Dummy submissions keep the
message stream even; all submission payloads are padded to one size, so
an observer of the traffic log cannot tell real from fake.
"""

from __future__ import annotations

import json
from dataclasses import dataclass

from .protocol import DiagnosisKey, generate_tek

DEFAULT_BATCH_THRESHOLD = 3
DEFAULT_RETENTION_DAYS = 14
DEFAULT_FORCE_PUBLISH_AFTER_DAYS = 2
SUBMISSION_WINDOW_DAYS = 14

# Every submission envelope, real or dummy, is padded to this many bytes.
PADDED_PAYLOAD_BYTES = 2048

KIND_REAL = "real"
KIND_DUMMY = "dummy"

DEFAULT_SYNTHETIC_TRL = 6


@dataclass(frozen=True, slots=True)
class TrafficEntry:
    """One observed server message. The kind field is visible only to the
    privacy auditor; an on-path observer sees day and payload size."""

    day: int
    kind: str
    payload_bytes: int = PADDED_PAYLOAD_BYTES


class ServerState:
    """Mutable server state; mutations go through a single owner."""

    def __init__(
        self,
        batch_threshold: int = DEFAULT_BATCH_THRESHOLD,
        retention_days: int = DEFAULT_RETENTION_DAYS,
    ) -> None:
        if batch_threshold < 1:
            raise ValueError(f"batch_threshold must be >= 1, got {batch_threshold}")
        if retention_days < 1:
            raise ValueError(f"retention_days must be >= 1, got {retention_days}")
        self.batch_threshold = batch_threshold
        self.retention_days = retention_days
        self.pending: list[tuple[DiagnosisKey, int]] = []  # (key, received_day)
        self.published: list[tuple[DiagnosisKey, int]] = []  # (key, published_day)
        self.traffic_log: list[TrafficEntry] = []
        # bumped whenever retention removes published entries, so cached
        # views of the published list know to rebuild
        self.purge_epoch = 0
        self._last_purge_day: int | None = None

    # -- submissions ------------------------------------------------------

    def submit(self, keys: list[DiagnosisKey], day: int, transport_metadata: object = None) -> None:
        """Accept a batch of diagnosis keys uploaded after a positive test.

        Any transport-level submitter identity is dropped on the floor here;
        nothing about the submitter is stored.
        """
        del transport_metadata  # scrubbed before storage, never persisted
        if not keys:
            raise ValueError("submit requires at least one key")
        for dk in keys:
            if not day - (SUBMISSION_WINDOW_DAYS - 1) <= dk.tek.day_index <= day:
                raise ValueError(
                    f"key day_index {dk.tek.day_index} outside the "
                    f"{SUBMISSION_WINDOW_DAYS}-day submission window ending day {day}"
                )
        for dk in keys:
            self.pending.append((dk, day))
        self.traffic_log.append(TrafficEntry(day, KIND_REAL))

    def submit_dummy(self, day: int) -> None:
        """Record a fake submission: same padded envelope, no key state change."""
        self.traffic_log.append(TrafficEntry(day, KIND_DUMMY))

    # -- publication ------------------------------------------------------

    def publish_due(self, day: int) -> int:
        """Publish the pending batch if it has reached the threshold, then
        purge published keys older than the retention window. Returns the
        number of keys published by this call."""
        count = 0
        if len(self.pending) >= self.batch_threshold:
            for dk, _received in self.pending:
                self.published.append((dk, day))
            count = len(self.pending)
            self.pending.clear()
        # the retention scan only needs to run once per day: everything
        # published later the same day is within the submission window anyway
        if day != self._last_purge_day:
            self._last_purge_day = day
            cutoff = day - self.retention_days
            kept = [(dk, pday) for dk, pday in self.published if dk.tek.day_index >= cutoff]
            if len(kept) != len(self.published):
                self.published = kept
                self.purge_epoch += 1
        return count

    def force_publish_stale(
        self,
        day: int,
        rng,
        stale_after_days: int = DEFAULT_FORCE_PUBLISH_AFTER_DAYS,
        synthetic_trl: int = DEFAULT_SYNTHETIC_TRL,
    ) -> int:
        """Unblock a lone reporter: once any pending key has waited
        stale_after_days, pad the batch with synthetic keys up to the
        threshold and publish. Returns the number of keys published
        (padding included); 0 if nothing was stale."""
        if not self.pending:
            return 0
        oldest = min(received for _dk, received in self.pending)
        if day - oldest < stale_after_days:
            return 0
        while len(self.pending) < self.batch_threshold:
            self.pending.append((DiagnosisKey(generate_tek(rng, day), synthetic_trl), day))
        return self.publish_due(day)

    # -- reads ------------------------------------------------------------

    def fetch_published(self, since_day: int = 0) -> list[DiagnosisKey]:
        """Published keys with published_day >= since_day. Stateless: every
        caller gets the identical answer."""
        return [dk for dk, pday in self.published if pday >= since_day]

    def export_panel(self) -> list[str]:
        """Human-readable listing of published keys for the server panel."""
        return [
            f"TEK {dk.tek.key_bytes.hex()}  day {dk.tek.day_index}  TRL {dk.transmission_risk_level}"
            for dk, _pday in self.published
        ]

    def to_dict(self) -> dict:
        """Full-state serialization (for audits and the UI panel)."""
        return {
            "batch_threshold": self.batch_threshold,
            "retention_days": self.retention_days,
            "pending": [
                {"tek": dk.tek.key_bytes.hex(), "day_index": dk.tek.day_index,
                 "trl": dk.transmission_risk_level, "received_day": received}
                for dk, received in self.pending
            ],
            "published": [
                {"tek": dk.tek.key_bytes.hex(), "day_index": dk.tek.day_index,
                 "trl": dk.transmission_risk_level, "published_day": pday}
                for dk, pday in self.published
            ],
            "traffic_log": [
                {"day": e.day, "kind": e.kind, "payload_bytes": e.payload_bytes}
                for e in self.traffic_log
            ],
        }

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), sort_keys=True)
