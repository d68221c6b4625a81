"""Agent-based population simulation with an embedded tracing protocol.

One step is one simulated minute. Each step runs a fixed phase order:
movement, external outbreak, transmission, beacon exchange, symptom
onset (with key upload), server publication, polling, test resolution,
replenishment. All randomness flows through a single seeded generator,
so identical parameters and seed reproduce identical runs bit for bit.
"""

from __future__ import annotations

import hashlib
import math
from dataclasses import dataclass, field, fields, replace
from enum import Enum

import numpy as np
from scipy.spatial import cKDTree

from .protocol import (
    DEFAULT_ROTATION_MINUTES,
    MINUTES_PER_DAY,
    ContactRecord,
    DiagnosisKey,
    MatchedExposure,
    RollingProximityIdentifier,
    TemporaryExposureKey,
    day_interval_range,
    derive_rpi,
    generate_tek,
    permanent_id,
    rpi_bytes_for,
)
from .risk import RiskBracket, RiskConfig, default_config, total_risk
from .server import ServerState

HEADING_JITTER_RAD = 0.3
ATTENUATION_AT_CONTACT_DB = 40.0
ATTENUATION_SPAN_DB = 35.0
UPLOAD_TRL = 6
DEFAULT_DUMMY_RATE = 0.001
TEK_RETENTION_DAYS = 14


class IdMode(Enum):
    SIMPLIFIED = "simplified"
    FAITHFUL = "faithful"


class HealthState(Enum):
    HEALTHY = "healthy"
    INFECTED_PRESYMPTOMATIC = "infected_presymptomatic"
    SYMPTOMATIC = "symptomatic"
    QUARANTINED_SYMPTOMATIC = "quarantined_symptomatic"
    QUARANTINED_WARNED = "quarantined_warned"


COLOR_BY_HEALTH = {
    HealthState.HEALTHY: "grey",
    HealthState.INFECTED_PRESYMPTOMATIC: "red",
    HealthState.SYMPTOMATIC: "purple",
    HealthState.QUARANTINED_SYMPTOMATIC: "purple",
    HealthState.QUARANTINED_WARNED: "red",
}

# Fields that cannot change once a world exists.
IMMUTABLE_PARAMS = ("rng_seed", "id_mode")


@dataclass(frozen=True)
class SimParams:
    population: int = 150
    speed: float = 2.2
    infection_radius: float = 14.0
    outbreak_rate: float = 3e-5
    app_enabled: bool = True
    id_mode: IdMode = IdMode.FAITHFUL
    incubation_steps: int = 140
    poll_interval_steps: int = 10
    test_delay_steps: int = 5
    world_width: float = 800.0
    world_height: float = 600.0
    replenish_fraction: float = 0.6
    rng_seed: int = 0
    transmission_prob: float = 1.0

    def __post_init__(self) -> None:
        if not isinstance(self.population, int) or self.population <= 0:
            raise ValueError(f"population must be a positive integer, got {self.population}")
        if not self.speed > 0:
            raise ValueError(f"speed must be > 0, got {self.speed}")
        if not self.world_width > 0:
            raise ValueError(f"world_width must be > 0, got {self.world_width}")
        if not self.world_height > 0:
            raise ValueError(f"world_height must be > 0, got {self.world_height}")
        if not 0 < self.infection_radius < min(self.world_width, self.world_height) / 2:
            raise ValueError(
                f"infection_radius must be in (0, min(world_width, world_height)/2), "
                f"got {self.infection_radius}"
            )
        if not 0 <= self.outbreak_rate <= 1:
            raise ValueError(f"outbreak_rate must be in [0, 1], got {self.outbreak_rate}")
        if not isinstance(self.id_mode, IdMode):
            raise ValueError(f"id_mode must be an IdMode, got {self.id_mode!r}")
        if not isinstance(self.incubation_steps, int) or self.incubation_steps <= 0:
            raise ValueError(f"incubation_steps must be a positive integer, got {self.incubation_steps}")
        if not isinstance(self.poll_interval_steps, int) or self.poll_interval_steps <= 0:
            raise ValueError(f"poll_interval_steps must be a positive integer, got {self.poll_interval_steps}")
        if not isinstance(self.test_delay_steps, int) or self.test_delay_steps < 0:
            raise ValueError(f"test_delay_steps must be a non-negative integer, got {self.test_delay_steps}")
        if not 0 <= self.replenish_fraction <= 1:
            raise ValueError(f"replenish_fraction must be in [0, 1], got {self.replenish_fraction}")
        if not 0 <= self.transmission_prob <= 1:
            raise ValueError(f"transmission_prob must be in [0, 1], got {self.transmission_prob}")


def attenuation_of(distance: float, infection_radius: float) -> float:
    """Map a contact distance to a signal attenuation in dB.

    Linear from 40 dB at touching distance to 75 dB at the beacon range
    edge, spanning all four default buckets.
    """
    if distance < 0:
        raise ValueError(f"distance must be >= 0, got {distance}")
    return ATTENUATION_AT_CONTACT_DB + ATTENUATION_SPAN_DB * (distance / infection_radius)


class Device:
    """The tracing app state carried by one agent."""

    __slots__ = (
        "tek_history", "permanent_token", "stored_contacts", "rpi_to_records",
        "last_poll_step", "risk_status", "pending_test_result_at", "acted_on_keys",
        "seen_published", "matched", "_open", "_rpi_cache",
    )

    def __init__(self) -> None:
        self.tek_history: list[TemporaryExposureKey] = []
        self.permanent_token: RollingProximityIdentifier | None = None
        self.stored_contacts: list[ContactRecord] = []
        # observed rpi bytes -> records carrying them (for fast matching)
        self.rpi_to_records: dict[bytes, list[ContactRecord]] = {}
        self.last_poll_step = 0
        self.risk_status = RiskBracket.LOW_RISK
        self.pending_test_result_at: int | None = None
        # published keys already acted on (tested after their warning)
        self.acted_on_keys: set[bytes] = set()
        # matching is incremental: keys published before seen_published have
        # already been compared against this device's records
        self.seen_published = 0
        self.matched: dict[int, list[ContactRecord]] = {}  # key ref -> records
        # peer rpi bytes -> (open record, minute it last grew)
        self._open: dict[bytes, tuple[ContactRecord, int]] = {}
        self._rpi_cache: tuple[int, RollingProximityIdentifier] | None = None

    def ensure_day_key(self, rng, day: int) -> None:
        if self.permanent_token is not None:
            return
        if not self.tek_history or self.tek_history[-1].day_index < day:
            self.tek_history.append(generate_tek(rng, day))
        cutoff = day - (TEK_RETENTION_DAYS - 1)
        if self.tek_history and self.tek_history[0].day_index < cutoff:
            self.tek_history = [t for t in self.tek_history if t.day_index >= cutoff]

    def current_identifier(self, minute: int, rotation_minutes: int) -> RollingProximityIdentifier:
        if self.permanent_token is not None:
            return self.permanent_token
        interval = minute // rotation_minutes
        if self._rpi_cache is not None and self._rpi_cache[0] == interval:
            return self._rpi_cache[1]
        tek = self.tek_history[-1]
        rpi = derive_rpi(tek, interval, rotation_minutes)
        self._rpi_cache = (interval, rpi)
        return rpi

    def record_contact(
        self,
        peer_rpi: RollingProximityIdentifier,
        attenuation_db: float,
        minute: int,
        rotation_minutes: int,
    ) -> None:
        """Store one minute of contact, extending the open record when the
        observation is contiguous and within the same rotation interval."""
        interval = minute // rotation_minutes
        key = peer_rpi.rpi_bytes
        open_entry = self._open.get(key)
        if open_entry is not None:
            rec, last_minute = open_entry
            if last_minute == minute - 1 and rec.start_interval == interval:
                rec.attenuation_db = (
                    rec.attenuation_db * rec.duration_minutes + attenuation_db
                ) / (rec.duration_minutes + 1.0)
                rec.duration_minutes += 1.0
                self._open[key] = (rec, minute)
                return
        rec = ContactRecord(peer_rpi, attenuation_db, interval, 1.0)
        self.stored_contacts.append(rec)
        self.rpi_to_records.setdefault(key, []).append(rec)
        self._open[key] = (rec, minute)

    def diagnosis_keys(self, day: int, trl: int) -> list[DiagnosisKey]:
        """Keys to upload after a positive test: the stored day keys, or the
        permanent token wrapped as a single key in simplified mode."""
        if self.permanent_token is not None:
            return [DiagnosisKey(TemporaryExposureKey(self.permanent_token.rpi_bytes, day), trl)]
        return [DiagnosisKey(tek, trl) for tek in self.tek_history]


class Agent:
    __slots__ = ("agent_id", "x", "y", "heading", "health", "infected_at_step", "cluster_id", "device")

    def __init__(self, agent_id: int, x: float, y: float, heading: float, device: Device) -> None:
        self.agent_id = agent_id
        self.x = x
        self.y = y
        self.heading = heading
        self.health = HealthState.HEALTHY
        self.infected_at_step: int | None = None
        self.cluster_id: int | None = None
        self.device = device


@dataclass(slots=True)
class ContactView:
    rpi_prefix: str
    interval: int
    attenuation_db: float
    duration_minutes: float


@dataclass(slots=True)
class DeviceSnapshot:
    """Read-only view of one agent's app, as shown by the inspector."""

    agent_id: int
    health_color: str
    own_identifier_hex: str
    risk_status: str
    contacts: tuple[ContactView, ...]
    pending_test: bool


@dataclass(slots=True)
class StepEvents:
    new_infections: list[int] = field(default_factory=list)
    symptom_onsets: list[int] = field(default_factory=list)
    quarantined_left: list[int] = field(default_factory=list)
    quarantined_right: list[int] = field(default_factory=list)
    replenished: list[int] = field(default_factory=list)
    uploads: int = 0
    polls: int = 0


@dataclass(slots=True)
class Cluster:
    """One infection tree, rooted at a patient zero."""

    members: dict[int, int] = field(default_factory=dict)  # agent_id -> infected_at_step
    first_onset_step: int | None = None
    quarantine_steps: dict[int, int] = field(default_factory=dict)  # agent_id -> removed step

    @property
    def complete(self) -> bool:
        return set(self.quarantine_steps) == set(self.members)


class World:
    """Owns the full population state; step() advances one simulated minute."""

    def __init__(
        self,
        params: SimParams,
        risk_config: RiskConfig | None = None,
        rotation_minutes: int = DEFAULT_ROTATION_MINUTES,
        batch_threshold: int = 3,
        force_publish_stale: bool = True,
        dummy_rate: float = DEFAULT_DUMMY_RATE,
    ) -> None:
        self.params = params
        self.risk_config = risk_config if risk_config is not None else default_config()
        self.rotation_minutes = rotation_minutes
        self.rng = np.random.default_rng(params.rng_seed)
        self.server = ServerState(batch_threshold=batch_threshold)
        self.force_publish_stale_enabled = force_publish_stale
        self.dummy_rate = dummy_rate

        self.step_count = 0
        self.agents: list[Agent] = []
        self.next_agent_id = 0
        self.original_population = params.population
        self._pending_spawn = 0

        # cumulative accounting
        self.symptomatic_cumulative = 0
        self.quarantined_left_cumulative = 0
        self.quarantined_right_cumulative = 0
        self.replenished_cumulative = 0
        self.retired_cumulative = 0
        self.ever_infected = 0
        self.ever_existing = params.population

        self.clusters: dict[int, Cluster] = {}
        self._next_cluster_id = 0

        # derived view of the server's published list, kept in sync
        self._published_keys: list[DiagnosisKey] = []
        self._seen_purge_epoch = 0
        # rolling index of derived identifiers for keys some device has not
        # polled past yet: rpi bytes -> [(key ref, interval)]; interval None
        # means a permanent token matching regardless of interval
        self._live_index: dict[bytes, list[tuple[int, int | None]]] = {}
        self._live_bytes_by_ref: dict[int, list[bytes]] = {}  # for eviction
        self._indexed_refs = 0

        xs = self.rng.uniform(0.0, params.world_width, params.population)
        ys = self.rng.uniform(0.0, params.world_height, params.population)
        headings = self.rng.uniform(0.0, 2.0 * math.pi, params.population)
        for i in range(params.population):
            self.agents.append(self._new_agent(float(xs[i]), float(ys[i]), float(headings[i])))

    # -- construction helpers ----------------------------------------------

    def _new_agent(self, x: float, y: float, heading: float) -> Agent:
        device = Device()
        if self.params.id_mode is IdMode.SIMPLIFIED:
            device.permanent_token = permanent_id(self.next_agent_id)
        else:
            device.ensure_day_key(self.rng, self.step_count // MINUTES_PER_DAY)
        device.last_poll_step = self.step_count
        # keys already public belong to agents this device can never hear
        device.seen_published = len(self._published_keys)
        agent = Agent(self.next_agent_id, x, y, heading, device)
        self.next_agent_id += 1
        return agent

    def _spawn_agent(self) -> Agent:
        x = float(self.rng.uniform(0.0, self.params.world_width))
        y = float(self.rng.uniform(0.0, self.params.world_height))
        heading = float(self.rng.uniform(0.0, 2.0 * math.pi))
        agent = self._new_agent(x, y, heading)
        self.agents.append(agent)
        return agent

    # -- public queries ------------------------------------------------------

    @property
    def active_count(self) -> int:
        return len(self.agents)

    @property
    def healthy_count(self) -> int:
        return sum(1 for a in self.agents if a.health is HealthState.HEALTHY)

    @property
    def infected_presymptomatic_count(self) -> int:
        return sum(1 for a in self.agents if a.health is HealthState.INFECTED_PRESYMPTOMATIC)

    @property
    def high_risk_device_count(self) -> int:
        return sum(1 for a in self.agents if a.device.risk_status is RiskBracket.HIGH_RISK)

    @property
    def attack_rate(self) -> float:
        return self.ever_infected / self.ever_existing if self.ever_existing else 0.0

    def find_agent(self, agent_id: int) -> Agent:
        for agent in self.agents:
            if agent.agent_id == agent_id:
                return agent
        raise KeyError(f"no active agent with id {agent_id}")

    def inspect_agent(self, agent_id: int) -> DeviceSnapshot:
        """Read-only view of what one agent's app has stored."""
        agent = self.find_agent(agent_id)
        device = agent.device
        contacts = tuple(
            ContactView(
                rpi_prefix=rec.observed_rpi.hex_prefix(),
                interval=rec.start_interval,
                attenuation_db=rec.attenuation_db,
                duration_minutes=rec.duration_minutes,
            )
            for rec in device.stored_contacts
        )
        return DeviceSnapshot(
            agent_id=agent.agent_id,
            health_color=COLOR_BY_HEALTH[agent.health],
            own_identifier_hex=device.current_identifier(self.step_count, self.rotation_minutes).rpi_bytes.hex(),
            risk_status=device.risk_status.value,
            contacts=contacts,
            pending_test=device.pending_test_result_at is not None,
        )

    def set_params(self, **changes) -> None:
        """Update tunable parameters mid-run; population changes apply at the
        next step via spawn/retire. Seed and id mode are immutable."""
        for name in changes:
            if name in IMMUTABLE_PARAMS:
                raise ValueError(f"{name} cannot be changed mid-run")
            if name not in {f.name for f in fields(SimParams)}:
                raise ValueError(f"unknown parameter {name!r}")
        old = self.params
        new = replace(old, **changes)  # re-runs validation
        if new.population > old.population:
            self._pending_spawn += new.population - old.population
        self.params = new

    def infect_agent(self, agent_id: int) -> None:
        """Scenario scripting hook: seed one infection as a patient zero."""
        agent = self.find_agent(agent_id)
        if agent.health is not HealthState.HEALTHY:
            raise ValueError(f"agent {agent_id} is not healthy")
        self._infect(agent, cluster_id=None)

    def fingerprint(self) -> str:
        """Stable digest of the full observable state, for determinism checks."""
        h = hashlib.sha256()
        h.update(str(self.step_count).encode())
        for a in self.agents:
            h.update(
                f"{a.agent_id},{a.x:.12e},{a.y:.12e},{a.heading:.12e},{a.health.value},"
                f"{a.infected_at_step},{a.device.risk_status.value},"
                f"{len(a.device.stored_contacts)}".encode()
            )
        h.update(self.server.to_json().encode())
        h.update(
            f"{self.symptomatic_cumulative},{self.quarantined_left_cumulative},"
            f"{self.quarantined_right_cumulative},{self.replenished_cumulative},"
            f"{self.ever_infected},{self.ever_existing}".encode()
        )
        return h.hexdigest()

    # -- stepping ------------------------------------------------------------

    def step(self) -> StepEvents:
        self.step_count += 1
        minute = self.step_count
        day = minute // MINUTES_PER_DAY
        params = self.params
        app = params.app_enabled
        events = StepEvents()

        if minute % MINUTES_PER_DAY == 0:
            self._day_rollover(day)

        self._move()

        pairs, dists = self._contact_pairs(params.infection_radius)

        # external outbreak: anyone can become a patient zero
        if params.outbreak_rate > 0 and self.agents:
            draws = self.rng.random(len(self.agents))
            for i, agent in enumerate(self.agents):
                if agent.health is HealthState.HEALTHY and draws[i] < params.outbreak_rate:
                    self._infect(agent, cluster_id=None)
                    events.new_infections.append(agent.agent_id)

        self._transmit(pairs, events)

        if app and len(pairs):
            self._exchange_beacons(pairs, dists, minute)

        if app and self.dummy_rate > 0 and self.agents:
            draws = self.rng.random(len(self.agents))
            for i in range(len(self.agents)):
                if draws[i] < self.dummy_rate:
                    self.server.submit_dummy(day)

        self._symptom_onsets(minute, day, app, events)

        if app:
            self.server.publish_due(day)
            self._sync_published_keys()
            self._poll_devices(minute, events)

        self._resolve_tests(minute, events)

        self._replenish(events)

        return events

    # -- step phases ---------------------------------------------------------

    def _day_rollover(self, day: int) -> None:
        for agent in self.agents:
            agent.device.ensure_day_key(self.rng, day)
        if self.force_publish_stale_enabled and self.params.app_enabled:
            self.server.force_publish_stale(day, self.rng)
            self._sync_published_keys()

    def _move(self) -> None:
        params = self.params
        w, h = params.world_width, params.world_height
        speed = params.speed
        if not self.agents:
            return
        jitter = self.rng.uniform(-HEADING_JITTER_RAD, HEADING_JITTER_RAD, len(self.agents))
        for i, agent in enumerate(self.agents):
            heading = agent.heading + float(jitter[i])
            nx = agent.x + speed * math.cos(heading)
            ny = agent.y + speed * math.sin(heading)
            # reflect off the world edges (repeat in case of a huge speed)
            while nx < 0 or nx > w:
                nx = -nx if nx < 0 else 2 * w - nx
                heading = math.pi - heading
            while ny < 0 or ny > h:
                ny = -ny if ny < 0 else 2 * h - ny
                heading = -heading
            agent.x = nx
            agent.y = ny
            agent.heading = math.atan2(math.sin(heading), math.cos(heading))

    def _contact_pairs(self, radius: float) -> tuple[np.ndarray, np.ndarray]:
        """Index pairs (i < j) of active agents within the contact radius,
        sorted for deterministic iteration, plus their distances."""
        n = len(self.agents)
        if n < 2:
            return np.empty((0, 2), dtype=np.intp), np.empty(0)
        positions = np.empty((n, 2))
        for i, agent in enumerate(self.agents):
            positions[i, 0] = agent.x
            positions[i, 1] = agent.y
        tree = cKDTree(positions)
        pairs = tree.query_pairs(radius, output_type="ndarray")
        if len(pairs) == 0:
            return np.empty((0, 2), dtype=np.intp), np.empty(0)
        pairs.sort(axis=1)
        order = np.lexsort((pairs[:, 1], pairs[:, 0]))
        pairs = pairs[order]
        deltas = positions[pairs[:, 0]] - positions[pairs[:, 1]]
        dists = np.hypot(deltas[:, 0], deltas[:, 1])
        return pairs, dists

    def _transmit(self, pairs: np.ndarray, events: StepEvents) -> None:
        """Instantaneous infection within the radius; sources are whoever was
        infectious when this phase started."""
        infectious = {
            HealthState.INFECTED_PRESYMPTOMATIC,
            HealthState.SYMPTOMATIC,
        }
        victims: dict[int, int] = {}  # victim index -> source index (lowest wins)
        for i, j in pairs:
            a, b = self.agents[i], self.agents[j]
            if a.health in infectious and b.health is HealthState.HEALTHY:
                if j not in victims or i < victims[j]:
                    victims[j] = i
            if b.health in infectious and a.health is HealthState.HEALTHY:
                if i not in victims or j < victims[i]:
                    victims[i] = j
        if not victims:
            return
        ordered = sorted(victims)
        prob = self.params.transmission_prob
        if prob < 1.0:
            draws = self.rng.random(len(ordered))
            ordered = [idx for k, idx in enumerate(ordered) if draws[k] < prob]
        for idx in ordered:
            agent = self.agents[idx]
            source = self.agents[victims[idx]]
            self._infect(agent, cluster_id=source.cluster_id)
            events.new_infections.append(agent.agent_id)

    def _infect(self, agent: Agent, cluster_id: int | None) -> None:
        agent.health = HealthState.INFECTED_PRESYMPTOMATIC
        agent.infected_at_step = self.step_count
        if cluster_id is None:
            cluster_id = self._next_cluster_id
            self._next_cluster_id += 1
            self.clusters[cluster_id] = Cluster()
        agent.cluster_id = cluster_id
        self.clusters[cluster_id].members[agent.agent_id] = self.step_count
        self.ever_infected += 1

    def _exchange_beacons(self, pairs: np.ndarray, dists: np.ndarray, minute: int) -> None:
        radius = self.params.infection_radius
        rotation = self.rotation_minutes
        for k in range(len(pairs)):
            i, j = pairs[k]
            att = attenuation_of(float(dists[k]), radius)
            a, b = self.agents[i], self.agents[j]
            rpi_a = a.device.current_identifier(minute, rotation)
            rpi_b = b.device.current_identifier(minute, rotation)
            a.device.record_contact(rpi_b, att, minute, rotation)
            b.device.record_contact(rpi_a, att, minute, rotation)

    def _symptom_onsets(self, minute: int, day: int, app: bool, events: StepEvents) -> None:
        incubation = self.params.incubation_steps
        onsets = [
            a for a in self.agents
            if a.health is HealthState.INFECTED_PRESYMPTOMATIC
            and minute - a.infected_at_step >= incubation
        ]
        if not onsets:
            return
        for agent in onsets:
            agent.health = HealthState.SYMPTOMATIC
            events.symptom_onsets.append(agent.agent_id)
            self.symptomatic_cumulative += 1
            cluster = self.clusters[agent.cluster_id]
            if cluster.first_onset_step is None:
                cluster.first_onset_step = minute
            if app:
                self.server.submit(agent.device.diagnosis_keys(day, UPLOAD_TRL), day)
                events.uploads += 1
            # onset, upload and removal are atomic within the step
            agent.health = HealthState.QUARANTINED_SYMPTOMATIC
            events.quarantined_left.append(agent.agent_id)
            self.quarantined_left_cumulative += 1
            cluster.quarantine_steps[agent.agent_id] = minute
        removed = set(events.quarantined_left)
        self.agents = [a for a in self.agents if a.agent_id not in removed]

    def _sync_published_keys(self) -> None:
        srv = self.server
        if srv.purge_epoch != self._seen_purge_epoch:
            # retention dropped entries: refs shifted, start matching over
            self._seen_purge_epoch = srv.purge_epoch
            self._published_keys = [dk for dk, _pday in srv.published]
            self._live_index.clear()
            self._live_bytes_by_ref.clear()
            self._indexed_refs = 0
            for agent in self.agents:
                agent.device.seen_published = 0
                agent.device.matched = {}
            return
        for ref in range(len(self._published_keys), len(srv.published)):
            self._published_keys.append(srv.published[ref][0])

    def _extend_live_index(self) -> None:
        """Derive and index identifiers of newly published keys.

        A record never matches a key published before the record was made
        (an agent's keys go public only after it stopped broadcasting), so
        each key needs to stay indexed only until every device has polled
        past it; after that it is evicted again.
        """
        simplified = self.params.id_mode is IdMode.SIMPLIFIED
        for ref in range(self._indexed_refs, len(self._published_keys)):
            dk = self._published_keys[ref]
            if simplified:
                derived: dict[bytes, int | None] = {dk.tek.key_bytes: None}
            else:
                key_bytes = dk.tek.key_bytes
                derived = {
                    rpi_bytes_for(key_bytes, interval): interval
                    for interval in day_interval_range(dk.tek.day_index, self.rotation_minutes)
                }
            for rpi_bytes, interval in derived.items():
                self._live_index.setdefault(rpi_bytes, []).append((ref, interval))
            self._live_bytes_by_ref[ref] = list(derived)
        self._indexed_refs = len(self._published_keys)

    def _evict_live_index(self, min_seen: int) -> None:
        stale = [ref for ref in self._live_bytes_by_ref if ref < min_seen]
        for ref in stale:
            for rpi_bytes in self._live_bytes_by_ref.pop(ref):
                entries = self._live_index.get(rpi_bytes)
                if entries is None:
                    continue
                entries = [e for e in entries if e[0] != ref]
                if entries:
                    self._live_index[rpi_bytes] = entries
                else:
                    del self._live_index[rpi_bytes]

    def _poll_devices(self, minute: int, events: StepEvents) -> None:
        poll_interval = self.params.poll_interval_steps
        test_delay = self.params.test_delay_steps
        self._extend_live_index()
        to_ref = len(self._published_keys)
        min_seen = to_ref
        for agent in self.agents:
            device = agent.device
            if minute - device.last_poll_step < poll_interval:
                if device.seen_published < min_seen:
                    min_seen = device.seen_published
                continue
            device.last_poll_step = minute
            events.polls += 1
            seen = device.seen_published
            if seen < to_ref:
                common = device.rpi_to_records.keys() & self._live_index.keys()
                for rpi_bytes in sorted(common):
                    records = device.rpi_to_records[rpi_bytes]
                    for ref, interval in self._live_index[rpi_bytes]:
                        if ref < seen:
                            continue
                        if interval is None:
                            device.matched.setdefault(ref, []).extend(records)
                        else:
                            for rec in records:
                                if rec.start_interval == interval:
                                    device.matched.setdefault(ref, []).append(rec)
                device.seen_published = to_ref
            exposures = [
                (MatchedExposure(ref, device.matched[ref]),
                 self._published_keys[ref].transmission_risk_level)
                for ref in sorted(device.matched)
            ]
            device.risk_status = total_risk(exposures, self.risk_config)
            if device.risk_status is RiskBracket.HIGH_RISK and device.pending_test_result_at is None:
                matched_key_bytes = {self._published_keys[ref].tek.key_bytes for ref in device.matched}
                if matched_key_bytes - device.acted_on_keys:
                    device.pending_test_result_at = minute + test_delay
                    device.acted_on_keys |= matched_key_bytes
        self._evict_live_index(min_seen)

    def _resolve_tests(self, minute: int, events: StepEvents) -> None:
        day = minute // MINUTES_PER_DAY
        app = self.params.app_enabled
        removed: set[int] = set()
        for agent in self.agents:
            device = agent.device
            if device.pending_test_result_at != minute:
                continue
            device.pending_test_result_at = None
            if agent.health is HealthState.INFECTED_PRESYMPTOMATIC:
                # a confirmed positive publishes its keys too, so the warning
                # chain keeps propagating through the cluster
                if app:
                    self.server.submit(device.diagnosis_keys(day, UPLOAD_TRL), day)
                    events.uploads += 1
                agent.health = HealthState.QUARANTINED_WARNED
                events.quarantined_right.append(agent.agent_id)
                self.quarantined_right_cumulative += 1
                cluster = self.clusters[agent.cluster_id]
                cluster.quarantine_steps[agent.agent_id] = minute
                removed.add(agent.agent_id)
        if removed:
            self.agents = [a for a in self.agents if a.agent_id not in removed]

    def _replenish(self, events: StepEvents) -> None:
        params = self.params
        # population slider: retire newest first when shrunk, spawn when grown
        if len(self.agents) > params.population:
            excess = len(self.agents) - params.population
            by_id = sorted(self.agents, key=lambda a: a.agent_id)
            keep = {a.agent_id for a in by_id[: len(self.agents) - excess]}
            self.agents = [a for a in self.agents if a.agent_id in keep]
            self.retired_cumulative += excess
        while self._pending_spawn > 0 and len(self.agents) < params.population:
            self._spawn_agent()
            self.ever_existing += 1
            self._pending_spawn -= 1
        self._pending_spawn = 0

        if params.replenish_fraction <= 0:
            return
        floor_level = params.replenish_fraction * params.population
        if len(self.agents) < floor_level:
            target = math.ceil(floor_level)
            while len(self.agents) < target:
                agent = self._spawn_agent()
                events.replenished.append(agent.agent_id)
                self.replenished_cumulative += 1
                self.ever_existing += 1


def init_world(
    params: SimParams,
    risk_config: RiskConfig | None = None,
    rotation_minutes: int = DEFAULT_ROTATION_MINUTES,
    **kwargs,
) -> World:
    """Build a fresh world: everyone healthy, devices initialized, server empty."""
    return World(params, risk_config=risk_config, rotation_minutes=rotation_minutes, **kwargs)
