"""Headless batch experimentation: seeded runs, metrics, paired comparisons,
scripted cluster scenarios, and the stalker-style privacy audit."""

from __future__ import annotations

import csv
import hashlib
import io
import json
import statistics
from concurrent.futures import ProcessPoolExecutor
from dataclasses import asdict, dataclass, replace

import numpy as np

from .protocol import MINUTES_PER_DAY, agent_id_from_token, derive_day_rpis, generate_tek
from .risk import RiskConfig
from .server import KIND_REAL, ServerState
from .protocol import DiagnosisKey
from .world import IdMode, SimParams, World, init_world

DEFAULT_STEPS = 5000

METRICS_COLUMNS = (
    "step",
    "active_count",
    "healthy",
    "infected_presymptomatic",
    "symptomatic_cumulative",
    "quarantined_left_cumulative",
    "quarantined_right_cumulative",
    "replenished_cumulative",
    "server_published_keys",
    "high_risk_devices",
)


@dataclass
class MetricsSeries:
    """Per-step counters of one run, one row per step (step 0 included)."""

    rows: list[tuple[int, ...]]

    def to_csv(self) -> str:
        buf = io.StringIO()
        writer = csv.writer(buf, lineterminator="\n")
        writer.writerow(METRICS_COLUMNS)
        writer.writerows(self.rows)
        return buf.getvalue()

    def to_csv_bytes(self) -> bytes:
        return self.to_csv().encode("utf-8")

    def column(self, name: str) -> list[int]:
        idx = METRICS_COLUMNS.index(name)
        return [row[idx] for row in self.rows]


@dataclass
class RunSummary:
    seed: int
    params_fingerprint: str
    total_steps: int
    attack_rate: float
    peak_active_infected: int
    mean_quarantine_lag: float | None

    def to_dict(self) -> dict:
        return asdict(self)


def params_fingerprint(params: SimParams) -> str:
    payload = {k: (v.value if isinstance(v, IdMode) else v) for k, v in asdict(params).items()}
    return hashlib.sha256(json.dumps(payload, sort_keys=True).encode()).hexdigest()[:16]


def metrics_row(world: World) -> tuple[int, ...]:
    return (
        world.step_count,
        world.active_count,
        world.healthy_count,
        world.infected_presymptomatic_count,
        world.symptomatic_cumulative,
        world.quarantined_left_cumulative,
        world.quarantined_right_cumulative,
        world.replenished_cumulative,
        len(world.server.published),
        world.high_risk_device_count,
    )


def mean_quarantine_lag(world: World) -> float | None:
    """Mean, over fully quarantined clusters, of first onset to last removal."""
    lags = []
    for cluster in world.clusters.values():
        if cluster.first_onset_step is None or not cluster.complete:
            continue
        lags.append(max(cluster.quarantine_steps.values()) - cluster.first_onset_step)
    return statistics.mean(lags) if lags else None


def run_scenario(
    params: SimParams,
    steps: int = DEFAULT_STEPS,
    risk_config: RiskConfig | None = None,
    **world_kwargs,
) -> tuple[MetricsSeries, RunSummary]:
    """Run one headless scenario; deterministic for a given params + seed."""
    if steps < 0:
        raise ValueError(f"steps must be >= 0, got {steps}")
    world = init_world(params, risk_config=risk_config, **world_kwargs)
    rows = [metrics_row(world)]
    peak = 0
    for _ in range(steps):
        world.step()
        rows.append(metrics_row(world))
        peak = max(peak, world.infected_presymptomatic_count)
    summary = RunSummary(
        seed=params.rng_seed,
        params_fingerprint=params_fingerprint(params),
        total_steps=steps,
        attack_rate=world.attack_rate,
        peak_active_infected=peak,
        mean_quarantine_lag=mean_quarantine_lag(world),
    )
    return MetricsSeries(rows), summary


def _attack_rate_job(job: tuple[SimParams, int, RiskConfig | None]) -> float:
    params, steps, risk_config = job
    _series, summary = run_scenario(params, steps, risk_config)
    return summary.attack_rate


def batch_attack_rates(
    params: SimParams,
    seeds: list[int],
    steps: int = DEFAULT_STEPS,
    app_enabled: bool | None = None,
    risk_config: RiskConfig | None = None,
    workers: int = 1,
) -> list[float]:
    """Attack rates of independent replicates, one world per seed; results
    always ordered by the given seed order, regardless of worker count."""
    jobs = []
    for seed in seeds:
        run_params = replace(params, rng_seed=seed)
        if app_enabled is not None:
            run_params = replace(run_params, app_enabled=app_enabled)
        jobs.append((run_params, steps, risk_config))
    if workers > 1:
        with ProcessPoolExecutor(max_workers=workers) as pool:
            return list(pool.map(_attack_rate_job, jobs))
    return [_attack_rate_job(job) for job in jobs]


@dataclass
class ComparisonReport:
    """Paired with/without-app replicates over identical seeds."""

    seeds: list[int]
    attack_off: list[float]
    attack_on: list[float]
    mean_attack_off: float
    mean_attack_on: float
    mean_reduction: float
    wins_on: int
    paired: bool  # same seed used in both arms of every pair

    def to_dict(self) -> dict:
        return asdict(self)

    def rows(self) -> list[tuple[int, float, float]]:
        return list(zip(self.seeds, self.attack_off, self.attack_on))


def compare(
    params: SimParams,
    n_seeds: int,
    steps: int = DEFAULT_STEPS,
    base_seed: int = 0,
    risk_config: RiskConfig | None = None,
    workers: int = 1,
) -> ComparisonReport:
    """Run n_seeds paired replicates, app off vs on, same seed in both arms."""
    if n_seeds < 2:
        raise ValueError(f"n_seeds must be >= 2, got {n_seeds}")
    seeds = [base_seed + i for i in range(n_seeds)]
    attack_off = batch_attack_rates(params, seeds, steps, app_enabled=False,
                                    risk_config=risk_config, workers=workers)
    attack_on = batch_attack_rates(params, seeds, steps, app_enabled=True,
                                   risk_config=risk_config, workers=workers)
    mean_off = statistics.mean(attack_off)
    mean_on = statistics.mean(attack_on)
    return ComparisonReport(
        seeds=seeds,
        attack_off=attack_off,
        attack_on=attack_on,
        mean_attack_off=mean_off,
        mean_attack_on=mean_on,
        mean_reduction=mean_off - mean_on,
        wins_on=sum(1 for off, on in zip(attack_off, attack_on) if on < off),
        paired=True,
    )


# -- scripted cluster scenario ------------------------------------------------


@dataclass
class ClusterLagReport:
    seed: int
    patient_zero_onset_step: int | None
    infected_members: int
    quarantine_steps: dict[int, int]
    lag_bound_steps: int
    max_lag: int | None
    all_within_bound: bool
    warned_exits: int


def run_cluster_scenario(
    seed: int,
    contacts: int = 5,
    risk_config: RiskConfig | None = None,
    params: SimParams | None = None,
) -> ClusterLagReport:
    """One patient zero plus a handful of contacts in a small arena, no
    external outbreak and no replenishment: how fast is the whole cluster
    off the board after the first symptom onset?"""
    if params is None:
        params = SimParams(
            population=contacts + 1,
            world_width=50.0,
            world_height=50.0,
            outbreak_rate=0.0,
            replenish_fraction=0.0,
            rng_seed=seed,
        )
    world = init_world(params, risk_config=risk_config)
    patient_zero = world.agents[0].agent_id
    world.infect_agent(patient_zero)
    cluster = world.clusters[world.agents[0].cluster_id]

    bound = params.incubation_steps + params.poll_interval_steps + params.test_delay_steps + 2
    horizon = params.incubation_steps + bound + 50
    warned = 0
    for _ in range(horizon):
        events = world.step()
        warned += len(events.quarantined_right)
        if cluster.first_onset_step is not None and cluster.complete:
            break

    onset = cluster.first_onset_step
    lags = {aid: step - onset for aid, step in cluster.quarantine_steps.items()} if onset is not None else {}
    max_lag = max(lags.values()) if lags else None
    within = (
        onset is not None
        and cluster.complete
        and all(lag <= bound for lag in lags.values())
    )
    return ClusterLagReport(
        seed=seed,
        patient_zero_onset_step=onset,
        infected_members=len(cluster.members),
        quarantine_steps=dict(cluster.quarantine_steps),
        lag_bound_steps=bound,
        max_lag=max_lag,
        all_within_bound=within,
        warned_exits=warned,
    )


# -- privacy audit -------------------------------------------------------------


@dataclass
class AuditReport:
    seed: int
    steps: int
    target_agent_id: int
    target_uploaded: bool
    infection_learnable: bool
    other_identities_recovered: int
    payload_sizes_uniform: bool
    dummy_classifier_accuracy: float
    retention_violations: int
    threshold_violations: int

    @property
    def learnable_iff_uploaded(self) -> bool:
        return self.infection_learnable == self.target_uploaded

    def to_dict(self) -> dict:
        d = asdict(self)
        d["learnable_iff_uploaded"] = self.learnable_iff_uploaded
        return d


def dummy_classifier_accuracy(n_messages: int = 10_000, seed: int = 0) -> float:
    """Accuracy of a payload-size classifier on a balanced real/dummy stream.

    All envelopes are padded to one size, so the best size-based rule
    degenerates to a constant guess; accuracy should sit at chance level.
    """
    rng = np.random.default_rng(seed)
    server = ServerState()
    kinds = rng.random(n_messages) < 0.5
    for real in kinds:
        if real:
            server.submit([DiagnosisKey(generate_tek(rng, 0), 6)], day=0)
        else:
            server.submit_dummy(day=0)
    sizes = [entry.payload_bytes for entry in server.traffic_log]
    median = statistics.median(sizes)
    predictions = [size > median for size in sizes]
    correct = sum(
        1 for entry, predicted_real in zip(server.traffic_log, predictions)
        if (entry.kind == KIND_REAL) == predicted_real
    )
    return correct / n_messages


def privacy_audit(
    params: SimParams,
    steps: int = 2000,
    seed: int = 0,
    risk_config: RiskConfig | None = None,
    target_agent_id: int = 0,
) -> AuditReport:
    """Run the stalker attack: follow one agent, collect every identifier it
    broadcasts, then inspect the public server state.

    The target's infection becomes learnable exactly when the target
    uploaded its keys; nobody else's identity is recoverable from server
    contents alone."""
    if params.id_mode is not IdMode.FAITHFUL:
        raise ValueError("audit requires faithful mode")
    params = replace(params, rng_seed=seed)
    world = init_world(params, risk_config=risk_config)
    if target_agent_id >= params.population:
        raise ValueError(f"target_agent_id {target_agent_id} not in initial population")

    observed: set[bytes] = set()
    target_uploaded = False
    retention_violations = 0
    threshold_violations = 0
    last_published_len = 0

    def observe() -> None:
        for agent in world.agents:
            if agent.agent_id == target_agent_id:
                observed.add(
                    agent.device.current_identifier(world.step_count, world.rotation_minutes).rpi_bytes
                )
                return

    observe()
    for _ in range(steps):
        events = world.step()
        observe()
        if params.app_enabled and (
            target_agent_id in events.symptom_onsets or target_agent_id in events.quarantined_right
        ):
            target_uploaded = True
        day = world.step_count // MINUTES_PER_DAY
        for dk, _pday in world.server.published:
            if dk.tek.day_index < day - world.server.retention_days:
                retention_violations += 1
        grew = len(world.server.published) - last_published_len
        if 0 < grew < world.server.batch_threshold:
            threshold_violations += 1
        last_published_len = len(world.server.published)

    published = world.server.fetch_published(0)
    learnable = any(
        any(rpi.rpi_bytes in observed for rpi in derive_day_rpis(dk.tek, world.rotation_minutes))
        for dk in published
    )

    # server contents alone: is any published key invertible to an agent id?
    recovered = 0
    for dk in published:
        try:
            recovered_id = agent_id_from_token(dk.tek.key_bytes)
        except ValueError:
            continue
        if recovered_id != target_agent_id:
            recovered += 1
    panel_text = "\n".join(world.server.export_panel())
    if "agent" in panel_text.lower():
        recovered += 1

    sizes = {entry.payload_bytes for entry in world.server.traffic_log}
    return AuditReport(
        seed=seed,
        steps=steps,
        target_agent_id=target_agent_id,
        target_uploaded=target_uploaded,
        infection_learnable=learnable,
        other_identities_recovered=recovered,
        payload_sizes_uniform=len(sizes) <= 1,
        dummy_classifier_accuracy=dummy_classifier_accuracy(seed=seed),
        retention_violations=retention_violations,
        threshold_violations=threshold_violations,
    )


# -- scenario config files ------------------------------------------------------


def load_scenario_config(path: str) -> tuple[SimParams, int]:
    """Read a scenario config file: SimParams fields plus optional steps."""
    with open(path, "r", encoding="utf-8") as fh:
        try:
            raw = json.load(fh)
        except json.JSONDecodeError as exc:
            raise ValueError(f"config parse error in {path}: {exc}") from exc
    if not isinstance(raw, dict):
        raise ValueError("scenario config must be an object")
    steps = raw.pop("steps", DEFAULT_STEPS)
    if not isinstance(steps, int) or steps < 0:
        raise ValueError(f"steps must be a non-negative integer, got {steps}")
    if "id_mode" in raw:
        raw["id_mode"] = IdMode(raw["id_mode"])
    known = {f.name for f in SimParams.__dataclass_fields__.values()}
    unknown = set(raw) - known
    if unknown:
        raise ValueError(f"unknown scenario config field(s): {', '.join(sorted(unknown))}")
    return SimParams(**raw), steps
