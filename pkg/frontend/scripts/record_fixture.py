#!/usr/bin/env python3
"""Record a deterministic steering-session fixture for the frontend tests.

Drives one session tick by tick (no sockets, no wall clock), interleaving
scripted client commands exactly where a live server would process them,
and writes:

  tests/fixtures/session.jsonl  — every message, both directions
  tests/fixtures/session.bin    — the raw server->client byte stream
                                  (length-prefixed frames, as on TCP)

Regenerate with:  python3 scripts/record_fixture.py
"""

import json
import pathlib

from exposim.risk import RiskConfig
from exposim.session import SessionServer, encode_frame
from exposim.world import SimParams

FIXTURES = pathlib.Path(__file__).resolve().parent.parent / "tests" / "fixtures"

# tuned so the short capture shows contacts, left exits and right exits
RISK = RiskConfig((55.0, 63.0, 73.0), (1.0, 0.5, 0.1, 0.0),
                  (0.0, 0.1, 0.25, 0.5, 0.8, 1.0, 1.0, 1.0), 0.05)
PARAMS = SimParams(population=12, world_width=80.0, world_height=80.0, speed=2.0,
                   infection_radius=12.0, outbreak_rate=0.0, incubation_steps=15,
                   poll_interval_steps=5, test_delay_steps=3, rng_seed=42)


def main() -> None:
    server = SessionServer(PARAMS, risk_config=RISK, port=0, tick_rate=30.0,
                           batch_threshold=1)
    server.world.infect_agent(server.world.agents[0].agent_id)

    log: list[dict] = []
    wire = bytearray()

    def s2c(message: dict) -> None:
        log.append({"dir": "s2c", "msg": message})
        wire.extend(encode_frame(message))

    def c2s(name: str, **args) -> None:
        command = {"type": "command", "name": name, **args}
        log.append({"dir": "c2s", "msg": command})
        s2c(server.handle_command(command))

    for tick in range(1, 41):
        snapshot = server.tick()
        if snapshot:
            s2c(snapshot)
        if tick == 20:
            # inspect the active agent with the fullest contact list
            best = max(server.world.agents,
                       key=lambda a: (len(a.device.stored_contacts), -a.agent_id))
            c2s("select_agent", agent_id=best.agent_id)
        elif tick == 21:
            c2s("set_param", param="speed", value=3.0)
        elif tick == 22:
            c2s("select_agent", agent_id=9999)       # error path
        elif tick == 24:
            c2s("set_param", param="infection_radius", value=-5)  # snap-back path
        elif tick == 26:
            c2s("toggle_app")
        elif tick == 27:
            c2s("toggle_app")
        elif tick == 30:
            c2s("pause")
        elif tick == 34:
            c2s("resume")
        elif tick == 35:
            c2s("set_tick_rate", rate=60)
    server.stop()

    FIXTURES.mkdir(parents=True, exist_ok=True)
    with open(FIXTURES / "session.jsonl", "w", encoding="utf-8") as fh:
        for entry in log:
            fh.write(json.dumps(entry, sort_keys=True, separators=(",", ":")) + "\n")
    (FIXTURES / "session.bin").write_bytes(bytes(wire))

    snapshots = [e for e in log if e["dir"] == "s2c" and e["msg"].get("type") == "snapshot"]
    lefts = sum(len(e["msg"]["exits"]["left"]) for e in snapshots)
    rights = sum(len(e["msg"]["exits"]["right"]) for e in snapshots)
    with_panel = sum(1 for e in snapshots if e["msg"]["selected"] and "contacts" in e["msg"]["selected"])
    print(f"recorded {len(log)} messages ({len(snapshots)} snapshots), "
          f"{lefts} left exits, {rights} right exits, "
          f"{with_panel} snapshots with a populated inspector panel")
    assert lefts and rights and with_panel, "fixture must exhibit all behaviours"


if __name__ == "__main__":
    main()
