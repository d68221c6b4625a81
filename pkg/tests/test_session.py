"""Steering session: framing, commands, snapshots, pause/fidelity contracts."""

import base64
import hashlib
import json
import socket
import struct
import threading
import time

import pytest

from exposim.harness import run_scenario
from exposim.session import FrameDecoder, SessionServer, encode_frame
from exposim.world import SimParams

PARAMS = SimParams(population=20, world_width=120.0, world_height=120.0,
                   incubation_steps=30, outbreak_rate=2e-4, rng_seed=6)


class RawClient:
    def __init__(self, port: int):
        self.sock = socket.create_connection(("127.0.0.1", port), timeout=5)
        self.sock.settimeout(5)
        self.decoder = FrameDecoder()
        self.inbox: list[dict] = []

    def close(self):
        self.sock.close()

    def send(self, message: dict):
        self.sock.sendall(encode_frame(message))

    def _pump(self):
        data = self.sock.recv(65536)
        if not data:
            raise ConnectionError("server closed")
        self.inbox.extend(self.decoder.push(data))

    def next_message(self, predicate=lambda m: True, timeout=5.0) -> dict:
        deadline = time.monotonic() + timeout
        while time.monotonic() < deadline:
            for i, msg in enumerate(self.inbox):
                if predicate(msg):
                    del self.inbox[: i + 1]
                    return msg
            self._pump()
        raise TimeoutError("no matching message")

    def command(self, name: str, **args) -> dict:
        self.send({"type": "command", "name": name, **args})
        return self.next_message(lambda m: m["type"] in ("ack", "error"))


@pytest.fixture
def session():
    server = SessionServer(PARAMS, port=0, tick_rate=120.0)
    thread = threading.Thread(target=server.serve_forever, daemon=True)
    thread.start()
    client = RawClient(server.port)
    yield server, client
    client.close()
    server.stop()
    thread.join(timeout=5)


def snapshot(client, **kw):
    return client.next_message(lambda m: m["type"] == "snapshot", **kw)


class TestFraming:
    def test_round_trip(self):
        decoder = FrameDecoder()
        messages = [{"type": "ack", "command": "pause"}, {"type": "snapshot", "step": 3}]
        blob = b"".join(encode_frame(m) for m in messages)
        # feed byte by byte to exercise partial reads
        out = []
        for i in range(len(blob)):
            out.extend(decoder.push(blob[i:i + 1]))
        assert out == messages

    def test_oversized_frame_rejected(self):
        decoder = FrameDecoder()
        with pytest.raises(ValueError):
            decoder.push(struct.pack(">I", 1 << 30))


class TestCommands:
    def test_pause_freezes_step_counter(self, session):
        _server, client = session
        assert client.command("pause")["type"] == "ack"
        s1 = snapshot(client)
        time.sleep(0.15)
        client.inbox.clear()
        s2 = snapshot(client)
        assert s2["step"] == s1["step"]
        assert s2["running"] is False

    def test_resume_advances(self, session):
        _server, client = session
        client.command("pause")
        s1 = snapshot(client)
        client.command("resume")
        s2 = snapshot(client, timeout=5.0)
        deadline = time.monotonic() + 5
        while s2["step"] <= s1["step"] and time.monotonic() < deadline:
            s2 = snapshot(client)
        assert s2["step"] > s1["step"]

    def test_set_param_acked_and_reflected(self, session):
        _server, client = session
        reply = client.command("set_param", param="speed", value=3.5)
        assert reply == {"type": "ack", "command": "set_param"}
        client.inbox.clear()
        assert snapshot(client)["params"]["speed"] == 3.5

    def test_invalid_param_is_error_and_state_unchanged(self, session):
        server, client = session
        reply = client.command("set_param", param="infection_radius", value=-2)
        assert reply["type"] == "error"
        assert "infection_radius" in reply["message"]
        assert server.world.params.infection_radius == PARAMS.infection_radius

    def test_immutable_param_rejected(self, session):
        _server, client = session
        reply = client.command("set_param", param="rng_seed", value=9)
        assert reply["type"] == "error"

    def test_toggle_app(self, session):
        server, client = session
        client.command("toggle_app")
        assert server.world.params.app_enabled is False
        client.command("toggle_app")
        assert server.world.params.app_enabled is True

    def test_select_agent_and_missing_agent(self, session):
        _server, client = session
        assert client.command("select_agent", agent_id=0)["type"] == "ack"
        client.inbox.clear()
        s = snapshot(client)
        assert s["selected"]["agent_id"] == 0
        assert "own_identifier_hex" in s["selected"]
        reply = client.command("select_agent", agent_id=4040)
        assert reply["type"] == "error"
        # session still alive afterwards
        assert client.command("pause")["type"] == "ack"

    def test_set_tick_rate_bounds(self, session):
        _server, client = session
        assert client.command("set_tick_rate", rate=60)["type"] == "ack"
        assert client.command("set_tick_rate", rate=100000)["type"] == "error"

    def test_reset_restarts_world(self, session):
        server, client = session
        time.sleep(0.1)
        client.command("pause")
        assert server.world.step_count > 0
        reply = client.command("reset", seed=99)
        assert reply["type"] == "ack"
        client.inbox.clear()
        s = snapshot(client)
        assert s["params"]["rng_seed"] == 99

    def test_malformed_command(self, session):
        _server, client = session
        client.send({"type": "command", "name": "warp_drive"})
        reply = client.next_message(lambda m: m["type"] == "error")
        assert "warp_drive" in reply["message"]


class TestSnapshotContent:
    def test_fields_present(self, session):
        _server, client = session
        s = snapshot(client)
        assert s["protocol_version"] == 1
        for field in ("step", "running", "tick_rate", "params", "agents",
                      "exits", "counters", "server_panel", "selected"):
            assert field in s
        for dot in s["agents"]:
            agent_id, x, y, color = dot
            assert color in ("grey", "red", "purple")
            assert 0 <= x <= PARAMS.world_width
            assert 0 <= y <= PARAMS.world_height

    def test_step_counter_monotone(self, session):
        _server, client = session
        steps = [snapshot(client)["step"] for _ in range(10)]
        assert steps == sorted(steps)

    def test_snapshot_matches_headless_run(self, session):
        """Paused snapshot at step k carries exactly the headless metrics of
        the same seed at step k."""
        _server, client = session
        time.sleep(0.1)
        client.command("pause")
        client.inbox.clear()
        s = snapshot(client)
        step = s["step"]
        series, _ = run_scenario(PARAMS, steps=step)
        headless = series.rows[step]
        c = s["counters"]
        reconstructed = (step, c["active"], c["healthy"], c["infected_presymptomatic"],
                         c["symptomatic_cumulative"], c["quarantined_left_cumulative"],
                         c["quarantined_right_cumulative"], c["replenished_cumulative"],
                         c["published_keys"], c["high_risk_devices"])
        assert reconstructed == headless


class TestWebSocketTransport:
    def test_handshake_and_snapshot(self):
        server = SessionServer(PARAMS, port=0, tick_rate=60.0)
        thread = threading.Thread(target=server.serve_forever, daemon=True)
        thread.start()
        try:
            sock = socket.create_connection(("127.0.0.1", server.port), timeout=5)
            sock.settimeout(5)
            key = base64.b64encode(b"0123456789abcdef").decode()
            sock.sendall((
                f"GET / HTTP/1.1\r\nHost: localhost\r\nUpgrade: websocket\r\n"
                f"Connection: Upgrade\r\nSec-WebSocket-Key: {key}\r\n"
                f"Sec-WebSocket-Version: 13\r\n\r\n"
            ).encode())
            buf = b""
            while b"\r\n\r\n" not in buf:
                buf += sock.recv(4096)
            head, _, rest = buf.partition(b"\r\n\r\n")
            expected = base64.b64encode(
                hashlib.sha1((key + "258EAFA5-E914-47DA-95CA-C5AB0DC85B11").encode()).digest()
            ).decode()
            assert f"Sec-WebSocket-Accept: {expected}".encode() in head

            # read one server->client text frame (unmasked)
            while len(rest) < 2:
                rest += sock.recv(4096)
            length = rest[1] & 0x7F
            offset = 2
            if length == 126:
                while len(rest) < 4:
                    rest += sock.recv(4096)
                length = struct.unpack(">H", rest[2:4])[0]
                offset = 4
            elif length == 127:
                while len(rest) < 10:
                    rest += sock.recv(4096)
                length = struct.unpack(">Q", rest[2:10])[0]
                offset = 10
            while len(rest) < offset + length:
                rest += sock.recv(4096)
            message = json.loads(rest[offset:offset + length])
            assert message["type"] == "snapshot"

            # send a masked command frame, expect an ack frame back
            body = json.dumps({"type": "command", "name": "pause"}).encode()
            mask = b"\x01\x02\x03\x04"
            masked = bytes(b ^ mask[i % 4] for i, b in enumerate(body))
            frame = bytes([0x81, 0x80 | len(body)]) + mask + masked
            sock.sendall(frame)
            buf2 = rest[offset + length:]
            deadline = time.monotonic() + 5
            acked = False
            while time.monotonic() < deadline and not acked:
                buf2 += sock.recv(65536)
                while len(buf2) >= 2:
                    ln = buf2[1] & 0x7F
                    off = 2
                    if ln == 126:
                        if len(buf2) < 4:
                            break
                        ln = struct.unpack(">H", buf2[2:4])[0]
                        off = 4
                    elif ln == 127:
                        if len(buf2) < 10:
                            break
                        ln = struct.unpack(">Q", buf2[2:10])[0]
                        off = 10
                    if len(buf2) < off + ln:
                        break
                    payload = json.loads(buf2[off:off + ln])
                    buf2 = buf2[off + ln:]
                    if payload.get("type") == "ack" and payload.get("command") == "pause":
                        acked = True
                        break
            assert acked
            sock.close()
        finally:
            server.stop()
            thread.join(timeout=5)


class TestDecimation:
    def test_snapshots_thinned_above_200_agents(self):
        big = SimParams(population=250, world_width=400.0, world_height=300.0,
                        outbreak_rate=0.0, rng_seed=1)
        server = SessionServer(big, port=0)
        try:
            emitted = [server.tick() for _ in range(10)]
            assert sum(1 for s in emitted if s) == 2  # every 5th tick
        finally:
            server.stop()

    def test_full_rate_at_small_population(self):
        server = SessionServer(PARAMS, port=0)
        try:
            emitted = [server.tick() for _ in range(10)]
            assert sum(1 for s in emitted if s) == 10
        finally:
            server.stop()


class TestSingleClient:
    def test_second_connection_refused(self, session):
        server, _client = session
        extra = socket.create_connection(("127.0.0.1", server.port), timeout=5)
        extra.settimeout(5)
        decoder = FrameDecoder()
        deadline = time.monotonic() + 5
        messages = []
        while time.monotonic() < deadline and not messages:
            data = extra.recv(65536)
            if not data:
                break
            messages = decoder.push(data)
        assert messages and messages[0]["type"] == "error"
        extra.close()
