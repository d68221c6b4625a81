"""Live steering session: owns one world, advances it on a wall-clock tick,
streams snapshots, and applies client commands between steps.

Wire format (documented in docs/protocol.md): JSON messages, length-prefixed
with a 4-byte big-endian size over a plain TCP socket. A WebSocket client
(e.g. the browser UI) can connect to the same port; the handshake is
detected automatically and each JSON message then travels in one text frame.
"""

from __future__ import annotations

import base64
import hashlib
import json
import selectors
import socket
import struct
import threading
import time
from dataclasses import asdict

from .risk import RiskConfig
from .world import COLOR_BY_HEALTH, IdMode, SimParams, World, init_world

PROTOCOL_VERSION = 1
MAX_FRAME_BYTES = 16 * 1024 * 1024
DECIMATE_ABOVE_AGENTS = 200
DECIMATE_FACTOR = 5
MIN_TICK_RATE = 0.1
MAX_TICK_RATE = 240.0

_WS_GUID = "258EAFA5-E914-47DA-95CA-C5AB0DC85B11"

COMMANDS = ("pause", "resume", "reset", "set_param", "toggle_app", "select_agent", "set_tick_rate")


def encode_frame(message: dict) -> bytes:
    body = json.dumps(message, separators=(",", ":"), sort_keys=True).encode("utf-8")
    return struct.pack(">I", len(body)) + body


class FrameDecoder:
    """Incremental decoder for length-prefixed JSON frames."""

    def __init__(self) -> None:
        self._buf = bytearray()

    def push(self, data: bytes) -> list[dict]:
        self._buf.extend(data)
        messages = []
        while len(self._buf) >= 4:
            (size,) = struct.unpack(">I", self._buf[:4])
            if size > MAX_FRAME_BYTES:
                raise ValueError(f"frame of {size} bytes exceeds limit")
            if len(self._buf) < 4 + size:
                break
            body = bytes(self._buf[4 : 4 + size])
            del self._buf[: 4 + size]
            messages.append(json.loads(body.decode("utf-8")))
        return messages


def _ws_accept_key(client_key: str) -> str:
    digest = hashlib.sha1((client_key + _WS_GUID).encode()).digest()
    return base64.b64encode(digest).decode()


def _ws_encode_text(payload: bytes) -> bytes:
    header = bytearray([0x81])  # FIN + text opcode
    n = len(payload)
    if n < 126:
        header.append(n)
    elif n < 1 << 16:
        header.append(126)
        header.extend(struct.pack(">H", n))
    else:
        header.append(127)
        header.extend(struct.pack(">Q", n))
    return bytes(header) + payload


class _Client:
    def __init__(self, sock: socket.socket) -> None:
        self.sock = sock
        self.buf = bytearray()
        self.transport: str | None = None  # "raw" or "ws", decided on first bytes
        self.decoder = FrameDecoder()
        self.ws_handshaken = False

    def send_message(self, message: dict) -> None:
        if self.transport == "ws":
            body = json.dumps(message, separators=(",", ":"), sort_keys=True).encode("utf-8")
            data = _ws_encode_text(body)
        else:
            data = encode_frame(message)
        try:
            self.sock.sendall(data)
        except OSError:
            raise ConnectionError("client send failed")

    def feed(self, data: bytes) -> list[dict]:
        """Consume raw socket bytes, return decoded command messages."""
        if self.transport is None:
            self.buf.extend(data)
            if self.buf[:4] in (b"GET ", b"GET\t"):
                self.transport = "ws"
            elif len(self.buf) >= 4:
                self.transport = "raw"
            else:
                return []
            data, self.buf = bytes(self.buf), bytearray()
        if self.transport == "raw":
            return self.decoder.push(data)
        return self._feed_ws(data)

    def _feed_ws(self, data: bytes) -> list[dict]:
        self.buf.extend(data)
        if not self.ws_handshaken:
            end = self.buf.find(b"\r\n\r\n")
            if end < 0:
                return []
            headers = bytes(self.buf[:end]).decode("latin-1").split("\r\n")
            del self.buf[: end + 4]
            key = ""
            for line in headers[1:]:
                name, _, value = line.partition(":")
                if name.strip().lower() == "sec-websocket-key":
                    key = value.strip()
            if not key:
                raise ValueError("websocket handshake missing key")
            response = (
                "HTTP/1.1 101 Switching Protocols\r\n"
                "Upgrade: websocket\r\n"
                "Connection: Upgrade\r\n"
                f"Sec-WebSocket-Accept: {_ws_accept_key(key)}\r\n\r\n"
            )
            self.sock.sendall(response.encode("latin-1"))
            self.ws_handshaken = True
        messages = []
        while True:
            frame = self._parse_ws_frame()
            if frame is None:
                break
            opcode, payload = frame
            if opcode == 0x1:
                messages.append(json.loads(payload.decode("utf-8")))
            elif opcode == 0x8:
                raise ConnectionError("client closed websocket")
            elif opcode == 0x9:  # ping -> pong, same payload
                self.sock.sendall(bytes([0x8A]) + _ws_encode_text(payload)[1:])
        return messages

    def _parse_ws_frame(self) -> tuple[int, bytes] | None:
        buf = self.buf
        if len(buf) < 2:
            return None
        opcode = buf[0] & 0x0F
        masked = buf[1] & 0x80
        length = buf[1] & 0x7F
        offset = 2
        if length == 126:
            if len(buf) < 4:
                return None
            (length,) = struct.unpack(">H", buf[2:4])
            offset = 4
        elif length == 127:
            if len(buf) < 10:
                return None
            (length,) = struct.unpack(">Q", buf[2:10])
            offset = 10
        if length > MAX_FRAME_BYTES:
            raise ValueError("websocket frame too large")
        mask = b""
        if masked:
            if len(buf) < offset + 4:
                return None
            mask = bytes(buf[offset : offset + 4])
            offset += 4
        if len(buf) < offset + length:
            return None
        payload = bytes(buf[offset : offset + length])
        del buf[: offset + length]
        if mask:
            payload = bytes(b ^ mask[i % 4] for i, b in enumerate(payload))
        return opcode, payload


class SessionServer:
    """One session, one world; commands land between steps, never mid-step."""

    def __init__(
        self,
        params: SimParams,
        risk_config: RiskConfig | None = None,
        host: str = "127.0.0.1",
        port: int = 0,
        tick_rate: float = 30.0,
        **world_kwargs,
    ) -> None:
        if not MIN_TICK_RATE <= tick_rate <= MAX_TICK_RATE:
            raise ValueError(f"tick_rate must be in [{MIN_TICK_RATE}, {MAX_TICK_RATE}]")
        self._risk_config = risk_config
        self._world_kwargs = world_kwargs
        self.world: World = init_world(params, risk_config=risk_config, **world_kwargs)
        self.running = True
        self.tick_rate = tick_rate
        self.selected_agent: int | None = None
        self._pending_exits_left: list[int] = []
        self._pending_exits_right: list[int] = []
        self._ticks_emitted = 0
        self._stop = threading.Event()

        self._listener = socket.socket(socket.AF_INET, socket.SOCK_STREAM)
        self._listener.setsockopt(socket.SOL_SOCKET, socket.SO_REUSEADDR, 1)
        self._listener.bind((host, port))
        self._listener.listen(4)
        self._listener.setblocking(False)
        self.host, self.port = self._listener.getsockname()[:2]
        self._client: _Client | None = None

    # -- command handling ---------------------------------------------------

    def handle_command(self, message: dict) -> dict:
        """Apply one client command; returns the reply message."""
        if not isinstance(message, dict) or message.get("type") != "command":
            return {"type": "error", "message": "malformed message: expected a command"}
        name = message.get("name")
        try:
            if name == "pause":
                self.running = False
            elif name == "resume":
                self.running = True
            elif name == "reset":
                seed = message.get("seed", self.world.params.rng_seed)
                if not isinstance(seed, int):
                    raise ValueError("reset needs an integer seed")
                params = SimParams(**{**asdict(self.world.params), "rng_seed": seed,
                                      "id_mode": self.world.params.id_mode})
                self.world = init_world(params, risk_config=self._risk_config, **self._world_kwargs)
                self.selected_agent = None
                self._pending_exits_left.clear()
                self._pending_exits_right.clear()
            elif name == "set_param":
                param = message.get("param")
                if not isinstance(param, str):
                    raise ValueError("set_param needs a param name")
                self.world.set_params(**{param: message.get("value")})
            elif name == "toggle_app":
                self.world.set_params(app_enabled=not self.world.params.app_enabled)
            elif name == "select_agent":
                agent_id = message.get("agent_id")
                if agent_id is None:
                    self.selected_agent = None
                else:
                    self.world.find_agent(agent_id)  # raises KeyError if gone
                    self.selected_agent = agent_id
            elif name == "set_tick_rate":
                rate = float(message.get("rate", 0))
                if not MIN_TICK_RATE <= rate <= MAX_TICK_RATE:
                    raise ValueError(f"tick rate must be in [{MIN_TICK_RATE}, {MAX_TICK_RATE}]")
                self.tick_rate = rate
            else:
                return {"type": "error", "message": f"unknown command {name!r}"}
        except KeyError as exc:
            return {"type": "error", "command": name, "message": str(exc.args[0])}
        except (ValueError, TypeError) as exc:
            return {"type": "error", "command": name, "message": str(exc)}
        return {"type": "ack", "command": name}

    # -- snapshots ------------------------------------------------------------

    def build_snapshot(self) -> dict:
        world = self.world
        params = {k: (v.value if isinstance(v, IdMode) else v) for k, v in asdict(world.params).items()}
        agents = [
            [a.agent_id, round(a.x, 2), round(a.y, 2), COLOR_BY_HEALTH[a.health]]
            for a in world.agents
        ]
        selected = None
        if self.selected_agent is not None:
            try:
                snap = world.inspect_agent(self.selected_agent)
                selected = {
                    "agent_id": snap.agent_id,
                    "health_color": snap.health_color,
                    "own_identifier_hex": snap.own_identifier_hex,
                    "risk_status": snap.risk_status,
                    "contacts": [
                        [c.rpi_prefix, c.interval, round(c.attenuation_db, 2), c.duration_minutes]
                        for c in snap.contacts
                    ],
                    "pending_test": snap.pending_test,
                }
            except KeyError:
                selected = {"agent_id": self.selected_agent, "quarantined": True}
        snapshot = {
            "type": "snapshot",
            "protocol_version": PROTOCOL_VERSION,
            "step": world.step_count,
            "running": self.running,
            "tick_rate": self.tick_rate,
            "params": params,
            "agents": agents,
            "exits": {"left": list(self._pending_exits_left), "right": list(self._pending_exits_right)},
            "counters": {
                "active": world.active_count,
                "healthy": world.healthy_count,
                "infected_presymptomatic": world.infected_presymptomatic_count,
                "symptomatic_cumulative": world.symptomatic_cumulative,
                "quarantined_left_cumulative": world.quarantined_left_cumulative,
                "quarantined_right_cumulative": world.quarantined_right_cumulative,
                "replenished_cumulative": world.replenished_cumulative,
                "published_keys": len(world.server.published),
                "high_risk_devices": world.high_risk_device_count,
            },
            "server_panel": world.server.export_panel(),
            "selected": selected,
        }
        self._pending_exits_left.clear()
        self._pending_exits_right.clear()
        return snapshot

    def tick(self) -> dict | None:
        """Advance one step if running and return the snapshot due, if any."""
        if self.running:
            events = self.world.step()
            self._pending_exits_left.extend(events.quarantined_left)
            self._pending_exits_right.extend(events.quarantined_right)
        self._ticks_emitted += 1
        every = DECIMATE_FACTOR if self.world.active_count > DECIMATE_ABOVE_AGENTS else 1
        if self._ticks_emitted % every:
            return None
        return self.build_snapshot()

    # -- serving ---------------------------------------------------------------

    def stop(self) -> None:
        self._stop.set()

    def serve_forever(self) -> None:
        sel = selectors.DefaultSelector()
        sel.register(self._listener, selectors.EVENT_READ)
        try:
            next_tick = time.monotonic()
            while not self._stop.is_set():
                timeout = max(0.0, next_tick - time.monotonic())
                for key, _mask in sel.select(timeout):
                    if key.fileobj is self._listener:
                        self._accept(sel)
                    else:
                        self._read_client(sel, key.data)
                now = time.monotonic()
                if now >= next_tick:
                    snapshot = self.tick()
                    if snapshot and self._client:
                        try:
                            self._client.send_message(snapshot)
                        except ConnectionError:
                            self._drop_client(sel)
                    next_tick += 1.0 / self.tick_rate
                    if next_tick < now - 1.0:  # fell far behind; resync
                        next_tick = now
        finally:
            sel.close()
            self._listener.close()
            if self._client:
                self._client.sock.close()
                self._client = None

    def _accept(self, sel: selectors.BaseSelector) -> None:
        try:
            sock, _addr = self._listener.accept()
        except OSError:
            return
        if self._client is not None:
            try:
                sock.sendall(encode_frame({"type": "error", "message": "session already has a client"}))
            except OSError:
                pass
            sock.close()
            return
        sock.setblocking(False)
        client = _Client(sock)
        self._client = client
        sel.register(sock, selectors.EVENT_READ, client)

    def _read_client(self, sel: selectors.BaseSelector, client: _Client) -> None:
        try:
            data = client.sock.recv(65536)
        except BlockingIOError:
            return
        except OSError:
            data = b""
        if not data:
            self._drop_client(sel)
            return
        try:
            commands = client.feed(data)
        except (ConnectionError, ValueError, json.JSONDecodeError):
            self._drop_client(sel)
            return
        for message in commands:
            reply = self.handle_command(message)
            try:
                client.send_message(reply)
            except ConnectionError:
                self._drop_client(sel)
                return

    def _drop_client(self, sel: selectors.BaseSelector) -> None:
        if self._client is None:
            return
        try:
            sel.unregister(self._client.sock)
        except (KeyError, ValueError):
            pass
        self._client.sock.close()
        self._client = None


def serve_session(
    params: SimParams,
    risk_config: RiskConfig | None = None,
    host: str = "127.0.0.1",
    port: int = 0,
    tick_rate: float = 30.0,
    **world_kwargs,
) -> SessionServer:
    """Create a session server bound to the endpoint (not yet serving)."""
    return SessionServer(params, risk_config=risk_config, host=host, port=port,
                         tick_rate=tick_rate, **world_kwargs)
