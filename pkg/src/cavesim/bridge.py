"""Live bridge between a running simulation and one operator console.

Transport: a bidirectional TCP socket carrying length-prefixed JSON messages
(4-byte big-endian length, then UTF-8 JSON).  The server paces the simulation
to real time (scaled by a speed factor), streams state snapshots at a fixed
rate, and acks every inbound command.  Only one console may be connected at a
time; later connections are refused.  A console joining mid-run receives a
full keyframe before deltas, and a keyframe is re-sent every 50 deltas.

The wire format is documented in protocol.md at the repository root.
"""

from __future__ import annotations

import asyncio
import json
import logging
import struct
from typing import Optional

PROTOCOL_VERSION = 1
KEYFRAME_EVERY = 50           # deltas between unsolicited keyframes
SNAPSHOT_RATE = 5.0           # snapshots per second of wall time
MAX_MESSAGE = 16 * 1024 * 1024

_LEN = struct.Struct(">I")
log = logging.getLogger("cavesim.bridge")


class ProtocolError(Exception):
    pass


def encode_message(msg: dict) -> bytes:
    data = json.dumps(msg, sort_keys=True, separators=(",", ":")).encode()
    return _LEN.pack(len(data)) + data


async def read_message(reader: asyncio.StreamReader) -> Optional[dict]:
    """Read one framed message; None on clean EOF."""
    try:
        head = await reader.readexactly(_LEN.size)
    except (asyncio.IncompleteReadError, ConnectionError):
        return None
    (n,) = _LEN.unpack(head)
    if n > MAX_MESSAGE:
        raise ProtocolError(f"message of {n} bytes exceeds limit")
    try:
        body = await reader.readexactly(n)
    except (asyncio.IncompleteReadError, ConnectionError):
        raise ProtocolError("connection closed mid-message") from None
    try:
        return json.loads(body)
    except ValueError as e:
        raise ProtocolError(f"malformed JSON: {e}") from e


class _Console:
    """One connected console: a writer plus its keyframe bookkeeping."""

    def __init__(self, reader: asyncio.StreamReader,
                 writer: asyncio.StreamWriter):
        self.reader = reader
        self.writer = writer
        self.deltas_since_keyframe = 0
        self.wants_keyframe = True      # first snapshot is always a keyframe
        self.closed = False

    def send(self, msg: dict):
        if not self.closed:
            self.writer.write(encode_message(msg))

    async def close(self):
        self.closed = True
        try:
            self.writer.close()
            await self.writer.wait_closed()
        except (ConnectionError, OSError):
            pass


class BridgeServer:
    """Paces a simulation source and serves one console over TCP.

    ``source`` is either a live engine (commands allowed) or a replay
    session wrapped by :class:`ReplaySource` (viewer mode: commands are
    rejected, the recorded stream drives the run).
    """

    def __init__(self, source, *, speed: float = 1.0,
                 snapshot_rate: float = SNAPSHOT_RATE,
                 keyframe_every: int = KEYFRAME_EVERY):
        if speed <= 0:
            raise ValueError("speed factor must be positive")
        self.source = source
        self.speed = speed
        self.interval = 1.0 / snapshot_rate
        self.keyframe_every = keyframe_every
        self.console: Optional[_Console] = None
        self.seq = 0
        self.port: Optional[int] = None
        self._server: Optional[asyncio.base_events.Server] = None

    # -- connection handling --------------------------------------------------

    async def _on_connect(self, reader: asyncio.StreamReader,
                          writer: asyncio.StreamWriter):
        if self.console is not None and not self.console.closed:
            log.warning("refusing second console connection")
            writer.write(encode_message(
                {"type": "error", "version": PROTOCOL_VERSION,
                 "reason": "console already connected: "
                           "single-supervisor rule"}))
            try:
                await writer.drain()
            except ConnectionError:
                pass
            writer.close()
            return
        console = _Console(reader, writer)
        self.console = console
        console.send({"type": "hello", "version": PROTOCOL_VERSION,
                      "mode": self.source.mode,
                      "snapshot_rate": 1.0 / self.interval,
                      "speed": self.speed})
        log.info("console connected")
        try:
            while True:
                msg = await read_message(reader)
                if msg is None:
                    break
                self._on_message(console, msg)
        except ProtocolError as e:
            console.send({"type": "error", "reason": str(e)})
        finally:
            log.info("console disconnected")
            await console.close()
            if self.console is console:
                self.console = None

    def _on_message(self, console: _Console, msg: dict):
        kind = msg.get("type")
        if kind == "command":
            ack = {k: v for k, v in self.source.command(msg.get("cmd")).items()
                   if k != "seq"}
            console.send({"type": "ack", "seq": msg.get("seq"), **ack})
        elif kind == "request_keyframe":
            console.wants_keyframe = True
        else:
            console.send({"type": "error",
                          "reason": f"unknown message type {kind!r}"})

    # -- pacing loop ------------------------------------------------------------

    async def serve(self, host: str = "127.0.0.1", port: int = 0):
        """Run the simulation to completion while serving snapshots."""
        self._server = await asyncio.start_server(self._on_connect, host, port)
        self.port = self._server.sockets[0].getsockname()[1]
        log.info("bridge listening on %s:%d (mode=%s, speed=%.2fx)",
                 host, self.port, self.source.mode, self.speed)
        loop = asyncio.get_running_loop()
        start_wall = loop.time()
        start_sim = self.source.sim_time
        try:
            next_emit = loop.time()
            while not self.source.finished:
                target = start_sim + (loop.time() - start_wall) * self.speed
                self.source.advance_to(target)
                self._emit_snapshot()
                next_emit += self.interval
                delay = next_emit - loop.time()
                if delay > 0:
                    await asyncio.sleep(delay)
                else:
                    next_emit = loop.time()
                    await asyncio.sleep(0)
            self._emit_snapshot()
            if self.console is not None:
                self.console.send({"type": "end",
                                   "score": self.source.engine.score,
                                   "tick": self.source.engine.tick_count})
                try:
                    await self.console.writer.drain()
                except ConnectionError:
                    pass
        finally:
            if self.console is not None:
                await self.console.close()
            self._server.close()
            await self._server.wait_closed()

    def _emit_snapshot(self):
        console = self.console
        if console is None or console.closed:
            return
        keyframe = (console.wants_keyframe
                    or console.deltas_since_keyframe >= self.keyframe_every)
        snap = self.source.engine.console_snapshot(keyframe=keyframe)
        self.seq += 1
        snap.update(type="snapshot", version=PROTOCOL_VERSION, seq=self.seq,
                    keyframe=keyframe, mode=self.source.mode)
        console.send(snap)
        if keyframe:
            console.wants_keyframe = False
            console.deltas_since_keyframe = 0
        else:
            console.deltas_since_keyframe += 1


class LiveSource:
    """Live engine behind the bridge: ticks on demand, accepts commands."""

    mode = "live"

    def __init__(self, engine, duration: Optional[float] = None):
        self.engine = engine
        self.duration = (engine.scenario.duration if duration is None
                         else duration)
        self._ticks = round(self.duration / engine.dt)

    @property
    def sim_time(self) -> float:
        return self.engine.sim_time

    @property
    def finished(self) -> bool:
        return self.engine.tick_count >= self._ticks

    def advance_to(self, sim_time: float):
        while (self.engine.tick_count < self._ticks
               and self.engine.sim_time < sim_time):
            self.engine.tick()

    def command(self, cmd) -> dict:
        if not isinstance(cmd, dict):
            return {"status": "rejected", "reason": "command must be a JSON "
                    "object", "tick": self.engine.tick_count}
        return self.engine.ingest_command(cmd)


class ReplaySource:
    """Recorded run behind the bridge: viewer mode, command channel disabled."""

    mode = "viewer"

    def __init__(self, session):
        self.session = session

    @property
    def engine(self):
        return self.session.engine

    @property
    def sim_time(self) -> float:
        return self.session.engine.sim_time

    @property
    def finished(self) -> bool:
        return self.session.finished

    def advance_to(self, sim_time: float):
        while (not self.session.finished
               and self.session.engine.sim_time < sim_time):
            self.session.step()

    def command(self, cmd) -> dict:
        return {"status": "rejected", "reason": "viewer mode: command "
                "channel disabled", "tick": self.session.engine.tick_count}
