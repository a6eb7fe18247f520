"""Run logs: length-prefixed binary records with a versioned header.

A log captures everything needed to reproduce a run bit-for-bit: the full
scenario document, the seed, every supervisor command with the tick it was
applied at, periodic state hashes, and a final summary record.  Replay drives
a fresh engine from the log and raises on any hash divergence.
"""

from __future__ import annotations

import json
import struct
from typing import BinaryIO, Iterator, Optional

from .engine import Engine
from .world import Scenario, load_scenario, save_scenario

LOG_VERSION = 1
_LEN = struct.Struct(">I")


class RunLogError(Exception):
    pass


def _write_record(fh: BinaryIO, rec: dict):
    data = json.dumps(rec, sort_keys=True, separators=(",", ":")).encode()
    fh.write(_LEN.pack(len(data)))
    fh.write(data)


class RunLogWriter:
    def __init__(self, fh: BinaryIO, scenario: Scenario):
        self._fh = fh
        _write_record(fh, {"type": "header", "version": LOG_VERSION,
                           "scenario": save_scenario(scenario),
                           "seed": scenario.seed,
                           "duration": scenario.duration})

    def command(self, tick: int, cmd: dict, ack: dict):
        _write_record(self._fh, {"type": "cmd", "tick": tick, "cmd": cmd,
                                 "status": ack.get("status")})

    def hash(self, tick: int, digest: str):
        _write_record(self._fh, {"type": "hash", "tick": tick, "hash": digest})

    def end(self, tick: int, score: int, digest: str):
        _write_record(self._fh, {"type": "end", "tick": tick, "score": score,
                                 "hash": digest})
        self._fh.flush()


def read_records(fh: BinaryIO) -> Iterator[dict]:
    """Yield every record; raises RunLogError on truncation or bad framing."""
    while True:
        head = fh.read(_LEN.size)
        if not head:
            return
        if len(head) < _LEN.size:
            raise RunLogError("truncated log: incomplete record length")
        (n,) = _LEN.unpack(head)
        body = fh.read(n)
        if len(body) < n:
            raise RunLogError("truncated log: incomplete record body")
        try:
            yield json.loads(body)
        except ValueError as e:
            raise RunLogError(f"corrupt log record: {e}") from e


class ReplaySession:
    """Incremental replay: step the engine while applying the log's records.

    Raises RunLogError on version mismatch, truncation (no end record), or a
    state-hash divergence from the recorded run.
    """

    def __init__(self, fh: BinaryIO, verify: bool = True):
        self._records = read_records(fh)
        self._verify = verify
        try:
            header = next(self._records)
        except StopIteration:
            raise RunLogError("empty log") from None
        if header.get("type") != "header":
            raise RunLogError("log does not start with a header record")
        if header.get("version") != LOG_VERSION:
            raise RunLogError(
                f"log version {header.get('version')} unsupported "
                f"(expected {LOG_VERSION})")
        self.engine = Engine(load_scenario(header["scenario"]))
        self._pending: Optional[dict] = self._next_record()
        self.finished = False

    def _next_record(self) -> Optional[dict]:
        rec = next(self._records, None)
        if rec is not None and rec.get("type") not in ("cmd", "hash", "end"):
            raise RunLogError(f"unknown record type {rec.get('type')!r}")
        return rec

    def _apply_due(self):
        eng = self.engine
        while (self._pending is not None
               and self._pending["tick"] <= eng.tick_count):
            rec = self._pending
            kind = rec["type"]
            if kind == "cmd":
                eng.ingest_command(rec["cmd"])
            elif kind == "hash":
                if self._verify and eng.state_hash() != rec["hash"]:
                    raise RunLogError(
                        f"replay diverged at tick {rec['tick']}: "
                        f"{eng.state_hash()} != {rec['hash']}")
            else:                                   # end record
                if self._verify and eng.state_hash() != rec["hash"]:
                    raise RunLogError("replay diverged at the final state")
                if self._verify and eng.score != rec["score"]:
                    raise RunLogError(f"replay score {eng.score} != "
                                      f"recorded {rec['score']}")
                self.finished = True
                self._pending = None
                return
            self._pending = self._next_record()

    def step(self) -> bool:
        """Advance one tick; returns False once the end record is reached."""
        if self.finished:
            return False
        self._apply_due()
        if self.finished:
            return False
        if self._pending is None:
            raise RunLogError("truncated log: missing end record")
        self.engine.tick()
        self._apply_due()
        return not self.finished

    def run(self) -> Engine:
        while self.step():
            pass
        return self.engine


def replay(fh: BinaryIO, verify: bool = True) -> Engine:
    """Re-run a whole log; returns the finished engine."""
    return ReplaySession(fh, verify=verify).run()
