import asyncio
import contextlib
import io
import json
import subprocess
import sys

import pytest

from cavesim.bridge import (
    BridgeServer,
    LiveSource,
    ReplaySource,
    encode_message,
    read_message,
)
from cavesim.cli import main
from cavesim.engine import Engine
from cavesim.recording import ReplaySession, RunLogWriter
from cavesim.world import load_scenario

from helpers import scenario_text, tracked_agent


def _scenario_json(**kw):
    base = dict(width=30, height=30, resolution=0.5,
                agents=[tracked_agent()], duration=8.0,
                config={"sensors": {"lidar_rays": 60, "lidar_range": 4.0},
                        "mapping": {"local_range": 2.0, "global_range": 2.5},
                        "perception": {"fp_rate": 0.0}})
    base.update(kw)
    return scenario_text(**base)


@pytest.fixture
def scenario_file(tmp_path):
    p = tmp_path / "s.json"
    p.write_text(_scenario_json())
    return p


# -- batch run ---------------------------------------------------------------

def test_run_writes_metrics(scenario_file, tmp_path):
    out = tmp_path / "m.txt"
    rc = main(["run", "--scenario", str(scenario_file),
               "--metrics", str(out)])
    assert rc == 0
    text = out.read_text()
    assert "[mode_percent]" in text and "elapsed_s 8.00" in text


def test_run_twice_byte_identical(scenario_file, tmp_path):
    outs = []
    for name in ("a.txt", "b.txt"):
        out = tmp_path / name
        assert main(["run", "--scenario", str(scenario_file),
                     "--metrics", str(out)]) == 0
        outs.append(out.read_bytes())
    assert outs[0] == outs[1]


def test_run_seed_changes_outcome_hash(scenario_file, tmp_path):
    logs = []
    for seed in ("1", "2"):
        log = tmp_path / f"r{seed}.bin"
        assert main(["run", "--scenario", str(scenario_file), "--seed", seed,
                     "--log", str(log), "--duration", "4"]) == 0
        logs.append(log.read_bytes())
    assert logs[0] != logs[1]


def test_bad_scenario_exits_2(tmp_path, capsys):
    p = tmp_path / "bad.json"
    p.write_text('{"schema": 99}')
    with pytest.raises(SystemExit) as exc:
        main(["run", "--scenario", str(p)])
    assert exc.value.code == 2
    assert "bad scenario" in capsys.readouterr().err


def test_missing_scenario_exits_2(tmp_path):
    with pytest.raises(SystemExit) as exc:
        main(["run", "--scenario", str(tmp_path / "nope.json")])
    assert exc.value.code == 2


def test_module_entry_point(scenario_file, tmp_path):
    out = tmp_path / "m.txt"
    proc = subprocess.run(
        [sys.executable, "-m", "cavesim", "run", "--scenario",
         str(scenario_file), "--duration", "2", "--metrics", str(out)],
        capture_output=True, text=True, timeout=120)
    assert proc.returncode == 0, proc.stderr
    assert out.exists()


# -- record / replay via CLI ---------------------------------------------------

def test_cli_replay_matches_run(scenario_file, tmp_path, capsys):
    log = tmp_path / "run.bin"
    assert main(["run", "--scenario", str(scenario_file),
                 "--log", str(log), "--metrics", str(tmp_path / "m1.txt"),
                 "--duration", "6"]) == 0
    rc = main(["replay", "--log", str(log),
               "--metrics", str(tmp_path / "m2.txt")])
    assert rc == 0
    assert (tmp_path / "m1.txt").read_text() == \
        (tmp_path / "m2.txt").read_text()


def test_cli_replay_truncated_exits_2(scenario_file, tmp_path, capsys):
    log = tmp_path / "run.bin"
    main(["run", "--scenario", str(scenario_file), "--log", str(log),
          "--duration", "4"])
    data = log.read_bytes()
    log.write_bytes(data[:-15])
    assert main(["replay", "--log", str(log)]) == 2
    assert "error" in capsys.readouterr().err


def test_cli_replay_missing_log_exits_2(tmp_path):
    assert main(["replay", "--log", str(tmp_path / "none.bin")]) == 2


# -- bridge ---------------------------------------------------------------------

FAST = dict(speed=100.0, snapshot_rate=50.0)


def _engine(duration=8.0):
    return Engine(load_scenario(_scenario_json(duration=duration)))


async def _connect(server):
    for _ in range(500):
        if server.port is not None:
            break
        await asyncio.sleep(0.01)
    return await asyncio.open_connection("127.0.0.1", server.port)


async def _next(reader, want_type=None):
    while True:
        msg = await asyncio.wait_for(read_message(reader), timeout=10.0)
        if msg is None:
            return None
        if want_type is None or msg["type"] == want_type:
            return msg


def _send(writer, msg):
    writer.write(encode_message(msg))


async def _serving(source, body, **kw):
    server = BridgeServer(source, **{**FAST, **kw})
    task = asyncio.create_task(server.serve(port=0))
    try:
        return await body(server)
    finally:
        task.cancel()
        with contextlib.suppress(asyncio.CancelledError):
            await task


def test_hello_then_keyframe_first():
    async def body(server):
        reader, writer = await _connect(server)
        hello = await _next(reader)
        assert hello["type"] == "hello" and hello["mode"] == "live"
        snap = await _next(reader, "snapshot")
        assert snap["keyframe"] is True
        assert "tiles" in snap and "graph" in snap and "world" in snap
        nxt = await _next(reader, "snapshot")
        assert nxt["keyframe"] is False and "tiles" not in nxt
        assert nxt["seq"] == snap["seq"] + 1
        writer.close()
    asyncio.run(_serving(LiveSource(_engine()), body))


def test_command_acked_within_two_snapshots():
    async def body(server):
        reader, writer = await _connect(server)
        await _next(reader, "snapshot")
        _send(writer, {"type": "command", "seq": 7,
                       "cmd": {"kind": "waypoint", "agent": "r1",
                               "x": 6.0, "y": 1.5}})
        snaps_before_ack = 0
        while True:
            msg = await _next(reader)
            if msg["type"] == "ack":
                break
            if msg["type"] == "snapshot":
                snaps_before_ack += 1
        assert msg["seq"] == 7 and msg["status"] == "accepted"
        assert snaps_before_ack <= 2
        writer.close()
    asyncio.run(_serving(LiveSource(_engine()), body))


def test_rejected_command_ack_carries_reason():
    async def body(server):
        reader, writer = await _connect(server)
        await _next(reader, "snapshot")
        _send(writer, {"type": "command", "seq": 1,
                       "cmd": {"kind": "drop_node", "agent": "r1"}})
        ack = await _next(reader, "ack")
        assert ack["status"] == "rejected" and ack["reason"]
        writer.close()
    asyncio.run(_serving(LiveSource(_engine()), body))


def test_second_console_rejected():
    async def body(server):
        r1, w1 = await _connect(server)
        await _next(r1, "hello")
        r2, w2 = await asyncio.open_connection("127.0.0.1", server.port)
        msg = await _next(r2)
        assert msg["type"] == "error" and "already connected" in msg["reason"]
        assert await read_message(r2) is None       # closed
        # the first console is still being served
        assert (await _next(r1, "snapshot"))["type"] == "snapshot"
        w1.close()
        w2.close()
    asyncio.run(_serving(LiveSource(_engine()), body))


def test_reconnect_after_disconnect_gets_keyframe():
    async def body(server):
        r1, w1 = await _connect(server)
        await _next(r1, "snapshot")
        w1.close()
        await asyncio.sleep(0.05)
        r2, w2 = await asyncio.open_connection("127.0.0.1", server.port)
        assert (await _next(r2))["type"] == "hello"
        snap = await _next(r2, "snapshot")
        assert snap["keyframe"] is True and "tiles" in snap
        w2.close()
    asyncio.run(_serving(LiveSource(_engine()), body))


def test_request_keyframe_honoured():
    async def body(server):
        reader, writer = await _connect(server)
        await _next(reader, "snapshot")
        _send(writer, {"type": "request_keyframe"})
        for _ in range(5):
            snap = await _next(reader, "snapshot")
            if snap["keyframe"]:
                break
        assert snap["keyframe"] is True
        writer.close()
    asyncio.run(_serving(LiveSource(_engine()), body))


def test_keyframe_every_n_deltas():
    async def body(server):
        reader, writer = await _connect(server)
        seen = []
        while len(seen) < 12:
            snap = await _next(reader, "snapshot")
            seen.append(snap["keyframe"])
        assert seen[0] is True
        assert seen[6] is True            # 5 deltas then a fresh keyframe
        assert not any(seen[1:6]) and not any(seen[7:12])
        writer.close()
    asyncio.run(_serving(LiveSource(_engine()), body, keyframe_every=5,
                         speed=2.0, snapshot_rate=100.0))


def test_sim_continues_after_disconnect():
    async def body(server):
        reader, writer = await _connect(server)
        await _next(reader, "snapshot")
        writer.close()
        return server
    source = LiveSource(_engine(duration=4.0))

    async def run():
        server = BridgeServer(source, **FAST)
        task = asyncio.create_task(server.serve(port=0))
        reader, writer = await _connect(server)
        await _next(reader, "snapshot")
        writer.close()
        await asyncio.wait_for(task, timeout=30.0)
    asyncio.run(run())
    assert source.finished
    assert source.engine.tick_count == 100


def test_end_message_carries_score():
    async def run():
        source = LiveSource(_engine(duration=2.0))
        server = BridgeServer(source, **FAST)
        task = asyncio.create_task(server.serve(port=0))
        reader, writer = await _connect(server)
        while True:
            msg = await _next(reader)
            if msg is None or msg["type"] == "end":
                break
        assert msg is not None and msg["tick"] == 50
        writer.close()
        await asyncio.wait_for(task, timeout=30.0)
    asyncio.run(run())


def test_viewer_mode_rejects_commands():
    scn = load_scenario(_scenario_json(duration=4.0))
    buf = io.BytesIO()
    writer = RunLogWriter(buf, scn)
    eng = Engine(scn, recorder=writer)
    eng.run()

    async def run():
        session = ReplaySession(io.BytesIO(buf.getvalue()))
        source = ReplaySource(session)
        server = BridgeServer(source, **FAST)
        task = asyncio.create_task(server.serve(port=0))
        reader, w = await _connect(server)
        hello = await _next(reader, "hello")
        assert hello["mode"] == "viewer"
        _send(w, {"type": "command", "seq": 3,
                  "cmd": {"kind": "waypoint", "agent": "r1",
                          "x": 3.0, "y": 3.0}})
        ack = await _next(reader, "ack")
        assert ack["status"] == "rejected" and "viewer" in ack["reason"]
        while True:
            msg = await _next(reader)
            if msg is None or msg["type"] == "end":
                break
        assert msg is not None and msg["score"] == eng.score
        w.close()
        await asyncio.wait_for(task, timeout=30.0)
        return source.engine
    replayed = asyncio.run(run())
    assert replayed.state_hash() == eng.state_hash()


def test_malformed_json_reported():
    async def body(server):
        reader, writer = await _connect(server)
        await _next(reader, "hello")
        bad = b'{"broken'
        writer.write(len(bad).to_bytes(4, "big") + bad)
        while True:
            msg = await _next(reader)
            if msg["type"] == "error":
                break
        assert "JSON" in msg["reason"]
        writer.close()
    asyncio.run(_serving(LiveSource(_engine()), body))


def test_unknown_message_type_reported():
    async def body(server):
        reader, writer = await _connect(server)
        await _next(reader, "hello")
        _send(writer, {"type": "teleport"})
        while True:
            msg = await _next(reader)
            if msg["type"] == "error":
                break
        assert "unknown message type" in msg["reason"]
        writer.close()
    asyncio.run(_serving(LiveSource(_engine()), body))


def test_snapshot_roundtrips_through_json():
    e = _engine()
    for _ in range(150):
        e.tick()
    snap = e.console_snapshot(keyframe=True)
    again = json.loads(json.dumps(snap))
    assert again["tick"] == 150
    assert again["agents"][0]["id"] == "r1"
    assert len(again["tiles"]["rows"]) == again["tiles"]["height"]
