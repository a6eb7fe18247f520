"""Command-line entry points: batch runs, the live bridge, and replays.

    cavesim run    --scenario s.json [--duration D] [--seed S] ...
    cavesim serve  --scenario s.json --port P [--speed X] ...
    cavesim replay --log run.bin [--serve --port P] ...

Exit codes: 0 success, 1 runtime error, 2 bad scenario or run log.
The log level is taken from the SUBT_SIM_LOG_LEVEL environment variable
(DEBUG/INFO/WARNING/ERROR, default WARNING).
"""

from __future__ import annotations

import argparse
import asyncio
import dataclasses
import logging
import os
import sys
from pathlib import Path

from .bridge import BridgeServer, LiveSource, ReplaySource, SNAPSHOT_RATE
from .engine import Engine
from .recording import ReplaySession, RunLogError, RunLogWriter
from .world import ScenarioError, load_scenario

log = logging.getLogger("cavesim.cli")


def _setup_logging():
    level = os.environ.get("SUBT_SIM_LOG_LEVEL", "WARNING").upper()
    logging.basicConfig(level=getattr(logging, level, logging.WARNING),
                        format="%(asctime)s %(name)s %(levelname)s %(message)s")


def _load(path: str, seed=None):
    try:
        text = Path(path).read_text()
    except OSError as e:
        print(f"error: cannot read scenario {path}: {e}", file=sys.stderr)
        raise SystemExit(2)
    try:
        scenario = load_scenario(text)
    except (ScenarioError, ValueError) as e:
        print(f"error: bad scenario {path}: {e}", file=sys.stderr)
        raise SystemExit(2)
    if seed is not None:
        scenario = dataclasses.replace(scenario, seed=seed)
    return scenario


def _open_writer(path, scenario):
    if path is None:
        return None, None
    fh = open(path, "wb")
    return fh, RunLogWriter(fh, scenario)


def cmd_run(args) -> int:
    scenario = _load(args.scenario, args.seed)
    fh, writer = _open_writer(args.log, scenario)
    engine = Engine(scenario, recorder=writer)
    try:
        engine.run(args.duration)
    finally:
        if fh is not None:
            fh.close()
    metrics = engine.collect_metrics()
    out = args.metrics or str(Path(args.scenario).with_suffix(".metrics.txt"))
    Path(out).write_text(metrics.to_text())
    log.info("run complete: score=%d elapsed=%.1fs metrics=%s",
             metrics.score, metrics.elapsed, out)
    print(f"score {metrics.score}  elapsed {metrics.elapsed:.1f}s  "
          f"metrics {out}" + (f"  log {args.log}" if args.log else ""))
    return 0


def cmd_serve(args) -> int:
    scenario = _load(args.scenario, args.seed)
    fh, writer = _open_writer(args.log, scenario)
    engine = Engine(scenario, recorder=writer)
    source = LiveSource(engine, duration=args.duration)
    server = BridgeServer(source, speed=args.speed,
                          snapshot_rate=args.snapshot_rate)
    try:
        asyncio.run(server.serve(args.host, args.port))
    except KeyboardInterrupt:
        pass
    except OSError as e:
        print(f"error: cannot listen on {args.host}:{args.port}: {e}",
              file=sys.stderr)
        return 1
    finally:
        if writer is not None:
            writer.end(engine.tick_count, engine.score, engine.state_hash())
            fh.close()
    metrics = engine.collect_metrics()
    if args.metrics:
        Path(args.metrics).write_text(metrics.to_text())
    print(f"score {metrics.score}  elapsed {metrics.elapsed:.1f}s")
    return 0


def cmd_replay(args) -> int:
    try:
        fh = open(args.log, "rb")
    except OSError as e:
        print(f"error: cannot read run log {args.log}: {e}", file=sys.stderr)
        return 2
    try:
        with fh:
            session = ReplaySession(fh, verify=not args.no_verify)
            if args.serve:
                server = BridgeServer(ReplaySource(session), speed=args.speed,
                                      snapshot_rate=args.snapshot_rate)
                asyncio.run(server.serve(args.host, args.port))
            else:
                session.run()
    except RunLogError as e:
        print(f"error: {e}", file=sys.stderr)
        return 2
    except KeyboardInterrupt:
        return 1
    engine = session.engine
    metrics = engine.collect_metrics()
    if args.metrics:
        Path(args.metrics).write_text(metrics.to_text())
    print(f"score {metrics.score}  elapsed {metrics.elapsed:.1f}s  "
          f"hash {engine.state_hash()}")
    return 0


def cmd_scenario(args) -> int:
    from . import scenarios
    try:
        doc = scenarios.build(args.name, args.seed)
    except KeyError as e:
        print(f"error: {e.args[0]}", file=sys.stderr)
        return 2
    Path(args.out).write_text(scenarios.to_json(doc))
    print(f"wrote {doc['name']} to {args.out}")
    return 0


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="cavesim", description=__doc__,
                                formatter_class=argparse.RawDescriptionHelpFormatter)
    sub = p.add_subparsers(dest="command", required=True)

    run = sub.add_parser("run", help="headless batch run")
    run.add_argument("--scenario", required=True)
    run.add_argument("--duration", type=float, default=None,
                     help="seconds of sim time (default: scenario duration)")
    run.add_argument("--seed", type=int, default=None)
    run.add_argument("--metrics", help="metrics output path")
    run.add_argument("--log", help="run log output path")
    run.set_defaults(func=cmd_run)

    serve = sub.add_parser("serve", help="real-time run with a console bridge")
    serve.add_argument("--scenario", required=True)
    serve.add_argument("--duration", type=float, default=None)
    serve.add_argument("--seed", type=int, default=None)
    serve.add_argument("--host", default="127.0.0.1")
    serve.add_argument("--port", type=int, default=8571)
    serve.add_argument("--speed", type=float, default=1.0,
                       help="sim seconds per wall second")
    serve.add_argument("--snapshot-rate", type=float, default=SNAPSHOT_RATE)
    serve.add_argument("--metrics", help="metrics output path")
    serve.add_argument("--log", help="run log output path")
    serve.set_defaults(func=cmd_serve)

    rep = sub.add_parser("replay", help="re-run a recorded log")
    rep.add_argument("--log", required=True)
    rep.add_argument("--metrics", help="metrics output path")
    rep.add_argument("--no-verify", action="store_true",
                     help="skip state-hash verification")
    rep.add_argument("--serve", action="store_true",
                     help="stream the replay to a console in viewer mode")
    rep.add_argument("--host", default="127.0.0.1")
    rep.add_argument("--port", type=int, default=8571)
    rep.add_argument("--speed", type=float, default=1.0)
    rep.add_argument("--snapshot-rate", type=float, default=SNAPSHOT_RATE)
    rep.set_defaults(func=cmd_replay)

    scn = sub.add_parser("scenario", help="write a built-in course to a file")
    scn.add_argument("--name", required=True,
                     help="course name (desk, mule, reroute, ledge)")
    scn.add_argument("--out", required=True)
    scn.add_argument("--seed", type=int, default=None)
    scn.set_defaults(func=cmd_scenario)
    return p


def main(argv=None) -> int:
    _setup_logging()
    args = build_parser().parse_args(argv)
    return args.func(args)


if __name__ == "__main__":
    sys.exit(main())
