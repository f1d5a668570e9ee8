"""Command line: ``music controller | simulate | replay`` and ``music-sim``.

Exit codes: 0 success, 2 configuration or input error, 3 runtime failure.
"""

from __future__ import annotations

import argparse
import asyncio
import dataclasses
import logging
import signal
import sys
from pathlib import Path

from music.analytics.io import read_segments, read_trace
from music.errors import AnalyticsError, ConfigError, MusicError
from music.metrics import write_metrics
from music.policy.base import create_policy, policy_names
from music.policy.runner import run_policy_loop

log = logging.getLogger("music")

EXIT_OK = 0
EXIT_CONFIG = 2
EXIT_RUNTIME = 3


def _common() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(add_help=False)
    p.add_argument("--log-level", default="WARNING", choices=["DEBUG", "INFO", "WARNING", "ERROR"])
    p.add_argument("--out-dir", type=Path, default=None, help="where to write outputs")
    return p


def _add_simulate_args(p: argparse.ArgumentParser) -> None:
    p.add_argument("--scenario", required=True, help="scenario YAML file or bundled scenario name")
    p.add_argument("--seed", type=int, default=None, help="override the scenario seed")
    p.add_argument("--policy", choices=policy_names(), default=None, help="override the scenario policy")
    p.add_argument("--acceleration", type=float, default=None,
                   help="sim seconds per wall second (default: the scenario's; 0 = unpaced)")
    p.add_argument("--transport", choices=["memory", "tcp"], default="memory",
                   help="memory is deterministic; tcp runs a real controller on localhost")


def build_parser() -> argparse.ArgumentParser:
    common = _common()
    parser = argparse.ArgumentParser(prog="music", description="Mobile sensing controller and fleet simulator")
    sub = parser.add_subparsers(dest="command", required=True)

    c = sub.add_parser("controller", parents=[common], help="run the controller service")
    c.add_argument("--host", default="127.0.0.1")
    c.add_argument("--data-port", type=int, default=9000)
    c.add_argument("--cmd-port", type=int, default=9001)
    c.add_argument("--data-dir", type=Path, default=Path("music-data"))
    c.add_argument("--keepalive-period-s", type=float, default=10.0)
    c.add_argument("--liveness-timeout-s", type=float, default=30.0)
    c.add_argument("--policy", choices=policy_names(), default="default")
    c.add_argument("--tick-s", type=float, default=5.0)
    c.add_argument("--run-for-s", type=float, default=None, help="stop after this many seconds")

    s = sub.add_parser("simulate", parents=[common], help="run a scenario under the virtual clock")
    _add_simulate_args(s)

    r = sub.add_parser("replay", parents=[common], help="offline segment speeds and hotspot flags")
    src = r.add_mutually_exclusive_group(required=True)
    src.add_argument("--trace", type=Path, help="trace CSV: timestamp_iso8601,vehicle_id,latitude,longitude")
    src.add_argument("--data-dir", type=Path, help="controller data logs (*.jsonl)")
    r.add_argument("--segments", type=Path, required=True, help="segments CSV")
    r.add_argument("--window-s", type=float, default=600.0)
    r.add_argument("--alpha", type=float, default=0.4)
    r.add_argument("--k", type=int, default=2)
    r.add_argument("--ewma-lambda", type=float, default=0.3)
    r.add_argument("--snap-radius-km", type=float, default=0.05)
    r.add_argument("--mode", choices=["speed_drop", "robust_outlier"], default="speed_drop")
    r.add_argument("--outlier-cutoff", type=float, default=3.0)
    return parser


def _setup_logging(level: str) -> None:
    logging.basicConfig(level=getattr(logging, level), format="%(levelname)s %(name)s: %(message)s",
                        stream=sys.stderr, force=True)


# -- controller -----------------------------------------------------------------

async def _serve(args) -> int:
    from music.service import ControllerService

    svc = ControllerService(
        data_dir=args.data_dir, host=args.host, data_port=args.data_port, cmd_port=args.cmd_port,
        keepalive_period_s=args.keepalive_period_s, liveness_timeout_s=args.liveness_timeout_s,
        policy=create_policy(args.policy), tick_s=args.tick_s,
    )
    loop = asyncio.get_running_loop()
    for sig in (signal.SIGINT, signal.SIGTERM):
        try:
            loop.add_signal_handler(sig, svc.shutdown)
        except (NotImplementedError, RuntimeError):
            pass
    if args.run_for_s is not None:
        loop.call_later(args.run_for_s, svc.shutdown)
    task = asyncio.ensure_future(svc.run())
    try:
        await task
    except OSError as exc:
        print(f"music controller: cannot listen on {args.host}:{args.data_port}/{args.cmd_port}: {exc}",
              file=sys.stderr)
        return EXIT_RUNTIME
    return EXIT_OK


def cmd_controller(args) -> int:
    if args.keepalive_period_s <= 0 or args.liveness_timeout_s <= 0:
        raise ConfigError("keepalive period and liveness timeout must be positive")
    return asyncio.run(_serve(args))


# -- simulate -------------------------------------------------------------------

async def _simulate_tcp(scenario):
    from music.service import ControllerService
    from music.sim.clock import VirtualClock
    from music.sim.tcp import run_tcp_fleet

    clock = VirtualClock(scenario.start, scenario.acceleration or 50.0)
    svc = ControllerService(
        data_dir=None, data_port=0, cmd_port=0,
        keepalive_period_s=scenario.keepalive_period_s, liveness_timeout_s=scenario.liveness_timeout_s,
        policy=create_policy(scenario.policy, scenario.params), tick_s=scenario.tick_s,
        table=scenario.sensor_table, clock=clock,
    )
    await svc.server.start()
    loop_task = asyncio.ensure_future(run_policy_loop(svc.runner, clock, scenario.tick_s, svc.stop_event))
    try:
        nodes = await run_tcp_fleet(scenario, "127.0.0.1", svc.server.data_port, svc.server.cmd_port, clock)
    finally:
        svc.shutdown()
        await loop_task
        await svc.server.stop()
    return svc, nodes


def cmd_simulate(args) -> int:
    from music.sim.fleet import Simulation
    from music.sim.scenario import load_scenario

    scenario = load_scenario(args.scenario, seed=args.seed)
    if args.policy is not None:
        scenario = dataclasses.replace(scenario, policy=args.policy)
    if args.acceleration is not None:
        scenario = dataclasses.replace(scenario, acceleration=args.acceleration or None)
    out_dir = args.out_dir or Path("music-out") / scenario.name
    if args.transport == "tcp":
        svc, nodes = asyncio.run(_simulate_tcp(scenario))
        for imei, n in sorted(nodes.items()):
            print(f"node.{imei}.samples_generated={n.generated}")
            print(f"node.{imei}.samples_delivered={n.delivered}")
            print(f"node.{imei}.samples_buffered={n.buffered()}")
            print(f"node.{imei}.samples_received={svc.driver.samples_received[imei]}")
        return EXIT_OK
    sim = Simulation(scenario, out_dir)
    report = sim.run()
    path = write_metrics(report, out_dir)
    print(path.read_text(encoding="utf-8"), end="")
    print(f"# outputs in {out_dir}", file=sys.stderr)
    return EXIT_OK


# -- replay ---------------------------------------------------------------------

def cmd_replay(args) -> int:
    from music.replay import fixes_from_logs, replay, write_replay

    segments = read_segments(args.segments)
    if args.trace is not None:
        load = read_trace(args.trace)
        for line, reason in load.rejected:
            print(f"{args.trace}:{line}: rejected: {reason}", file=sys.stderr)
        fixes = load.fixes
    else:
        fixes = fixes_from_logs(args.data_dir)
    result = replay(fixes, segments, args.window_s, args.alpha, args.k, args.ewma_lambda,
                    args.snap_radius_km, args.mode, args.outlier_cutoff)
    out_dir = args.out_dir or Path("music-replay")
    speeds, flags = write_replay(result, out_dir)
    hot = sorted({sid for _, sid, f in result.flags if f})
    print(f"windows={len({w for w, _, _ in result.flags})}")
    print(f"flagged_segments={','.join(hot) or 'none'}")
    print(f"speed_series={speeds}")
    print(f"hotspot_flags={flags}")
    return EXIT_OK


def main(argv: list[str] | None = None) -> int:
    args = build_parser().parse_args(argv)
    _setup_logging(args.log_level)
    handler = {"controller": cmd_controller, "simulate": cmd_simulate, "replay": cmd_replay}[args.command]
    try:
        return handler(args)
    except (ConfigError, AnalyticsError, ValueError) as exc:
        print(f"music {args.command}: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except (MusicError, OSError) as exc:
        print(f"music {args.command}: {exc}", file=sys.stderr)
        return EXIT_RUNTIME


def sim_main(argv: list[str] | None = None) -> int:
    parser = argparse.ArgumentParser(prog="music-sim", parents=[_common()],
                                     description="Run a simulation scenario")
    _add_simulate_args(parser)
    args = parser.parse_args(argv)
    _setup_logging(args.log_level)
    try:
        return cmd_simulate(args)
    except (ConfigError, AnalyticsError, ValueError) as exc:
        print(f"music-sim: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except (MusicError, OSError) as exc:
        print(f"music-sim: {exc}", file=sys.stderr)
        return EXIT_RUNTIME


if __name__ == "__main__":
    sys.exit(main())
