"""Command-line entry points.

    aquasim survey   -- classify a range-survey CSV against the link model
    aquasim run      -- execute a scenario (batch, or live against a service)
    aquasim replay   -- recompute metrics from a trace file
    aquasim serve    -- run the ingestion service
    aquasim gateway  -- run the gateway relay (also installed as `aquagw`)
    aquasim demo     -- service + gateway + live simulation, end to end
    aquasim frames   -- dump wire frames as hex + decoded JSON

Exit codes: 0 success, 1 check/assertion failure, 2 usage error.
"""

from __future__ import annotations

import argparse
import json
import queue
import sys
import threading
import time
from importlib import resources
from typing import Optional

import httpx

from . import frames
from .demo import run_demo
from .engine import Engine, ReplayError, replay_file
from .gateway import GatewayConfig, GatewayRelay
from .lora import (
    LinkError,
    RadioConfig,
    SiteModel,
    load_survey_csv,
    survey_report,
)
from .scenario import ScenarioError, load_scenario
from .service import ServiceConfig, create_app

USAGE_ERROR = 2
CHECK_FAILED = 1


def bundled_path(name: str):
    return resources.files("aquasim.data").joinpath(name)


def _radio_from_args(args) -> RadioConfig:
    return RadioConfig(
        frequency_mhz=args.freq_mhz,
        spreading_factor=args.sf,
        bandwidth_hz=args.bandwidth_hz,
        tx_power_dbm=args.tx_power_dbm,
        tx_antenna_gain_dbi=args.tx_gain_dbi,
        rx_antenna_gain_dbi=args.rx_gain_dbi,
        rx_sensitivity_dbm=args.sensitivity_dbm,
    )


def cmd_survey(args) -> int:
    try:
        points = load_survey_csv(args.csv)
        if not points:
            print("survey CSV contains no data rows", file=sys.stderr)
            return USAGE_ERROR
        cfg = _radio_from_args(args)
        site = None
        if args.site_excess_db is not None:
            site = SiteModel(site_excess_db=args.site_excess_db)
        report = survey_report(cfg, points, site=site)
    except (LinkError, OSError) as exc:
        print(f"survey error: {exc}", file=sys.stderr)
        return USAGE_ERROR
    print(report.to_json() if args.json else report.to_text())
    return 0 if report.measured_all_reachable else CHECK_FAILED


def cmd_run(args) -> int:
    try:
        scenario = load_scenario(args.scenario)
        if args.seed is not None:
            import dataclasses

            scenario = dataclasses.replace(scenario, seed=args.seed)
        engine = Engine(scenario)
    except (ScenarioError, LinkError) as exc:
        print(f"scenario error: {exc}", file=sys.stderr)
        return USAGE_ERROR

    if args.live:
        return _run_live(args, scenario, engine)

    result = engine.run()
    if args.out:
        result.write_trace(args.out)
    if args.frames_out:
        with open(args.frames_out, "w") as fh:
            for delivery in result.deliveries:
                fh.write(json.dumps(delivery.to_dict()) + "\n")
    summary = result.metrics.to_dict()
    summary["trace_sha256"] = result.trace_hash()
    print(json.dumps(summary, indent=None if args.json else 2))
    return 0


def _run_live(args, scenario, engine) -> int:
    """Run paced against the wall clock, relaying through a real service."""
    if not args.service_url:
        print("--live requires --service-url", file=sys.stderr)
        return USAGE_ERROR
    if args.gateway_config:
        gw_config = GatewayConfig.from_file(args.gateway_config)
        gw_config.service_url = args.service_url
    else:
        from .demo import DEMO_GATEWAY

        gw_config = GatewayConfig(
            service_url=args.service_url,
            username=DEMO_GATEWAY[0],
            password=DEMO_GATEWAY[1],
            gateway_id="gw-live",
            buffer_path="dtn-buffer.ndjson",
        )
    relay = GatewayRelay(gw_config)
    outbound: "queue.Queue" = queue.Queue()
    command_queue: "queue.Queue" = queue.Queue()
    box: list = []

    def engine_main():
        box.append(engine.run(pace=args.pace, outbound=outbound,
                              command_queue=command_queue))

    thread = threading.Thread(target=engine_main, daemon=True)
    thread.start()
    next_poll = time.monotonic()
    while True:
        try:
            message = outbound.get(timeout=0.05)
        except queue.Empty:
            message = "idle"
        if message is None:
            break
        if message != "idle":
            uplink_up = scenario.gateway.uplink_up(message.t)
            relay.relay(message.frame_bytes, message.rssi_dbm,
                        now=scenario.epoch_start_s + message.t, uplink_up=uplink_up)
        if time.monotonic() >= next_poll:
            next_poll = time.monotonic() + gw_config.poll_interval_s
            try:
                for command in relay.poll_commands():
                    command_queue.put((command["tank_id"], command["action"],
                                       command.get("value")))
            except httpx.HTTPError:
                pass
    thread.join()
    relay.flush()
    result = box[0]
    if args.out:
        result.write_trace(args.out)
    summary = result.metrics.to_dict()
    summary["posted"] = relay.stats.posted
    summary["buffered"] = len(relay.buffer)
    print(json.dumps(summary, indent=None if args.json else 2))
    relay.close()
    return 0 if relay.stats.conserved(len(relay.buffer)) else CHECK_FAILED


def cmd_replay(args) -> int:
    try:
        metrics = replay_file(args.trace)
    except (ReplayError, OSError) as exc:
        print(f"replay error: {exc}", file=sys.stderr)
        return CHECK_FAILED
    print(json.dumps(metrics.to_dict(), indent=None if args.json else 2))
    return 0


def cmd_serve(args) -> int:
    import uvicorn

    try:
        config = ServiceConfig.from_file(args.config)
    except (OSError, KeyError, ValueError) as exc:
        print(f"service config error: {exc}", file=sys.stderr)
        return USAGE_ERROR
    if args.host:
        config.host = args.host
    if args.port:
        config.port = args.port
    app = create_app(config)
    uvicorn.run(app, host=config.host, port=config.port, log_level="info")
    return 0


def cmd_gateway(args) -> int:
    try:
        config = GatewayConfig.from_file(args.config)
    except (OSError, KeyError, ValueError) as exc:
        print(f"gateway config error: {exc}", file=sys.stderr)
        return USAGE_ERROR
    relay = GatewayRelay(config)

    if args.flush_now:
        flushed = relay.flush()
        print(json.dumps({"flushed": flushed, "buffered": len(relay.buffer)}))
        relay.close()
        return 0 if len(relay.buffer) == 0 else CHECK_FAILED

    if args.frames:
        with open(args.frames) as fh:
            for line in fh:
                if not line.strip():
                    continue
                message = json.loads(line)
                outcome = relay.relay(
                    bytes.fromhex(message["frame_hex"]),
                    message.get("rssi_dbm", 0.0),
                    now=message.get("t", time.time()),
                )
                print(json.dumps({"t": message.get("t"), "outcome": outcome.value}))
        print(json.dumps({"posted": relay.stats.posted, "buffered": len(relay.buffer),
                          "rejected": relay.stats.rejected}))
        relay.close()
        return 0

    # command-forwarding loop: poll and print commands until interrupted
    try:
        while True:
            for command in relay.poll_commands_with_backoff():
                print(json.dumps(command), flush=True)
            if args.poll_once:
                break
            time.sleep(config.poll_interval_s)
    except KeyboardInterrupt:
        pass
    relay.close()
    return 0


def cmd_demo(args) -> int:
    scenario_path = args.scenario or str(bundled_path("demo_crash.json"))
    try:
        scenario = load_scenario(scenario_path)
    except ScenarioError as exc:
        print(f"scenario error: {exc}", file=sys.stderr)
        return USAGE_ERROR
    try:
        summary = run_demo(
            scenario,
            pace=args.pace,
            workdir=args.workdir,
            port=args.port,
            force_outage=args.outage,
            dashboard_dir=args.dashboard_dir,
        )
    except (RuntimeError, OSError) as exc:
        print(f"demo startup error: {exc}", file=sys.stderr)
        return USAGE_ERROR
    if args.json:
        print(json.dumps(summary.to_dict()))
    else:
        print(json.dumps(summary.to_dict(), indent=2))
    return 0 if summary.ok else CHECK_FAILED


def cmd_frames(args) -> int:
    if args.action != "dump":
        print("unknown frames action", file=sys.stderr)
        return USAGE_ERROR
    stream = sys.stdin if args.file in (None, "-") else open(args.file)
    try:
        for line in stream:
            line = line.strip()
            if not line:
                continue
            hex_text = json.loads(line).get("frame_hex", "") if line.startswith("{") else line
            try:
                data = bytes.fromhex(hex_text)
            except ValueError:
                print(f"not hex: {line[:40]}", file=sys.stderr)
                return USAGE_ERROR
            print(frames.dump_frame(data))
    finally:
        if stream is not sys.stdin:
            stream.close()
    return 0


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="aquasim", description=__doc__,
                                     formatter_class=argparse.RawDescriptionHelpFormatter)
    sub = parser.add_subparsers(dest="command", required=True)

    p_survey = sub.add_parser("survey", help="classify a range survey CSV")
    p_survey.add_argument("--csv", default=str(bundled_path("table1.csv")),
                          help="survey CSV (default: bundled table1.csv)")
    p_survey.add_argument("--freq-mhz", type=float, default=915.0)
    p_survey.add_argument("--sf", type=int, default=7)
    p_survey.add_argument("--bandwidth-hz", type=int, default=125_000)
    p_survey.add_argument("--tx-power-dbm", type=float, default=17.0)
    p_survey.add_argument("--tx-gain-dbi", type=float, default=3.0)
    p_survey.add_argument("--rx-gain-dbi", type=float, default=3.0)
    p_survey.add_argument("--sensitivity-dbm", type=float, default=-123.0)
    p_survey.add_argument("--site-excess-db", type=float, default=None,
                          help="skip calibration and use this excess loss")
    p_survey.add_argument("--json", action="store_true")
    p_survey.set_defaults(func=cmd_survey)

    p_run = sub.add_parser("run", help="run a scenario")
    p_run.add_argument("--scenario", required=True)
    p_run.add_argument("--seed", type=int, default=None)
    p_run.add_argument("--out", help="write the event trace (NDJSON)")
    p_run.add_argument("--frames-out", help="write delivered wire frames (NDJSON)")
    p_run.add_argument("--live", action="store_true",
                       help="pace against the wall clock and relay to a service")
    p_run.add_argument("--service-url")
    p_run.add_argument("--gateway-config")
    p_run.add_argument("--pace", type=float, default=600.0,
                       help="sim seconds per wall second in live mode")
    p_run.add_argument("--json", action="store_true")
    p_run.set_defaults(func=cmd_run)

    p_replay = sub.add_parser("replay", help="recompute metrics from a trace")
    p_replay.add_argument("--trace", required=True)
    p_replay.add_argument("--json", action="store_true")
    p_replay.set_defaults(func=cmd_replay)

    p_serve = sub.add_parser("serve", help="run the ingestion service")
    p_serve.add_argument("--config", required=True)
    p_serve.add_argument("--host")
    p_serve.add_argument("--port", type=int)
    p_serve.set_defaults(func=cmd_serve)

    p_gw = sub.add_parser("gateway", help="run the gateway relay")
    _gateway_args(p_gw)

    p_demo = sub.add_parser("demo", help="end-to-end live demo")
    p_demo.add_argument("--scenario", help="default: bundled DO-crash scenario")
    p_demo.add_argument("--pace", type=float, default=120.0)
    p_demo.add_argument("--workdir", default=".")
    p_demo.add_argument("--port", type=int, default=None)
    p_demo.add_argument("--outage", action="store_true",
                        help="force the uplink down for the whole run (DTN drill)")
    p_demo.add_argument("--dashboard-dir", default=None)
    p_demo.add_argument("--json", action="store_true")
    p_demo.set_defaults(func=cmd_demo)

    p_frames = sub.add_parser("frames", help="frame tooling")
    p_frames.add_argument("action", choices=["dump"])
    p_frames.add_argument("file", nargs="?", default=None,
                          help="hex lines or frames NDJSON; default stdin")
    p_frames.set_defaults(func=cmd_frames)
    return parser


def _gateway_args(parser: argparse.ArgumentParser) -> None:
    parser.add_argument("--config", required=True, help="gateway config JSON")
    parser.add_argument("--flush-now", action="store_true",
                        help="drain the DTN buffer and exit")
    parser.add_argument("--frames", help="relay frames from an NDJSON file")
    parser.add_argument("--poll-once", action="store_true",
                        help="poll commands one time instead of looping")
    parser.set_defaults(func=cmd_gateway)


def main(argv: Optional[list[str]] = None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    return args.func(args)


def aquagw_main(argv: Optional[list[str]] = None) -> int:
    parser = argparse.ArgumentParser(prog="aquagw",
                                     description="gateway relay for the telemetry service")
    _gateway_args(parser)
    args = parser.parse_args(argv)
    return cmd_gateway(args)


if __name__ == "__main__":
    sys.exit(main())
