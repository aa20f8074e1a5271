"""End-to-end demo: service, gateway and a live-paced simulation in one process.

The engine replays the scenario against the wall clock (time compression is
a flag), frames flow through the real gateway relay into the real HTTP
service, and operator commands issued against the service steer the farm.
Exit code 0 means the pipeline conserved every frame and the delivery
statistics stayed inside their configured bounds.
"""

from __future__ import annotations

import json
import math
import queue
import socket
import threading
import time
import uuid
from dataclasses import dataclass
from typing import Optional

import httpx
import uvicorn

from . import frames
from .engine import Delivery, Engine, RunResult
from .gateway import GatewayConfig, GatewayRelay
from .scenario import ScenarioConfig
from .service import ServiceConfig, create_app

DEMO_OPERATOR = ("operator", "operator-demo")
DEMO_GATEWAY = ("gateway", "gateway-demo")


def free_port(host: str = "127.0.0.1") -> int:
    with socket.socket() as sock:
        sock.bind((host, 0))
        return sock.getsockname()[1]


@dataclass
class DemoSummary:
    url: str
    metrics: dict
    posted: int
    buffered: int
    stored_readings: int
    expected_readings: int
    conserved: bool
    loss_ok: bool
    errors: list[str]

    @property
    def ok(self) -> bool:
        return (
            not self.errors
            and self.conserved
            and self.loss_ok
            and self.stored_readings == self.expected_readings
        )

    def to_dict(self) -> dict:
        return {
            "ok": self.ok,
            "url": self.url,
            "metrics": self.metrics,
            "posted": self.posted,
            "buffered": self.buffered,
            "stored_readings": self.stored_readings,
            "expected_readings": self.expected_readings,
            "conserved": self.conserved,
            "loss_ok": self.loss_ok,
            "errors": self.errors,
        }


class ServiceUnderTest:
    """A uvicorn server on a background thread, for demos and integration tests."""

    def __init__(self, config: ServiceConfig):
        self.config = config
        self.app = create_app(config)
        self._server = uvicorn.Server(
            uvicorn.Config(self.app, host=config.host, port=config.port,
                           log_level="error")
        )
        self._thread = threading.Thread(target=self._server.run, daemon=True)

    @property
    def url(self) -> str:
        return f"http://{self.config.host}:{self.config.port}"

    def start(self, timeout_s: float = 10.0) -> None:
        self._thread.start()
        deadline = time.monotonic() + timeout_s
        while not self._server.started:
            if time.monotonic() > deadline or not self._thread.is_alive():
                raise RuntimeError("service failed to start")
            time.sleep(0.02)

    def stop(self) -> None:
        self._server.should_exit = True
        self._thread.join(timeout=10.0)


def loss_within_band(sent: int, received: int, loss_probability: float) -> bool:
    """Delivered count inside the 3-sigma binomial band around the expectation."""
    if sent == 0:
        return received == 0
    mean = sent * (1.0 - loss_probability)
    sigma = math.sqrt(sent * loss_probability * (1.0 - loss_probability))
    return abs(received - mean) <= 3.0 * sigma


def run_demo(
    scenario: ScenarioConfig,
    pace: float = 600.0,
    workdir: str = ".",
    host: str = "127.0.0.1",
    port: Optional[int] = None,
    force_outage: bool = False,
    dashboard_dir: Optional[str] = None,
    on_ready=None,
    quiet: bool = False,
) -> DemoSummary:
    port = port if port is not None else free_port(host)
    service_config = ServiceConfig(
        secret=uuid.uuid4().hex,
        users=[
            ServiceConfig.make_user(*DEMO_OPERATOR, role="operator"),
            ServiceConfig.make_user(*DEMO_GATEWAY, role="gateway"),
        ],
        store_path=f"{workdir}/telemetry.sqlite",
        node_tanks={n.node_id: n.tank_id for n in scenario.nodes},
        dashboard_dir=dashboard_dir,
        host=host,
        port=port,
    )
    service = ServiceUnderTest(service_config)
    service.start()

    gateway_config = GatewayConfig(
        service_url=service.url,
        username=DEMO_GATEWAY[0],
        password=DEMO_GATEWAY[1],
        gateway_id="gw-demo",
        poll_interval_s=0.5,
        buffer_path=f"{workdir}/dtn-buffer.ndjson",
    )
    relay = GatewayRelay(gateway_config)

    outbound: "queue.Queue[Optional[Delivery]]" = queue.Queue()
    command_queue: "queue.Queue[tuple[str, str, Optional[float]]]" = queue.Queue()
    errors: list[str] = []
    engine = Engine(scenario)
    result_box: list[RunResult] = []

    def log(message: str) -> None:
        if not quiet:
            print(message, flush=True)

    def engine_main() -> None:
        try:
            result_box.append(
                engine.run(pace=pace, outbound=outbound,
                           command_queue=command_queue, on_event=_event_logger)
            )
        except Exception as exc:  # supervised: demo fails if any activity fails
            errors.append(f"engine: {exc!r}")
            outbound.put(None)

    def _event_logger(record: dict) -> None:
        if record["kind"] in ("anomaly", "command", "command_rejected",
                              "production_lost", "node_dead"):
            log(f"[sim t={record['t']:.0f}s] {record['kind']}: "
                + json.dumps({k: v for k, v in record.items() if k not in ('kind', 't')}))

    def gateway_main() -> None:
        next_poll = time.monotonic()
        try:
            while True:
                try:
                    message = outbound.get(timeout=0.05)
                except queue.Empty:
                    message = None
                    if not engine_thread.is_alive() and outbound.empty():
                        break
                else:
                    if message is None:
                        break
                    uplink_up = (not force_outage) and scenario.gateway.uplink_up(message.t)
                    relay.relay(message.frame_bytes, message.rssi_dbm,
                                now=scenario.epoch_start_s + message.t,
                                uplink_up=uplink_up)
                if time.monotonic() >= next_poll:
                    next_poll = time.monotonic() + gateway_config.poll_interval_s
                    try:
                        for command in relay.poll_commands():
                            command_queue.put((command["tank_id"], command["action"],
                                               command.get("value")))
                    except httpx.HTTPError as exc:
                        log(f"[gateway] command poll failed: {exc!r}")
            relay.flush()
        except Exception as exc:
            errors.append(f"gateway: {exc!r}")

    engine_thread = threading.Thread(target=engine_main, daemon=True)
    gateway_thread = threading.Thread(target=gateway_main, daemon=True)

    log(f"DEMO-READY url={service.url} operator={DEMO_OPERATOR[0]}:{DEMO_OPERATOR[1]} "
        f"gateway={DEMO_GATEWAY[0]}:{DEMO_GATEWAY[1]} pace={pace}x")
    if dashboard_dir:
        log(f"dashboard: {service.url}/dashboard/")
    if on_ready is not None:
        on_ready(service.url)

    engine_thread.start()
    gateway_thread.start()
    engine_thread.join()
    gateway_thread.join()

    metrics = result_box[0].metrics if result_box else None
    expected_readings = sum(
        len(frames.decode(d.frame_bytes).readings) for d in result_box[0].deliveries
    ) if result_box else 0

    stored = 0
    try:
        with httpx.Client(base_url=service.url, timeout=10.0) as client:
            token = client.post(
                "/api/v1/auth/login",
                json={"username": DEMO_OPERATOR[0], "password": DEMO_OPERATOR[1]},
            ).json()["token"]
            response = client.get(
                "/api/v1/readings",
                params={"pattern": ".*", "limit": 100_000},
                headers={"Authorization": f"Bearer {token}"},
            )
            stored = response.json()["count"]
    except Exception as exc:
        errors.append(f"final query: {exc!r}")
    finally:
        service.stop()
        relay.close()

    summary = DemoSummary(
        url=service.url,
        metrics=metrics.to_dict() if metrics else {},
        posted=relay.stats.posted,
        buffered=len(relay.buffer),
        stored_readings=stored,
        expected_readings=expected_readings,
        conserved=relay.stats.conserved(len(relay.buffer)) and (metrics.conserved if metrics else False),
        loss_ok=loss_within_band(
            metrics.frames_sent, metrics.frames_received, scenario.loss_probability
        ) if metrics else False,
        errors=errors,
    )
    return summary
