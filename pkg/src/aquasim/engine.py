"""Deterministic discrete-event engine binding tanks, nodes, radio and gateway.

Events are processed in (time, insertion sequence) order, every random draw
comes from a stream derived from the scenario seed, and everything observable
lands in a newline-delimited JSON trace, so two runs of the same scenario and
command timeline are byte-identical. Live mode paces the same loop against
the wall clock and exchanges frames/commands over two thread-safe queues.
"""

from __future__ import annotations

import hashlib
import heapq
import json
import queue
import random
import time
from dataclasses import dataclass, field
from typing import Callable, Iterable, Optional

from . import frames
from .farm import CommandAction, CommandError, FarmModel
from .lora import airtime_s, predict_rssi
from .nodes import NodeState, schedule_next_wake
from .scenario import NodePlacement, ScenarioConfig

SEQ_MODULUS = 1 << 16


class ReplayError(ValueError):
    pass


@dataclass
class NodeMetrics:
    sent: int = 0
    received: int = 0
    first_rx_seq: Optional[int] = None
    last_rx_seq: Optional[int] = None
    lifetime_s: Optional[float] = None

    @property
    def seq_gap_loss_rate(self) -> Optional[float]:
        """Receiver-side loss estimate from sequence-number gaps.

        Exact between the first and last received frame of one wrap period;
        frames lost after the final delivery are invisible to the receiver.
        """
        if self.first_rx_seq is None:
            return None
        expected = (self.last_rx_seq - self.first_rx_seq) % SEQ_MODULUS + 1
        return (expected - self.received) / expected

    def observe_rx(self, seq: int) -> None:
        if self.first_rx_seq is None:
            self.first_rx_seq = seq
        self.last_rx_seq = seq
        self.received += 1


@dataclass
class RunMetrics:
    frames_sent: int = 0
    frames_received: int = 0
    frames_lost_rssi: int = 0
    frames_lost_random: int = 0
    per_node: dict[int, NodeMetrics] = field(default_factory=dict)
    production_lost: dict[str, bool] = field(default_factory=dict)

    def node(self, node_id: int) -> NodeMetrics:
        return self.per_node.setdefault(node_id, NodeMetrics())

    @property
    def conserved(self) -> bool:
        return self.frames_sent == (
            self.frames_received + self.frames_lost_rssi + self.frames_lost_random
        )

    def to_dict(self) -> dict:
        return {
            "frames_sent": self.frames_sent,
            "frames_received": self.frames_received,
            "frames_lost_rssi": self.frames_lost_rssi,
            "frames_lost_random": self.frames_lost_random,
            "per_node": {
                str(node_id): {
                    "sent": m.sent,
                    "received": m.received,
                    "seq_gap_loss_rate": m.seq_gap_loss_rate,
                    "lifetime_s": m.lifetime_s,
                }
                for node_id, m in sorted(self.per_node.items())
            },
            "production_lost": dict(sorted(self.production_lost.items())),
        }


@dataclass(frozen=True)
class Delivery:
    """One frame that cleared the radio path, as handed to the gateway."""

    t: float
    frame_bytes: bytes
    rssi_dbm: float

    def to_dict(self) -> dict:
        return {"t": self.t, "frame_hex": self.frame_bytes.hex(), "rssi_dbm": self.rssi_dbm}


@dataclass
class RunResult:
    metrics: RunMetrics
    trace: list[str]
    deliveries: list[Delivery]

    def trace_hash(self) -> str:
        digest = hashlib.sha256()
        for line in self.trace:
            digest.update(line.encode())
            digest.update(b"\n")
        return digest.hexdigest()

    def write_trace(self, path: str) -> None:
        with open(path, "w") as fh:
            for line in self.trace:
                fh.write(line + "\n")


def _jline(record: dict) -> str:
    return json.dumps(record, sort_keys=True, separators=(",", ":"))


class Engine:
    """Single-threaded event loop owning all simulation state."""

    def __init__(self, scenario: ScenarioConfig):
        self.scenario = scenario
        self._rng_loss = random.Random(f"{scenario.seed}:loss")
        self._rng_farm = random.Random(f"{scenario.seed}:farm")
        self.farm = FarmModel(
            tanks=list(scenario.tanks),
            anomalies=list(scenario.anomalies),
            params=scenario.farm_params,
            rng=self._rng_farm,
        )
        self.nodes: dict[int, NodeState] = {}
        self.intervals: dict[int, float] = {}
        self._node_rngs: dict[int, random.Random] = {}
        for placement in scenario.nodes:
            self.nodes[placement.node_id] = self._make_node(placement)
            self.intervals[placement.node_id] = placement.interval_s
            self._node_rngs[placement.node_id] = random.Random(
                f"{scenario.seed}:node:{placement.node_id}"
            )
        self._validate_duty_cycle()

    def _make_node(self, p: NodePlacement) -> NodeState:
        kwargs = {}
        if p.noise_sigma:
            kwargs["noise_sigma"] = dict(p.noise_sigma)
        return NodeState(
            node_id=p.node_id,
            tank_id=p.tank_id,
            location=self.scenario.survey_point(p.survey_label),
            profile=p.profile,
            sensors=p.sensors,
            average_sampling=p.average_sampling,
            **kwargs,
        )

    def _frame_airtime(self, node: NodeState) -> float:
        return airtime_s(self.scenario.radio, frames.wire_length(len(node.sensors)))

    def _validate_duty_cycle(self) -> None:
        for node_id, node in self.nodes.items():
            schedule_next_wake(
                0.0, self.intervals[node_id], self.scenario.duty_cycle,
                self._frame_airtime(node),
            )

    # -- the loop -----------------------------------------------------------

    def run(
        self,
        commands: Iterable[tuple[float, str, str]] = (),
        pace: Optional[float] = None,
        outbound: Optional["queue.Queue[Optional[Delivery]]"] = None,
        command_queue: Optional["queue.Queue[tuple[str, str, Optional[float]]]"] = None,
        on_event: Optional[Callable[[dict], None]] = None,
    ) -> RunResult:
        """Run to scenario.duration_s.

        commands: pre-scheduled (t, tank_id, action) triples, part of the
        deterministic timeline. pace: sim seconds per wall second; None runs
        flat out. outbound/command_queue: live-mode boundary queues; inbound
        commands are applied at the current sim time as they arrive.
        """
        scenario = self.scenario
        metrics = RunMetrics()
        trace: list[str] = []
        deliveries: list[Delivery] = []

        def emit(record: dict) -> None:
            trace.append(_jline(record))
            if on_event is not None:
                on_event(record)

        heap: list[tuple[float, int, tuple]] = []
        counter = 0

        def push(t: float, item: tuple) -> None:
            nonlocal counter
            heapq.heappush(heap, (t, counter, item))
            counter += 1

        emit({"kind": "run_start", "t": 0.0, "seed": scenario.seed,
              "duration_s": scenario.duration_s,
              "nodes": sorted(self.nodes),
              "tanks": sorted(self.farm.tanks)})

        push(scenario.farm_tick_s, ("tick",))
        for anomaly in scenario.anomalies:
            push(anomaly.at, ("anomaly", anomaly))
        for node_id in self.nodes:
            push(self.intervals[node_id], ("wake", node_id))
        for t, tank_id, action in sorted(commands, key=lambda c: c[0]):
            push(t, ("command", tank_id, action, None))

        now = 0.0
        wall_anchor = time.monotonic()

        def drain_commands() -> None:
            if command_queue is None:
                return
            while True:
                try:
                    tank_id, action, value = command_queue.get_nowait()
                except queue.Empty:
                    return
                self._apply_command(now, tank_id, action, value, metrics, emit)

        while heap and heap[0][0] <= scenario.duration_s:
            t, _, item = heapq.heappop(heap)
            if pace is not None:
                lag = wall_anchor + t / pace - time.monotonic()
                while lag > 0:
                    time.sleep(min(lag, 0.05))
                    drain_commands()
                    lag = wall_anchor + t / pace - time.monotonic()
            now = t
            drain_commands()

            kind = item[0]
            if kind == "tick":
                for tank_id in self.farm.tick(now, scenario.farm_tick_s):
                    emit({"kind": "production_lost", "t": now, "tank_id": tank_id})
                push(now + scenario.farm_tick_s, ("tick",))
            elif kind == "anomaly":
                anomaly = item[1]
                emit({"kind": "anomaly", "t": now, "tank_id": anomaly.tank_id,
                      "anomaly": anomaly.kind.value, "magnitude": anomaly.magnitude})
            elif kind == "command":
                _, tank_id, action, value = item
                self._apply_command(now, tank_id, action, value, metrics, emit)
            elif kind == "wake":
                node_id = item[1]
                self._wake(node_id, now, metrics, deliveries, outbound, emit)
                node = self.nodes[node_id]
                if node.died_at_s is None:
                    push(
                        schedule_next_wake(now, self.intervals[node_id],
                                           scenario.duty_cycle, self._frame_airtime(node)),
                        ("wake", node_id),
                    )

        for node_id, node in self.nodes.items():
            metrics.node(node_id).lifetime_s = node.died_at_s
        for tank_id, tank in self.farm.tanks.items():
            metrics.production_lost[tank_id] = tank.production_lost
        emit({"kind": "run_end", "t": scenario.duration_s})

        if outbound is not None:
            outbound.put(None)  # end-of-run sentinel
        assert metrics.conserved
        return RunResult(metrics=metrics, trace=trace, deliveries=deliveries)

    def _wake(self, node_id, now, metrics, deliveries, outbound, emit) -> None:
        node = self.nodes[node_id]
        tank = self.farm.tanks[node.tank_id]
        frame = node.wake_and_transmit(
            tank, now, self._node_rngs[node_id], self.scenario.farm_params
        )
        if frame is None:
            if node.died_at_s is not None:
                emit({"kind": "node_dead", "t": now, "node_id": node_id,
                      "died_at": node.died_at_s})
            return

        # stamp wall-epoch timestamps without disturbing sim time
        frame = frames.SensorFrame(
            node_id=frame.node_id,
            seq=frame.seq,
            timestamp_s=self.scenario.epoch_start_s + frame.timestamp_s,
            readings=frame.readings,
            battery_mv=frame.battery_mv,
        )
        metrics.frames_sent += 1
        metrics.node(node_id).sent += 1
        rssi = predict_rssi(self.scenario.radio, self.scenario.site, node.location)
        if rssi < self.scenario.radio.rx_sensitivity_dbm:
            outcome = "lost_rssi"
            metrics.frames_lost_rssi += 1
        elif self._rng_loss.random() < self.scenario.loss_probability:
            outcome = "lost_random"
            metrics.frames_lost_random += 1
        else:
            outcome = "delivered"
            metrics.frames_received += 1
            metrics.node(node_id).observe_rx(frame.seq)
            delivery = Delivery(t=now, frame_bytes=frames.encode(frame), rssi_dbm=rssi)
            deliveries.append(delivery)
            if outbound is not None:
                outbound.put(delivery)
        emit({"kind": "tx", "t": now, "node_id": node_id, "seq": frame.seq,
              "rssi_dbm": rssi, "outcome": outcome})

    def _apply_command(self, now, tank_id, action, value, metrics, emit) -> None:
        try:
            if action in (CommandAction.AERATION_ON.value, CommandAction.AERATION_OFF.value):
                self.farm.apply_command(tank_id, CommandAction(action))
            elif action == "set_interval_s":
                self._set_interval(tank_id, float(value))
            else:
                raise CommandError(f"unknown action {action!r}")
        except (CommandError, ValueError, TypeError) as exc:
            emit({"kind": "command_rejected", "t": now, "tank_id": tank_id,
                  "action": action, "reason": str(exc)})
            return
        emit({"kind": "command", "t": now, "tank_id": tank_id, "action": action,
              **({"value": value} if value is not None else {})})

    def _set_interval(self, tank_id: str, interval_s: float) -> None:
        hit = False
        for node_id, node in self.nodes.items():
            if node.tank_id != tank_id:
                continue
            # raises DutyCycleViolation if too aggressive
            schedule_next_wake(0.0, interval_s, self.scenario.duty_cycle,
                               self._frame_airtime(node))
            self.intervals[node_id] = interval_s
            hit = True
        if not hit:
            raise CommandError(f"no nodes on tank {tank_id!r}")


def run_scenario(scenario: ScenarioConfig, **kwargs) -> RunResult:
    return Engine(scenario).run(**kwargs)


def replay(lines: Iterable[str]) -> RunMetrics:
    """Recompute RunMetrics from a trace alone; rejects incomplete traces."""
    metrics = RunMetrics()
    started = ended = False
    deaths: dict[int, float] = {}
    for i, line in enumerate(lines):
        line = line.strip()
        if not line:
            continue
        if ended:
            raise ReplayError(f"line {i + 1}: records after run_end")
        try:
            record = json.loads(line)
        except json.JSONDecodeError as exc:
            raise ReplayError(f"line {i + 1}: {exc}") from exc
        kind = record.get("kind")
        if not started and kind != "run_start":
            raise ReplayError("trace does not begin with run_start")
        try:
            if kind == "run_start":
                started = True
                for node_id in record.get("nodes", []):
                    metrics.node(node_id)
                for tank_id in record.get("tanks", []):
                    metrics.production_lost.setdefault(tank_id, False)
            elif kind == "run_end":
                ended = True
            elif kind == "tx":
                node = metrics.node(record["node_id"])
                node.sent += 1
                metrics.frames_sent += 1
                outcome = record["outcome"]
                if outcome == "delivered":
                    metrics.frames_received += 1
                    node.observe_rx(record["seq"])
                elif outcome == "lost_rssi":
                    metrics.frames_lost_rssi += 1
                elif outcome == "lost_random":
                    metrics.frames_lost_random += 1
                else:
                    raise ReplayError(f"line {i + 1}: unknown outcome {outcome!r}")
            elif kind == "node_dead":
                deaths[record["node_id"]] = record["died_at"]
            elif kind == "production_lost":
                metrics.production_lost[record["tank_id"]] = True
            elif kind in ("anomaly", "command", "command_rejected"):
                pass
            else:
                raise ReplayError(f"line {i + 1}: unknown record kind {kind!r}")
        except KeyError as exc:
            raise ReplayError(f"line {i + 1}: missing field {exc}") from exc
    if not started or not ended:
        raise ReplayError("trace is truncated (missing run_start/run_end)")
    for node_id, died_at in deaths.items():
        metrics.node(node_id).lifetime_s = died_at
    return metrics


def replay_file(path: str) -> RunMetrics:
    with open(path) as fh:
        return replay(fh)
