"""Sensor-node state machine: deep sleep, wake/sample/transmit, battery depletion.

The battery is a plain coulomb counter. Two profiles ship as defaults:

  * "prototype"  -- the firmware never reaches true deep sleep; averages
                    37.9 mA at a 10-minute cadence, so a 2500 mAh pack dies
                    just short of 66 hours.
  * "optimized"  -- honest 10 uA deep sleep with 5 s wake bursts; the same
                    cadence stretches a 1000 mAh pack to roughly 990 hours.

The two exist side by side because the measured lifetime and the deep-sleep
current of the reference hardware imply very different energy budgets;
modeling both keeps that tension visible and testable.
"""

from __future__ import annotations

import random
from dataclasses import dataclass, field
from enum import Enum
from typing import Optional

from .farm import FarmParams, Tank
from .frames import Reading, SensorFrame, SensorKind
from .lora import DutyCyclePolicy, LinkError, SurveyPoint, min_interval_s

SEQ_MODULUS = 1 << 16

BATTERY_FULL_V = 4.2
BATTERY_EMPTY_V = 3.3

DEFAULT_NOISE_SIGMA = {SensorKind.water_temperature_c: 0.1}


class DutyCycleViolation(LinkError):
    """Requested send interval would exceed the regulatory duty-cycle cap."""


@dataclass(frozen=True)
class PowerProfile:
    name: str
    sleep_current_a: float
    active_current_a: float
    wake_duration_s: float
    battery_capacity_mah: float

    def __post_init__(self) -> None:
        for attr in ("sleep_current_a", "active_current_a", "wake_duration_s",
                     "battery_capacity_mah"):
            if getattr(self, attr) <= 0:
                raise ValueError(f"{attr} must be positive")
        if self.sleep_current_a >= self.active_current_a:
            raise ValueError("sleep current must be below active current")

    def average_current_a(self, interval_s: float) -> float:
        """Cycle-average draw at a fixed wake interval."""
        sleep_s = max(0.0, interval_s - self.wake_duration_s)
        return (
            self.sleep_current_a * sleep_s + self.active_current_a * self.wake_duration_s
        ) / interval_s

    def lifetime_s(self, interval_s: float) -> float:
        """Closed-form coulomb-count lifetime at a fixed wake interval."""
        return self.battery_capacity_mah / (self.average_current_a(interval_s) * 1000.0) * 3600.0


POWER_PROFILES = {
    "prototype": PowerProfile(
        name="prototype",
        sleep_current_a=0.037,
        active_current_a=0.145,
        wake_duration_s=5.0,
        battery_capacity_mah=2500.0,
    ),
    "optimized": PowerProfile(
        name="optimized",
        sleep_current_a=10e-6,
        active_current_a=0.120,
        wake_duration_s=5.0,
        battery_capacity_mah=1000.0,
    ),
}


class NodeMode(str, Enum):
    DEEP_SLEEP = "deep_sleep"
    ACTIVE = "active"
    DEAD = "dead"


def _mah(current_a: float, duration_s: float) -> float:
    return current_a * 1000.0 * duration_s / 3600.0


@dataclass
class NodeState:
    node_id: int
    tank_id: str
    location: SurveyPoint
    profile: PowerProfile
    sensors: tuple[SensorKind, ...] = (SensorKind.water_temperature_c,)
    noise_sigma: dict[SensorKind, float] = field(
        default_factory=lambda: dict(DEFAULT_NOISE_SIGMA)
    )
    average_sampling: bool = False  # emulate 1 Hz sampling averaged over a minute
    mode: NodeMode = NodeMode.DEEP_SLEEP
    seq_next: int = 0
    battery_mah_remaining: float = 0.0
    asleep_since_s: float = 0.0
    died_at_s: Optional[float] = None

    def __post_init__(self) -> None:
        if self.battery_mah_remaining == 0.0:
            self.battery_mah_remaining = self.profile.battery_capacity_mah
        if not self.sensors:
            raise ValueError("node must sample at least one sensor")

    @property
    def battery_fraction(self) -> float:
        return max(0.0, self.battery_mah_remaining / self.profile.battery_capacity_mah)

    def battery_mv(self) -> int:
        """Pack voltage falls linearly from full to empty with remaining charge."""
        volts = BATTERY_EMPTY_V + (BATTERY_FULL_V - BATTERY_EMPTY_V) * self.battery_fraction
        return int(round(volts * 1000.0))

    def _die(self, at_s: float) -> None:
        self.mode = NodeMode.DEAD
        self.battery_mah_remaining = 0.0
        self.died_at_s = at_s

    def sample_sensors(self, tank: Tank, rng: random.Random,
                       params: FarmParams = FarmParams()) -> tuple[Reading, ...]:
        """Instantaneous tank values plus per-sensor Gaussian noise."""
        truth = {
            SensorKind.water_temperature_c: tank.temperature_c,
            SensorKind.dissolved_oxygen_mgl: tank.dissolved_oxygen_mgl,
            SensorKind.ph: tank.ph,
            SensorKind.turbidity_ntu: params.turbidity_ntu,
            SensorKind.ammonia_mgl: params.ammonia_mgl,
        }
        readings = []
        for kind in self.sensors:
            sigma = self.noise_sigma.get(kind, 0.0)
            if sigma > 0.0:
                if self.average_sampling:
                    # mean of 60 one-second samples of a (locally) constant value
                    noise = sum(rng.gauss(0.0, sigma) for _ in range(60)) / 60.0
                else:
                    noise = rng.gauss(0.0, sigma)
            else:
                noise = 0.0
            readings.append(Reading(kind=kind, value=truth[kind] + noise))
        return tuple(readings)

    def wake_and_transmit(
        self,
        tank: Tank,
        now: float,
        rng: random.Random,
        params: FarmParams = FarmParams(),
    ) -> Optional[SensorFrame]:
        """One deep-sleep -> sample -> transmit cycle.

        Deducts the sleep charge accumulated since the previous wake and the
        active-burst charge for this cycle. Returns None (and goes dead,
        permanently) when the battery runs out mid-cycle; death is a state,
        not an error. `died_at_s` interpolates the instant the pack emptied.
        """
        if self.mode is NodeMode.DEAD:
            return None

        slept_s = max(0.0, now - self.asleep_since_s)
        sleep_draw = _mah(self.profile.sleep_current_a, slept_s)
        if sleep_draw >= self.battery_mah_remaining:
            hours_left = self.battery_mah_remaining / (self.profile.sleep_current_a * 1000.0)
            self._die(at_s=self.asleep_since_s + hours_left * 3600.0)
            return None
        self.battery_mah_remaining -= sleep_draw
        self.asleep_since_s = now + self.profile.wake_duration_s

        self.mode = NodeMode.ACTIVE
        active_draw = _mah(self.profile.active_current_a, self.profile.wake_duration_s)
        if active_draw >= self.battery_mah_remaining:
            hours_left = self.battery_mah_remaining / (self.profile.active_current_a * 1000.0)
            self._die(at_s=now + hours_left * 3600.0)
            return None
        readings = self.sample_sensors(tank, rng, params)
        self.battery_mah_remaining -= active_draw

        frame = SensorFrame(
            node_id=self.node_id,
            seq=self.seq_next,
            timestamp_s=int(now),
            readings=readings,
            battery_mv=self.battery_mv(),
        )
        self.seq_next = (self.seq_next + 1) % SEQ_MODULUS
        self.mode = NodeMode.DEEP_SLEEP
        return frame


def schedule_next_wake(
    now: float, interval_s: float, policy: DutyCyclePolicy, airtime: float
) -> float:
    """Next wake time; rejects intervals that would bust the duty-cycle cap."""
    floor = min_interval_s(airtime, policy)
    if interval_s < floor:
        raise DutyCycleViolation(
            f"interval {interval_s:.3f} s below duty-cycle minimum {floor:.3f} s"
        )
    return now + interval_s
