"""Synthetic tank environment: water dynamics, anomalies, aeration, loss rule.

The model is the simplest one that reproduces the operational failure mode
we care about: dissolved oxygen that crashes faster than the operator's
reaction window. Temperature rides a diurnal sinusoid; DO relaxes toward a
temperature-dependent equilibrium unless an active crash anomaly dominates
the balance, in which case DO moves at the crash/aeration rates alone.
Production is lost, irrevocably, after 30 minutes of continuous hypoxia.
"""

from __future__ import annotations

import math
import random
from dataclasses import dataclass, field, replace
from enum import Enum
from typing import Optional


class TankKind(str, Enum):
    RAS_GREENHOUSE = "ras_greenhouse"
    EXTERNAL = "external"


class AnomalyKind(str, Enum):
    DO_CRASH = "do_crash"
    HEAT_SPIKE = "heat_spike"


class CommandAction(str, Enum):
    AERATION_ON = "aeration_on"
    AERATION_OFF = "aeration_off"


class CommandError(KeyError):
    pass


@dataclass(frozen=True)
class Tank:
    tank_id: str
    kind: TankKind = TankKind.RAS_GREENHOUSE
    temperature_c: float = 24.0
    dissolved_oxygen_mgl: float = 9.0
    ph: float = 7.8
    aeration_on: bool = False
    production_lost: bool = False
    do_below_since: Optional[float] = None


@dataclass(frozen=True)
class AnomalyEvent:
    at: float
    tank_id: str
    kind: AnomalyKind
    magnitude: float

    def __post_init__(self) -> None:
        if self.magnitude <= 0:
            raise ValueError("anomaly magnitude must be positive")


@dataclass(frozen=True)
class FarmParams:
    """All dynamics constants; scenario files may override any of them."""

    temp_mean_c: float = 24.0
    temp_amplitude_c: float = 4.0
    temp_noise_sigma_c: float = 0.05
    temp_min_c: float = 0.0
    temp_max_c: float = 45.0
    # DO equilibrium line: do_eq(T) = do_eq_at_ref - do_eq_slope * (T - ref)
    do_eq_ref_c: float = 20.0
    do_eq_at_ref_mgl: float = 10.0
    do_eq_slope_mgl_per_c: float = 0.2
    do_relax_rate_per_s: float = 1.0 / 1800.0
    do_min_mgl: float = 0.0
    do_max_mgl: float = 15.0
    aeration_rate_mgl_per_min: float = 0.1
    loss_threshold_mgl: float = 3.0
    loss_window_s: float = 1800.0
    turbidity_ntu: float = 5.0
    ammonia_mgl: float = 0.05

    def do_eq(self, temperature_c: float) -> float:
        return self.do_eq_at_ref_mgl - self.do_eq_slope_mgl_per_c * (
            temperature_c - self.do_eq_ref_c
        )


def diurnal_temperature(params: FarmParams, time_of_day_s: float) -> float:
    return params.temp_mean_c + params.temp_amplitude_c * math.sin(
        2.0 * math.pi * time_of_day_s / 86400.0
    )


def step(
    tank: Tank,
    dt: float,
    time_of_day_s: float,
    params: FarmParams = FarmParams(),
    crash_rate_mgl_per_h: float = 0.0,
    heat_offset_c: float = 0.0,
    rng: Optional[random.Random] = None,
) -> Tank:
    """Advance one tank by dt seconds.

    `crash_rate_mgl_per_h` and `heat_offset_c` are the summed magnitudes of
    the anomalies currently active on this tank. While a DO crash is active
    it overrides the natural relaxation: oxygen moves only at the crash and
    aeration rates, which is what makes an unattended crash race the clock.
    """
    if dt <= 0:
        raise ValueError("dt must be positive")
    noise = rng.gauss(0.0, params.temp_noise_sigma_c) if rng is not None else 0.0
    temperature = diurnal_temperature(params, time_of_day_s) + heat_offset_c + noise
    temperature = min(params.temp_max_c, max(params.temp_min_c, temperature))

    aeration = params.aeration_rate_mgl_per_min / 60.0 if tank.aeration_on else 0.0
    if crash_rate_mgl_per_h > 0.0:
        d_do = aeration - crash_rate_mgl_per_h / 3600.0
    else:
        d_do = params.do_relax_rate_per_s * (
            params.do_eq(temperature) - tank.dissolved_oxygen_mgl
        ) + aeration
    do = tank.dissolved_oxygen_mgl + d_do * dt
    do = min(params.do_max_mgl, max(params.do_min_mgl, do))

    return replace(tank, temperature_c=temperature, dissolved_oxygen_mgl=do)


def check_loss(tank: Tank, now: float, params: FarmParams = FarmParams()) -> Tank:
    """Latch production_lost after loss_window_s of continuous hypoxia."""
    if tank.dissolved_oxygen_mgl < params.loss_threshold_mgl:
        since = tank.do_below_since if tank.do_below_since is not None else now
        lost = tank.production_lost or (now - since) >= params.loss_window_s
        return replace(tank, do_below_since=since, production_lost=lost)
    return replace(tank, do_below_since=None)


def apply_command(tank: Tank, action: CommandAction) -> Tank:
    """Toggle aeration; idempotent per action value."""
    return replace(tank, aeration_on=(action is CommandAction.AERATION_ON))


class FarmModel:
    """All tanks of one scenario plus their anomaly schedule and noise stream."""

    def __init__(
        self,
        tanks: list[Tank],
        anomalies: list[AnomalyEvent] = (),
        params: FarmParams = FarmParams(),
        rng: Optional[random.Random] = None,
    ):
        self.params = params
        self.tanks: dict[str, Tank] = {t.tank_id: t for t in tanks}
        self.rng = rng
        self._anomalies = sorted(anomalies, key=lambda a: a.at)
        for anomaly in self._anomalies:
            if anomaly.tank_id not in self.tanks:
                raise CommandError(f"anomaly targets unknown tank {anomaly.tank_id!r}")

    def active_anomalies(self, tank_id: str, now: float) -> list[AnomalyEvent]:
        # Anomalies stay active from their onset to the end of the run;
        # recovery happens through operator intervention, not expiry.
        return [a for a in self._anomalies if a.tank_id == tank_id and a.at <= now]

    def tick(self, now: float, dt: float) -> list[str]:
        """Advance every tank to `now`; returns tanks that latched a loss this tick."""
        newly_lost = []
        for tank_id, tank in self.tanks.items():
            active = self.active_anomalies(tank_id, now)
            crash = sum(a.magnitude for a in active if a.kind is AnomalyKind.DO_CRASH)
            heat = sum(a.magnitude for a in active if a.kind is AnomalyKind.HEAT_SPIKE)
            was_lost = tank.production_lost
            tank = step(
                tank,
                dt,
                time_of_day_s=now % 86400.0,
                params=self.params,
                crash_rate_mgl_per_h=crash,
                heat_offset_c=heat,
                rng=self.rng,
            )
            tank = check_loss(tank, now, self.params)
            self.tanks[tank_id] = tank
            if tank.production_lost and not was_lost:
                newly_lost.append(tank_id)
        return newly_lost

    def apply_command(self, tank_id: str, action: CommandAction) -> Tank:
        if tank_id not in self.tanks:
            raise CommandError(f"unknown tank {tank_id!r}")
        self.tanks[tank_id] = apply_command(self.tanks[tank_id], action)
        return self.tanks[tank_id]
