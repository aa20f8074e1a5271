"""Node state machine: wake cycles, battery depletion, sampling, scheduling."""

import math
import random
import statistics

import pytest

from aquasim.farm import Tank
from aquasim.frames import SensorKind
from aquasim.lora import DutyCyclePolicy, SurveyPoint
from aquasim.nodes import (
    POWER_PROFILES,
    DutyCycleViolation,
    NodeMode,
    NodeState,
    PowerProfile,
    schedule_next_wake,
)

LOCATION = SurveyPoint("A", 0.043, -108.0)


def make_node(profile="optimized", **kwargs):
    profile = POWER_PROFILES[profile] if isinstance(profile, str) else profile
    defaults = dict(node_id=1, tank_id="t", location=LOCATION, profile=profile)
    defaults.update(kwargs)
    return NodeState(**defaults)


def run_to_death(node, interval_s=600.0, max_cycles=1_000_000):
    """Drive wake cycles until the battery dies; returns (frames, death_time)."""
    tank = Tank("t")
    rng = random.Random(0)
    frames = 0
    now = 0.0
    for _ in range(max_cycles):
        now += interval_s
        frame = node.wake_and_transmit(tank, now, rng)
        if frame is not None:
            frames += 1
        if node.mode is NodeMode.DEAD:
            return frames, node.died_at_s
    raise AssertionError("node never died")


class TestPowerProfiles:
    def test_prototype_average_draw_and_lifetime(self):
        profile = POWER_PROFILES["prototype"]
        assert profile.average_current_a(600.0) * 1000.0 == pytest.approx(37.9, abs=0.01)
        assert profile.lifetime_s(600.0) / 3600.0 == pytest.approx(65.96, abs=0.05)

    def test_optimized_average_draw_and_lifetime(self):
        profile = POWER_PROFILES["optimized"]
        assert profile.sleep_current_a == pytest.approx(10e-6)
        assert profile.average_current_a(600.0) * 1000.0 == pytest.approx(1.01, abs=0.01)
        assert profile.lifetime_s(600.0) / 3600.0 == pytest.approx(990.0, abs=5.0)

    def test_profile_validation(self):
        with pytest.raises(ValueError):
            PowerProfile("x", 0.1, 0.05, 5.0, 100.0)  # sleep above active
        with pytest.raises(ValueError):
            PowerProfile("x", -0.1, 0.05, 5.0, 100.0)


class TestBatteryDepletion:
    def test_prototype_dies_near_66_hours(self):
        node = make_node("prototype")
        frames, died_at = run_to_death(node, 600.0)
        hours = died_at / 3600.0
        assert hours == pytest.approx(66.0, rel=0.10)
        expected_frames = node.profile.lifetime_s(600.0) / 600.0
        assert abs(frames - expected_frames) <= 1.0

    def test_simulated_death_matches_closed_form(self):
        node = make_node("optimized")
        _, died_at = run_to_death(node, 600.0)
        closed_form = node.profile.lifetime_s(600.0)
        assert died_at == pytest.approx(closed_form, rel=0.05)

    def test_battery_strictly_decreasing_until_death(self):
        node = make_node("prototype")
        tank = Tank("t")
        rng = random.Random(0)
        previous = node.battery_mah_remaining
        now = 0.0
        while node.mode is not NodeMode.DEAD:
            now += 600.0
            node.wake_and_transmit(tank, now, rng)
            assert node.battery_mah_remaining < previous
            previous = node.battery_mah_remaining

    def test_dead_is_absorbing(self):
        node = make_node("prototype")
        run_to_death(node, 600.0)
        tank = Tank("t")
        rng = random.Random(0)
        for offset in (1, 2, 3):
            assert node.wake_and_transmit(tank, 1e9 + offset, rng) is None
            assert node.mode is NodeMode.DEAD
            assert node.battery_mah_remaining == 0.0

    def test_battery_voltage_maps_linearly(self):
        node = make_node("optimized")
        assert node.battery_mv() == 4200
        node.battery_mah_remaining = node.profile.battery_capacity_mah / 2.0
        assert node.battery_mv() == pytest.approx(3750, abs=1)
        node.battery_mah_remaining = 0.0
        assert node.battery_mv() == 3300


class TestSequenceNumbers:
    def test_consecutive_modulo_wrap(self):
        node = make_node("optimized", seq_next=65534)
        tank = Tank("t")
        rng = random.Random(0)
        seqs = [node.wake_and_transmit(tank, (i + 1) * 600.0, rng).seq for i in range(4)]
        assert seqs == [65534, 65535, 0, 1]

    def test_frame_count_matches_interval_arithmetic(self):
        node = make_node("optimized")
        tank = Tank("t")
        rng = random.Random(0)
        frames = sum(
            1 for i in range(396)
            if node.wake_and_transmit(tank, (i + 1) * 600.0, rng) is not None
        )
        assert frames == 396


class TestSampling:
    def test_zero_noise_reads_exact_tank_state(self):
        node = make_node("optimized",
                         sensors=(SensorKind.water_temperature_c,
                                  SensorKind.dissolved_oxygen_mgl, SensorKind.ph),
                         noise_sigma={})
        tank = Tank("t", temperature_c=24.0, dissolved_oxygen_mgl=8.5, ph=7.8)
        readings = {r.kind: r.value for r in node.sample_sensors(tank, random.Random(0))}
        assert readings[SensorKind.water_temperature_c] == 24.0
        assert readings[SensorKind.dissolved_oxygen_mgl] == 8.5
        assert readings[SensorKind.ph] == 7.8

    def test_noise_statistics(self):
        node = make_node("optimized", noise_sigma={SensorKind.water_temperature_c: 0.1})
        tank = Tank("t", temperature_c=24.0)
        rng = random.Random(1234)
        samples = [
            node.sample_sensors(tank, rng)[0].value for _ in range(1000)
        ]
        # 3 sigma / sqrt(n) band around the true value, plus a hair of slack
        assert statistics.fmean(samples) == pytest.approx(24.0, abs=3 * 0.1 / math.sqrt(1000) * 1.5)
        assert statistics.stdev(samples) == pytest.approx(0.1, rel=0.15)

    def test_minute_averaging_shrinks_noise(self):
        tank = Tank("t", temperature_c=24.0)
        instant = make_node("optimized", noise_sigma={SensorKind.water_temperature_c: 0.5})
        averaged = make_node("optimized", noise_sigma={SensorKind.water_temperature_c: 0.5},
                             average_sampling=True)
        rng_a, rng_b = random.Random(5), random.Random(5)
        spread_instant = statistics.stdev(
            instant.sample_sensors(tank, rng_a)[0].value for _ in range(300)
        )
        spread_averaged = statistics.stdev(
            averaged.sample_sensors(tank, rng_b)[0].value for _ in range(300)
        )
        assert spread_averaged < spread_instant / 4.0

    def test_default_noise_applies_to_temperature_only(self):
        node = make_node("optimized",
                         sensors=(SensorKind.water_temperature_c, SensorKind.ph))
        tank = Tank("t", temperature_c=24.0, ph=7.8)
        readings = {r.kind: r.value for r in node.sample_sensors(tank, random.Random(2))}
        assert readings[SensorKind.water_temperature_c] != 24.0
        assert readings[SensorKind.ph] == 7.8


class TestScheduling:
    def test_ten_minute_cadence_accepted(self):
        assert schedule_next_wake(0.0, 600.0, DutyCyclePolicy(), 0.0924) == 600.0

    def test_aggressive_interval_rejected(self):
        with pytest.raises(DutyCycleViolation):
            schedule_next_wake(0.0, 5.0, DutyCyclePolicy(), 0.0924)

    def test_full_cap_accepts_anything_at_or_above_airtime(self):
        policy = DutyCyclePolicy(cap_fraction=1.0)
        assert schedule_next_wake(10.0, 0.1, policy, 0.1) == pytest.approx(10.1)
        with pytest.raises(DutyCycleViolation):
            schedule_next_wake(10.0, 0.05, policy, 0.1)
