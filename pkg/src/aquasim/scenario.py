"""Scenario files: a declarative JSON description of one simulated deployment.

The loader validates eagerly and reports the path of the offending field
(e.g. ``nodes[1].interval_s``) so a bad scenario fails before the run starts.
"""

from __future__ import annotations

import dataclasses
import json
from dataclasses import dataclass, field
from typing import Any, Optional

from .farm import AnomalyEvent, AnomalyKind, FarmParams, Tank, TankKind
from .frames import SensorKind
from .lora import (
    DutyCyclePolicy,
    LinkError,
    Obstruction,
    RadioConfig,
    SiteModel,
    SurveyPoint,
    fit_site_excess,
)
from .nodes import POWER_PROFILES, PowerProfile


class ScenarioError(ValueError):
    """Malformed scenario; message starts with the offending field path."""


@dataclass(frozen=True)
class NodePlacement:
    node_id: int
    tank_id: str
    survey_label: str
    profile: PowerProfile
    interval_s: float
    sensors: tuple[SensorKind, ...] = (SensorKind.water_temperature_c,)
    noise_sigma: dict[SensorKind, float] = field(default_factory=dict)
    average_sampling: bool = False


@dataclass(frozen=True)
class GatewaySetup:
    survey_label: Optional[str] = None
    # [start_s, end_s) sim-time windows during which the uplink is down
    scheduled_outages: tuple[tuple[float, float], ...] = ()

    def uplink_up(self, t: float) -> bool:
        return not any(start <= t < end for start, end in self.scheduled_outages)


@dataclass(frozen=True)
class ScenarioConfig:
    seed: int
    duration_s: float
    radio: RadioConfig
    site: SiteModel
    survey_points: tuple[SurveyPoint, ...]
    tanks: tuple[Tank, ...]
    nodes: tuple[NodePlacement, ...]
    anomalies: tuple[AnomalyEvent, ...] = ()
    loss_probability: float = 0.0
    gateway: GatewaySetup = GatewaySetup()
    duty_cycle: DutyCyclePolicy = DutyCyclePolicy()
    farm_params: FarmParams = FarmParams()
    epoch_start_s: int = 0
    farm_tick_s: float = 60.0

    def survey_point(self, label: str) -> SurveyPoint:
        for p in self.survey_points:
            if p.label == label:
                return p
        raise ScenarioError(f"unknown survey label {label!r}")


def _expect(cond: bool, path: str, message: str) -> None:
    if not cond:
        raise ScenarioError(f"{path}: {message}")


def _get(obj: dict, key: str, path: str, required: bool = True, default: Any = None) -> Any:
    if key not in obj:
        _expect(not required, f"{path}.{key}" if path else key, "missing required field")
        return default
    return obj[key]


def _number(value: Any, path: str) -> float:
    _expect(isinstance(value, (int, float)) and not isinstance(value, bool), path,
            f"expected a number, got {type(value).__name__}")
    return float(value)


def _integer(value: Any, path: str) -> int:
    _expect(isinstance(value, int) and not isinstance(value, bool), path,
            f"expected an integer, got {type(value).__name__}")
    return value


def _string(value: Any, path: str) -> str:
    _expect(isinstance(value, str), path, f"expected a string, got {type(value).__name__}")
    return value


def _obj(value: Any, path: str) -> dict:
    _expect(isinstance(value, dict), path, f"expected an object, got {type(value).__name__}")
    return value


def _array(value: Any, path: str) -> list:
    _expect(isinstance(value, list), path, f"expected an array, got {type(value).__name__}")
    return value


def _radio(data: dict, path: str) -> RadioConfig:
    kwargs: dict[str, Any] = {}
    for name, caster in (
        ("frequency_mhz", _number),
        ("spreading_factor", _integer),
        ("bandwidth_hz", _integer),
        ("coding_rate_denominator", _integer),
        ("preamble_symbols", _integer),
        ("tx_power_dbm", _number),
        ("tx_antenna_gain_dbi", _number),
        ("rx_antenna_gain_dbi", _number),
        ("rx_sensitivity_dbm", _number),
    ):
        if name in data:
            kwargs[name] = caster(data[name], f"{path}.{name}")
    _expect("frequency_mhz" in kwargs, f"{path}.frequency_mhz", "missing required field")
    _expect("spreading_factor" in kwargs, f"{path}.spreading_factor", "missing required field")
    try:
        return RadioConfig(**kwargs)
    except LinkError as exc:
        raise ScenarioError(f"{path}: {exc}") from exc


def _survey_point(data: dict, path: str) -> SurveyPoint:
    label = _string(_get(data, "label", path), f"{path}.label")
    distance = _number(_get(data, "distance_km", path), f"{path}.distance_km")
    rssi = data.get("rssi_dbm")
    if rssi is not None:
        rssi = _number(rssi, f"{path}.rssi_dbm")
    obstruction = _string(data.get("obstruction", "none"), f"{path}.obstruction")
    try:
        return SurveyPoint(
            label=label,
            distance_km=distance,
            measured_rssi_dbm=rssi,
            obstruction=Obstruction(obstruction),
        )
    except (LinkError, ValueError) as exc:
        raise ScenarioError(f"{path}: {exc}") from exc


def _site(data: dict, points: list[SurveyPoint], radio: RadioConfig, path: str) -> SiteModel:
    losses = dict(SiteModel().obstruction_loss_db)
    for key, value in _obj(data.get("obstruction_loss_db", {}), f"{path}.obstruction_loss_db").items():
        try:
            losses[Obstruction(key)] = _number(value, f"{path}.obstruction_loss_db.{key}")
        except ValueError as exc:
            raise ScenarioError(f"{path}.obstruction_loss_db.{key}: {exc}") from exc
    excess = data.get("site_excess_db")
    if excess is None:
        try:
            excess = fit_site_excess(radio, points)
        except LinkError as exc:
            raise ScenarioError(f"{path}.site_excess_db: not given and {exc}") from exc
    else:
        excess = _number(excess, f"{path}.site_excess_db")
    try:
        return SiteModel(site_excess_db=excess, obstruction_loss_db=losses)
    except LinkError as exc:
        raise ScenarioError(f"{path}: {exc}") from exc


def _tank(data: dict, path: str) -> Tank:
    try:
        return Tank(
            tank_id=_string(_get(data, "tank_id", path), f"{path}.tank_id"),
            kind=TankKind(_string(data.get("kind", "ras_greenhouse"), f"{path}.kind")),
            temperature_c=_number(data.get("temperature_c", 24.0), f"{path}.temperature_c"),
            dissolved_oxygen_mgl=_number(
                data.get("dissolved_oxygen_mgl", 9.0), f"{path}.dissolved_oxygen_mgl"
            ),
            ph=_number(data.get("ph", 7.8), f"{path}.ph"),
            aeration_on=bool(data.get("aeration_on", False)),
        )
    except ValueError as exc:
        raise ScenarioError(f"{path}: {exc}") from exc


def _profile(data: Any, path: str) -> PowerProfile:
    if isinstance(data, str):
        _expect(data in POWER_PROFILES, path,
                f"unknown profile {data!r}; known: {sorted(POWER_PROFILES)}")
        return POWER_PROFILES[data]
    data = _obj(data, path)
    try:
        return PowerProfile(
            name=_string(data.get("name", "custom"), f"{path}.name"),
            sleep_current_a=_number(_get(data, "sleep_current_a", path), f"{path}.sleep_current_a"),
            active_current_a=_number(
                _get(data, "active_current_a", path), f"{path}.active_current_a"
            ),
            wake_duration_s=_number(_get(data, "wake_duration_s", path), f"{path}.wake_duration_s"),
            battery_capacity_mah=_number(
                _get(data, "battery_capacity_mah", path), f"{path}.battery_capacity_mah"
            ),
        )
    except ValueError as exc:
        raise ScenarioError(f"{path}: {exc}") from exc


def _sensor_kind(name: str, path: str) -> SensorKind:
    try:
        return SensorKind[name]
    except KeyError:
        raise ScenarioError(
            f"{path}: unknown sensor {name!r}; known: {[k.name for k in SensorKind]}"
        ) from None


def _node(data: dict, path: str, tank_ids: set[str], labels: set[str]) -> NodePlacement:
    node_id = _integer(_get(data, "node_id", path), f"{path}.node_id")
    _expect(0 <= node_id <= 0xFFFFFFFF, f"{path}.node_id", "out of u32 range")
    tank_id = _string(_get(data, "tank_id", path), f"{path}.tank_id")
    _expect(tank_id in tank_ids, f"{path}.tank_id", f"unknown tank {tank_id!r}")
    label = _string(_get(data, "survey_label", path), f"{path}.survey_label")
    _expect(label in labels, f"{path}.survey_label", f"unknown survey label {label!r}")
    interval = _number(_get(data, "interval_s", path), f"{path}.interval_s")
    _expect(interval > 0, f"{path}.interval_s", "must be positive")

    sensors = tuple(
        _sensor_kind(_string(s, f"{path}.sensors[{i}]"), f"{path}.sensors[{i}]")
        for i, s in enumerate(_array(data.get("sensors", ["water_temperature_c"]),
                                     f"{path}.sensors"))
    )
    noise = {}
    for key, value in _obj(data.get("noise_sigma", {}), f"{path}.noise_sigma").items():
        noise[_sensor_kind(key, f"{path}.noise_sigma.{key}")] = _number(
            value, f"{path}.noise_sigma.{key}"
        )
    return NodePlacement(
        node_id=node_id,
        tank_id=tank_id,
        survey_label=label,
        profile=_profile(_get(data, "power_profile", path), f"{path}.power_profile"),
        interval_s=interval,
        sensors=sensors,
        noise_sigma=noise,
        average_sampling=bool(data.get("average_sampling", False)),
    )


def _anomaly(data: dict, path: str, tank_ids: set[str]) -> AnomalyEvent:
    tank_id = _string(_get(data, "tank_id", path), f"{path}.tank_id")
    _expect(tank_id in tank_ids, f"{path}.tank_id", f"unknown tank {tank_id!r}")
    kind = _string(_get(data, "kind", path), f"{path}.kind")
    try:
        kind = AnomalyKind(kind)
    except ValueError:
        raise ScenarioError(f"{path}.kind: unknown anomaly kind {kind!r}") from None
    magnitude = _number(_get(data, "magnitude", path), f"{path}.magnitude")
    _expect(magnitude > 0, f"{path}.magnitude", "must be positive")
    return AnomalyEvent(
        at=_number(_get(data, "at", path), f"{path}.at"),
        tank_id=tank_id,
        kind=kind,
        magnitude=magnitude,
    )


def _gateway(data: dict, path: str, labels: set[str]) -> GatewaySetup:
    label = data.get("survey_label")
    if label is not None:
        label = _string(label, f"{path}.survey_label")
        _expect(label in labels, f"{path}.survey_label", f"unknown survey label {label!r}")
    uplink = data.get("uplink", "connected")
    outages: list[tuple[float, float]] = []
    if uplink != "connected":
        uplink = _obj(uplink, f"{path}.uplink")
        for i, window in enumerate(_array(_get(uplink, "scheduled_outages", f"{path}.uplink"),
                                          f"{path}.uplink.scheduled_outages")):
            wpath = f"{path}.uplink.scheduled_outages[{i}]"
            window = _array(window, wpath)
            _expect(len(window) == 2, wpath, "expected [start_s, end_s]")
            start, end = _number(window[0], f"{wpath}[0]"), _number(window[1], f"{wpath}[1]")
            _expect(start < end, wpath, "start must be before end")
            outages.append((start, end))
    return GatewaySetup(survey_label=label, scheduled_outages=tuple(outages))


def _farm_params(data: dict, path: str) -> FarmParams:
    known = {f.name for f in dataclasses.fields(FarmParams)}
    kwargs = {}
    for key, value in data.items():
        _expect(key in known, f"{path}.{key}", "unknown farm parameter")
        kwargs[key] = _number(value, f"{path}.{key}")
    return FarmParams(**kwargs)


def scenario_from_dict(data: dict, path: str = "") -> ScenarioConfig:
    data = _obj(data, path or "scenario")
    seed = _integer(_get(data, "seed", path), "seed")
    _expect(seed >= 0, "seed", "must be >= 0")
    duration = _number(_get(data, "duration_s", path), "duration_s")
    _expect(duration > 0, "duration_s", "must be positive")

    radio = _radio(_obj(_get(data, "radio", path), "radio"), "radio")
    site_data = _obj(_get(data, "site", path), "site")
    points = [
        _survey_point(_obj(p, f"site.survey_points[{i}]"), f"site.survey_points[{i}]")
        for i, p in enumerate(_array(_get(site_data, "survey_points", "site"),
                                     "site.survey_points"))
    ]
    _expect(len({p.label for p in points}) == len(points), "site.survey_points",
            "duplicate labels")
    site = _site(site_data, points, radio, "site")

    tanks = [
        _tank(_obj(t, f"tanks[{i}]"), f"tanks[{i}]")
        for i, t in enumerate(_array(_get(data, "tanks", path), "tanks"))
    ]
    _expect(len(tanks) > 0, "tanks", "at least one tank required")
    tank_ids = {t.tank_id for t in tanks}
    _expect(len(tank_ids) == len(tanks), "tanks", "duplicate tank_id")

    labels = {p.label for p in points}
    nodes = [
        _node(_obj(n, f"nodes[{i}]"), f"nodes[{i}]", tank_ids, labels)
        for i, n in enumerate(_array(_get(data, "nodes", path), "nodes"))
    ]
    _expect(len({n.node_id for n in nodes}) == len(nodes), "nodes", "duplicate node_id")

    anomalies = [
        _anomaly(_obj(a, f"anomalies[{i}]"), f"anomalies[{i}]", tank_ids)
        for i, a in enumerate(_array(data.get("anomalies", []), "anomalies"))
    ]

    loss = _number(data.get("loss_probability", 0.0), "loss_probability")
    _expect(0.0 <= loss <= 1.0, "loss_probability", "must be in [0, 1]")

    duty = data.get("duty_cycle", {})
    duty = _obj(duty, "duty_cycle")
    try:
        policy = DutyCyclePolicy(
            cap_fraction=_number(duty.get("cap_fraction", 0.01), "duty_cycle.cap_fraction"),
            window_s=_number(duty.get("window_s", 3600.0), "duty_cycle.window_s"),
        )
    except LinkError as exc:
        raise ScenarioError(f"duty_cycle: {exc}") from exc

    epoch = _integer(data.get("epoch_start_s", 0), "epoch_start_s")
    _expect(epoch >= 0, "epoch_start_s", "must be >= 0")

    return ScenarioConfig(
        seed=seed,
        duration_s=duration,
        radio=radio,
        site=site,
        survey_points=tuple(points),
        tanks=tuple(tanks),
        nodes=tuple(nodes),
        anomalies=tuple(anomalies),
        loss_probability=loss,
        gateway=_gateway(_obj(data.get("gateway", {}), "gateway"), "gateway", labels),
        duty_cycle=policy,
        farm_params=_farm_params(_obj(data.get("farm", {}), "farm"), "farm"),
        epoch_start_s=epoch,
    )


def load_scenario(path: str) -> ScenarioConfig:
    try:
        with open(path) as fh:
            data = json.load(fh)
    except json.JSONDecodeError as exc:
        raise ScenarioError(f"{path}: not valid JSON ({exc})") from exc
    return scenario_from_dict(data)
