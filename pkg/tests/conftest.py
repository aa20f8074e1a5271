"""Shared fixtures: survey data, scenario factories, in-process HTTP plumbing."""

from __future__ import annotations

import asyncio
import copy

import httpx
import pytest

from aquasim.lora import Obstruction, RadioConfig, SurveyPoint
from aquasim.scenario import scenario_from_dict
from aquasim.service import ServiceConfig, create_app

# the bundled range-survey table: label, distance (m), RSSI (dBm) or None
SURVEY_TABLE = (
    ("A", 43, -108.0, "none"),
    ("B", 55, -110.0, "none"),
    ("C", 70, -109.0, "none"),
    ("D", 104, -109.0, "none"),
    ("E", 102, -110.0, "none"),
    ("F", 56, -107.0, "none"),
    ("G", 143, None, "forest"),
    ("H", 117, None, "forest"),
    ("I", 120, None, "buildings"),
)


def survey_points() -> list[SurveyPoint]:
    return [
        SurveyPoint(label, meters / 1000.0, rssi, Obstruction(obstruction))
        for label, meters, rssi, obstruction in SURVEY_TABLE
    ]


def field_radio() -> RadioConfig:
    return RadioConfig(frequency_mhz=915.0, spreading_factor=7)


BASE_SCENARIO = {
    "seed": 42,
    "duration_s": 3600.0,
    "loss_probability": 0.0,
    "radio": {"frequency_mhz": 915, "spreading_factor": 7},
    "site": {
        "obstruction_loss_db": {"buildings": 20, "forest": 20},
        "survey_points": [
            {"label": label, "distance_km": meters / 1000.0, "rssi_dbm": rssi,
             "obstruction": obstruction}
            for label, meters, rssi, obstruction in SURVEY_TABLE
        ],
    },
    "tanks": [{"tank_id": "ras-1"}],
    "nodes": [
        {"node_id": 1, "tank_id": "ras-1", "survey_label": "A",
         "power_profile": "optimized", "interval_s": 600}
    ],
}


def make_scenario(**overrides):
    data = copy.deepcopy(BASE_SCENARIO)
    data.update(overrides)
    return scenario_from_dict(data)


def scenario_dict(**overrides):
    data = copy.deepcopy(BASE_SCENARIO)
    data.update(overrides)
    return data


class SyncASGITransport(httpx.BaseTransport):
    """Drive an ASGI app from a synchronous httpx.Client (tests only)."""

    def __init__(self, app):
        self._inner = httpx.ASGITransport(app=app)

    def handle_request(self, request: httpx.Request) -> httpx.Response:
        async def go():
            response = await self._inner.handle_async_request(request)
            body = b"".join([chunk async for chunk in response.stream])
            return httpx.Response(
                status_code=response.status_code,
                headers=response.headers,
                content=body,
            )

        return asyncio.run(go())


class FlakyTransport(httpx.BaseTransport):
    """Wrap a transport; raise ConnectError while `down` is true."""

    def __init__(self, inner: httpx.BaseTransport):
        self.inner = inner
        self.down = False

    def handle_request(self, request: httpx.Request) -> httpx.Response:
        if self.down:
            raise httpx.ConnectError("service unreachable", request=request)
        return self.inner.handle_request(request)


def make_service(tmp_path=None, node_tanks=None, rules=None, ttl_s=24 * 3600):
    """An app plus an operator/gateway credential pair, stored on disk if asked."""
    config = ServiceConfig(
        secret="test-secret",
        users=[
            ServiceConfig.make_user("op", "op-pass", "operator"),
            ServiceConfig.make_user("gw", "gw-pass", "gateway"),
        ],
        store_path=str(tmp_path / "telemetry.sqlite") if tmp_path else ":memory:",
        node_tanks=node_tanks or {},
        token_ttl_s=ttl_s,
        **({"alert_rules": rules} if rules else {}),
    )
    return create_app(config), config


@pytest.fixture
def service(tmp_path):
    app, config = make_service(tmp_path, node_tanks={1: "ras-1", 2: "ras-2"})
    transport = SyncASGITransport(app)
    with httpx.Client(transport=transport, base_url="http://svc") as client:
        yield client, app, transport


def login(client: httpx.Client, username: str, password: str) -> dict:
    response = client.post(
        "/api/v1/auth/login", json={"username": username, "password": password}
    )
    assert response.status_code == 200, response.text
    token = response.json()["token"]
    return {"Authorization": f"Bearer {token}"}
