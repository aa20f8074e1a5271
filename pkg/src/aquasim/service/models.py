"""Request/response schemas for the HTTP API."""

from __future__ import annotations

from typing import Literal, Optional

from pydantic import BaseModel, Field

SERIES_PATTERN = r"^[a-z0-9_]+$"


class LoginRequest(BaseModel):
    username: str
    password: str


class TokenResponse(BaseModel):
    token: str
    role: str
    expires_at_s: int


class ReadingIn(BaseModel):
    series: str = Field(pattern=SERIES_PATTERN)
    value: float


class TelemetryRecordIn(BaseModel):
    gateway_id: str = Field(min_length=1)
    node_id: int = Field(ge=0, le=0xFFFFFFFF)
    seq: int = Field(ge=0, le=0xFFFF)
    timestamp_s: int = Field(ge=0)
    readings: list[ReadingIn] = Field(min_length=1)
    battery_v: float = Field(ge=0.0, le=6.0)
    rssi_dbm: float
    received_at_s: int = Field(ge=0)


class IngestResponse(BaseModel):
    id: str
    stored_readings: int
    duplicate: bool


class StoredReadingOut(BaseModel):
    id: str
    series: str
    node_id: int
    tank_id: Optional[str]
    value: float
    timestamp_s: int
    battery_v: float
    rssi_dbm: float
    gateway_id: str
    received_at_s: int
    stored_at_s: float


class ReadingsResponse(BaseModel):
    count: int
    readings: list[StoredReadingOut]


class SeriesResponse(BaseModel):
    series: list[str]


class NodeStatus(BaseModel):
    node_id: int
    tank_id: Optional[str]
    timestamp_s: int
    battery_v: float
    rssi_dbm: float
    readings: dict[str, float]


class NodesResponse(BaseModel):
    nodes: list[NodeStatus]


class CommandIn(BaseModel):
    gateway_id: str = Field(min_length=1)
    tank_id: str = Field(min_length=1)
    action: Literal["aeration_on", "aeration_off", "set_interval_s"]
    value: Optional[float] = None


class CommandOut(BaseModel):
    command_id: str
    gateway_id: str
    tank_id: str
    action: str
    value: Optional[float]
    issued_by: str
    issued_at_s: float
    state: Literal["pending", "delivered", "acked"]


class CommandsResponse(BaseModel):
    commands: list[CommandOut]


class AlertOut(BaseModel):
    rule_index: int
    series: str
    node_id: int
    tank_id: Optional[str]
    comparator: str
    threshold: float
    value: float
    first_breach_ts: int
    latest_ts: int
    deadline_remaining_s: Optional[float] = None


class AlertsResponse(BaseModel):
    alerts: list[AlertOut]
