"""The ingestion service: auth, telemetry storage, queries, commands, alerts.

Everything except /api/v1/auth/login requires a bearer token. Gateways may
ingest and handle command delivery; operators may issue commands; any
authenticated role may read.
"""

from __future__ import annotations

import json
import os
from dataclasses import dataclass, field
from pathlib import Path
from typing import Optional

from fastapi import Depends, FastAPI, HTTPException, Query, Request
from fastapi.responses import JSONResponse
from fastapi.staticfiles import StaticFiles

from .alerts import DEFAULT_RULES, AlertRule, evaluate_alerts
from .auth import (
    ROLE_GATEWAY,
    ROLE_OPERATOR,
    AuthError,
    LoginThrottle,
    TokenSigner,
    User,
    hash_password,
    verify_password,
)
from .models import (
    AlertsResponse,
    CommandIn,
    CommandOut,
    CommandsResponse,
    IngestResponse,
    LoginRequest,
    NodesResponse,
    ReadingsResponse,
    SeriesResponse,
    StoredReadingOut,
    TelemetryRecordIn,
    TokenResponse,
)
from .store import QueryError, TelemetryStore


@dataclass
class ServiceConfig:
    secret: str
    users: list[User] = field(default_factory=list)
    store_path: str = ":memory:"
    token_ttl_s: int = 24 * 3600
    node_tanks: dict[int, str] = field(default_factory=dict)
    alert_rules: tuple[AlertRule, ...] = DEFAULT_RULES
    dashboard_dir: Optional[str] = None
    host: str = "127.0.0.1"
    port: int = 8047

    @classmethod
    def from_file(cls, path: str) -> "ServiceConfig":
        with open(path) as fh:
            data = json.load(fh)
        users_data = data.get("users", [])
        if "credentials_file" in data:
            credentials_path = Path(path).parent / data["credentials_file"]
            with open(credentials_path) as fh:
                users_data = json.load(fh)
        users = [
            User(u["username"], u["password_hash"], u["role"]) for u in users_data
        ]
        rules = tuple(
            AlertRule.from_dict(r) for r in data.get("alert_rules", [])
        ) or DEFAULT_RULES
        return cls(
            secret=data["secret"],
            users=users,
            store_path=data.get("store_path", ":memory:"),
            token_ttl_s=int(data.get("token_ttl_s", 24 * 3600)),
            node_tanks={int(k): v for k, v in data.get("node_tanks", {}).items()},
            alert_rules=rules,
            dashboard_dir=data.get("dashboard_dir"),
            host=data.get("host", "127.0.0.1"),
            port=int(data.get("port", 8047)),
        )

    @staticmethod
    def make_user(username: str, password: str, role: str) -> User:
        return User(username=username, password_hash=hash_password(password), role=role)


def create_app(config: ServiceConfig) -> FastAPI:
    app = FastAPI(title="aquasim telemetry service", version="1.0")
    store = TelemetryStore(config.store_path)
    signer = TokenSigner(config.secret, ttl_s=config.token_ttl_s)
    throttle = LoginThrottle()
    users = {u.username: u for u in config.users}

    app.state.store = store
    app.state.config = config

    def authenticate(request: Request) -> dict:
        header = request.headers.get("authorization", "")
        if not header.lower().startswith("bearer "):
            raise HTTPException(status_code=401, detail="missing bearer token")
        try:
            return signer.verify(header[7:].strip())
        except AuthError as exc:
            raise HTTPException(status_code=401, detail=str(exc)) from exc

    def require_role(role: str):
        def dependency(claims: dict = Depends(authenticate)) -> dict:
            if claims["role"] != role:
                raise HTTPException(status_code=403, detail=f"requires role {role}")
            return claims

        return dependency

    @app.post("/api/v1/auth/login", response_model=TokenResponse)
    def login(body: LoginRequest):
        if throttle.blocked(body.username):
            raise HTTPException(status_code=429, detail="too many failed attempts")
        user = users.get(body.username)
        if user is None or not verify_password(body.password, user.password_hash):
            throttle.record_failure(body.username)
            raise HTTPException(status_code=401, detail="bad credentials")
        token = signer.issue(user.username, user.role)
        claims = signer.verify(token)
        return TokenResponse(token=token, role=user.role, expires_at_s=claims["exp"])

    @app.post("/api/v1/ingest", response_model=IngestResponse, status_code=201)
    def ingest(record: TelemetryRecordIn,
               claims: dict = Depends(require_role(ROLE_GATEWAY))):
        created, key, rows = store.insert_record(
            record.model_dump(), node_tanks=config.node_tanks
        )
        body = IngestResponse(id=key, stored_readings=rows, duplicate=not created)
        if created:
            return body
        # replayed delivery: report the existing document instead of storing
        return JSONResponse(status_code=200, content=body.model_dump())

    @app.get("/api/v1/readings", response_model=ReadingsResponse)
    def readings(
        pattern: str = Query(default=".*"),
        node: Optional[int] = Query(default=None),
        from_s: Optional[int] = Query(default=None, alias="from"),
        to_s: Optional[int] = Query(default=None, alias="to"),
        limit: int = Query(default=1000, ge=1, le=100_000),
        claims: dict = Depends(authenticate),
    ):
        try:
            rows = store.query_readings(
                pattern, node_id=node, from_s=from_s, to_s=to_s, limit=limit
            )
        except QueryError as exc:
            raise HTTPException(status_code=400, detail=str(exc)) from exc
        out = [
            StoredReadingOut(id=r["reading_key"], **{
                k: r[k] for k in (
                    "series", "node_id", "tank_id", "value", "timestamp_s",
                    "battery_v", "rssi_dbm", "gateway_id", "received_at_s",
                    "stored_at_s",
                )
            })
            for r in rows
        ]
        return ReadingsResponse(count=len(out), readings=out)

    @app.get("/api/v1/series", response_model=SeriesResponse)
    def series(claims: dict = Depends(authenticate)):
        return SeriesResponse(series=store.series())

    @app.get("/api/v1/nodes", response_model=NodesResponse)
    def nodes(claims: dict = Depends(authenticate)):
        return NodesResponse(nodes=store.nodes_latest())

    @app.post("/api/v1/commands", response_model=CommandOut, status_code=201)
    def issue_command(body: CommandIn,
                      claims: dict = Depends(require_role(ROLE_OPERATOR))):
        if body.action == "set_interval_s" and (body.value is None or body.value <= 0):
            raise HTTPException(status_code=422, detail="set_interval_s needs a positive value")
        row = store.insert_command(
            gateway_id=body.gateway_id,
            tank_id=body.tank_id,
            action=body.action,
            value=body.value,
            issued_by=claims["sub"],
        )
        return CommandOut(**row)

    @app.get("/api/v1/commands/pending", response_model=CommandsResponse)
    def pending_commands(gateway: str = Query(min_length=1),
                         claims: dict = Depends(require_role(ROLE_GATEWAY))):
        return CommandsResponse(
            commands=[CommandOut(**row) for row in store.fetch_pending(gateway)]
        )

    @app.post("/api/v1/commands/{command_id}/ack", response_model=CommandOut)
    def ack_command(command_id: str,
                    claims: dict = Depends(require_role(ROLE_GATEWAY))):
        status = store.ack_command(command_id)
        if status == "unknown":
            raise HTTPException(status_code=404, detail="unknown command")
        if status == "conflict":
            raise HTTPException(status_code=409, detail="not in deliverable state")
        return CommandOut(**store.get_command(command_id))

    @app.get("/api/v1/alerts", response_model=AlertsResponse)
    def alerts(claims: dict = Depends(authenticate)):
        return AlertsResponse(alerts=evaluate_alerts(store, config.alert_rules))

    if config.dashboard_dir and os.path.isdir(config.dashboard_dir):
        app.mount(
            "/dashboard",
            StaticFiles(directory=config.dashboard_dir, html=True),
            name="dashboard",
        )

    return app
