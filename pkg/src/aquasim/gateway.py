"""Gateway relay: decode wire frames, POST telemetry, buffer through outages.

The delay-tolerant buffer is an append-only newline-delimited JSON file plus
a tiny cursor file recording how many records have been posted. Both survive
crashes; replays after a crash are harmless because the service deduplicates
on the (gateway_id, node_id, seq) idempotency key.
"""

from __future__ import annotations

import json
import os
import time
from dataclasses import dataclass, field
from enum import Enum
from pathlib import Path
from typing import Optional

import httpx

from . import frames


class RelayOutcome(str, Enum):
    POSTED = "posted"
    BUFFERED = "buffered"
    REJECTED = "rejected"


@dataclass
class GatewayConfig:
    service_url: str
    username: str
    password: str
    gateway_id: str = "gw-1"
    poll_interval_s: float = 5.0
    buffer_path: str = "dtn-buffer.ndjson"

    @classmethod
    def from_file(cls, path: str) -> "GatewayConfig":
        with open(path) as fh:
            data = json.load(fh)
        return cls(
            service_url=data["service_url"],
            username=data["username"],
            password=data["password"],
            gateway_id=data.get("gateway_id", "gw-1"),
            poll_interval_s=float(data.get("poll_interval_s", 5.0)),
            buffer_path=data.get("buffer_path", "dtn-buffer.ndjson"),
        )


class DtnBuffer:
    """Persistent FIFO of telemetry records with at-least-once drain semantics.

    The data file only ever grows during a run; the cursor file tracks the
    count of records already posted. A crash between posting and advancing
    the cursor re-posts one record on restart, which the service's
    idempotency key absorbs.
    """

    def __init__(self, path: str):
        self.path = Path(path)
        self.cursor_path = Path(str(path) + ".cursor")
        self._records: list[dict] = []
        self._keys: set[str] = set()
        self._cursor = 0
        if self.path.exists():
            with open(self.path) as fh:
                for line in fh:
                    if line.strip():
                        record = json.loads(line)
                        self._records.append(record)
                        self._keys.add(self._key(record))
        if self.cursor_path.exists():
            self._cursor = min(int(self.cursor_path.read_text() or 0), len(self._records))

    @staticmethod
    def _key(record: dict) -> str:
        return f"{record['gateway_id']}:{record['node_id']}:{record['seq']}"

    def __len__(self) -> int:
        return len(self._records) - self._cursor

    def append(self, record: dict) -> None:
        if self._key(record) in self._keys:
            return  # crash replay of a frame already queued
        with open(self.path, "a") as fh:
            fh.write(json.dumps(record, sort_keys=True) + "\n")
            fh.flush()
            os.fsync(fh.fileno())
        self._records.append(record)
        self._keys.add(self._key(record))

    def head(self) -> Optional[dict]:
        if self._cursor < len(self._records):
            return self._records[self._cursor]
        return None

    def advance(self) -> None:
        self._cursor += 1
        self.cursor_path.write_text(str(self._cursor))


class ServiceClient:
    """Thin authenticated HTTP client for the ingestion service."""

    def __init__(self, base_url: str, username: str, password: str,
                 transport: Optional[httpx.BaseTransport] = None,
                 timeout: float = 10.0):
        self._client = httpx.Client(base_url=base_url, transport=transport,
                                    timeout=timeout)
        self._username = username
        self._password = password
        self._token: Optional[str] = None

    def close(self) -> None:
        self._client.close()

    def login(self) -> None:
        response = self._client.post(
            "/api/v1/auth/login",
            json={"username": self._username, "password": self._password},
        )
        response.raise_for_status()
        self._token = response.json()["token"]

    def _headers(self) -> dict:
        if self._token is None:
            self.login()
        return {"Authorization": f"Bearer {self._token}"}

    def _request(self, method: str, url: str, **kwargs) -> httpx.Response:
        response = self._client.request(method, url, headers=self._headers(), **kwargs)
        if response.status_code == 401:
            # token expired or rotated secret: refresh once and retry
            self.login()
            response = self._client.request(method, url, headers=self._headers(), **kwargs)
        return response

    def post_record(self, record: dict) -> httpx.Response:
        return self._request("POST", "/api/v1/ingest", json=record)

    def pending_commands(self, gateway_id: str) -> list[dict]:
        response = self._request("GET", "/api/v1/commands/pending",
                                 params={"gateway": gateway_id})
        response.raise_for_status()
        return response.json()["commands"]

    def ack_command(self, command_id: str) -> bool:
        response = self._request("POST", f"/api/v1/commands/{command_id}/ack")
        return response.status_code == 200


def record_from_frame(frame: frames.SensorFrame, gateway_id: str, rssi_dbm: float,
                      received_at_s: int) -> dict:
    return {
        "gateway_id": gateway_id,
        "node_id": frame.node_id,
        "seq": frame.seq,
        "timestamp_s": frame.timestamp_s,
        "readings": [
            {"series": reading.kind.name, "value": reading.value}
            for reading in frame.readings
        ],
        "battery_v": frame.battery_mv / 1000.0,
        "rssi_dbm": rssi_dbm,
        "received_at_s": received_at_s,
    }


@dataclass
class RelayStats:
    decoded: int = 0
    posted: int = 0
    rejected: int = 0  # undecodable frames, by CRC/magic/... kind below
    unpostable: int = 0  # decoded but permanently refused by the service (4xx)
    reject_kinds: dict[str, int] = field(default_factory=dict)

    def conserved(self, buffered_now: int) -> bool:
        return self.decoded == self.posted + buffered_now + self.unpostable


class GatewayRelay:
    """Frame intake, uplink/flush and command polling for one gateway."""

    def __init__(self, config: GatewayConfig,
                 transport: Optional[httpx.BaseTransport] = None):
        self.config = config
        self.client = ServiceClient(config.service_url, config.username,
                                    config.password, transport=transport)
        self.buffer = DtnBuffer(config.buffer_path)
        self.stats = RelayStats()
        self._was_up = True

    def close(self) -> None:
        self.client.close()

    def _try_post(self, record: dict) -> bool:
        try:
            response = self.client.post_record(record)
        except httpx.HTTPError:
            return False
        if response.status_code in (200, 201):
            return True
        if response.status_code >= 500:
            return False
        # 4xx other than auth: the record itself is unacceptable; treat as
        # rejected rather than retrying forever
        raise ValueError(f"service rejected record: {response.status_code} {response.text}")

    def relay(self, frame_bytes: bytes, rssi_dbm: float, now: float,
              uplink_up: bool = True) -> RelayOutcome:
        """Decode one received frame and hand it to the service or the buffer."""
        try:
            frame = frames.decode(frame_bytes)
        except frames.FrameDecodeError as exc:
            self.stats.rejected += 1
            self.stats.reject_kinds[exc.kind] = self.stats.reject_kinds.get(exc.kind, 0) + 1
            return RelayOutcome.REJECTED
        self.stats.decoded += 1
        record = record_from_frame(frame, self.config.gateway_id, rssi_dbm, int(now))

        if uplink_up and not self._was_up:
            # reconnection: drain the backlog first so per-node order survives
            self.flush()
        self._was_up = uplink_up

        if not uplink_up:
            self.buffer.append(record)
            return RelayOutcome.BUFFERED
        if len(self.buffer) > 0:
            self.flush()
        if len(self.buffer) > 0:
            # backlog not fully drained; queue behind it to preserve order
            self.buffer.append(record)
            return RelayOutcome.BUFFERED
        try:
            posted = self._try_post(record)
        except ValueError:
            self.stats.unpostable += 1
            return RelayOutcome.REJECTED
        if posted:
            self.stats.posted += 1
            return RelayOutcome.POSTED
        self.buffer.append(record)
        return RelayOutcome.BUFFERED

    def flush(self) -> int:
        """Post buffered records oldest-first until empty or the first failure."""
        flushed = 0
        while (record := self.buffer.head()) is not None:
            try:
                if not self._try_post(record):
                    break
            except ValueError:
                # permanently unacceptable record: drop it or we'd wedge the queue
                self.buffer.advance()
                self.stats.unpostable += 1
                continue
            self.buffer.advance()
            self.stats.posted += 1
            flushed += 1
        return flushed

    def poll_commands(self) -> list[dict]:
        """Fetch, acknowledge, then return pending commands (ack-before-forward).

        Acknowledging before forwarding guarantees a command is handed to the
        engine at most once even when two polls race: only the poll whose ack
        succeeds forwards. A command whose ack fails mid-poll stays
        `delivered` server-side and is redelivered later, never duplicated.
        Raises httpx.HTTPError when the service cannot be reached at all.
        """
        pending = self.client.pending_commands(self.config.gateway_id)
        forwarded = []
        for command in pending:
            try:
                if self.client.ack_command(command["command_id"]):
                    forwarded.append(command)
            except httpx.HTTPError:
                continue
        return forwarded

    def poll_commands_with_backoff(self, max_backoff_s: float = 60.0) -> list[dict]:
        backoff = self.config.poll_interval_s
        while True:
            try:
                return self.poll_commands()
            except httpx.HTTPError:
                time.sleep(min(backoff, max_backoff_s))
                backoff = min(backoff * 2, max_backoff_s)
