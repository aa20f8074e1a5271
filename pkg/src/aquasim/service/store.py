"""Embedded document store for telemetry and commands, backed by sqlite.

One record POST fans out into one row per reading series. The record-level
idempotency key (gateway_id, node_id, seq) makes retried deliveries free:
an insert that collides is reported as a duplicate, never stored twice.
Writes are serialized behind one lock; reads share it (desk-scale traffic).
"""

from __future__ import annotations

import re
import sqlite3
import threading
import time
import uuid
from typing import Optional

CMD_PENDING = "pending"
CMD_DELIVERED = "delivered"
CMD_ACKED = "acked"

REDELIVERY_AFTER_S = 30.0

_SCHEMA = """
CREATE TABLE IF NOT EXISTS records (
    record_key TEXT PRIMARY KEY,
    gateway_id TEXT NOT NULL,
    node_id INTEGER NOT NULL,
    seq INTEGER NOT NULL,
    stored_at_s REAL NOT NULL
);
CREATE TABLE IF NOT EXISTS readings (
    reading_key TEXT PRIMARY KEY,
    record_key TEXT NOT NULL,
    series TEXT NOT NULL,
    node_id INTEGER NOT NULL,
    tank_id TEXT,
    value REAL NOT NULL,
    timestamp_s INTEGER NOT NULL,
    battery_v REAL NOT NULL,
    rssi_dbm REAL NOT NULL,
    gateway_id TEXT NOT NULL,
    received_at_s INTEGER NOT NULL,
    stored_at_s REAL NOT NULL
);
CREATE INDEX IF NOT EXISTS idx_readings_series_ts ON readings (series, timestamp_s);
CREATE INDEX IF NOT EXISTS idx_readings_node ON readings (node_id, timestamp_s);
CREATE TABLE IF NOT EXISTS commands (
    command_id TEXT PRIMARY KEY,
    gateway_id TEXT NOT NULL,
    tank_id TEXT NOT NULL,
    action TEXT NOT NULL,
    value REAL,
    issued_by TEXT NOT NULL,
    issued_at_s REAL NOT NULL,
    state TEXT NOT NULL,
    delivered_at_s REAL
);
"""


class QueryError(ValueError):
    pass


def record_key(gateway_id: str, node_id: int, seq: int) -> str:
    return f"{gateway_id}:{node_id}:{seq}"


class TelemetryStore:
    def __init__(self, path: str = ":memory:"):
        self._conn = sqlite3.connect(path, check_same_thread=False)
        self._conn.row_factory = sqlite3.Row
        self._lock = threading.RLock()
        with self._lock, self._conn:
            self._conn.executescript(_SCHEMA)

    def close(self) -> None:
        self._conn.close()

    # -- telemetry ----------------------------------------------------------

    def insert_record(
        self, record: dict, node_tanks: Optional[dict[int, str]] = None
    ) -> tuple[bool, str, int]:
        """Store one TelemetryRecord; returns (created, record_key, reading_rows)."""
        key = record_key(record["gateway_id"], record["node_id"], record["seq"])
        now = time.time()
        tank_id = (node_tanks or {}).get(record["node_id"])
        with self._lock, self._conn:
            cur = self._conn.execute(
                "INSERT OR IGNORE INTO records VALUES (?, ?, ?, ?, ?)",
                (key, record["gateway_id"], record["node_id"], record["seq"], now),
            )
            if cur.rowcount == 0:
                return False, key, 0
            rows = [
                (
                    f"{key}:{reading['series']}",
                    key,
                    reading["series"],
                    record["node_id"],
                    tank_id,
                    reading["value"],
                    record["timestamp_s"],
                    record["battery_v"],
                    record["rssi_dbm"],
                    record["gateway_id"],
                    record["received_at_s"],
                    now,
                )
                for reading in record["readings"]
            ]
            self._conn.executemany(
                "INSERT OR REPLACE INTO readings VALUES (?,?,?,?,?,?,?,?,?,?,?,?)", rows
            )
            return True, key, len(rows)

    def _matching_series(self, pattern: str) -> list[str]:
        try:
            compiled = re.compile(pattern)
        except re.error as exc:
            raise QueryError(f"invalid pattern: {exc}") from exc
        with self._lock:
            rows = self._conn.execute("SELECT DISTINCT series FROM readings").fetchall()
        # anchored matching: the pattern must cover the whole series name
        return sorted(r["series"] for r in rows if compiled.fullmatch(r["series"]))

    def query_readings(
        self,
        pattern: str = ".*",
        node_id: Optional[int] = None,
        from_s: Optional[int] = None,
        to_s: Optional[int] = None,
        limit: int = 1000,
    ) -> list[dict]:
        series = self._matching_series(pattern)
        if not series:
            return []
        sql = f"SELECT * FROM readings WHERE series IN ({','.join('?' * len(series))})"
        args: list = list(series)
        if node_id is not None:
            sql += " AND node_id = ?"
            args.append(node_id)
        if from_s is not None:
            sql += " AND timestamp_s >= ?"
            args.append(from_s)
        if to_s is not None:
            sql += " AND timestamp_s < ?"
            args.append(to_s)
        sql += " ORDER BY timestamp_s ASC, node_id ASC, series ASC LIMIT ?"
        args.append(limit)
        with self._lock:
            return [dict(r) for r in self._conn.execute(sql, args).fetchall()]

    def series(self) -> list[str]:
        with self._lock:
            rows = self._conn.execute(
                "SELECT DISTINCT series FROM readings ORDER BY series"
            ).fetchall()
        return [r["series"] for r in rows]

    def nodes_latest(self) -> list[dict]:
        """Per node: newest battery/rssi plus the latest value of every series."""
        with self._lock:
            rows = [dict(r) for r in self._conn.execute(
                "SELECT * FROM readings ORDER BY timestamp_s ASC"
            ).fetchall()]
        nodes: dict[int, dict] = {}
        for row in rows:
            node = nodes.setdefault(
                row["node_id"],
                {"node_id": row["node_id"], "tank_id": row["tank_id"], "readings": {}},
            )
            node["readings"][row["series"]] = row["value"]
            node.update(
                tank_id=row["tank_id"],
                battery_v=row["battery_v"],
                rssi_dbm=row["rssi_dbm"],
                timestamp_s=row["timestamp_s"],
            )
        return [nodes[k] for k in sorted(nodes)]

    def reading_count(self) -> int:
        with self._lock:
            return self._conn.execute("SELECT COUNT(*) AS n FROM readings").fetchone()["n"]

    def stream_tail(self, series: str, node_id: int, limit: int = 500) -> list[dict]:
        """Newest-last tail of one (series, node) stream, for alert evaluation."""
        with self._lock:
            rows = self._conn.execute(
                "SELECT * FROM readings WHERE series = ? AND node_id = ?"
                " ORDER BY timestamp_s DESC LIMIT ?",
                (series, node_id, limit),
            ).fetchall()
        return [dict(r) for r in reversed(rows)]

    def stream_ids(self, pattern: str) -> list[tuple[str, int]]:
        series = self._matching_series(pattern)
        if not series:
            return []
        with self._lock:
            rows = self._conn.execute(
                f"SELECT DISTINCT series, node_id FROM readings"
                f" WHERE series IN ({','.join('?' * len(series))})",
                series,
            ).fetchall()
        return sorted((r["series"], r["node_id"]) for r in rows)

    # -- commands -----------------------------------------------------------

    def insert_command(
        self,
        gateway_id: str,
        tank_id: str,
        action: str,
        issued_by: str,
        value: Optional[float] = None,
        now: Optional[float] = None,
    ) -> dict:
        command_id = uuid.uuid4().hex
        now = time.time() if now is None else now
        with self._lock, self._conn:
            self._conn.execute(
                "INSERT INTO commands VALUES (?,?,?,?,?,?,?,?,NULL)",
                (command_id, gateway_id, tank_id, action, value, issued_by, now, CMD_PENDING),
            )
        return self.get_command(command_id)

    def get_command(self, command_id: str) -> Optional[dict]:
        with self._lock:
            row = self._conn.execute(
                "SELECT * FROM commands WHERE command_id = ?", (command_id,)
            ).fetchone()
        return dict(row) if row else None

    def fetch_pending(self, gateway_id: str, now: Optional[float] = None) -> list[dict]:
        """Deliver pending commands plus unacked ones older than the redelivery window.

        Each returned command atomically transitions to `delivered`, so a
        concurrent fetch cannot hand out the same command twice within the
        redelivery window.
        """
        now = time.time() if now is None else now
        delivered = []
        with self._lock, self._conn:
            rows = self._conn.execute(
                "SELECT * FROM commands WHERE gateway_id = ? AND (state = ? OR"
                " (state = ? AND delivered_at_s <= ?)) ORDER BY issued_at_s ASC",
                (gateway_id, CMD_PENDING, CMD_DELIVERED, now - REDELIVERY_AFTER_S),
            ).fetchall()
            for row in rows:
                cur = self._conn.execute(
                    "UPDATE commands SET state = ?, delivered_at_s = ?"
                    " WHERE command_id = ? AND state = ? AND"
                    " (delivered_at_s IS ? OR delivered_at_s = ?)",
                    (CMD_DELIVERED, now, row["command_id"], row["state"],
                     row["delivered_at_s"], row["delivered_at_s"]),
                )
                if cur.rowcount == 1:
                    delivered.append(self.get_command(row["command_id"]))
        return delivered

    def ack_command(self, command_id: str, now: Optional[float] = None) -> str:
        """Returns 'acked', 'conflict' (illegal transition) or 'unknown'."""
        with self._lock, self._conn:
            cur = self._conn.execute(
                "UPDATE commands SET state = ? WHERE command_id = ? AND state = ?",
                (CMD_ACKED, command_id, CMD_DELIVERED),
            )
            if cur.rowcount == 1:
                return "acked"
        return "conflict" if self.get_command(command_id) else "unknown"
