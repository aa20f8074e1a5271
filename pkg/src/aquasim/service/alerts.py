"""Threshold alert rules over stored reading streams.

A rule fires when every reading of a matching stream has satisfied the
comparator continuously for at least duration_s, measured on the readings'
own timestamps. Using telemetry time rather than the server clock keeps
alerts meaningful when the data source runs on compressed time. Rules with
a deadline (the dissolved-oxygen reaction window) also report how much of
it remains.
"""

from __future__ import annotations

import re
from dataclasses import dataclass
from typing import Optional

from .store import TelemetryStore

_COMPARATORS = {
    "lt": lambda value, threshold: value < threshold,
    "le": lambda value, threshold: value <= threshold,
    "gt": lambda value, threshold: value > threshold,
    "ge": lambda value, threshold: value >= threshold,
}


@dataclass(frozen=True)
class AlertRule:
    series_pattern: str
    comparator: str
    threshold: float
    duration_s: float = 0.0
    deadline_s: Optional[float] = None

    def __post_init__(self) -> None:
        if self.comparator not in _COMPARATORS:
            raise ValueError(f"comparator must be one of {sorted(_COMPARATORS)}")
        if self.duration_s < 0:
            raise ValueError("duration_s must be >= 0")
        re.compile(self.series_pattern)  # re.error on an invalid pattern

    def breaches(self, value: float) -> bool:
        return _COMPARATORS[self.comparator](value, self.threshold)

    @classmethod
    def from_dict(cls, data: dict) -> "AlertRule":
        return cls(
            series_pattern=data["series_pattern"],
            comparator=data["comparator"],
            threshold=float(data["threshold"]),
            duration_s=float(data.get("duration_s", 0.0)),
            deadline_s=None if data.get("deadline_s") is None else float(data["deadline_s"]),
        )


DEFAULT_RULES = (
    AlertRule(
        series_pattern="dissolved_oxygen_mgl",
        comparator="lt",
        threshold=3.0,
        duration_s=0.0,
        deadline_s=1800.0,
    ),
)


def evaluate_alerts(store: TelemetryStore, rules: tuple[AlertRule, ...]) -> list[dict]:
    """Active alerts across all rules and matching (series, node) streams."""
    active = []
    for rule_index, rule in enumerate(rules):
        for series, node_id in store.stream_ids(rule.series_pattern):
            tail = store.stream_tail(series, node_id)
            if not tail or not rule.breaches(tail[-1]["value"]):
                continue
            first_breach = tail[-1]
            for row in reversed(tail):
                if not rule.breaches(row["value"]):
                    break
                first_breach = row
            latest = tail[-1]
            breach_span = latest["timestamp_s"] - first_breach["timestamp_s"]
            if breach_span < rule.duration_s:
                continue
            alert = {
                "rule_index": rule_index,
                "series": series,
                "node_id": node_id,
                "tank_id": latest["tank_id"],
                "comparator": rule.comparator,
                "threshold": rule.threshold,
                "value": latest["value"],
                "first_breach_ts": first_breach["timestamp_s"],
                "latest_ts": latest["timestamp_s"],
            }
            if rule.deadline_s is not None:
                alert["deadline_remaining_s"] = max(0.0, rule.deadline_s - breach_span)
            active.append(alert)
    return active
