"""Radio-layer math: free-space link budget, site calibration, airtime and duty cycle.

All functions are pure and operate on value types; they can be called from
any thread. Units are carried in field and argument names (dB, dBm, dBi,
km, MHz, Hz, seconds) -- getting these wrong is the classic link-budget bug.
"""

from __future__ import annotations

import csv
import json
import math
from dataclasses import dataclass, field
from enum import Enum
from typing import Iterable, Optional, Sequence


class LinkError(ValueError):
    """Invalid radio-layer input (non-positive distance, no usable survey rows...)."""


class Obstruction(str, Enum):
    NONE = "none"
    BUILDINGS = "buildings"
    FOREST = "forest"


# Typical SX1276-class sensitivity for SF7 / 125 kHz. Configuration default
# only; never consulted directly by the math below.
DEFAULT_RX_SENSITIVITY_DBM = -123.0

DEFAULT_OBSTRUCTION_LOSS_DB = {
    Obstruction.NONE: 0.0,
    Obstruction.BUILDINGS: 20.0,
    Obstruction.FOREST: 20.0,
}


@dataclass(frozen=True)
class RadioConfig:
    """Transmitter/receiver configuration for one LoRa link."""

    frequency_mhz: float
    spreading_factor: int
    bandwidth_hz: int = 125_000
    coding_rate_denominator: int = 5  # 4/5 .. 4/8
    preamble_symbols: int = 8
    tx_power_dbm: float = 17.0
    tx_antenna_gain_dbi: float = 3.0
    rx_antenna_gain_dbi: float = 3.0
    rx_sensitivity_dbm: float = DEFAULT_RX_SENSITIVITY_DBM

    def __post_init__(self) -> None:
        if self.frequency_mhz <= 0:
            raise LinkError("frequency_mhz must be positive")
        if self.bandwidth_hz <= 0:
            raise LinkError("bandwidth_hz must be positive")
        if not 7 <= self.spreading_factor <= 12:
            raise LinkError("spreading_factor must be in [7, 12]")
        if not 5 <= self.coding_rate_denominator <= 8:
            raise LinkError("coding_rate_denominator must be in [5, 8]")
        if self.preamble_symbols <= 0:
            raise LinkError("preamble_symbols must be positive")
        if self.rx_sensitivity_dbm >= 0:
            raise LinkError("rx_sensitivity_dbm must be negative")


@dataclass(frozen=True)
class SurveyPoint:
    """One measured field location; a missing RSSI means 'no signal'."""

    label: str
    distance_km: float
    measured_rssi_dbm: Optional[float] = None
    obstruction: Obstruction = Obstruction.NONE

    def __post_init__(self) -> None:
        if self.distance_km <= 0:
            raise LinkError(f"point {self.label!r}: distance_km must be positive")
        if self.measured_rssi_dbm is not None and self.measured_rssi_dbm >= 0:
            raise LinkError(f"point {self.label!r}: measured RSSI must be negative dBm")


@dataclass(frozen=True)
class SiteModel:
    """Fitted constant excess loss plus per-obstruction-class attenuation."""

    site_excess_db: float = 0.0
    obstruction_loss_db: dict[Obstruction, float] = field(
        default_factory=lambda: dict(DEFAULT_OBSTRUCTION_LOSS_DB)
    )

    def __post_init__(self) -> None:
        if self.site_excess_db < 0:
            raise LinkError("site_excess_db must be >= 0")
        if self.obstruction_loss_db.get(Obstruction.NONE, 0.0) != 0.0:
            raise LinkError("obstruction loss for 'none' must be 0")

    def loss_for(self, obstruction: Obstruction) -> float:
        return self.obstruction_loss_db.get(obstruction, 0.0)


@dataclass(frozen=True)
class DutyCyclePolicy:
    """Regulatory transmit-time cap: at most cap_fraction of any window_s."""

    cap_fraction: float = 0.01
    window_s: float = 3600.0

    def __post_init__(self) -> None:
        if not 0 < self.cap_fraction <= 1:
            raise LinkError("cap_fraction must be in (0, 1]")
        if self.window_s <= 0:
            raise LinkError("window_s must be positive")


def free_space_loss(distance_km: float, frequency_mhz: float) -> float:
    """Free-space path loss in dB: 32.45 + 20*log10(D_km) + 20*log10(f_MHz)."""
    if distance_km <= 0:
        raise LinkError("distance_km must be positive")
    if frequency_mhz <= 0:
        raise LinkError("frequency_mhz must be positive")
    return 32.45 + 20.0 * math.log10(distance_km) + 20.0 * math.log10(frequency_mhz)


def predict_rssi(cfg: RadioConfig, site: SiteModel, point: SurveyPoint) -> float:
    """Predicted received power in dBm at a survey point.

    TX power plus both antenna gains, minus free-space loss, the fitted
    site excess, and the point's obstruction-class loss.
    """
    return (
        cfg.tx_power_dbm
        + cfg.tx_antenna_gain_dbi
        + cfg.rx_antenna_gain_dbi
        - free_space_loss(point.distance_km, cfg.frequency_mhz)
        - site.site_excess_db
        - site.loss_for(point.obstruction)
    )


def fit_site_excess(cfg: RadioConfig, points: Sequence[SurveyPoint]) -> float:
    """Least-squares constant offset between free-space predictions and measurements.

    Only obstruction-free points with a recorded RSSI participate, so the
    fitted constant is not polluted by obstruction loss. For a constant-offset
    model the least-squares solution is the mean residual.
    """
    bare_site = SiteModel(site_excess_db=0.0)
    residuals = [
        predict_rssi(cfg, bare_site, p) - p.measured_rssi_dbm
        for p in points
        if p.measured_rssi_dbm is not None and p.obstruction is Obstruction.NONE
    ]
    if not residuals:
        raise LinkError("no unobstructed measured points to calibrate against")
    return sum(residuals) / len(residuals)


def is_reachable(cfg: RadioConfig, site: SiteModel, point: SurveyPoint) -> bool:
    """True when the predicted RSSI clears the receiver sensitivity floor."""
    return predict_rssi(cfg, site, point) >= cfg.rx_sensitivity_dbm


def airtime_s(cfg: RadioConfig, total_frame_bytes: int) -> float:
    """LoRa on-air time in seconds for an explicit-header frame with CRC.

    Symbol time is 2^SF / BW; the payload symbol count follows the standard
    explicit-header formula with low-data-rate optimization active for
    SF >= 11 at 125 kHz and below.
    """
    if total_frame_bytes < 0:
        raise LinkError("total_frame_bytes must be >= 0")
    sf = cfg.spreading_factor
    t_sym = (2.0**sf) / cfg.bandwidth_hz
    de = 1 if (sf >= 11 and cfg.bandwidth_hz <= 125_000) else 0
    cr = cfg.coding_rate_denominator - 4
    numerator = 8 * total_frame_bytes - 4 * sf + 28 + 16  # +16: CRC on, explicit header
    payload_symbols = 8 + max(0, math.ceil(numerator / (4.0 * (sf - 2 * de))) * (cr + 4))
    return (cfg.preamble_symbols + 4.25 + payload_symbols) * t_sym


def min_interval_s(airtime: float, policy: DutyCyclePolicy) -> float:
    """Smallest send interval whose long-run channel occupancy meets the cap."""
    if airtime <= 0:
        raise LinkError("airtime must be positive")
    return airtime / policy.cap_fraction


# ---------------------------------------------------------------------------
# Survey file I/O and reporting


@dataclass(frozen=True)
class SurveyRow:
    """Per-point entry of a survey report."""

    label: str
    distance_km: float
    obstruction: Obstruction
    measured_rssi_dbm: Optional[float]
    predicted_rssi_dbm: float
    residual_db: Optional[float]
    reachable: bool


@dataclass(frozen=True)
class SurveyReport:
    site_excess_db: float
    rx_sensitivity_dbm: float
    rows: tuple[SurveyRow, ...]

    @property
    def max_abs_residual_db(self) -> float:
        residuals = [abs(r.residual_db) for r in self.rows if r.residual_db is not None]
        return max(residuals) if residuals else 0.0

    @property
    def measured_all_reachable(self) -> bool:
        return all(r.reachable for r in self.rows if r.measured_rssi_dbm is not None)

    def to_dict(self) -> dict:
        return {
            "site_excess_db": self.site_excess_db,
            "rx_sensitivity_dbm": self.rx_sensitivity_dbm,
            "max_abs_residual_db": self.max_abs_residual_db,
            "rows": [
                {
                    "label": r.label,
                    "distance_km": r.distance_km,
                    "obstruction": r.obstruction.value,
                    "measured_rssi_dbm": r.measured_rssi_dbm,
                    "predicted_rssi_dbm": round(r.predicted_rssi_dbm, 2),
                    "residual_db": None if r.residual_db is None else round(r.residual_db, 2),
                    "reachable": r.reachable,
                }
                for r in self.rows
            ],
        }

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), indent=2)

    def to_text(self) -> str:
        lines = [
            f"site excess: {self.site_excess_db:.2f} dB   "
            f"sensitivity: {self.rx_sensitivity_dbm:.1f} dBm",
            f"{'label':<6}{'dist km':>8}{'obstr':>11}{'measured':>10}"
            f"{'predicted':>11}{'residual':>10}{'reach':>7}",
        ]
        for r in self.rows:
            measured = "no signal" if r.measured_rssi_dbm is None else f"{r.measured_rssi_dbm:.0f}"
            residual = "-" if r.residual_db is None else f"{r.residual_db:+.2f}"
            lines.append(
                f"{r.label:<6}{r.distance_km:>8.3f}{r.obstruction.value:>11}"
                f"{measured:>10}{r.predicted_rssi_dbm:>11.2f}{residual:>10}"
                f"{'yes' if r.reachable else 'no':>7}"
            )
        return "\n".join(lines)


def load_survey_csv(path: str) -> list[SurveyPoint]:
    """Read survey points from CSV: label,distance_m,rssi_dbm,obstruction.

    An empty rssi_dbm cell means the point recorded no signal.
    """
    points: list[SurveyPoint] = []
    with open(path, newline="") as fh:
        reader = csv.DictReader(fh)
        required = {"label", "distance_m", "rssi_dbm", "obstruction"}
        if reader.fieldnames is None or not required.issubset(reader.fieldnames):
            raise LinkError(f"survey CSV must have columns {sorted(required)}")
        for i, row in enumerate(reader):
            try:
                rssi = row["rssi_dbm"].strip()
                points.append(
                    SurveyPoint(
                        label=row["label"].strip(),
                        distance_km=float(row["distance_m"]) / 1000.0,
                        measured_rssi_dbm=float(rssi) if rssi else None,
                        obstruction=Obstruction(row["obstruction"].strip() or "none"),
                    )
                )
            except (ValueError, KeyError) as exc:
                raise LinkError(f"survey CSV row {i + 2}: {exc}") from exc
    return points


def survey_report(
    cfg: RadioConfig,
    points: Iterable[SurveyPoint],
    site: Optional[SiteModel] = None,
) -> SurveyReport:
    """Calibrate (unless a site model is given) and classify every point."""
    points = list(points)
    if site is None:
        site = SiteModel(site_excess_db=fit_site_excess(cfg, points))
    rows = []
    for p in points:
        predicted = predict_rssi(cfg, site, p)
        rows.append(
            SurveyRow(
                label=p.label,
                distance_km=p.distance_km,
                obstruction=p.obstruction,
                measured_rssi_dbm=p.measured_rssi_dbm,
                predicted_rssi_dbm=predicted,
                residual_db=None
                if p.measured_rssi_dbm is None
                else predicted - p.measured_rssi_dbm,
                reachable=predicted >= cfg.rx_sensitivity_dbm,
            )
        )
    return SurveyReport(
        site_excess_db=site.site_excess_db,
        rx_sensitivity_dbm=cfg.rx_sensitivity_dbm,
        rows=tuple(rows),
    )
