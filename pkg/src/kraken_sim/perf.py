"""Latency, throughput and energy models calibrated to measured silicon points.

The spiking engine is energy-proportional: cycles scale with event count, so
its energy is modeled as an affine function of events per inference,
E = e0 + e_event * n. The fixed power draw times latency is reported as a
secondary column because the measured per-inference energies and the active
power are not consistent under a plain power*time model (the silicon clock
gates between events); the affine model respects the measured points.

The ternary engine runs at a fixed rate once started, so power*time is the
primary model there, reported next to the measured per-inference constant.
"""

from __future__ import annotations

import csv
import io
import math
from dataclasses import dataclass
from typing import Sequence

import numpy as np

from .cutie import CutieRunStats
from .errors import DegenerateFit
from .ioutil import atomic_write_text
from .sne import SneNetworkStats, SneRunStats

# Measured operating points of the spiking engine at 220 MHz, 0.8 V:
# (network activity fraction, energy per inference in joules).
SNE_MEASURED_ENERGY_POINTS = ((0.01, 7.5e-6), (0.20, 18e-6))
SNE_CLOCK_HZ = 220e6
SNE_ACTIVE_POWER_W = 0.098

CUTIE_CLOCK_HZ = 330e6
CUTIE_ACTIVE_POWER_W = 0.110
CUTIE_MEASURED_E_INF_J = 6e-6

# Reference event count at activity 1.0 used for the default calibration:
# one full sensor frame (132*104/4 events) per inference.
DEFAULT_EVENTS_PER_UNIT_ACTIVITY = 3432


def _affine_fit(xs: Sequence[float], ys: Sequence[float]) -> tuple[float, float]:
    """Least-squares (intercept, slope); exact when two distinct points."""
    a = np.stack([np.ones(len(xs)), np.asarray(xs, dtype=float)], axis=1)
    coef, *_ = np.linalg.lstsq(a, np.asarray(ys, dtype=float), rcond=None)
    return float(coef[0]), float(coef[1])


_E0_DEFAULT, _E_EVENT_DEFAULT = _affine_fit(
    [a * DEFAULT_EVENTS_PER_UNIT_ACTIVITY for a, _ in SNE_MEASURED_ENERGY_POINTS],
    [e for _, e in SNE_MEASURED_ENERGY_POINTS],
)


@dataclass(frozen=True)
class SneCalibration:
    clock_hz: float = SNE_CLOCK_HZ
    e0_j: float = _E0_DEFAULT  # fixed energy per inference
    e_event_j: float = _E_EVENT_DEFAULT  # energy per input event
    p_active_w: float = SNE_ACTIVE_POWER_W

    def __post_init__(self):
        if min(self.clock_hz, self.e0_j, self.e_event_j, self.p_active_w) < 0:
            raise ValueError("calibration constants must be >= 0")
        if self.clock_hz == 0:
            raise ValueError("clock_hz must be > 0")

    def energy_j(self, n_events: int) -> float:
        return self.e0_j + self.e_event_j * n_events


@dataclass(frozen=True)
class CutieCalibration:
    clock_hz: float = CUTIE_CLOCK_HZ
    p_active_w: float = CUTIE_ACTIVE_POWER_W
    e_inf_j: float = CUTIE_MEASURED_E_INF_J

    def __post_init__(self):
        if min(self.clock_hz, self.p_active_w, self.e_inf_j) < 0:
            raise ValueError("calibration constants must be >= 0")
        if self.clock_hz == 0:
            raise ValueError("clock_hz must be > 0")


def calibrate_sne(
    points: Sequence[tuple[float, float]],
    events_per_unit_activity: float,
    clock_hz: float = SNE_CLOCK_HZ,
    p_active_w: float = SNE_ACTIVE_POWER_W,
) -> SneCalibration:
    """Fit the affine energy model from (activity, joules/inference) points.

    events_per_unit_activity converts an activity fraction into the event
    count of the reference inference. Two distinct points give an exact fit.
    """
    if len(points) < 2:
        raise DegenerateFit("need at least two calibration points")
    activities = [a for a, _ in points]
    if len(set(activities)) < 2:
        raise DegenerateFit("calibration points must span distinct activities")
    e0, e_event = _affine_fit(
        [a * events_per_unit_activity for a in activities],
        [e for _, e in points],
    )
    return SneCalibration(
        clock_hz=clock_hz, e0_j=e0, e_event_j=e_event, p_active_w=p_active_w
    )


@dataclass(frozen=True)
class ReportRow:
    layer: str
    cycles: int
    seconds: float
    events_or_macs: int
    joules: float


@dataclass(frozen=True)
class EnergyReport:
    """Per-layer rows plus totals; pure function of (stats, calibration).

    power_time_j is the secondary p_active * latency estimate. When
    reference_e_inf_j is set (ternary engine), model_gap_j exposes the gap
    between that measured constant and the power*time estimate.
    """

    rows: tuple[ReportRow, ...]
    total: ReportRow
    inf_per_s: float
    power_time_j: float
    reference_e_inf_j: float | None = None

    @property
    def model_gap_j(self) -> float | None:
        if self.reference_e_inf_j is None:
            return None
        return self.power_time_j - self.reference_e_inf_j


def _rate(seconds: float) -> float:
    return math.inf if seconds == 0 else 1.0 / seconds


def sne_report(
    stats: SneNetworkStats | SneRunStats, cal: SneCalibration = SneCalibration()
) -> EnergyReport:
    """Energy/throughput report for one spiking inference.

    Layer energy is e_event * input_events; the fixed e0 lands in the total.
    Latency is total cycles over the calibration clock.
    """
    per_layer = stats.per_layer if isinstance(stats, SneNetworkStats) else [stats]
    rows = []
    for i, layer_stats in enumerate(per_layer):
        seconds = layer_stats.cycles / cal.clock_hz
        rows.append(ReportRow(
            layer=f"layer{i}",
            cycles=layer_stats.cycles,
            seconds=seconds,
            events_or_macs=layer_stats.input_events,
            joules=cal.e_event_j * layer_stats.input_events,
        ))
    total_cycles = sum(r.cycles for r in rows)
    total_events = sum(r.events_or_macs for r in rows)
    total_seconds = total_cycles / cal.clock_hz
    total = ReportRow(
        layer="total",
        cycles=total_cycles,
        seconds=total_seconds,
        events_or_macs=total_events,
        joules=cal.energy_j(total_events),
    )
    return EnergyReport(
        rows=tuple(rows),
        total=total,
        inf_per_s=_rate(total_seconds),
        power_time_j=cal.p_active_w * total_seconds,
    )


def cutie_report(
    stats: CutieRunStats, cal: CutieCalibration = CutieCalibration()
) -> EnergyReport:
    """Energy/throughput report for one ternary inference.

    Layer latency counts compute plus unhidden (stall) load cycles; energy is
    active power times latency, with the measured per-inference constant
    attached for comparison.
    """
    rows = []
    for i, layer_stats in enumerate(stats.per_layer):
        cycles = layer_stats.total_cycles
        seconds = cycles / cal.clock_hz
        rows.append(ReportRow(
            layer=f"layer{i}",
            cycles=cycles,
            seconds=seconds,
            events_or_macs=layer_stats.macs_performed,
            joules=cal.p_active_w * seconds,
        ))
    total_cycles = sum(r.cycles for r in rows)
    total_seconds = total_cycles / cal.clock_hz
    total = ReportRow(
        layer="total",
        cycles=total_cycles,
        seconds=total_seconds,
        events_or_macs=sum(r.events_or_macs for r in rows),
        joules=cal.p_active_w * total_seconds,
    )
    return EnergyReport(
        rows=tuple(rows),
        total=total,
        inf_per_s=_rate(total_seconds),
        power_time_j=cal.p_active_w * total_seconds,
        reference_e_inf_j=cal.e_inf_j,
    )


CSV_COLUMNS = ("layer", "cycles", "seconds", "events_or_macs", "joules")


def report_to_csv(report: EnergyReport) -> str:
    """Render a report with a fixed column order and stable float format."""
    buf = io.StringIO()
    writer = csv.writer(buf, lineterminator="\n")
    writer.writerow(CSV_COLUMNS)
    rows = list(report.rows)
    if rows:
        rows.append(report.total)
    for row in rows:
        writer.writerow([
            row.layer,
            row.cycles,
            f"{row.seconds:.9e}",
            row.events_or_macs,
            f"{row.joules:.9e}",
        ])
    return buf.getvalue()


def emit_csv(report: EnergyReport, path) -> None:
    """Write the report CSV atomically; header-only when there are no rows."""
    atomic_write_text(path, report_to_csv(report))
