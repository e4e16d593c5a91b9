"""Time series recording, run summaries and file export."""

from __future__ import annotations

import csv
import json
import math
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Mapping

import numpy as np

DEFAULT_CADENCE = 1.0
RATE_WINDOW = 3600.0


class SeriesError(ValueError):
    pass


@dataclass
class TimeSeries:
    name: str
    units: str
    times: list[float] = field(default_factory=list)
    values: list[float] = field(default_factory=list)

    def record(self, t: float, value: float) -> "TimeSeries":
        if self.times and not t > self.times[-1]:
            raise SeriesError(f"{self.name}: sample time {t!r} is not after {self.times[-1]!r}")
        if not math.isfinite(t):
            raise SeriesError(f"{self.name}: non-finite sample time")
        self.times.append(float(t))
        self.values.append(float(value))
        return self

    def __len__(self) -> int:
        return len(self.times)

    @property
    def samples(self) -> list[tuple[float, float]]:
        return list(zip(self.times, self.values))

    def max(self, default: float = 0.0) -> float:
        return max(self.values) if self.values else default

    def window(self, t0: float, t1: float) -> list[float]:
        return [v for t, v in zip(self.times, self.values) if t0 <= t <= t1]


def record(series: TimeSeries, t: float, value: float) -> TimeSeries:
    return series.record(t, value)


class Recorder:
    """Named collection of series written from the event loop."""

    def __init__(self):
        self.series: dict[str, TimeSeries] = {}

    def get(self, name: str, units: str) -> TimeSeries:
        s = self.series.get(name)
        if s is None:
            s = self.series[name] = TimeSeries(name, units)
        return s

    def record(self, name: str, units: str, t: float, value: float) -> None:
        self.get(name, units).record(t, value)

    def __getitem__(self, name: str) -> TimeSeries:
        return self.series[name]

    def __contains__(self, name: str) -> bool:
        return name in self.series


# ---------------------------------------------------------------------------
# Availability
# ---------------------------------------------------------------------------


def availability(delivered: float, offered: float) -> float | None:
    """Delivered over offered legitimate load; None when nothing was offered."""
    if offered <= 0:
        return None
    return min(1.0, max(0.0, delivered / offered))


def window_availability(series: TimeSeries, t0: float, t1: float) -> float | None:
    """Mean of the recorded availability samples inside [t0, t1]."""
    vals = series.window(t0, t1)
    return float(np.mean(vals)) if vals else None


# ---------------------------------------------------------------------------
# Summary
# ---------------------------------------------------------------------------


@dataclass
class SummaryReport:
    peak_attack_ingress: float
    mean_availability: float
    peak_infected: float
    time_to_peak_infection: float
    dns_load_multiplier: float
    peak_infection_rate_per_hour: float
    annotations: dict[str, str] = field(default_factory=dict)
    extras: dict[str, float] = field(default_factory=dict)

    def to_dict(self) -> dict:
        return asdict(self)


def _peak_rate(series: TimeSeries, window: float = RATE_WINDOW) -> float:
    """Largest increase of a cumulative count over any trailing window, per hour."""
    if len(series) < 2:
        return 0.0
    t = np.asarray(series.times)
    v = np.asarray(series.values)
    if t[-1] - t[0] < window:
        return float((v[-1] - v[0]) / max(t[-1] - t[0], 1e-12) * 3600.0)
    start = np.searchsorted(t, t - window, side="left")
    ok = t - t[0] >= window
    gain = (v - v[start])[ok]
    span = (t - t[start])[ok]
    return float(np.max(gain / span) * 3600.0)


def summarize(series: Mapping[str, TimeSeries], annotations: Mapping[str, str] | None = None) -> SummaryReport:
    """Aggregate recorded series into the run summary; reads nothing else."""
    attack = series.get("attack_ingress")
    avail = series.get("availability")
    infected = series.get("infected")
    cumulative = series.get("infections_total")
    dns = [s for name, s in series.items() if name.startswith("dns_load_multiplier.")]

    peak_inf, t_peak = 0.0, 0.0
    if infected is not None and len(infected):
        v = np.asarray(infected.values)
        i = int(np.argmax(v))
        peak_inf, t_peak = float(v[i]), float(infected.times[i])

    extras: dict[str, float] = {}
    for name in sorted(series):
        s = series[name]
        if name.startswith(("offline_fraction", "target_reboots.", "torture_cache_hits")) and len(s):
            extras[f"peak_{name}"] = s.max()
        if name in ("infected", "offline_fraction", "infections_total") and len(s):
            extras[f"final_{name}"] = s.values[-1]

    return SummaryReport(
        peak_attack_ingress=attack.max() if attack is not None else 0.0,
        mean_availability=float(np.mean(avail.values)) if avail is not None and len(avail) else 1.0,
        peak_infected=peak_inf,
        time_to_peak_infection=t_peak,
        dns_load_multiplier=max((s.max(1.0) for s in dns), default=1.0),
        peak_infection_rate_per_hour=_peak_rate(cumulative) if cumulative is not None else 0.0,
        annotations=dict(sorted((annotations or {}).items())),
        extras=extras,
    )


# ---------------------------------------------------------------------------
# Export
# ---------------------------------------------------------------------------


def _fmt(x: float) -> str:
    return repr(float(x))


def series_filename(name: str) -> str:
    return name.replace("/", "_") + ".csv"


def write_csv(series: TimeSeries, path: Path) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["t_seconds", "value", "units"])
        for t, v in zip(series.times, series.values):
            w.writerow([_fmt(t), _fmt(v), series.units])


def summary_json(report: SummaryReport) -> str:
    return json.dumps(report.to_dict(), indent=2, sort_keys=True) + "\n"


def export(series: Mapping[str, TimeSeries], report: SummaryReport, out: Path, fmt: str = "csv") -> list[Path]:
    """Write one CSV per series (or one structured document) plus ``summary.json``."""
    out = Path(out)
    out.mkdir(parents=True, exist_ok=True)
    written = []
    if fmt == "csv":
        for name in sorted(series):
            p = out / series_filename(name)
            write_csv(series[name], p)
            written.append(p)
    elif fmt == "structured":
        doc = {
            name: {"units": s.units, "t_seconds": s.times, "values": s.values}
            for name, s in sorted(series.items())
        }
        p = out / "series.json"
        p.write_text(json.dumps(doc, indent=1, sort_keys=True) + "\n")
        written.append(p)
    else:
        raise ValueError(f"unknown output format {fmt!r}")
    p = out / "summary.json"
    p.write_text(summary_json(report))
    written.append(p)
    return written


def read_csv(path: Path) -> TimeSeries:
    with open(path, newline="") as fh:
        rows = list(csv.reader(fh))
    if not rows or rows[0] != ["t_seconds", "value", "units"]:
        raise SeriesError(f"{path}: unexpected header")
    ts = TimeSeries(Path(path).stem, rows[1][2] if len(rows) > 1 else "")
    for t, v, _ in rows[1:]:
        ts.record(float(t), float(v))
    return ts
