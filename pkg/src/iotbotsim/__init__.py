"""Discrete-event simulator for IoT botnets, the DDoS attacks they launch and the defenses against them."""

from .engine import Engine, Event, EventKind, StreamFactory
from .metrics import SummaryReport, TimeSeries, summarize
from .scenario import PRESET_NAMES, ScenarioError, ScenarioSpec, parse_scenario, preset, serialize_scenario
from .simulation import RunResult, Simulation, run_scenario

__version__ = "0.1.0"

__all__ = [
    "Engine",
    "Event",
    "EventKind",
    "PRESET_NAMES",
    "RunResult",
    "ScenarioError",
    "ScenarioSpec",
    "Simulation",
    "StreamFactory",
    "SummaryReport",
    "TimeSeries",
    "parse_scenario",
    "preset",
    "run_scenario",
    "serialize_scenario",
    "summarize",
]
