"""Deterministic discrete-event core: clock, event queue and seeded streams."""

from __future__ import annotations

import hashlib
import heapq
import math
from dataclasses import dataclass, field
from enum import Enum
from typing import Any, Callable

import numpy as np


class EventKind(str, Enum):
    SCAN_TICK = "scan-tick"
    FLOW_START = "flow-start"
    FLOW_END = "flow-end"
    DEFENSE_ACTION = "defense-action"
    DNS_QUERY = "dns-query"
    REBOOT_COMPLETE = "reboot-complete"
    METRIC_SAMPLE = "metric-sample"
    # brute-force completion, reporting and payload download share one kind;
    # the payload carries the stage name
    INFECTION_STAGE = "infection-stage"


@dataclass(order=True)
class Event:
    at: float
    seq: int
    kind: EventKind = field(compare=False)
    payload: Any = field(default=None, compare=False)


class SchedulingError(RuntimeError):
    """An event was scheduled in the past. Always a logic bug."""


class EventHandlerError(RuntimeError):
    def __init__(self, event: Event, cause: BaseException):
        super().__init__(f"handler for {event.kind.value} at t={event.at!r} (seq {event.seq}) failed: {cause!r}")
        self.event = event
        self.__cause__ = cause


class Engine:
    """Single-threaded event loop over continuous simulated time."""

    def __init__(self, start: float = 0.0):
        if not math.isfinite(start) or start < 0:
            raise ValueError(f"start time must be finite and non-negative, got {start!r}")
        self.now = float(start)
        self._queue: list[Event] = []
        self._seq = 0
        self._handlers: dict[EventKind, Callable[[Event], None]] = {}
        self.processed = 0

    def on(self, kind: EventKind, handler: Callable[[Event], None]) -> None:
        self._handlers[kind] = handler

    def schedule(self, at: float, kind: EventKind, payload: Any = None) -> int:
        at = float(at)
        if not math.isfinite(at):
            raise SchedulingError(f"non-finite event time {at!r}")
        if at < self.now:
            raise SchedulingError(f"cannot schedule {kind.value} at t={at!r} before now={self.now!r}")
        seq = self._seq
        self._seq += 1
        heapq.heappush(self._queue, Event(at, seq, EventKind(kind), payload))
        return seq

    def schedule_in(self, delay: float, kind: EventKind, payload: Any = None) -> int:
        return self.schedule(self.now + delay, kind, payload)

    def pending(self) -> int:
        return len(self._queue)

    def peek(self) -> Event | None:
        return self._queue[0] if self._queue else None

    def pop(self) -> Event:
        return heapq.heappop(self._queue)

    def step(self) -> Event:
        """Process the next event, advancing the clock to its time."""
        event = heapq.heappop(self._queue)
        self.now = event.at
        handler = self._handlers.get(event.kind)
        if handler is not None:
            try:
                handler(event)
            except EventHandlerError:
                raise
            except Exception as exc:
                raise EventHandlerError(event, exc) from exc
        self.processed += 1
        return event

    def run_until(self, t_end: float) -> int:
        """Process every event with ``at <= t_end`` and return how many ran."""
        t_end = float(t_end)
        if t_end < self.now:
            raise ValueError(f"t_end={t_end!r} is before now={self.now!r}")
        count = 0
        while self._queue and self._queue[0].at <= t_end:
            self.step()
            count += 1
        self.now = t_end
        return count


# ---------------------------------------------------------------------------
# Random streams
# ---------------------------------------------------------------------------


def derive_seed(master_seed: int, label: str) -> int:
    """Stable 64-bit seed for ``label`` under ``master_seed``."""
    digest = hashlib.sha256(f"{int(master_seed)}/{label}".encode()).digest()
    return int.from_bytes(digest[:8], "little")


class RngStream:
    """Named, independently seeded PCG64 generator."""

    def __init__(self, stream_id: str, seed: int):
        self.stream_id = stream_id
        self.seed = int(seed) & 0xFFFFFFFFFFFFFFFF
        self.gen = np.random.Generator(np.random.PCG64(self.seed))

    def __repr__(self) -> str:
        return f"RngStream({self.stream_id!r}, seed={self.seed})"


class StreamFactory:
    """Fans one master seed out into per-label streams."""

    def __init__(self, master_seed: int):
        self.master_seed = int(master_seed)
        self._streams: dict[str, RngStream] = {}

    def stream(self, label: str) -> RngStream:
        s = self._streams.get(label)
        if s is None:
            s = RngStream(label, derive_seed(self.master_seed, label))
            self._streams[label] = s
        return s


# ---------------------------------------------------------------------------
# Distributions
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class Uniform:
    low: float
    high: float

    def __post_init__(self):
        if not (math.isfinite(self.low) and math.isfinite(self.high)) or self.low > self.high:
            raise ValueError(f"uniform needs finite low <= high, got ({self.low}, {self.high})")

    @property
    def mean(self) -> float:
        return 0.5 * (self.low + self.high)

    @property
    def support(self) -> tuple[float, float]:
        return (self.low, self.high)


@dataclass(frozen=True)
class Bernoulli:
    p: float

    def __post_init__(self):
        if not 0.0 <= self.p <= 1.0:
            raise ValueError(f"bernoulli p must lie in [0, 1], got {self.p}")

    @property
    def mean(self) -> float:
        return self.p

    @property
    def support(self) -> tuple[float, float]:
        return (0.0, 1.0)


@dataclass(frozen=True)
class Exponential:
    rate: float

    def __post_init__(self):
        if not self.rate > 0 or not math.isfinite(self.rate):
            raise ValueError(f"exponential rate must be positive, got {self.rate}")

    @property
    def mean(self) -> float:
        return 1.0 / self.rate

    @property
    def support(self) -> tuple[float, float]:
        return (0.0, math.inf)


@dataclass(frozen=True)
class Choice:
    """Weighted choice over a finite set of values."""

    values: tuple[float, ...]
    weights: tuple[float, ...]

    def __post_init__(self):
        if not self.values or len(self.values) != len(self.weights):
            raise ValueError("choice needs equally long, non-empty values and weights")
        if any(w < 0 or not math.isfinite(w) for w in self.weights) or sum(self.weights) <= 0:
            raise ValueError("choice weights must be non-negative with a positive sum")

    @classmethod
    def fixed(cls, value: float) -> "Choice":
        return cls((float(value),), (1.0,))

    @property
    def probabilities(self) -> np.ndarray:
        w = np.asarray(self.weights, dtype=float)
        return w / w.sum()

    @property
    def mean(self) -> float:
        return float(np.dot(self.probabilities, self.values))

    @property
    def support(self) -> tuple[float, float]:
        return (min(self.values), max(self.values))


Distribution = Uniform | Bernoulli | Exponential | Choice


def draw_many(stream: RngStream, dist: Distribution, n: int) -> np.ndarray:
    g = stream.gen
    if isinstance(dist, Uniform):
        return g.uniform(dist.low, dist.high, size=n)
    if isinstance(dist, Bernoulli):
        return (g.random(size=n) < dist.p).astype(float)
    if isinstance(dist, Exponential):
        return g.exponential(1.0 / dist.rate, size=n)
    if isinstance(dist, Choice):
        if len(dist.values) == 1:
            return np.full(n, float(dist.values[0]))
        idx = g.choice(len(dist.values), size=n, p=dist.probabilities)
        return np.asarray(dist.values, dtype=float)[idx]
    raise TypeError(f"unsupported distribution {dist!r}")


def rng_draw(stream: RngStream, dist: Distribution) -> float:
    return float(draw_many(stream, dist, 1)[0])


def dist_from_config(cfg: Any) -> Distribution:
    """Build a distribution from its config mapping, e.g. ``{"uniform": [1, 30]}``."""
    if isinstance(cfg, (int, float)):
        return Choice.fixed(float(cfg))
    if not isinstance(cfg, dict) or len(cfg) != 1:
        raise ValueError(f"distribution must be a number or a single-key mapping, got {cfg!r}")
    (key, val), = cfg.items()
    if key == "fixed":
        return Choice.fixed(float(val))
    if key == "uniform":
        a, b = val
        return Uniform(float(a), float(b))
    if key == "bernoulli":
        return Bernoulli(float(val))
    if key == "exponential":
        return Exponential(float(val))
    if key == "choice":
        values = tuple(float(v) for v in val["values"])
        weights = tuple(float(w) for w in val["weights"])
        return Choice(values, weights)
    raise ValueError(f"unknown distribution {key!r}")


def dist_to_config(dist: Distribution) -> Any:
    if isinstance(dist, Choice):
        if len(dist.values) == 1:
            return {"fixed": dist.values[0]}
        return {"choice": {"values": list(dist.values), "weights": list(dist.weights)}}
    if isinstance(dist, Uniform):
        return {"uniform": [dist.low, dist.high]}
    if isinstance(dist, Bernoulli):
        return {"bernoulli": dist.p}
    if isinstance(dist, Exponential):
        return {"exponential": dist.rate}
    raise TypeError(dist)


def scale_dist(dist: Distribution, factor: float) -> Distribution:
    """Distribution of ``factor * X``; used for unit conversion."""
    if isinstance(dist, Uniform):
        return Uniform(dist.low * factor, dist.high * factor)
    if isinstance(dist, Choice):
        return Choice(tuple(v * factor for v in dist.values), dist.weights)
    if isinstance(dist, Exponential):
        return Exponential(dist.rate / factor)
    raise TypeError(f"cannot scale {dist!r}")

