"""Recursive resolution, resolver caches, authoritative pools and client retries."""

from __future__ import annotations

import math
import string
from collections import deque
from dataclasses import dataclass, field
from enum import Enum
from typing import Iterable, Sequence

import numpy as np

MAX_NAME_LENGTH = 253
MAX_LABEL_LENGTH = 63
_LABEL_CHARS = set(string.ascii_lowercase + string.digits + "-_")

# default per-tier round trip used for resolution latency
TIER_RTT = 0.02


class DnsError(ValueError):
    pass


@dataclass(frozen=True, order=True)
class DomainName:
    labels: tuple[str, ...]

    def __post_init__(self):
        if not self.labels:
            raise DnsError("domain name needs at least one label")
        for lab in self.labels:
            if not lab or len(lab) > MAX_LABEL_LENGTH or not set(lab) <= _LABEL_CHARS:
                raise DnsError(f"malformed label {lab!r}")
        if len(str(self)) > MAX_NAME_LENGTH:
            raise DnsError(f"name longer than {MAX_NAME_LENGTH} characters")

    @classmethod
    def parse(cls, text: str) -> "DomainName":
        if not isinstance(text, str):
            raise DnsError(f"domain name must be a string, got {text!r}")
        text = text.strip().rstrip(".").lower()
        if not text:
            raise DnsError("empty domain name")
        return cls(tuple(text.split(".")))

    def __str__(self) -> str:
        return ".".join(self.labels)

    @property
    def tld(self) -> str:
        return self.labels[-1]

    def is_within(self, suffix: "DomainName") -> bool:
        n = len(suffix.labels)
        return len(self.labels) >= n and self.labels[-n:] == suffix.labels

    def prefixed(self, label: str) -> "DomainName":
        return DomainName((label.lower(),) + self.labels)


def as_name(name: DomainName | str) -> DomainName:
    return name if isinstance(name, DomainName) else DomainName.parse(name)


# ---------------------------------------------------------------------------
# Authoritative pools
# ---------------------------------------------------------------------------


@dataclass
class PoolDispatch:
    loads: np.ndarray
    dropped: float

    @property
    def served(self) -> float:
        return float(self.loads.sum())


@dataclass
class AuthServerPool:
    """Authoritative servers for one domain, tried in fixed failover order."""

    domain: DomainName
    servers: list[int]
    capacity: list[float]
    name: str = ""
    _window: int = field(default=-1, repr=False)
    _used: np.ndarray | None = field(default=None, repr=False)

    def __post_init__(self):
        self.domain = as_name(self.domain)
        if not self.servers:
            raise DnsError(f"pool for {self.domain} needs at least one server")
        if isinstance(self.capacity, (int, float)):
            self.capacity = [float(self.capacity)] * len(self.servers)
        if len(self.capacity) != len(self.servers):
            raise DnsError("one capacity per server required")
        if any(not c >= 0 for c in self.capacity):
            raise DnsError("server capacity must be non-negative")

    @property
    def total_capacity(self) -> float:
        return float(sum(self.capacity))

    def dispatch(self, offered: float) -> PoolDispatch:
        return auth_pool_dispatch(self, offered)

    def admit(self, now: float) -> int | None:
        """Admit one discrete query against this one-second window; returns the serving index."""
        window = math.floor(now)
        if window != self._window or self._used is None:
            self._window = window
            self._used = np.zeros(len(self.servers))
        for i, cap in enumerate(self.capacity):
            if self._used[i] + 1 <= cap:
                self._used[i] += 1
                return i
        return None


def auth_pool_dispatch(pool: AuthServerPool, offered: float) -> PoolDispatch:
    """Fill servers in failover order; whatever is left after the last one is dropped."""
    if offered < 0:
        raise ValueError("offered load must be non-negative")
    caps = np.asarray(pool.capacity, dtype=float)
    before = np.concatenate([[0.0], np.cumsum(caps)[:-1]])
    loads = np.clip(offered - before, 0.0, caps)
    return PoolDispatch(loads, max(0.0, float(offered) - float(caps.sum())))


# ---------------------------------------------------------------------------
# Resolvers
# ---------------------------------------------------------------------------


class Outcome(str, Enum):
    HIT = "hit"
    RECURSED = "recursed"
    FAILED = "failed"


@dataclass(frozen=True)
class ResolutionResult:
    outcome: Outcome
    auth_queries: int
    latency: float


@dataclass
class DnsQuery:
    name: DomainName
    origin: int
    issued_at: float
    retries_remaining: int = 0

    def __post_init__(self):
        self.name = as_name(self.name)
        if self.retries_remaining < 0:
            raise DnsError("retries_remaining must be >= 0")


@dataclass
class ResolverState:
    node: int
    capacity: float = math.inf
    ttl: float = 300.0
    cache: dict[DomainName, tuple[str, float]] = field(default_factory=dict)
    hits: int = 0
    misses: int = 0
    _window: int = field(default=-1, repr=False)
    _used: float = field(default=0.0, repr=False)

    def lookup(self, name: DomainName, now: float) -> str | None:
        entry = self.cache.get(name)
        if entry is None:
            return None
        answer, expiry = entry
        if expiry <= now:
            del self.cache[name]
            return None
        return answer

    def store(self, name: DomainName, answer: str, now: float) -> None:
        self.cache[name] = (answer, now + self.ttl)

    def purge(self, now: float) -> int:
        stale = [k for k, (_, exp) in self.cache.items() if exp <= now]
        for k in stale:
            del self.cache[k]
        return len(stale)

    def _take_capacity(self, now: float) -> bool:
        window = math.floor(now)
        if window != self._window:
            self._window, self._used = window, 0.0
        if self._used + 1 > self.capacity:
            return False
        self._used += 1
        return True


class DnsHierarchy:
    """Root and TLD tiers plus the authoritative pools, keyed by zone suffix."""

    def __init__(self, pools: Iterable[AuthServerPool] = (), tier_rtt: float = TIER_RTT):
        self.pools: list[AuthServerPool] = list(pools)
        self.tier_rtt = tier_rtt
        self.pool_arrivals: dict[str, int] = {}

    def add_pool(self, pool: AuthServerPool) -> None:
        self.pools.append(pool)

    def pool_for(self, name: DomainName) -> AuthServerPool | None:
        best = None
        for pool in self.pools:
            if name.is_within(pool.domain) and (best is None or len(pool.domain.labels) > len(best.domain.labels)):
                best = pool
        return best


def resolve(resolver: ResolverState, query: DnsQuery, hierarchy: DnsHierarchy, now: float) -> ResolutionResult:
    """Answer from cache or recurse root, TLD, then the zone's authoritative pool."""
    name = as_name(query.name)
    if resolver.lookup(name, now) is not None:
        resolver.hits += 1
        return ResolutionResult(Outcome.HIT, 0, 0.0)
    resolver.misses += 1
    if not resolver._take_capacity(now):
        return ResolutionResult(Outcome.FAILED, 0, 0.0)
    rtt = hierarchy.tier_rtt
    pool = hierarchy.pool_for(name)
    if pool is None:
        # root and TLD answer, nobody is authoritative below them
        return ResolutionResult(Outcome.FAILED, 2, 2 * rtt)
    key = str(pool.domain)
    hierarchy.pool_arrivals[key] = hierarchy.pool_arrivals.get(key, 0) + 1
    served_by = pool.admit(now)
    if served_by is None:
        return ResolutionResult(Outcome.FAILED, 3, 3 * rtt)
    resolver.store(name, f"{pool.servers[served_by]}", now)
    return ResolutionResult(Outcome.RECURSED, 3, 3 * rtt)


# ---------------------------------------------------------------------------
# Client retries
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class RetryPolicy:
    retries: int = 0
    spacing: float = 1.0

    def __post_init__(self):
        if self.retries < 0:
            raise ValueError("retry count must be >= 0")
        if not self.spacing > 0:
            raise ValueError("retry spacing must be positive")


def client_retry(failed_rate: float, policy: RetryPolicy) -> list[tuple[float, float]]:
    """Follow-up query rates caused by ``failed_rate`` failed lookups per second.

    Each failed original lookup is retried ``policy.retries`` times, the k-th
    retry ``k * spacing`` seconds later. Returned as ``(delay, rate)`` pairs.
    """
    return [(k * policy.spacing, float(failed_rate)) for k in range(1, policy.retries + 1)]


def retry_multiplier(policy: RetryPolicy, failing_fraction: float) -> float:
    """Steady-state offered-load multiplier when a fraction of original lookups fail."""
    if not 0.0 <= failing_fraction <= 1.0:
        raise ValueError("failing fraction must lie in [0, 1]")
    return 1.0 + policy.retries * failing_fraction


class RetryBuffer:
    """Per-tick ring of failed original lookup rates, replayed as retries."""

    def __init__(self, policy: RetryPolicy, tick: float):
        self.policy = policy
        lags = [max(1, round(k * policy.spacing / tick)) for k in range(1, policy.retries + 1)]
        self.lags = lags
        self._hist: deque[float] = deque([0.0] * (max(lags) if lags else 0), maxlen=max(lags) if lags else 0)

    def due(self) -> float:
        """Retry rate offered during the current tick."""
        if not self.lags:
            return 0.0
        hist = self._hist
        n = len(hist)
        return float(sum(hist[n - lag] for lag in self.lags))

    def push(self, failed_rate: float) -> None:
        if self.lags:
            self._hist.append(float(failed_rate))


# ---------------------------------------------------------------------------
# Anycast
# ---------------------------------------------------------------------------


def anycast_rebalance(capacities: Sequence[float], offered: float) -> np.ndarray:
    """Spread ``offered`` over points of presence in proportion to their capacity."""
    caps = np.asarray(capacities, dtype=float)
    if not len(caps):
        raise ValueError("anycast needs at least one point of presence")
    total = caps.sum()
    if total <= 0:
        return np.full(len(caps), offered / len(caps))
    return offered * caps / total
