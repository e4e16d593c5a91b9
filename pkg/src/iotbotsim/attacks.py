"""Attack traffic generation: direct floods, reflection and DNS water torture."""

from __future__ import annotations

import string
from dataclasses import dataclass
from typing import Sequence

import numpy as np

from .dns import DnsError, DnsQuery, DomainName, as_name
from .engine import Distribution
from .topology import DeliveryResult, FlowSet

FLOOD_VECTORS = frozenset({"syn", "ack", "udp", "http", "gre-ip", "gre-eth", "stomp"})
GRE_VECTORS = frozenset({"gre-ip", "gre-eth"})
DNS_VECTORS = frozenset({"dns-direct", "water-torture"})

# Typical amplification factors for commonly abused reflection protocols.
# These are configuration defaults, not measurements of any incident.
DEFAULT_AMPLIFICATION = {"dns": 28.0, "ntp": 556.9, "snmp": 6.3}
REFLECTION_VECTORS = frozenset(f"reflection-{p}" for p in DEFAULT_AMPLIFICATION)

ALL_VECTORS = FLOOD_VECTORS | DNS_VECTORS | REFLECTION_VECTORS

PREFIX_LENGTH = 12
PREFIX_ALPHABET = np.array(list(string.ascii_lowercase + string.digits))


class AttackError(ValueError):
    pass


@dataclass(frozen=True)
class AttackVector:
    tag: str
    amp_factor: float | None = None

    def __post_init__(self):
        if self.tag not in ALL_VECTORS:
            raise AttackError(f"unknown attack vector {self.tag!r}; known: {sorted(ALL_VECTORS)}")
        if self.is_reflection:
            if self.amp_factor is None:
                object.__setattr__(self, "amp_factor", DEFAULT_AMPLIFICATION[self.protocol])
            if not self.amp_factor > 1:
                raise AttackError(f"amplification factor must exceed 1, got {self.amp_factor}")
        elif self.amp_factor is not None:
            raise AttackError(f"{self.tag} takes no amplification factor")

    @property
    def is_reflection(self) -> bool:
        return self.tag in REFLECTION_VECTORS

    @property
    def protocol(self) -> str | None:
        return self.tag.split("-", 1)[1] if self.is_reflection else None

    @property
    def spoofable(self) -> bool:
        return self.is_reflection

    @property
    def unit(self) -> str:
        return "queries/s" if self.tag == "water-torture" else "bits/s"


@dataclass
class AttackCommand:
    malware: str
    target: str  # target server name, or a domain for DNS vectors
    vector: AttackVector
    rate: Distribution
    start: float
    duration: float
    share: float = 1.0
    reflectors: tuple[str, ...] = ()

    def __post_init__(self):
        if not self.duration > 0:
            raise AttackError("attack duration must be positive")
        if self.start < 0:
            raise AttackError("attack start must be non-negative")
        if not 0.0 < self.share <= 1.0:
            raise AttackError("share must lie in (0, 1]")
        if self.vector.is_reflection and not self.reflectors:
            raise AttackError("reflection needs at least one reflector")
        if self.rate.support[0] < 0:
            raise AttackError("per-bot rates must be non-negative")

    @property
    def end(self) -> float:
        return self.start + self.duration


# ---------------------------------------------------------------------------
# Floods
# ---------------------------------------------------------------------------


def start_flood(src_nodes: np.ndarray, rates: np.ndarray, uplinks: np.ndarray, target: int, vector: str) -> FlowSet:
    """One attack flow per bot, each capped at the bot's uplink."""
    rates = np.asarray(rates, dtype=float)
    if np.any(~(rates > 0)):
        raise AttackError("per-bot rate draws must be positive")
    if vector not in FLOOD_VECTORS and vector != "dns-direct":
        raise AttackError(f"{vector!r} is not a direct flood vector")
    n = len(rates)
    return FlowSet(
        src=np.asarray(src_nodes, dtype=np.int64),
        dst=np.full(n, target, dtype=np.int64),
        offered=np.minimum(rates, uplinks),
        attack=np.ones(n, dtype=bool),
        vector=[vector] * n,
    )


# ---------------------------------------------------------------------------
# Reflection
# ---------------------------------------------------------------------------


@dataclass
class ReflectionRequests:
    flows: FlowSet
    reflector_of: np.ndarray  # reflector node per request flow
    spoofed_src: int


def reflection_requests(
    src_nodes: np.ndarray, rates: np.ndarray, reflectors: Sequence[int], victim: int, vector: AttackVector
) -> ReflectionRequests:
    """Spoofed requests from bots to reflectors, bots assigned round-robin."""
    if not vector.is_reflection:
        raise AttackError(f"{vector.tag!r} cannot be reflected; only spoofable vectors can")
    if not len(reflectors):
        raise AttackError("reflector set is empty")
    src_nodes = np.asarray(src_nodes, dtype=np.int64)
    refl = np.asarray(reflectors, dtype=np.int64)[np.arange(len(src_nodes)) % len(reflectors)]
    n = len(src_nodes)
    flows = FlowSet(src_nodes, refl.copy(), np.asarray(rates, dtype=float), np.ones(n, bool), [vector.tag] * n)
    return ReflectionRequests(flows, refl, victim)


def reflected_flows(
    reflectors: Sequence[int], delivered_requests: np.ndarray, reflector_of: np.ndarray, victim: int, vector: AttackVector
) -> FlowSet:
    """Responses from each reflector to the victim; their visible source is the reflector."""
    refl = np.asarray(reflectors, dtype=np.int64)
    pos = {int(r): i for i, r in enumerate(refl)}
    received = np.zeros(len(refl))
    if len(reflector_of):
        np.add.at(received, np.array([pos[int(r)] for r in reflector_of]), delivered_requests)
    n = len(refl)
    return FlowSet(refl.copy(), np.full(n, victim, np.int64), vector.amp_factor * received, np.ones(n, bool), [vector.tag] * n)


def spoof_and_reflect(
    network,
    src_nodes: np.ndarray,
    rates: np.ndarray,
    reflectors: Sequence[int],
    vector: AttackVector,
    victim: int,
    bcp38_drop: np.ndarray | None = None,
) -> tuple[ReflectionRequests, FlowSet]:
    """Requests to reflectors and the amplified responses they send the victim.

    ``bcp38_drop`` marks request flows removed by ingress filtering before
    they leave their access network.
    """
    from .topology import apply_flows

    req = reflection_requests(src_nodes, rates, reflectors, victim, vector)
    offered = req.flows.offered.copy()
    if bcp38_drop is not None:
        offered[np.asarray(bcp38_drop, dtype=bool)] = 0.0
    sent = FlowSet(req.flows.src, req.flows.dst, offered, req.flows.attack, req.flows.vector)
    delivered = apply_flows(network, sent).delivered if len(sent) else np.zeros(0)
    return req, reflected_flows(reflectors, delivered, req.reflector_of, victim, vector)


# ---------------------------------------------------------------------------
# Water torture
# ---------------------------------------------------------------------------


def random_prefixes(rng: np.random.Generator, n: int, length: int = PREFIX_LENGTH) -> list[str]:
    chars = PREFIX_ALPHABET[rng.integers(0, len(PREFIX_ALPHABET), size=(n, length))]
    return ["".join(row) for row in chars]


def water_torture_step(
    resolver: int | None, target_domain: DomainName | str, qps: float, duration: float, now: float, rng: np.random.Generator
) -> list[DnsQuery]:
    """Queries a bot sends to its ISP resolver: fresh random prefix per query."""
    if resolver is None or resolver < 0:
        raise DnsError("no recursive resolver on the bot's access network")
    if qps < 0 or duration < 0:
        raise AttackError("query rate and duration must be non-negative")
    domain = as_name(target_domain)
    n = int(round(qps * duration))
    if n == 0:
        return []
    times = now + np.arange(n) / qps
    return [DnsQuery(domain.prefixed(p), resolver, float(t)) for p, t in zip(random_prefixes(rng, n), times)]


# ---------------------------------------------------------------------------
# Ingress accounting
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class Ingress:
    attack: float
    legitimate: float

    @property
    def total(self) -> float:
        return self.attack + self.legitimate


def aggregate_at(target: int, flows: FlowSet, result: DeliveryResult | None) -> Ingress:
    if result is None or not len(flows):
        return Ingress(0.0, 0.0)
    at = flows.dst == target
    return Ingress(
        float(result.delivered[at & flows.attack].sum()),
        float(result.delivered[at & ~flows.attack].sum()),
    )
