"""Device population, malware lifecycle and botnet infrastructure.

Devices live in flat numpy arrays indexed by device ordinal so that
populations of around a million can be scanned and infected in batches.
"""

from __future__ import annotations

import logging
import math
from dataclasses import dataclass, field
from enum import Enum, IntEnum
from typing import Callable, Iterable, Sequence

import numpy as np

log = logging.getLogger(__name__)


# ---------------------------------------------------------------------------
# Registries
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class Service:
    port: int
    name: str
    bit: int
    login: bool  # accepts credential logins


SERVICES: dict[int, Service] = {
    s.port: s
    for s in (
        Service(23, "telnet", 0, True),
        Service(2323, "telnet", 1, True),
        Service(7547, "tr064", 2, False),
        Service(80, "http", 3, False),
        Service(22, "ssh", 4, True),
    )
}

# vulnerability id -> service port it is reachable through
VULNERABILITIES: dict[str, int] = {
    "tr064-command-injection": 7547,
    "php-cgi-injection": 80,
    "linksys-tmunblock": 80,
    "dlink-hnap-bypass": 80,
}
VULN_BITS: dict[str, int] = {v: i for i, v in enumerate(VULNERABILITIES)}

LOGIN_MASK = sum(1 << s.bit for s in SERVICES.values() if s.login)


def service_mask(ports: Iterable[int]) -> int:
    mask = 0
    for p in ports:
        if p not in SERVICES:
            raise KeyError(f"unknown service port {p}; known: {sorted(SERVICES)}")
        mask |= 1 << SERVICES[p].bit
    return mask


def vuln_mask(vulns: Iterable[str]) -> int:
    mask = 0
    for v in vulns:
        if v not in VULN_BITS:
            raise KeyError(f"unknown vulnerability {v!r}; known: {sorted(VULN_BITS)}")
        mask |= 1 << VULN_BITS[v]
    return mask


def vuln_port_mask(vulns: Iterable[str]) -> int:
    return service_mask(VULNERABILITIES[v] for v in vulns)


# ---------------------------------------------------------------------------
# Credentials
# ---------------------------------------------------------------------------

Credential = tuple[str, str]
STRONG = -1  # a unique, owner-chosen credential that appears in no dictionary


class CredentialTable:
    """Interned credential pairs; devices store indices into it."""

    def __init__(self, pairs: Iterable[Credential] = ()):
        self.pairs: list[Credential] = []
        self._index: dict[Credential, int] = {}
        for p in pairs:
            self.add(p)

    def add(self, pair: Credential) -> int:
        pair = (str(pair[0]), str(pair[1]))
        idx = self._index.get(pair)
        if idx is None:
            idx = len(self.pairs)
            self.pairs.append(pair)
            self._index[pair] = idx
        return idx

    def __len__(self) -> int:
        return len(self.pairs)

    def pair(self, idx: int) -> Credential | None:
        return None if idx < 0 else self.pairs[idx]


@dataclass
class Dictionary:
    """Credential list carried by a malware family.

    Either explicit pairs or the full product of a username list and a
    password list (large families try every combination).
    """

    pairs: frozenset[Credential] = frozenset()
    usernames: tuple[str, ...] = ()
    passwords: tuple[str, ...] = ()

    def __post_init__(self):
        self.pairs = frozenset((str(u), str(p)) for u, p in self.pairs)
        self._users = frozenset(self.usernames)
        self._passwords = frozenset(self.passwords)

    @classmethod
    def generated(cls, n_users: int, n_passwords: int, prefix: str = "") -> "Dictionary":
        return cls(
            usernames=tuple(f"{prefix}user{i:05d}" for i in range(n_users)),
            passwords=tuple(f"{prefix}pass{i:05d}" for i in range(n_passwords)),
        )

    def __contains__(self, pair: Credential) -> bool:
        return tuple(pair) in self.pairs or (pair[0] in self._users and pair[1] in self._passwords)

    def __len__(self) -> int:
        return len(self.pairs) + len(self._users) * len(self._passwords)

    def member_mask(self, table: CredentialTable) -> np.ndarray:
        return np.fromiter((p in self for p in table.pairs), dtype=bool, count=len(table))


# ---------------------------------------------------------------------------
# Malware
# ---------------------------------------------------------------------------


class ScanSource(str, Enum):
    BOTS = "bots"
    EXTERNAL = "external-scanner"
    C2 = "c2"


class Persistence(str, Enum):
    VOLATILE = "volatile"
    PERSISTENT = "persistent"


class C2Addressing(str, Enum):
    HARDCODED = "hard-coded"
    DOMAIN = "domain"


@dataclass
class MalwareSpec:
    name: str
    dictionary: Dictionary = field(default_factory=Dictionary)
    scan_rate: float = 0.0
    scans_from: ScanSource = ScanSource.BOTS
    scanners: int = 1
    persistence: Persistence = Persistence.VOLATILE
    eviction_list: frozenset[str] = frozenset()
    closes_entry_ports: bool = False
    vectors: frozenset[str] = frozenset()
    exploit_ids: frozenset[str] = frozenset()
    crash_probability: float = 0.0
    c2_addressing: C2Addressing = C2Addressing.DOMAIN
    payload_size: float = 8e6  # bits
    brute_force_delay: float = 5.0

    def __post_init__(self):
        if not self.scan_rate >= 0:
            raise ValueError(f"{self.name}: scan rate must be >= 0")
        if not 0.0 <= self.crash_probability <= 1.0:
            raise ValueError(f"{self.name}: crash probability must lie in [0, 1]")
        if self.payload_size < 0 or self.brute_force_delay < 0:
            raise ValueError(f"{self.name}: payload size and brute-force delay must be >= 0")
        if self.scanners < 0:
            raise ValueError(f"{self.name}: scanner count must be >= 0")
        if self.name in self.eviction_list:
            raise ValueError(f"{self.name}: malware cannot evict itself")
        for v in self.exploit_ids:
            if v not in VULNERABILITIES:
                raise ValueError(f"{self.name}: unknown vulnerability {v!r}")
        self.eviction_list = frozenset(self.eviction_list)
        self.vectors = frozenset(self.vectors)
        self.exploit_ids = frozenset(self.exploit_ids)

    @property
    def exploit_bits(self) -> int:
        return vuln_mask(self.exploit_ids)

    @property
    def exploit_ports(self) -> int:
        return vuln_port_mask(self.exploit_ids)

    @property
    def login_ports(self) -> int:
        return LOGIN_MASK if len(self.dictionary) else 0

    @property
    def scan_ports(self) -> int:
        return self.exploit_ports | self.login_ports


# ---------------------------------------------------------------------------
# Device state machine
# ---------------------------------------------------------------------------


class State(IntEnum):
    CLEAN = 0
    SCANNED = 1
    COMPROMISED = 2
    INFECTED = 3
    REBOOTING = 4
    CRASHED = 5


class Mode(IntEnum):
    DORMANT = 0
    ATTACKING = 1


_S = State
LEGAL_TRANSITIONS: frozenset[tuple[State, State]] = frozenset(
    [
        (_S.CLEAN, _S.SCANNED),
        (_S.SCANNED, _S.SCANNED),
        (_S.SCANNED, _S.COMPROMISED),
        (_S.CLEAN, _S.COMPROMISED),
        (_S.COMPROMISED, _S.INFECTED),
        (_S.COMPROMISED, _S.CLEAN),  # stale load
        (_S.CLEAN, _S.CRASHED),
        (_S.SCANNED, _S.CRASHED),
        (_S.INFECTED, _S.INFECTED),  # eviction by a competitor
        (_S.REBOOTING, _S.CLEAN),
        (_S.REBOOTING, _S.INFECTED),  # persistent malware survives
    ]
    + [(s, _S.REBOOTING) for s in State]
)
_LEGAL = np.zeros((len(State), len(State)), dtype=bool)
for _a, _b in LEGAL_TRANSITIONS:
    _LEGAL[_a, _b] = True

OFFLINE_STATES = (State.REBOOTING, State.CRASHED)


class IllegalTransition(RuntimeError):
    pass


class PatchError(RuntimeError):
    pass


class Population:
    """Per-device state arrays plus the credential table they index."""

    def __init__(self, n: int, node_ids: np.ndarray | None = None, region: np.ndarray | None = None, trace: bool = False):
        self.n = int(n)
        self.node = np.arange(n, dtype=np.int64) if node_ids is None else np.asarray(node_ids, dtype=np.int64)
        self.region = np.zeros(n, dtype=np.int32) if region is None else np.asarray(region, dtype=np.int32)
        self.state = np.zeros(n, dtype=np.uint8)
        self.resident = np.full(n, -1, dtype=np.int16)
        self.mode = np.zeros(n, dtype=np.uint8)
        self.claim = np.full(n, -1, dtype=np.int16)
        self.scanned_by = np.full(n, -1, dtype=np.int16)
        self.services = np.zeros(n, dtype=np.uint8)
        self.closed = np.zeros(n, dtype=np.uint8)
        self.vulns = np.zeros(n, dtype=np.uint8)
        self.patched = np.zeros(n, dtype=np.uint8)
        self.cred = np.full(n, STRONG, dtype=np.int32)
        self.patchable = np.ones(n, dtype=bool)
        self.uplink = np.full(n, 100e6)
        self.profile = np.full(n, -1, dtype=np.int16)
        self.epoch = np.zeros(n, dtype=np.int64)
        self.attack_cmd = np.full(n, -1, dtype=np.int32)
        self.attack_rate = np.zeros(n)
        self.credentials = CredentialTable()
        self.infections = 0  # cumulative completed infections
        self.trace: list[tuple[float, int, int, int, int]] | None = [] if trace else None
        self._port_cache: dict[int, np.ndarray] = {}
        self.n_state = np.zeros(len(State), dtype=np.int64)
        self.n_state[State.CLEAN] = self.n
        self._infected = np.zeros(8, dtype=np.int64)
        self.version = 0  # bumped on every write that can change what a scan acts on

    def touch(self) -> None:
        self.version += 1

    # -- state changes ------------------------------------------------------

    def set_state(self, idx: np.ndarray, new: State, t: float = 0.0, resident: int | None = None, force: bool = False) -> None:
        """Move devices to ``new``, optionally changing their resident malware.

        Every move is checked against the legal transition set unless
        ``force`` is given (used only for initial seeding).
        """
        idx = np.asarray(idx, dtype=np.int64)
        if not len(idx):
            return
        self.touch()
        old = self.state[idx]
        if not force:
            ok = _LEGAL[old, int(new)]
            if not ok.all():
                bad = int(idx[np.flatnonzero(~ok)[0]])
                raise IllegalTransition(
                    f"device {bad}: {State(int(self.state[bad])).name} -> {State(new).name} is not a legal transition"
                )
        old_res = self.resident[idx]
        was_inf = old == State.INFECTED
        if was_inf.any():
            self._infected -= np.bincount(old_res[was_inf], minlength=len(self._infected))[: len(self._infected)]
        self.n_state -= np.bincount(old, minlength=len(State))
        self.n_state[int(new)] += len(idx)
        if resident is not None:
            self.resident[idx] = resident
        if new == State.INFECTED:
            res = self.resident[idx]
            if np.any(res < 0):
                raise IllegalTransition("an infected device needs a resident malware")
            self._infected += np.bincount(res, minlength=len(self._infected))[: len(self._infected)]
        if self.trace is not None and not force:
            res = self.resident[idx]
            for d, o, r in zip(idx.tolist(), old.tolist(), res.tolist()):
                self.trace.append((t, d, o, int(new), r))
        self.state[idx] = int(new)

    def set_malware_count(self, n: int) -> None:
        self._infected = np.zeros(n, dtype=np.int64)

    def infected_count(self, m: int | None = None) -> int:
        if m is None:
            return int(self.n_state[State.INFECTED])
        return int(self._infected[m])

    def counts(self) -> dict[State, int]:
        return {s: int(self.n_state[s]) for s in State}

    def infected_by(self, m: int) -> np.ndarray:
        return np.flatnonzero((self.state == State.INFECTED) & (self.resident == m))

    def offline(self) -> int:
        return int(self.n_state[State.REBOOTING] + self.n_state[State.CRASHED])

    def devices_with_ports(self, mask: int) -> np.ndarray:
        """Devices exposing any of the ports in ``mask`` (ignores closures)."""
        hit = self._port_cache.get(mask)
        if hit is None:
            hit = np.flatnonzero(self.services & mask)
            self._port_cache[mask] = hit
        return hit

    def assign(
        self,
        idx: np.ndarray,
        *,
        services: int = 0,
        vulns: int = 0,
        patchable: bool = True,
        uplink: np.ndarray | float = 100e6,
        cred: np.ndarray | int = STRONG,
        profile: int = -1,
    ) -> None:
        uplink = np.broadcast_to(np.asarray(uplink, dtype=float), np.shape(idx))
        if np.any(~(uplink > 0)):
            raise ValueError("uplink rate must be positive")
        self.touch()
        self.services[idx] = services
        self.vulns[idx] = vulns
        self.patchable[idx] = patchable
        self.uplink[idx] = uplink
        self.cred[idx] = cred
        self.profile[idx] = profile
        self._port_cache.clear()


# ---------------------------------------------------------------------------
# Scanning
# ---------------------------------------------------------------------------


@dataclass
class AddressSpace:
    """Device placement inside a flat address space of ``size`` addresses."""

    size: int
    addresses: np.ndarray  # sorted
    devices: np.ndarray  # device at addresses[i]

    @classmethod
    def place(cls, size: int, n_devices: int, rng: np.random.Generator) -> "AddressSpace":
        if n_devices > size:
            raise ValueError("address space smaller than the device population")
        addr = np.sort(rng.choice(size, n_devices, replace=False))
        return cls(int(size), addr, rng.permutation(n_devices))

    def occupants(self, probes: np.ndarray) -> np.ndarray:
        pos = np.searchsorted(self.addresses, probes)
        pos = np.minimum(pos, len(self.addresses) - 1)
        hit = self.addresses[pos] == probes
        return self.devices[pos[hit]]


def scan_step(
    pop: Population, malware: MalwareSpec, space: AddressSpace, rng: np.random.Generator, dt: float = 1.0
) -> np.ndarray:
    """One scanning agent probing for ``dt`` seconds, without replacement.

    Returns devices that expose a service the malware targets.
    """
    k = int(round(malware.scan_rate * dt))
    k = min(k, space.size)
    if k <= 0:
        return np.zeros(0, dtype=np.int64)
    probes = rng.choice(space.size, k, replace=False)
    found = space.occupants(probes)
    visible = pop.services[found] & ~pop.closed[found]
    return np.sort(found[(visible & malware.scan_ports) != 0]).astype(np.int64)


def hit_probability(n_scanners: float, probes_each: float, address_space: float) -> float:
    """Chance that one address is probed by at least one of ``n_scanners`` in a tick."""
    if n_scanners <= 0 or probes_each <= 0:
        return 0.0
    frac = probes_each / address_space
    if frac >= 1.0:
        return 1.0
    return -math.expm1(n_scanners * math.log1p(-frac))


def aggregate_scan(
    pop: Population,
    malware: MalwareSpec,
    n_scanners: float,
    dt: float,
    address_space: float,
    rng: np.random.Generator,
) -> np.ndarray:
    """Devices hit by any of ``n_scanners`` uniform scanners during one tick.

    Each device exposing a targeted port is hit independently with the
    per-tick hit probability, drawn as a binomial count plus a uniform subset.
    """
    p = hit_probability(n_scanners, malware.scan_rate * dt, address_space)
    cand = pop.devices_with_ports(malware.scan_ports)
    if p <= 0 or not len(cand):
        return np.zeros(0, dtype=np.int64)
    h = int(rng.binomial(len(cand), p))
    if h == 0:
        return np.zeros(0, dtype=np.int64)
    return np.sort(cand[rng.choice(len(cand), h, replace=False)])


# ---------------------------------------------------------------------------
# Infection vectors
# ---------------------------------------------------------------------------


class ExploitOutcome(str, Enum):
    SUCCESS = "success"
    CRASH = "crash"
    FAILURE = "failure"


def brute_force(pop: Population, idx: np.ndarray, dictionary: Dictionary) -> np.ndarray:
    """Which devices in ``idx`` use a credential inside ``dictionary``."""
    idx = np.asarray(idx, dtype=np.int64)
    member = dictionary.member_mask(pop.credentials)
    cred = pop.cred[idx]
    out = np.zeros(len(idx), dtype=bool)
    known = cred >= 0
    out[known] = member[cred[known]]
    return out


def exploit_vulnerability(
    pop: Population, idx: np.ndarray, malware: MalwareSpec, rng: np.random.Generator
) -> tuple[np.ndarray, np.ndarray]:
    """Try the malware's exploits; returns (success mask, crash mask).

    Devices patched against every exploit the malware carries are neither
    compromised nor crashed by it.
    """
    idx = np.asarray(idx, dtype=np.int64)
    bits = malware.exploit_bits
    if not bits or not len(idx):
        return np.zeros(len(idx), bool), np.zeros(len(idx), bool)
    vulnerable = (pop.vulns[idx] & ~pop.patched[idx] & bits) != 0
    exposed = ((pop.services[idx] & ~pop.closed[idx]) & malware.exploit_ports) != 0
    immune = (pop.patched[idx] & bits) == bits
    success = vulnerable & exposed
    fragile = exposed & ~success & ~immune
    crash = np.zeros(len(idx), dtype=bool)
    if malware.crash_probability > 0 and fragile.any():
        crash[fragile] = rng.random(int(fragile.sum())) < malware.crash_probability
    return success, crash


def exploit_one(pop: Population, device: int, vuln_id: str, malware: MalwareSpec, rng: np.random.Generator, t: float = 0.0) -> ExploitOutcome:
    """Single-device exploit attempt that applies the resulting transition."""
    if vuln_id not in VULN_BITS:
        raise KeyError(f"unknown vulnerability {vuln_id!r}")
    st = State(int(pop.state[device]))
    if st not in (State.CLEAN, State.SCANNED):
        raise IllegalTransition(f"device {device} must be clean or scanned to be exploited, is {st.name}")
    bit = 1 << VULN_BITS[vuln_id]
    if pop.vulns[device] & bit and not pop.patched[device] & bit:
        pop.set_state([device], State.COMPROMISED, t)
        pop.claim[device] = -1
        pop.touch()
        return ExploitOutcome.SUCCESS
    if not pop.patched[device] & bit and rng.random() < malware.crash_probability:
        pop.set_state([device], State.CRASHED, t)
        pop.epoch[device] += 1
        return ExploitOutcome.CRASH
    return ExploitOutcome.FAILURE


# ---------------------------------------------------------------------------
# Infrastructure
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class ReportingRecord:
    device: int
    credential: Credential | None
    reported_at: float
    malware: int
    epoch: int


class ReportingServer:
    """One-way sink of scan results: later reports for a device replace earlier ones."""

    def __init__(self, node: int = -1):
        self.node = node
        self.records: dict[int, ReportingRecord] = {}
        self.received = 0

    def report(self, record: ReportingRecord) -> int:
        self.records[record.device] = record
        self.received += 1
        return len(self.records)

    def report_many(self, pop: Population, idx: np.ndarray, malware: int, t: float) -> int:
        for d, c, e in zip(idx.tolist(), pop.cred[idx].tolist(), pop.epoch[idx].tolist()):
            self.records[d] = ReportingRecord(d, pop.credentials.pair(c), t, malware, e)
        self.received += len(idx)
        return len(self.records)

    def take(self, device: int) -> ReportingRecord | None:
        return self.records.pop(device, None)


@dataclass
class Botnet:
    """Infrastructure of one malware family."""

    index: int
    spec: MalwareSpec
    c2: int = -1
    reporting: ReportingServer = field(default_factory=ReportingServer)
    loader: int = -1
    distribution: int = -1
    c2_alive: bool = True
    registered: int = 0
    evicts: np.ndarray = field(default_factory=lambda: np.zeros(0, dtype=np.int16))
    # (population version, workable devices or None if not yet computed)
    pool_cache: tuple[int, np.ndarray | None] | None = field(default=None, repr=False, compare=False)


def build_botnets(specs: Sequence[MalwareSpec]) -> list[Botnet]:
    names = {s.name: i for i, s in enumerate(specs)}
    if len(names) != len(specs):
        raise ValueError("duplicate malware names")
    out = []
    for i, s in enumerate(specs):
        unknown = [e for e in s.eviction_list if e not in names]
        if unknown:
            raise ValueError(f"{s.name}: eviction list names unknown malware {unknown}")
        out.append(Botnet(i, s, evicts=np.array(sorted(names[e] for e in s.eviction_list), dtype=np.int16)))
    return out


# ---------------------------------------------------------------------------
# Lifecycle stages
# ---------------------------------------------------------------------------


def actionable(pop: Population, idx: np.ndarray, bot: Botnet) -> np.ndarray:
    """Filter scan hits down to devices where the malware can do something now.

    The device must be clean, scanned, or infected by a family this one
    evicts; not already claimed by an in-flight infection; expose a targeted
    port that is not closed against this family; and offer either a login
    or an exploit attempt that can succeed or crash it.
    """
    idx = np.asarray(idx, dtype=np.int64)
    if not len(idx):
        return idx
    spec = bot.spec
    # the full device range needs no gathers; every mask is then a plain view
    full = len(idx) == pop.n and idx[0] == 0 and idx[-1] == pop.n - 1 and bool((np.diff(idx) == 1).all())

    def take(arr: np.ndarray) -> np.ndarray:
        return arr if full else arr[idx]

    st = take(pop.state)
    # plain ints: comparing against IntEnum members is an order of magnitude slower
    clean_like = (st == int(State.CLEAN)) | (st == int(State.SCANNED))
    if len(bot.evicts):
        evictable = (st == int(State.INFECTED)) & np.isin(take(pop.resident), bot.evicts)
        candidate = clean_like | evictable
        # a resident that closed ports keeps competitors out unless they can evict it
        services = take(pop.services)
        visible = np.where(evictable, services, services & ~take(pop.closed))
    else:
        candidate = clean_like
        visible = take(pop.services) & ~take(pop.closed)
    effect = (visible & spec.login_ports) != 0
    # logging in again where this family already failed changes nothing
    repeat = np.flatnonzero(effect & (st == int(State.SCANNED)) & (take(pop.scanned_by) == bot.index))
    if len(repeat):
        effect[repeat] = brute_force(pop, repeat if full else idx[repeat], spec.dictionary)
    bits = spec.exploit_bits
    if bits:
        patched = take(pop.patched)
        vulnerable = (take(pop.vulns) & ~patched & bits) != 0
        if spec.crash_probability > 0:
            vulnerable |= clean_like & ((patched & bits) != bits)
        effect |= ((visible & spec.exploit_ports) != 0) & vulnerable
    keep = candidate & effect & (take(pop.claim) == -1)
    return np.flatnonzero(keep) if full else idx[keep]


def workable(pop: Population, bot: Botnet) -> np.ndarray:
    """All devices a scan hit would currently act on."""
    return actionable(pop, pop.devices_with_ports(bot.spec.scan_ports), bot)


def scan_tick_hits(
    pop: Population, bot: Botnet, n_scanners: float, dt: float, address_space: float, rng: np.random.Generator
) -> np.ndarray:
    """Workable devices hit during one tick by ``n_scanners`` uniform scanners.

    Every device is hit independently with the same per-tick probability, so
    drawing from all port-exposing devices and then filtering gives the same
    distribution as drawing directly among workable ones. The cheaper route is
    picked by the expected hit count, unless the workable set is cached from
    a tick after which nothing changed.
    """
    p = hit_probability(n_scanners, bot.spec.scan_rate * dt, address_space)
    if p <= 0:
        return np.zeros(0, dtype=np.int64)
    cand = pop.devices_with_ports(bot.spec.scan_ports)
    cache = bot.pool_cache
    seen = cache is not None and cache[0] == pop.version
    if not seen and p * len(cand) <= len(cand) / 64:
        # remember the version so a quiet tick switches to the cached pool
        bot.pool_cache = (pop.version, None)
        return actionable(pop, aggregate_scan(pop, bot.spec, n_scanners, dt, address_space, rng), bot)
    if not seen or cache[1] is None:
        bot.pool_cache = (pop.version, actionable(pop, cand, bot))
    pool = bot.pool_cache[1]
    h = int(rng.binomial(len(pool), p))
    if h == 0:
        return np.zeros(0, dtype=np.int64)
    return np.sort(pool[rng.choice(len(pool), h, replace=False)])


@dataclass
class Discovery:
    compromised: np.ndarray  # exploit succeeded, ready to report
    brute: np.ndarray  # brute force in progress
    crashed: np.ndarray


def discover(
    pop: Population, hits: np.ndarray, bot: Botnet, rng: np.random.Generator, t: float, *, filtered: bool = False
) -> Discovery:
    """Act on scan hits: exploit first, then fall back to a credential login.

    ``filtered`` skips the actionable check for hits that already passed it
    in the same tick, as :func:`scan_tick_hits` output does.
    """
    m = bot.index
    spec = bot.spec
    idx = np.asarray(hits, dtype=np.int64) if filtered else actionable(pop, hits, bot)
    empty = np.zeros(0, dtype=np.int64)
    if not len(idx):
        return Discovery(empty, empty, empty)
    infected = pop.state[idx] == State.INFECTED
    pop.scanned_by[idx] = m
    pop.touch()

    success, crash = exploit_vulnerability(pop, idx, spec, rng)
    crash &= ~infected  # an already infected device is not disturbed by a failed exploit
    crashed = idx[crash]
    if len(crashed):
        pop.set_state(crashed, State.CRASHED, t)
        pop.epoch[crashed] += 1
    won = idx[success]
    to_comp = won[pop.state[won] != State.INFECTED]
    pop.set_state(to_comp, State.COMPROMISED, t)
    pop.claim[won] = m

    rest = ~success & ~crash
    visible = np.where(infected, pop.services[idx], pop.services[idx] & ~pop.closed[idx])
    can_login = rest & ((visible & spec.login_ports) != 0)
    brute = idx[can_login]
    newly = brute[pop.state[brute] != State.INFECTED]
    pop.set_state(newly, State.SCANNED, t)
    pop.claim[brute] = m
    return Discovery(won, brute, crashed)


def finish_brute_force(
    pop: Population, idx: np.ndarray, epochs: np.ndarray, bot: Botnet, t: float
) -> np.ndarray:
    """Resolve pending login attempts; returns devices whose credential was guessed."""
    idx = np.asarray(idx, dtype=np.int64)
    live = (pop.epoch[idx] == epochs) & (pop.claim[idx] == bot.index)
    idx = idx[live]
    if not len(idx):
        return idx
    ok = brute_force(pop, idx, bot.spec.dictionary)
    won = idx[ok]
    to_comp = won[pop.state[won] == State.SCANNED]
    pop.set_state(to_comp, State.COMPROMISED, t)
    pop.claim[idx[~ok]] = -1
    pop.touch()
    return won


def complete_load(pop: Population, idx: np.ndarray, bot: Botnet, t: float) -> tuple[np.ndarray, np.ndarray]:
    """Payload download finished: infect live targets, abandon stale ones.

    A target is stale when it was rebooted, patched or re-credentialed after
    it was reported (its epoch moved on), or its record is gone.
    """
    idx = np.asarray(idx, dtype=np.int64)
    rep = bot.reporting
    live = np.zeros(len(idx), dtype=bool)
    for i, d in enumerate(idx.tolist()):
        rec = rep.take(d)
        live[i] = rec is not None and rec.epoch == pop.epoch[d] and rec.malware == bot.index
    live &= pop.claim[idx] == bot.index
    st = pop.state[idx]
    evicting = (st == State.INFECTED) & np.isin(pop.resident[idx], bot.evicts)
    live &= (st == State.COMPROMISED) | evicting
    good, stale = idx[live], idx[~live]

    stale_mine = stale[pop.claim[stale] == bot.index]
    pop.claim[stale_mine] = -1
    pop.touch()
    back = stale_mine[pop.state[stale_mine] == State.COMPROMISED]
    pop.set_state(back, State.CLEAN, t)

    infect(pop, good, bot, t)
    return good, stale


def infect(pop: Population, idx: np.ndarray, bot: Botnet, t: float) -> np.ndarray:
    """Install the malware, evicting an allowed competitor, then register and go dormant."""
    idx = np.asarray(idx, dtype=np.int64)
    if not len(idx):
        return idx
    st = pop.state[idx]
    res = pop.resident[idx]
    blocked = (st == State.INFECTED) & ~np.isin(res, bot.evicts)
    if blocked.any():
        d = int(idx[np.flatnonzero(blocked)[0]])
        raise IllegalTransition(
            f"device {d}: resident malware {int(pop.resident[d])} is not in the eviction list of {bot.spec.name}"
        )
    pop.set_state(idx, State.INFECTED, t, resident=bot.index)
    pop.mode[idx] = Mode.DORMANT
    pop.attack_cmd[idx] = -1
    pop.attack_rate[idx] = 0.0
    pop.claim[idx] = -1
    pop.touch()
    # closure applies to the services this family uses to get in
    pop.closed[idx] = (pop.services[idx] & bot.spec.scan_ports) if bot.spec.closes_entry_ports else 0
    pop.infections += len(idx)
    bot.registered += len(idx)
    return idx


def seed_infections(pop: Population, idx: np.ndarray, bot: Botnet) -> None:
    """Initial bots present at time zero; no lifecycle transitions are recorded."""
    idx = np.asarray(idx, dtype=np.int64)
    bad = pop.state[idx] != State.CLEAN
    if bad.any():
        raise ValueError("can only seed clean devices")
    pop.set_state(idx, State.INFECTED, resident=bot.index, force=True)
    pop.mode[idx] = Mode.DORMANT
    pop.closed[idx] = (pop.services[idx] & bot.spec.scan_ports) if bot.spec.closes_entry_ports else 0
    pop.touch()
    bot.registered += len(idx)


def susceptible(pop: Population, spec: MalwareSpec) -> np.ndarray:
    """Clean devices this malware could take over, ignoring timing."""
    member = spec.dictionary.member_mask(pop.credentials)
    cred = pop.cred
    guessable = np.zeros(pop.n, dtype=bool)
    known = cred >= 0
    guessable[known] = member[cred[known]]
    login = (pop.services & spec.login_ports) != 0
    vuln = ((pop.vulns & spec.exploit_bits) != 0) & ((pop.services & spec.exploit_ports) != 0)
    return np.flatnonzero((pop.state == State.CLEAN) & ((login & guessable) | vuln))


# ---------------------------------------------------------------------------
# Command and control
# ---------------------------------------------------------------------------


def c2_broadcast(
    pop: Population,
    bot: Botnet,
    command_id: int,
    vector: str,
    rate_fn: Callable[[int], np.ndarray] | None = None,
    rng: np.random.Generator | None = None,
    share: float = 1.0,
) -> np.ndarray:
    """Switch dormant bots of this family to attacking; returns the tasked devices.

    ``share`` tasks only that fraction of the dormant bots, drawn uniformly.
    ``rate_fn(n)`` supplies per-bot emission rates, which are capped at each
    bot's uplink.
    """
    if vector not in bot.spec.vectors:
        raise ValueError(f"{bot.spec.name} does not support vector {vector!r}")
    if not 0.0 <= share <= 1.0:
        raise ValueError("share must lie in [0, 1]")
    if not bot.c2_alive:
        return np.zeros(0, dtype=np.int64)
    dormant = np.flatnonzero(
        (pop.state == State.INFECTED) & (pop.resident == bot.index) & (pop.mode == Mode.DORMANT)
    )
    if share < 1.0 and len(dormant):
        if rng is None:
            raise ValueError("partial share needs a random generator")
        k = int(round(share * len(dormant)))
        dormant = np.sort(rng.choice(dormant, k, replace=False))
    pop.mode[dormant] = Mode.ATTACKING
    pop.attack_cmd[dormant] = command_id
    if rate_fn is not None and len(dormant):
        rates = np.asarray(rate_fn(len(dormant)), dtype=float)
        if np.any(~(rates > 0)):
            raise ValueError("per-bot rate draws must be positive")
        pop.attack_rate[dormant] = rates
    return dormant


def end_command(pop: Population, command_id: int) -> np.ndarray:
    idx = np.flatnonzero(pop.attack_cmd == command_id)
    pop.mode[idx] = Mode.DORMANT
    pop.attack_cmd[idx] = -1
    pop.attack_rate[idx] = 0.0
    return idx
