"""Scenario files: parsing, validation, serialization and bundled presets.

Scenarios are YAML documents. Parsing collects every problem it finds, each
tagged with the line it came from, instead of stopping at the first one.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field, replace
from importlib import resources
from typing import Any, Iterable

import jsonschema
import yaml

from .attacks import ALL_VECTORS, DNS_VECTORS, AttackError, AttackVector
from .botnet import SERVICES, VULNERABILITIES, C2Addressing, Persistence, ScanSource
from .dns import DnsError, DomainName
from .engine import Bernoulli, Choice, Distribution, Exponential, Uniform, dist_to_config
from .topology import DEFAULT_LATENCY, LinkClasses, NodeKind, RegionSpec, ServerSpec, TopologySpec, validate_topology
from .units import UnitError, parse_quantity

PRESET_NAMES = (
    "krebs623",
    "ovh1100",
    "dyn-watertorture",
    "dt-tr064",
    "lappeenranta-loop",
    "mirai-growth",
    "cctv-http",
)

SERVER_KINDS = {
    "target": NodeKind.TARGET,
    "recursive-dns": NodeKind.RECURSIVE_DNS,
    "auth-dns": NodeKind.AUTH_DNS,
    "c2-host": NodeKind.C2_HOST,
    "reporting-server": NodeKind.REPORTING,
    "loader-host": NodeKind.LOADER,
    "distribution-server": NodeKind.DISTRIBUTION,
}

DEFENSE_KINDS = (
    "enable-bcp38",
    "reboot",
    "change-credentials",
    "patch",
    "attach-scrubber",
    "anycast-rebalance",
    "c2-takedown",
)

DEVICE_STATES = ("clean", "scanned", "compromised", "infected", "rebooting", "crashed")


def vendor_default(i: int) -> tuple[str, str]:
    """Synthetic factory credential number ``i``; stands in for real default lists."""
    return (f"vendor{i:03d}", f"factory{i:03d}")


# ---------------------------------------------------------------------------
# Spec dataclasses (config level, no runtime state)
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class LegitSource:
    region: str
    rate: float  # bits/s


@dataclass(frozen=True)
class FailSafe:
    threshold: float = 1.0
    reboot_delay: float = 60.0


@dataclass(frozen=True)
class ServerEntry:
    name: str
    kind: str
    core: int = 0
    capacity: float | None = None
    domain: str | None = None
    legitimate: tuple[LegitSource, ...] = ()
    fail_safe: FailSafe | None = None


@dataclass(frozen=True)
class TopologyConfig:
    regions: tuple[RegionSpec, ...]
    core_routers: int = 1
    capacity: LinkClasses = field(default_factory=LinkClasses)
    latency: LinkClasses = field(default_factory=lambda: LinkClasses(**vars(DEFAULT_LATENCY)))
    servers: tuple[ServerEntry, ...] = ()


@dataclass(frozen=True)
class CredentialMix:
    default_share: float = 0.0
    vendor_defaults: int = 0
    pairs: tuple[tuple[str, str], ...] = ()

    @property
    def default_pool(self) -> tuple[tuple[str, str], ...]:
        return tuple(vendor_default(i) for i in range(self.vendor_defaults)) + self.pairs


@dataclass(frozen=True)
class ProfileSpec:
    name: str
    count: int
    regions: tuple[str, ...] = ()
    services: tuple[int, ...] = ()
    vulnerabilities: tuple[str, ...] = ()
    patchable: bool = True
    uplink: Distribution = field(default_factory=lambda: Choice.fixed(100e6))
    credentials: CredentialMix = field(default_factory=CredentialMix)


@dataclass(frozen=True)
class PopulationSpec:
    address_space: float = 2.0**32
    profiles: tuple[ProfileSpec, ...] = ()


@dataclass(frozen=True)
class DictionarySpec:
    vendor_defaults: int = 0
    pairs: tuple[tuple[str, str], ...] = ()
    generated_usernames: int = 0
    generated_passwords: int = 0


@dataclass(frozen=True)
class SeedSpec:
    infected: int = 0
    profile: str | None = None


@dataclass(frozen=True)
class MalwareEntry:
    name: str
    dictionary: DictionarySpec = field(default_factory=DictionarySpec)
    scan_rate: float = 0.0
    scans_from: ScanSource = ScanSource.BOTS
    scanners: int = 1
    persistence: Persistence = Persistence.VOLATILE
    eviction: tuple[str, ...] = ()
    closes_entry_ports: bool = False
    vectors: tuple[str, ...] = ()
    exploits: tuple[str, ...] = ()
    crash_probability: float = 0.0
    c2_addressing: C2Addressing = C2Addressing.DOMAIN
    payload_size: float = 8e6
    brute_force_delay: float = 5.0
    seed: SeedSpec = field(default_factory=SeedSpec)
    c2: str | None = None
    reporting: str | None = None
    loader: str | None = None
    distribution: str | None = None


@dataclass(frozen=True)
class AttackEntry:
    malware: str
    target: str
    vector: str
    rate: Distribution
    start: float
    duration: float
    share: float = 1.0
    reflectors: tuple[str, ...] = ()
    amplification: float | None = None
    pop: str | None = None  # DNS vectors only: aim at one point of presence

    @property
    def end(self) -> float:
        return self.start + self.duration

    def to_vector(self) -> AttackVector:
        return AttackVector(self.vector, self.amplification)


@dataclass(frozen=True)
class DeviceSelector:
    profile: str | None = None
    region: str | None = None
    state: str | None = None
    malware: str | None = None
    fraction: float = 1.0


@dataclass(frozen=True)
class DefenseEntry:
    at: float
    action: str
    devices: DeviceSelector | None = None
    regions: tuple[str, ...] = ()  # empty means every access region
    delay: float = 60.0
    credential: tuple[str, str] | None = None  # None means a strong unique one
    vulnerability: str | None = None
    target: str | None = None
    zone: str | None = None
    pop: str | None = None
    pops: tuple[str, ...] = ()
    capacity: float = math.inf
    efficacy: tuple[tuple[str, float], ...] = ()
    legitimate_passthrough: float = 1.0
    malware: str | None = None


@dataclass(frozen=True)
class PopEntry:
    name: str
    regions: tuple[str, ...]
    servers: int = 1
    capacity: float = 1000.0  # queries/s per server
    core: int = 0


@dataclass(frozen=True)
class ZoneSpec:
    domain: str
    pops: tuple[PopEntry, ...]
    legitimate: tuple[tuple[str, float], ...] = ()  # (region, queries/s)


@dataclass(frozen=True)
class DnsSpec:
    ttl: float = 300.0
    retries: int = 0
    retry_spacing: float = 1.0
    tick: float = 1.0
    query_size: float = 800.0  # bits per query on the wire
    resolver_capacity: float = math.inf
    exact_limit: int = 2000
    zones: tuple[ZoneSpec, ...] = ()


@dataclass(frozen=True)
class MetricsSpec:
    cadence: float = 1.0
    scan_tick: float = 1.0


@dataclass(frozen=True)
class ScenarioSpec:
    name: str
    horizon: float
    topology: TopologyConfig
    seed: int = 0
    description: str = ""
    population: PopulationSpec = field(default_factory=PopulationSpec)
    malware: tuple[MalwareEntry, ...] = ()
    dns: DnsSpec = field(default_factory=DnsSpec)
    attacks: tuple[AttackEntry, ...] = ()
    defenses: tuple[DefenseEntry, ...] = ()
    metrics: MetricsSpec = field(default_factory=MetricsSpec)
    annotations: tuple[tuple[str, str], ...] = ()

    def with_overrides(self, seed: int | None = None, horizon: float | None = None) -> "ScenarioSpec":
        out = self
        if seed is not None:
            out = replace(out, seed=int(seed))
        if horizon is not None:
            out = replace(out, horizon=float(horizon))
        return out


# ---------------------------------------------------------------------------
# Errors
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class ValidationIssue:
    path: str
    line: int | None
    message: str

    def __str__(self) -> str:
        where = f"line {self.line}" if self.line else "?"
        return f"{where}: {self.path or '<root>'}: {self.message}"


class ScenarioError(ValueError):
    def __init__(self, issues: list[ValidationIssue]):
        issues = sorted(issues, key=lambda i: i.line or 0)
        self.issues = issues
        super().__init__("invalid scenario:\n" + "\n".join(f"  {i}" for i in issues))


# ---------------------------------------------------------------------------
# YAML with line numbers
# ---------------------------------------------------------------------------


def _compose_lines(text: str) -> tuple[dict[tuple, int], list[ValidationIssue]]:
    """Map each key/item path to its 1-based line; also flag duplicate keys."""
    lines: dict[tuple, int] = {}
    issues: list[ValidationIssue] = []
    root = yaml.compose(text, Loader=yaml.SafeLoader)
    if root is None:
        return lines, issues

    def walk(node, path):
        lines.setdefault(path, node.start_mark.line + 1)
        if isinstance(node, yaml.MappingNode):
            seen = set()
            for k, v in node.value:
                key = k.value
                if key in seen:
                    issues.append(ValidationIssue(_fmt_path(path + (key,)), k.start_mark.line + 1, "duplicate key"))
                seen.add(key)
                lines[path + (key,)] = k.start_mark.line + 1
                walk(v, path + (key,))
        elif isinstance(node, yaml.SequenceNode):
            for i, v in enumerate(node.value):
                walk(v, path + (i,))

    walk(root, ())
    return lines, issues


def _fmt_path(path: Iterable) -> str:
    out = ""
    for p in path:
        out += f"[{p}]" if isinstance(p, int) else (f".{p}" if out else str(p))
    return out


def _line_for(lines: dict[tuple, int], path: tuple) -> int | None:
    path = tuple(path)
    while path:
        if path in lines:
            return lines[path]
        path = path[:-1]
    return lines.get(())


def load_schema() -> dict:
    text = resources.files("iotbotsim").joinpath("schema/scenario.schema.json").read_text()
    return json.loads(text)


# ---------------------------------------------------------------------------
# Parsing
# ---------------------------------------------------------------------------


class _Collector:
    def __init__(self, lines: dict[tuple, int]):
        self.lines = lines
        self.issues: list[ValidationIssue] = []

    def add(self, path: tuple, message: str) -> None:
        self.issues.append(ValidationIssue(_fmt_path(path), _line_for(self.lines, path), message))

    def qty(self, value, kind: str, path: tuple, default: float | None = None) -> float:
        if value is None:
            return default  # type: ignore[return-value]
        try:
            return parse_quantity(value, kind)
        except UnitError as exc:
            self.add(path, str(exc))
            return default if default is not None else 0.0

    def dist(self, value, kind: str, path: tuple) -> Distribution:
        try:
            return parse_distribution(value, kind)
        except (UnitError, ValueError, TypeError, KeyError) as exc:
            self.add(path, f"bad distribution: {exc}")
            return Choice.fixed(1.0)


def parse_distribution(cfg, kind: str) -> Distribution:
    """Distribution whose values may carry units, e.g. ``{uniform: [1Mbps, 30Mbps]}``."""
    q = lambda v: parse_quantity(v, kind)
    if isinstance(cfg, (int, float, str)) and not isinstance(cfg, bool):
        return Choice.fixed(q(cfg))
    if not isinstance(cfg, dict) or len(cfg) != 1:
        raise ValueError(f"expected a quantity or a single-key mapping, got {cfg!r}")
    ((key, val),) = cfg.items()
    if key == "fixed":
        return Choice.fixed(q(val))
    if key == "uniform":
        a, b = val
        return Uniform(q(a), q(b))
    if key == "bernoulli":
        return Bernoulli(float(val))
    if key == "exponential":
        # given as a mean so that units read naturally
        return Exponential(1.0 / q(val))
    if key == "choice":
        return Choice(tuple(q(v) for v in val["values"]), tuple(float(w) for w in val["weights"]))
    raise ValueError(f"unknown distribution {key!r}")


def distribution_config(d: Distribution) -> Any:
    if isinstance(d, Exponential):
        return {"exponential": 1.0 / d.rate}
    cfg = dist_to_config(d)
    if isinstance(d, Choice) and len(d.values) == 1:
        return d.values[0]
    return cfg


def parse_scenario(text: str) -> ScenarioSpec:
    """Validate a scenario document; raises ScenarioError listing every problem."""
    try:
        lines, issues = _compose_lines(text)
        data = yaml.safe_load(text)
    except yaml.YAMLError as exc:
        mark = getattr(exc, "problem_mark", None)
        raise ScenarioError([ValidationIssue("", mark.line + 1 if mark else None, f"YAML syntax: {exc}")]) from exc
    col = _Collector(lines)
    col.issues.extend(issues)
    if not isinstance(data, dict):
        col.add((), "scenario must be a mapping")
        raise ScenarioError(col.issues)

    validator = jsonschema.Draft202012Validator(load_schema())
    for err in sorted(validator.iter_errors(data), key=lambda e: (list(map(str, e.absolute_path)), e.message)):
        path = tuple(err.absolute_path)
        if err.validator == "additionalProperties" and isinstance(err.instance, dict):
            known = err.schema.get("properties", {})
            for key in sorted(k for k in err.instance if k not in known):
                col.add(path + (key,), f"unknown key {key!r}")
        else:
            col.add(path, err.message)
    structural = bool(col.issues)

    try:
        spec = _build(data, col)
        _cross_check(spec, col)
    except (KeyError, TypeError, ValueError, AttributeError):
        # the document is too malformed for semantic checks; schema errors say why
        if not structural:
            raise
        spec = None
    if col.issues:
        raise ScenarioError(col.issues)
    return spec


def _pairs(raw) -> tuple[tuple[str, str], ...]:
    return tuple((str(u), str(p)) for u, p in (raw or ()))


def _build(d: dict, col: _Collector) -> ScenarioSpec:
    # topology
    t = d["topology"]
    cap = LinkClasses(**{k: col.qty(v, "rate", ("topology", "capacity", k)) for k, v in {**vars(LinkClasses()), **t.get("capacity", {})}.items()})
    default_lat = TopologyConfig(()).latency
    lat = LinkClasses(**{k: col.qty(v, "duration", ("topology", "latency", k)) for k, v in {**vars(default_lat), **t.get("latency", {})}.items()})
    regions = tuple(
        RegionSpec(
            name=str(r["name"]),
            devices=int(r.get("devices", 0)),
            cpe=int(r["cpe"]),
            dslam=int(r["dslam"]),
            bras=int(r["bras"]),
            core=r.get("core"),
            resolver=bool(r.get("resolver", True)),
        )
        for r in t["regions"]
    )
    servers = []
    for i, s in enumerate(t.get("servers", [])):
        p = ("topology", "servers", i)
        fs = s.get("fail_safe")
        servers.append(
            ServerEntry(
                name=s["name"],
                kind=s["kind"],
                core=int(s.get("core", 0)),
                capacity=col.qty(s.get("capacity"), "rate", p + ("capacity",)),
                domain=s.get("domain"),
                legitimate=tuple(
                    LegitSource(l["region"], col.qty(l["rate"], "rate", p + ("legitimate", j, "rate")))
                    for j, l in enumerate(s.get("legitimate", []))
                ),
                fail_safe=None
                if fs is None
                else FailSafe(float(fs.get("threshold", 1.0)), col.qty(fs.get("reboot_delay", 60), "duration", p + ("fail_safe",))),
            )
        )
    topo = TopologyConfig(regions, int(t.get("core_routers", 1)), cap, lat, tuple(servers))

    # population
    pd = d.get("population", {})
    profiles = []
    for i, pr in enumerate(pd.get("profiles", [])):
        p = ("population", "profiles", i)
        cr = pr.get("credentials", {})
        profiles.append(
            ProfileSpec(
                name=pr["name"],
                count=int(pr["count"]),
                regions=tuple(pr.get("regions", ())),
                services=tuple(int(x) for x in pr.get("services", ())),
                vulnerabilities=tuple(pr.get("vulnerabilities", ())),
                patchable=bool(pr.get("patchable", True)),
                uplink=col.dist(pr.get("uplink", "100Mbps"), "rate", p + ("uplink",)),
                credentials=CredentialMix(
                    float(cr.get("default_share", 0.0)), int(cr.get("vendor_defaults", 0)), _pairs(cr.get("pairs"))
                ),
            )
        )
    population = PopulationSpec(col.qty(pd.get("address_space", 2**32), "count", ("population", "address_space")), tuple(profiles))

    # malware
    malware = []
    for i, m in enumerate(d.get("malware", [])):
        p = ("malware", i)
        dic = m.get("dictionary", {})
        gen = dic.get("generated", {})
        seed = m.get("seed", {})
        infra = m.get("infrastructure", {})
        malware.append(
            MalwareEntry(
                name=m["name"],
                dictionary=DictionarySpec(
                    int(dic.get("vendor_defaults", 0)),
                    _pairs(dic.get("pairs")),
                    int(gen.get("usernames", 0)),
                    int(gen.get("passwords", 0)),
                ),
                scan_rate=float(m.get("scan_rate", 0.0)),
                scans_from=ScanSource(m.get("scans_from", "bots")),
                scanners=int(m.get("scanners", 1)),
                persistence=Persistence(m.get("persistence", "volatile")),
                eviction=tuple(m.get("eviction", ())),
                closes_entry_ports=bool(m.get("closes_entry_ports", False)),
                vectors=tuple(m.get("vectors", ())),
                exploits=tuple(m.get("exploits", ())),
                crash_probability=float(m.get("crash_probability", 0.0)),
                c2_addressing=C2Addressing(m.get("c2_addressing", "domain")),
                payload_size=col.qty(m.get("payload_size", "1MB"), "size", p + ("payload_size",)),
                brute_force_delay=col.qty(m.get("brute_force_delay", 5), "duration", p + ("brute_force_delay",)),
                seed=SeedSpec(int(seed.get("infected", 0)), seed.get("profile")),
                c2=infra.get("c2"),
                reporting=infra.get("reporting"),
                loader=infra.get("loader"),
                distribution=infra.get("distribution"),
            )
        )

    # dns
    dd = d.get("dns", {})
    retry = dd.get("retry", {})
    zones = []
    for i, z in enumerate(dd.get("zones", [])):
        p = ("dns", "zones", i)
        zones.append(
            ZoneSpec(
                domain=z["domain"],
                pops=tuple(
                    PopEntry(
                        pp["name"],
                        tuple(pp.get("regions", ())),
                        int(pp.get("servers", 1)),
                        col.qty(pp.get("capacity", 1000), "qps", p + ("pops", j, "capacity")),
                        int(pp.get("core", 0)),
                    )
                    for j, pp in enumerate(z["pops"])
                ),
                legitimate=tuple(
                    (l["region"], col.qty(l["qps"], "qps", p + ("legitimate", j, "qps")))
                    for j, l in enumerate(z.get("legitimate", []))
                ),
            )
        )
    dns = DnsSpec(
        ttl=col.qty(dd.get("ttl", 300), "duration", ("dns", "ttl")),
        retries=int(retry.get("count", 0)),
        retry_spacing=col.qty(retry.get("spacing", 1), "duration", ("dns", "retry", "spacing")),
        tick=col.qty(dd.get("tick", 1), "duration", ("dns", "tick")),
        query_size=col.qty(dd.get("query_size", "100B"), "size", ("dns", "query_size")),
        resolver_capacity=col.qty(dd.get("resolver_capacity", math.inf), "qps", ("dns", "resolver_capacity")),
        exact_limit=int(dd.get("exact_limit", 2000)),
        zones=tuple(zones),
    )

    # attacks
    attacks = []
    for i, a in enumerate(d.get("attacks", [])):
        p = ("attacks", i)
        kind = "qps" if a["vector"] == "water-torture" else "rate"
        attacks.append(
            AttackEntry(
                malware=a["malware"],
                target=a["target"],
                vector=a["vector"],
                rate=col.dist(a["rate"], kind, p + ("rate",)),
                start=col.qty(a.get("start", 0), "duration", p + ("start",)),
                duration=col.qty(a["duration"], "duration", p + ("duration",)),
                share=float(a.get("share", 1.0)),
                reflectors=tuple(a.get("reflectors", ())),
                amplification=a.get("amplification"),
                pop=a.get("pop"),
            )
        )

    # defenses
    defenses = []
    for i, x in enumerate(d.get("defenses", [])):
        p = ("defenses", i)
        sel = x.get("devices")
        regions_v = x.get("regions", "all")
        defenses.append(
            DefenseEntry(
                at=col.qty(x["at"], "duration", p + ("at",)),
                action=x["action"],
                devices=None
                if sel is None
                else DeviceSelector(sel.get("profile"), sel.get("region"), sel.get("state"), sel.get("malware"), float(sel.get("fraction", 1.0))),
                regions=() if regions_v == "all" else tuple(regions_v),
                delay=col.qty(x.get("delay", 60), "duration", p + ("delay",)),
                credential=None if x.get("credential", "strong") == "strong" else tuple(map(str, x["credential"])),
                vulnerability=x.get("vulnerability"),
                target=x.get("target"),
                zone=x.get("zone"),
                pop=x.get("pop"),
                pops=tuple(x.get("pops", ())),
                capacity=col.qty(x.get("capacity", math.inf), "rate", p + ("capacity",)),
                efficacy=tuple(sorted((str(k), float(v)) for k, v in x.get("efficacy", {}).items())),
                legitimate_passthrough=float(x.get("legitimate_passthrough", 1.0)),
                malware=x.get("malware"),
            )
        )

    md = d.get("metrics", {})
    metrics = MetricsSpec(
        cadence=col.qty(md.get("cadence", 1), "duration", ("metrics", "cadence")),
        scan_tick=col.qty(md.get("scan_tick", 1), "duration", ("metrics", "scan_tick")),
    )
    return ScenarioSpec(
        name=d["name"],
        horizon=col.qty(d["horizon"], "duration", ("horizon",)),
        topology=topo,
        seed=int(d.get("seed", 0)),
        description=d.get("description", ""),
        population=population,
        malware=tuple(malware),
        dns=dns,
        attacks=tuple(attacks),
        defenses=tuple(defenses),
        metrics=metrics,
        annotations=tuple(sorted((str(k), str(v)) for k, v in d.get("annotations", {}).items())),
    )


def topology_spec(t: TopologyConfig) -> TopologySpec:
    return TopologySpec(
        list(t.regions),
        t.core_routers,
        t.capacity,
        t.latency,
        [ServerSpec(sv.name, SERVER_KINDS[sv.kind], sv.core, sv.capacity) for sv in t.servers],
    )


def _cross_check(s: ScenarioSpec, col: _Collector) -> None:
    """Semantic checks the schema cannot express: references, counts, invariants."""
    if not s.horizon > 0:
        col.add(("horizon",), "horizon must be positive")
    if not s.metrics.cadence > 0 or not s.metrics.scan_tick > 0:
        col.add(("metrics",), "cadence and scan_tick must be positive")
    if not s.dns.tick > 0:
        col.add(("dns", "tick"), "dns tick must be positive")

    topo = s.topology
    regions = {r.name for r in topo.regions}
    for msg in validate_topology(topology_spec(topo)):
        col.add(("topology",), msg)

    servers = {}
    for i, sv in enumerate(topo.servers):
        p = ("topology", "servers", i)
        if sv.name in servers:
            col.add(p + ("name",), f"duplicate server name {sv.name!r}")
        servers[sv.name] = sv
        if not 0 <= sv.core < topo.core_routers:
            col.add(p + ("core",), f"core index {sv.core} out of range")
        if sv.capacity is not None and not sv.capacity > 0:
            col.add(p + ("capacity",), "capacity must be positive")
        for j, l in enumerate(sv.legitimate):
            if l.region not in regions:
                col.add(p + ("legitimate", j, "region"), f"unknown region {l.region!r}")
            if l.rate < 0:
                col.add(p + ("legitimate", j, "rate"), "rate must be non-negative")
        if sv.legitimate and sv.kind != "target":
            col.add(p + ("legitimate",), "only targets receive legitimate traffic")
        if sv.domain is not None:
            try:
                DomainName.parse(sv.domain)
            except DnsError as exc:
                col.add(p + ("domain",), str(exc))

    # population
    n_dev = {r.name: r.devices for r in topo.regions}
    used = dict.fromkeys(n_dev, 0)
    profiles = {}
    for i, pr in enumerate(s.population.profiles):
        p = ("population", "profiles", i)
        if pr.name in profiles:
            col.add(p + ("name",), f"duplicate profile {pr.name!r}")
        profiles[pr.name] = pr
        for port in pr.services:
            if port not in SERVICES:
                col.add(p + ("services",), f"unknown service port {port}; known: {sorted(SERVICES)}")
        for v in pr.vulnerabilities:
            if v not in VULNERABILITIES:
                col.add(p + ("vulnerabilities",), f"unknown vulnerability {v!r}; known: {sorted(VULNERABILITIES)}")
            elif VULNERABILITIES[v] not in pr.services:
                col.add(p + ("vulnerabilities",), f"{v} needs port {VULNERABILITIES[v]} open")
        if pr.uplink.support[0] <= 0:
            col.add(p + ("uplink",), "uplink rate must be positive")
        if not 0 <= pr.credentials.default_share <= 1:
            col.add(p + ("credentials", "default_share"), "share must lie in [0, 1]")
        if pr.credentials.default_share > 0 and not pr.credentials.default_pool:
            col.add(p + ("credentials",), "a default share needs vendor_defaults or pairs")
        targets = pr.regions or tuple(n_dev)
        for r in targets:
            if r not in n_dev:
                col.add(p + ("regions",), f"unknown region {r!r}")
        free = sum(n_dev[r] - used[r] for r in targets if r in n_dev)
        if pr.count > free:
            col.add(p + ("count",), f"{pr.count} devices requested but only {free} unassigned in {list(targets)}")
        else:
            left = pr.count
            for r in targets:
                if r in n_dev:
                    take = min(left, n_dev[r] - used[r])
                    used[r] += take
                    left -= take
    if s.population.address_space < sum(n_dev.values()):
        col.add(("population", "address_space"), "address space is smaller than the device population")

    # malware
    names = {}
    for i, m in enumerate(s.malware):
        p = ("malware", i)
        if m.name in names:
            col.add(p + ("name",), f"duplicate malware {m.name!r}")
        names[m.name] = m
    for i, m in enumerate(s.malware):
        p = ("malware", i)
        for e in m.eviction:
            if e not in names:
                col.add(p + ("eviction",), f"unknown malware {e!r} in eviction list")
            if e == m.name:
                col.add(p + ("eviction",), "malware cannot evict itself")
        for v in m.vectors:
            if v not in ALL_VECTORS:
                col.add(p + ("vectors",), f"unknown vector {v!r}")
        for v in m.exploits:
            if v not in VULNERABILITIES:
                col.add(p + ("exploits",), f"unknown vulnerability {v!r}; known: {sorted(VULNERABILITIES)}")
        if m.scan_rate < 0:
            col.add(p + ("scan_rate",), "scan rate must be >= 0")
        if not 0 <= m.crash_probability <= 1:
            col.add(p + ("crash_probability",), "must lie in [0, 1]")
        if m.seed.profile is not None and m.seed.profile not in profiles:
            col.add(p + ("seed", "profile"), f"unknown profile {m.seed.profile!r}")
        for role in ("c2", "reporting", "loader", "distribution"):
            ref = getattr(m, role)
            if ref is not None and ref not in servers:
                col.add(p + ("infrastructure", role), f"unknown server {ref!r}")

    zones = {z.domain: z for z in s.dns.zones}
    for i, z in enumerate(s.dns.zones):
        p = ("dns", "zones", i)
        try:
            DomainName.parse(z.domain)
        except DnsError as exc:
            col.add(p + ("domain",), str(exc))
        seen_pops = set()
        for j, pp in enumerate(z.pops):
            if pp.name in seen_pops:
                col.add(p + ("pops", j, "name"), f"duplicate pop {pp.name!r}")
            seen_pops.add(pp.name)
            for r in pp.regions:
                if r not in regions:
                    col.add(p + ("pops", j, "regions"), f"unknown region {r!r}")
            if pp.capacity < 0 or pp.servers < 1:
                col.add(p + ("pops", j), "pops need >= 1 server and non-negative capacity")
            if not 0 <= pp.core < topo.core_routers:
                col.add(p + ("pops", j, "core"), f"core index {pp.core} out of range")
        for j, (r, _) in enumerate(z.legitimate):
            if r not in regions:
                col.add(p + ("legitimate", j, "region"), f"unknown region {r!r}")
    if s.dns.retries < 0:
        col.add(("dns", "retry", "count"), "retry count must be >= 0")
    if not s.dns.retry_spacing > 0:
        col.add(("dns", "retry", "spacing"), "retry spacing must be positive")

    for i, a in enumerate(s.attacks):
        p = ("attacks", i)
        m = names.get(a.malware)
        if m is None:
            col.add(p + ("malware",), f"attack references undefined malware {a.malware!r}")
        elif a.vector not in m.vectors:
            col.add(p + ("vector",), f"{a.malware} does not support vector {a.vector!r}")
        try:
            vec = a.to_vector()
        except AttackError as exc:
            col.add(p + ("vector",), str(exc))
            continue
        if a.vector in DNS_VECTORS:
            if a.target not in zones:
                col.add(p + ("target",), f"{a.vector} needs a DNS zone as target, {a.target!r} is not one")
            elif a.pop is not None and a.pop not in {pp.name for pp in zones[a.target].pops}:
                col.add(p + ("pop",), f"zone {a.target} has no pop {a.pop!r}")
            if a.pop is not None and a.vector != "dns-direct":
                col.add(p + ("pop",), "only direct DNS floods can pick a pop; resolvers choose for water torture")
        elif a.target not in servers or servers[a.target].kind != "target":
            col.add(p + ("target",), f"unknown target server {a.target!r}")
        for r in a.reflectors:
            if r not in servers:
                col.add(p + ("reflectors",), f"unknown reflector {r!r}")
        if a.reflectors and not vec.is_reflection:
            col.add(p + ("reflectors",), "reflectors only apply to reflection vectors")
        if not a.duration > 0:
            col.add(p + ("duration",), "duration must be positive")
        if not 0 < a.share <= 1:
            col.add(p + ("share",), "share must lie in (0, 1]")
        if a.rate.support[0] <= 0 and not isinstance(a.rate, Bernoulli):
            if not (isinstance(a.rate, Choice) and min(a.rate.values) > 0):
                col.add(p + ("rate",), "per-bot rates must be positive")

    for i, x in enumerate(s.defenses):
        p = ("defenses", i)
        if x.at < 0:
            col.add(p + ("at",), "defense time must be non-negative")
        sel = x.devices
        if sel is not None:
            if sel.profile is not None and sel.profile not in profiles:
                col.add(p + ("devices", "profile"), f"unknown profile {sel.profile!r}")
            if sel.region is not None and sel.region not in regions:
                col.add(p + ("devices", "region"), f"unknown region {sel.region!r}")
            if sel.malware is not None and sel.malware not in names:
                col.add(p + ("devices", "malware"), f"unknown malware {sel.malware!r}")
            if not 0 <= sel.fraction <= 1:
                col.add(p + ("devices", "fraction"), "fraction must lie in [0, 1]")
        for r in x.regions:
            if r not in regions:
                col.add(p + ("regions",), f"unknown region {r!r}")
        if x.action == "patch" and x.vulnerability not in VULNERABILITIES:
            col.add(p + ("vulnerability",), f"unknown vulnerability {x.vulnerability!r}")
        if x.action == "attach-scrubber":
            if x.target is not None:
                if x.target not in servers or servers[x.target].kind != "target":
                    col.add(p + ("target",), f"unknown target server {x.target!r}")
                if not x.capacity > 0:
                    col.add(p + ("capacity",), "scrubber capacity must be positive")
            elif x.zone is None or x.zone not in zones or x.pop not in {pp.name for pp in zones[x.zone].pops}:
                col.add(p, "scrubber needs a target server or an existing zone and pop")
            for k, v in x.efficacy:
                if not 0 <= v <= 1:
                    col.add(p + ("efficacy", k), "efficacy must lie in [0, 1]")
                if k not in ALL_VECTORS:
                    col.add(p + ("efficacy", k), f"unknown vector {k!r}")
            if not 0 <= x.legitimate_passthrough <= 1:
                col.add(p + ("legitimate_passthrough",), "must lie in [0, 1]")
        if x.action == "anycast-rebalance":
            if x.zone not in zones:
                col.add(p + ("zone",), f"unknown zone {x.zone!r}")
            else:
                known = {pp.name for pp in zones[x.zone].pops}
                for name in x.pops:
                    if name not in known:
                        col.add(p + ("pops",), f"unknown pop {name!r}")
        if x.action == "c2-takedown" and x.malware not in names:
            col.add(p + ("malware",), f"unknown malware {x.malware!r}")


# ---------------------------------------------------------------------------
# Serialization
# ---------------------------------------------------------------------------


def _num(x: float):
    if isinstance(x, float) and math.isinf(x):
        return None
    if isinstance(x, float) and x.is_integer() and abs(x) < 2**53:
        return int(x)
    return x


def scenario_to_dict(s: ScenarioSpec) -> dict:
    """Canonical plain-data form, all quantities in base units."""
    t = s.topology
    d: dict[str, Any] = {
        "name": s.name,
        "description": s.description,
        "seed": s.seed,
        "horizon": _num(s.horizon),
        "topology": {
            "core_routers": t.core_routers,
            "capacity": {k: _num(v) for k, v in vars(t.capacity).items()},
            "latency": {k: _num(v) for k, v in vars(t.latency).items()},
            "regions": [
                {k: v for k, v in vars(r).items() if not (k == "core" and v is None)} for r in t.regions
            ],
            "servers": [_server_dict(sv) for sv in t.servers],
        },
        "population": {
            "address_space": _num(s.population.address_space),
            "profiles": [
                {
                    "name": p.name,
                    "count": p.count,
                    "regions": list(p.regions),
                    "services": list(p.services),
                    "vulnerabilities": list(p.vulnerabilities),
                    "patchable": p.patchable,
                    "uplink": distribution_config(p.uplink),
                    "credentials": {
                        "default_share": p.credentials.default_share,
                        "vendor_defaults": p.credentials.vendor_defaults,
                        "pairs": [list(x) for x in p.credentials.pairs],
                    },
                }
                for p in s.population.profiles
            ],
        },
        "malware": [_malware_dict(m) for m in s.malware],
        "dns": {
            "ttl": _num(s.dns.ttl),
            "retry": {"count": s.dns.retries, "spacing": _num(s.dns.retry_spacing)},
            "tick": _num(s.dns.tick),
            "query_size": _num(s.dns.query_size),
            "exact_limit": s.dns.exact_limit,
            "zones": [
                {
                    "domain": z.domain,
                    "pops": [
                        {"name": p.name, "regions": list(p.regions), "servers": p.servers, "capacity": _num(p.capacity), "core": p.core}
                        for p in z.pops
                    ],
                    "legitimate": [{"region": r, "qps": _num(q)} for r, q in z.legitimate],
                }
                for z in s.dns.zones
            ],
        },
        "attacks": [_attack_dict(a) for a in s.attacks],
        "defenses": [_defense_dict(x) for x in s.defenses],
        "metrics": {"cadence": _num(s.metrics.cadence), "scan_tick": _num(s.metrics.scan_tick)},
        "annotations": dict(s.annotations),
    }
    if not math.isinf(s.dns.resolver_capacity):
        d["dns"]["resolver_capacity"] = _num(s.dns.resolver_capacity)
    return d


def _server_dict(sv: ServerEntry) -> dict:
    d: dict[str, Any] = {"name": sv.name, "kind": sv.kind, "core": sv.core}
    if sv.capacity is not None:
        d["capacity"] = _num(sv.capacity)
    if sv.domain is not None:
        d["domain"] = sv.domain
    if sv.legitimate:
        d["legitimate"] = [{"region": l.region, "rate": _num(l.rate)} for l in sv.legitimate]
    if sv.fail_safe is not None:
        d["fail_safe"] = {"threshold": sv.fail_safe.threshold, "reboot_delay": _num(sv.fail_safe.reboot_delay)}
    return d


def _malware_dict(m: MalwareEntry) -> dict:
    d: dict[str, Any] = {
        "name": m.name,
        "dictionary": {
            "vendor_defaults": m.dictionary.vendor_defaults,
            "pairs": [list(x) for x in m.dictionary.pairs],
            "generated": {"usernames": m.dictionary.generated_usernames, "passwords": m.dictionary.generated_passwords},
        },
        "scan_rate": m.scan_rate,
        "scans_from": m.scans_from.value,
        "scanners": m.scanners,
        "persistence": m.persistence.value,
        "eviction": list(m.eviction),
        "closes_entry_ports": m.closes_entry_ports,
        "vectors": list(m.vectors),
        "exploits": list(m.exploits),
        "crash_probability": m.crash_probability,
        "c2_addressing": m.c2_addressing.value,
        "payload_size": _num(m.payload_size),
        "brute_force_delay": _num(m.brute_force_delay),
        "seed": {"infected": m.seed.infected} | ({"profile": m.seed.profile} if m.seed.profile else {}),
    }
    infra = {k: getattr(m, k) for k in ("c2", "reporting", "loader", "distribution") if getattr(m, k) is not None}
    if infra:
        d["infrastructure"] = infra
    return d


def _attack_dict(a: AttackEntry) -> dict:
    d: dict[str, Any] = {
        "malware": a.malware,
        "target": a.target,
        "vector": a.vector,
        "rate": distribution_config(a.rate),
        "start": _num(a.start),
        "duration": _num(a.duration),
        "share": a.share,
    }
    if a.reflectors:
        d["reflectors"] = list(a.reflectors)
    if a.amplification is not None:
        d["amplification"] = a.amplification
    if a.pop is not None:
        d["pop"] = a.pop
    return d


def _defense_dict(x: DefenseEntry) -> dict:
    d: dict[str, Any] = {"at": _num(x.at), "action": x.action}
    if x.devices is not None:
        sel = {k: v for k, v in vars(x.devices).items() if v is not None}
        d["devices"] = sel
    if x.action == "enable-bcp38":
        d["regions"] = list(x.regions) if x.regions else "all"
    if x.action == "reboot":
        d["delay"] = _num(x.delay)
    if x.action == "change-credentials":
        d["credential"] = "strong" if x.credential is None else list(x.credential)
    if x.action == "patch":
        d["vulnerability"] = x.vulnerability
    if x.action == "attach-scrubber":
        for k in ("target", "zone", "pop"):
            if getattr(x, k) is not None:
                d[k] = getattr(x, k)
        if not math.isinf(x.capacity):
            d["capacity"] = _num(x.capacity)
        d["efficacy"] = dict(x.efficacy)
        d["legitimate_passthrough"] = x.legitimate_passthrough
    if x.action == "anycast-rebalance":
        d["zone"] = x.zone
        if x.pops:
            d["pops"] = list(x.pops)
    if x.action == "c2-takedown":
        d["malware"] = x.malware
    return d


class _Dumper(yaml.SafeDumper):
    pass


def serialize_scenario(s: ScenarioSpec) -> str:
    return yaml.dump(scenario_to_dict(s), Dumper=_Dumper, sort_keys=False, default_flow_style=None, width=100)


# ---------------------------------------------------------------------------
# Presets
# ---------------------------------------------------------------------------


def preset_text(name: str) -> str:
    if name not in PRESET_NAMES:
        raise KeyError(f"unknown preset {name!r}; available: {', '.join(PRESET_NAMES)}")
    return resources.files("iotbotsim").joinpath(f"presets/{name}.yaml").read_text()


def preset(name: str) -> ScenarioSpec:
    return parse_scenario(preset_text(name))


def load_scenario_file(path) -> ScenarioSpec:
    with open(path) as fh:
        return parse_scenario(fh.read())
