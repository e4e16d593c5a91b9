"""Scenario runner: builds the world from a ScenarioSpec and drives it on the event engine."""

from __future__ import annotations

import logging
import math
import time
from dataclasses import dataclass, field

import numpy as np

from . import defenses as dfn
from .attacks import FLOOD_VECTORS, AttackVector, random_prefixes, reflected_flows, start_flood
from .botnet import (
    STRONG,
    Botnet,
    Dictionary,
    MalwareSpec,
    Mode,
    Population,
    ReportingServer,
    ScanSource,
    State,
    build_botnets,
    c2_broadcast,
    complete_load,
    discover,
    end_command,
    finish_brute_force,
    scan_tick_hits,
    seed_infections,
    service_mask,
    susceptible,
    vuln_mask,
)
from .dns import AuthServerPool, DomainName, ResolverState, RetryBuffer, RetryPolicy, anycast_rebalance
from .engine import Engine, Event, EventKind, StreamFactory, draw_many
from .metrics import Recorder, SummaryReport, TimeSeries, availability, summarize
from .scenario import AttackEntry, DefenseEntry, ScenarioSpec, ServerEntry, topology_spec, vendor_default
from .topology import BuiltTopology, DeliveryResult, FlowSet, NodeKind, ServerSpec, apply_flows, build_topology, path_latency

log = logging.getLogger(__name__)

INFRA_ROLES = ("c2", "reporting", "loader", "distribution")
_ROLE_KIND = {
    "c2": NodeKind.C2_HOST,
    "reporting": NodeKind.REPORTING,
    "loader": NodeKind.LOADER,
    "distribution": NodeKind.DISTRIBUTION,
}


@dataclass
class RunResult:
    spec: ScenarioSpec
    series: dict[str, TimeSeries]
    report: SummaryReport
    events: int
    wall_seconds: float
    torture_cache_hits: int = 0
    torture_queries: int = 0


@dataclass
class _Command:
    index: int
    entry: AttackEntry
    vector: AttackVector
    bot: Botnet
    active: bool = False
    target_node: int = -1  # server node for floods and reflection


@dataclass
class _Pop:
    zone: int
    name: str
    node: int
    regions: tuple[str, ...]
    pool: AuthServerPool
    retry: RetryBuffer  # retries of legitimate lookups
    retry_attack: RetryBuffer  # resolvers also retry failed torture lookups
    scrubber: dfn.ScrubberPolicy | None = None
    offered: float = 0.0
    legit_offered: float = 0.0
    assigned: float = 0.0
    fail: float = 0.0


@dataclass
class _Zone:
    domain: DomainName
    pops: list[_Pop]
    legit: dict[str, float]  # region -> queries/s reaching the authoritative tier
    groups: list[list[int]] = field(default_factory=list)  # anycast groups of pop indices

    @property
    def baseline(self) -> float:
        return float(sum(self.legit.values()))


@dataclass
class _TargetState:
    name: str
    node: int
    spec: ServerEntry
    access_link: int = -1
    online: bool = True
    reboots: int = 0


class Simulation:
    """One run of a scenario. Construct, then call :meth:`run`."""

    def __init__(self, spec: ScenarioSpec, trace: bool = False):
        self.spec = spec
        self.streams = StreamFactory(spec.seed)
        self.engine = Engine(0.0)
        self.recorder = Recorder()
        self._build_topology()
        self._build_population(trace)
        self._build_malware()
        self._build_dns()
        self._build_attacks()
        self.bcp38: set[int] = set()
        self.scrubbers: dict[int, dfn.Scrubber] = {}
        self._dirty = True
        self._solution: dict | None = None
        self._latency_cache: dict[int, np.ndarray] = {}
        self.torture_cache_hits = 0
        self.torture_queries = 0
        self._dns_ok = {r.name: 1.0 for r in spec.topology.regions}
        self._wire()

    # -- construction -------------------------------------------------------

    def _build_topology(self) -> None:
        spec = self.spec
        tspec = topology_spec(spec.topology)
        names = {s.name for s in spec.topology.servers}
        self._infra: dict[tuple[str, str], str] = {}
        for m in spec.malware:
            for role in INFRA_ROLES:
                ref = getattr(m, role)
                if ref is None:
                    ref = f"{m.name}-{role}"
                    if ref not in names:
                        tspec.servers.append(ServerSpec(ref, _ROLE_KIND[role], 0))
                        names.add(ref)
                self._infra[(m.name, role)] = ref
        for z in spec.dns.zones:
            for p in z.pops:
                tspec.servers.append(ServerSpec(f"{z.domain}:{p.name}", NodeKind.AUTH_DNS, p.core))
        self.topo: BuiltTopology = build_topology(tspec)
        self.network = self.topo.network
        self.region_index = {r.name: i for i, r in enumerate(spec.topology.regions)}
        self.targets: dict[str, _TargetState] = {}
        for s in spec.topology.servers:
            if s.kind == "target":
                node = self.topo.servers[s.name]
                self.targets[s.name] = _TargetState(s.name, node, s)
        self._refresh_access_links()

    def _refresh_access_links(self) -> None:
        for t in self.targets.values():
            t.access_link = self.network.find_link(int(self.network.parent[t.node]), t.node)

    def _build_population(self, trace: bool) -> None:
        spec = self.spec
        topo = self.topo
        self.pop = pop = Population(len(topo.devices), topo.devices, topo.device_region, trace=trace)
        pop.set_malware_count(max(len(spec.malware), 1))
        # devices of one region are contiguous in build order
        offsets, next_free = {}, {}
        start = 0
        for r in spec.topology.regions:
            offsets[r.name] = start
            next_free[r.name] = start
            start += r.devices
        ends = {r.name: offsets[r.name] + r.devices for r in spec.topology.regions}
        self.profile_devices: dict[str, np.ndarray] = {}
        for pi, pr in enumerate(spec.population.profiles):
            left = pr.count
            chunks = []
            for r in pr.regions or tuple(offsets):
                take = min(left, ends[r] - next_free[r])
                chunks.append(np.arange(next_free[r], next_free[r] + take, dtype=np.int64))
                next_free[r] += take
                left -= take
            idx = np.concatenate(chunks) if chunks else np.zeros(0, np.int64)
            self.profile_devices[pr.name] = idx
            uplink = draw_many(self.streams.stream(f"population.{pr.name}.uplink"), pr.uplink, len(idx))
            cred = np.full(len(idx), STRONG, dtype=np.int32)
            pool = pr.credentials.default_pool
            k = int(round(pr.credentials.default_share * len(idx)))
            if k and pool:
                g = self.streams.stream(f"population.{pr.name}.credentials").gen
                chosen = np.sort(g.choice(len(idx), k, replace=False))
                ids = np.array([pop.credentials.add(p) for p in pool], dtype=np.int32)
                cred[chosen] = ids[g.integers(0, len(pool), size=k)]
            pop.assign(
                idx,
                services=service_mask(pr.services),
                vulns=vuln_mask(pr.vulnerabilities),
                patchable=pr.patchable,
                uplink=uplink,
                cred=cred,
                profile=pi,
            )
        self.profile_index = {p.name: i for i, p in enumerate(spec.population.profiles)}

    def _build_malware(self) -> None:
        specs = []
        for m in self.spec.malware:
            d = m.dictionary
            gen = Dictionary.generated(d.generated_usernames, d.generated_passwords)
            pairs = tuple(vendor_default(i) for i in range(d.vendor_defaults)) + d.pairs
            specs.append(
                MalwareSpec(
                    name=m.name,
                    dictionary=Dictionary(frozenset(pairs), gen.usernames, gen.passwords),
                    scan_rate=m.scan_rate,
                    scans_from=m.scans_from,
                    scanners=m.scanners,
                    persistence=m.persistence,
                    eviction_list=frozenset(m.eviction),
                    closes_entry_ports=m.closes_entry_ports,
                    vectors=frozenset(m.vectors),
                    exploit_ids=frozenset(m.exploits),
                    crash_probability=m.crash_probability,
                    c2_addressing=m.c2_addressing,
                    payload_size=m.payload_size,
                    brute_force_delay=m.brute_force_delay,
                )
            )
        self.bots: list[Botnet] = build_botnets(specs)
        self.bot_by_name = {b.spec.name: b for b in self.bots}
        servers = self.topo.servers
        for b, m in zip(self.bots, self.spec.malware):
            b.c2 = servers[self._infra[(m.name, "c2")]]
            b.reporting = ReportingServer(servers[self._infra[(m.name, "reporting")]])
            b.loader = servers[self._infra[(m.name, "loader")]]
            b.distribution = servers[self._infra[(m.name, "distribution")]]
        for b, m in zip(self.bots, self.spec.malware):
            if not m.seed.infected:
                continue
            cand = susceptible(self.pop, b.spec)
            if m.seed.profile is not None:
                cand = np.intersect1d(cand, self.profile_devices[m.seed.profile])
            n = m.seed.infected
            if n > len(cand):
                log.warning("%s: only %d susceptible devices for %d seeds", m.name, len(cand), n)
                n = len(cand)
            g = self.streams.stream(f"malware.{m.name}.seed").gen
            seed_infections(self.pop, np.sort(g.choice(cand, n, replace=False)), b)

    def _build_dns(self) -> None:
        d = self.spec.dns
        policy = RetryPolicy(d.retries, d.retry_spacing)
        self.zones: list[_Zone] = []
        self.zone_index: dict[str, int] = {}
        for zi, z in enumerate(d.zones):
            pops = []
            for p in z.pops:
                node = self.topo.servers[f"{z.domain}:{p.name}"]
                pool = AuthServerPool(z.domain, [node] * p.servers, p.capacity, p.name)
                pops.append(_Pop(zi, p.name, node, p.regions, pool, RetryBuffer(policy, d.tick), RetryBuffer(policy, d.tick)))
            legit: dict[str, float] = {}
            for r, q in z.legitimate:
                legit[r] = legit.get(r, 0.0) + q
            self.zones.append(_Zone(DomainName.parse(z.domain), pops, legit))
            self.zone_index[z.domain] = zi
        self.resolvers = {
            r: ResolverState(node, d.resolver_capacity, d.ttl) for r, node in self.topo.resolvers.items()
        }
        self._region_names = [r.name for r in self.spec.topology.regions]

    def _pop_of(self, zone: _Zone, region: str) -> int:
        for i, p in enumerate(zone.pops):
            if region in p.regions:
                return i
        return 0

    def _build_attacks(self) -> None:
        self.commands: list[_Command] = []
        for i, a in enumerate(self.spec.attacks):
            cmd = _Command(i, a, a.to_vector(), self.bot_by_name[a.malware])
            if a.target in self.topo.servers:
                cmd.target_node = self.topo.servers[a.target]
            self.commands.append(cmd)

    def _wire(self) -> None:
        e = self.engine
        e.on(EventKind.SCAN_TICK, self._on_scan_tick)
        e.on(EventKind.INFECTION_STAGE, self._on_stage)
        e.on(EventKind.FLOW_START, self._on_flow_start)
        e.on(EventKind.FLOW_END, self._on_flow_end)
        e.on(EventKind.DEFENSE_ACTION, self._on_defense)
        e.on(EventKind.REBOOT_COMPLETE, self._on_reboot_complete)
        e.on(EventKind.DNS_QUERY, self._on_dns_tick)
        e.on(EventKind.METRIC_SAMPLE, self._on_sample)

        # defenses come before attacks at the same instant, samples last
        for i, x in enumerate(self.spec.defenses):
            e.schedule(x.at, EventKind.DEFENSE_ACTION, i)
        for c in self.commands:
            e.schedule(c.entry.start, EventKind.FLOW_START, c.index)
            e.schedule(c.entry.end, EventKind.FLOW_END, c.index)
        if any(b.spec.scan_rate > 0 for b in self.bots):
            e.schedule(self.spec.metrics.scan_tick, EventKind.SCAN_TICK)
        if self.zones:
            e.schedule(self.spec.dns.tick, EventKind.DNS_QUERY)
        e.schedule(0.0, EventKind.METRIC_SAMPLE)

    # -- helpers ------------------------------------------------------------

    def _latency_to(self, node: int) -> np.ndarray:
        lat = self._latency_cache.get(node)
        if lat is None:
            lat = path_latency(self.network, self.pop.node, node) if self.pop.n else np.zeros(0)
            self._latency_cache[node] = lat
        return lat

    def _schedule_groups(self, devs: np.ndarray, delays: np.ndarray, stage: str, m: int) -> None:
        if not len(devs):
            return
        delays = np.round(delays, 9)
        uniq, inv = np.unique(delays, return_inverse=True)
        for k, d in enumerate(uniq):
            sel = devs[inv == k]
            self.engine.schedule_in(float(d), EventKind.INFECTION_STAGE, (stage, m, sel, self.pop.epoch[sel].copy()))

    def select_devices(self, sel, label: str) -> np.ndarray:
        pop = self.pop
        mask = np.ones(pop.n, dtype=bool)
        if sel is not None:
            if sel.profile is not None:
                mask &= pop.profile == self.profile_index[sel.profile]
            if sel.region is not None:
                mask &= pop.region == self.region_index[sel.region]
            if sel.state is not None:
                mask &= pop.state == State[sel.state.upper()]
            if sel.malware is not None:
                mask &= pop.resident == self.bot_by_name[sel.malware].index
        idx = np.flatnonzero(mask)
        if sel is not None and sel.fraction < 1.0:
            g = self.streams.stream(label).gen
            k = int(round(sel.fraction * len(idx)))
            idx = np.sort(g.choice(idx, k, replace=False))
        return idx

    # -- lifecycle ----------------------------------------------------------

    def _on_scan_tick(self, ev: Event) -> None:
        dt = self.spec.metrics.scan_tick
        t = ev.at
        space = self.spec.population.address_space
        for b in self.bots:
            s = b.spec
            if s.scan_rate <= 0:
                continue
            if s.scans_from == ScanSource.BOTS:
                n = self.pop.infected_count(b.index)
            elif s.scans_from == ScanSource.C2:
                n = s.scanners if b.c2_alive else 0
            else:
                n = s.scanners
            if n <= 0:
                continue
            rng = self.streams.stream(f"malware.{s.name}.scan").gen
            hits = scan_tick_hits(self.pop, b, n, dt, space, rng)
            if not len(hits):
                continue
            attackers = self.pop.mode[hits] == Mode.ATTACKING
            d = discover(self.pop, hits, b, self.streams.stream(f"malware.{s.name}.exploit").gen, t, filtered=True)
            if attackers.any():
                self._dirty = True
            if len(d.brute):
                self.engine.schedule_in(
                    s.brute_force_delay, EventKind.INFECTION_STAGE, ("brute", b.index, d.brute, self.pop.epoch[d.brute].copy())
                )
            self._schedule_groups(d.compromised, self._latency_to(b.reporting.node)[d.compromised], "report", b.index)
        if t + dt <= self.spec.horizon:
            self.engine.schedule(t + dt, EventKind.SCAN_TICK)

    def _on_stage(self, ev: Event) -> None:
        stage, m, devs, epochs = ev.payload
        b = self.bots[m]
        pop = self.pop
        t = ev.at
        if stage == "brute":
            won = finish_brute_force(pop, devs, epochs, b, t)
            self._schedule_groups(won, self._latency_to(b.reporting.node)[won], "report", m)
        elif stage == "report":
            live = (pop.epoch[devs] == epochs) & (pop.claim[devs] == m)
            devs = devs[live]
            b.reporting.report_many(pop, devs, m, t)
            delay = self._latency_to(b.loader)[devs] + b.spec.payload_size / pop.uplink[devs]
            self._schedule_groups(devs, delay, "load", m)
        elif stage == "load":
            if np.any(pop.mode[devs] == Mode.ATTACKING):
                self._dirty = True
            complete_load(pop, devs, b, t)
        else:
            raise ValueError(f"unknown infection stage {stage!r}")

    # -- attacks ------------------------------------------------------------

    def _on_flow_start(self, ev: Event) -> None:
        c = self.commands[ev.payload]
        a = c.entry
        stream = self.streams.stream(f"attack.{c.index}.rate")
        tasked = self._broadcast(c, stream)
        c.active = True
        log.info("t=%.0f attack %d (%s, %s) tasked %d bots", ev.at, c.index, a.malware, a.vector, len(tasked))
        self._dirty = True

    def _broadcast(self, c: _Command, stream) -> np.ndarray:
        return c2_broadcast(
            self.pop,
            c.bot,
            c.index,
            c.entry.vector,
            rate_fn=lambda n: draw_many(stream, c.entry.rate, n),
            rng=self.streams.stream(f"attack.{c.index}.share").gen,
            share=c.entry.share,
        )

    def _on_flow_end(self, ev: Event) -> None:
        c = self.commands[ev.payload]
        end_command(self.pop, c.index)
        c.active = False
        self._dirty = True

    def _bots_of(self, c: _Command) -> np.ndarray:
        return np.flatnonzero(self.pop.attack_cmd == c.index)

    def _attack_flows(self) -> tuple[list[FlowSet], list[tuple[_Command, np.ndarray, FlowSet]]]:
        """Direct flows plus reflection request sets awaiting their responses."""
        pop = self.pop
        direct, reflect = [], []
        for c in self.commands:
            if not c.active or c.entry.vector == "water-torture":
                continue
            bots = self._bots_of(c)
            if not len(bots):
                continue
            tag = c.entry.vector
            if tag in FLOOD_VECTORS:
                direct.append(start_flood(pop.node[bots], pop.attack_rate[bots], pop.uplink[bots], c.target_node, tag))
            elif tag == "dns-direct":
                zone = self.zones[self.zone_index[c.entry.target]]
                if c.entry.pop is not None:
                    node = next(p.node for p in zone.pops if p.name == c.entry.pop)
                    direct.append(start_flood(pop.node[bots], pop.attack_rate[bots], pop.uplink[bots], node, tag))
                    continue
                regions = pop.region[bots]
                for ri, rname in enumerate(self._region_names):
                    sel = bots[regions == ri]
                    if len(sel):
                        node = zone.pops[self._pop_of(zone, rname)].node
                        direct.append(start_flood(pop.node[sel], pop.attack_rate[sel], pop.uplink[sel], node, tag))
            elif c.vector.is_reflection:
                refl = [self.topo.servers[r] for r in c.entry.reflectors]
                rates = np.minimum(pop.attack_rate[bots], pop.uplink[bots])
                if self.bcp38:
                    # requests carry the victim's address, never valid inside an access region
                    rates = np.where(np.isin(pop.region[bots], list(self.bcp38)), 0.0, rates)
                assign = np.asarray(refl, dtype=np.int64)[np.arange(len(bots)) % len(refl)]
                req = FlowSet(pop.node[bots], assign, rates, np.ones(len(bots), bool), [tag] * len(bots))
                reflect.append((c, np.asarray(refl, dtype=np.int64), req))
        return direct, reflect

    def _legit_flows(self) -> tuple[FlowSet, list[tuple[str, str]]]:
        src, dst, rate, keys = [], [], [], []
        for t in self.targets.values():
            for l in t.spec.legitimate:
                src.append(int(self.topo.bras_by_region[l.region][0]))
                dst.append(t.node)
                rate.append(l.rate)
                keys.append((t.name, l.region))
        n = len(src)
        fs = FlowSet(np.array(src, np.int64), np.array(dst, np.int64), np.array(rate, float), np.zeros(n, bool), [None] * n)
        return fs, keys

    def _hop_filters(self, fs: FlowSet) -> dict:
        filters = {}
        for node, sc in self.scrubbers.items():
            filters[node] = lambda rows, p=sc.policy: p.survival(fs.attack[rows], [fs.vector[r] for r in rows])
        return filters

    def _solve(self) -> None:
        legit, keys = self._legit_flows()
        direct, reflect = self._attack_flows()
        base = FlowSet.concat([legit, *direct, *(r[2] for r in reflect)])
        base.vector = base.vector if base.vector else [None] * len(base)
        res = apply_flows(self.network, base, self._hop_filters(base)) if len(base) else None
        flows = base
        if reflect and res is not None:
            # second pass: amplified responses join the traffic they contend with
            start = len(base) - sum(len(r[2]) for r in reflect)
            parts = [base]
            for c, refl, req in reflect:
                got = res.delivered[start : start + len(req)]
                start += len(req)
                parts.append(reflected_flows(refl, got, req.dst, c.target_node, c.vector))
            flows = FlowSet.concat(parts)
            res = apply_flows(self.network, flows, self._hop_filters(flows))
        arrived = res.delivered.copy() if res is not None else np.zeros(0)
        delivered = arrived.copy()
        for t in self.targets.values():
            if not t.online:
                # traffic still reaches the access link but nothing is served
                delivered[flows.dst == t.node] = 0.0
        self._solution = {"flows": flows, "result": res, "arrived": arrived, "delivered": delivered, "legit_n": len(legit), "keys": keys}
        self._dirty = False
        self._check_fail_safe()

    def _ensure_solved(self) -> None:
        if self._dirty or self._solution is None:
            self._solve()

    def _access_offered(self, t: _TargetState) -> float:
        res: DeliveryResult | None = self._solution["result"]
        if res is None:
            return 0.0
        hit = np.flatnonzero(res.link_ids == t.access_link)
        return float(res.link_offered[hit[0]]) if len(hit) else 0.0

    def _check_fail_safe(self) -> None:
        for t in self.targets.values():
            fs = t.spec.fail_safe
            if fs is None or not t.online:
                continue
            cap = float(self.network.link_capacity[t.access_link])
            if self._access_offered(t) >= fs.threshold * cap:
                t.online = False
                t.reboots += 1
                self.engine.schedule_in(fs.reboot_delay, EventKind.REBOOT_COMPLETE, ("target", t.name))
                self._dirty = True

    # -- defenses -----------------------------------------------------------

    def _on_defense(self, ev: Event) -> None:
        i = ev.payload
        x: DefenseEntry = self.spec.defenses[i]
        t = ev.at
        pop = self.pop
        label = f"defense.{i}"
        if x.action == "enable-bcp38":
            regions = x.regions or tuple(self.region_index)
            self.bcp38.update(self.region_index[r] for r in regions)
            self._dirty = True
        elif x.action == "reboot":
            idx = self.select_devices(x.devices, label)
            idx = idx[pop.state[idx] != State.REBOOTING]
            idx, epochs = dfn.reboot(pop, idx, self.bots, t)
            self.engine.schedule_in(x.delay, EventKind.REBOOT_COMPLETE, ("devices", idx, epochs))
            self._dirty = True
        elif x.action == "change-credentials":
            dfn.change_credentials(pop, self.select_devices(x.devices, label), x.credential)
        elif x.action == "patch":
            done, refused = dfn.patch(pop, self.select_devices(x.devices, label), x.vulnerability)
            if len(refused):
                log.info("patch %s refused by %d unpatchable devices", x.vulnerability, len(refused))
        elif x.action == "attach-scrubber":
            policy = dfn.ScrubberPolicy(x.capacity, dict(x.efficacy), x.legitimate_passthrough)
            if x.target is not None:
                sc = dfn.attach_scrubber(self.network, self.targets[x.target].node, policy)
                self.scrubbers[sc.node] = sc
                self._refresh_access_links()
                self._dirty = True
            else:
                zone = self.zones[self.zone_index[x.zone]]
                next(p for p in zone.pops if p.name == x.pop).scrubber = policy
        elif x.action == "anycast-rebalance":
            zone = self.zones[self.zone_index[x.zone]]
            names = x.pops or tuple(p.name for p in zone.pops)
            group = sorted(i for i, p in enumerate(zone.pops) if p.name in names)
            zone.groups = [g for g in zone.groups if not set(g) & set(group)] + [group]
        elif x.action == "c2-takedown":
            if not dfn.c2_takedown(self.bot_by_name[x.malware]):
                log.info("c2 takedown of %s had no effect: C2 is looked up by name", x.malware)
        else:
            raise ValueError(f"unknown defense {x.action!r}")

    def _on_reboot_complete(self, ev: Event) -> None:
        kind = ev.payload[0]
        if kind == "devices":
            _, idx, epochs = ev.payload
            dfn.complete_reboot(self.pop, idx, epochs, ev.at)
        else:
            self.targets[ev.payload[1]].online = True
            self._dirty = True

    # -- DNS ----------------------------------------------------------------

    def _torture_by_region(self, zi: int) -> np.ndarray:
        out = np.zeros(len(self._region_names))
        for c in self.commands:
            if c.active and c.entry.vector == "water-torture" and self.zone_index.get(c.entry.target) == zi:
                bots = self._bots_of(c)
                out += np.bincount(self.pop.region[bots], weights=self.pop.attack_rate[bots], minlength=len(out))
        return out

    def _direct_qps(self) -> dict[int, float]:
        """Queries/s arriving at each DNS pop node from direct floods."""
        self._ensure_solved()
        flows, delivered = self._solution["flows"], self._solution["delivered"]
        out: dict[int, float] = {}
        if not len(flows):
            return out
        for z in self.zones:
            for p in z.pops:
                sel = (flows.dst == p.node) & flows.attack
                if sel.any():
                    out[p.node] = float(delivered[sel].sum()) / self.spec.dns.query_size
        return out

    def _exact_torture(self, zone: _Zone, per_region: np.ndarray, now: float) -> None:
        """Resolve individual torture queries through each resolver's cache."""
        tick = self.spec.dns.tick
        for ri, qps in enumerate(per_region):
            n = int(round(qps * tick))
            if n <= 0:
                continue
            name = self._region_names[ri]
            res = self.resolvers.get(name)
            if res is None:
                continue
            g = self.streams.stream(f"dns.torture.{name}").gen
            for k, label in enumerate(random_prefixes(g, n)):
                q = zone.domain.prefixed(label)
                at = now - tick + k / max(qps, 1e-12)
                if res.lookup(q, at) is not None:
                    res.hits += 1
                    self.torture_cache_hits += 1
                else:
                    res.misses += 1
                    res.store(q, "answer", at)
            self.torture_queries += n

    def _on_dns_tick(self, ev: Event) -> None:
        d = self.spec.dns
        direct = self._direct_qps()
        for zi, zone in enumerate(self.zones):
            torture = self._torture_by_region(zi)
            if 0 < float(torture.sum()) * d.tick <= d.exact_limit:
                self._exact_torture(zone, torture, ev.at)
            n = len(zone.pops)
            legit = np.zeros(n)
            attack = np.zeros(n)
            for ri, rname in enumerate(self._region_names):
                lq = zone.legit.get(rname, 0.0)
                tq = float(torture[ri])
                if lq + tq <= 0:
                    continue
                # the resolver forwards at most its capacity, shared pro rata
                scale = min(1.0, d.resolver_capacity / (lq + tq)) if math.isfinite(d.resolver_capacity) else 1.0
                pi = self._pop_of(zone, rname)
                legit[pi] += lq * scale
                attack[pi] += tq * scale
            offered = np.zeros(n)
            for i, p in enumerate(zone.pops):
                good = legit[i] + p.retry.due()
                bad = attack[i] + p.retry_attack.due()
                flood = direct.get(p.node, 0.0)
                p.legit_offered = good
                p.offered = good + bad + flood
                if p.scrubber is not None:
                    eff = p.scrubber.efficacy
                    good *= p.scrubber.legitimate_passthrough
                    bad *= 1.0 - eff.get("water-torture", 0.0)
                    flood *= 1.0 - eff.get("dns-direct", 0.0)
                offered[i] = good + bad + flood
            assigned = offered.copy()
            for g in zone.groups:
                assigned[g] = anycast_rebalance([zone.pops[i].pool.total_capacity for i in g], float(offered[g].sum()))
            for i, p in enumerate(zone.pops):
                p.assigned = float(assigned[i])
                p.fail = p.pool.dispatch(p.assigned).dropped / p.assigned if p.assigned > 0 else 0.0
                # only original lookups are retried, and only when they failed
                p.retry.push(legit[i] * p.fail)
                p.retry_attack.push(attack[i] * p.fail)
            for r in self._region_names:
                self._dns_ok[r] = 1.0 - zone.pops[self._pop_of(zone, r)].fail
        if ev.at + d.tick <= self.spec.horizon:
            self.engine.schedule(ev.at + d.tick, EventKind.DNS_QUERY)

    # -- metrics ------------------------------------------------------------

    def _on_sample(self, ev: Event) -> None:
        t = ev.at
        rec = self.recorder
        pop = self.pop
        rec.record("infected", "devices", t, pop.infected_count())
        for b in self.bots:
            rec.record(f"infected.{b.spec.name}", "devices", t, pop.infected_count(b.index))
        rec.record("infections_total", "devices", t, pop.infections)
        if pop.n:
            rec.record("offline_fraction", "fraction", t, pop.offline() / pop.n)

        self._ensure_solved()
        sol = self._solution
        flows, delivered, arrived = sol["flows"], sol["delivered"], sol["arrived"]
        total_attack = 0.0
        agg_num = agg_den = 0.0
        region_num: dict[str, float] = {}
        region_den: dict[str, float] = {}
        domain_zone = {}
        for t_name, ts in self.targets.items():
            at = flows.dst == ts.node if len(flows) else np.zeros(0, bool)
            atk = float(arrived[at & flows.attack].sum()) if len(flows) else 0.0
            total_attack += atk
            rec.record(f"attack_ingress.{t_name}", "bits/s", t, atk)
            dz = None
            if ts.spec.domain is not None:
                name = DomainName.parse(ts.spec.domain)
                dz = next((z for z in self.zones if name.is_within(z.domain)), None)
            domain_zone[t_name] = dz
            num = den = 0.0
            for j, (tn, region) in enumerate(sol["keys"]):
                if tn != t_name:
                    continue
                off = float(flows.offered[j])
                got = float(delivered[j]) * (self._dns_ok.get(region, 1.0) if dz is not None else 1.0)
                num += got
                den += off
                region_num[region] = region_num.get(region, 0.0) + got
                region_den[region] = region_den.get(region, 0.0) + off
            rec.record(f"legit_ingress.{t_name}", "bits/s", t, num)
            a = availability(num, den)
            if a is not None:
                rec.record(f"availability.{t_name}", "fraction", t, a)
            agg_num += num
            agg_den += den
            if ts.spec.fail_safe is not None:
                rec.record(f"target_reboots.{t_name}", "count", t, ts.reboots)
        rec.record("attack_ingress", "bits/s", t, total_attack)
        a = availability(agg_num, agg_den)
        if a is not None:
            rec.record("availability", "fraction", t, a)
        for r in sorted(region_den):
            a = availability(region_num[r], region_den[r])
            if a is not None:
                rec.record(f"availability.region.{r}", "fraction", t, a)
        res = sol["result"]
        rec.record("max_link_utilization", "fraction", t, res.max_utilization() if res is not None else 0.0)

        for z in self.zones:
            key = str(z.domain)
            offered = float(sum(p.offered for p in z.pops))
            rec.record(f"dns_offered.{key}", "queries/s", t, offered)
            if z.baseline > 0:
                # legitimate lookups plus their retries, relative to the no-attack level
                legit = float(sum(p.legit_offered for p in z.pops))
                rec.record(f"dns_load_multiplier.{key}", "ratio", t, legit / z.baseline)
            for p in z.pops:
                rec.record(f"dns_pool_load.{key}.{p.name}", "queries/s", t, p.assigned)
        if any(c.entry.vector == "water-torture" for c in self.commands):
            rec.record("torture_cache_hits", "count", t, self.torture_cache_hits)

        nxt = t + self.spec.metrics.cadence
        if nxt <= self.spec.horizon + 1e-9:
            self.engine.schedule(nxt, EventKind.METRIC_SAMPLE)

    # -- inspection ---------------------------------------------------------

    def ingress(self, target: str) -> dict[str, float]:
        """Traffic arriving at a target right now, by attack vector plus ``"legitimate"``."""
        self._ensure_solved()
        sol = self._solution
        flows, arrived = sol["flows"], sol["arrived"]
        node = self.targets[target].node
        out: dict[str, float] = {"legitimate": 0.0}
        for j in np.flatnonzero(flows.dst == node) if len(flows) else ():
            key = flows.vector[j] if flows.attack[j] else "legitimate"
            out[key] = out.get(key, 0.0) + float(arrived[j])
        return out

    # -- driver -------------------------------------------------------------

    def step_until(self, t_end: float) -> int:
        """Advance to ``t_end``, re-solving flows after every event that changed them."""
        e = self.engine
        n = 0
        while True:
            nxt = e.peek()
            if nxt is None or nxt.at > t_end:
                break
            e.step()
            n += 1
            if self._dirty and self._solution is not None:
                self._solve()
        e.run_until(t_end)
        return n

    def run(self, until: float | None = None) -> RunResult:
        horizon = self.spec.horizon if until is None else min(float(until), self.spec.horizon)
        t0 = time.perf_counter()
        n = self.step_until(horizon)
        report = summarize(self.recorder.series, dict(self.spec.annotations))
        return RunResult(
            self.spec,
            self.recorder.series,
            report,
            n,
            time.perf_counter() - t0,
            self.torture_cache_hits,
            self.torture_queries,
        )


def run_scenario(spec: ScenarioSpec, until: float | None = None, trace: bool = False) -> RunResult:
    return Simulation(spec, trace=trace).run(until)


__all__ = ["RunResult", "Simulation", "run_scenario"]
