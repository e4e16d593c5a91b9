"""Simulated Internet: DSL access trees hung off a core mesh, plus servers.

Traffic is fluid. A link whose offered load exceeds its capacity scales every
flow crossing it by ``capacity / offered``; the scaled rate is what the flow
offers to its next hop.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from enum import Enum
from typing import Callable, Iterable, Mapping, Sequence

import numpy as np
import scipy.sparse as sp
from scipy.sparse.csgraph import breadth_first_order

MAX_SESSIONS_PER_BRAS = 50_000


class NodeKind(str, Enum):
    IOT_DEVICE = "iot-device"
    CPE_ROUTER = "cpe-router"
    DSLAM = "dslam"
    BRAS = "bras"
    CORE_ROUTER = "core-router"
    RECURSIVE_DNS = "recursive-dns"
    AUTH_DNS = "auth-dns"
    TARGET = "target-server"
    SCRUBBER = "scrubber-pop"
    C2_HOST = "c2-host"
    REPORTING = "reporting-server"
    LOADER = "loader-host"
    DISTRIBUTION = "distribution-server"


KIND_CODES = {k: i for i, k in enumerate(NodeKind)}
KINDS_BY_CODE = list(NodeKind)

# flow classes
LEGITIMATE = "legitimate"
ATTACK = "attack"


class TopologyError(ValueError):
    pass


class RoutingError(LookupError):
    pass


@dataclass(frozen=True)
class Node:
    id: int
    kind: NodeKind
    region: str
    name: str


@dataclass(frozen=True)
class Link:
    id: int
    src: int
    dst: int
    capacity: float
    latency: float


@dataclass
class Flow:
    src: int
    dst: int
    offered: float
    cls: str = ATTACK
    vector: str | None = None
    spoofed_src: int | None = None

    def __post_init__(self):
        if not self.offered >= 0:
            raise ValueError(f"offered rate must be >= 0, got {self.offered!r}")
        if self.cls not in (ATTACK, LEGITIMATE):
            raise ValueError(f"unknown flow class {self.cls!r}")
        if self.spoofed_src is not None and self.spoofed_src == self.src:
            raise ValueError("spoofed source must differ from the true source")


@dataclass
class FlowSet:
    """Column-oriented flows; what the solver actually consumes."""

    src: np.ndarray
    dst: np.ndarray
    offered: np.ndarray
    attack: np.ndarray
    vector: list[str | None] = field(default_factory=list)

    @classmethod
    def from_flows(cls, flows: Sequence[Flow]) -> "FlowSet":
        return cls(
            src=np.array([f.src for f in flows], dtype=np.int64),
            dst=np.array([f.dst for f in flows], dtype=np.int64),
            offered=np.array([f.offered for f in flows], dtype=float),
            attack=np.array([f.cls == ATTACK for f in flows], dtype=bool),
            vector=[f.vector for f in flows],
        )

    @classmethod
    def empty(cls) -> "FlowSet":
        return cls(np.zeros(0, np.int64), np.zeros(0, np.int64), np.zeros(0), np.zeros(0, bool), [])

    def __len__(self) -> int:
        return len(self.src)

    @classmethod
    def concat(cls, parts: Sequence["FlowSet"]) -> "FlowSet":
        parts = [p for p in parts if len(p)]
        if not parts:
            return cls.empty()
        vec: list[str | None] = []
        for p in parts:
            vec.extend(p.vector if p.vector else [None] * len(p))
        return cls(
            np.concatenate([p.src for p in parts]),
            np.concatenate([p.dst for p in parts]),
            np.concatenate([p.offered for p in parts]),
            np.concatenate([p.attack for p in parts]),
            vec,
        )


class Network:
    """Directed graph of typed nodes and capacity-limited links."""

    def __init__(self):
        self._kind_chunks: list[np.ndarray] = []
        self._region_chunks: list[np.ndarray] = []
        self._parent_chunks: list[np.ndarray] = []
        self.region_names: list[str] = []
        self._region_index: dict[str, int] = {}
        self.names: dict[str, int] = {}
        self._n = 0
        self._link_chunks: list[tuple[np.ndarray, np.ndarray, np.ndarray, np.ndarray]] = []
        self._n_links = 0
        self._version = 0
        self._cache: dict = {}
        self._disabled: set[int] = set()

    # -- construction -----------------------------------------------------

    def _region_code(self, region: str) -> int:
        if region not in self._region_index:
            self._region_index[region] = len(self.region_names)
            self.region_names.append(region)
        return self._region_index[region]

    def add_nodes(self, kind: NodeKind, count: int, region: str, parents: np.ndarray | None = None) -> np.ndarray:
        ids = np.arange(self._n, self._n + count, dtype=np.int64)
        self._kind_chunks.append(np.full(count, KIND_CODES[NodeKind(kind)], dtype=np.int8))
        self._region_chunks.append(np.full(count, self._region_code(region), dtype=np.int16))
        par = np.full(count, -1, dtype=np.int64) if parents is None else np.asarray(parents, dtype=np.int64)
        self._parent_chunks.append(par)
        self._n += count
        self._touch()
        return ids

    def add_node(self, kind: NodeKind, region: str, name: str | None = None, parent: int = -1) -> int:
        node = int(self.add_nodes(kind, 1, region, np.array([parent]))[0])
        if name is not None:
            if name in self.names:
                raise TopologyError(f"duplicate node name {name!r}")
            self.names[name] = node
        return node

    def add_links(self, src, dst, capacity, latency, both: bool = True) -> np.ndarray:
        src = np.atleast_1d(np.asarray(src, dtype=np.int64))
        dst = np.atleast_1d(np.asarray(dst, dtype=np.int64))
        cap = np.broadcast_to(np.asarray(capacity, dtype=float), src.shape).copy()
        lat = np.broadcast_to(np.asarray(latency, dtype=float), src.shape).copy()
        if np.any(~(cap > 0)):
            raise TopologyError("link capacity must be positive")
        if np.any(lat < 0):
            raise TopologyError("link latency must be non-negative")
        if np.any(src == dst):
            raise TopologyError("self-loop links are not allowed")
        if both:
            src, dst = np.concatenate([src, dst]), np.concatenate([dst, src])
            cap, lat = np.concatenate([cap, cap]), np.concatenate([lat, lat])
        ids = np.arange(self._n_links, self._n_links + len(src), dtype=np.int64)
        self._link_chunks.append((src, dst, cap, lat))
        self._n_links += len(src)
        self._touch()
        return ids

    def add_link(self, a: int, b: int, capacity: float, latency: float = 0.0, both: bool = True) -> list[int]:
        return [int(i) for i in self.add_links([a], [b], capacity, latency, both)]

    def disable_links(self, ids: Iterable[int]) -> None:
        """Take links out of routing; their ids stay reserved."""
        self._disabled.update(int(i) for i in ids)
        self._touch()

    @property
    def link_enabled(self) -> np.ndarray:
        mask = np.ones(self._n_links, dtype=bool)
        if self._disabled:
            mask[list(self._disabled)] = False
        return mask

    def _touch(self):
        self._version += 1
        self._cache.clear()

    # -- columnar views -----------------------------------------------------

    def _cat(self, key: str, chunks, dtype):
        arr = self._cache.get(key)
        if arr is None:
            arr = np.concatenate(chunks) if chunks else np.zeros(0, dtype=dtype)
            self._cache[key] = arr
        return arr

    @property
    def n_nodes(self) -> int:
        return self._n

    @property
    def n_links(self) -> int:
        return self._n_links

    @property
    def kind_codes(self) -> np.ndarray:
        return self._cat("kind", self._kind_chunks, np.int8)

    @property
    def region_codes(self) -> np.ndarray:
        return self._cat("region", self._region_chunks, np.int16)

    @property
    def parent(self) -> np.ndarray:
        return self._cat("parent", self._parent_chunks, np.int64)

    def _links(self) -> tuple[np.ndarray, np.ndarray, np.ndarray, np.ndarray]:
        arr = self._cache.get("links")
        if arr is None:
            if self._link_chunks:
                arr = tuple(np.concatenate([c[i] for c in self._link_chunks]) for i in range(4))
            else:
                arr = (np.zeros(0, np.int64), np.zeros(0, np.int64), np.zeros(0), np.zeros(0))
            self._cache["links"] = arr
        return arr

    @property
    def link_src(self) -> np.ndarray:
        return self._links()[0]

    @property
    def link_dst(self) -> np.ndarray:
        return self._links()[1]

    @property
    def link_capacity(self) -> np.ndarray:
        return self._links()[2]

    @property
    def link_latency(self) -> np.ndarray:
        return self._links()[3]

    def set_link_capacity(self, link: int, capacity: float) -> None:
        if not capacity > 0:
            raise TopologyError("link capacity must be positive")
        # rewrite in place within its chunk; routing is unaffected
        offset = 0
        for src, dst, cap, lat in self._link_chunks:
            if link < offset + len(src):
                cap[link - offset] = capacity
                break
            offset += len(src)
        self._cache.pop("links", None)

    def set_parent(self, node: int, parent: int) -> None:
        offset = 0
        for chunk in self._parent_chunks:
            if node < offset + len(chunk):
                chunk[node - offset] = parent
                break
            offset += len(chunk)
        self._cache.pop("parent", None)

    def nodes_of_kind(self, kind: NodeKind) -> np.ndarray:
        key = ("of-kind", kind)
        arr = self._cache.get(key)
        if arr is None:
            arr = np.flatnonzero(self.kind_codes == KIND_CODES[kind])
            self._cache[key] = arr
        return arr

    def node(self, node_id: int) -> Node:
        if not 0 <= node_id < self._n:
            raise KeyError(node_id)
        name = next((k for k, v in self.names.items() if v == node_id), f"n{node_id}")
        return Node(
            node_id,
            KINDS_BY_CODE[int(self.kind_codes[node_id])],
            self.region_names[int(self.region_codes[node_id])],
            name,
        )

    def kind_of(self, node_id: int) -> NodeKind:
        return KINDS_BY_CODE[int(self.kind_codes[node_id])]

    def region_of(self, node_id: int) -> str:
        return self.region_names[int(self.region_codes[node_id])]

    def link(self, link_id: int) -> Link:
        s, d, c, l = self._links()
        return Link(int(link_id), int(s[link_id]), int(d[link_id]), float(c[link_id]), float(l[link_id]))

    def find_link(self, a: int, b: int) -> int:
        csr = self._csr()
        row = slice(csr.indptr[a], csr.indptr[a + 1])
        cols = csr.indices[row]
        hit = np.flatnonzero(cols == b)
        if not len(hit):
            raise RoutingError(f"no link {a}->{b}")
        return int(csr.data[row][hit[0]]) - 1

    # -- routing ------------------------------------------------------------

    def _csr(self) -> sp.csr_matrix:
        csr = self._cache.get("csr")
        if csr is None:
            src, dst, _, _ = self._links()
            ids = np.flatnonzero(self.link_enabled)
            src, dst = src[ids], dst[ids]
            pairs = src * max(self._n, 1) + dst
            if len(np.unique(pairs)) != len(pairs):
                raise TopologyError("parallel links between the same ordered node pair")
            # data holds link id + 1 so that link 0 is not an implicit zero
            csr = sp.csr_matrix((ids + 1, (src, dst)), shape=(self._n, self._n))
            csr.sort_indices()
            self._cache["csr"] = csr
        return csr

    def next_hops(self, dst: int) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
        """Per node: hop distance to ``dst``, next node and next link on the canonical route.

        Among shortest paths the canonical one is the lexicographically smallest
        node sequence, obtained greedily by always stepping to the smallest-id
        neighbour that is one hop closer. Unreachable nodes get distance -1.
        """
        key = ("nh", int(dst))
        hit = self._cache.get(key)
        if hit is not None:
            return hit
        if not 0 <= dst < self._n:
            raise RoutingError(f"unknown node {dst}")
        csr = self._csr()
        order, pred = breadth_first_order(csr.T.tocsr(), int(dst), directed=True, return_predecessors=True)
        dist = _tree_depths(pred, int(dst), self._n)
        # candidate edges u->v with dist[v] == dist[u] - 1
        src_e = np.repeat(np.arange(self._n, dtype=np.int64), np.diff(csr.indptr))
        dst_e = csr.indices.astype(np.int64)
        ok = (dist[src_e] > 0) & (dist[dst_e] == dist[src_e] - 1)
        cand_src = src_e[ok]
        # CSR rows are sorted by column, so the first candidate per row is the smallest neighbour
        rows, first = np.unique(cand_src, return_index=True)
        nxt = np.full(self._n, -1, dtype=np.int64)
        nlink = np.full(self._n, -1, dtype=np.int64)
        nxt[rows] = dst_e[ok][first]
        nlink[rows] = csr.data[ok][first] - 1
        res = (dist, nxt, nlink)
        self._cache[key] = res
        return res

    def paths(self, srcs: np.ndarray, dst: int) -> tuple[np.ndarray, np.ndarray]:
        """Link matrix (rows padded with -1) and hop counts for many sources to one destination."""
        srcs = np.asarray(srcs, dtype=np.int64)
        dist, nxt, nlink = self.next_hops(dst)
        d = dist[srcs]
        if np.any(d < 0):
            bad = int(srcs[np.flatnonzero(d < 0)[0]])
            raise RoutingError(f"node {bad} cannot reach node {dst}")
        width = int(d.max()) if len(d) else 0
        out = np.full((len(srcs), width), -1, dtype=np.int64)
        cur = srcs.copy()
        for h in range(width):
            live = d > h
            out[live, h] = nlink[cur[live]]
            cur[live] = nxt[cur[live]]
        return out, d.astype(np.int64)


def _tree_depths(pred: np.ndarray, root: int, n: int) -> np.ndarray:
    """Depth of every node in a BFS predecessor tree via pointer jumping."""
    reach = pred >= 0
    reach[root] = True
    jump = np.where(pred >= 0, pred, root).astype(np.int64)
    jump[root] = root
    acc = np.where(reach, 1, 0).astype(np.int64)
    acc[root] = 0
    while True:
        moving = jump != root
        if not moving.any():
            break
        acc = acc + np.where(moving, acc[jump], 0)
        jump = np.where(moving, jump[jump], root)
    return np.where(reach, acc, -1)


def route(network: Network, src: int, dst: int) -> list[int]:
    """Canonical shortest path ``[src, ..., dst]`` by hop count."""
    if not (0 <= src < network.n_nodes and 0 <= dst < network.n_nodes):
        raise RoutingError(f"unknown node in route({src}, {dst})")
    dist, nxt, _ = network.next_hops(dst)
    if dist[src] < 0:
        raise RoutingError(f"node {src} cannot reach node {dst}")
    path = [int(src)]
    cur = int(src)
    while cur != dst:
        cur = int(nxt[cur])
        path.append(cur)
    return path


def route_links(network: Network, src: int, dst: int) -> list[int]:
    links, hops = network.paths(np.array([src]), dst)
    return [int(x) for x in links[0, : hops[0]]]


def path_latency(network: Network, srcs: np.ndarray, dst: int) -> np.ndarray:
    links, hops = network.paths(srcs, dst)
    lat = np.where(links >= 0, network.link_latency[np.maximum(links, 0)], 0.0)
    return lat.sum(axis=1)


# ---------------------------------------------------------------------------
# Topology construction
# ---------------------------------------------------------------------------


@dataclass
class RegionSpec:
    name: str
    devices: int
    cpe: int
    dslam: int
    bras: int
    core: int | None = None
    resolver: bool = True


@dataclass
class LinkClasses:
    """Per-tier link parameters, both directions alike."""

    device: float = 100e6
    cpe: float = 1e9
    dslam: float = 10e9
    bras: float = 100e9
    core: float = 10e12
    server: float = 10e9


DEFAULT_LATENCY = LinkClasses(device=0.001, cpe=0.005, dslam=0.002, bras=0.002, core=0.010, server=0.001)


@dataclass
class ServerSpec:
    name: str
    kind: NodeKind
    core: int = 0
    capacity: float | None = None
    region: str = "core"


@dataclass
class TopologySpec:
    regions: list[RegionSpec]
    core_routers: int = 1
    capacity: LinkClasses = field(default_factory=LinkClasses)
    latency: LinkClasses = field(default_factory=lambda: LinkClasses(**vars(DEFAULT_LATENCY)))
    servers: list[ServerSpec] = field(default_factory=list)


def _blocks(children: int, parents: int) -> np.ndarray:
    """Assign ``children`` to ``parents`` in contiguous, near-equal blocks."""
    return (np.arange(children, dtype=np.int64) * parents) // children


def validate_topology(spec: TopologySpec) -> list[str]:
    errors = []
    if spec.core_routers < 1:
        errors.append("core_routers must be >= 1")
    for tier in ("device", "cpe", "dslam", "bras", "core", "server"):
        if not getattr(spec.capacity, tier) > 0:
            errors.append(f"capacity.{tier} must be positive")
        if getattr(spec.latency, tier) < 0:
            errors.append(f"latency.{tier} must be non-negative")
    seen = set()
    for r in spec.regions:
        if r.name in seen:
            errors.append(f"duplicate region {r.name!r}")
        seen.add(r.name)
        counts = (r.devices, r.cpe, r.dslam, r.bras)
        if r.devices < 0 or min(counts[1:]) < 1:
            errors.append(f"region {r.name!r}: cpe, dslam and bras counts must be >= 1")
            continue
        if not (r.devices >= r.cpe or r.devices == 0) or r.cpe < r.dslam or r.dslam < r.bras:
            errors.append(f"region {r.name!r}: each tier needs at least as many children as parents")
            continue
        dslam_of_cpe = _blocks(r.cpe, r.dslam)
        bras_of_dslam = _blocks(r.dslam, r.bras)
        sessions = np.bincount(bras_of_dslam[dslam_of_cpe], minlength=r.bras)
        if sessions.max() > MAX_SESSIONS_PER_BRAS:
            errors.append(
                f"region {r.name!r}: {int(sessions.max())} CPE sessions on one BRAS exceeds {MAX_SESSIONS_PER_BRAS}"
            )
        if r.core is not None and not 0 <= r.core < spec.core_routers:
            errors.append(f"region {r.name!r}: core index {r.core} out of range")
    for s in spec.servers:
        if not 0 <= s.core < max(spec.core_routers, 1):
            errors.append(f"server {s.name!r}: core index {s.core} out of range")
        if s.capacity is not None and not s.capacity > 0:
            errors.append(f"server {s.name!r}: capacity must be positive")
    return errors


@dataclass
class BuiltTopology:
    network: Network
    core: np.ndarray
    devices: np.ndarray
    device_region: np.ndarray
    device_cpe: np.ndarray
    bras_by_region: dict[str, np.ndarray]
    resolvers: dict[str, int]
    servers: dict[str, int]


def build_topology(spec: TopologySpec) -> BuiltTopology:
    errors = validate_topology(spec)
    if errors:
        raise TopologyError("; ".join(errors))
    net = Network()
    cap, lat = spec.capacity, spec.latency
    core = net.add_nodes(NodeKind.CORE_ROUTER, spec.core_routers, "core")
    for i, name in enumerate(core):
        net.names[f"core-{i}"] = int(name)
    if len(core) > 1:
        a, b = np.triu_indices(len(core), k=1)
        net.add_links(core[a], core[b], cap.core, lat.core)

    devices, dev_region, dev_cpe = [], [], []
    bras_by_region: dict[str, np.ndarray] = {}
    resolvers: dict[str, int] = {}
    for ri, r in enumerate(spec.regions):
        core_node = core[r.core if r.core is not None else ri % len(core)]
        bras = net.add_nodes(NodeKind.BRAS, r.bras, r.name, np.full(r.bras, core_node))
        net.add_links(bras, np.full(r.bras, core_node), cap.bras, lat.bras)
        dslam_par = bras[_blocks(r.dslam, r.bras)]
        dslam = net.add_nodes(NodeKind.DSLAM, r.dslam, r.name, dslam_par)
        net.add_links(dslam, dslam_par, cap.dslam, lat.dslam)
        cpe_par = dslam[_blocks(r.cpe, r.dslam)]
        cpe = net.add_nodes(NodeKind.CPE_ROUTER, r.cpe, r.name, cpe_par)
        net.add_links(cpe, cpe_par, cap.cpe, lat.cpe)
        if r.devices:
            dev_par = cpe[_blocks(r.devices, r.cpe)]
            dev = net.add_nodes(NodeKind.IOT_DEVICE, r.devices, r.name, dev_par)
            net.add_links(dev, dev_par, cap.device, lat.device)
            devices.append(dev)
            dev_cpe.append(dev_par)
            dev_region.append(np.full(r.devices, ri, dtype=np.int32))
        bras_by_region[r.name] = bras
        for j, b in enumerate(bras):
            net.names[f"{r.name}-bras-{j}"] = int(b)
        if r.resolver:
            res = net.add_node(NodeKind.RECURSIVE_DNS, r.name, f"{r.name}-resolver", parent=int(bras[0]))
            net.add_link(res, int(bras[0]), cap.server, lat.server)
            resolvers[r.name] = res

    servers: dict[str, int] = {}
    for s in spec.servers:
        node = net.add_node(s.kind, s.region, s.name, parent=int(core[s.core]))
        net.add_link(node, int(core[s.core]), s.capacity if s.capacity is not None else cap.server, lat.server)
        servers[s.name] = node

    cat = lambda xs, dt: np.concatenate(xs) if xs else np.zeros(0, dt)
    return BuiltTopology(
        network=net,
        core=core,
        devices=cat(devices, np.int64),
        device_region=cat(dev_region, np.int32),
        device_cpe=cat(dev_cpe, np.int64),
        bras_by_region=bras_by_region,
        resolvers=resolvers,
        servers=servers,
    )


# ---------------------------------------------------------------------------
# Fluid delivery
# ---------------------------------------------------------------------------


HopFilter = Callable[[np.ndarray], np.ndarray]


@dataclass
class DeliveryResult:
    delivered: np.ndarray
    link_ids: np.ndarray
    link_offered: np.ndarray
    link_carried: np.ndarray
    link_capacity: np.ndarray
    hop_links: np.ndarray = field(repr=False, default=None)
    hop_rates: np.ndarray = field(repr=False, default=None)

    @property
    def utilization(self) -> np.ndarray:
        if not len(self.link_ids):
            return np.zeros(0)
        return self.link_carried / self.link_capacity

    def utilization_of(self, link: int) -> float:
        hit = np.flatnonzero(self.link_ids == link)
        return float(self.utilization[hit[0]]) if len(hit) else 0.0

    def max_utilization(self) -> float:
        u = self.utilization
        return float(u.max()) if len(u) else 0.0


def flow_paths(network: Network, flows: FlowSet) -> tuple[np.ndarray, np.ndarray]:
    n = len(flows)
    if n == 0:
        return np.zeros((0, 0), np.int64), np.zeros(0, np.int64)
    parts = {}
    width = 0
    for d in np.unique(flows.dst):
        idx = np.flatnonzero(flows.dst == d)
        links, hops = network.paths(flows.src[idx], int(d))
        parts[int(d)] = (idx, links, hops)
        width = max(width, links.shape[1])
    out = np.full((n, width), -1, dtype=np.int64)
    hops_all = np.zeros(n, dtype=np.int64)
    for idx, links, hops in parts.values():
        out[idx, : links.shape[1]] = links
        hops_all[idx] = hops
    return out, hops_all


def _link_levels(network: Network, hop_links: np.ndarray) -> np.ndarray | None:
    """Longest-path depth of each link in the link precedence DAG, or None on a cycle."""
    level = np.zeros(network.n_links, dtype=np.int64)
    if hop_links.shape[1] < 2:
        return level
    prev = hop_links[:, :-1].ravel()
    nxt = hop_links[:, 1:].ravel()
    keep = (prev >= 0) & (nxt >= 0)
    # one integer per (prev, next) pair keeps the de-duplication one-dimensional
    key = np.unique(prev[keep] * network.n_links + nxt[keep])
    if not len(key):
        return level
    src, dst = np.divmod(key, network.n_links)
    bound = len(np.union1d(src, dst))
    for _ in range(bound + 1):
        cand = level[src] + 1
        new = level.copy()
        np.maximum.at(new, dst, cand)
        if np.array_equal(new, level):
            return level
        level = new
    return None


def apply_flows(
    network: Network,
    flows: Sequence[Flow] | FlowSet,
    hop_filters: Mapping[int, HopFilter] | None = None,
    *,
    max_iter: int = 10_000,
    tol: float = 1e-12,
) -> DeliveryResult:
    """Solve proportional fluid sharing along every flow's canonical route.

    ``hop_filters`` maps a node id to a function of flow indices returning the
    fraction of each flow that survives after arriving at that node (used for
    scrubbing). Links are processed in dependency order so that each link sees
    the rates its flows carry after all upstream contention.
    """
    fs = flows if isinstance(flows, FlowSet) else FlowSet.from_flows(list(flows))
    n = len(fs)
    if n == 0:
        e = np.zeros(0)
        return DeliveryResult(np.zeros(0), np.zeros(0, np.int64), e, e, e)
    if np.any(fs.offered < 0):
        raise ValueError("offered rates must be non-negative")
    hop_links, hops = flow_paths(network, fs)
    width = hop_links.shape[1]
    cap = network.link_capacity

    factor_at = np.ones_like(hop_links, dtype=float)
    if hop_filters:
        dst_of_link = network.link_dst
        for node, fn in hop_filters.items():
            rows, cols = np.nonzero((hop_links >= 0) & (dst_of_link[np.maximum(hop_links, 0)] == node))
            if len(rows):
                factor_at[rows, cols] = np.clip(fn(rows), 0.0, 1.0)

    # rates[f, h] = rate entering hop h; rates[f, hops[f]] = delivered
    rates = np.zeros((n, width + 1))
    rates[:, 0] = fs.offered
    valid = hop_links >= 0
    rows, cols = np.nonzero(valid)
    lk = hop_links[rows, cols]

    levels = _link_levels(network, hop_links)
    if levels is not None:
        lvl = levels[lk]
        order = np.lexsort((cols, lvl))
        rows, cols, lk, lvl = rows[order], cols[order], lk[order], lvl[order]
        bounds = np.flatnonzero(np.diff(lvl)) + 1
        for seg in np.split(np.arange(len(lk)), bounds):
            r, c, l = rows[seg], cols[seg], lk[seg]
            inflow = rates[r, c]
            load = np.bincount(l, weights=inflow, minlength=network.n_links)
            scale = np.ones_like(load)
            over = load > cap
            scale[over] = cap[over] / load[over]
            rates[r, c + 1] = inflow * scale[l] * factor_at[r, c]
    else:
        # cyclic dependencies between links: Jacobi fixed point
        for _ in range(max_iter):
            inflow = rates[rows, cols]
            load = np.bincount(lk, weights=inflow, minlength=network.n_links)
            scale = np.ones_like(load)
            over = load > cap
            scale[over] = cap[over] / load[over]
            new = rates.copy()
            new[rows, cols + 1] = inflow * scale[lk] * factor_at[rows, cols]
            done = np.max(np.abs(new - rates)) <= tol * max(1.0, float(fs.offered.max()))
            rates = new
            if done:
                break

    delivered = rates[np.arange(n), hops]
    inflow = rates[rows, cols]
    used = np.unique(lk)
    load = np.bincount(lk, weights=inflow, minlength=network.n_links)[used]
    carried = np.minimum(load, cap[used])
    return DeliveryResult(
        delivered=delivered,
        link_ids=used,
        link_offered=load,
        link_carried=carried,
        link_capacity=cap[used].copy(),
        hop_links=hop_links,
        hop_rates=rates,
    )
