"""Delivery network graph: origin, CDN, edge and peer nodes joined by capacitated links."""

from __future__ import annotations

import enum
import math
from collections import defaultdict
from dataclasses import dataclass, field
from fractions import Fraction
from typing import Iterable, Mapping, Optional

MBPS = 1_000_000


class TopologyError(ValueError):
    pass


class DuplicateId(TopologyError):
    pass


class DanglingEndpoint(TopologyError):
    pass


class InvalidCapacity(TopologyError):
    pass


class MissingOrigin(TopologyError):
    pass


class Unreachable(TopologyError):
    pass


class NodeKind(str, enum.Enum):
    ORIGIN = "Origin"
    CDN = "Cdn"
    EDGE = "Edge"
    SEEDER = "PeerSeeder"
    LEECHER = "PeerLeecher"

    @property
    def is_peer(self) -> bool:
        return self in (NodeKind.SEEDER, NodeKind.LEECHER)

    @classmethod
    def parse(cls, text: str) -> "NodeKind":
        key = str(text).replace("_", "").replace("-", "").lower()
        for kind in cls:
            if kind.value.lower() == key:
                return kind
        aliases = {"seeder": cls.SEEDER, "leecher": cls.LEECHER, "vts": cls.EDGE, "peer": cls.SEEDER}
        if key in aliases:
            return aliases[key]
        raise TopologyError(f"unknown node kind {text!r}")


class PathMetric(str, enum.Enum):
    SHORTEST_HOP = "ShortestHop"
    MAX_BW_PER_HOP = "MaxBwPerHop"


@dataclass(frozen=True)
class NodeSpec:
    id: str
    kind: NodeKind
    cpu_capacity: float = 0.0      # cpu-seconds per slot
    power_capacity: float = math.inf  # mAh, only meaningful for peers
    cache_capacity: int = 0        # segments
    join_time: float = 0.0
    leave_time: float = math.inf
    device: str = "pc"             # pc | mobile, selects the transcode profile class
    region: Optional[str] = None   # serving edge of a peer

    def __post_init__(self):
        if self.cpu_capacity < 0 or self.power_capacity < 0 or self.cache_capacity < 0:
            raise InvalidCapacity(f"node {self.id}: negative budget")
        if self.kind == NodeKind.LEECHER and not math.isfinite(self.power_capacity):
            raise InvalidCapacity(f"leecher {self.id} needs a finite power budget")
        if self.leave_time < self.join_time:
            raise TopologyError(f"node {self.id}: leaves before it joins")

    def active_at(self, t: float) -> bool:
        return self.join_time <= t < self.leave_time


@dataclass(frozen=True)
class LinkSpec:
    id: str
    a: str
    b: str
    capacity: float  # bits per second

    def __post_init__(self):
        if not self.capacity > 0:
            raise InvalidCapacity(f"link {self.id}: capacity must be positive")
        if self.a == self.b:
            raise TopologyError(f"link {self.id}: endpoints must differ")

    @property
    def endpoints(self) -> tuple[str, str]:
        return (self.a, self.b)

    def other(self, node: str) -> str:
        return self.b if node == self.a else self.a


@dataclass(frozen=True)
class Path:
    src: str
    dst: str
    links: tuple[str, ...]

    @property
    def hop_count(self) -> int:
        return len(self.links)


@dataclass
class Topology:
    nodes: dict[str, NodeSpec]
    links: dict[str, LinkSpec]
    adjacency: dict[str, list[tuple[str, str]]] = field(default_factory=dict)  # node -> [(link id, neighbor)]

    def node(self, node_id: str) -> NodeSpec:
        return self.nodes[node_id]

    def link(self, link_id: str) -> LinkSpec:
        return self.links[link_id]

    def of_kind(self, *kinds: NodeKind) -> list[NodeSpec]:
        return sorted((n for n in self.nodes.values() if n.kind in kinds), key=lambda n: n.id)

    @property
    def origin(self) -> NodeSpec:
        return self.of_kind(NodeKind.ORIGIN)[0]

    def path_nodes(self, path: Path) -> list[str]:
        seq = [path.src]
        for lid in path.links:
            seq.append(self.links[lid].other(seq[-1]))
        return seq


def _num(value, default=0.0) -> float:
    if value is None:
        return default
    if isinstance(value, str) and value.lower() in ("inf", "open", "none", ""):
        return math.inf
    return float(value)


def build_topology(config: Mapping) -> Topology:
    """Validate a ``{nodes: [...], links: [...]}`` description and index it.

    Link capacities are read in Mbps and stored in bits/s.
    """
    nodes: dict[str, NodeSpec] = {}
    for raw in config.get("nodes", []):
        nid = str(raw["id"])
        if nid in nodes:
            raise DuplicateId(nid)
        nodes[nid] = NodeSpec(
            id=nid,
            kind=NodeKind.parse(raw["kind"]),
            cpu_capacity=_num(raw.get("cpu"), 0.0),
            power_capacity=_num(raw.get("power"), math.inf),
            cache_capacity=int(raw.get("cache", 0)),
            join_time=_num(raw.get("join"), 0.0),
            leave_time=_num(raw.get("leave"), math.inf),
            device=str(raw.get("device", "pc")),
            region=raw.get("region"),
        )
    if sum(1 for n in nodes.values() if n.kind == NodeKind.ORIGIN) != 1:
        raise MissingOrigin("topology needs exactly one Origin node")

    links: dict[str, LinkSpec] = {}
    adjacency: dict[str, list[tuple[str, str]]] = defaultdict(list)
    for raw in config.get("links", []):
        lid = str(raw["id"])
        if lid in links or lid in nodes:
            raise DuplicateId(lid)
        a, b = str(raw["a"]), str(raw["b"])
        for end in (a, b):
            if end not in nodes:
                raise DanglingEndpoint(end)
        mbps = float(raw["mbps"])
        if not mbps > 0:
            raise InvalidCapacity(f"link {lid}: capacity must be positive")
        link = LinkSpec(lid, a, b, mbps * MBPS)
        links[lid] = link
        adjacency[a].append((lid, b))
        adjacency[b].append((lid, a))
    for nid in nodes:
        adjacency[nid].sort()
    return Topology(nodes=nodes, links=links, adjacency=dict(adjacency))


def residual_bandwidth(topology: Topology, path: Path, reserved: Optional[Mapping[str, float]] = None) -> float:
    """Bottleneck of (capacity - reserved) along the path."""
    reserved = reserved or {}
    if not path.links:
        return math.inf
    return min(topology.links[l].capacity - reserved.get(l, 0.0) for l in path.links)


def _min_hop_paths(topology: Topology, src: str, dst: str, usable) -> Optional[tuple[str, ...]]:
    # Layered BFS keeping, per node, the lexicographically smallest link sequence of the current length.
    # Shortest walks are always simple, so the prefix exchange argument holds.
    best = {src: ()}
    frontier = {src: ()}
    seen = {src}
    while frontier:
        nxt: dict[str, tuple[str, ...]] = {}
        for u in sorted(frontier, key=lambda n: frontier[n]):
            prefix = frontier[u]
            for lid, v in topology.adjacency.get(u, ()):
                if v in seen or not usable(lid):
                    continue
                cand = prefix + (lid,)
                if v not in nxt or cand < nxt[v]:
                    nxt[v] = cand
        if dst in nxt:
            return nxt[dst]
        seen.update(nxt)
        best.update(nxt)
        frontier = nxt
    return None


def select_path(topology: Topology, src: str, dst: str, metric=PathMetric.SHORTEST_HOP,
                reserved: Optional[Mapping[str, float]] = None) -> Path:
    if src == dst:
        raise ValueError("select_path needs distinct endpoints")
    for end in (src, dst):
        if end not in topology.nodes:
            raise DanglingEndpoint(end)
    metric = PathMetric(metric)
    reserved = reserved or {}

    def residual(lid):
        return topology.links[lid].capacity - reserved.get(lid, 0.0)

    if metric == PathMetric.SHORTEST_HOP:
        links = _min_hop_paths(topology, src, dst, lambda lid: True)
        if links is None:
            raise Unreachable(f"{dst} not reachable from {src}")
        return Path(src, dst, links)

    # The optimum is a min-hop path inside the subgraph of links whose residual is at least
    # some threshold b, so scanning every distinct residual as a threshold is exact.
    best_metric = None
    best_links = None
    for b in sorted({residual(l) for l in topology.links}, reverse=True):
        if b <= 0:
            continue
        links = _min_hop_paths(topology, src, dst, lambda lid, b=b: residual(lid) >= b)
        if links is None:
            continue
        value = Fraction(b) / len(links)
        if best_metric is None or value > best_metric or (value == best_metric and links < best_links):
            best_metric, best_links = value, links
    if best_links is None:
        raise Unreachable(f"{dst} not reachable from {src}")
    return Path(src, dst, best_links)


class ReservationLedger:
    """Per-run bandwidth leases on links, keyed by an owner tag so they can be released."""

    def __init__(self, topology: Topology):
        self.topology = topology
        self.reserved: dict[str, float] = defaultdict(float)
        self._leases: dict[object, list[tuple[str, float]]] = defaultdict(list)

    def residual(self, path: Path) -> float:
        return residual_bandwidth(self.topology, path, self.reserved)

    def reserve(self, owner, path: Path, bps: float) -> None:
        for lid in path.links:
            self.reserved[lid] += bps
            self._leases[owner].append((lid, bps))

    def release(self, owner) -> None:
        for lid, bps in self._leases.pop(owner, ()):
            self.reserved[lid] -= bps
            if abs(self.reserved[lid]) < 1e-6:
                self.reserved[lid] = 0.0

    def check(self, tol: float = 1e-6) -> None:
        for lid, used in self.reserved.items():
            cap = self.topology.links[lid].capacity
            if used > cap * (1 + tol):
                raise AssertionError(f"link {lid} over-committed: {used:.0f} > {cap:.0f} bps")

    def utilisation(self) -> dict[str, float]:
        return {lid: self.reserved.get(lid, 0.0) / link.capacity for lid, link in self.topology.links.items()}


def bandwidth_between(topology: Topology, pairs: Iterable[tuple[str, str]], reserved=None) -> dict[tuple[str, str], float]:
    out = {}
    for src, dst in pairs:
        try:
            out[(src, dst)] = residual_bandwidth(topology, select_path(topology, src, dst), reserved)
        except Unreachable:
            out[(src, dst)] = 0.0
    return out
