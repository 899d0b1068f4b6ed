"""Polynomial-time decision and allocation heuristics.

Greedy per-request selection (gba), the edge fine-grained cascade (efg1) with miss-counter
triggers (efg2_tick), the closed-form fairness allocation (sfg_allocate), hop-weighted sharing
(leader_allocate), and the deadline-aware edge scheduler with its auto-scaler.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field, replace
from typing import Callable, Iterable, Mapping, Optional, Sequence

from .policy import (Action, Assignment, DecisionContext, NoFeasibleAction, Priced, Transform, Tree,
                     _ensure_normalizers, evaluate_assignment, price_actions, priced_objective, reserve)
from .topology import NodeKind, Path
from .workload import RequestEvent, ServiceClass


def _best(scored: Iterable[tuple[float, Priced]]) -> Priced:
    best = None
    for value, p in scored:
        if best is None or (value, p.action.sort_key) < (best[0], best[1].action.sort_key):
            best = (value, p)
    if best is None:
        raise NoFeasibleAction("empty candidate set")
    return best[1]


def gba(ctx: DecisionContext, request: RequestEvent, tree: Tree = Tree.ALIVE, variants=None) -> tuple[str, Action]:
    """Scan feasible nodes, then each node's feasible actions, keeping the global minimum.

    Peer nodes are scored on latency alone; their actions carry no dollar cost, so the
    score agrees with the full objective.
    """
    priced = price_actions(ctx, request, tree, variants)
    if not priced:
        raise NoFeasibleAction(str(request))
    ctx = _ensure_normalizers(ctx, [request], tree, variants)
    by_node: dict[str, list[Priced]] = {}
    for p in priced:
        by_node.setdefault(p.action.source_node, []).append(p)
    lat_norm = ctx.normalizers[0]
    scored = []
    for node in sorted(by_node):
        peer = ctx.kind(node).is_peer
        for p in by_node[node]:
            if peer and p.cost == 0 and tree not in (Tree.ESHAS, Tree.CSDN):
                value = ctx.weights.beta * (p.latency / lat_norm if lat_norm else 0.0)
            else:
                value = priced_objective(ctx, p, request)
            scored.append((value, p))
    choice = _best(scored)
    return choice.action.source_node, choice.action


def efg1(ctx: DecisionContext, request: RequestEvent, thr_comp: Optional[float] = None,
         tree: Tree = Tree.ARARAT, variants=None) -> Action:
    """Edge fine-grained cascade.

    Stages: local exact, local transcode, neighbour relay (gated by thr_comp), the best remote
    exact copy per source tier, then every remote higher-rung-plus-transform option. All
    priced candidates compete on the weighted objective.
    """
    if thr_comp is not None and thr_comp != ctx.thr_comp:
        ctx = replace(ctx, thr_comp=thr_comp, neighbor_cpu=None, _priced={})
    priced = price_actions(ctx, request, tree, variants)
    if not priced:
        raise NoFeasibleAction(str(request))
    ctx = _ensure_normalizers(ctx, [request], tree, variants)
    local = request.edge_id
    scored = [(priced_objective(ctx, p, request), p) for p in priced]

    candidates = []
    candidates += [s for s in scored if s[1].action.source_node == local and s[1].action.transform == Transform.NONE]
    candidates += [s for s in scored if s[1].action.source_node == local and s[1].action.exec_node == local]
    candidates += [s for s in scored if s[1].action.relay_via is not None]
    remote_exact: dict[NodeKind, tuple[float, Priced]] = {}
    for s in scored:
        a = s[1].action
        if a.source_node == local or a.transform != Transform.NONE:
            continue
        tier = ctx.kind(a.source_node)
        if tier.is_peer:
            tier = NodeKind.SEEDER
        held = remote_exact.get(tier)
        if held is None or (s[0], a.sort_key) < (held[0], held[1].action.sort_key):
            remote_exact[tier] = s
    candidates += list(remote_exact.values())
    candidates += [s for s in scored if s[1].action.source_node != local and s[1].action.transform != Transform.NONE
                   and s[1].action.relay_via is None]
    return _best(candidates).action


def greedy_assign(ctx: DecisionContext, requests: Sequence[RequestEvent], choose: Callable[[DecisionContext, RequestEvent], Action]) -> Assignment:
    """Decide requests one by one, reserving resources after each, then score on the original context."""
    work = ctx
    pairs = []
    for r in requests:
        try:
            action = choose(work, r)
        except NoFeasibleAction:
            return Assignment(tuple(pairs), False, math.nan)
        pairs.append((r, action))
        work = reserve(work, r, action)
    return evaluate_assignment(ctx, pairs)


# --- fine-grained II: miss counters -----------------------------------------------------------

@dataclass(frozen=True)
class FlowDemand:
    edge_id: str
    server_id: str
    demand: float   # bits per second
    path: Path

    def __post_init__(self):
        if self.demand < 0:
            raise ValueError("demand must be non-negative")


@dataclass
class MissCounters:
    thr_miss: int = 100
    miss_counter: dict[tuple[str, str], int] = field(default_factory=dict)
    hit_bitrates: dict[tuple[str, str], float] = field(default_factory=dict)
    miss_bitrates: dict[tuple[str, str], float] = field(default_factory=dict)

    def record(self, edge: str, server: str, bitrate: float, hit: bool) -> None:
        key = (edge, server)
        if hit:
            self.hit_bitrates[key] = self.hit_bitrates.get(key, 0.0) + bitrate
        else:
            self.miss_bitrates[key] = self.miss_bitrates.get(key, 0.0) + bitrate
            self.miss_counter[key] = self.miss_counter.get(key, 0) + 1

    def demand(self, edge: str, server: str) -> float:
        key = (edge, server)
        return self.hit_bitrates.get(key, 0.0) + self.miss_bitrates.get(key, 0.0)


@dataclass(frozen=True)
class Trigger:
    edge_id: str
    server_id: str
    hit_bitrates: float
    miss_bitrates: float


def efg2_tick(counters: MissCounters, edge: str) -> list[Trigger]:
    out = []
    for (e, server) in sorted(counters.miss_counter):
        if e != edge or counters.miss_counter[(e, server)] <= counters.thr_miss:
            continue
        out.append(Trigger(edge, server, counters.hit_bitrates.get((e, server), 0.0),
                           counters.miss_bitrates.get((e, server), 0.0)))
        counters.miss_counter[(e, server)] = 0
    return out


# --- allocation -------------------------------------------------------------------------------

def sfg_allocate(link_capacities: Mapping[str, float], demands: Sequence[FlowDemand]) -> tuple[float, list[float]]:
    """Max-min fair share: one common satisfied fraction F for every flow.

    F = min(1, min over links of capacity / demand crossing it); each flow gets F * demand.
    """
    load: dict[str, float] = {}
    for d in demands:
        for lid in d.path.links:
            if lid not in link_capacities:
                raise KeyError(f"flow {d.edge_id}->{d.server_id} uses unknown link {lid}")
            load[lid] = load.get(lid, 0.0) + d.demand
    F = 1.0
    for lid, total in load.items():
        if total > 0:
            F = min(F, link_capacities[lid] / total)
    return F, [F * d.demand for d in demands]


def binding_link(link_capacities: Mapping[str, float], demands: Sequence[FlowDemand], F: float) -> Optional[str]:
    """The link whose capacity pins F (smallest id among ties), or None when F = 1."""
    if F >= 1.0:
        return None
    best = None
    for lid in sorted({l for d in demands for l in d.path.links}):
        total = sum(d.demand for d in demands if lid in d.path.links)
        if total > 0 and math.isclose(link_capacities[lid] / total, F, rel_tol=1e-12):
            return lid
    return best


def leader_allocate(link_capacity: float, users: Sequence[tuple[str, str, int]]) -> list[float]:
    """Share a link among (edge, server) users, favouring the ones with fewer hops."""
    if not users:
        return []
    if len(users) == 1:
        return [float(link_capacity)]
    H = sum(h for _, _, h in users)
    if any(h <= 0 or h > H for _, _, h in users):
        raise ValueError("hop counts must be positive")
    denom = sum(H - h for _, _, h in users)
    return [(H - h) / denom * link_capacity for _, _, h in users]


# --- edge scheduler ---------------------------------------------------------------------------

@dataclass(frozen=True)
class SarenaQueue:
    key: tuple
    requests: tuple[RequestEvent, ...]

    @property
    def deadline(self) -> float:
        return min(r.deadline for r in self.requests)

    @property
    def priority(self):
        return (-len(self.requests), self.deadline, self.key)


@dataclass(frozen=True)
class SarenaDecision:
    request: RequestEvent
    action: Optional[Action]
    latency: float = 0.0
    held: bool = False
    missed: bool = False


def make_queues(requests: Sequence[RequestEvent], ctx: DecisionContext) -> list[SarenaQueue]:
    """Group by (service class, edge, content, requested bitrate)."""
    groups: dict[tuple, list[RequestEvent]] = {}
    for r in requests:
        key = (r.service_class.value, r.edge_id, r.segment.content_id, r.requested_rep)
        groups.setdefault(key, []).append(r)
    return [SarenaQueue(k, tuple(v)) for k, v in groups.items()]


def sarena_schedule(queues: Sequence[SarenaQueue], ctx: DecisionContext, on_the_fly: Optional[set] = None,
                    variants=None) -> list[SarenaDecision]:
    """Serve queues by priority; each request takes the fastest chain that meets its deadline."""
    on_the_fly = set() if on_the_fly is None else on_the_fly
    work = ctx
    out = []
    for q in sorted(queues, key=lambda q: q.priority):
        for r in q.requests:
            key = (r.segment, r.requested_rep, r.edge_id)
            if key in on_the_fly:
                out.append(SarenaDecision(r, None, held=True))
                continue
            priced = price_actions(work, r, Tree.SARENA, variants)
            if not priced:
                out.append(SarenaDecision(r, None, missed=True))
                continue
            best = min(priced, key=lambda p: (p.latency, p.action.sort_key))
            on_the_fly.add(key)
            out.append(SarenaDecision(r, best.action, best.latency))
            work = reserve(work, r, best.action)
    return out


@dataclass(frozen=True)
class EdgeScale:
    cores: int = 4
    ram_gb: int = 6
    max_cores: int = 10
    max_ram_gb: int = 16
    base_cores: int = 4
    base_ram_gb: int = 6

    def __post_init__(self):
        if not (self.base_cores <= self.cores <= self.max_cores and self.base_ram_gb <= self.ram_gb <= self.max_ram_gb):
            raise ValueError("edge scale outside [base, max]")

    @property
    def cpu_factor(self) -> float:
        return self.cores / self.base_cores


def sarena_autoscale(scale: EdgeScale, measured_qoe: float, threshold: float, step_cores: int = 2,
                     step_ram_gb: int = 2) -> EdgeScale:
    if measured_qoe >= threshold or (scale.cores >= scale.max_cores and scale.ram_gb >= scale.max_ram_gb):
        return scale
    return replace(scale, cores=min(scale.cores + step_cores, scale.max_cores),
                   ram_gb=min(scale.ram_gb + step_ram_gb, scale.max_ram_gb))


SARENA_QOE_THRESHOLD = {ServiceClass.LIVE: 4.0, ServiceClass.VOD: 3.5}
