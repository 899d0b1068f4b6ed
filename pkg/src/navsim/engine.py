"""Time-slotted simulation loop.

Each slot collects the requests issued during it, then decides them at the slot boundary with
the configured policy, leases link bandwidth until the upstream transfer finishes, spends edge
cpu from the slot budget and peer battery from the running balance, and schedules the final
delivery to the player. Players drain their buffers in real time; ABR picks each request's rung
from the buffer level and the last measured throughput.
"""

from __future__ import annotations

import heapq
import json
import logging
import math
import time
from collections import defaultdict
from dataclasses import dataclass, field, replace
from typing import Optional, Sequence

from . import seeding
from .catalog import CacheState, ContentKind, SegmentId, cache_insert, cache_lookup
from .costs import CostModel, monetary_cost
from .heuristics import (EdgeScale, FlowDemand, MissCounters, SARENA_QOE_THRESHOLD, efg1, efg2_tick, gba,
                         leader_allocate, make_queues, sarena_autoscale, sarena_schedule, sfg_allocate)
from .learning import SomAgent, SomConfig, som_decide
from .policy import (Action, DecisionContext, InfeasibleInstance, NoFeasibleAction, Preset, Priced,
                     SearchSpaceTooLarge, Transform, Tree, _ensure_normalizers, check_invariants,
                     oracle_joint, preset, price_actions, priced_objective, ranked)
from .topology import NodeKind, Path, ReservationLedger, select_path
from .workload import RequestEvent, ServiceClass, cyclic_bandwidth, generate_requests, client_trace_offsets

log = logging.getLogger(__name__)


class EngineError(RuntimeError):
    pass


# --- players ----------------------------------------------------------------------------------

@dataclass
class ClientState:
    client_id: str
    segment_duration: float
    abr_thresholds: tuple[float, ...]
    trace_offset: float = 0.0
    buffer: float = 0.0
    last_rep: Optional[int] = None
    clock: float = 0.0
    playing: bool = False
    stalled_since: Optional[float] = None
    stall_count: int = 0
    stall_time: float = 0.0
    throughput: Optional[float] = None
    delivered: list = field(default_factory=list)   # (segment index, rep, bitrate, arrival)

    def __post_init__(self):
        if any(b <= a for a, b in zip(self.abr_thresholds, self.abr_thresholds[1:])):
            raise ValueError("ABR thresholds must strictly increase")

    def advance(self, t: float) -> None:
        """Play out content up to wall time t."""
        if t <= self.clock:
            return
        if self.playing and self.stalled_since is None:
            if self.buffer >= t - self.clock:
                self.buffer -= t - self.clock
            else:
                # buffer ran dry inside the interval
                self.stalled_since = self.clock + self.buffer
                self.stall_count += 1
                self.buffer = 0.0
        self.clock = t

    def deliver(self, t: float, seconds: float) -> None:
        self.advance(t)
        if self.stalled_since is not None:
            self.stall_time += t - self.stalled_since
            self.stalled_since = None
        self.buffer += seconds
        self.playing = True


def default_thresholds(n_reps: int, segment_duration: float) -> tuple[float, ...]:
    return tuple(2.0 * k * segment_duration for k in range(1, n_reps))


def abr_select(client: ClientState, measured_throughput: Optional[float], bitrates: Sequence[int]) -> int:
    """Buffer-threshold rung choice, capped by the last measured throughput."""
    if client.buffer <= 0 and client.last_rep is None:
        return 0
    index = sum(1 for th in client.abr_thresholds if th < client.buffer)
    if measured_throughput is not None:
        cap = 0
        for i, b in enumerate(bitrates):
            if b <= measured_throughput:
                cap = i
        index = min(index, cap)
    return index


def settle_delivery(client: ClientState, segment: SegmentId, arrival_time: float, rep: int = 0, bitrate: float = 0.0) -> ClientState:
    client.deliver(arrival_time, client.segment_duration)
    client.delivered.append((segment.segment_index, rep, bitrate, arrival_time))
    client.last_rep = rep
    return client


# --- metrics ----------------------------------------------------------------------------------

QOE_SWITCH_COEF = 0.1
QOE_STALL_COEF = 1.0


@dataclass(frozen=True)
class QoeSlice:
    asb: float           # mean delivered bitrate, bps
    max_bitrate: float
    minutes: float       # played content, minutes
    switches: int
    stalls: int
    stall_seconds: float


def proxy_qoe(s: QoeSlice) -> float:
    """5*ASB/max - 0.1*switches/min - (stalls/min + 5*stall fraction), clamped to [0, 5]."""
    if s.minutes <= 0:
        return 0.0
    stall_fraction = s.stall_seconds / (s.minutes * 60.0 + s.stall_seconds)
    score = (5.0 * s.asb / s.max_bitrate - QOE_SWITCH_COEF * s.switches / s.minutes
             - QOE_STALL_COEF * (s.stalls / s.minutes + 5.0 * stall_fraction))
    return min(5.0, max(0.0, score))


def count_switches(reps: Sequence[int]) -> int:
    return sum(1 for a, b in zip(reps, reps[1:]) if a != b)


@dataclass
class MetricsAccumulator:
    deliveries: int = 0
    origin_served: int = 0
    edge_tr: int = 0
    peer_tr: int = 0
    peer_sr: int = 0
    direct: int = 0
    origin_bits: float = 0.0
    priced_bits: float = 0.0
    edge_cpu: float = 0.0
    latency_sum: float = 0.0
    objective_sum: float = 0.0
    decisions: int = 0
    held: int = 0
    deferred: int = 0
    deadline_misses: int = 0
    joint_fallbacks: int = 0
    reallocations: int = 0
    decision_seconds: float = 0.0
    per_slot: list = field(default_factory=list)


@dataclass
class MetricsReport:
    policy: str
    seed: int
    slots: int
    requests: int
    asb_mbps: float
    aqs: float
    ans: float
    asd_s: float
    asl_s: float
    chr: float
    origin_ratio: float
    etr: float
    ptsr: float
    direct_ratio: float
    btl_bits: float
    ncv_usd: float
    ncv_bandwidth_usd: float
    ncv_compute_usd: float
    eec_joules: float
    edge_cpu_s: float
    proxy_qoe: float
    objective_sum: float
    decisions: int
    held: int
    deferred: int
    deadline_misses: int
    sr_count: int
    edge_tr_count: int
    peer_tr_count: int
    nov: Optional[float] = None
    per_client: list = field(default_factory=list, repr=False)

    def summary(self) -> dict:
        out = {k: v for k, v in self.__dict__.items() if k != "per_client"}
        return out

    def to_json(self) -> str:
        return json.dumps(self.summary(), indent=2, sort_keys=True)


def finalize_metrics(acc: MetricsAccumulator, clients: dict[str, ClientState], pricebook, max_bitrate: float,
                     policy: str = "", seed: int = 0, slots: int = 0, requests: int = 0,
                     watts_per_core: float = 10.0) -> MetricsReport:
    n = acc.deliveries
    per_client = []
    all_bitrates = []
    for cid in sorted(clients):
        c = clients[cid]
        rows = sorted(c.delivered)
        reps = [r[1] for r in rows]
        rates = [r[2] for r in rows]
        all_bitrates += rates
        asb = sum(rates) / len(rates) if rates else 0.0
        switches = count_switches(reps)
        minutes = len(rows) * c.segment_duration / 60.0
        q = proxy_qoe(QoeSlice(asb, max_bitrate, minutes, switches, c.stall_count, c.stall_time))
        per_client.append({"client_id": cid, "asb_mbps": asb / 1e6, "aqs": switches, "ans": c.stall_count,
                           "asd_s": c.stall_time, "proxy_qoe": q})
    bw_usd, cpu_usd, total_usd = monetary_cost(acc.priced_bits, acc.edge_cpu, pricebook)
    k = max(len(per_client), 1)
    return MetricsReport(
        policy=policy, seed=seed, slots=slots, requests=requests,
        asb_mbps=(sum(all_bitrates) / len(all_bitrates) / 1e6) if all_bitrates else 0.0,
        aqs=sum(p["aqs"] for p in per_client) / k,
        ans=sum(p["ans"] for p in per_client) / k,
        asd_s=sum(p["asd_s"] for p in per_client) / k,
        asl_s=acc.latency_sum / acc.decisions if acc.decisions else 0.0,
        chr=(n - acc.origin_served) / n if n else 0.0,
        origin_ratio=acc.origin_served / n if n else 0.0,
        etr=acc.edge_tr / n if n else 0.0,
        ptsr=(acc.peer_tr + acc.peer_sr) / n if n else 0.0,
        direct_ratio=acc.direct / n if n else 0.0,
        btl_bits=acc.origin_bits,
        ncv_usd=total_usd, ncv_bandwidth_usd=bw_usd, ncv_compute_usd=cpu_usd,
        eec_joules=acc.edge_cpu * watts_per_core,
        edge_cpu_s=acc.edge_cpu,
        proxy_qoe=sum(p["proxy_qoe"] for p in per_client) / k,
        objective_sum=acc.objective_sum,
        decisions=acc.decisions, held=acc.held, deferred=acc.deferred, deadline_misses=acc.deadline_misses,
        sr_count=acc.peer_sr, edge_tr_count=acc.edge_tr, peer_tr_count=acc.peer_tr,
        per_client=per_client,
    )


def _relaxed(request: RequestEvent) -> RequestEvent:
    return replace(request, deadline=math.inf)


# --- the world --------------------------------------------------------------------------------

@dataclass(frozen=True)
class Fetch:
    """What a delivery inherits from the upstream action that produced it."""
    ready: float
    origin: bool
    category: str        # edge_tr | peer_tr | peer_sr | direct
    latency: float


class Engine:
    def __init__(self, scenario, policy: Optional[str] = None, seed: Optional[int] = None,
                 slots: Optional[int] = None):
        self.sc = scenario
        self.preset: Preset = preset(policy or scenario.policy)
        self.seed = scenario.seed if seed is None else int(seed)
        self.theta = scenario.slot_duration
        self.slots = scenario.horizon_slots if slots is None else int(slots)
        self.topo = scenario.topology
        self.ladder = scenario.ladder
        self.costs: CostModel = scenario.cost_model()
        self.params = scenario.params
        self.slot = 0

        wl = replace(scenario.workload, horizon_slots=self.slots)
        self.requests = generate_requests(wl, self.seed)
        self.by_slot: dict[int, list[RequestEvent]] = defaultdict(list)
        for r in self.requests:
            self.by_slot[r.arrival_slot].append(r)
        offsets = client_trace_offsets(wl.clients, scenario.trace, self.seed)
        thresholds = default_thresholds(len(self.ladder), self.ladder.segment_duration)
        self.clients = {c.client_id: ClientState(c.client_id, self.ladder.segment_duration, thresholds, offsets[c.client_id])
                        for c in wl.clients}
        self.client_edge = {c.client_id: c.edge_id for c in wl.clients}

        self.ledger = ReservationLedger(self.topo)
        self.leases: dict[int, list] = defaultdict(list)
        self.pair_used: dict[tuple[str, str], float] = defaultdict(float)
        self.pair_cap: dict[tuple[str, str], float] = {}
        self._paths: dict[tuple[str, str], Path] = {}
        self._owner = 0

        self.edges = [n.id for n in self.topo.of_kind(NodeKind.EDGE)]
        self.cdns = [n.id for n in self.topo.of_kind(NodeKind.CDN)]
        self.origin = self.topo.origin.id
        self.peers_by_region: dict[str, list[str]] = defaultdict(list)
        for n in self.topo.of_kind(NodeKind.SEEDER, NodeKind.LEECHER):
            self.peers_by_region[n.region].append(n.id)
        self.scale = {e: EdgeScale() for e in self.edges}
        self.cpu_spent = defaultdict(float)
        self.neighbor_spent = defaultdict(float)
        self.power = {n.id: n.power_capacity for n in self.topo.of_kind(NodeKind.SEEDER, NodeKind.LEECHER)}

        self.caches: dict[str, CacheState] = {}
        for n in self.topo.nodes.values():
            if n.kind in (NodeKind.EDGE, NodeKind.SEEDER, NodeKind.LEECHER) and n.cache_capacity > 0:
                self.caches[n.id] = CacheState(n.id, n.cache_capacity)
        self._warm_caches(scenario)

        self.on_the_fly: dict[tuple, Fetch] = {}
        self.events: list = []
        self._seq = 0
        self.deferred: list[RequestEvent] = []
        self.acc = MetricsAccumulator()
        self.audit_log: list[dict] = []
        self.counters = MissCounters(thr_miss=int(self.params.get("thr_miss", 100)))
        self.agents: dict[tuple, SomAgent] = {}
        self.som_config = SomConfig(**scenario.som)
        self._pending_caps: Optional[dict] = None
        self._qoe_window: dict[str, list] = defaultdict(list)
        if self.preset.allocation == "leader":
            self._leader_caps()

    # -- setup --------------------------------------------------------------------------------

    def _warm_caches(self, scenario) -> None:
        fill = float(self.params.get("cdn_fill", 0.4))
        for cdn in self.cdns:
            entries = []
            rng = seeding.stream(self.seed, seeding.CACHE_WARM, cdn)
            for content in scenario.workload.contents:
                draws = rng.random((content.n_segments, len(self.ladder)))
                for k in range(content.n_segments):
                    for rep in range(len(self.ladder)):
                        if draws[k, rep] < fill:
                            entries.append((SegmentId(content.content_id, k), rep))
            cache = CacheState(cdn, max(len(entries), 1))
            for seg, rep in entries:
                cache_insert(cache, seg, rep)
            self.caches[cdn] = cache
        prewarm = int(self.params.get("prewarm_segments", 0))
        if prewarm:
            vods = [c for c in scenario.workload.contents if c.kind == ContentKind.VOD][:1]
            for e in self.edges:
                if e not in self.caches:
                    continue
                for c in vods:
                    for k in range(min(prewarm, c.n_segments)):
                        for rep in range(len(self.ladder)):
                            cache_insert(self.caches[e], SegmentId(c.content_id, k), rep)

    def path(self, src: str, dst: str) -> Path:
        key = (src, dst)
        p = self._paths.get(key)
        if p is None:
            p = self._paths[key] = select_path(self.topo, src, dst)
        return p

    def _pair_key(self, src: str, dst: str):
        return tuple(sorted((src, dst)))

    def _leader_caps(self) -> None:
        users_on: dict[str, list] = defaultdict(list)
        for e in self.edges:
            for s in [self.origin] + self.cdns + [x for x in self.edges if x > e]:
                p = self.path(s, e)
                for lid in p.links:
                    users_on[lid].append((e, s, p.hop_count))
        caps: dict = {}
        for lid in sorted(users_on):
            users = users_on[lid]
            shares = leader_allocate(self.topo.links[lid].capacity, users)
            for (e, s, _), b in zip(users, shares):
                key = self._pair_key(s, e)
                caps[key] = min(caps.get(key, math.inf), b)
        self.pair_cap = caps

    # -- context ------------------------------------------------------------------------------

    def _omega(self, edge: str) -> float:
        return self.topo.nodes[edge].cpu_capacity * self.scale[edge].cpu_factor

    def _pair_bw(self, src: str, dst: str) -> float:
        bw = self.ledger.residual(self.path(src, dst))
        cap = self.pair_cap.get(self._pair_key(src, dst))
        if cap is not None:
            bw = min(bw, cap - self.pair_used[self._pair_key(src, dst)])
        return max(bw, 0.0)

    def _active(self, node_id: str, t: float) -> bool:
        return self.topo.nodes[node_id].active_at(t)

    def _alive(self, request: RequestEvent, t: float) -> bool:
        return request.client_id not in self.topo.nodes or self._active(request.client_id, t)

    def context(self, requests: Sequence[RequestEvent], t: float) -> DecisionContext:
        edge = requests[0].edge_id
        segments = sorted({r.segment for r in requests})
        nodes = {self.origin: self.topo.nodes[self.origin]}
        for n in self.cdns + self.edges:
            nodes[n] = self.topo.nodes[n]
        requesters = [r.client_id for r in requests if r.client_id in self.topo.nodes]
        peers = []
        if requesters:
            for p in self.peers_by_region.get(edge, ()):
                if not self._active(p, t) or p not in self.caches:
                    continue
                if p in requesters or any(self.caches[p].reps_of(s) for s in segments):
                    peers.append(p)
        for p in peers:
            nodes[p] = self.topo.nodes[p]
        availability = {}
        for n in nodes:
            cache = self.caches.get(n)
            if cache is not None:
                availability[n] = {s: cache.reps_of(s) for s in segments}
        bandwidth = {}
        for s in [self.origin] + self.cdns + self.edges:
            if s != edge:
                bandwidth[(s, edge)] = self._pair_bw(s, edge)
                if s in self.edges:
                    bandwidth[(edge, s)] = self._pair_bw(edge, s)
        for req in requesters:
            for p in peers:
                if p != req:
                    bandwidth[(p, req)] = self._pair_bw(p, req)
        thr = float(self.params.get("thr_comp", 0.5))
        cpu = {e: max(self._omega(e) - self.cpu_spent[e], 0.0) for e in self.edges}
        ncpu = {e: max(thr * self._omega(e) - self.neighbor_spent[e], 0.0) for e in self.edges}
        power = {p: self.power[p] for p in peers}
        m = self.preset.m if self.preset.m is not None else int(self.params.get("m", 0))
        return DecisionContext(
            ladder=self.ladder, nodes=nodes, availability=availability, bandwidth=bandwidth, cpu=cpu,
            power=power, costs=self.costs, weights=self.sc.weights, thr_comp=thr, neighbor_cpu=ncpu,
            m=m, sr_window=int(self.params.get("sr_window", 1)))

    # -- commit -------------------------------------------------------------------------------

    def _new_owner(self):
        self._owner += 1
        return self._owner

    def commit(self, ctx: DecisionContext, request: RequestEvent, action: Action, t: float, relax: bool = False) -> bool:
        """Lease resources for a decided action; False if the live ledger cannot hold it.

        relax prices the action without the deadline filter (late service of a missed request).
        """
        check_invariants(ctx, action, request)
        priced_as = _relaxed(request) if relax else request
        p = next((q for q in price_actions(ctx, priced_as, action.tree, cache_first=False) if q.action == action), None)
        if p is None:
            raise EngineError(f"committing an infeasible action {action}")
        for src, dst, rep in p.legs:
            if self._pair_bw(src, dst) < self.ladder[rep].bitrate * (1 - 1e-12):
                return False
        tc = p.transform
        ex = action.exec_node
        if tc is not None:
            if self.topo.nodes[ex].kind == NodeKind.EDGE:
                if self.cpu_spent[ex] + tc.cpu > self._omega(ex) * (1 + 1e-12):
                    return False
            elif self.power.get(ex, math.inf) < tc.power:
                return False
        owner = self._new_owner()
        hold = max(1, math.ceil(p.latency / self.theta - 1e-9))
        for src, dst, rep in p.legs:
            bps = float(self.ladder[rep].bitrate)
            self.ledger.reserve(owner, self.path(src, dst), bps)
            self.pair_used[self._pair_key(src, dst)] += bps
            self.leases[self.slot + hold].append((owner, self._pair_key(src, dst), bps))
        if not p.legs:
            self.leases[self.slot + hold].append((owner, None, 0.0))
        if tc is not None:
            if self.topo.nodes[ex].kind == NodeKind.EDGE:
                self.cpu_spent[ex] += tc.cpu
                self.acc.edge_cpu += tc.cpu
                if ex != request.edge_id:
                    self.neighbor_spent[ex] += tc.cpu
            else:
                self.power[ex] -= tc.power
        self._record(ctx, request, p, t, priced_as)
        return True

    def _category(self, action: Action) -> str:
        if action.transform == Transform.TR_EDGE:
            return "edge_tr"
        if action.transform in (Transform.TR_LOCAL_PEER, Transform.TR_REMOTE_PEER):
            return "peer_tr"
        if action.transform == Transform.SR_LOCAL_PEER:
            return "peer_sr"
        return "direct"

    def _record(self, ctx: DecisionContext, request: RequestEvent, p: Priced, t: float,
                priced_as: RequestEvent) -> None:
        a = p.action
        src_kind = self.topo.nodes[a.source_node].kind
        for src, dst, rep in p.legs:
            if not self.topo.nodes[src].kind.is_peer:
                self.acc.priced_bits += self.ladder[rep].segment_size
            if src == self.origin:
                self.acc.origin_bits += self.ladder[rep].segment_size
        self.acc.decisions += 1
        self.acc.latency_sum += p.latency
        try:
            ctx_n = _ensure_normalizers(ctx, [priced_as], a.tree, self.preset.variants)
            self.acc.objective_sum += priced_objective(ctx_n, p, priced_as)
        except InfeasibleInstance:
            # the chosen action lies outside the preset's variants (held or late service)
            pass
        if a.source_node in self.caches and src_kind != NodeKind.ORIGIN:
            cache_lookup(self.caches[a.source_node], request.segment, a.source_rep)
        ready = t + p.latency
        fetch = Fetch(ready, src_kind == NodeKind.ORIGIN, self._category(a), p.latency)
        delivered = a.delivered_rep(request)
        to_peer = any(dst == request.client_id for _, dst, _ in p.legs) or a.exec_node == request.client_id
        if to_peer:
            self._deliver_at(request, delivered, fetch, ready)
        else:
            key = (request.segment, delivered, request.edge_id)
            self.on_the_fly[key] = fetch
            inserts = [delivered]
            if any(dst == request.edge_id and rep != delivered for _, dst, rep in p.legs):
                inserts.append(a.source_rep)
            self._push(ready, "complete", (key, tuple(inserts)))
            self._deliver_from_edge(request, delivered, fetch)
        if self.preset.mode == "efg2" and a.source_node != request.edge_id:
            self.counters.record(request.edge_id, a.source_node, float(self.ladder[delivered].bitrate),
                                 hit=a.transform == Transform.NONE)

    def _push(self, t: float, kind: str, payload) -> None:
        self._seq += 1
        heapq.heappush(self.events, (t, self._seq, kind, payload))

    def _deliver_from_edge(self, request: RequestEvent, rep: int, fetch: Fetch) -> None:
        client = self.clients[request.client_id]
        bw = cyclic_bandwidth(self.sc.trace, fetch.ready, client.trace_offset)
        bw = max(bw, float(self.params.get("min_last_mile_bps", 50_000)))
        arrival = fetch.ready + self.ladder[rep].segment_size / bw
        self._deliver_at(request, rep, fetch, arrival)

    def _deliver_at(self, request: RequestEvent, rep: int, fetch: Fetch, arrival: float) -> None:
        acc = self.acc
        acc.deliveries += 1
        acc.origin_served += fetch.origin
        if fetch.category == "edge_tr":
            acc.edge_tr += 1
        elif fetch.category == "peer_tr":
            acc.peer_tr += 1
        elif fetch.category == "peer_sr":
            acc.peer_sr += 1
        else:
            acc.direct += 1
        issued = request.arrival_slot * self.theta
        self._push(arrival, "deliver", (request.client_id, request.segment, rep, issued))

    def _process_events(self, until: float) -> None:
        while self.events and self.events[0][0] <= until:
            t, _, kind, payload = heapq.heappop(self.events)
            if kind == "complete":
                key, inserts = payload
                self.on_the_fly.pop(key, None)
                seg, _, edge = key
                if edge in self.caches and self.params.get("edge_caching", True):
                    for rep in inserts:
                        cache_insert(self.caches[edge], seg, rep)
            else:
                cid, seg, rep, issued = payload
                client = self.clients[cid]
                bitrate = self.ladder[rep].bitrate
                settle_delivery(client, seg, t, rep, bitrate)
                if t > issued:
                    client.throughput = self.ladder[rep].segment_size / (t - issued)
                if cid in self.caches:
                    cache_insert(self.caches[cid], seg, rep)
                self._qoe_window[self.client_edge[cid]].append((cid, rep, bitrate))

    # -- decisions ----------------------------------------------------------------------------

    def _decide_one(self, request: RequestEvent, t: float, choose=None, relax: bool = False) -> bool:
        """Decide and commit a single request, retrying on fresh snapshots if the ledger refuses."""
        pre = self.preset
        for _ in range(4):
            ctx = self.context([request], t)
            try:
                if choose is not None:
                    action = choose(ctx, request)
                elif pre.mode == "gba":
                    action = gba(ctx, request, pre.tree, pre.variants)[1]
                elif pre.mode in ("efg1", "efg2"):
                    action = efg1(ctx, request, tree=pre.tree, variants=pre.variants)
                else:
                    action = ranked(_ensure_normalizers(ctx, [request], pre.tree, pre.variants), request,
                                    pre.tree, pre.variants)[0][1].action
            except (NoFeasibleAction, InfeasibleInstance):
                return False
            if self.commit(ctx, request, action, t, relax):
                return True
        return False

    def _hold_or_key(self, request: RequestEvent) -> bool:
        key = (request.segment, request.requested_rep, request.edge_id)
        fetch = self.on_the_fly.get(key)
        if fetch is None:
            return False
        self.acc.held += 1
        self._deliver_from_edge(request, request.requested_rep, fetch)
        return True

    def _decide_joint(self, batch: list[RequestEvent], t: float) -> list[RequestEvent]:
        pre = self.preset
        limit = int(self.params.get("joint_limit", 5000))
        left = []
        chunk: list[RequestEvent] = []
        chunks = []
        size = 1
        ctx0 = self.context(batch, t)
        for r in batch:
            n = max(len(price_actions(ctx0, r, pre.tree, pre.variants)), 1)
            if chunk and size * n > limit:
                chunks.append(chunk)
                chunk, size = [], 1
            chunk.append(r)
            size *= n
        if chunk:
            chunks.append(chunk)
        for chunk in chunks:
            chunk = [r for r in chunk if not self._hold_or_key(r)]
            if not chunk:
                continue
            ctx = self.context(chunk, t)
            try:
                plan = oracle_joint(ctx, chunk, pre.tree, limit=max(limit, 1), variants=pre.variants).pairs
            except (SearchSpaceTooLarge, InfeasibleInstance):
                self.acc.joint_fallbacks += 1
                plan = [(r, None) for r in chunk]
            for r, action in plan:
                if self._hold_or_key(r):
                    continue
                if action is not None and self.commit(self.context([r], t), r, action, t):
                    continue
                if not self._decide_one(r, t):
                    left.append(r)
        return left

    def _decide_sarena(self, batch: list[RequestEvent], t: float) -> list[RequestEvent]:
        ctx = self.context(batch, t)
        flying = set(self.on_the_fly)
        left = []
        for d in sarena_schedule(make_queues(batch, ctx), ctx, flying, self.preset.variants):
            r = d.request
            if self._hold_or_key(r):
                continue
            if d.action is not None and self.commit(self.context([r], t), r, d.action, t):
                continue
            if d.missed:
                self.acc.deadline_misses += 1
            # no deadline-feasible chain now: serve with the fastest chain regardless of deadline
            if not self._decide_one(r, t, choose=self._fastest_any, relax=True):
                left.append(r)
        return left

    def _fastest_any(self, ctx: DecisionContext, request: RequestEvent) -> Action:
        priced = price_actions(ctx, _relaxed(request), Tree.SARENA, self.preset.variants)
        if not priced:
            raise NoFeasibleAction(str(request))
        return min(priced, key=lambda p: (p.latency, p.action.sort_key)).action

    def _decide_som(self, batch: list[RequestEvent], t: float) -> list[RequestEvent]:
        pre = self.preset
        left = []
        queues: dict[tuple, list[RequestEvent]] = defaultdict(list)
        for r in batch:
            queues[(r.edge_id, r.segment.content_id, r.requested_rep)].append(r)
        for qkey in sorted(queues):
            agent = self.agents.setdefault(qkey, SomAgent(self.som_config))
            penalized = set()
            queue = queues[qkey]
            for i, r in enumerate(queue):
                if self._hold_or_key(r):
                    continue
                ctx = self.context([r], t)
                priced = price_actions(ctx, r, pre.tree, pre.variants)
                if not priced:
                    left.append(r)
                    continue
                lat: dict[tuple, float] = {}
                for p in priced:
                    k = (p.action.source_node, p.action.variant)
                    lat[k] = min(lat.get(k, math.inf), p.latency)
                top = max(lat.values()) or 1.0
                agent.sync({k: v / top for k, v in lat.items()})
                neurons = [agent.neurons[k] for k in sorted(lat)]
                tuples = som_decide(queue[i:], neurons, ctx, pre.tree)
                usable = {(s.node, s.action_variant): s for s in tuples if s.violates == 0}
                for s in tuples:
                    key = (s.node, s.action_variant)
                    if s.violates and key not in penalized:
                        agent.penalize(key)
                        penalized.add(key)
                done = False
                while usable and not done:
                    key = agent.best(set(usable))
                    action = usable.pop(key).action
                    if self.commit(ctx, r, action, t):
                        p = next(q for q in priced if q.action == action)
                        agent.learn(key, (min(p.latency / top, 1.0), agent.neurons[key].features[1]))
                        done = True
                if not done:
                    left.append(r)
        return left

    # -- allocation ---------------------------------------------------------------------------

    def _sfg_reallocate(self, triggers) -> None:
        demands = []
        for e in self.edges:
            for s in [self.origin] + self.cdns + self.edges:
                if s == e:
                    continue
                d = self.counters.demand(e, s)
                if d > 0:
                    demands.append(FlowDemand(e, s, d, self.path(s, e)))
        if not demands:
            return
        caps = {lid: l.capacity for lid, l in self.topo.links.items()}
        F, x = sfg_allocate(caps, demands)
        new = dict(self.pair_cap)
        for d, alloc in zip(demands, x):
            new[self._pair_key(d.server_id, d.edge_id)] = alloc
        self._pending_caps = new
        self.counters.hit_bitrates.clear()
        self.counters.miss_bitrates.clear()
        self.acc.reallocations += 1

    def _autoscale(self, t: float) -> None:
        max_bitrate = self.ladder[self.ladder.max_index].bitrate
        for e in self.edges:
            window = self._qoe_window.pop(e, [])
            if not window:
                continue
            rates = [w[2] for w in window]
            reps_by_client = defaultdict(list)
            for cid, rep, _ in window:
                reps_by_client[cid].append(rep)
            switches = sum(count_switches(v) for v in reps_by_client.values())
            minutes = len(window) * self.ladder.segment_duration / 60.0
            q = proxy_qoe(QoeSlice(sum(rates) / len(rates), max_bitrate, minutes, switches, 0, 0.0))
            live = any(r.service_class == ServiceClass.LIVE for r in self.requests if r.edge_id == e)
            threshold = SARENA_QOE_THRESHOLD[ServiceClass.LIVE if live else ServiceClass.VOD]
            self.scale[e] = sarena_autoscale(self.scale[e], q, threshold)

    # -- the loop -----------------------------------------------------------------------------

    def audit(self) -> dict:
        self.ledger.check()
        worst_cpu = 0.0
        for e in self.edges:
            omega = self._omega(e)
            if self.cpu_spent[e] > omega * (1 + 1e-9) + 1e-12:
                raise EngineError(f"edge {e} spent {self.cpu_spent[e]:.4f} cpu-s of {omega:.4f}")
            if omega > 0:
                worst_cpu = max(worst_cpu, self.cpu_spent[e] / omega)
        low = min(self.power.values(), default=math.inf)
        if low < -1e-9:
            raise EngineError("peer battery went negative")
        util = max(self.ledger.utilisation().values(), default=0.0)
        return {"slot": self.slot, "link": util, "cpu": worst_cpu, "power_min": low}

    def run_slot(self) -> None:
        k = self.slot
        start, end = k * self.theta, (k + 1) * self.theta
        self._process_events(start)
        for owner, pair, bps in self.leases.pop(k, ()):
            self.ledger.release(owner)
            if pair is not None:
                self.pair_used[pair] -= bps
                if abs(self.pair_used[pair]) < 1e-6:
                    self.pair_used[pair] = 0.0
        if self._pending_caps is not None:
            self.pair_cap, self._pending_caps = self._pending_caps, None
        self.cpu_spent.clear()
        self.neighbor_spent.clear()

        # deferred requests keep the rung ABR already picked; new ones are decided now
        batch = [r for r in self.deferred if self._alive(r, start)]
        for r in self.by_slot.pop(k, []):
            if not self._alive(r, start):
                continue
            client = self.clients[r.client_id]
            client.advance(start)
            rep = abr_select(client, client.throughput, self.ladder.bitrates)
            batch.append(replace(r, requested_rep=rep))
        self.deferred = []

        tick = time.perf_counter()
        left = []
        by_edge: dict[str, list[RequestEvent]] = defaultdict(list)
        for r in batch:
            by_edge[r.edge_id].append(r)
        mode = self.preset.mode
        held_before = self.acc.held
        origin_before = self.acc.origin_bits
        dec_before = self.acc.decisions
        for edge in sorted(by_edge):
            reqs = by_edge[edge]
            if mode == "joint":
                left += self._decide_joint(reqs, end)
            elif mode == "sarena":
                left += self._decide_sarena(reqs, end)
            elif mode == "som":
                left += self._decide_som(reqs, end)
            else:
                for r in reqs:
                    if self._hold_or_key(r):
                        continue
                    if not self._decide_one(r, end):
                        left.append(r)
        self.acc.decision_seconds += time.perf_counter() - tick
        self.acc.deferred += len(left)
        self.deferred = left

        if mode == "efg2":
            triggers = []
            for e in self.edges:
                triggers += efg2_tick(self.counters, e)
            if triggers:
                self._sfg_reallocate(triggers)
        interval = float(self.params.get("autoscale_interval_s", 10.0))
        if mode == "sarena" and interval > 0 and int(end / interval) != int(start / interval):
            self._autoscale(end)

        self.audit_log.append(self.audit())
        self.acc.per_slot.append({"slot": k, "served": self.acc.decisions - dec_before + self.acc.held - held_before,
                                  "held": self.acc.held - held_before,
                                  "origin_bits": self.acc.origin_bits - origin_before})
        self.slot += 1

    def run(self) -> MetricsReport:
        while self.slot < self.slots:
            self.run_slot()
        # let everything in flight land; requests still deferred are dropped
        self._process_events(math.inf)
        return self.report()

    def report(self) -> MetricsReport:
        return finalize_metrics(self.acc, self.clients, self.costs.pricebook, self.ladder[self.ladder.max_index].bitrate,
                                policy=self.preset.name, seed=self.seed, slots=self.slots, requests=len(self.requests),
                                watts_per_core=float(self.params.get("eec_watts_per_core", 10.0)))

    def timings(self) -> dict:
        return {"etv_s": self.acc.decision_seconds, "decisions": self.acc.decisions,
                "etv_per_decision_ms": 1e3 * self.acc.decision_seconds / max(self.acc.decisions, 1)}


def run_scenario(scenario, policy: Optional[str] = None, seed: Optional[int] = None,
                 slots: Optional[int] = None) -> tuple[MetricsReport, Engine]:
    engine = Engine(scenario, policy, seed, slots)
    return engine.run(), engine
