"""Unified action model over every action tree, feasibility, latency/cost pricing and exact oracles.

An action names where a segment comes from, which rung is moved, and where (if anywhere) it is
transformed. Data moves in at most two legs: source -> executing node carrying the source rung,
then executing node -> delivery point carrying the requested rung. The delivery point is the
requesting peer for peer-produced segments and the serving edge otherwise; the last mile from
the edge to the player is simulated by the engine, not priced here.
"""

from __future__ import annotations

import enum
import math
from dataclasses import dataclass, field, replace
from typing import Iterable, Mapping, Optional, Sequence

from .catalog import Ladder, SegmentId, replacement_set
from .costs import CostModel, MissingProfile, NodeClass, TransformCost
from .topology import NodeKind, NodeSpec
from .workload import RequestEvent


class PolicyError(Exception):
    pass


class NoFeasibleAction(PolicyError):
    pass


class InfeasibleInstance(PolicyError):
    pass


class SearchSpaceTooLarge(PolicyError):
    pass


class MissingNormalizer(PolicyError):
    pass


class PolicyViolation(AssertionError):
    pass


class Tree(str, enum.Enum):
    ESHAS = "EsHas"
    CSDN = "Csdn"
    SARENA = "Sarena"
    LEADER = "Leader"
    ARARAT = "Ararat"
    RICHTER = "Richter"
    ALIVE = "Alive"


class Transform(str, enum.Enum):
    NONE = "None"
    TR_EDGE = "TrAtEdge"
    TR_LOCAL_PEER = "TrAtLocalPeer"
    TR_REMOTE_PEER = "TrAtRemotePeer"
    SR_LOCAL_PEER = "SrAtLocalPeer"

    @property
    def is_tr(self):
        return self in (Transform.TR_EDGE, Transform.TR_LOCAL_PEER, Transform.TR_REMOTE_PEER)


_TRANSFORM_RANK = {t: i for i, t in enumerate(Transform)}


@dataclass(frozen=True)
class Action:
    tree: Tree
    variant: int
    source_node: str
    transform: Transform
    source_rep: int
    exec_node: Optional[str] = None
    relay_via: Optional[str] = None

    @property
    def sort_key(self):
        return (self.variant, self.source_node, self.source_rep, _TRANSFORM_RANK[self.transform],
                self.exec_node or "", self.relay_via or "")

    def delivered_rep(self, request: RequestEvent) -> int:
        return self.source_rep if self.transform == Transform.NONE else request.requested_rep


@dataclass(frozen=True)
class Weights:
    beta: float = 0.5                                   # latency weight, cost gets 1 - beta
    eshas: tuple[float, float, float] = (1.0, 0.0, 0.0)  # fetch time, deviation, quality
    csdn: tuple[float, float] = (0.5, 0.5)              # serving time, deviation

    def validate(self) -> list[str]:
        problems = []
        for name, vals in (("beta", (self.beta,)), ("eshas", self.eshas), ("csdn", self.csdn)):
            if any(not 0.0 <= v <= 1.0 for v in vals):
                problems.append(f"{name} weights must lie in [0, 1]")
        if abs(sum(self.csdn) - 1.0) > 1e-9:
            problems.append("csdn weights must sum to 1")
        if sum(self.eshas) > 1.0 + 1e-9:
            problems.append("eshas weights must not sum above 1")
        return problems


@dataclass
class DecisionContext:
    ladder: Ladder
    nodes: dict[str, NodeSpec]
    availability: dict[str, dict[SegmentId, frozenset[int]]]
    bandwidth: dict[tuple[str, str], float]
    cpu: dict[str, float]
    power: dict[str, float]
    costs: CostModel
    weights: Weights = field(default_factory=Weights)
    thr_comp: float = 0.5
    neighbor_cpu: Optional[dict[str, float]] = None   # cpu an edge may still spend for other edges
    normalizers: Optional[tuple[float, float]] = None  # (latency, cost)
    m: int = 0
    sr_window: int = 1
    _priced: dict = field(default_factory=dict, repr=False, compare=False)

    def __post_init__(self):
        problems = self.weights.validate()
        if not 0.0 <= self.thr_comp <= 1.0:
            problems.append("thr_comp must lie in [0, 1]")
        if problems:
            raise ValueError("; ".join(problems))
        if self.neighbor_cpu is None:
            self.neighbor_cpu = {n: self.thr_comp * c for n, c in self.cpu.items()}

    def kind(self, node_id: str) -> Optional[NodeKind]:
        node = self.nodes.get(node_id)
        return node.kind if node else None

    def holds(self, node_id: str, segment: SegmentId, rep: int) -> bool:
        if self.kind(node_id) == NodeKind.ORIGIN:
            return True
        return rep in self.availability.get(node_id, {}).get(segment, ())

    def ids_of(self, *kinds: NodeKind) -> list[str]:
        return sorted(n.id for n in self.nodes.values() if n.kind in kinds)

    def node_class(self, node_id: str) -> NodeClass:
        node = self.nodes[node_id]
        if node.kind == NodeKind.EDGE:
            return NodeClass.EDGE
        return NodeClass.PEER_MOBILE if node.device == "mobile" else NodeClass.PEER_PC

    def with_normalizers(self, normalizers) -> "DecisionContext":
        return replace(self, normalizers=normalizers, _priced={})


# --- action trees -----------------------------------------------------------------------------

class Src(enum.Enum):
    PEER = 1
    LOCAL_EDGE = 2
    NEIGHBOR = 3
    CDN = 4
    ORIGIN = 5


class Rung(enum.Enum):
    EXACT = 1
    HIGHER = 2
    LOWER = 3
    REPLACE = 4          # any rung in the replacement window, delivered as is
    REPLACE_HIGHER = 5   # a strictly higher rung in the replacement window, transcoded


class Exec(enum.Enum):
    NONE = 0
    LOCAL_EDGE = 1
    SOURCE = 2
    REQUESTER = 3
    RELAY = 4            # every neighbouring edge, data relayed out and back


@dataclass(frozen=True)
class Leaf:
    variant: int
    src: Src
    rung: Rung
    transform: Transform = Transform.NONE
    execute: Exec = Exec.NONE


T = Transform
TREES: dict[Tree, tuple[Leaf, ...]] = {
    Tree.ALIVE: (
        Leaf(1, Src.PEER, Rung.EXACT),
        Leaf(2, Src.PEER, Rung.HIGHER, T.TR_REMOTE_PEER, Exec.SOURCE),
        Leaf(2, Src.PEER, Rung.HIGHER, T.TR_LOCAL_PEER, Exec.REQUESTER),
        Leaf(3, Src.PEER, Rung.LOWER, T.SR_LOCAL_PEER, Exec.REQUESTER),
        Leaf(4, Src.LOCAL_EDGE, Rung.EXACT),
        Leaf(5, Src.LOCAL_EDGE, Rung.HIGHER, T.TR_EDGE, Exec.LOCAL_EDGE),
        Leaf(6, Src.CDN, Rung.HIGHER, T.TR_EDGE, Exec.LOCAL_EDGE),
        Leaf(7, Src.CDN, Rung.EXACT),
        Leaf(8, Src.ORIGIN, Rung.EXACT),
    ),
    Tree.ARARAT: (
        Leaf(1, Src.LOCAL_EDGE, Rung.EXACT),
        Leaf(2, Src.LOCAL_EDGE, Rung.HIGHER, T.TR_EDGE, Exec.LOCAL_EDGE),
        Leaf(3, Src.NEIGHBOR, Rung.HIGHER, T.TR_EDGE, Exec.LOCAL_EDGE),
        Leaf(4, Src.NEIGHBOR, Rung.EXACT),
        Leaf(5, Src.NEIGHBOR, Rung.HIGHER, T.TR_EDGE, Exec.SOURCE),
        Leaf(6, Src.LOCAL_EDGE, Rung.HIGHER, T.TR_EDGE, Exec.RELAY),
        Leaf(7, Src.CDN, Rung.EXACT),
        Leaf(8, Src.CDN, Rung.HIGHER, T.TR_EDGE, Exec.LOCAL_EDGE),
        Leaf(9, Src.ORIGIN, Rung.EXACT),
    ),
    Tree.LEADER: (
        Leaf(1, Src.LOCAL_EDGE, Rung.EXACT),
        Leaf(2, Src.LOCAL_EDGE, Rung.HIGHER, T.TR_EDGE, Exec.LOCAL_EDGE),
        Leaf(3, Src.NEIGHBOR, Rung.HIGHER, T.TR_EDGE, Exec.LOCAL_EDGE),
        Leaf(4, Src.NEIGHBOR, Rung.EXACT),
        Leaf(5, Src.NEIGHBOR, Rung.HIGHER, T.TR_EDGE, Exec.SOURCE),
        Leaf(6, Src.ORIGIN, Rung.EXACT),
        Leaf(7, Src.CDN, Rung.HIGHER, T.TR_EDGE, Exec.LOCAL_EDGE),
        Leaf(8, Src.CDN, Rung.EXACT),
    ),
    Tree.RICHTER: (
        Leaf(1, Src.PEER, Rung.EXACT),
        Leaf(2, Src.PEER, Rung.HIGHER, T.TR_REMOTE_PEER, Exec.SOURCE),
        Leaf(3, Src.LOCAL_EDGE, Rung.EXACT),
        Leaf(4, Src.LOCAL_EDGE, Rung.HIGHER, T.TR_EDGE, Exec.LOCAL_EDGE),
        Leaf(5, Src.ORIGIN, Rung.EXACT),
        Leaf(6, Src.CDN, Rung.HIGHER, T.TR_EDGE, Exec.LOCAL_EDGE),
        Leaf(7, Src.CDN, Rung.EXACT),
    ),
    Tree.SARENA: (
        Leaf(1, Src.LOCAL_EDGE, Rung.EXACT),
        Leaf(2, Src.LOCAL_EDGE, Rung.HIGHER, T.TR_EDGE, Exec.LOCAL_EDGE),
        Leaf(3, Src.CDN, Rung.EXACT),
        Leaf(4, Src.ORIGIN, Rung.EXACT),
        Leaf(5, Src.CDN, Rung.HIGHER, T.TR_EDGE, Exec.LOCAL_EDGE),
    ),
    Tree.ESHAS: (
        Leaf(1, Src.CDN, Rung.REPLACE),
        Leaf(2, Src.ORIGIN, Rung.EXACT),
    ),
    Tree.CSDN: (
        Leaf(1, Src.CDN, Rung.REPLACE),
        Leaf(2, Src.CDN, Rung.REPLACE_HIGHER, T.TR_EDGE, Exec.LOCAL_EDGE),
        Leaf(3, Src.ORIGIN, Rung.EXACT),
    ),
}
del T

PEER_TRANSFORMS = (Transform.TR_LOCAL_PEER, Transform.TR_REMOTE_PEER, Transform.SR_LOCAL_PEER)


def tree_variants(tree: Tree) -> frozenset[int]:
    return frozenset(leaf.variant for leaf in TREES[Tree(tree)])


# --- pricing ----------------------------------------------------------------------------------

@dataclass(frozen=True)
class Priced:
    action: Action
    latency: float
    cost: float
    deviation: int
    legs: tuple[tuple[str, str, int], ...]
    transform: Optional[TransformCost]
    demands: tuple[tuple[tuple, float], ...]   # shared resource key -> amount


def delivery_point(ctx: DecisionContext, action: Action, request: RequestEvent) -> str:
    if action.transform in PEER_TRANSFORMS or (ctx.kind(action.source_node) or NodeKind.ORIGIN).is_peer:
        return request.client_id
    return request.edge_id


def action_legs(ctx: DecisionContext, action: Action, request: RequestEvent) -> list[tuple[str, str, int]]:
    dst = delivery_point(ctx, action, request)
    src, ex = action.source_node, action.exec_node
    if ex is None:
        return [(src, dst, action.source_rep)] if src != dst else []
    legs = []
    if src != ex:
        legs.append((src, ex, action.source_rep))
    if ex != dst:
        legs.append((ex, dst, request.requested_rep))
    return legs


def _transform_cost(ctx: DecisionContext, action: Action, request: RequestEvent) -> Optional[TransformCost]:
    if action.transform == Transform.NONE:
        return None
    cls = ctx.node_class(action.exec_node)
    if action.transform == Transform.SR_LOCAL_PEER:
        return ctx.costs.sr_cost(action.source_rep, request.requested_rep, cls)
    return ctx.costs.tr(action.source_rep, request.requested_rep, cls)


def _price(ctx: DecisionContext, action: Action, request: RequestEvent) -> Optional[Priced]:
    """Price one action, or None when a resource or profile rules it out."""
    try:
        tc = _transform_cost(ctx, action, request)
    except MissingProfile:
        return None
    legs = tuple(action_legs(ctx, action, request))
    latency = 0.0
    bits_priced = 0.0
    demands = []
    for src, dst, rep in legs:
        r = ctx.ladder[rep]
        bw = ctx.bandwidth.get((src, dst), 0.0)
        if bw < r.bitrate:
            return None
        latency += r.segment_size / bw
        demands.append((("bw", src, dst), float(r.bitrate)))
        if not ctx.kind(src).is_peer:
            bits_priced += r.segment_size
    cpu_dollars = 0.0
    if tc is not None:
        ex = action.exec_node
        latency += tc.time
        if ctx.kind(ex) == NodeKind.EDGE:
            if ctx.cpu.get(ex, 0.0) < tc.cpu:
                return None
            demands.append((("cpu", ex), tc.cpu))
            if ex != request.edge_id:
                if ctx.neighbor_cpu.get(ex, 0.0) < tc.cpu:
                    return None
                demands.append((("ncpu", ex), tc.cpu))
            cpu_dollars = tc.cpu * ctx.costs.pricebook.compute_price
        else:
            if ctx.power.get(ex, math.inf) < tc.power:
                return None
            demands.append((("pow", ex), tc.power))
    cost = bits_priced * ctx.costs.pricebook.bw_price + cpu_dollars
    deviation = action.delivered_rep(request) - request.requested_rep
    return Priced(action, latency, cost, deviation, legs, tc, tuple(demands))


def _source_ids(ctx: DecisionContext, role: Src, request: RequestEvent) -> list[str]:
    if role == Src.LOCAL_EDGE:
        return [request.edge_id] if ctx.kind(request.edge_id) == NodeKind.EDGE else []
    if role == Src.NEIGHBOR:
        return [e for e in ctx.ids_of(NodeKind.EDGE) if e != request.edge_id]
    if role == Src.CDN:
        return ctx.ids_of(NodeKind.CDN)
    if role == Src.ORIGIN:
        return ctx.ids_of(NodeKind.ORIGIN)
    requester = ctx.nodes.get(request.client_id)
    if requester is None or not requester.kind.is_peer:
        return []
    peers = [p for p in ctx.ids_of(NodeKind.SEEDER, NodeKind.LEECHER) if p != request.client_id]
    if requester.kind == NodeKind.SEEDER:
        peers = [p for p in peers if ctx.kind(p) != NodeKind.LEECHER]
    return peers


def _rungs(ctx: DecisionContext, rung: Rung, req: int) -> list[int]:
    top = ctx.ladder.max_index
    if rung == Rung.EXACT:
        return [req]
    if rung == Rung.HIGHER:
        return list(range(req + 1, top + 1))
    if rung == Rung.LOWER:
        return list(range(req - 1, max(0, req - ctx.sr_window) - 1, -1))
    window = replacement_set(ctx.ladder, req, ctx.m)
    return window if rung == Rung.REPLACE else window[1:]


def _candidates(ctx: DecisionContext, request: RequestEvent, tree: Tree, variants) -> Iterable[Action]:
    req = request.requested_rep
    requester = ctx.nodes.get(request.client_id)
    for leaf in TREES[tree]:
        if variants is not None and leaf.variant not in variants:
            continue
        if leaf.execute == Exec.REQUESTER and (requester is None or not requester.kind.is_peer):
            continue
        for src in _source_ids(ctx, leaf.src, request):
            for rep in _rungs(ctx, leaf.rung, req):
                if not ctx.holds(src, request.segment, rep):
                    continue
                if leaf.execute == Exec.RELAY:
                    for nes in _source_ids(ctx, Src.NEIGHBOR, request):
                        yield Action(tree, leaf.variant, src, leaf.transform, rep, nes, nes)
                    continue
                ex = {Exec.NONE: None, Exec.LOCAL_EDGE: request.edge_id, Exec.SOURCE: src,
                      Exec.REQUESTER: request.client_id}[leaf.execute]
                yield Action(tree, leaf.variant, src, leaf.transform, rep, ex)


def price_actions(ctx: DecisionContext, request: RequestEvent, tree: Tree, variants=None,
                  cache_first: bool = True) -> list[Priced]:
    """Every feasible action with its latency and cost, in canonical order.

    cache_first applies the EsHas rule that an exact copy held by a reachable cache must be
    served from it; lookups of an already chosen action pass False.
    """
    tree = Tree(tree)
    variants = None if variants is None else frozenset(variants)
    key = (request, tree, variants, cache_first)
    hit = ctx._priced.get(key)
    if hit is not None:
        return hit
    out = []
    for action in _candidates(ctx, request, tree, variants):
        p = _price(ctx, action, request)
        if p is None:
            continue
        if tree == Tree.SARENA and p.latency > request.deadline:
            continue
        out.append(p)
    if cache_first and tree == Tree.ESHAS and any(_cached_exact(p) for p in out):
        # a cached exact copy must be served from cache
        out = [p for p in out if p.action.variant != 2]
    out.sort(key=lambda p: p.action.sort_key)
    ctx._priced[key] = out
    return out


def feasible_actions(ctx: DecisionContext, request: RequestEvent, tree: Tree, variants=None) -> list[Action]:
    return [p.action for p in price_actions(ctx, request, tree, variants)]


def _lookup(ctx, action: Action, request: RequestEvent) -> Priced:
    for p in price_actions(ctx, request, action.tree, cache_first=False):
        if p.action == action:
            return p
    raise NoFeasibleAction(f"{action} is not feasible for {request}")


def action_latency(ctx: DecisionContext, action: Action, request: RequestEvent) -> float:
    return _lookup(ctx, action, request).latency


def action_cost(ctx: DecisionContext, action: Action, request: RequestEvent) -> float:
    return _lookup(ctx, action, request).cost


def _ratio(value: float, norm: float) -> float:
    return 0.0 if norm == 0 else value / norm


def priced_objective(ctx: DecisionContext, p: Priced, request: RequestEvent) -> float:
    tree = p.action.tree
    norms = ctx.normalizers
    if tree == Tree.ESHAS:
        a1, a2, a3 = ctx.weights.eshas
        if a1 and norms is None:
            raise MissingNormalizer("latency normalizer required")
        top = ctx.ladder[ctx.ladder.max_index].bitrate
        quality = ctx.ladder[p.action.delivered_rep(request)].bitrate / top
        out = a1 * _ratio(p.latency, norms[0]) if a1 else 0.0
        return out + a2 * p.deviation / max(ctx.m, 1) + a3 * (1.0 - quality)
    if tree == Tree.CSDN:
        a, b = ctx.weights.csdn
        if a and norms is None:
            raise MissingNormalizer("latency normalizer required")
        return (a * _ratio(p.latency, norms[0]) if a else 0.0) + b * p.deviation / max(ctx.m, 1)
    beta = ctx.weights.beta
    if norms is None:
        raise MissingNormalizer("objective needs (latency, cost) normalizers")
    out = 0.0
    if beta:
        out += beta * _ratio(p.latency, norms[0])
    if beta != 1.0:
        out += (1.0 - beta) * _ratio(p.cost, norms[1])
    return out


def objective(ctx: DecisionContext, action: Action, request: RequestEvent) -> float:
    return priced_objective(ctx, _lookup(ctx, action, request), request)


# --- invariants -------------------------------------------------------------------------------

def check_invariants(ctx: DecisionContext, action: Action, request: RequestEvent) -> None:
    """Raise PolicyViolation if the action breaks a structural serving rule."""
    kind = ctx.kind(action.source_node)
    req = request.requested_rep
    if action.transform == Transform.NONE:
        if action.tree in (Tree.ESHAS, Tree.CSDN):
            if action.source_rep not in replacement_set(ctx.ladder, req, ctx.m):
                raise PolicyViolation("replacement rung outside the allowed window")
        elif action.source_rep != req:
            raise PolicyViolation("untransformed delivery of a different rung")
    elif action.transform == Transform.SR_LOCAL_PEER:
        if action.exec_node != request.client_id:
            raise PolicyViolation("super-resolution must run on the requesting peer")
        if action.source_rep >= req:
            raise PolicyViolation("super-resolution needs a lower source rung")
    elif action.source_rep <= req:
        raise PolicyViolation("transcoding needs a higher source rung")
    if kind == NodeKind.ORIGIN and (action.transform != Transform.NONE or action.source_rep != req):
        raise PolicyViolation("origin serves exact rungs only")
    if kind == NodeKind.CDN and action.exec_node == action.source_node:
        raise PolicyViolation("CDNs never transcode")
    if action.exec_node is not None and ctx.kind(action.exec_node) == NodeKind.CDN:
        raise PolicyViolation("CDNs never transcode")
    requester = ctx.nodes.get(request.client_id)
    if requester is not None and requester.kind == NodeKind.SEEDER:
        for node in (action.source_node, action.exec_node):
            if node is not None and ctx.kind(node) == NodeKind.LEECHER:
                raise PolicyViolation("seeders never draw from leechers")


def check_no_double_transform(actions_per_peer: Mapping[tuple, Sequence[Action]]) -> None:
    """A peer may not both transcode and super-resolve for one request."""
    for key, actions in actions_per_peer.items():
        kinds = {a.transform for a in actions}
        if Transform.SR_LOCAL_PEER in kinds and (Transform.TR_LOCAL_PEER in kinds or Transform.TR_REMOTE_PEER in kinds):
            raise PolicyViolation(f"{key}: transcoding and super-resolution on one request")


# --- oracles ----------------------------------------------------------------------------------

@dataclass
class Assignment:
    pairs: tuple[tuple[RequestEvent, Action], ...]
    feasible: bool
    objective: float

    @property
    def actions(self) -> dict[RequestEvent, Action]:
        return dict(self.pairs)


def _capacity(ctx: DecisionContext, key: tuple) -> float:
    kind = key[0]
    if kind == "bw":
        return ctx.bandwidth.get((key[1], key[2]), 0.0)
    if kind == "cpu":
        return ctx.cpu.get(key[1], 0.0)
    if kind == "ncpu":
        return ctx.neighbor_cpu.get(key[1], 0.0)
    return ctx.power.get(key[1], math.inf)


_EPS = 1e-9


def _cached_exact(p: Priced) -> bool:
    return p.action.tree == Tree.ESHAS and p.action.variant == 1 and p.deviation == 0


def _search(ctx, options: list[list[Priced]], primary: list[list[float]], secondary=None):
    """Depth-first branch and bound over joint choices.

    Minimises the sum of `primary`; on equal primary totals it maximises the sum of `secondary`
    when given, otherwise the first (lexicographically smallest) assignment found is kept.
    For EsHas a complete assignment may send a request to the origin only if none of its
    cached exact copies could still be delivered alongside everyone else's choices.
    """
    n = len(options)
    best_rest = [0.0] * (n + 1)
    for i in range(n - 1, -1, -1):
        best_rest[i] = best_rest[i + 1] + min(primary[i])
    used: dict[tuple, float] = {}
    caps: dict[tuple, float] = {}
    best = [math.inf, -math.inf, None]
    choice = [0] * n

    def fits(p: Priced) -> bool:
        for key, amount in p.demands:
            cap = caps.get(key)
            if cap is None:
                cap = caps[key] = _capacity(ctx, key)
            if used.get(key, 0.0) + amount > cap * (1 + _EPS):
                return False
        return True

    def apply(p: Priced, sign: float):
        for key, amount in p.demands:
            used[key] = used.get(key, 0.0) + sign * amount

    def honours_cache_rule() -> bool:
        for i in range(n):
            p = options[i][choice[i]]
            if ctx.kind(p.action.source_node) != NodeKind.ORIGIN or p.action.tree != Tree.ESHAS:
                continue
            apply(p, -1.0)
            ok = not any(_cached_exact(q) and fits(q) for q in options[i])
            apply(p, 1.0)
            if not ok:
                return False
        return True

    def dfs(i: int, total: float, sec: float):
        if i == n:
            if not honours_cache_rule():
                return
            if secondary is None:
                better = total < best[0]
            else:
                tol = _EPS * max(1.0, abs(best[0])) if best[0] < math.inf else 0.0
                better = total < best[0] - tol or (abs(total - best[0]) <= tol and sec > best[1])
            if better:
                best[0], best[1], best[2] = total, sec, list(choice)
            return
        bound = total + best_rest[i]
        if secondary is None:
            if bound >= best[0]:
                return
        elif bound > best[0] + _EPS * max(1.0, abs(best[0])):
            return
        for j, p in enumerate(options[i]):
            if not fits(p):
                continue
            choice[i] = j
            apply(p, 1.0)
            dfs(i + 1, total + primary[i][j], sec + (secondary[i][j] if secondary else 0.0))
            apply(p, -1.0)

    dfs(0, 0.0, 0.0)
    return best[2]


def _options(ctx, requests, tree, variants, limit):
    # the cache-first rule is enforced jointly by _search
    options = [price_actions(ctx, r, tree, variants, cache_first=False) for r in requests]
    if any(not o for o in options):
        raise InfeasibleInstance("a request has no feasible action")
    size = 1
    for o in options:
        size *= len(o)
        if size > limit:
            raise SearchSpaceTooLarge(f"joint search space exceeds {limit}; reduce the instance")
    return options


def compute_normalizers(ctx: DecisionContext, requests: Sequence[RequestEvent], tree: Tree, variants=None,
                        limit: int = 10 ** 6) -> tuple[float, float]:
    """(latency of the cost-optimal assignment, cost of the latency-optimal assignment).

    Ties in the optimised quantity are resolved toward the largest value of the other one,
    so the normalizers are the worst case the trade-off allows.
    """
    options = _options(ctx, requests, tree, variants, limit)
    lat = [[p.latency for p in o] for o in options]
    cost = [[p.cost for p in o] for o in options]
    cheap = _search(ctx, options, cost, lat)
    fast = _search(ctx, options, lat, cost)
    if cheap is None or fast is None:
        raise InfeasibleInstance("no joint assignment satisfies the shared resources")
    psi = math.fsum(lat[i][j] for i, j in enumerate(cheap))
    xi = math.fsum(cost[i][j] for i, j in enumerate(fast))
    return psi, xi


def _ensure_normalizers(ctx, requests, tree, variants, limit=10 ** 6):
    if ctx.normalizers is not None:
        return ctx
    return ctx.with_normalizers(compute_normalizers(ctx, requests, tree, variants, limit))


def ranked(ctx: DecisionContext, request: RequestEvent, tree: Tree, variants=None) -> list[tuple[float, Priced]]:
    """Feasible actions with objective values, best first (ties in canonical order)."""
    priced = price_actions(ctx, request, tree, variants)
    out = [(priced_objective(ctx, p, request), p) for p in priced]
    out.sort(key=lambda t: (t[0], t[1].action.sort_key))
    return out


def oracle_single(ctx: DecisionContext, request: RequestEvent, tree: Tree, variants=None) -> Action:
    if not price_actions(ctx, request, tree, variants):
        raise NoFeasibleAction(str(request))
    ctx = _ensure_normalizers(ctx, [request], tree, variants)
    return ranked(ctx, request, tree, variants)[0][1].action


def oracle_joint(ctx: DecisionContext, requests: Sequence[RequestEvent], tree: Tree, limit: int = 10 ** 6,
                 variants=None) -> Assignment:
    ctx = _ensure_normalizers(ctx, requests, tree, variants, limit)
    options = _options(ctx, requests, tree, variants, limit)
    values = [[priced_objective(ctx, p, r) for p in o] for o, r in zip(options, requests)]
    best = _search(ctx, options, values)
    if best is None:
        raise InfeasibleInstance("no joint assignment satisfies the shared resources")
    pairs = tuple((r, options[i][j].action) for i, (r, j) in enumerate(zip(requests, best)))
    return Assignment(pairs, True, sum(values[i][j] for i, j in enumerate(best)))


def evaluate_assignment(ctx: DecisionContext, pairs: Sequence[tuple[RequestEvent, Action]]) -> Assignment:
    """Check shared-resource feasibility of a joint choice and total its objective on `ctx`."""
    used: dict[tuple, float] = {}
    total = 0.0
    feasible = True
    for request, action in pairs:
        try:
            p = _lookup(ctx, action, request)
        except NoFeasibleAction:
            feasible = False
            continue
        for key, amount in p.demands:
            used[key] = used.get(key, 0.0) + amount
            if used[key] > _capacity(ctx, key) * (1 + _EPS):
                feasible = False
        total += priced_objective(ctx, p, request)
    return Assignment(tuple(pairs), feasible, total if feasible else math.nan)


def reserve(ctx: DecisionContext, request: RequestEvent, action: Action) -> DecisionContext:
    """A new context with the action's bandwidth, cpu and power taken out."""
    p = _lookup(ctx, action, request)
    bandwidth, cpu, ncpu, power = dict(ctx.bandwidth), dict(ctx.cpu), dict(ctx.neighbor_cpu), dict(ctx.power)
    for key, amount in p.demands:
        if key[0] == "bw":
            bandwidth[(key[1], key[2])] = bandwidth.get((key[1], key[2]), 0.0) - amount
        elif key[0] == "cpu":
            cpu[key[1]] -= amount
        elif key[0] == "ncpu":
            ncpu[key[1]] -= amount
        else:
            power[key[1]] = power.get(key[1], math.inf) - amount
    return replace(ctx, bandwidth=bandwidth, cpu=cpu, neighbor_cpu=ncpu, power=power, _priced={})


# --- presets ----------------------------------------------------------------------------------

@dataclass(frozen=True)
class Preset:
    name: str
    tree: Tree
    variants: frozenset[int]
    mode: str                      # joint | oracle | gba | efg1 | efg2 | sarena | som
    allocation: Optional[str] = None   # leader | sfg | None
    m: Optional[int] = None


def _all(tree):
    return tree_variants(tree)


PRESETS: dict[str, Preset] = {p.name: p for p in (
    Preset("eshas", Tree.ESHAS, _all(Tree.ESHAS), "joint", m=1),
    Preset("csdn", Tree.CSDN, _all(Tree.CSDN), "joint", m=2),
    Preset("sarena", Tree.SARENA, _all(Tree.SARENA), "sarena"),
    Preset("leader", Tree.LEADER, _all(Tree.LEADER), "oracle", allocation="leader"),
    Preset("ararat-cg", Tree.ARARAT, _all(Tree.ARARAT), "joint"),
    Preset("ararat-fg1", Tree.ARARAT, _all(Tree.ARARAT), "efg1"),
    Preset("ararat-fg2", Tree.ARARAT, _all(Tree.ARARAT), "efg2", allocation="sfg"),
    Preset("richter", Tree.RICHTER, _all(Tree.RICHTER), "som"),
    Preset("alive", Tree.ALIVE, _all(Tree.ALIVE), "gba"),
    Preset("noh", Tree.ALIVE, frozenset({7, 8}), "gba"),
    Preset("seh", Tree.ALIVE, frozenset({1, 7, 8}), "gba"),
    Preset("nth", Tree.ALIVE, frozenset({1, 4, 7, 8}), "gba"),
    Preset("ect", Tree.ALIVE, frozenset({1, 4, 5, 6, 7, 8}), "gba"),
    Preset("nsh", Tree.ALIVE, frozenset({1, 2, 4, 5, 6, 7, 8}), "gba"),
    Preset("necol", Tree.ARARAT, frozenset({1, 2, 7, 8, 9}), "efg1"),
    Preset("decol", Tree.LEADER, _all(Tree.LEADER), "oracle"),
)}


def preset(name: str) -> Preset:
    try:
        return PRESETS[name]
    except KeyError:
        raise KeyError(f"unknown policy {name!r}; choose one of {', '.join(PRESETS)}") from None
