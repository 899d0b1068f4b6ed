"""Hand-built decision contexts for the policy and heuristic tests."""

import math

from navsim.catalog import SegmentId
from navsim.instances import bundled_costs
from navsim.policy import DecisionContext, Weights
from navsim.topology import MBPS, NodeKind, NodeSpec
from navsim.workload import RequestEvent

COSTS = bundled_costs()
SEG = SegmentId("v", 0)

KINDS = {"o": NodeKind.ORIGIN, "c": NodeKind.CDN, "e": NodeKind.EDGE, "s": NodeKind.SEEDER, "l": NodeKind.LEECHER}


def node(nid):
    kind = KINDS[nid[0]]
    return NodeSpec(nid, kind, power_capacity=10.0 if kind.is_peer else math.inf)


def make_ctx(nodes, holds=None, bw=None, cpu=None, power=None, beta=0.5, **kw):
    """nodes: ids whose first letter gives the kind (o, c, e, s, l); bw in Mbps keyed by (src, dst)."""
    specs = {n: node(n) for n in nodes}
    holds = holds or {}
    availability = {n: {SEG: frozenset(holds.get(n, ()))} for n in nodes if n[0] != "o"}
    bandwidth = {k: v * MBPS for k, v in (bw or {}).items()}
    cpu = dict(cpu or {}) if cpu is not None else {n: 10.0 for n in nodes if n[0] == "e"}
    power = power if power is not None else {n: 10.0 for n in nodes if specs[n].kind.is_peer}
    weights = kw.pop("weights", None) or Weights(beta=beta)
    return DecisionContext(ladder=COSTS.ladder, nodes=specs, availability=availability, bandwidth=bandwidth, cpu=cpu,
                           power=power, costs=COSTS, weights=weights, **kw)


def req(rep, client="u", edge="e1", deadline=2.0, segment=SEG):
    return RequestEvent(client, edge, segment, rep, 0, deadline)
