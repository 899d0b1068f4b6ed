import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from helpers import COSTS, make_ctx, req
from navsim.costs import NodeClass
from navsim.heuristics import (EdgeScale, FlowDemand, MissCounters, efg1, efg2_tick, gba, leader_allocate,
                               make_queues, sarena_autoscale, sarena_schedule, sfg_allocate)
from navsim.instances import random_instance
from navsim.policy import Action, NoFeasibleAction, Transform, Tree, priced_objective, price_actions
from navsim.topology import MBPS, Path
from navsim.workload import RequestEvent, ServiceClass

TR_4_2 = COSTS.tr(4, 2, NodeClass.EDGE)


def test_gba_prefers_free_peer_at_equal_latency():
    ctx = make_ctx(["c1", "e1", "s1", "s2"], holds={"s2": {2}, "c1": {2}}, bw={("s2", "s1"): 20, ("c1", "e1"): 20})
    node, action = gba(ctx, req(2, client="s1"))
    assert node == "s2" and action.variant == 1


def test_gba_empty():
    ctx = make_ctx(["e1"], bw={})
    with pytest.raises(NoFeasibleAction):
        gba(ctx, req(2))


def test_efg1_local_hit_costs_nothing():
    ctx = make_ctx(["o", "e1"], holds={"e1": {2}}, bw={("o", "e1"): 10})
    r = req(2)
    a = efg1(ctx, r)
    assert (a.variant, a.source_node) == (1, "e1")
    p = next(p for p in price_actions(ctx, r, Tree.ARARAT) if p.action == a)
    assert (p.latency, p.cost) == (0.0, 0.0)


def test_efg1_local_transcode_pricing():
    ctx = make_ctx(["o", "e1"], holds={"e1": {4}}, bw={("o", "e1"): 1})
    r = req(2)
    a = efg1(ctx, r)
    assert a == Action(Tree.ARARAT, 2, "e1", Transform.TR_EDGE, 4, "e1")
    p = next(p for p in price_actions(ctx, r, Tree.ARARAT) if p.action == a)
    assert p.latency == pytest.approx(TR_4_2.time)
    assert p.cost == pytest.approx(TR_4_2.cpu * 0.029 / 3600)


def test_efg1_gates_neighbour_cpu():
    bw = {("e1", "e2"): 200, ("e2", "e1"): 200, ("o", "e1"): 1}
    starved = make_ctx(["o", "e1", "e2"], holds={"e1": {4}}, bw=bw, cpu={"e1": 0.0, "e2": 0.2}, thr_comp=0.5)
    assert all(p.action.variant != 6 for p in price_actions(starved, req(2), Tree.ARARAT))
    roomy = make_ctx(["o", "e1", "e2"], holds={"e1": {4}}, bw=bw, cpu={"e1": 0.0, "e2": 1.0}, thr_comp=0.5)
    assert any(p.action.variant == 6 for p in price_actions(roomy, req(2), Tree.ARARAT))
    assert efg1(roomy, req(2)).variant == 6
    assert efg1(roomy, req(2), thr_comp=0.1).variant != 6


def test_efg2_tick_examples():
    c = MissCounters(thr_miss=100)
    for _ in range(101):
        c.record("e1", "c1", 1.0, hit=False)
    c.record("e1", "c1", 2.0, hit=True)
    got = efg2_tick(c, "e1")
    assert len(got) == 1 and got[0].server_id == "c1" and got[0].hit_bitrates == 2.0
    assert c.miss_counter[("e1", "c1")] == 0
    assert efg2_tick(c, "e1") == []
    for s in ("o", "c2"):
        for _ in range(101):
            c.record("e1", s, 1.0, hit=False)
    assert [t.server_id for t in efg2_tick(c, "e1")] == ["c2", "o"]


def _flows(demands, link="l"):
    return [FlowDemand(f"e{i}", "s", d * MBPS, Path("s", f"e{i}", (link,))) for i, d in enumerate(demands)]


def test_sfg_examples():
    F, x = sfg_allocate({"l": 300 * MBPS}, _flows([600, 180, 250]))
    assert F == pytest.approx(300 / 1030)
    assert [round(v / MBPS, 2) for v in x] == [174.76, 52.43, 72.82]
    assert all(abs(v / MBPS - w) <= 0.05 for v, w in zip(x, (174.75, 52.42, 72.81)))
    F, x = sfg_allocate({"l": 300 * MBPS}, _flows([100]))
    assert F == 1.0 and x == [100 * MBPS]
    F, x = sfg_allocate({"l": 300 * MBPS}, _flows([200, 200]))
    assert F == 0.75 and x == [150 * MBPS, 150 * MBPS]
    assert sfg_allocate({"l": 1.0}, []) == (1.0, [])


def test_leader_examples():
    assert [v / MBPS for v in leader_allocate(60 * MBPS, [("a", "s", 2), ("b", "s", 4)])] == pytest.approx([40, 20])
    assert [v / MBPS for v in leader_allocate(60 * MBPS, [("a", "s", 3), ("b", "s", 3)])] == pytest.approx([30, 30])
    assert leader_allocate(60 * MBPS, [("a", "s", 5)]) == [60 * MBPS]
    with pytest.raises(ValueError):
        leader_allocate(1.0, [("a", "s", 0), ("b", "s", 1)])


def _sreq(client, rep, cls=ServiceClass.LIVE, deadline=2.0, seg=0):
    from navsim.catalog import SegmentId
    return RequestEvent(client, "e1", SegmentId("v", seg), rep, 0, deadline, cls)


def test_sarena_live_first():
    ctx = make_ctx(["o", "e1"], bw={("o", "e1"): 100})
    live = [_sreq(f"l{i}", 1, seg=i) for i in range(3)]
    vod = [_sreq(f"v{i}", 2, ServiceClass.VOD, 4.0, seg=10 + i) for i in range(2)]
    out = sarena_schedule(make_queues(vod + live, ctx), ctx)
    assert [d.request.client_id[0] for d in out] == ["l"] * 3 + ["v"] * 2


def test_sarena_deadline_gate():
    # a 4.2 Mbps link moves the top rung in real time, so copy plus edge transcode overruns a 2 s deadline
    ctx = make_ctx(["c1", "e1"], holds={"c1": {4}}, bw={("c1", "e1"): 4.2})
    out = sarena_schedule(make_queues([_sreq("u", 2)], ctx), ctx)
    assert out[0].missed and out[0].action is None
    out = sarena_schedule(make_queues([_sreq("u", 2, ServiceClass.VOD, 4.0)], ctx), ctx)
    assert out[0].action is not None and out[0].latency == pytest.approx(2.0 + TR_4_2.time)


def test_sarena_holds_duplicates():
    ctx = make_ctx(["o", "e1"], bw={("o", "e1"): 100})
    out = sarena_schedule(make_queues([_sreq("a", 2), _sreq("b", 2)], ctx), ctx)
    assert [d.held for d in out] == [False, True]
    assert sum(d.action is not None for d in out) == 1


def test_autoscale_examples():
    s = EdgeScale(cores=4, max_cores=10)
    assert sarena_autoscale(s, 3.2, 4.0).cores == 6
    assert sarena_autoscale(s, 4.0, 4.0) == s
    top = EdgeScale(cores=10, ram_gb=16)
    assert sarena_autoscale(top, 1.0, 4.0) == top


# --- properties --------------------------------------------------------------------------------

@settings(max_examples=200, deadline=None)
@given(st.floats(1, 1e10), st.lists(st.integers(1, 30), min_size=1, max_size=12))
def test_leader_sums_to_capacity(cap, hops):
    got = leader_allocate(cap, [(f"e{i}", "s", h) for i, h in enumerate(hops)])
    assert math.isclose(sum(got), cap, rel_tol=1e-9)
    assert all(v >= 0 for v in got)


@settings(max_examples=200, deadline=None)
@given(st.lists(st.tuples(st.floats(0, 1e9), st.sets(st.sampled_from("abcd"), min_size=1)), max_size=10),
       st.dictionaries(st.sampled_from("abcd"), st.floats(1, 1e9), min_size=4, max_size=4))
def test_sfg_never_exceeds_demand_or_capacity(flows, caps):
    demands = [FlowDemand(f"e{i}", "s", d, Path("s", f"e{i}", tuple(sorted(ls)))) for i, (d, ls) in enumerate(flows)]
    F, x = sfg_allocate(caps, demands)
    assert 0 <= F <= 1
    for d, a in zip(demands, x):
        assert a <= d.demand * (1 + 1e-12)
    for lid, cap in caps.items():
        assert sum(a for d, a in zip(demands, x) if lid in d.path.links) <= cap * (1 + 1e-9)


@settings(max_examples=100, deadline=None)
@given(st.integers(0, 2 ** 32 - 1))
def test_sarena_meets_deadlines(seed):
    inst = random_instance(np.random.default_rng(seed), Tree.SARENA, 5, costs=COSTS, ample_origin=False)
    for d in sarena_schedule(make_queues(inst.requests, inst.ctx), inst.ctx):
        if d.action is not None:
            assert d.latency <= d.request.deadline


@given(st.integers(4, 10), st.floats(0, 5), st.floats(0, 5))
def test_autoscale_monotone(cores, qoe, threshold):
    s = EdgeScale(cores=cores)
    out = sarena_autoscale(s, qoe, threshold)
    assert out.cores >= s.cores and out.cores <= s.max_cores
    if qoe >= threshold:
        assert out == s


@settings(max_examples=150, deadline=None)
@given(st.integers(0, 2 ** 32 - 1), st.sampled_from(list(Tree)))
def test_single_request_heuristics_match_exhaustive_minimum(seed, tree):
    inst = random_instance(np.random.default_rng(seed), tree, 1, costs=COSTS)
    r = inst.requests[0]
    from navsim.policy import compute_normalizers
    ctx = inst.ctx.with_normalizers(compute_normalizers(inst.ctx, [r], tree))
    best = min(priced_objective(ctx, p, r) for p in price_actions(ctx, r, tree))
    for a in (gba(ctx, r, tree)[1], efg1(ctx, r, tree=tree)):
        p = next(p for p in price_actions(ctx, r, tree) if p.action == a)
        assert priced_objective(ctx, p, r) == best
