import math

import pytest
from hypothesis import given, settings, strategies as st

from navsim.topology import (MBPS, DanglingEndpoint, DuplicateId, InvalidCapacity, MissingOrigin, NodeKind,
                             PathMetric, ReservationLedger, Unreachable, build_topology, residual_bandwidth,
                             select_path)


def graph(nodes, links):
    return build_topology({"nodes": [{"id": n, "kind": k} for n, k in nodes],
                           "links": [{"id": i, "a": a, "b": b, "mbps": m} for i, a, b, m in links]})


def test_minimal_graph():
    t = graph([("o", "Origin"), ("e", "Edge")], [("l1", "o", "e", 100)])
    assert len(t.nodes) == 2 and len(t.links) == 1
    assert t.links["l1"].capacity == 100 * MBPS


def test_dangling_endpoint():
    with pytest.raises(DanglingEndpoint, match="x"):
        graph([("o", "Origin")], [("l1", "o", "x", 10)])


def test_other_config_errors():
    with pytest.raises(DuplicateId):
        graph([("o", "Origin"), ("o", "Edge")], [])
    with pytest.raises(MissingOrigin):
        graph([("e", "Edge")], [])
    with pytest.raises(InvalidCapacity):
        graph([("o", "Origin"), ("e", "Edge")], [("l", "o", "e", 0)])
    with pytest.raises(InvalidCapacity):
        build_topology({"nodes": [{"id": "o", "kind": "Origin"}, {"id": "p", "kind": "leecher"}], "links": []})


def test_geant_shaped():
    # 40 switches abstracted to endpoints, 61 links: a ring plus chords
    nodes = [("o", "Origin")] + [(f"s{i}", "Cdn") for i in range(39)]
    ids = [n for n, _ in nodes]
    links = [(f"l{i}", ids[i], ids[(i + 1) % 40], 100) for i in range(40)]
    links += [(f"c{i}", ids[i], ids[(i + 7) % 40], 50) for i in range(21)]
    t = graph(nodes, links)
    assert len(t.links) == 61


def test_kind_aliases():
    assert NodeKind.parse("seeder") == NodeKind.SEEDER
    assert NodeKind.parse("peer_leecher") == NodeKind.LEECHER
    assert NodeKind.parse("VTS") == NodeKind.EDGE


def test_line_graph_path():
    t = graph([("A", "Origin"), ("B", "Cdn"), ("C", "Edge")], [("A-B", "A", "B", 10), ("B-C", "B", "C", 10)])
    p = select_path(t, "A", "C")
    assert p.links == ("A-B", "B-C") and p.hop_count == 2
    assert t.path_nodes(p) == ["A", "B", "C"]


def test_max_bw_per_hop_prefers_wide_two_hop():
    t = graph([("A", "Origin"), ("B", "Cdn"), ("C", "Edge")],
              [("direct", "A", "C", 20), ("x1", "A", "B", 50), ("x2", "B", "C", 80)])
    assert select_path(t, "A", "C").links == ("direct",)
    assert select_path(t, "A", "C", PathMetric.MAX_BW_PER_HOP).links == ("x1", "x2")


def test_tie_goes_to_smaller_link_ids():
    t = graph([("A", "Origin"), ("B", "Cdn"), ("D", "Cdn"), ("C", "Edge")],
              [("b1", "A", "B", 10), ("b2", "B", "C", 10), ("a1", "A", "D", 10), ("a2", "D", "C", 10)])
    assert select_path(t, "A", "C").links == ("a1", "a2")
    assert select_path(t, "A", "C", "MaxBwPerHop").links == ("a1", "a2")


def test_unreachable():
    t = graph([("A", "Origin"), ("B", "Edge")], [])
    with pytest.raises(Unreachable):
        select_path(t, "A", "B")


def test_residual_examples():
    t = graph([("A", "Origin"), ("B", "Cdn"), ("C", "Cdn"), ("D", "Edge")],
              [("l1", "A", "B", 100), ("l2", "B", "C", 40), ("l3", "C", "D", 60)])
    p = select_path(t, "A", "D")
    assert residual_bandwidth(t, p) == 40 * MBPS
    ledger = ReservationLedger(t)
    ledger.reserve("x", select_path(t, "B", "C"), 10 * MBPS)
    assert ledger.residual(p) == 30 * MBPS
    ledger.release("x")
    assert ledger.residual(p) == 40 * MBPS
    t2 = graph([("A", "Origin"), ("B", "Cdn"), ("C", "Edge")], [("l1", "A", "B", 50), ("l2", "B", "C", 50)])
    assert residual_bandwidth(t2, select_path(t2, "A", "C")) == 50 * MBPS


def test_ledger_check_flags_overcommit():
    t = graph([("A", "Origin"), ("B", "Edge")], [("l", "A", "B", 10)])
    ledger = ReservationLedger(t)
    ledger.reserve(1, select_path(t, "A", "B"), 11 * MBPS)
    with pytest.raises(AssertionError):
        ledger.check()


# --- properties --------------------------------------------------------------------------------

@st.composite
def random_graph(draw):
    n = draw(st.integers(2, 7))
    ids = [f"n{i}" for i in range(n)]
    kinds = ["Origin"] + ["Cdn"] * (n - 1)
    links = []
    # a spanning chain keeps everything connected
    for i in range(1, n):
        links.append((f"t{i}", ids[i - 1], ids[i], draw(st.integers(1, 500))))
    for j in range(draw(st.integers(0, 6))):
        a, b = draw(st.sampled_from(ids)), draw(st.sampled_from(ids))
        if a != b:
            links.append((f"x{j}", a, b, draw(st.integers(1, 500))))
    return graph(list(zip(ids, kinds)), links), ids


@settings(max_examples=150, deadline=None)
@given(random_graph(), st.data())
def test_paths_deterministic_and_bounded(g, data):
    t, ids = g
    src = data.draw(st.sampled_from(ids))
    dst = data.draw(st.sampled_from([i for i in ids if i != src]))
    for metric in PathMetric:
        p = select_path(t, src, dst, metric)
        assert p == select_path(t, src, dst, metric)
        nodes = t.path_nodes(p)
        assert nodes[0] == src and nodes[-1] == dst and len(set(nodes)) == len(nodes)
        r = residual_bandwidth(t, p)
        assert all(r <= t.links[l].capacity for l in p.links)


@settings(max_examples=150, deadline=None)
@given(random_graph(), st.data())
def test_max_bw_per_hop_is_optimal(g, data):
    """Compare against brute force over all simple paths."""
    t, ids = g
    src = data.draw(st.sampled_from(ids))
    dst = data.draw(st.sampled_from([i for i in ids if i != src]))
    best = -1.0

    def walk(node, seen, links):
        nonlocal best
        if node == dst:
            best = max(best, min(t.links[l].capacity for l in links) / len(links))
            return
        for lid, nxt in t.adjacency.get(node, ()):
            if nxt not in seen:
                walk(nxt, seen | {nxt}, links + [lid])

    walk(src, {src}, [])
    p = select_path(t, src, dst, PathMetric.MAX_BW_PER_HOP)
    assert math.isclose(residual_bandwidth(t, p) / p.hop_count, best, rel_tol=1e-12)
    shortest = select_path(t, src, dst)
    assert p.hop_count >= shortest.hop_count
