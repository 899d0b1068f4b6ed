import math
from collections import Counter

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from navsim.catalog import Content, ContentKind
from navsim.scenario import DATA_DIR
from navsim.workload import (BandwidthTrace, ChurnSchedule, ClientSpec, RequestEvent, WorkloadSpec, churn_clients,
                             client_contents, cyclic_bandwidth, generate_requests, load_trace, synthetic_4g_trace,
                             trace_bandwidth_at, trace_mean, zipf_probabilities)
from navsim.catalog import SegmentId


def spec(clients, contents=None, slots=200, **kw):
    contents = contents or [Content(f"c{i}", ContentKind.LIVE, 400) for i in range(5)]
    return WorkloadSpec(clients=clients, contents=contents, zipf_alpha=0.7, segment_duration=2.0, slot_duration=0.5,
                        horizon_slots=slots, top_rep=4, **kw)


def test_zipf_examples():
    assert np.allclose(zipf_probabilities(3, 0.0), [1 / 3] * 3, atol=1e-15)
    assert np.allclose(zipf_probabilities(5, 0.7), [0.3594, 0.2213, 0.1666, 0.1362, 0.1165], atol=1e-4)
    assert zipf_probabilities(1, 2.5).tolist() == [1.0]
    with pytest.raises(ValueError):
        zipf_probabilities(0, 1.0)


def test_zipf_oracle():
    # independent evaluation of k^-a / sum j^-a
    k = np.arange(1, 6)
    w = 1.0 / k ** 0.7
    assert np.allclose(zipf_probabilities(5, 0.7), w / w.sum(), rtol=0, atol=1e-15)


@settings(max_examples=60, deadline=None)
@given(st.integers(1, 10 ** 6), st.floats(0, 3))
def test_zipf_shape(K, alpha):
    p = zipf_probabilities(K, alpha)
    assert abs(math.fsum(p) - 1.0) <= 1e-12
    assert np.all(np.diff(p) <= 0)


def test_content_popularity_share():
    clients = [ClientSpec(f"u{i:05d}", "e") for i in range(10_000)]
    got = Counter(c.content_id for c in client_contents(spec(clients), 3).values())
    assert abs(got["c0"] / 10_000 - 0.3594) <= 0.02


def test_requests_deterministic():
    clients = churn_clients(ChurnSchedule(3, 1.0), ["e1", "e2"], 6)
    assert generate_requests(spec(clients), 42) == generate_requests(spec(clients), 42)


def test_single_client_indices_increase():
    s = spec([ClientSpec("u", "e")], [Content("v", ContentKind.VOD, 50)])
    segs = [r.segment.segment_index for r in generate_requests(s, 1)]
    assert segs == list(range(len(segs))) and len(segs) > 5


def test_startup_backlog_then_real_time_pacing():
    s = spec([ClientSpec("u", "e")], [Content("v", ContentKind.VOD, 100)], startup_segments=5)
    slots = [r.arrival_slot for r in generate_requests(s, 1)]
    # issue time max(i * 0.5, (i - 5) * 2): back to back until real time catches up, then every 4 slots
    assert slots[:8] == [0, 1, 2, 3, 4, 5, 6, 8]
    assert all(b - a == 4 for a, b in zip(slots[7:], slots[8:]))


def test_live_join_starts_at_current_segment():
    s = spec([ClientSpec("u", "e", join_time=31.0)], [Content("v", ContentKind.LIVE, 400)])
    first = generate_requests(s, 1)[0]
    assert first.segment.segment_index == 15 and first.arrival_slot == 62


def test_churn_schedule():
    got = churn_clients(ChurnSchedule(2, 5.0, (("p3", 20.0),)), ["e1", "e2"], 4)
    assert [c.join_time for c in got] == [0.0, 0.0, 5.0, 10.0]
    assert [c.edge_id for c in got] == ["e1", "e2", "e1", "e2"]
    assert got[3].leave_time == 20.0


@settings(max_examples=40, deadline=None)
@given(st.integers(0, 2 ** 31), st.lists(st.tuples(st.floats(0, 60), st.floats(1, 80)), min_size=1, max_size=6))
def test_request_stream_invariants(seed, windows):
    clients = [ClientSpec(f"u{i}", "e", j, j + d) for i, (j, d) in enumerate(windows)]
    contents = [Content("a", ContentKind.LIVE, 300), Content("b", ContentKind.VOD, 300)]
    s = spec(clients, contents, slots=160)
    reqs = generate_requests(s, seed)
    by_client = {c.client_id: c for c in clients}
    per_slot = Counter()
    for r in reqs:
        c = by_client[r.client_id]
        t = r.arrival_slot * 0.5
        # issued inside the session (slot containing the issue time)
        assert c.join_time - 0.5 < t < c.leave_time
        per_slot[(r.client_id, r.segment.content_id, r.arrival_slot)] += 1
        assert r.deadline == (2.0 if r.service_class.value == "Live" else 4.0)
    assert max(per_slot.values(), default=1) == 1
    assert reqs == sorted(reqs, key=lambda e: (e.arrival_slot, e.client_id, e.segment))


def test_trace_step_rule():
    tr = BandwidthTrace.from_samples([(0, 1e6), (2, 3e6)])
    assert trace_bandwidth_at(tr, 1.5) == 1e6
    assert trace_bandwidth_at(tr, 2.0) == 3e6
    with pytest.raises(ValueError):
        trace_bandwidth_at(tr, -1)


def test_constant_trace_mean():
    tr = BandwidthTrace.from_samples([(t, 3.78e6) for t in range(10)])
    for t0, t1, off in ((0, 7, 0.0), (3, 50, 4.2), (100, 101, 9.9)):
        assert trace_mean(tr, t0, t1, off) == pytest.approx(3.78e6)


def test_cyclic_replay_and_offset():
    tr = BandwidthTrace.from_samples([(0, 1.0), (1, 2.0), (2, 3.0)])
    assert tr.period == 3.0
    assert cyclic_bandwidth(tr, 4.5) == 2.0
    assert cyclic_bandwidth(tr, 0.2, offset=2.0) == 3.0


def test_trace_validation():
    with pytest.raises(ValueError):
        BandwidthTrace((), ())
    with pytest.raises(ValueError):
        BandwidthTrace((0.0, 0.0), (1.0, 1.0))
    with pytest.raises(ValueError):
        BandwidthTrace((0.0,), (-1.0,))


def test_bundled_trace_matches_generator():
    tr = load_trace(DATA_DIR / "trace_4g.csv")
    gen = synthetic_4g_trace(2023)
    assert tr.times == gen.times
    assert np.allclose(tr.bps, gen.bps, rtol=0, atol=1e-6)
    assert np.mean(tr.bps) == pytest.approx(3.78e6, rel=1e-3)


def test_request_event_validation():
    with pytest.raises(ValueError):
        RequestEvent("u", "e", SegmentId("v", 0), 0, 0, 0.0)
    with pytest.raises(ValueError):
        RequestEvent("u", "e", SegmentId("v", 0), 0, -1, 1.0)
