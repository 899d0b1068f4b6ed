import math

import pytest
from hypothesis import given, settings, strategies as st

from helpers import make_ctx, req
from navsim.learning import (Neuron, SomAgent, SomConfig, SomTuple, bmu, neighborhood, penalize, som_decide,
                             som_update)

unit = st.floats(0, 1)


def test_bmu_examples():
    a = Neuron("A", 1, (0.2, 0.0))
    b = Neuron("B", 1, (0.1, 0.5))
    # |A| = sqrt(0.02) < |B| = sqrt(0.13)
    assert bmu([b, a]) == 1
    tie = [Neuron("z", 1, (0.3, 0.0)), Neuron("a", 1, (0.0, 0.3))]
    assert bmu(tie) == 1
    with pytest.raises(ValueError):
        bmu([])


def test_neighborhood_values():
    assert neighborhood(0.0, 0.01) == 1.0
    assert neighborhood(0.01, 0.01) == pytest.approx(math.exp(-0.5))
    assert round(neighborhood(0.01, 0.01), 4) == 0.6065
    assert neighborhood(0.06, 0.01) <= 1e-6
    with pytest.raises(ValueError):
        neighborhood(1.0, 0.0)


def test_som_update_examples():
    cfg = SomConfig()
    ns = [Neuron("a", 1, (0.5, 0.0)), Neuron("b", 1, (0.9, 0.9))]
    out = som_update(ns, 0, (0.3, 0.0), cfg)
    assert out[0].features[0] == pytest.approx(0.498)
    # far from the BMU: the kernel underflows to nothing
    assert out[1].features == pytest.approx((0.9, 0.9), abs=1e-12)
    # observing the neuron's own position is a fixed point
    assert som_update(ns, 0, (0.5, 0.0), cfg)[0].features == (0.5, 0.0)


def test_penalize_examples():
    n = penalize(Neuron("a", 1, (0.4, 0.0)))
    assert n.penalty_count == 1 and n.features == (0.4, pytest.approx(1 / 11))
    assert round(n.features[1], 4) == 0.0909


def test_config_validation():
    with pytest.raises(ValueError):
        SomConfig(sigma=0)
    with pytest.raises(ValueError):
        Neuron("a", 1, (1.5, 0.0))


def test_som_decide_counts_servable_copies():
    # rung 2 is 0.791 Mbps; a 2.5x link fits two copies
    ctx = make_ctx(["o", "e1", "s1", "s2"], holds={"s2": {2}}, bw={("s2", "s1"): 2.5 * 0.791, ("o", "e1"): 100})
    rs = [req(2, client="s1")] * 3
    got = som_decide(rs, [Neuron("s2", 1, (0.1, 0.0))], ctx)
    t = got[0]
    assert (t.node, t.action_variant, t.servable, t.violates) == ("s2", 1, 2, 0)


def test_som_decide_flags_impossible_pair():
    ctx = make_ctx(["o", "e1"], holds={"e1": {3}}, bw={("o", "e1"): 100}, cpu={"e1": 0.0})
    got = som_decide([req(1)], [Neuron("e1", 4, (0.2, 0.0)), Neuron("o", 5, (0.1, 0.0))], ctx)
    assert got == [SomTuple("o", 5, 1, 0, got[0].action), SomTuple("e1", 4, 0, 1)]
    assert som_decide([], [Neuron("o", 5, (0.1, 0.0))], ctx) == []


def test_agent_learns_and_prefers():
    agent = SomAgent()
    agent.sync({("c1", 3): 0.4, ("s2", 1): 0.2})
    assert agent.best({("c1", 3), ("s2", 1)}) == ("s2", 1)
    for _ in range(6):
        agent.penalize(("s2", 1))
    # penalty 6/16 lifts s2 above c1
    assert agent.best({("c1", 3), ("s2", 1)}) == ("c1", 3)
    assert agent.best(set()) is None


# --- properties --------------------------------------------------------------------------------

@settings(max_examples=200)
@given(unit, unit, unit, unit, st.floats(1e-3, 1.0))
def test_update_contracts_toward_observation(x, y, ox, oy, sigma):
    cfg = SomConfig(sigma=sigma)
    n = Neuron("a", 1, (x, y))
    new = som_update([n], 0, (ox, oy), cfg)[0].features
    before = math.hypot(x - ox, y - oy)
    after = math.hypot(new[0] - ox, new[1] - oy)
    assert after <= before + 1e-12
    assert all(0 <= f <= 1 for f in new)


@given(st.integers(0, 200), st.floats(0.1, 100))
def test_penalty_monotone_bounded(k, scale):
    n = Neuron("a", 1, (0.0, 0.0))
    prev = 0.0
    for _ in range(min(k, 30)):
        n = penalize(n, scale)
        assert prev < n.features[1] < 1.0
        prev = n.features[1]


@settings(max_examples=200)
@given(st.lists(st.tuples(unit, unit), min_size=1, max_size=8))
def test_bmu_is_closest_to_ideal(feats):
    ns = [Neuron(f"n{i}", 1, f) for i, f in enumerate(feats)]
    i = bmu(ns)
    norms = [0.5 * a * a + 0.5 * b * b for a, b in feats]
    assert norms[i] <= min(norms) + 1e-15
