import pytest
from hypothesis import given, settings, strategies as st

from navsim.costs import (Infeasible, MissingProfile, NodeClass, PriceBook, TranscodeProfile, load_transcode_profile,
                          monetary_cost, transcode_lookup, transmission_time)
from navsim.scenario import DATA_DIR

PROFILE = load_transcode_profile(DATA_DIR / "transcode_profile.csv")
PRICES = PriceBook.from_billing_units()


def test_transmission_examples():
    assert transmission_time(8_000_000, 8e6) == 1.0
    assert transmission_time(4.2e6 * 2, 50e6) == pytest.approx(0.168, abs=1e-12)
    assert transmission_time(0, 0) == 0.0
    with pytest.raises(Infeasible):
        transmission_time(1, 0)


def test_transcode_golden_rows():
    rec = transcode_lookup(PROFILE, 4_219_000, 791_000, NodeClass.PEER_PC)
    assert rec.time_s == 11.74
    assert rec.time_per_segment == pytest.approx(11.74 / 90, abs=1e-12)
    assert round(rec.time_per_segment, 4) == 0.1304
    assert transcode_lookup(PROFILE, 2_484_000, 89_000, NodeClass.PEER_MOBILE).time_s == 16.55


def test_transcode_clamps_outside_rows():
    # 2484k has rows at 89k..791k; just below the input lies above every row
    top = transcode_lookup(PROFILE, 2_484_000, 791_000, NodeClass.PEER_PC)
    got = transcode_lookup(PROFILE, 2_484_000, 2_483_999, NodeClass.PEER_PC)
    assert got.time_s == top.time_s
    bottom = transcode_lookup(PROFILE, 2_484_000, 89_000, NodeClass.PEER_PC)
    assert transcode_lookup(PROFILE, 2_484_000, 50_000, NodeClass.PEER_PC).time_s == bottom.time_s


def test_transcode_errors():
    with pytest.raises(ValueError):
        transcode_lookup(PROFILE, 791_000, 791_000, NodeClass.PEER_PC)
    with pytest.raises(MissingProfile):
        transcode_lookup(PROFILE, 1_000_000, 89_000, NodeClass.PEER_PC)
    with pytest.raises(ValueError):
        TranscodeProfile({(100, 200, NodeClass.PEER_PC): (1.0, 1.0, 0.0, None)})


def test_price_examples():
    bw, cpu, total = monetary_cost(8.4e6, 0, PRICES)
    assert bw == pytest.approx(1.26e-4, rel=1e-12)
    _, cpu, _ = monetary_cost(0, 11.74, PRICES)
    assert cpu == pytest.approx(11.74 / 3600 * 0.029, rel=1e-12)
    assert round(cpu, 7) == 9.46e-5   # three significant figures
    _, cpu, _ = monetary_cost(0, 0.1304, PRICES)
    assert cpu == pytest.approx(1.05e-6, rel=5e-3)
    assert monetary_cost(0, 0, PRICES) == (0.0, 0.0, 0.0)


def test_cost_model_snaps_ladder_rungs(costs):
    # ladder quotes 4.2M and 2.4M, the table 4219k and 2484k
    assert costs.tr(4, 2, NodeClass.PEER_PC).time == pytest.approx(11.74 / 90)
    assert costs.tr(4, 2, NodeClass.EDGE).cpu == pytest.approx(11.74 / 90)
    assert costs.tr(3, 0, NodeClass.PEER_MOBILE).time == pytest.approx(16.55 / 90)
    assert costs.tr(4, 2, NodeClass.PEER_PC).power == pytest.approx(11.74 * 2.1 / 90)
    assert costs.tr(4, 2, NodeClass.EDGE).power == 0.0


def test_sr_rows(costs):
    assert costs.has_sr(1, 2, NodeClass.PEER_PC)
    assert not costs.has_sr(2, 3, NodeClass.PEER_PC)
    assert costs.sr_cost(0, 1, NodeClass.PEER_MOBILE).time == 0.8
    with pytest.raises(MissingProfile):
        costs.sr_cost(3, 4, NodeClass.PEER_PC)


# --- properties --------------------------------------------------------------------------------

pos = st.floats(1.0, 1e10, allow_nan=False)


@given(pos, pos, st.floats(0.1, 10))
def test_transmission_linear(size, bw, k):
    assert transmission_time(k * size, bw) == pytest.approx(k * transmission_time(size, bw), rel=1e-12)
    assert transmission_time(size, k * bw) == pytest.approx(transmission_time(size, bw) / k, rel=1e-12)


@given(st.floats(0, 1e12), st.floats(0, 1e12), st.floats(0, 1e5), st.floats(0, 1e5))
def test_monetary_additive(b1, b2, c1, c2):
    a = monetary_cost(b1, c1, PRICES)
    b = monetary_cost(b2, c2, PRICES)
    both = monetary_cost(b1 + b2, c1 + c2, PRICES)
    for x, y, z in zip(a, b, both):
        assert z == pytest.approx(x + y, rel=1e-12, abs=1e-300)


@settings(max_examples=300)
@given(st.sampled_from(sorted({(i, c) for (i, _, c) in PROFILE.rows})), st.integers(1, 5_000_000))
def test_interpolation_between_brackets(key, out):
    inp, cls = key
    if out >= inp:
        return
    outs = PROFILE.outputs(inp, cls)
    rec = transcode_lookup(PROFILE, inp, out, cls)
    lo = max([o for o in outs if o <= out], default=outs[0])
    hi = min([o for o in outs if o >= out], default=outs[-1])
    a, b = PROFILE.rows[(inp, lo, cls)][0], PROFILE.rows[(inp, hi, cls)][0]
    assert min(a, b) - 1e-12 <= rec.time_s <= max(a, b) + 1e-12
    if out in outs:
        assert rec.time_s == PROFILE.rows[(inp, out, cls)][0]
