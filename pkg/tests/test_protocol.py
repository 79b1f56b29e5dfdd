from fractions import Fraction

import numpy as np
import pytest
from hypothesis import given, strategies as st

from fedat.codec import compress, decompress
from fedat.model import ParamVector, ShapeMismatchError
from fedat.protocol import (ClientUpdate, ProtocolError, ServerState, TierRoundResult,
                            async_mix, data_weighted_average, fedat_on_tier_complete,
                            intra_tier_aggregate, tier_coefficients, weighted_average)
from fedat.tiering import TierTable


def const(value, n=4):
    return ParamVector.from_layers([np.full((2, n // 2), float(value))])


def state_with(counters, models, aggregation="weighted"):
    table = TierTable([(i,) for i in range(len(counters))], list(counters))
    s = ServerState(list(models), table, const(0.0), round_budget=100, aggregation=aggregation)
    s.t = sum(counters)
    return s


def test_single_tier_returns_tier_model():
    w = const(1.5)
    assert np.array_equal(weighted_average(state_with([7], [w])).values, w.values)


def test_two_tier_worked_example():
    assert tier_coefficients([3, 1]) == [Fraction(1, 4), Fraction(3, 4)]
    out = weighted_average(state_with([3, 1], [const(0.0), const(4.0)]))
    assert np.array_equal(out.values, np.full(4, 3.0))


def test_fresh_server_returns_initial_bitwise():
    init = ParamVector.from_layers([np.random.default_rng(0).normal(size=(3, 3))])
    s = ServerState.fresh(init, TierTable([(0,), (1,)]), 10)
    assert weighted_average(s) is init


def test_zero_total_after_start_is_an_error():
    s = state_with([0, 0], [const(0.0), const(1.0)])
    s.t = 3
    with pytest.raises(ProtocolError):
        weighted_average(s)


def test_uniform_mode():
    out = weighted_average(state_with([9, 1], [const(0.0), const(4.0)], "uniform"))
    assert np.allclose(out.values, 2.0)


@given(st.lists(st.integers(0, 1000), min_size=1, max_size=8).filter(lambda c: sum(c) > 0))
def test_coefficients_form_a_simplex(counters):
    coefs = tier_coefficients(counters)
    assert all(c >= 0 for c in coefs)
    assert sum(coefs) == 1
    assert abs(sum(float(c) for c in coefs) - 1.0) <= 1e-12


@given(st.integers(0, 1000), st.integers(0, 1000))
def test_two_tiers_slow_tier_emphasis(fast, slow):
    if fast > slow:
        coefs = tier_coefficients([fast, slow])
        assert coefs[0] < coefs[1]


@given(st.lists(st.integers(0, 1000), min_size=2, max_size=8).filter(lambda c: sum(c) > 0))
def test_ordered_counts_give_ordered_weights(counters):
    counters = sorted(counters, reverse=True)  # faster tiers update at least as often
    coefs = tier_coefficients(counters)
    assert coefs == sorted(coefs)


def test_slow_tier_emphasis_when_counts_are_ordered():
    # faster tiers update more often: strictly decreasing counts
    counters = [40, 20, 9, 5, 2]
    coefs = tier_coefficients(counters)
    assert coefs == sorted(coefs)
    assert coefs[-1] == Fraction(40, 76)


def update(cid, n, value, precision=None):
    return ClientUpdate(cid, n, compress(const(value), precision))


def test_intra_tier_weighted_by_data_size():
    result = TierRoundResult(0, (update(1, 1, 0.0), update(2, 3, 4.0)))
    assert np.array_equal(intra_tier_aggregate(result).values, np.full(4, 3.0))


def test_intra_tier_equal_sizes_is_mean():
    result = TierRoundResult(0, (update(5, 10, 1.0), update(2, 10, 2.0), update(9, 10, 6.0)))
    assert np.allclose(intra_tier_aggregate(result).values, 3.0)


def test_intra_tier_single_client():
    result = TierRoundResult(0, (update(3, 7, 0.1234, precision=4),))
    assert np.array_equal(intra_tier_aggregate(result).values, np.full(4, 0.1234))


def test_intra_tier_order_independent_of_arrival():
    a = TierRoundResult(0, (update(1, 3, 0.1), update(2, 5, 0.7), update(3, 2, 0.3)))
    b = TierRoundResult(0, (update(3, 2, 0.3), update(1, 3, 0.1), update(2, 5, 0.7)))
    assert intra_tier_aggregate(a).values.tobytes() == intra_tier_aggregate(b).values.tobytes()


def test_intra_tier_shape_mismatch_names_client():
    bad = ClientUpdate(8, 1, compress(ParamVector.from_layers([np.zeros(3)]), None))
    with pytest.raises(ShapeMismatchError, match="client 8"):
        intra_tier_aggregate(TierRoundResult(0, (update(1, 1, 0.0), bad)))


def test_empty_tier_round_rejected():
    with pytest.raises(ValueError):
        TierRoundResult(0, ())
    with pytest.raises(ValueError):
        data_weighted_average([])


def test_first_completion_by_slow_tier_broadcasts_fast_tier_model():
    init = const(0.123456)
    state = ServerState.fresh(init, TierTable([(0,), (1,)]), 10)
    result = TierRoundResult(1, (update(1, 5, 9.0),))
    state, bc = fedat_on_tier_complete(state, result, 4)
    assert state.tier_table.counters == [0, 1] and state.t == 1
    # coefficients (T_2/T, T_1/T) = (1, 0): the global is still tier 0's model, i.e. w0
    assert np.array_equal(decompress(bc).values, np.full(4, 0.1235))
    assert np.array_equal(state.per_tier_models[1].values, np.full(4, 9.0))


def test_update_from_foreign_client_rejected():
    state = ServerState.fresh(const(0.0), TierTable([(0,), (1,)]), 10)
    with pytest.raises(ProtocolError):
        fedat_on_tier_complete(state, TierRoundResult(0, (update(1, 1, 1.0),)), 4)


def test_budget_exhaustion_freezes_state():
    state = ServerState.fresh(const(0.0), TierTable([(0,)]), round_budget=1)
    state, bc = fedat_on_tier_complete(state, TierRoundResult(0, (update(0, 1, 1.0),)), None)
    assert bc is not None and state.t == 1
    before = (list(state.tier_table.counters), state.per_tier_models[0])
    state, bc = fedat_on_tier_complete(state, TierRoundResult(0, (update(0, 1, 5.0),)), None)
    assert bc is None
    assert (state.tier_table.counters, state.per_tier_models[0]) == before


def test_counters_and_rounds_track_events():
    state = ServerState.fresh(const(0.0), TierTable([(0,), (1,), (2,)]), 100)
    rng = np.random.default_rng(0)
    for i in range(30):
        m = int(rng.integers(3))
        state, _ = fedat_on_tier_complete(state, TierRoundResult(m, (update(m, 1, i),)), 4)
        assert state.t == state.tier_table.total == i + 1


def test_async_mix():
    w, wk = const(1.0), const(3.0)
    assert async_mix(w, wk, 1.0) is wk
    assert np.allclose(async_mix(w, wk, 0.5).values, 2.0)
    # polynomial staleness decay: a = 0.5 * (3 + 1) ** -0.5 = 0.25
    assert np.allclose(async_mix(w, wk, 0.5, staleness=3, staleness_exponent=0.5).values, 1.5)
