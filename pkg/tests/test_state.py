import pytest
from hypothesis import given, strategies as st

from bpsa.errors import ExtinctStateError, LawContractError, UndefinedProportionError
from bpsa.state import (Dying, OffspringSample, PopulationState, apply_event,
                        exact_proportions, is_extinct)


@pytest.mark.parametrize("state, dying, sample, expected", [
    ((2, 1, 3, 2), Dying.X, (2, 1), (3, 2, 5, 3)),
    ((1, 1, 1, 1), Dying.Y, (0, 0), (1, 0, 1, 1)),
    ((3, 2, 3, 2), Dying.X, (3, -2), (5, 0, 6, 0)),
    ((1, 4, 2, 6), Dying.Y, (2, 1), (2, 5, 3, 8)),
])
def test_apply_event_examples(state, dying, sample, expected):
    out = apply_event(PopulationState(*state), dying, OffspringSample(*sample))
    assert out == PopulationState(*expected)


def test_apply_event_rejects_negative_counts():
    with pytest.raises(LawContractError):
        apply_event(PopulationState(1, 1, 1, 1), Dying.X, OffspringSample(0, -2))


def test_apply_event_rejects_missing_dying_type():
    with pytest.raises(ExtinctStateError):
        apply_event(PopulationState(0, 2, 1, 2), Dying.X, OffspringSample(1, 0))
    with pytest.raises(ExtinctStateError):
        apply_event(PopulationState(0, 0, 1, 2), Dying.Y, OffspringSample(1, 0))


def test_apply_event_overflow_guard():
    big = 2**63 - 1
    with pytest.raises(OverflowError):
        apply_event(PopulationState(1, 0, big, 0), Dying.X, OffspringSample(1, 0))


@pytest.mark.parametrize("state, expected", [
    ((0, 0, 5, 3), True), ((1, 0, 1, 0), False), ((0, 2, 4, 7), False)])
def test_is_extinct(state, expected):
    assert is_extinct(PopulationState(*state)) is expected


def test_exact_proportions_examples():
    p = exact_proportions(PopulationState(3, 1, 5, 2), 4)
    assert p == (1.0, 0.75, 1.75, 1.25)
    assert p.beta_c == 0.75
    p = exact_proportions(PopulationState(2, 2, 2, 2), 1)
    assert p == (4, 2, 4, 2) and p.beta_c == 0.5
    p = exact_proportions(PopulationState(0, 0, 4, 4), 8)
    assert p == (0, 0, 1.0, 0.5)
    with pytest.raises(UndefinedProportionError):
        p.beta_c
    assert p.beta_a == 0.5
    with pytest.raises(ValueError):
        exact_proportions(PopulationState(1, 1, 1, 1), 0)


def test_initial_state():
    s = PopulationState.initial(3, 4)
    assert s == (3, 4, 3, 4) and s.s_c == 7 and s.s_a == 7


events = st.lists(st.tuples(st.booleans(), st.integers(0, 4), st.integers(0, 3)),
                  min_size=1, max_size=60)


@given(st.integers(1, 5), st.integers(1, 5), events)
def test_death_count_identity_and_sums(cx0, cy0, evs):
    state = PopulationState.initial(cx0, cy0)
    deaths = {Dying.X: 0, Dying.Y: 0}
    for x_first, own, cross in evs:
        if is_extinct(state):
            break
        dying = Dying.X if (x_first and state.cx) or not state.cy else Dying.Y
        nxt = apply_event(state, dying, OffspringSample(own, cross))
        assert nxt == apply_event(state, dying, OffspringSample(own, cross))
        assert nxt.s_c - state.s_c == own + cross - 1
        assert nxt.s_a - state.s_a == own + cross
        deaths[dying] += 1
        state = nxt
        assert state.ax - state.cx == deaths[Dying.X]
        assert state.ay - state.cy == deaths[Dying.Y]
        assert state.s_c < state.s_a
