import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from secagglab.errors import AbortRound, DomainError, ExhaustionError
from secagglab.pairing import (
    ALL_HISTORY,
    PairingContext,
    derive_distance,
    mask_sign,
    max_distance,
    pair_indices,
    repair_after_dropout,
    repair_distance,
    round_distance,
)

SEED = b"k" * 32


def test_distance_is_deterministic_and_in_range():
    ctx = PairingContext(100, 7, SEED)
    d = derive_distance(ctx)
    assert d == derive_distance(PairingContext(100, 7, SEED))
    assert 1 <= d <= 49


def test_distance_depends_on_seed():
    draws = {derive_distance(PairingContext(100, 3, bytes([i]) * 32)) for i in range(30)}
    assert len(draws) > 10


def test_consecutive_rounds_never_repeat():
    history = ()
    for n in range(1, 101):
        d, _ = round_distance(PairingContext(10, n, SEED, history))
        if history:
            assert d != history[-1]
        history += (d,)


def test_all_history_mode_cycles_then_resets():
    history, drawn = (), []
    for n in range(1, 5):
        d, ctx = round_distance(PairingContext(8, n, SEED, history, mode=ALL_HISTORY))
        history = ctx.distance_history + (d,)
        drawn.append(d)
    # |C|=8 admits distances 1..3, so round 4 must have reset
    assert sorted(drawn[:3]) == [1, 2, 3]
    assert history == (drawn[3],)


def test_minimum_participants():
    with pytest.raises(DomainError):
        PairingContext(5, 1, SEED)


def test_pairs_are_mutual():
    n, d = 11, 4
    for i in range(n):
        a = pair_indices(i, d, n)
        assert pair_indices(a.first_pair, d, n).second_pair == i
        assert pair_indices(a.second_pair, d, n).first_pair == i


def test_pair_indices_domain():
    with pytest.raises(DomainError):
        pair_indices(0, 5, 10)
    with pytest.raises(DomainError):
        pair_indices(10, 1, 10)


def test_mask_sign_is_antisymmetric():
    assert mask_sign(2, 5) == 1 and mask_sign(5, 2) == -1
    with pytest.raises(DomainError):
        mask_sign(3, 3)


def test_repair_excludes_used_and_previous():
    ctx = PairingContext(20, 4, SEED, (3,))
    d0, ctx = round_distance(ctx)
    ctx = repair_after_dropout(ctx, list(range(19)))
    d1, ctx = repair_distance(ctx)
    assert d1 not in (3, d0)
    assert ctx.retry_counter == 1


def test_repair_abort_rules():
    ctx = PairingContext(8, 1, SEED, max_retries=1)
    _, ctx = round_distance(ctx)
    with pytest.raises(AbortRound):
        repair_after_dropout(ctx, range(5))
    ctx = repair_after_dropout(ctx, range(7))
    with pytest.raises(AbortRound):
        repair_after_dropout(ctx, range(7))


def test_exhaustion_is_typed():
    ctx = PairingContext(6, 1, SEED, used_this_round=(1, 2))
    with pytest.raises(ExhaustionError):
        derive_distance(ctx)


@settings(max_examples=200, deadline=None)
@given(st.integers(6, 40), st.integers(1, 1000), st.lists(st.integers(1, 3), min_size=1, max_size=3), st.data())
def test_repair_never_exhausts_down_to_six(n, rnd, losses, data):
    prev = data.draw(st.integers(1, max_distance(n)))
    d, ctx = round_distance(PairingContext(n, rnd, SEED, (prev,), max_retries=len(losses)))
    survivors = n
    for lost in losses:
        survivors = max(6, survivors - lost)
        ctx = repair_after_dropout(ctx, range(survivors))
        d_new, ctx = repair_distance(ctx)
        assert 1 <= d_new <= max_distance(survivors)
        assert d_new != d  # the ring changed, but never reuse the last attempt's distance
        d = d_new
