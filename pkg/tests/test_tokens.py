import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from tracepriv.errors import FormatError, ParameterError, SlotRangeError
from tracepriv.tokens import (
    ContactLog, Token, TokenKind, TokenParams, generate_schedule, random_tokens,
    record_contact, token_at,
)


def test_per_slot_refresh_gives_distinct_tokens():
    sched = generate_schedule(0, 3, TokenParams(refresh_interval=1), seed=11)
    assert len(sched.entries) == 3
    assert len({t.value for _, t in sched.entries}) == 3
    assert [s for s, _ in sched.entries] == [0, 1, 2]


def test_same_seed_same_schedule():
    p = TokenParams()
    a = generate_schedule(4, 500, p, seed=99)
    b = generate_schedule(4, 500, p, seed=99)
    assert a == b
    assert a != generate_schedule(5, 500, p, seed=99)
    assert a != generate_schedule(4, 500, p, seed=98)


def test_entry_count_rounds_up():
    sched = generate_schedule(0, 10, TokenParams(refresh_interval=3), seed=1)
    assert len(sched) == math.ceil(10 / 3)


def test_window_arithmetic():
    sched = generate_schedule(0, 10, TokenParams(refresh_interval=2), seed=1)
    assert token_at(sched, 0) == token_at(sched, 1)
    assert token_at(sched, 2) != token_at(sched, 1)


def test_static_schedule():
    sched = generate_schedule(0, 50, TokenParams(refresh_interval=50), seed=1)
    assert len({token_at(sched, s) for s in range(50)}) == 1


def test_slot_at_horizon_is_out_of_range():
    sched = generate_schedule(0, 10, TokenParams(), seed=1)
    with pytest.raises(SlotRangeError):
        token_at(sched, 10)
    with pytest.raises(SlotRangeError):
        token_at(sched, -1)


@pytest.mark.parametrize("kwargs", [
    {"bit_length": 56}, {"bit_length": 100}, {"refresh_interval": 0},
    {"exposure_window": 0}, {"slot_duration": 7},
])
def test_bad_params(kwargs):
    with pytest.raises(ParameterError):
        TokenParams(**kwargs)


def test_bad_horizon():
    with pytest.raises(ParameterError):
        generate_schedule(0, 0, TokenParams(), seed=1)


@settings(max_examples=50, deadline=None)
@given(refresh=st.integers(1, 20), horizon=st.integers(1, 300), slot=st.integers(0, 299))
def test_window_start_property(refresh, horizon, slot):
    slot = slot % horizon
    sched = generate_schedule(1, horizon, TokenParams(refresh_interval=refresh), seed=5)
    assert token_at(sched, slot) == token_at(sched, slot - slot % refresh)


def test_hex_rendering():
    t = Token(bytes([0xAB, 0x01]) * 8)
    assert str(t) == "ab01" * 8


def test_record_contact_dedup():
    tok = Token(bytes(16))
    other = Token(bytes([1]) * 16)
    log = ContactLog(owner=0)
    one = record_contact(log, tok, 5)
    assert len(log) == 0 and len(one) == 1
    assert len(record_contact(one, tok, 5)) == 1
    assert len(record_contact(one, other, 5)) == 2


def test_record_contact_length_mismatch():
    with pytest.raises(FormatError):
        record_contact(ContactLog(owner=0), Token(bytes(8)), 0)


def test_record_contact_outside_horizon():
    with pytest.raises(SlotRangeError):
        record_contact(ContactLog(owner=0, horizon=10), Token(bytes(16)), 10)


def test_byte_means_within_five_sigma():
    p = TokenParams()
    toks = random_tokens(100_000, p, np.random.default_rng(3))
    arr = np.frombuffer(b"".join(toks), dtype=np.uint8).reshape(-1, p.nbytes)
    # uniform byte: variance (256^2 - 1) / 12
    sigma = math.sqrt((256**2 - 1) / 12 / arr.shape[0])
    assert np.all(np.abs(arr.mean(axis=0) - 127.5) < 5 * sigma)


def test_schedule_bytes_uniform():
    p = TokenParams(refresh_interval=1)
    arr = np.concatenate([
        np.frombuffer(b"".join(generate_schedule(u, 1000, p, seed=2).tokens), dtype=np.uint8)
        for u in range(100)
    ]).reshape(-1, p.nbytes)
    sigma = math.sqrt((256**2 - 1) / 12 / arr.shape[0])
    assert np.all(np.abs(arr.mean(axis=0) - 127.5) < 5 * sigma)


def birthday_expected_collisions(n, bits):
    # pairs times per-pair collision probability
    return math.comb(n, 2) / 2.0**bits


def test_birthday_bound_oracle():
    assert birthday_expected_collisions(10**6, 128) < (10**6) ** 2 / 2**129 * 1.0000001
    assert (10**6) ** 2 / 2**129 < 1e-24


def test_million_tokens_no_collisions():
    toks = random_tokens(10**6, TokenParams(), np.random.default_rng(2024))
    assert len(set(toks)) == 10**6


def test_kind_default_random():
    sched = generate_schedule(0, 3, TokenParams(), seed=1)
    assert token_at(sched, 0).kind is TokenKind.RANDOM
