import os

import pytest
from hypothesis import given, settings, strategies as st

from tracepriv import cryptobox as cb
from tracepriv.common import ReportKind
from tracepriv.errors import AuthenticationError, FormatError, SchemeError, SizeError
from tracepriv.tokens import TokenKind

SCHEMES = [cb.Scheme.TOY_DETERMINISTIC, cb.Scheme.REAL]


def test_toy_keygen_reproducible():
    assert cb.keygen(7) == cb.keygen(7)
    assert cb.keygen(7).public_key != cb.keygen(8).public_key


@pytest.mark.parametrize("scheme", SCHEMES)
def test_fresh_keys_differ(scheme):
    assert cb.keygen(None, scheme).public_key != cb.keygen(None, scheme).public_key


def test_unknown_scheme():
    with pytest.raises(SchemeError):
        cb.keygen(1, "ROT13")


@pytest.mark.parametrize("scheme", SCHEMES)
def test_roundtrip_32_bytes(scheme):
    kp = cb.keygen(1, scheme)
    msg = bytes(range(32))
    assert cb.open(kp.secret_key, cb.seal(kp.public_key, msg, scheme)) == msg


@pytest.mark.parametrize("scheme", SCHEMES)
def test_wrong_key_fails(scheme):
    a, b = cb.keygen(1, scheme), cb.keygen(2, scheme)
    ct = cb.seal(a.public_key, b"hello", scheme)
    with pytest.raises(AuthenticationError):
        cb.open(b.secret_key, ct)


@pytest.mark.parametrize("scheme", SCHEMES)
def test_empty_plaintext(scheme):
    kp = cb.keygen(3, scheme)
    assert cb.open(kp.secret_key, cb.seal(kp.public_key, b"", scheme)) == b""


@pytest.mark.parametrize("scheme", SCHEMES)
def test_tamper_detected(scheme):
    kp = cb.keygen(3, scheme)
    ct = cb.seal(kp.public_key, b"status", scheme)
    flipped = bytearray(ct.data)
    flipped[-1] ^= 1
    with pytest.raises(AuthenticationError):
        cb.open(kp.secret_key, cb.Ciphertext(bytes(flipped), ct.scheme_id))


def test_oversize_plaintext():
    kp = cb.keygen(1)
    cb.seal(kp.public_key, bytes(cb.MAX_PLAINTEXT))
    with pytest.raises(SizeError):
        cb.seal(kp.public_key, bytes(cb.MAX_PLAINTEXT + 1))


def test_real_is_randomised_toy_is_not():
    r = cb.keygen(1, cb.Scheme.REAL)
    assert cb.seal(r.public_key, b"x", "REAL").data != cb.seal(r.public_key, b"x", "REAL").data
    t = cb.keygen(1)
    assert cb.seal(t.public_key, b"x").data == cb.seal(t.public_key, b"x").data


@pytest.mark.parametrize("scheme", SCHEMES)
def test_thousand_random_messages(scheme):
    kp = cb.keygen(11, scheme)
    rng = __import__("random").Random(5)
    for _ in range(1000):
        msg = os.urandom(rng.randrange(cb.MAX_PLAINTEXT + 1))
        assert cb.open(kp.secret_key, cb.seal(kp.public_key, msg, scheme)) == msg


def test_status_sizes_constant():
    a = cb.serialize_status(cb.StatusMessage(cb.Status.INFECTED, 10, 3))
    b = cb.serialize_status(cb.StatusMessage(cb.Status.NOT_INFECTED, 10, 3))
    c = cb.serialize_status(cb.StatusMessage(cb.Status.INFECTED, 10, 3, ReportKind.SELF_REPORTED))
    assert len(a) == len(b) == len(c) == 32


def test_status_wire_layout():
    raw = cb.serialize_status(cb.StatusMessage(cb.Status.INFECTED, 0x0102, 7))
    assert raw[0] == 1
    assert raw[1:9] == (0x0102).to_bytes(8, "big")
    assert raw[9:17] == (7).to_bytes(8, "big")
    assert raw[17:] == bytes(15)


@given(status=st.sampled_from(list(cb.Status)), slot=st.integers(0, 2**63),
       seq=st.integers(0, 2**63), kind=st.sampled_from(list(ReportKind)))
def test_status_roundtrip(status, slot, seq, kind):
    msg = cb.StatusMessage(status, slot, seq, kind)
    back = cb.deserialize_status(cb.serialize_status(msg))
    assert (back.status, back.contact_slot, back.sequence_no) == (status, slot, seq)
    if status is cb.Status.INFECTED:
        assert back.report_kind is kind


def test_malformed_status():
    with pytest.raises(FormatError):
        cb.deserialize_status(bytes(31))
    with pytest.raises(FormatError):
        cb.deserialize_status(bytes([5]) + bytes(31))


def test_key_token():
    kp = cb.keygen(1)
    tok = cb.key_token(kp.public_key)
    assert tok.kind is TokenKind.PUBLIC_KEY and len(tok.value) == 16
    assert tok == cb.key_token(kp.public_key)


def _route(n, scheme, base=100):
    return [cb.keygen(base + i, scheme) for i in range(n)]


def _peel_all(keys, dest, onion):
    for kp in keys:
        res = cb.onion_peel(kp.secret_key, onion)
        assert isinstance(res, cb.Relay)
        onion = res.inner
    res = cb.onion_peel(dest.secret_key, onion)
    assert isinstance(res, cb.Final)
    return res.message


def test_empty_route_is_plain_seal():
    dest = cb.keygen(9)
    msg = cb.StatusMessage(cb.Status.INFECTED, 5)
    onion = cb.onion_wrap([], dest.public_key, msg)
    assert onion.layers == 1
    assert cb.onion_peel(dest.secret_key, onion).message == msg


def test_frank_fred_route():
    frank, fred = _route(2, cb.Scheme.TOY_DETERMINISTIC)
    mailbox = cb.keygen(42)
    msg = cb.StatusMessage(cb.Status.INFECTED, 123, 4)
    onion = cb.onion_wrap([frank.public_key, fred.public_key], mailbox.public_key, msg)
    assert onion.layers == 3
    hop1 = cb.onion_peel(frank.secret_key, onion)
    assert hop1.next_hop == cb.key_fingerprint(fred.public_key)
    hop2 = cb.onion_peel(fred.secret_key, hop1.inner)
    assert hop2.next_hop == cb.key_fingerprint(mailbox.public_key)
    assert cb.onion_peel(mailbox.secret_key, hop2.inner).message == msg


@settings(max_examples=40, deadline=None)
@given(n=st.integers(0, 4), scheme=st.sampled_from(SCHEMES),
       slot=st.integers(0, 10**6), infected=st.booleans())
def test_onion_roundtrip(n, scheme, slot, infected):
    keys = _route(n, scheme)
    dest = cb.keygen(7, scheme)
    msg = cb.StatusMessage(cb.Status.INFECTED if infected else cb.Status.NOT_INFECTED, slot, n)
    onion = cb.onion_wrap([k.public_key for k in keys], dest.public_key, msg, scheme_id=scheme)
    assert onion.layers == n + 1
    assert _peel_all(keys, dest, onion) == msg


@settings(max_examples=30, deadline=None)
@given(n=st.integers(1, 4), scheme=st.sampled_from(SCHEMES), data=st.data())
def test_wrong_key_peel_errors(n, scheme, data):
    keys = _route(n, scheme)
    dest = cb.keygen(7, scheme)
    onion = cb.onion_wrap([k.public_key for k in keys], dest.public_key,
                          cb.StatusMessage(cb.Status.INFECTED, 1), scheme_id=scheme)
    depth = data.draw(st.integers(0, n - 1))
    for kp in keys[:depth]:
        onion = cb.onion_peel(kp.secret_key, onion).inner
    wrong = cb.keygen(999, scheme)
    with pytest.raises(AuthenticationError):
        cb.onion_peel(wrong.secret_key, onion)


def test_wrong_order_fails_at_first_hop():
    frank, fred = _route(2, cb.Scheme.TOY_DETERMINISTIC)
    dest = cb.keygen(7)
    onion = cb.onion_wrap([frank.public_key, fred.public_key], dest.public_key,
                          cb.StatusMessage(cb.Status.INFECTED, 1))
    with pytest.raises(AuthenticationError):
        cb.onion_peel(fred.secret_key, onion)


def test_peel_final_again():
    dest = cb.keygen(7)
    final = cb.onion_peel(dest.secret_key, cb.onion_wrap([], dest.public_key, b"raw"))
    assert final.message == b"raw"
    with pytest.raises(FormatError):
        cb.onion_peel(dest.secret_key, final)


def test_layers_are_opaque():
    keys = _route(3, cb.Scheme.TOY_DETERMINISTIC)
    dest = cb.keygen(7)
    msg = cb.StatusMessage(cb.Status.INFECTED, 0xDEADBEEF, 77)
    plain = cb.serialize_status(msg)
    dest_addr = cb.key_fingerprint(dest.public_key)
    onion = cb.onion_wrap([k.public_key for k in keys], dest.public_key, msg)
    for i, kp in enumerate(keys):
        seen = cb.open(kp.secret_key, onion.outer)
        assert plain not in seen
        if i < len(keys) - 1:
            # only the last relay learns the mailbox address
            assert dest_addr not in seen
        onion = cb.onion_peel(kp.secret_key, onion).inner


def test_real_route_four_fits():
    keys = _route(4, cb.Scheme.REAL)
    dest = cb.keygen(7, cb.Scheme.REAL)
    msg = cb.StatusMessage(cb.Status.NOT_INFECTED, 1)
    onion = cb.onion_wrap([k.public_key for k in keys], dest.public_key, msg, scheme_id="REAL")
    assert _peel_all(keys, dest, onion) == msg


# --- batches agree with the one-at-a-time primitives ------------------------

TOY = cb.Scheme.TOY_DETERMINISTIC
statuses = st.builds(cb.StatusMessage, st.sampled_from(list(cb.Status)), st.integers(0, 2**40), st.integers(0, 99))


@settings(max_examples=40, deadline=None)
@given(st.lists(st.tuples(st.integers(0, 3), st.binary(min_size=24, max_size=24)), min_size=1, max_size=12))
def test_seal_batch_matches_seal(rows):
    keys = [cb.keygen(i) for i in range(4)]
    pks = [keys[k].public_key for k, _ in rows]
    data = cb.seal_batch(pks, [p for _, p in rows])
    table = cb.KeyTable([k.public_key for k in keys], 64)
    assert (cb.seal_batch(table.rows(pks), [p for _, p in rows]) == data).all()
    for (k, p), row in zip(rows, data):
        assert row.tobytes() == cb.seal(keys[k].public_key, p).data
    plain, ok = cb.open_batch([keys[k].secret_key for k, _ in rows], data)
    assert ok.all() and [r.tobytes() for r in plain] == [p for _, p in rows]


def test_open_batch_flags_wrong_rows():
    a, b = cb.keygen(1), cb.keygen(2)
    data = cb.seal_batch(a.public_key, [b"x" * 8] * 3)
    _, ok = cb.open_batch([a.secret_key, b.secret_key, a.secret_key], data)
    assert ok.tolist() == [True, False, True]


@settings(max_examples=30, deadline=None)
@given(st.integers(0, 3), st.lists(statuses, min_size=1, max_size=6))
def test_onion_batch_matches_single(hops, msgs):
    route = [cb.keygen(10 + i) for i in range(hops)]
    dest = cb.keygen(99)
    batch = cb.onion_wrap_batch([k.public_key for k in route], dest.public_key, msgs)
    for i, m in enumerate(msgs):
        assert batch.row(i) == cb.onion_wrap([k.public_key for k in route], dest.public_key, m)
    for k in route:
        _, batch = cb.onion_peel_batch(k.secret_key, batch)
    assert cb.onion_peel_batch(dest.secret_key, batch)[1] == msgs


def test_status_rows_match_serialize():
    msgs = [cb.StatusMessage(cb.Status.INFECTED, 7, 2, ReportKind.SELF_REPORTED),
            cb.StatusMessage(cb.Status.NOT_INFECTED, 9, 0)]
    rows = cb.encode_status_rows([1, 0], [7, 9], [2, 0], [True, True])
    assert [r.tobytes() for r in rows] == [cb.encode_payload(m) for m in msgs]
    rec, ok = cb.decode_status_rows(rows)
    assert ok.all() and rec["slot"].tolist() == [7, 9]


def test_peel_raw_batch():
    mail = cb.keygen(5)
    payloads = [bytes([i]) * 24 for i in range(4)]
    batch = cb.onion_wrap_batch([], mail.public_key, payloads)
    assert [r.tobytes() for r in cb.peel_raw_batch(mail.secret_key, batch)] == payloads
    with pytest.raises(AuthenticationError):
        cb.peel_raw_batch(cb.keygen(6).secret_key, batch)
    status = cb.onion_wrap_batch([], mail.public_key, [cb.StatusMessage(cb.Status.INFECTED, 1, 1)])
    with pytest.raises(FormatError):
        cb.peel_raw_batch(mail.secret_key, status)
    with pytest.raises(FormatError):
        cb.peel_raw_batch(mail.secret_key, cb.onion_wrap_batch([cb.keygen(7).public_key], mail.public_key, payloads))
