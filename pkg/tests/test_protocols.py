import math
from collections import Counter

import pytest
from hypothesis import given, settings, strategies as st

from tracepriv.common import ReportKind
from tracepriv.cryptobox import Status, onion_peel_batch
from tracepriv.errors import AuthenticationError, ProtocolError
from tracepriv.harness.runner import check_invariants
from tracepriv.protocols import (
    AUTHORITY, Variant, VariantConfig, batch_index, malicious_single_token_query, partition, pms_fetch_mailboxes,
    pms_send_status, poll_exposure, publish_database, run_variant,
)
from tracepriv.simworld import Mobility, ScenarioConfig, build_world, canonical_scenario

SPD = 288
ALL = [Variant.CENTRAL, Variant.POLLING, Variant.POLLING_NOISE, Variant.POLLING_MIX, Variant.PUBDB, Variant.PMS]


def vcfg(v, **kw):
    if v is Variant.POLLING_NOISE:
        kw.setdefault("noise_count", 10)
    return VariantConfig(v, **kw)


@pytest.fixture(scope="module")
def canonical():
    return build_world(canonical_scenario())


@pytest.mark.parametrize("variant", ALL, ids=lambda v: v.value)
def test_canonical_alice_only(canonical, variant):
    run = run_variant(canonical, vcfg(variant))
    assert run.exposed_set() == {0}
    r = poll_exposure(run, 0)
    assert r.exposed and r.confirmed and not r.self_reported
    assert not poll_exposure(run, 1).exposed
    check_invariants(run)


@pytest.mark.parametrize("variant", ALL, ids=lambda v: v.value)
def test_no_diagnosis_nobody_exposed(variant):
    cfg = ScenarioConfig(population=3, horizon_days=20, mobility=Mobility.PAIRWISE_SCRIPTED, initial_infected=0,
                         meetings=((0, 1, 3 * SPD, 1.0), (1, 2, 4 * SPD, 1.0)))
    run = run_variant(build_world(cfg), vcfg(variant))
    assert run.exposed_set() == set()


@pytest.mark.parametrize("variant", ALL, ids=lambda v: v.value)
def test_self_reports_kept_apart(variant):
    t = 3 * SPD
    cfg = ScenarioConfig(population=2, horizon_days=20, mobility=Mobility.PAIRWISE_SCRIPTED, initial_infected=0,
                         meetings=((0, 1, t, 1.0),), infections=((1, t, t + SPD, ReportKind.SELF_REPORTED),))
    run = run_variant(build_world(cfg), vcfg(variant))
    r = poll_exposure(run, 0)
    assert r.exposed and r.self_reported and not r.confirmed


def test_status_before_first_answer(canonical):
    run = run_variant(canonical, Variant.POLLING)
    first = run.clients[0].first_exposed
    assert not poll_exposure(run, 0, slot=first - 1).exposed
    assert poll_exposure(run, 0, slot=first).exposed


def test_central_registry(canonical):
    run = run_variant(canonical, Variant.CENTRAL)
    reg = run.authority.registry
    for uid in (0, 1):
        phone = canonical.users[uid].phone_number
        assert all(reg[t] == phone for t in canonical.schedules[uid].tokens)
    assert len(run.authority.view.inbound("REGISTER")) == 2


@settings(max_examples=50, deadline=None)
@given(st.lists(st.binary(min_size=16, max_size=16), max_size=60), st.integers(1, 6))
def test_partition_shares(tokens, m):
    shares = partition(tokens, m)
    assert len(shares) == m
    assert sorted(t for s in shares for t in s) == sorted(tokens)
    assert max(len(s) for s in shares) <= math.ceil(len(tokens) / m) if tokens else True


def test_partition_nine_by_three():
    assert [len(s) for s in partition(list(range(9)), 3)] == [3, 3, 3]


def test_mix_servers_see_bounded_shares():
    w = build_world(ScenarioConfig(population=60, horizon_days=10, seed=2, initial_infected=4))
    run = run_variant(w, Variant.POLLING_MIX)
    assert run.exposed_set() == w.oracle()
    for mix in run.mixes:
        for msg in mix.view.inbound("REPORT_SHARE"):
            assert msg.src in run.truth.user_of
    check_invariants(run)
    # the authority never hears from a device
    assert all(m.src.startswith("mix-") for m in run.authority.view.inbound())


@settings(max_examples=50, deadline=None)
@given(st.sets(st.binary(min_size=16, max_size=16), max_size=300), st.sampled_from([1, 7, 50]))
def test_public_database_batches(tokens, size):
    db = publish_database(tokens, size)
    assert len(db) == len(tokens)
    assert all(db.contains(t) for t in tokens)
    if tokens:
        assert len(db.batches) == 1 << math.ceil(math.log2(math.ceil(len(tokens) / size)))
        for i, b in enumerate(db.batches):
            assert all(batch_index(t, db.prefix_bits) == i for t in b)


def test_pubdb_downloads_name_batches_not_tokens(canonical):
    run = run_variant(canonical, Variant.PUBDB)
    for msg in run.authority.view.inbound("DOWNLOAD"):
        for idx in msg.payload["indices"].values():
            assert all(isinstance(i, int) for i in idx)


def test_single_token_query():
    # polling answers a one-token query, so anyone can test a single token
    w = build_world(canonical_scenario())
    run = run_variant(w, Variant.POLLING)
    bob_tok = run.clients[1].exchanged_own_tokens(0, w.horizon - 1)[0]
    assert malicious_single_token_query(run, 0, bob_tok) is not None
    for v in (Variant.PUBDB, Variant.PMS, Variant.CENTRAL):
        with pytest.raises(ProtocolError):
            malicious_single_token_query(run_variant(w, v), 0, bob_tok)


def _per_day_traffic(run, uid):
    addr = run.truth.address_of[uid]
    out = Counter()
    for msg in run.servers["proxy-0"].view.inbound("SEND_BUNDLE"):
        if msg.src == addr:
            out[(msg.slot // run.spd, msg.size)] += 1
    return out


def test_pms_traffic_independent_of_infection():
    # (0, 1) and (2, 3) meet at the same slot; only 1 falls ill
    t = 3 * SPD
    cfg = ScenarioConfig(population=4, horizon_days=20, mobility=Mobility.PAIRWISE_SCRIPTED, initial_infected=0,
                         meetings=((0, 1, t, 1.0), (2, 3, t, 1.0)), infections=((1, t),))
    run = run_variant(build_world(cfg), Variant.PMS)
    assert run.exposed_set() == {0}
    assert run.clients[1].sent_per_day == run.clients[2].sent_per_day
    assert _per_day_traffic(run, 1) == _per_day_traffic(run, 2)
    assert sum(run.clients[1].sent_per_day.values()) == run.send_days
    check_invariants(run)


def test_pms_zero_contacts_send_nothing():
    cfg = ScenarioConfig(population=3, horizon_days=10, mobility=Mobility.PAIRWISE_SCRIPTED, initial_infected=0,
                         meetings=((0, 1, SPD, 1.0),))
    run = run_variant(build_world(cfg), Variant.PMS)
    assert sum(run.clients[2].sent_per_day.values()) == 0


def test_pms_mailbox_opens_only_for_owner(canonical):
    run = run_variant(canonical, VariantConfig(Variant.PMS, route_length=0))
    alice_tok = next(t for _, t, _ in run.clients[1].keys)
    onion = run.wrap_statuses([(1, alice_tok, run.status_message(1, Status.INFECTED, 5, 0))])
    w = canonical.params.window_of(canonical.cfg.meetings[0][2])
    _, msgs = onion_peel_batch(run.keypair(0, w).secret_key, onion)
    assert msgs[0].status is Status.INFECTED
    with pytest.raises(AuthenticationError):
        onion_peel_batch(run.keypair(1, w).secret_key, onion)
    with pytest.raises(AuthenticationError):
        onion_peel_batch(run.keypair(0, w + 1).secret_key, onion)


def test_pms_scripted_send_and_fetch():
    t = 15 * SPD        # late enough to stay inside the lookback at the end of the run
    cfg = ScenarioConfig(population=2, horizon_days=20, mobility=Mobility.PAIRWISE_SCRIPTED, initial_infected=0,
                         meetings=((0, 1, t, 1.0),))
    run = run_variant(build_world(cfg), Variant.PMS)
    assert run.exposed_set() == set()
    before = len(pms_fetch_mailboxes(run, 0))
    alice_tok = next(tok for _, tok, _ in run.clients[1].keys)
    now = run.engine.now
    pms_send_status(run, 1, alice_tok, Status.INFECTED, t, seq=99)
    run.engine.run(now + 4)
    pms_fetch_mailboxes(run, 0, run.engine.now)
    run.engine.run(run.engine.now + 8)
    new = pms_fetch_mailboxes(run, 0)[before:]
    assert [(m.status, m.contact_slot) for m in new if m.sequence_no == 99] == [(Status.INFECTED, t)]
    assert poll_exposure(run, 0).exposed


def test_pms_authority_never_sees_devices(canonical):
    run = run_variant(canonical, Variant.PMS)
    devices = set(run.truth.user_of)
    assert not [m for m in run.servers[AUTHORITY].view.inbound() if m.src in devices]
