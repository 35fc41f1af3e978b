from dataclasses import replace

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from tracepriv import adversary as adv
from tracepriv.adversary import AttackResult, NotionResult, Thresholds, Verdict, verdict
from tracepriv.errors import CompletenessError, ParameterError
from tracepriv.protocols import TABLE_VARIANTS, Variant, VariantConfig, run_variant
from tracepriv.simworld import Mobility, ScenarioConfig, build_world

SPD = 288


def res(success, chance=0.0, sets=()):
    return AttackResult("t", success, chance, list(sets))


@pytest.fixture(scope="module")
def world():
    return build_world(ScenarioConfig(population=60, horizon_days=12, seed=5, initial_infected=4))


# --- verdict rules ---------------------------------------------------------

@pytest.mark.parametrize("nr, want", [
    (NotionResult(res(0.97)), Verdict.NO),
    (NotionResult(res(0.2, sets=[1, 2, 3])), Verdict.PARTIAL),       # bounded sets
    (NotionResult(res(0.3, 0.1)), Verdict.PARTIAL),                  # above chance alone
    (NotionResult(res(0.1, 0.1), res(0.3, 0.1)), Verdict.ALMOST),
    (NotionResult(res(0.1, 0.1), res(0.8, 0.1)), Verdict.PARTIAL),
    (NotionResult(res(0.1, 0.1), res(0.12, 0.1)), Verdict.YES),
    (NotionResult(res(0.0)), Verdict.YES),
    (NotionResult(res(0.0, sets=[90, 100])), Verdict.YES),           # sets too large to bound
])
def test_verdict_rules(nr, want):
    assert verdict(nr, 100) is want


def test_bad_numbers_rejected():
    with pytest.raises(ParameterError):
        Thresholds(no_min=1.5)
    with pytest.raises(ParameterError):
        res(-0.1)


def test_expected_rows():
    assert adv.expected_row(Variant.POLLING_NOISE) == adv.expected_row(Variant.POLLING)
    assert adv.expected_row(Variant.PMS)["authority-diagnosed"] is Verdict.YES
    assert set(adv.EXPECTED) == set(TABLE_VARIANTS)


def test_matrix_needs_every_cell():
    full = {(v, n): NotionResult(res(0.0)) for v in TABLE_VARIANTS for n in adv.NOTIONS}
    m = adv.build_privacy_matrix(full, 100)
    assert all(x is Verdict.YES for row in m.verdicts.values() for x in row.values())
    assert not m.matches and "(want NO)" in m.render()
    del full[(Variant.PMS, "snooper")]
    with pytest.raises(CompletenessError):
        adv.build_privacy_matrix(full, 100)


def test_matrix_matches_expected():
    m = adv.PrivacyMatrix({v: dict(adv.EXPECTED[v]) for v in TABLE_VARIANTS})
    assert m.matches and m.diff() == []


# --- linkage scoring -------------------------------------------------------

sets_ = st.lists(st.frozensets(st.integers(0, 11), max_size=6), max_size=8)


@settings(max_examples=100, deadline=None)
@given(sets_, st.sets(st.integers(0, 11), max_size=12))
def test_score_linkage_oracle(evidence, targets):
    got, chance = adv.score_linkage(evidence, targets, 12, shuffles=0)
    # each target: one over the smallest set holding it
    want = [max((1 / len(s) for s in evidence if t in s), default=0.0) for t in sorted(targets)]
    assert got == pytest.approx(float(np.mean(want)) if want else 0.0)
    assert chance == 0.0


def test_score_linkage_chance_of_one_big_set():
    # one set holding everybody carries no information
    s, c = adv.score_linkage([frozenset(range(20))], {3}, 20, shuffles=50)
    assert s == pytest.approx(1 / 20) and c == pytest.approx(1 / 20)


# --- snooper ---------------------------------------------------------------

def _snoop(refresh):
    cfg = ScenarioConfig(population=60, horizon_days=6, seed=2, initial_infected=0)
    cfg = replace(cfg, tokens=replace(cfg.tokens, refresh_interval=refresh or cfg.horizon))
    w = build_world(cfg)
    log, owners = adv.build_sensor_log(w, w.schedules)
    return adv.snooper_track(log, cfg.tokens, owners=owners, shuffles=20)


def test_snooper_static_vs_refresh():
    static = _snoop(None)
    assert static.success_rate >= 0.95
    fresh = _snoop(1)
    assert fresh.success_rate <= fresh.chance_level + 0.05


def test_snooper_owners_must_align(world):
    log, owners = adv.build_sensor_log(world, world.schedules)
    with pytest.raises(ParameterError):
        adv.snooper_track(log, world.params, owners=owners[:-1])


# --- contact inference -----------------------------------------------------

@pytest.mark.parametrize("k", [1, 3, 10])
def test_pubdb_candidates_are_everyone_met(k):
    t = 500
    cfg = ScenarioConfig(population=k + 1, horizon_days=30, mobility=Mobility.PAIRWISE_SCRIPTED, initial_infected=0,
                         meetings=tuple((0, j, t, 1.0) for j in range(1, k + 1)), infections=((1, t),))
    r = adv.contact_inference(run_variant(build_world(cfg), Variant.PUBDB), shuffles=5)
    assert r.anonymity_sets == [k]
    assert r.success_rate == pytest.approx(1 / k)


def test_contacts_never_see_others_exposure(world):
    for v in TABLE_VARIANTS:
        r = adv.contact_exposure_leak(run_variant(world, v), shuffles=5)
        assert r.success_rate == 0.0 and r.notes["misdelivered_answers"] == 0


# --- authority -------------------------------------------------------------

def test_central_names_everyone(world):
    run = run_variant(world, Variant.CENTRAL)
    for tg in ("diagnosed", "exposed"):
        assert adv.authority_linkage(run, targets=tg, shuffles=5).success_rate == 1.0
    with pytest.raises(ParameterError):
        adv.authority_linkage(run, targets="nobody")


def test_mix_collusion(world):
    base = run_variant(world, Variant.POLLING)
    mix = run_variant(world, Variant.POLLING_MIX)
    for tg in ("diagnosed", "exposed"):
        p = adv.authority_linkage(base, targets=tg, shuffles=5).success_rate
        assert adv.authority_linkage(mix, (0, 1, 2), targets=tg, shuffles=5).success_rate == pytest.approx(p)
        assert adv.authority_linkage(mix, (), targets=tg, shuffles=5).success_rate < p
    with pytest.raises(ParameterError):
        adv.authority_linkage(mix, [7])


def test_noise_filter(world):
    base = run_variant(world, Variant.POLLING)
    noisy = run_variant(world, VariantConfig(Variant.POLLING_NOISE, noise_count=50))
    f = adv.score_filter(adv.authority_filter_noise(noisy.authority.view), noisy)
    assert f.precision == f.recall == 1.0
    assert f.removed == 50 * len(world.timeline.diagnosed())
    for tg in ("diagnosed", "exposed"):
        a = adv.authority_linkage(base, targets=tg, shuffles=5).success_rate
        b = adv.authority_linkage(noisy, targets=tg, shuffles=5).success_rate
        assert abs(a - b) <= 0.01


# --- PMS pairing -----------------------------------------------------------

def test_pms_pairing(world):
    run = run_variant(world, Variant.PMS)
    for co in [(), (0,), (1,)]:
        r = adv.pms_pairing(run, co, shuffles=20)
        assert r.notes["deposits"] > 0
        assert r.success_rate <= r.chance_level + 0.05
    assert adv.pms_pairing(run, (0, 1), shuffles=5).success_rate == 1.0
    with pytest.raises(ParameterError):
        adv.pms_pairing(run, (2,))


def test_pms_direct_deposit_pairs_everything(world):
    run = run_variant(world, VariantConfig(Variant.PMS, route_length=0))
    assert adv.pms_pairing(run, shuffles=5).success_rate == 1.0
