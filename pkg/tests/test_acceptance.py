"""The ten acceptance criteria, one test each, each printing a PASS/FAIL line.

Criteria 5 and 7 share one pass over the default batch (seeds 1..20).
"""

import time
from dataclasses import replace
from collections import Counter

import numpy as np
import pytest

from tracepriv import adversary as adv
from tracepriv import cryptobox as cb
from tracepriv.harness import load_config
from tracepriv.harness.cli import main
from tracepriv.harness.runner import check_invariants, execute, frozen_heap
from tracepriv.errors import AuthenticationError, FormatError
from tracepriv.protocols import Variant, run_variant
from tracepriv.protocols.base import ceil_div
from tracepriv.simworld import Mobility, ScenarioConfig, build_world
from tracepriv.tokens import TokenParams, random_tokens

SEEDS = range(1, 21)
TARGET_SECONDS = 60.0
SPD = 288


@pytest.fixture(scope="module")
def default():
    return load_config("default.cfg")


@pytest.fixture(scope="module")
def batch(default):
    """The variants criteria 5 and 7 attack, over the default batch; keeps numbers, not runs."""
    out = {"share": [], "mix": [], "pairing": [], "cadence": []}
    for seed in SEEDS:
        world = build_world(default.scenario(seed))
        with frozen_heap():
            poll, mix, pms = [run_variant(world, default.variant_config(v))
                              for v in (Variant.POLLING, Variant.POLLING_MIX, Variant.PMS)]
            check_invariants(mix)
            out["share"].append(_worst_share(mix))
            for tg in ("diagnosed", "exposed", "all"):
                p = adv.authority_linkage(poll, targets=tg, seed=seed).success_rate
                full = adv.authority_linkage(mix, range(mix.cfg.mix.server_count), targets=tg, seed=seed).success_rate
                none = adv.authority_linkage(mix, (), targets=tg, seed=seed).success_rate
                out["mix"].append((seed, tg, p, full, none))
            for co in ((), (0,), (1,)):
                r = adv.pms_pairing(pms, co, shuffles=100, seed=seed)
                out["pairing"].append((seed, co, r.success_rate, r.chance_level))
            out["cadence"].append(_cadence(pms))
        for run in (poll, mix, pms):
            run.close()
    return out


def _worst_share(mix) -> float:
    """Largest share a server got, over the bound ceil(n / M); at most 1."""
    m = len(mix.mixes)
    per = {}
    for s in mix.mixes:
        for msg in s.view.inbound("REPORT_SHARE"):
            per.setdefault(msg.src, []).append(len(msg.payload["tokens"]))
    return max((max(v) / ceil_div(sum(v), m) if sum(v) else 0.0 for v in per.values()), default=0.0)


def _cadence(pms):
    """Per (user, day): contacts due a message that day -> counts sent, split by infected and healthy.

    Also the distinct onion widths a device sent, which must be one.
    """
    diagnosed = set(pms.world.timeline.diagnosed())
    counts = {}
    for c in pms.clients:
        days = np.array(c._key_days, np.int64)
        for d, sent in c.sent_per_day.items():
            due = int(((days >= d - pms.send_days) & (days < d)).sum())
            counts.setdefault(due, ({}, {}))[c.uid not in diagnosed].setdefault(sent, 0)
            counts[due][c.uid not in diagnosed][sent] += 1
    widths = {m.payload["onions"].data.shape[1] for m in pms.servers["proxy-0"].view.inbound("SEND_BUNDLE")}
    return counts, widths


def test_criterion_1_oracle_equivalence(default, criterion):
    mismatch = []
    t = time.perf_counter()
    for seed in SEEDS:
        world, runs = execute(default, seed)
        oracle = world.oracle()
        mismatch += [(seed, v.value) for v, run in runs.items() if run.exposed_set() != oracle]
        for run in runs.values():
            run.close()
    s = time.perf_counter() - t
    runtime = f"{s:.1f} s, target < {TARGET_SECONDS:.0f} s: {'met' if s < TARGET_SECONDS else 'NOT MET'}"
    # the runtime is a target on shared hardware and is reported, not asserted
    criterion(1, not mismatch, f"{len(mismatch)} mismatches over 20 seeds x 5 variants; {runtime}")


def test_criterion_2_matrix(tmp_path, capsys, criterion):
    code = main(["compare", "--config", "default.cfg", "--seeds", "1..20", "--out", str(tmp_path)])
    text = capsys.readouterr().out
    ok = code == 0 and "matrix vs expected: PASS" in text and "seeds matching expected: 20/20" in text
    criterion(2, ok, f"compare exit {code}; every cell matches and is stable over seeds 1..20")


def _snoop(refresh):
    cfg = load_config("default.cfg").scenario(1)
    cfg = replace(cfg, tokens=replace(cfg.tokens, refresh_interval=refresh))
    w = build_world(cfg)
    log, owners = adv.build_sensor_log(w, w.schedules)
    return adv.snooper_track(log, cfg.tokens, owners=owners, seed=1)


def test_criterion_3_snooper(criterion):
    horizon = load_config("default.cfg").scenario(1).horizon
    static, fresh = _snoop(horizon), _snoop(1)
    ok = static.success_rate >= 0.95 and fresh.success_rate <= fresh.chance_level + 0.05
    criterion(3, ok, f"static {static.success_rate:.3f} (>= 0.95); per-slot {fresh.success_rate:.3f} "
                     f"vs chance {fresh.chance_level:.3f} + 0.05")


def test_criterion_4_noise(default, criterion):
    worst, prec, rec = 0.0, 1.0, 1.0
    for seed in (1, 2, 3):
        w = build_world(default.scenario(seed))
        base_run = run_variant(w, default.variant_config(Variant.POLLING))
        noisy = run_variant(w, default.variant_config(Variant.POLLING).with_variant(Variant.POLLING_NOISE,
                                                                                     noise_count=100))
        check_invariants(noisy)
        f = adv.score_filter(adv.authority_filter_noise(noisy.authority.view), noisy)
        prec, rec = min(prec, f.precision), min(rec, f.recall)
        for tg in ("diagnosed", "exposed", "all"):
            a = adv.authority_linkage(base_run, targets=tg, seed=seed).success_rate
            b = adv.authority_linkage(noisy, targets=tg, seed=seed).success_rate
            worst = max(worst, abs(a - b))
        base_run.close()
        noisy.close()
    ok = prec == 1.0 and rec == 1.0 and worst <= 0.01
    criterion(4, ok, f"filter precision {prec:.3f} recall {rec:.3f}; largest linkage change {worst:.4f} (<= 0.01), "
                     "seeds 1..3")


def test_criterion_5_mix(batch, criterion):
    share = max(batch["share"])
    equal = all(full == pytest.approx(p) for _, _, p, full, _ in batch["mix"])
    lower = all(none < p for _, _, p, _, none in batch["mix"])
    gap = min(p - none for _, _, p, _, none in batch["mix"])
    criterion(5, share <= 1.0 and equal and lower,
              f"largest share / ceil(n/M) = {share:.3f}; all-M collusion equals POLLING: {equal}; "
              f"no collusion lower on every seed and target: {lower} (smallest gap {gap:.3f})")


def test_criterion_6_pubdb_sets(criterion):
    got = []
    for k in (1, 3, 10):
        t = 500
        cfg = ScenarioConfig(population=k + 1, horizon_days=30, mobility=Mobility.PAIRWISE_SCRIPTED,
                             initial_infected=0, meetings=tuple((0, j, t, 1.0) for j in range(1, k + 1)),
                             infections=((1, t),))
        r = adv.contact_inference(run_variant(build_world(cfg), Variant.PUBDB))
        got.append(r.anonymity_sets)
    criterion(6, got == [[1], [3], [10]], f"set sizes {got}")


def test_criterion_7_pms(batch, criterion):
    worst = max(s - c for _, _, s, c in batch["pairing"])
    compared = unequal = 0
    widths = set()
    for counts, w in batch["cadence"]:
        widths |= w
        for due, (sick, well) in counts.items():
            if sick and well:
                compared += 1
                unequal += set(sick) != {due} or set(well) != {due}
    # scripted: two pairs meet at once, only one partner falls ill
    t = 3 * SPD
    cfg = ScenarioConfig(population=4, horizon_days=20, mobility=Mobility.PAIRWISE_SCRIPTED, initial_infected=0,
                         meetings=((0, 1, t, 1.0), (2, 3, t, 1.0)), infections=((1, t),))
    run = run_variant(build_world(cfg), Variant.PMS)
    scripted = run.clients[1].sent_per_day == run.clients[2].sent_per_day and sum(run.clients[1].sent_per_day.values())
    ok = worst <= 0.05 and compared > 0 and unequal == 0 and len(widths) == 1 and bool(scripted)
    criterion(7, ok, f"pairing success - chance at most {worst:.4f} (<= 0.05) with 1 or 2 honest proxies of 2; "
                     f"{compared} contact counts seen for both infected and healthy users, {unequal} with unequal "
                     f"per-day sends; onion widths {sorted(widths)}")


def test_criterion_8_crypto(criterion):
    rng = np.random.default_rng(8)
    checks = {}
    for scheme in cb.Scheme:
        kp = cb.keygen(1, scheme) if scheme is cb.Scheme.TOY_DETERMINISTIC else cb.keygen(scheme_id=scheme)
        msgs = [rng.bytes(int(rng.integers(0, 200))) for _ in range(1000)]
        checks[f"{scheme.value} round trips"] = all(cb.open(kp.secret_key, cb.seal(kp.public_key, m, scheme)) == m
                                                      for m in msgs)
        for hops in range(5):
            route = [cb.keygen(scheme_id=scheme) for _ in range(hops)]
            dest = cb.keygen(scheme_id=scheme)
            msg = cb.StatusMessage(cb.Status.INFECTED, 100 + hops, hops)
            onion = cb.onion_wrap([k.public_key for k in route], dest.public_key, msg, scheme_id=scheme)
            refused = 0
            for _ in range(20):
                try:
                    cb.onion_peel(cb.keygen(scheme_id=scheme).secret_key, onion)
                except (AuthenticationError, FormatError):
                    refused += 1
            checks[f"{scheme.value} wrong key {hops}"] = refused == 20
            layer = onion
            for k in route:
                layer = cb.onion_peel(k.secret_key, layer).inner
            checks[f"{scheme.value} route {hops}"] = cb.onion_peel(dest.secret_key, layer).message == msg
    sizes = {len(cb.serialize_status(cb.StatusMessage(s, 5, 1))) for s in cb.Status}
    checks["equal status lengths"] = len(sizes) == 1
    bad = [k for k, v in checks.items() if not v]
    criterion(8, not bad, f"{len(checks)} checks over both schemes, routes 0..4; failed: {bad or 'none'}")


def test_criterion_9_collisions(criterion):
    p = TokenParams(bit_length=128)
    n = 10**6
    toks = random_tokens(n, p, np.random.default_rng(9))
    seen = len(set(toks))
    expected = n * (n - 1) / 2 / 2.0**128     # birthday bound
    criterion(9, seen == n and expected < 1e-24, f"{n - seen} collisions in {n} tokens; expected {expected:.2e}")


def test_criterion_10_determinism(tmp_path, capsys, criterion):
    outs = [tmp_path / "a", tmp_path / "b"]
    codes = [main(["simulate", "--config", "default.cfg", "--seed", "1", "--out", str(d), "--no-views"]) for d in outs]
    capsys.readouterr()
    a, b = ((d / "default.1.report").read_bytes().split(b"\n", 1) for d in outs)
    same = a[1] == b[1] and codes == [0, 0]
    criterion(10, same, f"{len(a[1])} bytes after the header, identical: {a[1] == b[1]}")
