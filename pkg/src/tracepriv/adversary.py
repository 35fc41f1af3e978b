"""Attacks for the three privacy notions and the verdict matrix built from them.

Every attack runs in two steps.  The *inference* step reads only what the
attacking party holds: message views, the attacker's own device state and
diary, a sensor log, and public side information such as a phone directory.
The *scoring* step compares the inference with ground truth.  Chance
levels come from scoring the same inference against identity-shuffled
truth.

Notions, in matrix column order:

``snooper``
    Passive Bluetooth sensors in busy places try to re-link a person across
    token refreshes.
``contact-exposed`` / ``contact-diagnosed``
    Another user tries to learn who among the people they met was exposed
    or diagnosed.
``authority-exposed`` / ``authority-diagnosed``
    The server operator, alone or with one helper server, tries to name
    exposed or diagnosed users.
"""

from __future__ import annotations

import enum
import math
import statistics
from collections import Counter, defaultdict
from collections.abc import Iterable, Mapping, Sequence
from dataclasses import dataclass, field

import numpy as np

from .errors import CompletenessError, ParameterError
from .protocols.base import AUTHORITY, TABLE_VARIANTS, ProtocolRun, Variant
from .protocols.network import Origin, View
from .tokens import Token, TokenParams

NOTIONS = ("snooper", "contact-exposed", "contact-diagnosed", "authority-exposed", "authority-diagnosed")
SHUFFLES = 100
STREAM_SHUFFLE = 0xAD01


class Verdict(enum.Enum):
    YES = "YES"
    ALMOST = "ALMOST"
    PARTIAL = "PARTIAL"
    NO = "NO"


# Expected verdicts for the five systems.
EXPECTED = {
    Variant.CENTRAL: ("YES", "YES", "YES", "NO", "NO"),
    Variant.POLLING: ("YES", "YES", "YES", "PARTIAL", "PARTIAL"),
    Variant.POLLING_MIX: ("YES", "YES", "YES", "ALMOST", "ALMOST"),
    Variant.PUBDB: ("YES", "YES", "PARTIAL", "YES", "PARTIAL"),
    Variant.PMS: ("YES", "YES", "PARTIAL", "YES", "YES"),
}
EXPECTED = {v: dict(zip(NOTIONS, (Verdict(x) for x in row))) for v, row in EXPECTED.items()}


@dataclass(frozen=True)
class Thresholds:
    """How attack numbers turn into verdicts.

    ``bounded_fraction`` times the population is the median anonymity-set
    size below which a leak counts as bounded.
    """

    yes_margin: float = 0.05
    no_min: float = 0.95
    almost_max: float = 0.5
    bounded_fraction: float = 0.1

    def __post_init__(self):
        for name in ("yes_margin", "no_min", "almost_max", "bounded_fraction"):
            v = getattr(self, name)
            if not 0.0 <= v <= 1.0:
                raise ParameterError(f"threshold {name} must lie in [0, 1], got {v}")


@dataclass
class AttackResult:
    attack_name: str
    success_rate: float
    chance_level: float
    anonymity_sets: list = field(default_factory=list)
    notes: dict = field(default_factory=dict)

    def __post_init__(self):
        for name in ("success_rate", "chance_level"):
            v = getattr(self, name)
            if not 0.0 <= v <= 1.0 + 1e-12:
                raise ParameterError(f"{name} must lie in [0, 1], got {v}")

    @property
    def median_set(self) -> float | None:
        return statistics.median(self.anonymity_sets) if self.anonymity_sets else None

    def to_record(self) -> dict:
        return {
            "attack": self.attack_name,
            "success_rate": round(self.success_rate, 6),
            "chance_level": round(self.chance_level, 6),
            "sets": len(self.anonymity_sets),
            "median_set": self.median_set,
            "notes": {k: self.notes[k] for k in sorted(self.notes)},
        }


def _shuffle_rng(seed: int, salt: int = 0) -> np.random.Generator:
    return np.random.default_rng(np.random.SeedSequence([seed & (2**64 - 1), STREAM_SHUFFLE, salt]))


# --- linkage scoring shared by the contact and authority attacks ------------

def score_linkage(evidence: Sequence[frozenset], targets: Iterable[int], population: int, *,
                  shuffles: int = SHUFFLES, rng: np.random.Generator | None = None) -> tuple[float, float]:
    """``(success, chance)`` for naming each target from candidate sets.

    A target scores ``1/|S|`` for the smallest candidate set ``S`` that
    contains it (a uniform guess inside ``S``), and 0 if no set does.
    Chance applies the same evidence to targets relabelled by a random
    permutation of the population.
    """
    targets = sorted(set(targets))
    if not targets:
        return 0.0, 0.0
    best = np.zeros(population)
    for s in evidence:
        if s:
            w = 1.0 / len(s)
            for u in s:
                if w > best[u]:
                    best[u] = w
    success = float(best[targets].mean())
    if not shuffles:
        return success, 0.0
    rng = rng or _shuffle_rng(0)
    idx = np.asarray(targets)
    chance = float(np.mean([best[rng.permutation(population)[idx]].mean() for _ in range(shuffles)]))
    return success, chance


# --- snooper ------------------------------------------------------------

@dataclass
class SnooperConfig:
    """Sensors at fixed places and what they heard: ``(sensor, slot, Token)``."""

    sensor_count: int
    placement: list
    log: list = field(default_factory=list)


def busiest_places(world, count: int = 3) -> list[int]:
    traffic = Counter()
    for e in world.events:
        if e.place >= 0:
            traffic[e.place] += 2
    ranked = sorted(traffic.items(), key=lambda kv: (-kv[1], kv[0]))
    return [p for p, _ in ranked[:count]]


def build_sensor_log(world, schedules: Mapping, *, sensor_count: int = 3,
                     placement: Sequence[int] | None = None) -> tuple[SnooperConfig, list[int]]:
    """Deploy sensors and record every token broadcast at their places.

    Returns the sensor config and, separately, the true owner of each log
    entry; only scoring may look at the owners.
    """
    if sensor_count < 0:
        raise ParameterError("sensor_count must be >= 0")
    places = list(placement) if placement is not None else busiest_places(world, sensor_count)
    places = places[:sensor_count]
    sensor_of = {p: i for i, p in enumerate(places)}
    seen = set()
    log, owners = [], []
    for e in world.events:
        s = sensor_of.get(e.place)
        if s is None:
            continue
        for u in (e.a, e.b):
            key = (s, e.slot, u)
            if key in seen:
                continue
            seen.add(key)
            log.append((s, e.slot, Token(schedules[u].raw_at(e.slot), schedules[u].kind)))
            owners.append(u)
    return SnooperConfig(len(places), places, log), owners


def _track_ids(log) -> np.ndarray:
    """Sighting -> track id, where a track is every sighting of one token value."""
    ids = {}
    return np.array([ids.setdefault(tok.value, len(ids)) for _, _, tok in log], dtype=np.int64)


class _TrackScorer:
    """Scores owner labellings against fixed tracks; vectorised for the shuffles."""

    def __init__(self, tids: np.ndarray, windows: np.ndarray, population: int):
        self.order = np.argsort(tids, kind="stable")
        t = tids[self.order]
        self.starts = np.flatnonzero(np.r_[True, t[1:] != t[:-1]])
        w = windows[self.order]
        self.multi = np.minimum.reduceat(w, self.starts) != np.maximum.reduceat(w, self.starts)
        self.windows = windows
        self.n = population
        self.count = len(self.starts)

    def __call__(self, owners: np.ndarray) -> float:
        n = self.n
        pairs = np.unique(owners * (int(self.windows.max()) + 1) + self.windows)
        per_owner = np.bincount(pairs // (int(self.windows.max()) + 1), minlength=n)
        eligible = per_owner >= 2
        if not eligible.any():
            return 0.0
        o = owners[self.order]
        lo = np.minimum.reduceat(o, self.starts)
        pure = (lo == np.maximum.reduceat(o, self.starts)) & self.multi
        linked = np.zeros(n, dtype=bool)
        linked[lo[pure]] = True
        return float((linked & eligible).sum() / eligible.sum())


def snooper_track(config: SnooperConfig, params: TokenParams, *, owners: Sequence[int],
                  track_window: int = 3, shuffles: int = SHUFFLES, seed: int = 0) -> AttackResult:
    """Chain sightings by token equality and count people followed across windows.

    A person counts as tracked when some chain holds only their sightings
    and spans at least two ``track_window``-slot windows.  The denominator
    is everyone sighted in two or more windows.
    """
    if len(owners) != len(config.log):
        raise ParameterError("owners must align with the sensor log")
    if track_window < 1:
        raise ParameterError("track_window must be >= 1")
    if not config.log:
        return AttackResult("snooper_track", 0.0, 0.0, [], {"sightings": 0, "sensors": config.sensor_count})
    tids = _track_ids(config.log)
    windows = np.array([slot // track_window for _, slot, _ in config.log], dtype=np.int64)
    own = np.asarray(owners, dtype=np.int64)
    score = _TrackScorer(tids, windows, int(own.max()) + 1)
    success = score(own)
    rng = _shuffle_rng(seed, 1)
    chance = float(np.mean([score(rng.permutation(own)) for _ in range(shuffles)])) if shuffles else 0.0
    notes = {"sightings": len(config.log), "sensors": config.sensor_count, "tracks": score.count,
             "multi_window_tracks": int(score.multi.sum()), "refresh_interval": params.refresh_interval}
    return AttackResult("snooper_track", success, chance, [], notes)


# --- contacts ---------------------------------------------------------

def _diary_between(diary, lo: int, hi: int) -> frozenset:
    return frozenset(p for s, p in diary if lo <= s <= hi)


def infer_contacts(run: ProtocolRun) -> list[tuple[int, object, frozenset]]:
    """For each notification signal a device received: ``(user, signal, candidates)``.

    Candidates are the people in the user's diary inside the signal's
    window; this uses nothing beyond the user's own device and memory.
    """
    diary = run.world.encounters()
    out = []
    for c in run.clients:
        for sig in c.signals:
            lo, hi = sig.window
            out.append((c.uid, sig, _diary_between(diary[c.uid], lo, hi)))
    return out


def _responsible(run: ProtocolRun, uid: int, sig) -> set[int]:
    """Diagnosed in-range partners whose contagious window covers a meeting inside the signal window."""
    tl = run.world.timeline
    W = run.params.exposure_window
    lo, hi = sig.window
    r = run.world.cfg.proximity_radius
    out = set()
    for e in run.world.events_of(uid):
        if not lo <= e.slot <= hi or e.distance > r:
            continue
        p = e.b if e.a == uid else e.a
        d = tl.diagnosis_slot[p]
        if d is None or d > sig.slot:
            continue
        a, b = tl.report_window(p, W)
        if a <= e.slot <= b:
            out.add(p)
    return out


def contact_inference(run: ProtocolRun, *, shuffles: int = SHUFFLES, seed: int = 0) -> AttackResult:
    """How well a user can name the diagnosed person behind each notification.

    Each signal scores ``|truth ∩ C| / |C|``, the chance that a uniform pick
    from the candidate set ``C`` is a person who really caused it.  For a
    matched public-database token the truth is that token's owner.
    """
    inferred = infer_contacts(run)
    n = run.world.population
    if not inferred:
        return AttackResult("contact_inference", 0.0, 0.0, [], {"signals": 0})
    owner = run.fill_token_owners() if run.variant is Variant.PUBDB else None
    truths, cands = [], []
    for uid, sig, cand in inferred:
        if owner is not None and sig.ref in owner:
            truth = {owner[sig.ref]}
        else:
            truth = _responsible(run, uid, sig)
        truths.append(truth)
        cands.append(cand)

    def score(perm):
        vals = []
        for t, c in zip(truths, cands):
            if not c:
                vals.append(0.0)
                continue
            hit = sum(1 for u in t if (perm[u] if perm is not None else u) in c)
            vals.append(hit / len(c))
        return float(np.mean(vals))

    success = score(None)
    rng = _shuffle_rng(seed, 2)
    chance = float(np.mean([score(rng.permutation(n)) for _ in range(shuffles)])) if shuffles else 0.0
    sizes = [len(c) for c in cands]
    kinds = Counter(sig.kind for _, sig, _ in inferred)
    notes = {"signals": len(inferred), "binary": kinds.get("binary", 0), "window": kinds.get("window", 0),
             "singletons": sum(1 for s in sizes if s == 1),
             "identified": sum(1 for t, c in zip(truths, cands) if len(c) == 1 and c <= t)}
    return AttackResult("contact_inference", min(success, 1.0), min(chance, 1.0), sizes, notes)


_ANSWER_KINDS = ("NOTIFY", "ANSWER", "FETCH_REPLIES", "BATCHES")


def contact_exposure_leak(run: ProtocolRun, *, shuffles: int = SHUFFLES, seed: int = 0) -> AttackResult:
    """Can a user learn that someone else was exposed?

    Every answer a device receives is addressed to that device and speaks
    only about its own contacts, so the candidate sets for *other* users'
    exposure come out empty in every variant.  The scan is still run over
    each user's view so that a protocol change that leaked would show up.
    """
    evidence = []
    for c in run.clients:
        for rec in c.view.records:
            m = rec.msg
            if rec.direction == "in" and m.kind in _ANSWER_KINDS and m.dest != c.address:
                # an answer that reached the wrong device names its addressee to a pool of one
                evidence.append(frozenset({run.truth.user_of[m.dest]}))
    success, chance = score_linkage(evidence, run.exposed_set(), run.world.population,
                                    shuffles=shuffles, rng=_shuffle_rng(seed, 3))
    return AttackResult("contact_exposure_leak", success, chance, [len(s) for s in evidence],
                        {"misdelivered_answers": len(evidence)})


# --- authority ----------------------------------------------------------

@dataclass
class SideInfo:
    """What an operator can learn outside the protocol.

    ``ip_pool`` maps a device address to the small group of subscribers
    that share its network address range; ``phone_directory`` resolves
    phone numbers.
    """

    ip_pool: dict
    phone_directory: dict

    def pool(self, address: str) -> frozenset | None:
        return self.ip_pool.get(address)


def side_info(run: ProtocolRun, *, pool_size: int = 3, seed: int = 0) -> SideInfo:
    if pool_size < 1:
        raise ParameterError("pool_size must be >= 1")
    n = run.world.population
    order = _shuffle_rng(seed ^ run.world.cfg.seed, 4).permutation(n).tolist()
    pools = {}
    for i in range(0, n, pool_size):
        group = frozenset(order[i:i + pool_size])
        for u in group:
            pools[run.truth.address_of[u]] = group
    phones = {u.phone_number: u.id for u in run.world.users}
    return SideInfo(pools, phones)


def _hit(payload) -> bool:
    return bool(payload.get("confirmed") or payload.get("self_reported"))


def authority_evidence(views: Mapping[str, View], side: SideInfo) -> dict[str, list[frozenset]]:
    """Candidate sets for diagnosed and exposed users from a coalition's views.

    ``views`` holds the authority's view and those of any colluding servers.
    Identity comes from a phone number in the payload, a registry built
    from registrations, or a device's source address resolved to its pool.
    """
    diagnosed, exposed = [], []
    phone_of_addr = {}
    for view in views.values():
        for m in view.inbound("REGISTER"):
            phone_of_addr[m.src] = m.payload["phone"]

    def ident(addr):
        phone = phone_of_addr.get(addr)
        if phone is not None and phone in side.phone_directory:
            return frozenset({side.phone_directory[phone]})
        return side.pool(addr)

    for view in views.values():
        share_src = {}     # query share tokens -> querying device
        handle_toks = {}   # lookup handle -> query share tokens
        for rec in view.records:
            m = rec.msg
            p = m.payload
            if rec.direction == "in":
                if m.kind == "REPORT":
                    if "phone" in p and p["phone"] in side.phone_directory:
                        diagnosed.append(frozenset({side.phone_directory[p["phone"]]}))
                    elif m.origin is Origin.VISIBLE_SOURCE and (s := ident(m.src)) is not None:
                        diagnosed.append(s)
                elif m.kind == "REPORT_SHARE" and (s := ident(m.src)) is not None:
                    diagnosed.append(s)
                elif m.kind == "QUERY_SHARE":
                    share_src[tuple(p["tokens"])] = m.src
                elif m.kind == "LOOKUP_RESULT":
                    for h, c, sr in p["items"]:
                        src = share_src.get(handle_toks.get(h))
                        if (c or sr) and src is not None and (s := ident(src)) is not None:
                            exposed.append(s)
            else:
                if m.kind == "NOTIFY" and (s := ident(m.dest)) is not None:
                    exposed.append(s)
                elif m.kind == "ANSWER" and _hit(p) and (s := ident(m.dest)) is not None:
                    exposed.append(s)
                elif m.kind == "LOOKUP":
                    for h, toks in p["items"]:
                        handle_toks[h] = tuple(toks)
    return {"diagnosed": diagnosed, "exposed": exposed}


def helper_servers(run: ProtocolRun) -> list[str]:
    return sorted(a for a in run.servers if a != AUTHORITY)


def authority_linkage(run: ProtocolRun, colluding: Iterable[str | int] = (), *, targets: str = "all",
                      sensors: SnooperConfig | None = None, side: SideInfo | None = None,
                      shuffles: int = SHUFFLES, seed: int = 0) -> AttackResult:
    """The operator, with ``colluding`` servers, names diagnosed and/or exposed users.

    ``colluding`` lists server addresses, or mix indices for a mixing run.
    ``targets`` is ``"diagnosed"``, ``"exposed"`` or ``"all"``.  Sensor
    sightings of reported tokens recover places and times (a trace), not
    names, and are reported in the notes.
    """
    if targets not in ("diagnosed", "exposed", "all"):
        raise ParameterError(f"targets must be diagnosed, exposed or all, not {targets!r}")
    names = []
    for c in colluding:
        name = f"mix-{c}" if isinstance(c, (int, np.integer)) else str(c)
        if name not in run.servers or name == AUTHORITY:
            raise ParameterError(f"unknown helper server {c!r}")
        names.append(name)
    side = side or side_info(run, seed=seed)
    views = {AUTHORITY: run.servers[AUTHORITY].view}
    for name in sorted(set(names)):
        views[name] = run.servers[name].view
    ev = authority_evidence(views, side)
    diag = set(run.world.timeline.diagnosed())
    expo = run.exposed_set()
    if targets == "diagnosed":
        evidence, who = ev["diagnosed"], diag
    elif targets == "exposed":
        evidence, who = ev["exposed"], expo
    else:
        evidence, who = ev["diagnosed"] + ev["exposed"], diag | expo
    success, chance = score_linkage(evidence, who, run.world.population, shuffles=shuffles,
                                    rng=_shuffle_rng(seed, 5))
    notes = {"colluding": sorted(set(names)), "targets": targets, "target_count": len(who),
             "evidence": len(evidence)}
    if sensors is not None:
        reported = set()
        for view in views.values():
            for m in view.inbound():
                if m.kind in ("REPORT", "REPORT_SHARE", "BAG"):
                    toks = m.payload["tokens"]
                    for t in (toks.values() if isinstance(toks, dict) else [toks]):
                        reported.update(t)
        hits = [(s, slot) for s, slot, tok in sensors.log if tok.value in reported]
        notes["trajectory_points"] = len(hits)
    return AttackResult("authority_linkage", success, chance, [len(s) for s in evidence], notes)


@dataclass
class FilterResult:
    recovered: list
    removed: int
    flagged: list
    precision: float | None = None
    recall: float | None = None


def authority_filter_noise(view: View) -> FilterResult:
    """Drop reported tokens that never show up in any other message.

    A real token was heard by someone, who sooner or later queries with
    it; a uniform random one almost surely never appears again.  Tokens
    appearing in two different reports cannot come from honest own-token
    reports and are flagged as possible copies of observed tokens.
    """
    reports = [m for m in view.inbound() if m.kind in ("REPORT", "REPORT_SHARE")]
    appear = defaultdict(set)
    for m in view.inbound():
        toks = m.payload.get("tokens") if isinstance(m.payload, dict) else None
        if m.kind in ("QUERY", "REPORT", "REPORT_SHARE") and toks is not None:
            for t in toks:
                appear[t].add(m.msg_id)
        elif m.kind == "LOOKUP":
            for _, toks in m.payload["items"]:
                for t in toks:
                    appear[t].add(m.msg_id)
    kept, removed, flagged = [], 0, []
    for m in reports:
        for t in m.payload["tokens"]:
            if len(appear[t]) >= 2:
                kept.append(t)
                if sum(1 for r in reports if t in r.payload["tokens"]) >= 2:
                    flagged.append(t)
            else:
                removed += 1
    return FilterResult(kept, removed, sorted(set(flagged)))


def score_filter(result: FilterResult, run: ProtocolRun) -> FilterResult:
    """Fill in precision and recall against the noise the run actually added."""
    noise = run.truth.momentary.get("noise", set())
    reported = [t for m in run.authority.view.inbound("REPORT") for t in m.payload["tokens"]]
    real = [t for t in reported if t not in noise]
    kept = result.recovered
    tp = sum(1 for t in kept if t not in noise)
    result.precision = tp / len(kept) if kept else 1.0
    result.recall = tp / len(real) if real else 1.0
    return result


# --- PMS sender/mailbox pairing -------------------------------------------

def _transform_map(proxy) -> dict[int, int]:
    m = {}
    for _, ins, outs in proxy.view.extra["transform"]:
        m.update(zip(outs.tolist(), ins.tolist()))
    return m


def _batch_outputs(proxy) -> dict[int, list[int]]:
    """Send slot -> digests of every onion the proxy forwarded in that slot."""
    out = defaultdict(list)
    for msg in proxy.view.outbound():
        if msg.kind in ("SEND_BATCH", "DEPOSIT_BATCH"):
            out[msg.slot].extend(msg.payload["onions"].digests().tolist())
    return out


def pms_pairing(run, colluding: Iterable[int] = (), *, shuffles: int = SHUFFLES, seed: int = 0) -> AttackResult:
    """The mailbox host, with colluding proxies, pairs each deposit with its sender.

    Walking back from a deposit, a colluding proxy's notes map each onion
    it forwarded to the one it received.  An honest proxy only reveals that
    an output came from some input of its batch, and the coalition knows
    those inputs only if the hop before it colludes.  Once the trail is
    lost the sender could be anyone.  Each deposit scores
    ``1/|candidates|`` when its sender is among the candidates.
    """
    R = run.route_length
    colluding = {int(c) for c in colluding}
    if any(not 0 <= c < R for c in colluding):
        raise ParameterError(f"colluding proxies must lie in 0..{R - 1}")
    n = run.world.population
    user_of = run.truth.user_of
    everyone = frozenset(range(n))
    proxies = run.proxies
    back = {i: _transform_map(proxies[i]) for i in colluding}
    outs = {i: _batch_outputs(proxies[i]) for i in colluding}
    sender_of = {}
    if 0 in colluding:
        for msg in proxies[0].view.inbound("SEND_BUNDLE"):
            for d in msg.payload["onions"].digests().tolist():
                sender_of[d] = user_of[msg.src]

    def walk(digests, j, slot):
        """Candidate senders for onions ``digests`` sent on by hop ``j`` at ``slot``."""
        while j >= 0:
            if j in colluding:
                digests = {back[j][x] for x in digests}
            elif j >= 1 and j - 1 in colluding:
                digests = set(outs[j - 1].get(slot - 1, ()))
            else:
                return everyone
            j -= 1
            slot -= 1
        return frozenset(sender_of[x] for x in digests if x in sender_of)

    cand_sets, deposits, direct = [], [], []
    batch_cache = {}
    for msg in run.authority.view.inbound("DEPOSIT_BATCH"):
        digests = msg.payload["onions"].digests().tolist()
        if R == 0:
            cands = [frozenset({user_of[msg.src]})] * len(digests)
            direct.extend([user_of[msg.src]] * len(digests))
        elif R - 1 not in colluding:
            # every onion of this delivery shares one candidate set
            key = msg.slot
            if key not in batch_cache:
                batch_cache[key] = walk(set(digests), R - 1, msg.slot)
            cands = [batch_cache[key]] * len(digests)
        else:
            cands = [walk({d}, R - 1, msg.slot) for d in digests]
        cand_sets.extend(cands)
        deposits.extend(digests)

    if not deposits:
        return AttackResult("pms_pairing", 0.0, 0.0, [], {"deposits": 0, "colluding": sorted(colluding)})
    # toy seals are deterministic, so without relays equal rows can share a digest
    senders = np.asarray(direct if R == 0 else _deposit_senders(run, deposits))
    # deposits usually share a few candidate sets; store each distinct one once
    group_of, sets = {}, []
    gidx = np.empty(len(cand_sets), dtype=np.int64)
    for i, c in enumerate(cand_sets):
        g = group_of.get(c)
        if g is None:
            g = group_of[c] = len(sets)
            sets.append(c)
        gidx[i] = g
    member = np.zeros((len(sets), n), dtype=bool)
    for g, c in enumerate(sets):
        member[g, list(c)] = True
    sizes = member.sum(axis=1)
    w = np.where(sizes > 0, 1.0 / np.maximum(sizes, 1), 0.0)
    total = len(deposits)
    if len(sets) * n <= 4 * total:
        counts = np.zeros((len(sets), n))
        np.add.at(counts, (gidx, senders), 1.0)

        def score(perm):
            # senders relabelled u -> perm[u]
            return float(w @ (counts * member[:, perm]).sum(axis=1)) / total
    else:
        wi = w[gidx]

        def score(perm):
            return float(wi @ member[gidx, perm[senders]]) / total

    success = score(np.arange(n))
    rng = _shuffle_rng(seed, 6)
    chance = float(np.mean([score(rng.permutation(n)) for _ in range(shuffles)])) if shuffles else 0.0
    per_deposit = sizes[gidx]
    distinct = Counter(per_deposit.tolist())
    notes = {"deposits": total, "colluding": sorted(colluding), "route_length": R,
             "set_sizes": {str(k): distinct[k] for k in sorted(distinct)}}
    return AttackResult("pms_pairing", success, chance, per_deposit.tolist(), notes)


def _deposit_senders(run, deposits) -> list[int]:
    """True sender of each deposit, replayed through every proxy's notes (scoring only)."""
    maps = [_transform_map(p) for p in run.proxies]
    sent = run.truth.momentary["sent"]
    out = []
    for d in deposits:
        for m in reversed(maps):
            d = m[d]
        out.append(sent[d])
    return out


# --- verdicts -----------------------------------------------------------

@dataclass
class NotionResult:
    """The attack on one notion: the attacker alone, and at best with one helper."""

    own: AttackResult
    coalition: AttackResult | None = None


def verdict(result: NotionResult, population: int, thresholds: Thresholds = Thresholds()) -> Verdict:
    """Map attack numbers to a verdict.

    In order: near-certain identification is NO; bounded anonymity sets or
    above-chance success from the attacker's own view is PARTIAL; success
    that needs one more party and stays below ``almost_max`` is ALMOST; a
    coalition doing better than that is PARTIAL; anything else is YES.
    """
    th = thresholds
    own = result.own
    if own.success_rate >= th.no_min:
        return Verdict.NO
    if own.anonymity_sets and statistics.median(own.anonymity_sets) < population * th.bounded_fraction:
        return Verdict.PARTIAL
    if own.success_rate > own.chance_level + th.yes_margin:
        return Verdict.PARTIAL
    co = result.coalition
    if co is not None:
        if co.chance_level + th.yes_margin < co.success_rate < th.almost_max:
            return Verdict.ALMOST
        if co.success_rate >= th.almost_max:
            return Verdict.PARTIAL
    return Verdict.YES


def expected_row(variant: Variant) -> dict | None:
    """Expected verdicts for ``variant``; noise is a POLLING option and shares its row."""
    return EXPECTED.get(Variant.POLLING if variant is Variant.POLLING_NOISE else variant)


@dataclass
class PrivacyMatrix:
    verdicts: dict                      # variant -> notion -> Verdict

    @property
    def expected(self) -> dict:
        return {v: expected_row(v) for v in self.verdicts if expected_row(v) is not None}

    def diff(self) -> list[tuple[Variant, str, Verdict, Verdict]]:
        out = []
        for v, exp in self.expected.items():
            for n in NOTIONS:
                if self.verdicts[v][n] is not exp[n]:
                    out.append((v, n, self.verdicts[v][n], exp[n]))
        return out

    @property
    def matches(self) -> bool:
        return not self.diff() and len(self.expected) == len(self.verdicts)

    def to_record(self) -> dict:
        return {v.value: {n: self.verdicts[v][n].value for n in NOTIONS} for v in self.verdicts}

    def render(self, *, with_expected: bool = True) -> str:
        return render_matrix(self.to_record(), {v.value: {n: e[n].value for n in NOTIONS}
                                                for v, e in self.expected.items()} if with_expected else {})


def render_matrix(verdicts: Mapping[str, Mapping[str, str]], expected: Mapping | None = None) -> str:
    """Aligned text table, one row per variant; mismatches show the expected verdict."""
    expected = expected or {}
    head = ["variant", *NOTIONS]
    rows = []
    for v, row in verdicts.items():
        cells = [v]
        for n in NOTIONS:
            got, want = row[n], expected.get(v, {}).get(n)
            cells.append(got if want in (None, got) else f"{got} (want {want})")
        rows.append(cells)
    widths = [max(len(r[i]) for r in [head, *rows]) for i in range(len(head))]

    def line(cells):
        return "  ".join(c.ljust(w) for c, w in zip(cells, widths)).rstrip()

    return "\n".join([line(head), line(["-" * w for w in widths]), *map(line, rows)])


def build_privacy_matrix(results: Mapping, population: int, thresholds: Thresholds = Thresholds(), *,
                         variants: Sequence[Variant] | None = None) -> PrivacyMatrix:
    """``results[(variant, notion)]`` is a :class:`NotionResult`; every cell must be covered."""
    if variants is None:
        variants = list(dict.fromkeys(v for v, _ in results)) or list(TABLE_VARIANTS)
    missing = [(v.value, n) for v in variants for n in NOTIONS if (v, n) not in results]
    if missing:
        raise CompletenessError(f"no attack result for {len(missing)} cell(s), e.g. {missing[0]}")
    verdicts = {v: {n: verdict(results[(v, n)], population, thresholds) for n in NOTIONS} for v in variants}
    return PrivacyMatrix(verdicts)


def attack_suite(run: ProtocolRun, *, sensors: tuple[SnooperConfig, list[int]] | None = None,
                 shuffles: int = SHUFFLES, seed: int = 0, track_window: int = 3,
                 pool_size: int = 3) -> dict[str, NotionResult]:
    """Run every attack against one executed protocol run."""
    world = run.world
    if sensors is None:
        sensors = build_sensor_log(world, run.schedules)
    cfg, owners = sensors
    out = {"snooper": NotionResult(snooper_track(cfg, run.params, owners=owners, track_window=track_window,
                                                 shuffles=shuffles, seed=seed))}
    out["contact-exposed"] = NotionResult(contact_exposure_leak(run, shuffles=shuffles, seed=seed))
    out["contact-diagnosed"] = NotionResult(contact_inference(run, shuffles=shuffles, seed=seed))
    side = side_info(run, pool_size=pool_size, seed=seed)
    for notion, targets in (("authority-exposed", "exposed"), ("authority-diagnosed", "diagnosed")):
        own = authority_linkage(run, (), targets=targets, sensors=cfg, side=side, shuffles=shuffles, seed=seed)
        best = None
        for h in helper_servers(run):
            r = authority_linkage(run, [h], targets=targets, side=side, shuffles=shuffles, seed=seed)
            if best is None or r.success_rate > best.success_rate:
                best = r
        out[notion] = NotionResult(own, best)
    return out
