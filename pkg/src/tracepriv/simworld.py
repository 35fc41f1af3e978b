"""Ground-truth world: people, meetings, infections, token exchange.

Mobility is a gatherings process.  Each day a Poisson number of small
gatherings happens at public places; everybody present at a gathering is at
a random pairwise distance, and pairs within ``proximity_radius`` swap
tokens.  The gathering rate is chosen so that each user takes part in
``contacts_per_day`` pairwise encounters per day on average (in range or
not).

Nothing here knows about protocols.  Protocol runs take a :class:`World`
and read from it only what a device could sense (its own log) plus what the
authority would learn by diagnosis (via the timeline).
"""

from __future__ import annotations

import csv
import enum
from collections import defaultdict
from collections.abc import Iterable, Mapping, Sequence
from dataclasses import dataclass, field
from typing import Any

import numpy as np

from .common import ReportKind
from .errors import ConsistencyError, ParameterError
from .tokens import ContactLog, Token, TokenParams, TokenSchedule, generate_schedule

DEFAULT_RADIUS = 1.83  # six feet

STREAM_MOBILITY = 0x3B01
STREAM_HEALTH = 0x3B02


class Mobility(enum.Enum):
    PAIRWISE_SCRIPTED = "PAIRWISE_SCRIPTED"
    RANDOM_MIXING = "RANDOM_MIXING"
    CLUSTERED = "CLUSTERED"


@dataclass(frozen=True, slots=True)
class UserId:
    id: int
    phone_number: str


def phone_number(uid: int, seed: int = 0) -> str:
    # 7919 is coprime to 10**7, so numbers are unique below ten million users
    return f"+1-555-{(uid * 7919 + seed) % 10**7:07d}"


@dataclass(frozen=True, slots=True)
class ContactEvent:
    a: int
    b: int
    slot: int
    distance: float
    place: int = -1

    def in_range(self, radius: float) -> bool:
        return self.distance <= radius


@dataclass(frozen=True)
class ScenarioConfig:
    """Everything needed to regenerate a world.

    ``meetings`` and ``infections`` are only read by the scripted mobility
    model.  A meeting is ``(a, b, slot, distance)`` with an optional fifth
    place field.  An infection is ``(user, infection_slot)`` optionally
    followed by an explicit diagnosis slot and a report kind.
    ``variant`` is carried opaquely for the protocol layer.
    """

    population: int = 200
    horizon_days: int = 30
    seed: int = 0
    mobility: Mobility = Mobility.RANDOM_MIXING
    proximity_radius: float = DEFAULT_RADIUS
    initial_infected: int = 8
    contacts_per_day: float = 3.0
    transmission_prob: float = 0.0
    diagnosis_delay_days: float = 5.0
    self_report_fraction: float = 0.2
    mean_gathering_size: float = 4.0
    place_count: int = 12
    max_distance: float = 3.0
    group_size: int = 10
    within_group_prob: float = 0.8
    day_start_hour: int = 8
    day_end_hour: int = 20
    meetings: tuple = ()
    infections: tuple = ()
    tokens: TokenParams = field(default_factory=TokenParams)
    variant: Any = None

    def __post_init__(self):
        ints = ("population", "horizon_days", "place_count", "group_size")
        for name in ints:
            v = getattr(self, name)
            if not isinstance(v, (int, np.integer)) or isinstance(v, bool) or v < 1:
                raise ParameterError(f"{name} must be a positive integer, got {v!r}")
        if not isinstance(self.mobility, Mobility):
            raise ParameterError(f"unknown mobility model {self.mobility!r}")
        if not self.proximity_radius > 0:
            raise ParameterError("proximity_radius must be > 0")
        if self.initial_infected < 0 or self.initial_infected > self.population:
            raise ParameterError("initial_infected must lie in [0, population]")
        if self.contacts_per_day < 0:
            raise ParameterError("contacts_per_day must be >= 0")
        for name in ("transmission_prob", "self_report_fraction", "within_group_prob"):
            if not 0.0 <= getattr(self, name) <= 1.0:
                raise ParameterError(f"{name} must lie in [0, 1]")
        if self.mean_gathering_size < 2:
            raise ParameterError("mean_gathering_size must be >= 2")
        if self.max_distance <= 0 or self.diagnosis_delay_days < 0:
            raise ParameterError("max_distance must be > 0 and diagnosis_delay_days >= 0")
        if not 0 <= self.day_start_hour < self.day_end_hour <= 24:
            raise ParameterError("day hours must satisfy 0 <= start < end <= 24")
        if not isinstance(self.tokens, TokenParams):
            raise ParameterError("tokens must be a TokenParams")

    @property
    def slots_per_day(self) -> int:
        return self.tokens.slots_per_day

    @property
    def horizon(self) -> int:
        return self.horizon_days * self.slots_per_day

    @property
    def diagnosis_delay(self) -> int:
        return int(round(self.diagnosis_delay_days * self.slots_per_day))


def _rng(seed: int, stream: int) -> np.random.Generator:
    return np.random.default_rng(np.random.SeedSequence([seed & (2**64 - 1), stream]))


def _zipf_weights(n: int) -> np.ndarray:
    w = 1.0 / np.arange(1, n + 1)
    return w / w.sum()


def users(cfg: ScenarioConfig) -> list[UserId]:
    return [UserId(u, phone_number(u, cfg.seed)) for u in range(cfg.population)]


def _scripted(cfg: ScenarioConfig) -> list[ContactEvent]:
    out = []
    for m in cfg.meetings:
        a, b, slot, dist = m[:4]
        place = m[4] if len(m) > 4 else -1
        if a == b:
            raise ParameterError(f"meeting {m!r} pairs a user with themselves")
        for u in (a, b):
            if not 0 <= u < cfg.population:
                raise ParameterError(f"meeting {m!r} names unknown user {u}")
        if not 0 <= slot < cfg.horizon:
            raise ParameterError(f"meeting {m!r} lies outside the horizon")
        if dist < 0:
            raise ParameterError(f"meeting {m!r} has a negative distance")
        out.append(ContactEvent(int(a), int(b), int(slot), float(dist), int(place)))
    return out


def _gatherings(cfg: ScenarioConfig) -> list[ContactEvent]:
    rng = _rng(cfg.seed, STREAM_MOBILITY)
    n = cfg.population
    spd = cfg.slots_per_day
    lam = cfg.mean_gathering_size - 2
    pairs_per_gathering = lam + (2 + lam) * (1 + lam)  # E[k(k-1)], k = 2 + Poisson(lam)
    rate = n * cfg.contacts_per_day / pairs_per_gathering
    lo = cfg.day_start_hour * spd // 24
    hi = cfg.day_end_hour * spd // 24
    place_w = _zipf_weights(cfg.place_count)
    clustered = cfg.mobility is Mobility.CLUSTERED
    groups = [np.arange(g, min(g + cfg.group_size, n)) for g in range(0, n, cfg.group_size)]
    events = []
    for day in range(cfg.horizon_days):
        count = rng.poisson(rate) if n >= 2 else 0
        for _ in range(count):
            size = min(2 + int(rng.poisson(lam)), n)
            if clustered and rng.random() < cfg.within_group_prob:
                g = int(rng.integers(len(groups)))
                pool = groups[g]
                if len(pool) < 2:
                    continue
                who = rng.choice(pool, size=min(size, len(pool)), replace=False)
                place = g % cfg.place_count
            else:
                who = rng.choice(n, size=size, replace=False)
                place = int(rng.choice(cfg.place_count, p=place_w))
            slot = day * spd + int(rng.integers(lo, hi))
            k = len(who)
            dists = rng.uniform(0.0, cfg.max_distance, size=k * (k - 1) // 2)
            i = 0
            for x in range(k):
                for y in range(x + 1, k):
                    a, b = int(who[x]), int(who[y])
                    if a > b:
                        a, b = b, a
                    events.append(ContactEvent(a, b, slot, float(dists[i]), place))
                    i += 1
    events.sort(key=lambda e: (e.slot, e.a, e.b))
    return events


def generate_contacts(cfg: ScenarioConfig) -> list[ContactEvent]:
    """Contact events for the whole horizon, sorted by slot."""
    if cfg.population < 1:
        raise ParameterError("population must be positive")
    if cfg.mobility is Mobility.PAIRWISE_SCRIPTED:
        return _scripted(cfg)
    return _gatherings(cfg)


def exchange_tokens(events: Iterable[ContactEvent], schedules: Mapping[int, TokenSchedule] | Sequence[TokenSchedule],
                    radius: float = DEFAULT_RADIUS, horizon: int | None = None) -> dict[int, ContactLog]:
    """Fill every user's contact log from in-range events."""
    if isinstance(schedules, Mapping):
        sched = dict(schedules)
    else:
        sched = {s.owner: s for s in schedules}
    if not sched:
        raise ConsistencyError("no schedules supplied")
    any_s = next(iter(sched.values()))
    bits = any_s.params.bit_length
    if horizon is None:
        horizon = any_s.horizon
    logs = {u: ContactLog(u, bits, horizon) for u in sched}
    for e in events:
        if e.distance > radius:
            continue
        try:
            sa, sb = sched[e.a], sched[e.b]
        except KeyError as exc:
            raise ConsistencyError(f"no schedule for user {exc.args[0]}") from None
        logs[e.a].add(Token(sb.raw_at(e.slot), sb.kind), e.slot)
        logs[e.b].add(Token(sa.raw_at(e.slot), sa.kind), e.slot)
    return logs


@dataclass
class HealthTimeline:
    """Per-user infection and diagnosis slots (``None`` when absent)."""

    infection_slot: list
    diagnosis_slot: list
    contagious_from: list
    report_kind: list

    def __len__(self):
        return len(self.infection_slot)

    def diagnosed(self) -> list[int]:
        return [u for u, d in enumerate(self.diagnosis_slot) if d is not None]

    def is_diagnosed(self, user: int, slot: int | None = None) -> bool:
        d = self.diagnosis_slot[user]
        return d is not None and (slot is None or d <= slot)

    def report_window(self, user: int, exposure_window: int) -> tuple[int, int] | None:
        """Inclusive slot range whose contacts a diagnosis should notify."""
        d = self.diagnosis_slot[user]
        if d is None:
            return None
        start = max(self.contagious_from[user], d - exposure_window + 1)
        return start, d


def _timeline_from(n, infections, delay, horizon, kinds=None):
    inf = [None] * n
    diag = [None] * n
    kind = [None] * n
    for entry in infections:
        u, s = int(entry[0]), int(entry[1])
        if not 0 <= u < n:
            raise ParameterError(f"infection names unknown user {u}")
        inf[u] = s
        d = int(entry[2]) if len(entry) > 2 and entry[2] is not None else s + delay
        if d < s:
            raise ParameterError(f"diagnosis before infection for user {u}")
        diag[u] = d if d < horizon else None
        if diag[u] is not None:
            k = entry[3] if len(entry) > 3 else ReportKind.CONFIRMED
            kind[u] = ReportKind(k) if not isinstance(k, ReportKind) else k
    return HealthTimeline(inf, diag, list(inf), kind)


def assign_health_timeline(cfg: ScenarioConfig, contacts: Sequence[ContactEvent]) -> HealthTimeline:
    """Seed infections, optionally spread them, and schedule diagnoses."""
    n, horizon, delay = cfg.population, cfg.horizon, cfg.diagnosis_delay
    if cfg.mobility is Mobility.PAIRWISE_SCRIPTED:
        return _timeline_from(n, cfg.infections, delay, horizon)
    rng = _rng(cfg.seed, STREAM_HEALTH)
    inf = [None] * n
    latest = max(horizon - delay - 1, 0)
    for u in rng.choice(n, size=cfg.initial_infected, replace=False):
        inf[int(u)] = int(rng.integers(0, latest + 1))
    if cfg.transmission_prob > 0:
        for e in contacts:
            if e.distance > cfg.proximity_radius:
                continue
            ia, ib = inf[e.a], inf[e.b]
            if ia is not None and ia <= e.slot and ib is None:
                if rng.random() < cfg.transmission_prob:
                    inf[e.b] = e.slot
            elif ib is not None and ib <= e.slot and ia is None:
                if rng.random() < cfg.transmission_prob:
                    inf[e.a] = e.slot
    diag = [None if s is None or s + delay >= horizon else s + delay for s in inf]
    kind_draw = rng.random(n)
    kind = [None if d is None else
            (ReportKind.SELF_REPORTED if kind_draw[u] < cfg.self_report_fraction else ReportKind.CONFIRMED)
            for u, d in enumerate(diag)]
    return HealthTimeline(inf, diag, list(inf), kind)


def exposure_oracle(contacts: Iterable[ContactEvent], timeline: HealthTimeline, params: TokenParams,
                    *, radius: float = DEFAULT_RADIUS) -> set[int]:
    """Brute force: who met a diagnosed user in range during that user's report window."""
    diagnosed = set(timeline.diagnosed())
    windows = {u: timeline.report_window(u, params.exposure_window) for u in diagnosed}
    exposed = set()
    for e in contacts:
        if e.distance > radius:
            continue
        for sick, other in ((e.a, e.b), (e.b, e.a)):
            w = windows.get(sick)
            if w is not None and w[0] <= e.slot <= w[1]:
                exposed.add(other)
    return exposed - diagnosed


def nearby_app_count(events: Iterable[ContactEvent], user: int, slot: int,
                     radius: float = DEFAULT_RADIUS) -> int:
    """Distinct in-range users near ``user`` during ``slot``."""
    near = set()
    for e in events:
        if e.slot != slot or e.distance > radius:
            continue
        if e.a == user:
            near.add(e.b)
        elif e.b == user:
            near.add(e.a)
    return len(near)


def write_contacts(events: Iterable[ContactEvent], fh) -> int:
    """Tab-separated ``a b slot distance place`` lines; returns the row count."""
    w = csv.writer(fh, delimiter="\t", lineterminator="\n")
    w.writerow(["a", "b", "slot", "distance", "place"])
    n = 0
    for e in events:
        w.writerow([e.a, e.b, e.slot, f"{e.distance:.4f}", e.place])
        n += 1
    return n


@dataclass
class World:
    """One generated scenario shared by every protocol variant."""

    cfg: ScenarioConfig
    users: list
    events: list
    timeline: HealthTimeline
    schedules: dict
    logs: dict
    _encounters: dict | None = field(default=None, repr=False)
    _by_user: dict | None = field(default=None, repr=False)

    @property
    def population(self) -> int:
        return self.cfg.population

    @property
    def horizon(self) -> int:
        return self.cfg.horizon

    @property
    def params(self) -> TokenParams:
        return self.cfg.tokens

    def in_range_events(self) -> list[ContactEvent]:
        r = self.cfg.proximity_radius
        return [e for e in self.events if e.distance <= r]

    def oracle(self) -> set[int]:
        return exposure_oracle(self.events, self.timeline, self.params, radius=self.cfg.proximity_radius)

    def encounters(self) -> dict[int, list[tuple[int, int]]]:
        """Each user's diary of ``(slot, partner)``: everyone they shared a gathering with.

        This is a person's own memory of whom they met, which every user
        (and so every attacker) has.  People remember who was around, not
        who stood inside the radius, so out-of-range partners are included.
        """
        if self._encounters is None:
            diary = defaultdict(list)
            for e in self.events:
                diary[e.a].append((e.slot, e.b))
                diary[e.b].append((e.slot, e.a))
            self._encounters = {u: sorted(set(diary.get(u, ()))) for u in range(self.population)}
        return self._encounters

    def events_of(self, user: int) -> list[ContactEvent]:
        if self._by_user is None:
            by = defaultdict(list)
            for e in self.events:
                by[e.a].append(e)
                by[e.b].append(e)
            self._by_user = dict(by)
        return self._by_user.get(user, [])


def build_world(cfg: ScenarioConfig) -> World:
    events = generate_contacts(cfg)
    timeline = assign_health_timeline(cfg, events)
    schedules = {u: generate_schedule(u, cfg.horizon, cfg.tokens, cfg.seed) for u in range(cfg.population)}
    logs = exchange_tokens(events, schedules, cfg.proximity_radius, cfg.horizon)
    return World(cfg, users(cfg), events, timeline, schedules, logs)


def canonical_scenario(meet_slot: int | None = None, population: int = 2, horizon_days: int = 30,
                       tokens: TokenParams | None = None, **kw) -> ScenarioConfig:
    """Alice (0) and Bob (1) meet once at 1 m; Bob falls ill at the meeting and is diagnosed five days later."""
    tokens = tokens or TokenParams()
    spd = tokens.slots_per_day
    t = meet_slot if meet_slot is not None else 3 * spd + spd // 2
    return ScenarioConfig(population=population, horizon_days=horizon_days, mobility=Mobility.PAIRWISE_SCRIPTED,
                          initial_infected=1, meetings=((0, 1, t, 1.0),), infections=((1, t),),
                          tokens=tokens, **kw)
