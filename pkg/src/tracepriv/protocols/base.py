"""Pieces shared by every protocol variant.

A :class:`ProtocolRun` binds one variant to one :class:`~tracepriv.simworld.World`:
it creates the actors, installs the daily timers and diagnosis events, runs
the engine past the horizon, and exposes the resulting views.  Ground truth
that the attacks must not see (who sent which message, which address is
whose) lives in :class:`Truth`, which is handed only to scoring code.

Daily schedule (``spd`` slots per day)::

    slot 0          day start: PMS status sends
    spd - 4         public database publication
    spd - 3         polls, mailbox fetches, database downloads
    spd - 2         mixing servers flush to the authority
"""

from __future__ import annotations

import bisect
import enum
import gc
import hashlib
import math
from dataclasses import dataclass, field

import numpy as np

from ..common import ReportKind, ReportMode
from ..cryptobox import Scheme
from ..errors import ParameterError, ProtocolError
from ..simworld import World
from ..tokens import STREAM_NOISE, random_tokens, token_at
from .network import Actor, Engine, Network

AUTHORITY = "authority"

PRIO_REGISTER = 1
PRIO_DIAGNOSIS = 2
PRIO_DAY_START = 3
PRIO_PUBLISH = 4
PRIO_POLL = 5
PRIO_FLUSH = 6
PRIO_END_OF_SLOT = 9


class Variant(enum.Enum):
    CENTRAL = "CENTRAL"
    POLLING = "POLLING"
    POLLING_NOISE = "POLLING_NOISE"
    POLLING_MIX = "POLLING_MIX"
    PUBDB = "PUBDB"
    PMS = "PMS"


# The five systems compared side by side; POLLING_NOISE is a POLLING option.
TABLE_VARIANTS = (Variant.CENTRAL, Variant.POLLING, Variant.POLLING_MIX, Variant.PUBDB, Variant.PMS)


@dataclass(frozen=True)
class MixConfig:
    server_count: int = 3
    colluding: frozenset = frozenset()

    def __post_init__(self):
        if self.server_count < 1:
            raise ParameterError("server_count must be >= 1")
        object.__setattr__(self, "colluding", frozenset(self.colluding))
        bad = [i for i in self.colluding if not 0 <= i < self.server_count]
        if bad:
            raise ParameterError(f"colluding servers {bad} outside 0..{self.server_count - 1}")


@dataclass(frozen=True)
class VariantConfig:
    """Protocol knobs.  ``noise_count`` of ``None`` means 100 for POLLING_NOISE, else 0."""

    variant: Variant = Variant.POLLING
    report_mode: ReportMode = ReportMode.OWN_TOKENS
    noise_count: int | None = None
    mix: MixConfig = field(default_factory=MixConfig)
    batch_size: int = 50
    route_length: int = 2
    send_days: int | None = None
    poll_interval_days: int = 1
    drain_days: int = 3
    scheme: Scheme = Scheme.TOY_DETERMINISTIC

    def __post_init__(self):
        if not isinstance(self.variant, Variant):
            raise ParameterError(f"unknown variant {self.variant!r}")
        if not isinstance(self.report_mode, ReportMode):
            raise ParameterError(f"unknown report mode {self.report_mode!r}")
        if self.noise_count is not None and self.noise_count < 0:
            raise ParameterError("noise_count must be >= 0")
        if self.batch_size < 1:
            raise ParameterError("batch_size must be >= 1")
        if not 0 <= self.route_length <= 4:
            raise ParameterError("route_length must lie in 0..4")
        if self.send_days is not None and self.send_days < 1:
            raise ParameterError("send_days must be >= 1")
        if self.poll_interval_days < 1 or self.drain_days < 0:
            raise ParameterError("poll_interval_days must be >= 1 and drain_days >= 0")

    @property
    def noise(self) -> int:
        if self.noise_count is not None:
            return self.noise_count
        return 100 if self.variant is Variant.POLLING_NOISE else 0

    def with_variant(self, variant: Variant, **kw) -> VariantConfig:
        from dataclasses import replace
        return replace(self, variant=variant, **kw)


@dataclass(frozen=True)
class DiagnosisReport:
    mode: ReportMode
    tokens: tuple
    kind: ReportKind = ReportKind.CONFIRMED
    noise_count: int = 0


class ExposureStatus(enum.Enum):
    EXPOSED = "EXPOSED"
    NOT_EXPOSED = "NOT_EXPOSED"


@dataclass(frozen=True)
class ExposureResult:
    status: ExposureStatus
    confirmed: bool = False
    self_reported: bool = False
    slot: int | None = None

    @property
    def exposed(self) -> bool:
        return self.status is ExposureStatus.EXPOSED


NOT_EXPOSED = ExposureResult(ExposureStatus.NOT_EXPOSED)


@dataclass(frozen=True)
class Signal:
    """Something a user's own device learned that points at a diagnosed contact.

    ``kind`` is ``"binary"`` for a bare exposed/not-exposed answer, or
    ``"window"`` when it is tied to one of the user's own refresh windows
    (a matched token or a mailbox message).  ``window`` is the slot range the
    user knows the contact happened in.  ``ref`` identifies the matched
    token or mailbox.
    """

    slot: int
    kind: str
    window: tuple
    ref: bytes = b""


@dataclass
class Truth:
    """Ground truth kept away from the adversary; used only for scoring."""

    address_of: dict
    user_of: dict
    origins: dict
    token_owner: dict = field(default_factory=dict)
    deposits: list = field(default_factory=list)  # (deposit digest, sender user, mailbox id)
    mailbox_owner: dict = field(default_factory=dict)
    momentary: dict = field(default_factory=dict)


def device_address(seed: int, uid: int) -> str:
    h = hashlib.blake2b(f"{seed}:{uid}".encode(), digest_size=8, person=b"device-addr").hexdigest()
    return "dev-" + h


class UserClient(Actor):
    """A phone running the app: its token schedule, contact log and exposure state."""

    def __init__(self, run: ProtocolRun, uid: int, address: str):
        super().__init__(address)
        self.run = run
        self.uid = uid
        self.schedule = run.schedules[uid]
        self.log = run.logs[uid]
        self._slots = [s for s, _ in self.log.entries]
        self.result = NOT_EXPOSED
        self.first_exposed: int | None = None
        self.signals: list[Signal] = []
        self.diagnosed_at: int | None = None
        self._noise_rng = None

    # --- local data -------------------------------------------------

    def entries(self, lo: int, hi: int):
        """Log entries with ``lo <= slot <= hi``."""
        i = bisect.bisect_left(self._slots, lo)
        j = bisect.bisect_right(self._slots, hi)
        return self.log.entries[i:j]

    def contact_tokens(self, lo: int, hi: int) -> list[bytes]:
        return list(dict.fromkeys(t.value for _, t in self.entries(lo, hi)))

    def exchanged_own_tokens(self, lo: int, hi: int) -> list[bytes]:
        """Own tokens broadcast at slots where some contact was recorded."""
        sched = self.schedule
        return list(dict.fromkeys(sched.raw_at(s) for s, _ in self.entries(lo, hi)))

    def noise_rng(self) -> np.random.Generator:
        if self._noise_rng is None:
            seed = self.run.world.cfg.seed
            self._noise_rng = np.random.default_rng(np.random.SeedSequence([seed & (2**64 - 1), self.uid, STREAM_NOISE]))
        return self._noise_rng

    def lookback(self, slot: int) -> tuple[int, int]:
        return max(0, slot - self.run.lookback + 1), min(slot, self.run.world.horizon - 1)

    # --- exposure bookkeeping ------------------------------------------

    def note(self, slot: int, confirmed: bool, self_reported: bool):
        """Fold in one answer.  EXPOSED is sticky: a later miss does not clear it."""
        r = self.result
        c = r.confirmed or bool(confirmed)
        s = r.self_reported or bool(self_reported)
        if c or s:
            if self.first_exposed is None:
                self.first_exposed = slot
            self.result = ExposureResult(ExposureStatus.EXPOSED, c, s, slot)
        else:
            self.result = ExposureResult(ExposureStatus.NOT_EXPOSED, False, False, slot)

    def signal(self, sig: Signal):
        self.signals.append(sig)

    def on_diagnosed(self, slot: int):
        self.diagnosed_at = slot
        report = self.run.build_report(self.uid, slot)
        self.run.report_diagnosis(self.uid, report, slot)


class ProtocolRun:
    """One variant executed over one world."""

    variant: Variant = Variant.POLLING
    client_class = UserClient
    uses_polls = True

    def __init__(self, world: World, cfg: VariantConfig | None = None):
        cfg = cfg or VariantConfig(self.variant)
        if cfg.variant is not self.variant and not (self.variant is Variant.POLLING and cfg.variant is Variant.POLLING_NOISE):
            raise ParameterError(f"{type(self).__name__} cannot run variant {cfg.variant.value}")
        self.world = world
        self.cfg = cfg
        self.params = world.params
        self.spd = world.cfg.slots_per_day
        self.lookback = self.params.exposure_window + 2 * self.spd
        self.end_day = world.cfg.horizon_days + cfg.drain_days
        self.engine = Engine()
        self.net = Network(self.engine)
        self.schedules, self.logs = self.make_schedules()
        seed = world.cfg.seed
        self.clients: list[UserClient] = []
        address_of = {}
        for uid in range(world.population):
            addr = device_address(seed, uid)
            address_of[uid] = addr
            self.clients.append(self.net.attach(self.client_class(self, uid, addr)))
        if len(set(address_of.values())) != len(address_of):
            raise ProtocolError("device address collision")
        self.truth = Truth(address_of, {a: u for u, a in address_of.items()}, self.net.origins)
        self.servers: dict[str, Actor] = {}
        self.crypto_ops = 0
        self.setup()
        self._executed = False

    # --- hooks --------------------------------------------------------

    def make_schedules(self):
        return self.world.schedules, self.world.logs

    def setup(self):
        raise NotImplementedError

    def add_server(self, actor: Actor) -> Actor:
        self.servers[actor.address] = actor
        return self.net.attach(actor)

    def register(self, uid: int):
        """Registration step; most variants send nothing."""

    def build_report(self, uid: int, slot: int) -> DiagnosisReport:
        raise NotImplementedError

    def report_diagnosis(self, uid: int, report: DiagnosisReport, slot: int):
        raise NotImplementedError

    def poll(self, uid: int, slot: int):
        """Start an exposure check for ``uid``; the answer arrives later."""

    def on_day_start(self, day: int):
        pass

    def on_publish(self, day: int):
        pass

    def on_flush(self, day: int):
        pass

    # --- driving ---------------------------------------------------------

    def _check_diagnosed(self, uid: int, slot: int):
        if not self.world.timeline.is_diagnosed(uid, slot):
            raise ProtocolError(f"user {uid} is not diagnosed at slot {slot}")

    def _poll_all(self, day: int):
        slot = self.engine.now
        for c in self.clients:
            self.poll(c.uid, slot)

    def install(self):
        eng, spd = self.engine, self.spd
        for uid in range(self.world.population):
            eng.at(0, PRIO_REGISTER, self.register, uid)
        for uid in self.world.timeline.diagnosed():
            d = self.world.timeline.diagnosis_slot[uid]
            eng.at(d, PRIO_DIAGNOSIS, self.clients[uid].on_diagnosed, d)
        for day in range(self.end_day):
            base = day * spd
            eng.at(base, PRIO_DAY_START, self.on_day_start, day)
            eng.at(base + spd - 4, PRIO_PUBLISH, self.on_publish, day)
            if self.uses_polls and day % self.cfg.poll_interval_days == 0:
                eng.at(base + spd - 3, PRIO_POLL, self._poll_all, day)
            eng.at(base + spd - 2, PRIO_FLUSH, self.on_flush, day)

    def execute(self) -> ProtocolRun:
        if self._executed:
            return self
        self.install()
        # runs allocate millions of long-lived, acyclic objects; the cyclic
        # collector only rescans them, so it is paused for the event loop
        paused = gc.isenabled()
        gc.disable()
        try:
            self.engine.run(self.end_day * self.spd - 1)
        finally:
            if paused:
                gc.enable()
        self._executed = True
        return self

    def close(self):
        """Drop the run's internal back-references so it is freed without the cyclic collector.

        The run is unusable afterwards; the harness calls this once reports
        and views are written.
        """
        for actor in self.net.actors.values():
            actor.__dict__.pop("run", None)
            actor.net = None
        self.net.actors.clear()
        self.engine._heap.clear()
        self.__dict__.clear()

    # --- results ---------------------------------------------------------

    def status(self, uid: int) -> ExposureResult:
        return self.clients[uid].result

    def exposed_set(self) -> set[int]:
        diagnosed = set(self.world.timeline.diagnosed())
        return {c.uid for c in self.clients if c.result.exposed} - diagnosed

    def views(self) -> dict:
        return {a: actor.view for a, actor in self.net.actors.items()}

    def server_views(self) -> dict:
        return {a: actor.view for a, actor in self.servers.items()}

    def user_view(self, uid: int):
        return self.clients[uid].view

    def metrics(self) -> dict:
        net = self.net
        return {
            "messages": sum(net.sent.values()),
            "bytes": sum(net.bytes_sent.values()),
            "by_kind": dict(sorted(net.by_kind.items())),
            "server_count": len(self.servers),
            "crypto_ops": self.crypto_ops,
            "storage": self.storage(),
        }

    def storage(self) -> int:
        return 0

    def fill_token_owners(self):
        """Record which user broadcast each exchanged token (scoring only)."""
        owner = self.truth.token_owner
        if owner:
            return owner
        sched = self.schedules
        r = self.world.cfg.proximity_radius
        for e in self.world.events:
            if e.distance <= r:
                owner[sched[e.a].raw_at(e.slot)] = e.a
                owner[sched[e.b].raw_at(e.slot)] = e.b
        return owner

    def token_at(self, uid: int, slot: int):
        return token_at(self.schedules[uid], slot)


def noise_tokens(client: UserClient, count: int) -> list[bytes]:
    return random_tokens(count, client.run.params, client.noise_rng()) if count else []


def token_bytes(n_tokens: int, params) -> int:
    return n_tokens * params.nbytes


def ceil_div(a: int, b: int) -> int:
    return -(-a // b) if a else 0


def log2_ceil(n: int) -> int:
    return 0 if n <= 1 else math.ceil(math.log2(n))
