"""Time-varying proximity tokens.

Every user owns a :class:`TokenSchedule`: one token per refresh window,
drawn uniformly from ``{0,1}^bit_length`` by a generator seeded from
``(seed, owner)``.  Tokens received from nearby users are kept in a
:class:`ContactLog`.

Slots are the unit of simulated time.  Refresh windows are aligned to slot
zero for every user, so window ``w`` covers slots
``[w * refresh_interval, (w + 1) * refresh_interval)``.
"""

from __future__ import annotations

import enum
import math
from collections.abc import Callable, Iterator, Sequence
from dataclasses import dataclass, field

import numpy as np

from .errors import FormatError, ParameterError, SlotRangeError

SECONDS_PER_DAY = 86_400

# SeedSequence stream tags; keep stable, reports depend on them.
STREAM_TOKENS = 0x70C3
STREAM_NOISE = 0x4E01


class TokenKind(enum.Enum):
    RANDOM = "RANDOM"
    PUBLIC_KEY = "PUBLIC_KEY"


@dataclass(frozen=True)
class TokenParams:
    """Token length and timing.

    ``exposure_window`` is in slots; the default is fourteen days of
    five-minute slots.
    """

    bit_length: int = 128
    refresh_interval: int = 3
    slot_duration: int = 300
    exposure_window: int = 14 * 288

    def __post_init__(self):
        if self.bit_length < 64 or self.bit_length % 8:
            raise ParameterError(f"bit_length must be a multiple of 8 and >= 64, got {self.bit_length}")
        if self.bit_length > 512:
            raise ParameterError(f"bit_length above 512 is not supported, got {self.bit_length}")
        for name in ("refresh_interval", "slot_duration", "exposure_window"):
            value = getattr(self, name)
            if not isinstance(value, int) or value < 1:
                raise ParameterError(f"{name} must be a positive integer, got {value!r}")
        if SECONDS_PER_DAY % self.slot_duration:
            raise ParameterError("slot_duration must divide one day evenly")

    @property
    def nbytes(self) -> int:
        return self.bit_length // 8

    @property
    def slots_per_day(self) -> int:
        return SECONDS_PER_DAY // self.slot_duration

    def window_of(self, slot: int) -> int:
        return slot // self.refresh_interval

    def window_slots(self, window: int) -> range:
        start = window * self.refresh_interval
        return range(start, start + self.refresh_interval)


@dataclass(frozen=True, slots=True)
class Token:
    value: bytes
    kind: TokenKind = TokenKind.RANDOM

    def hex(self) -> str:
        return self.value.hex()

    def __str__(self) -> str:
        return self.value.hex()


class TokenSchedule:
    """A user's own tokens, one per refresh window over the horizon.

    ``tokens[w]`` is the raw token of window ``w``.  It may be a lazy
    sequence (key-derived schedules compute entries on first access).
    """

    __slots__ = ("owner", "params", "horizon", "seed", "kind", "tokens")

    def __init__(self, owner: int, params: TokenParams, horizon: int, seed: int,
                 tokens: Sequence[bytes], kind: TokenKind = TokenKind.RANDOM):
        self.owner = owner
        self.params = params
        self.horizon = horizon
        self.seed = seed
        self.kind = kind
        self.tokens = tokens

    def __len__(self) -> int:
        return len(self.tokens)

    @property
    def entries(self) -> list[tuple[int, Token]]:
        step = self.params.refresh_interval
        return [(w * step, Token(self.tokens[w], self.kind)) for w in range(len(self.tokens))]

    def raw_at(self, slot: int) -> bytes:
        if not 0 <= slot < self.horizon:
            raise SlotRangeError(f"slot {slot} outside horizon [0, {self.horizon})")
        return self.tokens[slot // self.params.refresh_interval]

    def __eq__(self, other):
        if not isinstance(other, TokenSchedule):
            return NotImplemented
        return (self.owner, self.params, self.horizon, self.kind) == (
            other.owner, other.params, other.horizon, other.kind
        ) and list(self.tokens) == list(other.tokens)

    def __repr__(self):
        return (f"TokenSchedule(owner={self.owner}, windows={len(self.tokens)}, "
                f"kind={self.kind.value})")


class LazyTokens(Sequence):
    """Sequence whose items are produced by ``make(index)`` and memoised."""

    def __init__(self, count: int, make: Callable[[int], bytes]):
        self._count = count
        self._make = make
        self._cache: dict[int, bytes] = {}

    def __len__(self):
        return self._count

    def __getitem__(self, index):
        if isinstance(index, slice):
            return [self[i] for i in range(*index.indices(self._count))]
        if index < 0:
            index += self._count
        if not 0 <= index < self._count:
            raise IndexError(index)
        value = self._cache.get(index)
        if value is None:
            value = self._cache[index] = self._make(index)
        return value


def window_count(horizon: int, params: TokenParams) -> int:
    return math.ceil(horizon / params.refresh_interval)


def _check_horizon(horizon: int):
    if not isinstance(horizon, (int, np.integer)) or horizon < 1:
        raise ParameterError(f"horizon must be >= 1 slot, got {horizon!r}")


def generate_schedule(owner: int, horizon: int, params: TokenParams, seed: int) -> TokenSchedule:
    """Draw ``ceil(horizon / refresh_interval)`` uniform random tokens."""
    if not isinstance(params, TokenParams):
        raise ParameterError("params must be a TokenParams")
    _check_horizon(horizon)
    n = window_count(horizon, params)
    rng = np.random.default_rng(np.random.SeedSequence([seed & (2**64 - 1), owner, STREAM_TOKENS]))
    blob = rng.bytes(n * params.nbytes)
    nb = params.nbytes
    tokens = tuple(blob[i * nb:(i + 1) * nb] for i in range(n))
    return TokenSchedule(owner, params, int(horizon), seed, tokens)


def token_at(schedule: TokenSchedule, slot: int) -> Token:
    """The token broadcast by the schedule's owner during ``slot``."""
    return Token(schedule.raw_at(slot), schedule.kind)


def random_tokens(count: int, params: TokenParams, rng: np.random.Generator) -> list[bytes]:
    """Uniform tokens for noise augmentation; never tied to any schedule."""
    nb = params.nbytes
    blob = rng.bytes(count * nb)
    return [blob[i * nb:(i + 1) * nb] for i in range(count)]


@dataclass
class ContactLog:
    """Tokens received from nearby devices, deduplicated on ``(slot, token)``."""

    owner: int
    bit_length: int = 128
    horizon: int | None = None
    entries: list[tuple[int, Token]] = field(default_factory=list)
    _seen: set = field(default_factory=set, repr=False, compare=False)

    def __post_init__(self):
        if not self._seen and self.entries:
            self._seen = {(s, t.value) for s, t in self.entries}

    def __len__(self):
        return len(self.entries)

    def __iter__(self) -> Iterator[tuple[int, Token]]:
        return iter(self.entries)

    def add(self, token: Token, slot: int) -> bool:
        """In-place append used while a log is being built; returns False on a duplicate."""
        if len(token.value) * 8 != self.bit_length:
            raise FormatError(f"token has {len(token.value) * 8} bits, log expects {self.bit_length}")
        if slot < 0 or (self.horizon is not None and slot >= self.horizon):
            raise SlotRangeError(f"slot {slot} outside horizon")
        key = (slot, token.value)
        if key in self._seen:
            return False
        self._seen.add(key)
        self.entries.append((slot, token))
        return True

    def copy(self) -> ContactLog:
        return ContactLog(self.owner, self.bit_length, self.horizon, list(self.entries), set(self._seen))

    def between(self, lo: int, hi: int) -> list[tuple[int, Token]]:
        """Entries with ``lo <= slot <= hi``."""
        return [(s, t) for s, t in self.entries if lo <= s <= hi]


def record_contact(log: ContactLog, token: Token, slot: int) -> ContactLog:
    """Return a new log with ``(slot, token)`` added; the input is left untouched."""
    updated = log.copy()
    updated.add(token, slot)
    return updated
