"""Slot-stepped message passing between actors.

A message sent during slot ``s`` is delivered at ``s + 1``.  Within a slot,
deliveries run first (in send order), then timers ordered by
``(priority, registration order)``.  Every message is appended to the
sender's and the receiver's :class:`View`; views are the only thing the
adversary module gets to read.
"""

from __future__ import annotations

import enum
import heapq
import itertools
import json
from collections import Counter
from collections.abc import Callable, Iterator
from dataclasses import dataclass, field, fields, is_dataclass
from typing import Any

from ..errors import ProtocolError


class Origin(enum.Enum):
    """Whether ``src`` is the message's originator or only the last relay."""

    VISIBLE_SOURCE = "VISIBLE_SOURCE"
    MIXED = "MIXED"


@dataclass(slots=True)
class NetMessage:
    """``src`` is always the sending actor; for MIXED messages that is a relay."""

    msg_id: int
    kind: str
    src: str
    dest: str
    payload: Any
    slot: int
    origin: Origin = Origin.VISIBLE_SOURCE
    reply_to: int | None = None
    size: int = 0


@dataclass(frozen=True, slots=True)
class ViewRecord:
    slot: int
    direction: str  # "in" or "out"
    msg: NetMessage


def _plain(obj):
    """Render payloads as JSON-friendly values (bytes and tokens become hex)."""
    if isinstance(obj, (bytes, bytearray)):
        return bytes(obj).hex()
    if isinstance(obj, enum.Enum):
        return obj.value
    if hasattr(obj, "value") and isinstance(getattr(obj, "value"), bytes) and hasattr(obj, "kind"):
        return obj.value.hex()
    if is_dataclass(obj):
        return {f.name: _plain(getattr(obj, f.name)) for f in fields(obj) if not f.name.startswith("_")}
    if isinstance(obj, dict):
        return {str(_plain(k)): _plain(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple, set, frozenset)):
        items = [_plain(x) for x in obj]
        return sorted(items, key=repr) if isinstance(obj, (set, frozenset)) else items
    return obj


@dataclass
class View:
    """Everything one actor has sent or received, in order.

    ``extra`` holds state the actor derived locally that is not a message,
    such as a proxy's record of which input became which output.
    """

    actor: str
    records: list = field(default_factory=list)
    extra: dict = field(default_factory=dict)

    def __len__(self):
        return len(self.records)

    def __iter__(self) -> Iterator[ViewRecord]:
        return iter(self.records)

    def inbound(self, kind: str | None = None) -> list[NetMessage]:
        return [r.msg for r in self.records if r.direction == "in" and (kind is None or r.msg.kind == kind)]

    def outbound(self, kind: str | None = None) -> list[NetMessage]:
        return [r.msg for r in self.records if r.direction == "out" and (kind is None or r.msg.kind == kind)]

    def to_lines(self) -> Iterator[str]:
        for r in self.records:
            m = r.msg
            yield json.dumps({
                "actor": self.actor, "slot": r.slot, "dir": r.direction, "id": m.msg_id,
                "kind": m.kind, "src": m.src, "dest": m.dest, "origin": m.origin.value,
                "reply_to": m.reply_to, "size": m.size, "payload": _plain(m.payload),
            }, separators=(",", ":"))


class Engine:
    """Discrete-event loop keyed on ``(slot, phase, priority, seq)``."""

    DELIVERY = 0
    TIMER = 1

    def __init__(self):
        self._heap: list = []
        self._seq = itertools.count()
        self.now = 0

    def at(self, slot: int, priority: int, fn: Callable, *args):
        if slot < self.now:
            raise ProtocolError(f"cannot schedule at slot {slot}, already at {self.now}")
        heapq.heappush(self._heap, (slot, self.TIMER, priority, next(self._seq), fn, args))

    def _deliver_at(self, slot: int, fn: Callable, *args):
        heapq.heappush(self._heap, (slot, self.DELIVERY, 0, next(self._seq), fn, args))

    def run(self, until: int | None = None) -> int:
        """Process events up to and including slot ``until``; returns events handled."""
        n = 0
        heap = self._heap
        while heap and (until is None or heap[0][0] <= until):
            slot, _, _, _, fn, args = heapq.heappop(heap)
            self.now = slot
            fn(*args)
            n += 1
        if until is not None:
            self.now = max(self.now, until)
        return n

    def pending(self) -> int:
        return len(self._heap)

    def in_flight(self) -> int:
        """Messages sent but not yet delivered."""
        return sum(1 for e in self._heap if e[1] == self.DELIVERY)


class Actor:
    """Base for anything with an address and a view."""

    def __init__(self, address: str):
        self.address = address
        self.view = View(address)
        self.net: Network | None = None

    def on_message(self, msg: NetMessage):  # pragma: no cover - overridden
        raise ProtocolError(f"{self.address} cannot handle {msg.kind}")


class Network:
    def __init__(self, engine: Engine):
        self.engine = engine
        self.actors: dict[str, Actor] = {}
        self._ids = itertools.count(1)
        self.sent = Counter()
        self.received = Counter()
        self.bytes_sent = Counter()
        self.bytes_received = Counter()
        self.by_kind = Counter()
        self.origins: dict[int, int] = {}  # msg id -> user id, kept for ground truth only

    def attach(self, actor: Actor) -> Actor:
        if actor.address in self.actors:
            raise ProtocolError(f"duplicate actor address {actor.address}")
        self.actors[actor.address] = actor
        actor.net = self
        return actor

    def send(self, sender: Actor, dest: str, kind: str, payload: Any, *, origin: Origin = Origin.VISIBLE_SOURCE,
             reply_to: int | None = None, size: int = 0, user: int | None = None) -> NetMessage:
        if dest not in self.actors:
            raise ProtocolError(f"unknown destination {dest}")
        now = self.engine.now
        msg = NetMessage(next(self._ids), kind, sender.address, dest, payload, now, origin, reply_to, size)
        sender.view.records.append(ViewRecord(now, "out", msg))
        self.sent[sender.address] += 1
        self.bytes_sent[sender.address] += size
        self.by_kind[kind] += 1
        if user is not None:
            self.origins[msg.msg_id] = user
        self.engine._deliver_at(now + 1, self._deliver, msg)
        return msg

    def _deliver(self, msg: NetMessage):
        actor = self.actors[msg.dest]
        actor.view.records.append(ViewRecord(self.engine.now, "in", msg))
        self.received[msg.dest] += 1
        self.bytes_received[msg.dest] += msg.size
        actor.on_message(msg)
