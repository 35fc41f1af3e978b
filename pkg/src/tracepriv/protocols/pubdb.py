"""Public database: the authority publishes every reported token in batches.

A batch index is the first ``ceil(log2(batch count))`` bits of a token, so a
device can name the batches it wants without naming any token.  Devices
match their contact tokens locally, which also tells them exactly which
token matched and therefore when they met the diagnosed person.
"""

from __future__ import annotations

from dataclasses import dataclass

from ..common import ReportKind, ReportMode
from .base import (
    AUTHORITY, DiagnosisReport, ProtocolRun, Signal, UserClient, Variant, ceil_div, log2_ceil, token_bytes,
)
from .network import Actor


def batch_index(token: bytes, prefix_bits: int) -> int:
    if prefix_bits == 0:
        return 0
    return int.from_bytes(token[:8], "big") >> (64 - prefix_bits)


@dataclass(frozen=True)
class PubDb:
    batches: tuple
    batch_size: int = 50
    prefix_bits: int = 0
    kind: ReportKind = ReportKind.CONFIRMED
    version: int = 0

    def __len__(self):
        return sum(len(b) for b in self.batches)

    def index_of(self, token: bytes) -> int:
        return batch_index(token, self.prefix_bits)

    def batch(self, index: int) -> tuple:
        return self.batches[index]

    def contains(self, token: bytes) -> bool:
        if not self.batches:
            return False
        return token in self.batches[self.index_of(token)]


def publish_database(tokens, batch_size: int = 50, kind: ReportKind = ReportKind.CONFIRMED,
                     version: int = 0) -> PubDb:
    """Place each distinct token in the batch named by its leading bits."""
    uniq = sorted(set(tokens))
    if not uniq:
        return PubDb((), batch_size, 0, kind, version)
    bits = log2_ceil(ceil_div(len(uniq), batch_size))
    batches = [[] for _ in range(1 << bits)]
    for t in uniq:
        batches[batch_index(t, bits)].append(t)
    return PubDb(tuple(tuple(b) for b in batches), batch_size, bits, kind, version)


class PubDbAuthority(Actor):
    def __init__(self, run):
        super().__init__(AUTHORITY)
        self.run = run
        self.reported = {ReportKind.CONFIRMED: set(), ReportKind.SELF_REPORTED: set()}
        self.published = {k: publish_database((), run.cfg.batch_size, k) for k in self.reported}

    def publish(self, day):
        self.published = {k: publish_database(v, self.run.cfg.batch_size, k, day) for k, v in self.reported.items()}

    def on_message(self, msg):
        p = msg.payload
        if msg.kind == "REPORT":
            self.reported[p["kind"]].update(p["tokens"])
        elif msg.kind == "DOWNLOAD":
            out = {}
            n = 0
            for kind, idx in p["indices"].items():
                db = self.published[kind]
                out[kind] = {i: db.batch(i) for i in idx}
                n += sum(len(b) for b in out[kind].values())
            self.net.send(self, msg.src, "BATCHES", {"batches": out}, reply_to=msg.msg_id,
                          size=token_bytes(n, self.run.params))


class PubDbClient(UserClient):
    def __init__(self, *a):
        super().__init__(*a)
        self.pending = {}
        self.matched: set[bytes] = set()
        self.downloaded = 0

    def on_message(self, msg):
        if msg.kind != "BATCHES":
            return
        wanted = self.pending.pop(msg.reply_to)
        now = self.run.engine.now
        hit = {ReportKind.CONFIRMED: False, ReportKind.SELF_REPORTED: False}
        for kind, batches in msg.payload["batches"].items():
            self.downloaded += len(batches)
            pool = set()
            for b in batches.values():
                pool.update(b)
            for t in wanted:
                if t in pool:
                    hit[kind] = True
                    if t not in self.matched:
                        self.matched.add(t)
                        self.signal(Signal(now, "window", self.window_of_token(t), t))
        self.note(now, hit[ReportKind.CONFIRMED], hit[ReportKind.SELF_REPORTED])

    def window_of_token(self, token: bytes) -> tuple[int, int]:
        params = self.run.params
        slots = [s for s, t in self.log.entries if t.value == token]
        w = params.window_slots(params.window_of(slots[0]))
        return w.start, w.stop - 1


class PubDbRun(ProtocolRun):
    variant = Variant.PUBDB
    client_class = PubDbClient

    def setup(self):
        self.authority = self.add_server(PubDbAuthority(self))

    def build_report(self, uid, slot):
        lo, hi = self.world.timeline.report_window(uid, self.params.exposure_window)
        toks = self.clients[uid].exchanged_own_tokens(lo, min(hi, slot))
        return DiagnosisReport(ReportMode.OWN_TOKENS, tuple(toks), self.world.timeline.report_kind[uid])

    def report_diagnosis(self, uid, report, slot):
        self._check_diagnosed(uid, slot)
        self.net.send(self.clients[uid], AUTHORITY, "REPORT", {"tokens": report.tokens, "kind": report.kind},
                      size=token_bytes(len(report.tokens), self.params) + 1, user=uid)

    def on_publish(self, day):
        self.authority.publish(day)

    def header(self) -> dict:
        """The world-readable part of the publication: per kind, prefix bits and version."""
        return {k: (db.prefix_bits, len(db.batches), db.version) for k, db in self.authority.published.items()}

    def poll(self, uid, slot):
        c = self.clients[uid]
        lo, hi = c.lookback(slot)
        toks = c.contact_tokens(lo, hi)
        indices = {}
        for kind, (bits, count, _) in self.header().items():
            if count and toks:
                indices[kind] = sorted({batch_index(t, bits) for t in toks})
        if not indices:
            c.note(slot, False, False)
            return
        msg = self.net.send(c, AUTHORITY, "DOWNLOAD", {"indices": indices},
                            size=4 * sum(len(v) for v in indices.values()), user=uid)
        c.pending[msg.msg_id] = toks

    def storage(self):
        return sum(len(v) for v in self.authority.reported.values())
