"""Polling variants: users ask the authority whether any of their tokens were reported.

``POLLING`` talks to the authority directly.  ``POLLING_NOISE`` is the same
protocol with spurious uniform tokens mixed into every report.
``POLLING_MIX`` routes both reports and queries through ``M`` mixing
servers: each user deals a shuffled token list round-robin into ``M``
shares, one per server, so no server holds more than ``ceil(n / M)`` of
them.  Servers strip sources, merge a day's reports into one shuffled bag
and look up query shares under handles of their own choosing.  Server 0
leads: the other servers send it their share-level hits, and it answers
the user with a single OR, so no server (and not the authority) learns
which share matched.
"""

from __future__ import annotations

import random

import numpy as np

from ..common import ReportKind, ReportMode
from ..errors import ParameterError
from .base import (
    AUTHORITY, DiagnosisReport, ProtocolRun, Signal, UserClient, Variant, noise_tokens, token_bytes,
)
from .network import Actor, Origin


def _kinds():
    return {ReportKind.CONFIRMED: set(), ReportKind.SELF_REPORTED: set()}


class PollingAuthority(Actor):
    """Keeps confirmed and self-reported tokens in separate databases."""

    def __init__(self, run):
        super().__init__(AUTHORITY)
        self.run = run
        self.db = _kinds()

    def hits(self, tokens) -> tuple[bool, bool]:
        conf, selfr = self.db[ReportKind.CONFIRMED], self.db[ReportKind.SELF_REPORTED]
        return any(t in conf for t in tokens), any(t in selfr for t in tokens)

    def on_message(self, msg):
        p = msg.payload
        if msg.kind == "REPORT":
            self.db[p["kind"]].update(p["tokens"])
        elif msg.kind == "QUERY":
            c, s = self.hits(p["tokens"])
            self.net.send(self, msg.src, "ANSWER", {"confirmed": c, "self_reported": s}, reply_to=msg.msg_id, size=2)
        elif msg.kind == "BAG":
            for kind, toks in p["tokens"].items():
                self.db[kind].update(toks)
        elif msg.kind == "LOOKUP":
            out = []
            for handle, toks in p["items"]:
                c, s = self.hits(toks)
                out.append((handle, c, s))
            self.net.send(self, msg.src, "LOOKUP_RESULT", {"items": out}, reply_to=msg.msg_id, size=10 * len(out))


class PollingClient(UserClient):
    def __init__(self, *a):
        super().__init__(*a)
        self.probes = {}

    def on_message(self, msg):
        if msg.kind == "ANSWER" and msg.reply_to in self.probes:
            self.probes[msg.reply_to] = msg.payload
        elif msg.kind == "ANSWER":
            now = self.run.engine.now
            was = self.result.exposed
            self.note(now, msg.payload["confirmed"], msg.payload["self_reported"])
            if self.result.exposed and not was:
                self.signal(Signal(now, "binary", self.lookback(now)))


class PollingRun(ProtocolRun):
    variant = Variant.POLLING
    client_class = PollingClient

    def setup(self):
        self.authority = self.add_server(PollingAuthority(self))
        self._shuffle = {}

    def shuffler(self, uid) -> random.Random:
        r = self._shuffle.get(uid)
        if r is None:
            r = self._shuffle[uid] = random.Random(f"{self.world.cfg.seed}:{uid}:shuffle")
        return r

    # tokens a diagnosed user uploads, and tokens a poll sends in return
    def report_tokens(self, uid, lo, hi):
        c = self.clients[uid]
        if self.cfg.report_mode is ReportMode.OWN_TOKENS:
            return c.exchanged_own_tokens(lo, hi)
        return c.contact_tokens(lo, hi)

    def query_tokens(self, uid, slot):
        c = self.clients[uid]
        lo, hi = c.lookback(slot)
        if self.cfg.report_mode is ReportMode.OWN_TOKENS:
            return c.contact_tokens(lo, hi)
        return c.exchanged_own_tokens(lo, hi)

    def build_report(self, uid, slot):
        lo, hi = self.world.timeline.report_window(uid, self.params.exposure_window)
        real = self.report_tokens(uid, lo, min(hi, slot))
        n = self.cfg.noise
        noise = noise_tokens(self.clients[uid], n)
        self.truth.momentary.setdefault("noise", set()).update(noise)
        toks = real + noise
        self.shuffler(uid).shuffle(toks)
        return DiagnosisReport(self.cfg.report_mode, tuple(toks), self.world.timeline.report_kind[uid], n)

    def report_diagnosis(self, uid, report, slot):
        self._check_diagnosed(uid, slot)
        if report.mode is not self.cfg.report_mode:
            raise ParameterError(f"report mode {report.mode} does not match configured {self.cfg.report_mode}")
        self.net.send(self.clients[uid], AUTHORITY, "REPORT", {"tokens": report.tokens, "kind": report.kind},
                      size=token_bytes(len(report.tokens), self.params) + 1, user=uid)

    def query(self, uid, tokens):
        return self.net.send(self.clients[uid], AUTHORITY, "QUERY", {"tokens": tuple(tokens)},
                             size=token_bytes(len(tokens), self.params), user=uid)

    def poll(self, uid, slot):
        toks = self.query_tokens(uid, slot)
        if not toks:
            self.clients[uid].note(slot, False, False)
            return
        self.query(uid, toks)

    def storage(self):
        return sum(len(v) for v in self.authority.db.values())


class MixServer(Actor):
    def __init__(self, run, index: int):
        super().__init__(f"mix-{index}")
        self.run = run
        self.index = index
        self.rng = random.Random(f"{run.world.cfg.seed}:mix:{index}")
        self.reports = _kinds()
        self.queries = []      # (msg, nonce, tokens)
        self.handles = {}      # handle -> nonce
        self.pending = {}      # lead only: nonce -> [user address, reply id, seen, confirmed, self]
        self.max_share = 0

    @property
    def lead(self) -> bool:
        return self.index == 0

    def on_message(self, msg):
        p = msg.payload
        if msg.kind == "REPORT_SHARE":
            self.reports[p["kind"]].update(p["tokens"])
            self.max_share = max(self.max_share, len(p["tokens"]))
        elif msg.kind == "QUERY_SHARE":
            self.queries.append((msg, p["nonce"], p["tokens"]))
            if self.lead:
                self._entry(p["nonce"])[0:2] = [msg.src, msg.msg_id]
        elif msg.kind == "LOOKUP_RESULT":
            for handle, c, s in msg.payload["items"]:
                nonce = self.handles.pop(handle)
                if self.lead:
                    self.subresult(nonce, c, s)
                else:
                    self.net.send(self, self.run.mix_address(0), "SUBRESULT",
                                  {"nonce": nonce, "confirmed": c, "self_reported": s}, size=18)
        elif msg.kind == "SUBRESULT":
            self.subresult(p["nonce"], p["confirmed"], p["self_reported"])

    def _entry(self, nonce):
        e = self.pending.get(nonce)
        if e is None:
            e = self.pending[nonce] = [None, None, 0, False, False]
        return e

    def subresult(self, nonce, c, s):
        e = self._entry(nonce)
        e[2] += 1
        e[3] |= c
        e[4] |= s
        if e[2] == self.run.cfg.mix.server_count:
            del self.pending[nonce]
            self.net.send(self, e[0], "ANSWER", {"confirmed": e[3], "self_reported": e[4]}, reply_to=e[1], size=2)

    def flush(self):
        params = self.run.params
        if any(self.reports.values()):
            bag = {}
            n = 0
            for kind, toks in self.reports.items():
                lst = sorted(toks)
                self.rng.shuffle(lst)
                bag[kind] = lst
                n += len(lst)
            self.reports = _kinds()
            self.net.send(self, AUTHORITY, "BAG", {"tokens": bag}, origin=Origin.MIXED, size=token_bytes(n, params))
        if self.queries:
            items = []
            n = 0
            for _, nonce, toks in self.queries:
                handle = self.rng.getrandbits(64).to_bytes(8, "big")
                while handle in self.handles:
                    handle = self.rng.getrandbits(64).to_bytes(8, "big")
                self.handles[handle] = nonce
                items.append((handle, toks))
                n += len(toks)
            self.queries = []
            self.rng.shuffle(items)
            self.net.send(self, AUTHORITY, "LOOKUP", {"items": items}, origin=Origin.MIXED,
                          size=token_bytes(n, params) + 8 * len(items))


def partition(tokens, m: int) -> list[list]:
    """Deal ``tokens`` round-robin into ``m`` groups of near-equal size."""
    return [list(tokens[i::m]) for i in range(m)]


class MixRun(PollingRun):
    variant = Variant.POLLING_MIX

    def setup(self):
        super().setup()
        self._perm = {}
        self.mixes = [self.add_server(MixServer(self, i)) for i in range(self.cfg.mix.server_count)]

    def mix_address(self, i):
        return f"mix-{i}"

    def report_diagnosis(self, uid, report, slot):
        self._check_diagnosed(uid, slot)
        c = self.clients[uid]
        # every server gets a share, empty or not, as a plain report is sent even when empty
        for i, share in enumerate(partition(report.tokens, len(self.mixes))):
            self.net.send(c, self.mix_address(i), "REPORT_SHARE", {"tokens": tuple(share), "kind": report.kind},
                          size=token_bytes(len(share), self.params) + 1, user=uid)

    def query(self, uid, tokens):
        rnd = self.shuffler(uid)
        g = self._perm.get(uid)
        if g is None:
            g = self._perm[uid] = np.random.default_rng(rnd.getrandbits(64))
        tokens = [tokens[i] for i in g.permutation(len(tokens)).tolist()]
        nonce = rnd.getrandbits(128).to_bytes(16, "big")
        c = self.clients[uid]
        sent = [self.net.send(c, self.mix_address(i), "QUERY_SHARE", {"nonce": nonce, "tokens": tuple(share)},
                              size=token_bytes(len(share), self.params) + 16, user=uid)
                for i, share in enumerate(partition(tokens, len(self.mixes)))]
        return sent[0]  # the lead's share; its id is what the answer replies to

    def on_flush(self, day):
        for m in self.mixes:
            m.flush()
