"""Centralised tracing: tokens registered against phone numbers.

Every user uploads their whole token schedule and phone number.  A
diagnosed user uploads the tokens they heard; the authority resolves each
one to a phone number and pushes a notification.
"""

from __future__ import annotations

from ..common import ReportKind, ReportMode
from .base import AUTHORITY, DiagnosisReport, ProtocolRun, Signal, UserClient, Variant, token_bytes
from .network import Actor


class CentralAuthority(Actor):
    def __init__(self, run):
        super().__init__(AUTHORITY)
        self.run = run
        self.registry: dict[bytes, str] = {}
        self.address_of_phone: dict[str, str] = {}
        self.reports: list = []

    def on_message(self, msg):
        p = msg.payload
        if msg.kind == "REGISTER":
            phone = p["phone"]
            if phone in self.address_of_phone:
                return  # idempotent
            self.address_of_phone[phone] = msg.src
            for t in p["tokens"]:
                self.registry[t] = phone
        elif msg.kind == "REPORT":
            self.reports.append((p["phone"], p["kind"], len(p["tokens"])))
            phones = {self.registry[t] for t in p["tokens"] if t in self.registry}
            phones.discard(p["phone"])
            for phone in sorted(phones):
                self.net.send(self, self.address_of_phone[phone], "NOTIFY", {"kind": p["kind"]}, size=2)


class CentralClient(UserClient):
    def on_message(self, msg):
        if msg.kind == "NOTIFY":
            kind = msg.payload["kind"]
            was = self.result.exposed
            now = self.run.engine.now
            self.note(now, kind is ReportKind.CONFIRMED, kind is ReportKind.SELF_REPORTED)
            if not was:
                self.signal(Signal(now, "binary", self.lookback(now)))


class CentralRun(ProtocolRun):
    variant = Variant.CENTRAL
    client_class = CentralClient
    uses_polls = False

    def setup(self):
        self.authority = self.add_server(CentralAuthority(self))
        self._registered = set()

    def register(self, uid):
        if uid in self._registered:
            return
        self._registered.add(uid)
        c = self.clients[uid]
        tokens = self.schedules[uid].tokens
        self.net.send(c, AUTHORITY, "REGISTER", {"phone": self.world.users[uid].phone_number, "tokens": tokens},
                      size=token_bytes(len(tokens), self.params) + 16, user=uid)

    def build_report(self, uid, slot):
        lo, hi = self.world.timeline.report_window(uid, self.params.exposure_window)
        toks = self.clients[uid].contact_tokens(lo, min(hi, slot))
        return DiagnosisReport(ReportMode.CONTACT_TOKENS, tuple(toks), self.world.timeline.report_kind[uid])

    def report_diagnosis(self, uid, report, slot):
        self._check_diagnosed(uid, slot)
        c = self.clients[uid]
        payload = {"phone": self.world.users[uid].phone_number, "tokens": report.tokens, "kind": report.kind}
        self.net.send(c, AUTHORITY, "REPORT", payload, size=token_bytes(len(report.tokens), self.params) + 17, user=uid)

    def storage(self):
        return len(self.authority.registry)
