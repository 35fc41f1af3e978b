"""Public keys as tokens, with a mailbox per key behind a proxy chain.

Each refresh window a device broadcasts a fresh public key (hashed to
token length; the full key travels in the same exchange).  Every day after
meeting someone, and for ``send_days`` days, a device sends one status
message per key it collected to that key's mailbox: INFECTED if its owner
has been diagnosed and the meeting fell in the contagious window, otherwise
NOT_INFECTED.  Healthy and infected users therefore send identical traffic.

Messages are onion-wrapped over the proxy route (Frank, Fred, ...) and
deposited at the authority, which hosts the mailboxes but holds no mailbox
keys.  Owners fetch their mailboxes one onion per mailbox through the same
route; replies retrace the route hop by hop.  The reply path is modelled
with :class:`ReturnBlob`: each hop hands back the content under a fresh
label, standing in for a layer of re-encryption, and only the label counts
as observable.

Onions travel as :class:`~tracepriv.cryptobox.OnionBatch` matrices; a
proxy peels, shuffles and forwards everything it received in a slot at
the end of that slot.
"""

from __future__ import annotations

import bisect
import hashlib
import logging
import random
from collections import defaultdict
from dataclasses import dataclass, field
from typing import NamedTuple
from functools import partial

import numpy as np

from ..common import ReportKind, ReportMode
from ..cryptobox import (
    _STATUS_ROW, KeyRows, KeyTable, OnionBatch, Status, StatusMessage, decode_status_rows, encode_status_rows, key_token, keygen, onion_peel_batch,
    onion_wrap_batch, open_batch, peel_raw_batch,
)
from ..errors import FormatError, ParameterError, ProtocolError, SchemeError
from ..simworld import exchange_tokens
from ..tokens import LazyTokens, TokenKind, TokenSchedule, window_count
from .base import AUTHORITY, PRIO_END_OF_SLOT, DiagnosisReport, ProtocolRun, Signal, UserClient, Variant, ceil_div
from .network import Actor, Origin

log = logging.getLogger(__name__)

DIGEST = 8
LABEL = 8


@dataclass
class Mailbox:
    key: bytes
    messages: list = field(default_factory=list)  # sealed status records, as bytes


class ReturnBlob(NamedTuple):
    """Mailbox content on its way back; ``label`` is what a hop can see of it."""

    content: tuple
    label: bytes


def window_keypair(seed: int, uid: int, window: int, scheme):
    material = hashlib.blake2b(f"{seed}:{uid}:{window}".encode(), digest_size=32, person=b"pms-window").digest()
    return keygen(material, scheme)


def _labels(rng: random.Random, n: int) -> list[bytes]:
    raw = rng.randbytes(LABEL * n)
    return [raw[i:i + LABEL] for i in range(0, LABEL * n, LABEL)]


def _fresh(rng: random.Random, taken) -> int:
    t = rng.getrandbits(64)
    while t in taken:
        t = rng.getrandbits(64)
    return t


def _fresh_many(rng: random.Random, taken, n: int) -> list[int]:
    """``n`` distinct 64-bit tags not in ``taken``."""
    tags = np.frombuffer(rng.randbytes(8 * n), "<u8").tolist() if n else []
    if len(set(tags)) == n and taken.keys().isdisjoint(tags):
        return tags
    out, seen = [], set()
    for _ in range(n):
        t = _fresh(rng, taken)
        while t in seen:
            t = _fresh(rng, taken)
        seen.add(t)
        out.append(t)
    return out


class MailboxAuthority(Actor):
    def __init__(self, run, keypair):
        super().__init__(AUTHORITY)
        self.run = run
        self.keypair = keypair
        self.mailboxes: dict[bytes, Mailbox] = {}
        self.rng = run.rng_for(AUTHORITY)

    def _box(self, mid: bytes) -> Mailbox:
        box = self.mailboxes.get(mid)
        if box is None:
            box = self.mailboxes[mid] = Mailbox(mid)
        return box

    def on_message(self, msg):
        if msg.kind == "DEPOSIT_BATCH":
            batch = msg.payload["onions"]
            if batch.layers != 1:
                raise ProtocolError(f"deposit of a {batch.layers}-layer onion")
            raw = batch.data.tobytes()
            w = batch.data.shape[1]
            boxes = self.mailboxes
            for i, mid in enumerate(msg.payload["mailboxes"]):
                box = boxes.get(mid)
                if box is None:
                    box = boxes[mid] = Mailbox(mid)
                box.messages.append(raw[i * w:(i + 1) * w])
        elif msg.kind == "FETCH_REQUESTS":
            reqs = peel_raw_batch(self.keypair.secret_key, msg.payload["onions"])
            if reqs.shape[1] != 24:
                raise FormatError("malformed fetch request")
            k = len(reqs)
            self.run.crypto_ops += k
            out, n = [], 0
            labels = _labels(self.rng, k)
            raw = reqs[:, :16].tobytes()
            offsets = np.ascontiguousarray(reqs[:, 16:]).view(">u8").ravel().tolist()
            get = self.mailboxes.get
            for i, (tag, off, label) in enumerate(zip(msg.payload["tags"], offsets, labels)):
                box = get(raw[16 * i:16 * i + 16])
                content = tuple(box.messages[off:]) if box else ()
                n += len(content)
                out.append((tag, ReturnBlob(content, label)))
            self.net.send(self, msg.src, "FETCH_REPLIES", {"items": out}, reply_to=msg.msg_id,
                          size=self.run.ct_size * n + 2 * LABEL * len(out))


class Proxy(Actor):
    """One relay: peels a layer from every onion, batches, shuffles, forwards.

    ``view.extra["transform"]`` keeps ``(slot, in_digests, out_digests)`` per
    forwarded batch, row-aligned, which is what the proxy could link if it
    kept notes; ``view.extra["returns"]`` maps outgoing fetch tags back.
    """

    def __init__(self, run, index, keypair):
        super().__init__(f"proxy-{index}")
        self.run = run
        self.index = index
        self.keypair = keypair
        self.rng = run.rng_for(self.address)
        self.perm_rng = np.random.default_rng(self.rng.getrandbits(64))
        self.transform = self.view.extra.setdefault("transform", [])
        self.returns = {}                                 # out tag -> (previous hop, in tag)
        self.view.extra["returns"] = self.returns
        self._sends: list[OnionBatch] = []
        self._fetches: list[tuple[str, list, OnionBatch]] = []
        self._flush_due = False

    @property
    def last(self) -> bool:
        return self.index == self.run.route_length - 1

    def _next(self) -> str:
        return AUTHORITY if self.last else f"proxy-{self.index + 1}"

    def _check_hops(self, hops):
        if self.last:
            return
        want = self._next().encode()
        bad = [h for h in hops if h != want]
        if bad:
            raise ProtocolError(f"{self.address}: onion names next hop {bad[0]!r}")

    def _due(self):
        if not self._flush_due:
            self._flush_due = True
            self.run.engine.at(self.run.engine.now, PRIO_END_OF_SLOT, self.flush)

    def on_message(self, msg):
        kind = msg.kind
        if kind in ("SEND_BUNDLE", "SEND_BATCH"):
            self._sends.append(msg.payload["onions"])
            self._due()
        elif kind in ("FETCH_BUNDLE", "FETCH_BATCH"):
            self._fetches.append((msg.src, msg.payload["tags"], msg.payload["onions"]))
            self._due()
        elif kind == "FETCH_REPLIES":
            back = defaultdict(list)
            rng, pop = self.rng, self.returns.pop
            items = msg.payload["items"]
            for (tag, blob), label in zip(items, _labels(rng, len(items))):
                prev, tag_in = pop(tag)
                back[prev].append((tag_in, ReturnBlob(blob.content, label)))
            for prev in sorted(back):
                items = back[prev]
                items = [items[i] for i in self.perm_rng.permutation(len(items)).tolist()]
                n = sum(len(b.content) for _, b in items)
                self.net.send(self, prev, "FETCH_REPLIES", {"items": items},
                              size=self.run.ct_size * n + 2 * LABEL * len(items))

    def flush(self):
        self._flush_due = False
        nxt, sk, now = self._next(), self.keypair.secret_key, self.run.engine.now
        if self._sends:
            batch, self._sends = OnionBatch.concat(self._sends), []
            hops, inner = onion_peel_batch(sk, batch)
            self._check_hops(hops)
            self.run.crypto_ops += len(batch)
            self.transform.append((now, batch.digests(DIGEST), inner.digests(DIGEST)))
            perm = self.perm_rng.permutation(len(batch))
            out = inner.take(perm)
            if self.last:
                self.net.send(self, nxt, "DEPOSIT_BATCH", {"mailboxes": [hops[i] for i in perm.tolist()], "onions": out},
                              origin=Origin.MIXED, size=out.data.nbytes + 16 * len(out))
            else:
                self.net.send(self, nxt, "SEND_BATCH", {"onions": out}, origin=Origin.MIXED, size=out.data.nbytes)
        if self._fetches:
            pending, self._fetches = self._fetches, []
            batch = OnionBatch.concat([b for _, _, b in pending])
            hops, inner = onion_peel_batch(sk, batch)
            self._check_hops(hops)
            self.run.crypto_ops += len(batch)
            back = [(src, t) for src, tags_in, _ in pending for t in tags_in]
            tags = _fresh_many(self.rng, self.returns, len(back))
            self.returns.update(zip(tags, back))
            perm = self.perm_rng.permutation(len(batch))
            out = inner.take(perm)
            kind = "FETCH_REQUESTS" if self.last else "FETCH_BATCH"
            self.net.send(self, nxt, kind, {"tags": [tags[i] for i in perm.tolist()], "onions": out},
                          origin=Origin.MIXED, size=out.data.nbytes + LABEL * len(out))


class PmsClient(UserClient):
    def __init__(self, *a):
        super().__init__(*a)
        self.rng = random.Random(f"{self.run.world.cfg.seed}:{self.uid}:pms")
        self.peer_keys = self.run.peer_keys[self.uid]
        collected = {}
        for s, t in self.log.entries:
            collected.setdefault(t.value, []).append(s)
        spd = self.run.spd
        keys = sorted((slots[0], tok, tuple(slots)) for tok, slots in collected.items())
        self.keys = [(s0 // spd, tok, slots) for s0, tok, slots in keys]
        self._key_days = [k[0] for k in self.keys]
        params = self.run.params
        self.own_windows = sorted({params.window_of(s) for s, _ in self.log.entries})
        self._window_starts = [w * params.refresh_interval for w in self.own_windows]
        self.cursor = defaultdict(int)
        self.pending = {}
        self._received: list[np.ndarray] = []
        self._infected_keys: dict[bytes, int] | None = None
        self._arrays = None
        self._sk = {}
        self.infected_boxes: set[int] = set()
        self.undecryptable = 0
        self.sent_per_day = defaultdict(int)

    def day_sends(self, day: int) -> list:
        lo = bisect.bisect_left(self._key_days, day - self.run.send_days)
        hi = bisect.bisect_left(self._key_days, day)
        return self.keys[lo:hi]

    def fetch_windows(self, slot: int) -> list[int]:
        lo, hi = self.lookback(slot)
        i = bisect.bisect_left(self._window_starts, lo - self.run.params.refresh_interval + 1)
        j = bisect.bisect_right(self._window_starts, hi)
        return self.own_windows[i:j]

    @property
    def received(self) -> list[StatusMessage]:
        """Every status decrypted so far, in arrival order."""
        out = []
        for rec in self._received:
            for st, slot, seq, kind in zip(rec["status"].tolist(), rec["slot"].tolist(), rec["seq"].tolist(),
                                           rec["kind"].tolist()):
                out.append(StatusMessage(Status(st), slot, seq, ReportKind.SELF_REPORTED if kind else ReportKind.CONFIRMED))
        return out

    def on_message(self, msg):
        if msg.kind != "FETCH_REPLIES":
            return
        cts, keys, owner = [], [], []
        pop, cursor, sks = self.pending.pop, self.cursor, self._sk
        for tag, (content, _) in msg.payload["items"]:
            w = pop(tag)
            if content:
                k = len(content)
                cursor[w] += k
                sk = sks.get(w)
                if sk is None:
                    sk = sks[w] = self.run.keypair(self.uid, w).secret_key
                cts.extend(content)
                keys.extend([sk] * k)
                owner.extend([w] * k)
        if cts:
            self.run.queue_replies(self, cts, keys, owner)

    def take(self, rec: np.ndarray, good: np.ndarray, owner: list[int]):
        """Record statuses the run decrypted for this device."""
        now = self.run.engine.now
        if not good.all():
            bad = int((~good).sum())
            self.undecryptable += bad
            log.warning("user %d: %d undecryptable message(s) in fetched mailboxes", self.uid, bad)
        rec = rec[good]
        self._received.append(rec)
        infected = defaultdict(lambda: [False, False])
        wins = [w for w, g in zip(owner, good.tolist()) if g]
        for w, st, kind in zip(wins, rec["status"].tolist(), rec["kind"].tolist()):
            if st == 1:
                infected[w][kind] = True
        for w in sorted(infected):
            c, s = infected[w]
            self.note(now, c, s)
            if w not in self.infected_boxes:
                self.infected_boxes.add(w)
                r = self.run.params.window_slots(w)
                self.signal(Signal(now, "window", (r.start, r.stop - 1), self.run.mailbox_id(self.uid, w)))


class PmsRun(ProtocolRun):
    variant = Variant.PMS
    client_class = PmsClient

    def make_schedules(self):
        w = self.world
        cfg = w.cfg
        self.route_length = self.cfg.route_length
        self.send_days = self.cfg.send_days or (ceil_div(self.params.exposure_window, self.spd) + 1)
        self._keys = {}
        self._mids = {}
        n = window_count(w.horizon, self.params)
        schedules = {}
        for uid in range(w.population):
            toks = LazyTokens(n, partial(self.mailbox_id, uid))
            schedules[uid] = TokenSchedule(uid, self.params, w.horizon, cfg.seed, toks, TokenKind.PUBLIC_KEY)
        logs = exchange_tokens(w.events, schedules, cfg.proximity_radius, w.horizon)
        # the full public key rides along with every exchanged token
        self.peer_keys = {uid: {} for uid in range(w.population)}
        r = cfg.proximity_radius
        win = self.params.window_of
        for e in w.events:
            if e.distance <= r:
                ka = self.keypair(e.a, win(e.slot))
                kb = self.keypair(e.b, win(e.slot))
                self.peer_keys[e.b][schedules[e.a].raw_at(e.slot)] = ka.public_key
                self.peer_keys[e.a][schedules[e.b].raw_at(e.slot)] = kb.public_key
        return schedules, logs

    def keypair(self, uid, window):
        k = self._keys.get((uid, window))
        if k is None:
            k = self._keys[(uid, window)] = window_keypair(self.world.cfg.seed, uid, window, self.cfg.scheme)
        return k

    def mailbox_id(self, uid, window) -> bytes:
        m = self._mids.get((uid, window))
        if m is None:
            m = self._mids[(uid, window)] = key_token(self.keypair(uid, window).public_key,
                                                       self.params.bit_length).value
        return m

    def rng_for(self, name: str) -> random.Random:
        return random.Random(f"{self.world.cfg.seed}:{name}")

    def setup(self):
        seed = self.world.cfg.seed
        scheme = self.cfg.scheme
        self.authority = self.add_server(MailboxAuthority(self, keygen(f"{seed}:authority".encode(), scheme)))
        self.proxies = [self.add_server(Proxy(self, i, keygen(f"{seed}:proxy:{i}".encode(), scheme)))
                        for i in range(self.route_length)]
        self.route_keys = [p.keypair.public_key for p in self.proxies]
        self._send_hops = [f"proxy-{i}".encode() for i in range(1, self.route_length)]
        self._fetch_addresses = (self._send_hops + [AUTHORITY.encode()]) if self.route_length else None
        probe = onion_wrap_batch([], keygen(b"probe", scheme).public_key, [StatusMessage(Status.INFECTED, 0)],
                                 scheme_id=scheme)
        self.ct_size = probe.data.shape[1]
        width = self.ct_size - 16          # innermost body: tag stripped
        pairs = list(self._keys.values())
        self.mail_pk = KeyTable([k.public_key for k in pairs], width)
        self.mail_sk = KeyTable([k.secret_key for k in pairs], width, secret=True)
        self.truth.mailbox_owner = {}
        self.truth.momentary["sent"] = {}    # outer digest of a user's onion -> uid
        self._inbox = []

    @staticmethod
    def _rows(table: KeyTable, keys: list[bytes]):
        # keys outside the precomputed table (scripted sends) take the slow path
        try:
            return table.rows(keys)
        except SchemeError:
            return keys

    def first_hop(self) -> str:
        return "proxy-0" if self.route_length else AUTHORITY

    # --- status sends ---------------------------------------------------

    def status_for(self, uid: int, slots: tuple) -> tuple[Status, int]:
        c = self.clients[uid]
        if c.diagnosed_at is not None:
            lo, hi = self.world.timeline.report_window(uid, self.params.exposure_window)
            inside = [s for s in slots if lo <= s <= hi]
            if inside:
                return Status.INFECTED, inside[-1]
        return Status.NOT_INFECTED, slots[-1]

    def _infected_keys(self, c: PmsClient) -> dict[bytes, int]:
        """Collected keys that get INFECTED messages, with the contact slot reported."""
        if c._infected_keys is None:
            out = {}
            for _, tok, slots in c.keys:
                status, cslot = self.status_for(c.uid, slots)
                if status is Status.INFECTED:
                    out[tok] = cslot
            c._infected_keys = out
        return c._infected_keys

    def status_message(self, uid: int, status: Status, contact_slot: int, seq: int) -> StatusMessage:
        if status is Status.INFECTED:
            return StatusMessage(status, contact_slot, seq, self.world.timeline.report_kind[uid])
        return StatusMessage(status, contact_slot, seq)

    def wrap_statuses(self, rows: list[tuple[int, bytes, StatusMessage]]) -> OnionBatch:
        """One onion per ``(uid, mailbox token, message)``."""
        pks = []
        for uid, tok, _ in rows:
            try:
                pks.append(self.clients[uid].peer_keys[tok])
            except KeyError:
                raise SchemeError(f"user {uid} holds no public key for token {tok.hex()}") from None
        addresses = [*self._send_hops, [tok for _, tok, _ in rows]] if self.route_length else None
        self.crypto_ops += (self.route_length + 1) * len(rows)
        return onion_wrap_batch(self.route_keys, pks, [m for _, _, m in rows], addresses=addresses,
                                scheme_id=self.cfg.scheme)

    def send_onions(self, uid: int, tokens: list[bytes], batch: OnionBatch):
        if not len(batch):
            return None
        sent = self.truth.momentary["sent"]
        for d in batch.digests(DIGEST).tolist():
            sent[d] = uid
        return self._send_onions(uid, tokens, batch)

    def _send_onions(self, uid: int, tokens: list[bytes], batch: OnionBatch):
        c = self.clients[uid]
        if self.route_length:
            return self.net.send(c, "proxy-0", "SEND_BUNDLE", {"onions": batch}, size=batch.data.nbytes, user=uid)
        return self.net.send(c, AUTHORITY, "DEPOSIT_BATCH", {"mailboxes": list(tokens), "onions": batch},
                             size=batch.data.nbytes + 16 * len(batch), user=uid)

    def _key_arrays(self, c: PmsClient):
        """Per collected key: day, key table row, last contact slot, INFECTED contact slot or -1."""
        a = c._arrays
        if a is None or (a[4] is None and c.diagnosed_at is not None):
            days = np.array(c._key_days, np.int64)
            rows = self.mail_pk.rows([c.peer_keys[tok] for _, tok, _ in c.keys]).idx
            last = np.array([slots[-1] for _, _, slots in c.keys], np.int64)
            inf = None
            if c.diagnosed_at is not None:
                got = self._infected_keys(c)
                inf = np.array([got.get(tok, -1) for _, tok, _ in c.keys], np.int64)
            a = c._arrays = (days, rows, last, [tok for _, tok, _ in c.keys], inf)
        return a

    def on_day_start(self, day):
        rows, toks, status, cslot, seq, selfrep, spans = [], [], [], [], [], [], []
        report_kind = self.world.timeline.report_kind
        n = 0
        for c in self.clients:
            sends = c.day_sends(day)
            c.sent_per_day[day] = k = len(sends)
            if not k:
                continue
            days, krows, last, ktoks, inf = self._key_arrays(c)
            lo = bisect.bisect_left(c._key_days, day - self.send_days)
            hi = lo + k
            rows.append(krows[lo:hi])
            toks.extend(ktoks[lo:hi])
            seq.append(day - days[lo:hi])
            if inf is None:
                status.append(np.zeros(k, bool))
                cslot.append(last[lo:hi])
            else:
                hit = inf[lo:hi] >= 0
                status.append(hit)
                cslot.append(np.where(hit, inf[lo:hi], last[lo:hi]))
            selfrep.append(np.full(k, report_kind[c.uid] is ReportKind.SELF_REPORTED))
            spans.append((c.uid, n, n + k))
            n += k
        if not n:
            return
        cat = np.concatenate
        payloads = encode_status_rows(cat(status), cat(cslot), cat(seq), cat(selfrep))
        addresses = [*self._send_hops, toks] if self.route_length else None
        self.crypto_ops += (self.route_length + 1) * n
        batch = onion_wrap_batch(self.route_keys, KeyRows(self.mail_pk, cat(rows)), payloads, addresses=addresses,
                                 scheme_id=self.cfg.scheme)
        sent = self.truth.momentary["sent"]
        digests = batch.digests(DIGEST).tolist()
        for uid, a, b in spans:
            sent.update(zip(digests[a:b], [uid] * (b - a)))
            self._send_onions(uid, toks[a:b], batch.take(slice(a, b)))

    # --- fetches ---------------------------------------------------------

    def queue_replies(self, c: PmsClient, cts, keys, owner):
        # every device opens its replies at the end of the slot, in one batch
        if not self._inbox:
            self.engine.at(self.engine.now, PRIO_END_OF_SLOT, self._open_inbox)
        self._inbox.append((c, cts, keys, owner))

    def _open_inbox(self):
        inbox, self._inbox = self._inbox, []
        cts = [ct for _, x, _, _ in inbox for ct in x]
        keys = [k for _, _, x, _ in inbox for k in x]
        n = len(cts)
        self.crypto_ops += n
        by_len = defaultdict(list)
        for i, ct in enumerate(cts):
            by_len[len(ct)].append(i)
        rec = np.zeros(n, _STATUS_ROW)
        good = np.zeros(n, bool)
        for width, idx in sorted(by_len.items()):
            arr = np.frombuffer(b"".join([cts[i] for i in idx]), np.uint8).reshape(len(idx), width)
            plain, ok = open_batch(self._rows(self.mail_sk, [keys[i] for i in idx]), arr, self.cfg.scheme)
            r, parsed = decode_status_rows(plain)
            rec[idx] = r
            good[idx] = ok & parsed
        a = 0
        for c, x, _, owner in inbox:
            b = a + len(x)
            c.take(rec[a:b], good[a:b], owner)
            a = b


    def _fetch(self, uids, slot):
        rows, spans = [], []
        for uid in uids:
            c = self.clients[uid]
            start = len(rows)
            for w in c.fetch_windows(slot):
                mid = self.mailbox_id(uid, w)
                self.truth.mailbox_owner[mid] = uid
                rows.append((uid, w, mid + c.cursor[w].to_bytes(8, "big")))
            if len(rows) > start:
                spans.append((uid, start, len(rows)))
        if not rows:
            return
        batch = onion_wrap_batch(self.route_keys, self.authority.keypair.public_key, [r[2] for r in rows],
                                 addresses=self._fetch_addresses, scheme_id=self.cfg.scheme)
        self.crypto_ops += (self.route_length + 1) * len(rows)
        kind = "FETCH_BUNDLE" if self.route_length else "FETCH_REQUESTS"
        for uid, a, b in spans:
            c = self.clients[uid]
            tags = _fresh_many(c.rng, c.pending, b - a)
            c.pending.update(zip(tags, [w for _, w, _ in rows[a:b]]))
            part = batch.take(slice(a, b))
            self.net.send(c, self.first_hop(), kind, {"tags": tags, "onions": part},
                          size=part.data.nbytes + LABEL * len(part), user=uid)

    def poll(self, uid, slot):
        self._fetch([uid], slot)

    def _poll_all(self, day: int):
        self._fetch(range(self.world.population), self.engine.now)

    # --- the interface every variant offers ---------------------------------

    def build_report(self, uid, slot):
        # the report is the future INFECTED sends, one per collected key in the window
        lo, hi = self.world.timeline.report_window(uid, self.params.exposure_window)
        c = self.clients[uid]
        toks = tuple(t for _, t, slots in c.keys if any(lo <= s <= min(hi, slot) for s in slots))
        return DiagnosisReport(ReportMode.OWN_TOKENS, toks, self.world.timeline.report_kind[uid])

    def report_diagnosis(self, uid, report, slot):
        # nothing is sent now; the daily sends switch to INFECTED from the next cadence point
        self._check_diagnosed(uid, slot)

    def storage(self):
        return sum(len(b.messages) for b in self.authority.mailboxes.values())


def pms_send_status(run: PmsRun, user: int, contact_key: bytes, status: Status, slot: int, seq: int = 0):
    """Wrap one status for ``contact_key``'s mailbox and hand it to the first hop."""
    if not isinstance(run, PmsRun):
        raise ParameterError("pms_send_status needs a PMS run")
    batch = run.wrap_statuses([(user, contact_key, run.status_message(user, status, slot, seq))])
    return run.send_onions(user, [contact_key], batch)


def pms_fetch_mailboxes(run: PmsRun, user: int, slot: int | None = None) -> list[StatusMessage]:
    """Statuses the user has decrypted so far; with ``slot``, also issue a fetch at that slot."""
    if not isinstance(run, PmsRun):
        raise ParameterError("pms_fetch_mailboxes needs a PMS run")
    if slot is not None:
        run.poll(user, slot)
    return list(run.clients[user].received)
