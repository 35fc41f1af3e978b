"""Public-key sealing, onion layering and status messages.

Two schemes sit behind one interface:

``TOY_DETERMINISTIC``
    Keystream XOR plus a keyed polynomial tag.  Deterministic and fast, so it
    drives reproducible fixtures and large simulations.  It offers no
    security: the public key alone is enough to decrypt.

``REAL``
    X25519 ephemeral-static key agreement, HKDF-SHA256 and
    ChaCha20-Poly1305 (an ECIES-style sealed box).  Randomised.

Onions nest one sealed layer per route hop around a payload sealed to the
destination.  A relay layer carries the next-hop address in a fixed-width
field; the innermost layer carries the payload.
"""

from __future__ import annotations

import enum
import hashlib
import os
import struct
from collections.abc import Sequence
from dataclasses import dataclass

import numpy as np
from cryptography.exceptions import InvalidTag
from cryptography.hazmat.primitives import hashes
from cryptography.hazmat.primitives.asymmetric.x25519 import X25519PrivateKey, X25519PublicKey
from cryptography.hazmat.primitives.ciphers.aead import ChaCha20Poly1305
from cryptography.hazmat.primitives.kdf.hkdf import HKDF

from .common import ReportKind
from .errors import AuthenticationError, FormatError, ParameterError, SchemeError, SizeError
from .tokens import Token, TokenKind

MAX_PLAINTEXT = 256
ADDRESS_WIDTH = 32
STATUS_SIZE = 32
KEY_SIZE = 32

_TAG = 16
_PAYLOAD_STATUS = 0x01
_PAYLOAD_RAW = 0x00


class Scheme(enum.Enum):
    TOY_DETERMINISTIC = "TOY_DETERMINISTIC"
    REAL = "REAL"


@dataclass(frozen=True, slots=True)
class KeyPair:
    public_key: bytes
    secret_key: bytes
    scheme_id: Scheme


@dataclass(slots=True, unsafe_hash=True)  # not frozen: built on the hot path, treat as immutable
class Ciphertext:
    data: bytes
    scheme_id: Scheme

    def __len__(self):
        return len(self.data)


@dataclass(slots=True, unsafe_hash=True)  # not frozen: built on the hot path, treat as immutable
class OnionCiphertext:
    layers: int
    outer: Ciphertext


@dataclass(slots=True, unsafe_hash=True)  # not frozen: built on the hot path, treat as immutable
class Relay:
    """Result of peeling a non-final layer."""

    next_hop: bytes
    inner: OnionCiphertext


@dataclass(slots=True, unsafe_hash=True)  # not frozen: built on the hot path, treat as immutable
class Final:
    message: StatusMessage | bytes


class Status(enum.Enum):
    NOT_INFECTED = 0
    INFECTED = 1


@dataclass(frozen=True, slots=True)
class StatusMessage:
    """Infection status for one contact.  Carries no sender identifier."""

    status: Status
    contact_slot: int
    sequence_no: int = 0
    report_kind: ReportKind = ReportKind.CONFIRMED

    def to_bytes(self) -> bytes:
        return serialize_status(self)


# --- status records ---------------------------------------------------

_STATUS_HEAD = struct.Struct(">BQQB")


def serialize_status(msg: StatusMessage) -> bytes:
    """Fixed 32-byte record: status, contact slot, sequence number, zero padding.

    Byte 17 (inside the padding region) flags a self-reported diagnosis for
    INFECTED messages and is zero otherwise.
    """
    if msg.contact_slot < 0 or msg.sequence_no < 0:
        raise FormatError("contact_slot and sequence_no must be non-negative")
    kind = 1 if (msg.status is Status.INFECTED and msg.report_kind is ReportKind.SELF_REPORTED) else 0
    head = _STATUS_HEAD.pack(msg.status.value, msg.contact_slot, msg.sequence_no, kind)
    return head + bytes(STATUS_SIZE - len(head))


def deserialize_status(data: bytes) -> StatusMessage:
    if len(data) != STATUS_SIZE:
        raise FormatError(f"status record must be {STATUS_SIZE} bytes, got {len(data)}")
    status, slot, seq, kind = _STATUS_HEAD.unpack_from(data)
    if status not in (0, 1) or kind not in (0, 1) or any(data[_STATUS_HEAD.size:]):
        raise FormatError("malformed status record")
    if kind and status == 0:
        raise FormatError("report kind flag set on a NOT_INFECTED record")
    return StatusMessage(Status(status), slot, seq,
                         ReportKind.SELF_REPORTED if kind else ReportKind.CONFIRMED)


# --- key handling -----------------------------------------------------

def _seed_bytes(seed, person: bytes) -> bytes:
    if seed is None:
        material = os.urandom(32)
    elif isinstance(seed, int):
        material = seed.to_bytes(16, "big", signed=True)
    elif isinstance(seed, (bytes, bytearray)):
        material = bytes(seed)
    else:
        raise ParameterError(f"seed must be int, bytes or None, not {type(seed).__name__}")
    return hashlib.blake2b(material, digest_size=32, person=person).digest()


def _toy_public(secret_key: bytes) -> bytes:
    return hashlib.blake2b(secret_key, digest_size=KEY_SIZE, person=b"toy-public").digest()


def _scheme(scheme_id) -> Scheme:
    try:
        return Scheme(scheme_id) if not isinstance(scheme_id, Scheme) else scheme_id
    except ValueError:
        raise SchemeError(f"unsupported scheme {scheme_id!r}") from None


def keygen(seed=None, scheme_id: Scheme | str = Scheme.TOY_DETERMINISTIC) -> KeyPair:
    """Fresh key pair; a fixed ``seed`` makes it reproducible under either scheme."""
    scheme = _scheme(scheme_id)
    sk = _seed_bytes(seed, b"sk-" + scheme.value[:8].encode())
    if scheme is Scheme.TOY_DETERMINISTIC:
        return KeyPair(_toy_public(sk), sk, scheme)
    private = X25519PrivateKey.from_private_bytes(sk)
    return KeyPair(private.public_key().public_bytes_raw(), sk, scheme)


def key_fingerprint(public_key: bytes, nbytes: int = 16) -> bytes:
    return hashlib.blake2b(public_key, digest_size=nbytes, person=b"key-token").digest()


def key_token(public_key: bytes, bit_length: int = 128) -> Token:
    """Broadcast form of a public key: its hash truncated to ``bit_length`` bits."""
    return Token(key_fingerprint(public_key, bit_length // 8), TokenKind.PUBLIC_KEY)


# --- sealing ----------------------------------------------------------

_keystreams: dict[bytes, bytes] = {}
_toy_publics: dict[bytes, bytes] = {}


def _toy_keystream(public_key: bytes, n: int) -> bytes:
    ks = _keystreams.get(public_key)
    if ks is None or len(ks) < n:
        if len(_keystreams) > 200_000:
            _keystreams.clear()
        ks = hashlib.shake_128(b"toy-ks" + public_key).digest(max(n, 512))
        _keystreams[public_key] = ks
    return ks


def _xor(data: bytes, ks: bytes) -> bytes:
    n = len(data)
    if not n:
        return b""
    return (int.from_bytes(data, "little") ^ int.from_bytes(ks[:n], "little")).to_bytes(n, "little")


# TOY tag: two 64-bit lanes, each sum((byte + 1) * k_i) mod 2**64 over the
# body with odd coefficients k_i drawn from the key.  Any single-byte change
# shifts a lane by an odd multiple of a power of two below 2**64, so it is
# always caught; a different key is caught with overwhelming probability.
_MASK = (1 << 64) - 1
_mac_keys: dict[bytes, tuple] = {}


def _mac_coeffs(public_key: bytes, n: int) -> tuple[list[int], list[int]]:
    got = _mac_keys.get(public_key)
    if got is None or len(got[0]) < n:
        if len(_mac_keys) > 200_000:
            _mac_keys.clear()
        m = max(n, 64)
        got = _mac_keys[public_key] = tuple(
            (np.frombuffer(hashlib.shake_128(b"toy-mac" + lane + public_key).digest(8 * m), "<u8") | 1).tolist()
            for lane in (b"0", b"1"))
    return got


def _toy_tag(public_key: bytes, body: bytes) -> bytes:
    k0, k1 = _mac_coeffs(public_key, len(body))
    t0 = sum((b + 1) * k for b, k in zip(body, k0)) & _MASK
    t1 = sum((b + 1) * k for b, k in zip(body, k1)) & _MASK
    return t0.to_bytes(8, "little") + t1.to_bytes(8, "little")


def _toy_seal(public_key: bytes, plaintext: bytes) -> bytes:
    n = len(plaintext)
    if n:
        ks = _keystreams.get(public_key)
        if ks is None or len(ks) < n:
            ks = _toy_keystream(public_key, n)
        body = (int.from_bytes(plaintext, "little") ^ int.from_bytes(ks[:n], "little")).to_bytes(n, "little")
    else:
        body = b""
    return _toy_tag(public_key, body) + body


def _hkdf(shared: bytes, eph: bytes, recipient: bytes) -> bytes:
    return HKDF(hashes.SHA256(), 32, None, b"tracepriv-seal" + eph + recipient).derive(shared)


_NONCE = bytes(12)


def _seal(public_key: bytes, plaintext: bytes, scheme: Scheme) -> Ciphertext:
    if len(public_key) != KEY_SIZE:
        raise SchemeError(f"public key must be {KEY_SIZE} bytes")
    if scheme is Scheme.TOY_DETERMINISTIC:
        return Ciphertext(_toy_seal(public_key, plaintext), scheme)
    try:
        recipient = X25519PublicKey.from_public_bytes(public_key)
    except ValueError as exc:
        raise SchemeError(f"invalid X25519 public key: {exc}") from None
    eph = X25519PrivateKey.generate()
    eph_pub = eph.public_key().public_bytes_raw()
    key = _hkdf(eph.exchange(recipient), eph_pub, public_key)
    return Ciphertext(eph_pub + ChaCha20Poly1305(key).encrypt(_NONCE, plaintext, None), scheme)


def seal(public_key: bytes, plaintext: bytes, scheme_id: Scheme | str = Scheme.TOY_DETERMINISTIC) -> Ciphertext:
    """Encrypt ``plaintext`` (at most :data:`MAX_PLAINTEXT` bytes) to ``public_key``."""
    if len(plaintext) > MAX_PLAINTEXT:
        raise SizeError(f"plaintext of {len(plaintext)} bytes exceeds {MAX_PLAINTEXT}")
    return _seal(public_key, bytes(plaintext), _scheme(scheme_id))


def _toy_open(secret_key: bytes, data: bytes) -> bytes:
    if len(data) < _TAG:
        raise FormatError("ciphertext shorter than its tag")
    pk = _toy_publics.get(secret_key)
    if pk is None:
        if len(_toy_publics) > 200_000:
            _toy_publics.clear()
        pk = _toy_publics[secret_key] = _toy_public(secret_key)
    body = data[_TAG:]
    if _toy_tag(pk, body) != data[:_TAG]:
        raise AuthenticationError("tag mismatch")
    n = len(body)
    if not n:
        return b""
    ks = _keystreams.get(pk)
    if ks is None or len(ks) < n:
        ks = _toy_keystream(pk, n)
    return (int.from_bytes(body, "little") ^ int.from_bytes(ks[:n], "little")).to_bytes(n, "little")


def _real_open(secret_key: bytes, data: bytes) -> bytes:
    if len(data) < KEY_SIZE + _TAG:
        raise FormatError("ciphertext too short")
    try:
        private = X25519PrivateKey.from_private_bytes(secret_key)
        eph_pub = data[:KEY_SIZE]
        shared = private.exchange(X25519PublicKey.from_public_bytes(eph_pub))
    except ValueError as exc:
        raise AuthenticationError(f"key agreement failed: {exc}") from None
    key = _hkdf(shared, eph_pub, private.public_key().public_bytes_raw())
    try:
        return ChaCha20Poly1305(key).decrypt(_NONCE, data[KEY_SIZE:], None)
    except InvalidTag:
        raise AuthenticationError("tag mismatch") from None


def open(secret_key: bytes, ct: Ciphertext) -> bytes:  # noqa: A001 - mirrors seal/open naming
    """Decrypt; raises :class:`AuthenticationError` unless ``secret_key`` matches."""
    if not isinstance(ct, Ciphertext):
        raise FormatError(f"expected Ciphertext, got {type(ct).__name__}")
    if ct.scheme_id is Scheme.TOY_DETERMINISTIC:
        return _toy_open(secret_key, ct.data)
    if ct.scheme_id is Scheme.REAL:
        return _real_open(secret_key, ct.data)
    raise SchemeError(f"unsupported scheme {ct.scheme_id!r}")


# --- onions -----------------------------------------------------------

def _address_field(address: bytes) -> bytes:
    if not 1 <= len(address) <= ADDRESS_WIDTH:
        raise FormatError(f"address must be 1..{ADDRESS_WIDTH} bytes")
    return bytes([len(address)]) + address + bytes(ADDRESS_WIDTH - len(address))


def onion_wrap(route_public_keys: Sequence[bytes], destination_public_key: bytes,
               msg: StatusMessage | bytes, *, addresses: Sequence[bytes] | None = None,
               scheme_id: Scheme | str = Scheme.TOY_DETERMINISTIC) -> OnionCiphertext:
    """Seal ``msg`` to the destination, then wrap one layer per route hop.

    ``addresses[i]`` is what hop ``i`` learns as its next hop.  By default
    hop ``i`` sees the fingerprint of hop ``i + 1``'s key and the last hop
    sees the destination key's fingerprint (the mailbox address).
    """
    scheme = _scheme(scheme_id)
    if isinstance(msg, StatusMessage):
        payload = bytes([_PAYLOAD_STATUS]) + serialize_status(msg)
    else:
        if len(msg) > MAX_PLAINTEXT:
            raise SizeError(f"payload of {len(msg)} bytes exceeds {MAX_PLAINTEXT}")
        payload = bytes([_PAYLOAD_RAW]) + bytes(msg)
    route = list(route_public_keys)
    if addresses is None:
        addresses = [key_fingerprint(k) for k in route[1:]] + [key_fingerprint(destination_public_key)]
    elif len(addresses) != len(route):
        raise ParameterError("addresses must have one entry per route hop")
    if scheme is Scheme.TOY_DETERMINISTIC:
        if len(destination_public_key) != KEY_SIZE or any(len(pk) != KEY_SIZE for pk in route):
            raise SchemeError(f"public key must be {KEY_SIZE} bytes")
        data = _toy_seal(destination_public_key, payload)
        for pk, address in zip(reversed(route), reversed(list(addresses))):
            data = _toy_seal(pk, _address_field(address) + data)
        return OnionCiphertext(len(route) + 1, Ciphertext(data, scheme))
    ct = _seal(destination_public_key, payload, scheme)
    for pk, address in zip(reversed(route), reversed(list(addresses))):
        ct = _seal(pk, _address_field(address) + ct.data, scheme)
    return OnionCiphertext(len(route) + 1, ct)


def onion_peel(secret_key: bytes, onion: OnionCiphertext) -> Relay | Final:
    """Remove exactly one layer."""
    if type(onion) is not OnionCiphertext and not isinstance(onion, OnionCiphertext):
        raise FormatError(f"cannot peel a {type(onion).__name__}")
    if onion.layers < 1:
        raise FormatError("onion has no layers")
    outer = onion.outer
    if outer.scheme_id is Scheme.TOY_DETERMINISTIC:
        plain = _toy_open(secret_key, outer.data)
    else:
        plain = open(secret_key, outer)
    if onion.layers == 1:
        if not plain:
            raise FormatError("empty innermost payload")
        if plain[0] == _PAYLOAD_STATUS:
            return Final(deserialize_status(plain[1:]))
        if plain[0] == _PAYLOAD_RAW:
            return Final(plain[1:])
        raise FormatError("unknown innermost payload type")
    if len(plain) < 1 + ADDRESS_WIDTH:
        raise FormatError("relay layer shorter than its address field")
    n = plain[0]
    if not 1 <= n <= ADDRESS_WIDTH:
        raise FormatError("bad address length")
    next_hop = plain[1:1 + n]
    inner = Ciphertext(plain[1 + ADDRESS_WIDTH:], outer.scheme_id)
    return Relay(next_hop, OnionCiphertext(onion.layers - 1, inner))


# --- batches ----------------------------------------------------------
#
# Every onion at a given depth has the same length, so a relay can hold its
# whole input as one ``(n, length)`` byte matrix.  The batch routines below
# produce exactly the bytes the single-message routines produce under the
# TOY scheme; REAL falls back to a loop over the single-message path.

@dataclass(slots=True, eq=False)
class OnionBatch:
    """``n`` onions of equal depth and length, one per row of ``data``."""

    layers: int
    data: np.ndarray
    scheme_id: Scheme = Scheme.TOY_DETERMINISTIC

    def __len__(self):
        return self.data.shape[0]

    def row(self, i: int) -> OnionCiphertext:
        return OnionCiphertext(self.layers, Ciphertext(self.data[i].tobytes(), self.scheme_id))

    def take(self, index) -> OnionBatch:
        return OnionBatch(self.layers, self.data[index], self.scheme_id)

    def digests(self, nbytes: int = 8) -> np.ndarray:
        """Leading bytes of each row as integers.  Equal rows (deterministic seals) share one."""
        return np.ascontiguousarray(self.data[:, :nbytes]).view(f">u{nbytes}").ravel().astype(np.uint64)

    @classmethod
    def of(cls, onions: Sequence[OnionCiphertext]) -> OnionBatch:
        if not onions:
            raise ParameterError("cannot batch zero onions")
        layers, scheme = onions[0].layers, onions[0].outer.scheme_id
        if any(o.layers != layers or o.outer.scheme_id is not scheme for o in onions):
            raise FormatError("onions in a batch must share depth and scheme")
        rows = [o.outer.data for o in onions]
        if len({len(r) for r in rows}) != 1:
            raise FormatError("onions in a batch must share length")
        return cls(layers, np.frombuffer(b"".join(rows), np.uint8).reshape(len(rows), -1), scheme)

    @staticmethod
    def concat(batches: Sequence[OnionBatch]) -> OnionBatch:
        first = batches[0]
        if any(b.layers != first.layers or b.scheme_id is not first.scheme_id for b in batches):
            raise FormatError("cannot concatenate onions of different depth or scheme")
        return OnionBatch(first.layers, np.concatenate([b.data for b in batches]), first.scheme_id)


_ks_arrays: dict[bytes, np.ndarray] = {}


def _ks_row(public_key: bytes, n: int) -> np.ndarray:
    a = _ks_arrays.get(public_key)
    if a is None or a.shape[0] < n:
        if len(_ks_arrays) > 200_000:
            _ks_arrays.clear()
        a = _ks_arrays[public_key] = np.frombuffer(_toy_keystream(public_key, n), np.uint8)
    return a[:n]


class KeyTable:
    """Precomputed TOY key material for a fixed set of keys, for fast per-row lookup.

    With ``secret=True`` the table is indexed by secret keys and holds the
    material of the matching public keys, for :func:`open_batch`.
    """

    def __init__(self, keys: Sequence[bytes], width: int, *, secret: bool = False):
        self.keys = list(dict.fromkeys(keys))
        self.width = width
        self.pos = {k: i for i, k in enumerate(self.keys)}
        pks = [_public_of(k) for k in self.keys] if secret else self.keys
        if any(len(k) != KEY_SIZE for k in pks):
            raise SchemeError(f"public key must be {KEY_SIZE} bytes")
        self.ks = np.stack([_ks_row(k, width) for k in pks]) if pks else np.zeros((0, width), np.uint8)
        self.mac = np.stack([_mac_row(k, width) for k in pks]) if pks else np.zeros((0, 2, width), np.uint64)

    def rows(self, keys: Sequence[bytes]) -> KeyRows:
        pos = self.pos
        try:
            return KeyRows(self, np.fromiter((pos[k] for k in keys), np.intp, len(keys)))
        except KeyError as exc:
            raise SchemeError(f"key {exc.args[0].hex()[:16]}... is not in the table") from None


@dataclass(slots=True, eq=False)
class KeyRows:
    """One table key per batch row."""

    table: KeyTable
    idx: np.ndarray

    def __len__(self):
        return len(self.idx)


def _keys_for(keys, n: int):
    """``None`` when one key covers the whole batch."""
    if isinstance(keys, (bytes, bytearray)):
        return None
    if isinstance(keys, KeyRows):
        if len(keys) != n:
            raise ParameterError(f"expected {n} keys, got {len(keys)}")
        return keys
    keys = list(keys)
    if len(keys) != n:
        raise ParameterError(f"expected {n} keys, got {len(keys)}")
    return keys


def _index(keys: list[bytes]) -> tuple[list[bytes], np.ndarray]:
    """Distinct keys in first-seen order, and each row's position among them."""
    uniq: dict[bytes, int] = {}
    idx = np.fromiter((uniq.setdefault(k, len(uniq)) for k in keys), np.intp, len(keys))
    return list(uniq), idx


def _count(keys) -> int:
    return len(keys) if isinstance(keys, KeyRows) else len(keys[1])


def _gather(keys, width: int, row_fn) -> np.ndarray:
    if isinstance(keys, KeyRows):
        t = keys.table
        if width > t.width:
            raise SizeError(f"rows of {width} bytes exceed the key table width {t.width}")
        m = t.ks if row_fn is _ks_row else t.mac
        return m[keys.idx, ..., :width]
    uniq, idx = keys
    return np.stack([row_fn(k, width) for k in uniq])[idx]


def _xor_rows(body: np.ndarray, public_key: bytes | None, keys) -> np.ndarray:
    width = body.shape[1]
    if keys is None:
        return body ^ _ks_row(public_key, width)
    return body ^ _gather(keys, width, _ks_row) if _count(keys) else body.copy()


_mac_arrays: dict[bytes, np.ndarray] = {}


def _mac_row(public_key: bytes, n: int) -> np.ndarray:
    a = _mac_arrays.get(public_key)
    if a is None or a.shape[1] < n:
        if len(_mac_arrays) > 200_000:
            _mac_arrays.clear()
        a = _mac_arrays[public_key] = np.array(_mac_coeffs(public_key, n), dtype=np.uint64)
    return a[:, :n]


def _tags(body: np.ndarray, public_key: bytes | None, keys) -> np.ndarray:
    n, width = body.shape
    b = body.astype(np.uint64) + np.uint64(1)
    if keys is None:
        lanes = np.einsum("nw,kw->nk", b, _mac_row(public_key, width))              # (n, 2), wraps mod 2**64
    else:
        k = _gather(keys, width, _mac_row) if _count(keys) else np.zeros((0, 2, width), np.uint64)
        lanes = np.einsum("nw,nkw->nk", b, k)                                    # also wraps mod 2**64
    return np.ascontiguousarray(lanes.astype("<u8")).view(np.uint8).reshape(n, _TAG)


def _as_rows(plaintexts) -> np.ndarray:
    if isinstance(plaintexts, np.ndarray):
        if plaintexts.ndim != 2 or plaintexts.dtype != np.uint8:
            raise FormatError("plaintext batch must be a 2-d uint8 array")
        return plaintexts
    rows = list(plaintexts)
    if not rows or len({len(r) for r in rows}) != 1:
        raise FormatError("plaintext batch must be non-empty with equal-length rows")
    return np.frombuffer(b"".join(rows), np.uint8).reshape(len(rows), -1)


def seal_batch(public_keys, plaintexts, scheme_id: Scheme | str = Scheme.TOY_DETERMINISTIC) -> np.ndarray:
    """Seal each row; ``public_keys`` is one key or one per row."""
    scheme = _scheme(scheme_id)
    pt = _as_rows(plaintexts)
    n = pt.shape[0]
    keys = _keys_for(public_keys, n)
    if scheme is not Scheme.TOY_DETERMINISTIC:
        per = keys if keys is not None else [public_keys] * n
        return np.stack([np.frombuffer(_seal(k, r.tobytes(), scheme).data, np.uint8) for k, r in zip(per, pt)])
    if isinstance(keys, KeyRows):
        if scheme is not Scheme.TOY_DETERMINISTIC:
            keys = [keys.table.keys[i] for i in keys.idx.tolist()]
    kidx = keys if isinstance(keys, KeyRows) else (_index(keys) if keys is not None else None)
    if not isinstance(kidx, KeyRows) and any(len(k) != KEY_SIZE for k in (kidx[0] if kidx is not None else [public_keys])):
        raise SchemeError(f"public key must be {KEY_SIZE} bytes")
    pk = None if keys is not None else bytes(public_keys)
    body = _xor_rows(pt, pk, kidx)
    return np.concatenate([_tags(body, pk, kidx), body], axis=1)


def _public_of(secret_key: bytes) -> bytes:
    pk = _toy_publics.get(secret_key)
    if pk is None:
        pk = _toy_publics[secret_key] = _toy_public(secret_key)
    return pk


def open_batch(secret_keys, cts: np.ndarray,
               scheme_id: Scheme | str = Scheme.TOY_DETERMINISTIC) -> tuple[np.ndarray, np.ndarray]:
    """Decrypt each row.  Returns ``(plaintexts, ok)``; rows where ``ok`` is false are zeroed."""
    scheme = _scheme(scheme_id)
    n = cts.shape[0]
    keys = _keys_for(secret_keys, n)
    if isinstance(keys, KeyRows) and scheme is not Scheme.TOY_DETERMINISTIC:
        keys = [keys.table.keys[i] for i in keys.idx.tolist()]
    if scheme is not Scheme.TOY_DETERMINISTIC:
        per = keys if keys is not None else [secret_keys] * n
        width = cts.shape[1] - KEY_SIZE - _TAG
        out = np.zeros((n, max(width, 0)), np.uint8)
        ok = np.zeros(n, bool)
        for i, (k, r) in enumerate(zip(per, cts)):
            try:
                out[i] = np.frombuffer(_real_open(k, r.tobytes()), np.uint8)
                ok[i] = True
            except (AuthenticationError, FormatError):
                pass
        return out, ok
    if cts.shape[1] < _TAG:
        raise FormatError("ciphertext shorter than its tag")
    body = cts[:, _TAG:]
    if keys is None:
        pk, pks = _public_of(bytes(secret_keys)), None
    elif isinstance(keys, KeyRows):
        pk, pks = None, keys
    else:
        uniq, idx = _index(keys)
        pk, pks = None, ([_public_of(k) for k in uniq], idx)
    ok = (_tags(body, pk, pks) == cts[:, :_TAG]).all(axis=1)
    plain = _xor_rows(body, pk, pks)
    plain[~ok] = 0
    return plain, ok


def peel_raw_batch(secret_key: bytes, batch: OnionBatch) -> np.ndarray:
    """Innermost layer of raw-byte payloads, as a matrix with one row per onion.

    Same checks as :func:`onion_peel_batch`, without building one bytes
    object per row.
    """
    if not isinstance(batch, OnionBatch) or batch.layers != 1:
        raise FormatError("expected a batch of one-layer onions")
    plain, ok = open_batch(secret_key, batch.data, batch.scheme_id)
    if not ok.all():
        raise AuthenticationError(f"{int((~ok).sum())} of {len(ok)} rows failed to open")
    if plain.shape[1] < 1 or (plain[:, 0] != _PAYLOAD_RAW).any():
        raise FormatError("innermost payload is not raw bytes")
    return plain[:, 1:]


def _field_rows(address, n: int) -> np.ndarray:
    if isinstance(address, (bytes, bytearray)):
        return np.broadcast_to(np.frombuffer(_address_field(bytes(address)), np.uint8), (n, 1 + ADDRESS_WIDTH))
    rows = list(address)
    if len(rows) != n:
        raise ParameterError(f"expected {n} addresses, got {len(rows)}")
    width = len(rows[0]) if rows else 0
    if rows and 1 <= width <= ADDRESS_WIDTH and all(len(a) == width for a in rows):
        out = np.zeros((n, 1 + ADDRESS_WIDTH), np.uint8)
        out[:, 0] = width
        out[:, 1:1 + width] = np.frombuffer(b"".join(rows), np.uint8).reshape(n, width)
        return out
    return np.frombuffer(b"".join(_address_field(a) for a in rows), np.uint8).reshape(n, 1 + ADDRESS_WIDTH)


def encode_payload(msg: StatusMessage | bytes) -> bytes:
    """Innermost plaintext of an onion: a type byte and the message."""
    if isinstance(msg, StatusMessage):
        return bytes([_PAYLOAD_STATUS]) + serialize_status(msg)
    if len(msg) > MAX_PLAINTEXT:
        raise SizeError(f"payload of {len(msg)} bytes exceeds {MAX_PLAINTEXT}")
    return bytes([_PAYLOAD_RAW]) + bytes(msg)


def decode_payload(plain: bytes) -> StatusMessage | bytes:
    if not plain:
        raise FormatError("empty innermost payload")
    if plain[0] == _PAYLOAD_STATUS:
        return deserialize_status(plain[1:])
    if plain[0] == _PAYLOAD_RAW:
        return plain[1:]
    raise FormatError("unknown innermost payload type")


_STATUS_ROW = np.dtype([("type", "u1"), ("status", "u1"), ("slot", ">u8"), ("seq", ">u8"), ("kind", "u1"),
                        ("pad", "u1", STATUS_SIZE - _STATUS_HEAD.size)])


def encode_status_rows(status, contact_slot, sequence_no, self_reported) -> np.ndarray:
    """Innermost payloads for many status messages at once, as a ``(n, 33)`` matrix.

    ``self_reported`` only takes effect on INFECTED rows, as in
    :func:`serialize_status`.
    """
    status = np.asarray(status, np.uint8)
    slot, seq = np.asarray(contact_slot, np.int64), np.asarray(sequence_no, np.int64)
    if (slot < 0).any() or (seq < 0).any():
        raise FormatError("contact_slot and sequence_no must be non-negative")
    rec = np.zeros(status.shape[0], _STATUS_ROW)
    rec["type"] = _PAYLOAD_STATUS
    rec["status"] = status
    rec["slot"] = slot
    rec["seq"] = seq
    rec["kind"] = (np.asarray(self_reported, bool) & (status == 1)).astype(np.uint8)
    return rec.view(np.uint8).reshape(status.shape[0], _STATUS_ROW.itemsize)


def decode_status_rows(plain: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """Parse ``(n, 33)`` innermost payloads.  Returns ``(records, ok)``.

    ``records`` is a structured array with ``status``, ``slot``, ``seq`` and
    ``kind`` fields; ``ok`` marks rows that :func:`decode_payload` would
    accept as a status message.
    """
    n = plain.shape[0]
    if plain.shape[1] != _STATUS_ROW.itemsize:
        return np.zeros(n, _STATUS_ROW), np.zeros(n, bool)
    rec = np.ascontiguousarray(plain).view(_STATUS_ROW).ravel()
    ok = ((rec["type"] == _PAYLOAD_STATUS) & (rec["status"] <= 1) & (rec["kind"] <= 1)
          & ~((rec["kind"] == 1) & (rec["status"] == 0)) & ~rec["pad"].any(axis=1))
    return rec, ok


def onion_wrap_batch(route_public_keys: Sequence[bytes], destination_public_keys, messages: Sequence,
                     *, addresses: Sequence | None = None,
                     scheme_id: Scheme | str = Scheme.TOY_DETERMINISTIC) -> OnionBatch:
    """:func:`onion_wrap` for many messages over one route.

    ``destination_public_keys`` is one key or one per message; each entry of
    ``addresses`` is one address or one per message.  ``messages`` may also
    be a matrix of already-encoded payloads (see :func:`encode_status_rows`).
    """
    scheme = _scheme(scheme_id)
    if isinstance(messages, np.ndarray):
        payloads = _as_rows(messages)
    else:
        payloads = _as_rows([encode_payload(m) for m in messages])
    n = len(payloads)
    route = list(route_public_keys)
    if addresses is None:
        dests = _keys_for(destination_public_keys, n)
        if isinstance(dests, KeyRows):
            dests = [dests.table.keys[i] for i in dests.idx.tolist()]
        last = key_fingerprint(destination_public_keys) if dests is None else [key_fingerprint(k) for k in dests]
        addresses = [key_fingerprint(k) for k in route[1:]] + [last] if route else []
    elif len(addresses) != len(route):
        raise ParameterError("addresses must have one entry per route hop")
    data = seal_batch(destination_public_keys, payloads, scheme)
    for pk, address in zip(reversed(route), reversed(list(addresses))):
        data = seal_batch(pk, np.concatenate([_field_rows(address, n), data], axis=1), scheme)
    return OnionBatch(len(route) + 1, data, scheme)


def onion_peel_batch(secret_key: bytes, batch: OnionBatch) -> tuple[list[bytes] | None, OnionBatch | list]:
    """Remove one layer from every row.

    Relay layers give ``(next_hops, inner_batch)``; the innermost layer gives
    ``(None, messages)``.  Any row that fails to open raises, as
    :func:`onion_peel` would.
    """
    if not isinstance(batch, OnionBatch):
        raise FormatError(f"cannot batch-peel a {type(batch).__name__}")
    if batch.layers < 1:
        raise FormatError("onion has no layers")
    plain, ok = open_batch(secret_key, batch.data, batch.scheme_id)
    if not ok.all():
        raise AuthenticationError(f"{int((~ok).sum())} of {len(ok)} rows failed to open")
    if batch.layers == 1:
        raw = plain.tobytes()
        w = plain.shape[1]
        return None, [decode_payload(raw[i:i + w]) for i in range(0, len(raw), w)]
    if plain.shape[1] < 1 + ADDRESS_WIDTH:
        raise FormatError("relay layer shorter than its address field")
    lengths = plain[:, 0]
    if ((lengths < 1) | (lengths > ADDRESS_WIDTH)).any():
        raise FormatError("bad address length")
    fields = plain[:, 1:1 + ADDRESS_WIDTH].tobytes()
    hops = [fields[i * ADDRESS_WIDTH:i * ADDRESS_WIDTH + int(k)] for i, k in enumerate(lengths.tolist())]
    return hops, OnionBatch(batch.layers - 1, np.ascontiguousarray(plain[:, 1 + ADDRESS_WIDTH:]), batch.scheme_id)
