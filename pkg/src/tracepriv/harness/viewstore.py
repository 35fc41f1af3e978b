"""Persist executed runs so the attacks can be re-run without re-simulating.

What is stored is everything the attacks read: actor views, device state
and the scoring truth.  Two things are left out to keep files small.  The
world is regenerated from (config, seed) on load, which is cheap and
deterministic.  Ciphertexts are cut to the 8-byte prefix that identifies
them, since no attack can read further than that.  A loaded run is
therefore good for analysis only; it cannot be executed further.
"""

from __future__ import annotations

import gzip
import pickle
from pathlib import Path

from ..cryptobox import KeyTable, OnionBatch
from ..protocols.pms import Mailbox, ReturnBlob
from ..simworld import World

PREFIX = 8
MAGIC = "tracepriv-views/1"


class _Dropped:
    """Placeholder for state that only matters while a run executes."""

    def __init__(self, what: str):
        self.what = what

    def __repr__(self):
        return f"<dropped {self.what}>"


def _cut(b: bytes) -> bytes:
    return b[:PREFIX]


def _batch(layers, data, scheme):
    return OnionBatch(layers, data, scheme)


class _Pickler(pickle.Pickler):
    def __init__(self, file, world: World):
        super().__init__(file, protocol=pickle.HIGHEST_PROTOCOL)
        ids = {id(world): ("world",), id(world.events): ("events",), id(world.timeline): ("timeline",),
               id(world.schedules): ("schedules",), id(world.logs): ("logs",), id(world.users): ("users",)}
        for u, s in world.schedules.items():
            ids[id(s)] = ("schedule", u)
        for u, log in world.logs.items():
            ids[id(log)] = ("log", u)
        self._ids = ids

    def persistent_id(self, obj):
        return self._ids.get(id(obj))

    def reducer_override(self, obj):
        if isinstance(obj, OnionBatch):
            return _batch, (obj.layers, obj.data[:, :PREFIX].copy(), obj.scheme_id)
        if isinstance(obj, ReturnBlob):
            return ReturnBlob, (tuple(_cut(c) for c in obj.content), obj.label)
        if isinstance(obj, Mailbox):
            return Mailbox, (obj.key, [_cut(m) for m in obj.messages])
        if isinstance(obj, KeyTable):
            return _Dropped, ("key table",)
        return NotImplemented


class _Unpickler(pickle.Unpickler):
    def __init__(self, file, world: World):
        super().__init__(file)
        self._world = world

    def persistent_load(self, pid):
        w = self._world
        kind = pid[0]
        if kind == "world":
            return w
        if kind == "schedule":
            return w.schedules[pid[1]]
        if kind == "log":
            return w.logs[pid[1]]
        return getattr(w, kind)


def save_runs(path: str | Path, world: World, runs: dict, *, meta: dict | None = None) -> Path:
    path = Path(path)
    with gzip.open(path, "wb", compresslevel=1) as f:
        pickle.dump((MAGIC, meta or {}), f, protocol=pickle.HIGHEST_PROTOCOL)
        _Pickler(f, world).dump(runs)
    return path


def read_meta(path: str | Path) -> dict:
    with gzip.open(path, "rb") as f:
        magic, meta = pickle.load(f)
    if magic != MAGIC:
        raise ValueError(f"{path} is not a view store")
    return meta


def load_runs(path: str | Path, world: World) -> dict:
    """Load runs saved by :func:`save_runs`; ``world`` must be the one they ran on."""
    with gzip.open(path, "rb") as f:
        magic, _ = pickle.load(f)
        if magic != MAGIC:
            raise ValueError(f"{path} is not a view store")
        return _Unpickler(f, world).load()
