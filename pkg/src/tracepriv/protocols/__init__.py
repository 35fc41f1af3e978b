"""Protocol variants over a simulated network, and the operations they share."""

from __future__ import annotations

from ..errors import ProtocolError
from ..simworld import World
from .base import (
    AUTHORITY, TABLE_VARIANTS, DiagnosisReport, ExposureResult, ExposureStatus, MixConfig, ProtocolRun, Signal,
    Truth, UserClient, Variant, VariantConfig,
)
from .central import CentralRun
from .network import Engine, NetMessage, Network, Origin, View, ViewRecord
from .pms import Mailbox, PmsRun, ReturnBlob, pms_fetch_mailboxes, pms_send_status
from .polling import MixRun, PollingRun, partition
from .pubdb import PubDb, PubDbRun, batch_index, publish_database

RUNS = {
    Variant.CENTRAL: CentralRun,
    Variant.POLLING: PollingRun,
    Variant.POLLING_NOISE: PollingRun,
    Variant.POLLING_MIX: MixRun,
    Variant.PUBDB: PubDbRun,
    Variant.PMS: PmsRun,
}


def make_run(world: World, cfg: VariantConfig | Variant) -> ProtocolRun:
    if isinstance(cfg, Variant):
        cfg = VariantConfig(cfg)
    return RUNS[cfg.variant](world, cfg)


def run_variant(world: World, cfg: VariantConfig | Variant) -> ProtocolRun:
    """Build and execute one variant over ``world``."""
    return make_run(world, cfg).execute()


def register(run: ProtocolRun, user: int):
    return run.register(user)


def report_diagnosis(run: ProtocolRun, user: int, report: DiagnosisReport, slot: int):
    return run.report_diagnosis(user, report, slot)


def poll_exposure(run: ProtocolRun, user: int, slot: int | None = None) -> ExposureResult:
    """The user's exposure status, as last learned by their device.

    Polls are asynchronous, so this reads the state a completed run left
    behind (CENTRAL pushes instead of polling; the pushed state is read the
    same way).  With ``slot`` given, the status as of that slot is returned.
    """
    c = run.clients[user]
    if slot is not None and c.first_exposed is not None and c.first_exposed > slot:
        return ExposureResult(ExposureStatus.NOT_EXPOSED, slot=slot)
    return c.result


def malicious_single_token_query(run: ProtocolRun, attacker: int, token: bytes, *, max_slots: int = 12) -> ExposureStatus:
    """Ask the authority about a single token and wait for the reply.

    Only the polling variants have a plaintext query channel; everywhere
    else this raises :class:`~tracepriv.errors.ProtocolError`.
    """
    if not isinstance(run, PollingRun):
        raise ProtocolError(f"{run.cfg.variant.value} offers no token query channel")
    c = run.clients[attacker]
    msg = run.query(attacker, [token])
    c.probes[msg.msg_id] = None
    eng = run.engine
    start = eng.now
    for step in range(1, max_slots + 1):
        eng.run(start + step)
        if isinstance(run, MixRun):
            for m in run.mixes:
                m.flush()
        if c.probes[msg.msg_id] is not None:
            ans = c.probes.pop(msg.msg_id)
            hit = ans["confirmed"] or ans["self_reported"]
            return ExposureStatus.EXPOSED if hit else ExposureStatus.NOT_EXPOSED
    raise ProtocolError("no answer to the single-token query")


__all__ = [
    "AUTHORITY", "TABLE_VARIANTS", "DiagnosisReport", "Engine", "ExposureResult", "ExposureStatus", "Mailbox",
    "MixConfig", "NetMessage", "Network", "Origin", "ProtocolRun", "PubDb", "ReturnBlob", "Signal", "Truth",
    "UserClient", "Variant", "VariantConfig", "View", "ViewRecord", "batch_index", "make_run",
    "malicious_single_token_query", "partition", "pms_fetch_mailboxes", "pms_send_status", "poll_exposure",
    "publish_database", "register", "report_diagnosis", "run_variant",
]
