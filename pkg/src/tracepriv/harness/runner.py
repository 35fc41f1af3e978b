"""Run a config: build the world, execute each variant, attack it, report."""

from __future__ import annotations

import gc
import os
import statistics
from collections import Counter
from concurrent.futures import ProcessPoolExecutor
from contextlib import contextmanager
from dataclasses import dataclass, field
from pathlib import Path

from .. import adversary as adv
from ..errors import InvariantViolation, ParameterError, RunFailed
from ..protocols import AUTHORITY, MixRun, PmsRun, ProtocolRun, Variant, run_variant
from ..protocols.base import ceil_div
from ..simworld import World, build_world
from .config import RunConfig, load_config
from .report import compare_records, render_compare, render_summary, run_records, stub_records, write_records

OUT_ENV = "TRACEPRIV_OUT"
DEFAULT_OUT = "out"


def output_dir(explicit: str | Path | None = None) -> Path:
    """``explicit`` if given, else ``$TRACEPRIV_OUT``, else ``./out``."""
    if explicit is not None:
        return Path(explicit)
    return Path(os.environ.get(OUT_ENV) or DEFAULT_OUT)


@dataclass
class VariantOutcome:
    variant: Variant
    exposed: list
    oracle: list
    latency: dict
    messages: dict        # actor -> messages sent; all devices summed under "users"
    bytes: dict
    storage: dict
    server_count: int
    crypto_ops: int
    by_kind: dict
    downlink: int = 0     # bytes delivered to devices
    filter: dict | None = None

    @property
    def correct(self) -> bool:
        return self.exposed == self.oracle

    @property
    def total_messages(self) -> int:
        return sum(self.messages.values())

    @property
    def total_bytes(self) -> int:
        return sum(self.bytes.values())


@dataclass
class RunReport:
    name: str
    seed: int
    config: dict
    population: int
    outcomes: dict = field(default_factory=dict)     # variant -> VariantOutcome
    attacks: dict = field(default_factory=dict)      # variant -> notion -> NotionResult
    extra: dict = field(default_factory=dict)        # variant -> [AttackResult]
    matrix: adv.PrivacyMatrix | None = None
    aborted: InvariantViolation | None = None

    @property
    def correct(self) -> bool:
        return self.aborted is None and all(o.correct for o in self.outcomes.values())

    def records(self, *, timestamp: str | None = None) -> list[dict]:
        if self.aborted is not None:
            return stub_records(self, timestamp=timestamp)
        return run_records(self, timestamp=timestamp)

    def summary(self) -> str:
        return render_summary(self.records(timestamp=""))


# --- invariants ---------------------------------------------------------

def check_invariants(run: ProtocolRun):
    """Structural properties every executed run must have; raises InvariantViolation."""
    net = run.net
    sent, got, flying = sum(net.sent.values()), sum(net.received.values()), run.engine.in_flight()
    if sent != got + flying:
        raise InvariantViolation("every-message-delivered", f"{sent} sent, {got} delivered, {flying} in flight")
    diagnosed = set(run.world.timeline.diagnosed())
    if run.exposed_set() & diagnosed:
        raise InvariantViolation("diagnosed-not-exposed")
    if isinstance(run, MixRun):
        m = len(run.mixes)
        shares = {}
        for mix in run.mixes:
            for msg in mix.view.inbound("REPORT_SHARE"):
                shares.setdefault(msg.src, []).append(len(msg.payload["tokens"]))
        for src, sizes in shares.items():
            total = sum(sizes)
            if len(sizes) > m or max(sizes) > ceil_div(total, m):
                raise InvariantViolation("mix-share-bound", f"{src} sent shares {sizes} to {m} servers")
    if isinstance(run, PmsRun) and run.route_length:
        devices = set(run.truth.user_of)
        direct = [m for m in run.authority.view.inbound() if m.src in devices]
        if direct:
            raise InvariantViolation("pms-no-direct-user-messages", f"{len(direct)} messages from devices")


# --- one run -------------------------------------------------------------

def notification_latency(run: ProtocolRun) -> dict:
    """Slots from the earliest responsible diagnosis to the first EXPOSED answer."""
    world = run.world
    tl = world.timeline
    W = run.params.exposure_window
    r = world.cfg.proximity_radius
    lat = []
    for u in sorted(run.exposed_set()):
        causes = []
        for e in world.events_of(u):
            p = e.b if e.a == u else e.a
            if e.distance > r or tl.diagnosis_slot[p] is None:
                continue
            win = tl.report_window(p, W)
            if win and win[0] <= e.slot <= win[1]:
                causes.append(tl.diagnosis_slot[p])
        first = run.clients[u].first_exposed
        if causes and first is not None:
            lat.append(first - min(causes))
    if not lat:
        return {"count": 0, "mean": None, "median": None, "max": None}
    return {"count": len(lat), "mean": round(statistics.fmean(lat), 3), "median": statistics.median(lat),
            "max": max(lat)}


def _per_actor(counter, servers) -> dict:
    out = {a: counter.get(a, 0) for a in sorted(servers)}
    out["users"] = sum(v for a, v in counter.items() if a not in servers)
    return out


def outcome(run: ProtocolRun, oracle: set) -> VariantOutcome:
    net = run.net
    servers = set(run.servers)
    m = run.metrics()
    return VariantOutcome(
        run.cfg.variant, sorted(run.exposed_set()), sorted(oracle), notification_latency(run),
        _per_actor(net.sent, servers), _per_actor(net.bytes_sent, servers), {AUTHORITY: run.storage()},
        len(servers), run.crypto_ops, m["by_kind"],
        sum(b for a, b in net.bytes_received.items() if a not in servers))


def extra_attacks(run: ProtocolRun, cfg: RunConfig, seed: int) -> tuple[list, dict | None]:
    shuffles = cfg.adversary.shuffles
    out = []
    flt = None
    if isinstance(run, PmsRun) and run.route_length:
        R = run.route_length
        trials = [(), *[(i,) for i in range(R)]]
        if R > 1:
            trials.append(tuple(range(R)))
        for coalition in trials:
            out.append(adv.pms_pairing(run, coalition, shuffles=shuffles, seed=seed))
    if run.cfg.variant in (Variant.POLLING, Variant.POLLING_NOISE) and run.cfg.noise:
        res = adv.score_filter(adv.authority_filter_noise(run.authority.view), run)
        flt = {"kept": len(res.recovered), "removed": res.removed, "flagged": len(res.flagged),
               "precision": round(res.precision, 6), "recall": round(res.recall, 6)}
    return out, flt


def attack_run(run: ProtocolRun, cfg: RunConfig, seed: int, sensors=None) -> dict:
    a = cfg.adversary
    if sensors is None or isinstance(run, PmsRun):
        sensors = adv.build_sensor_log(run.world, run.schedules, sensor_count=a.sensor_count,
                                       placement=a.sensor_places)
    return adv.attack_suite(run, sensors=sensors, shuffles=a.shuffles, seed=seed, track_window=a.track_window,
                            pool_size=a.ip_pool_size)


_frozen = 0


@contextmanager
def frozen_heap():
    """Pause the cyclic collector and keep everything alive now out of its scans.

    A world and its runs outlive everything built on them; rescanning them
    costs more than the runs themselves.  Runs hold reference cycles, so the
    harness frees them with :meth:`ProtocolRun.close` instead.
    """
    global _frozen
    if not _frozen:
        enabled = gc.isenabled()
        gc.disable()
        gc.freeze()
    _frozen += 1
    try:
        yield
    finally:
        _frozen -= 1
        if not _frozen:
            gc.unfreeze()
            if enabled:
                gc.enable()


def execute(cfg: RunConfig, seed: int) -> tuple[World, dict]:
    """Build the world for ``seed`` and run every configured variant on it."""
    world = build_world(cfg.scenario(seed))
    runs = {}
    with frozen_heap():
        try:
            for v in cfg.variants:
                runs[v] = run_variant(world, cfg.variant_config(v))
                check_invariants(runs[v])
        except InvariantViolation:
            for run in runs.values():
                run.close()
            raise
    return world, runs


def analyse(cfg: RunConfig, seed: int, world: World, runs: dict) -> RunReport:
    report = RunReport(cfg.name, int(seed), cfg.echo(), world.population)
    oracle = world.oracle()
    a = cfg.adversary
    sensors = adv.build_sensor_log(world, world.schedules, sensor_count=a.sensor_count, placement=a.sensor_places)
    results = {}
    for v, run in runs.items():
        report.outcomes[v] = outcome(run, oracle)
        suite = attack_run(run, cfg, seed, sensors)
        report.attacks[v] = suite
        for n, r in suite.items():
            results[(v, n)] = r
        report.extra[v], report.outcomes[v].filter = extra_attacks(run, cfg, seed)
    report.matrix = adv.build_privacy_matrix(results, world.population, cfg.thresholds, variants=list(runs))
    return report


def report_paths(out: Path, name: str, seed) -> tuple[Path, Path, Path]:
    base = out / f"{name}.{seed}"
    return base.with_name(base.name + ".report"), base.with_name(base.name + ".summary"), \
        base.with_name(base.name + ".views.gz")


def write_report(report: RunReport, out: Path) -> tuple[Path, Path]:
    out.mkdir(parents=True, exist_ok=True)
    rpath, spath, _ = report_paths(out, report.name, report.seed)
    recs = report.records()
    write_records(rpath, recs)
    spath.write_text(render_summary(recs), encoding="utf-8")
    return rpath, spath


def run_scenario(config: RunConfig | str | Path, seed: int | None = None, *, out_dir: str | Path | None = None,
                 write: bool = True, save_views: bool = False) -> RunReport:
    """World, protocols, attacks and report for one (config, seed).

    With ``write`` the ``.report`` and ``.summary`` files go to
    :func:`output_dir`; ``save_views`` also stores the executed runs for
    later re-attack.  An invariant violation writes a stub report naming
    it and is then re-raised.
    """
    cfg = config if isinstance(config, RunConfig) else load_config(config)
    seed = cfg.world.seed if seed is None else int(seed)
    out = output_dir(out_dir)
    try:
        world, runs = execute(cfg, seed)
    except InvariantViolation as e:
        stub = RunReport(cfg.name, seed, cfg.echo(), cfg.world.population, aborted=e)
        if write:
            write_report(stub, out)
        raise
    try:
        with frozen_heap():
            report = analyse(cfg, seed, world, runs)
        if write:
            write_report(report, out)
            if save_views:
                from .viewstore import save_runs
                save_runs(report_paths(out, cfg.name, seed)[2], world, runs,
                          meta={"config": cfg.echo(), "seed": seed})
    finally:
        for run in runs.values():
            run.close()
    return report


# --- batches -------------------------------------------------------------

@dataclass
class CompareSummary:
    """Per-variant aggregates over a batch of runs; every number recomputes from the reports."""

    name: str
    seeds: list
    variants: list
    correct: dict         # variant -> every run equal to the oracle
    verdicts: dict        # variant -> notion -> Counter of verdict names
    matrix_pass: bool
    per_seed_match: dict  # seed -> matrix matched expected
    messages: dict        # variant -> mean messages per run
    bytes: dict
    storage: dict
    server_count: dict
    crypto_ops: dict
    downlink: dict

    @classmethod
    def from_reports(cls, reports: list[RunReport]) -> CompareSummary:
        if not reports:
            raise ParameterError("compare needs at least one seed")
        variants = list(reports[0].outcomes)

        def mean(f):
            return {v.value: statistics.fmean(f(r.outcomes[v]) for r in reports) for v in variants}

        return cls(
            reports[0].name, [r.seed for r in reports], [v.value for v in variants],
            {v.value: all(r.outcomes[v].correct for r in reports) for v in variants},
            {v.value: {n: Counter(r.matrix.verdicts[v][n].value for r in reports) for n in adv.NOTIONS}
             for v in variants},
            all(r.matrix.matches for r in reports),
            {r.seed: r.matrix.matches for r in reports},
            mean(lambda o: o.total_messages), mean(lambda o: o.total_bytes),
            mean(lambda o: sum(o.storage.values())), mean(lambda o: o.server_count),
            mean(lambda o: o.crypto_ops), mean(lambda o: o.downlink))

    @property
    def stable(self) -> bool:
        return all(len(c) == 1 for row in self.verdicts.values() for c in row.values())

    @property
    def all_correct(self) -> bool:
        return all(self.correct.values())

    @property
    def passed(self) -> bool:
        return self.all_correct and self.matrix_pass and self.stable

    def consensus(self) -> dict:
        """Variant -> notion -> the verdict every seed agreed on, or ``MIXED``."""
        return {v: {n: next(iter(c)) if len(c) == 1 else "MIXED" for n, c in row.items()}
                for v, row in self.verdicts.items()}

    def infrastructure_order(self) -> list[str]:
        """Variants from least to most infrastructure: crypto work, then servers, then bytes to devices."""
        return sorted(self.variants, key=lambda v: (self.crypto_ops[v], self.server_count[v], self.downlink[v]))

    def records(self, *, timestamp: str | None = None) -> list[dict]:
        return compare_records(self, timestamp=timestamp)

    def text(self) -> str:
        return render_compare(self.records(timestamp=""))


def _one(args):
    cfg, seed, out, write, save_views = args
    return run_scenario(cfg, seed, out_dir=out, write=write, save_views=save_views)


def compare_variants(config: RunConfig | str | Path, seeds, *, out_dir=None, write: bool = True,
                     save_views: bool = False, jobs: int = 1) -> CompareSummary:
    """Run every seed and aggregate; a failing run is re-raised naming its seed."""
    cfg = config if isinstance(config, RunConfig) else load_config(config)
    seeds = [int(s) for s in seeds]
    if not seeds:
        raise ParameterError("compare needs at least one seed")
    out = output_dir(out_dir)
    args = [(cfg, s, out, write, save_views) for s in seeds]
    reports = []
    if jobs > 1:
        with ProcessPoolExecutor(max_workers=jobs) as pool:
            futures = [pool.submit(_one, a) for a in args]
            for s, f in zip(seeds, futures):
                try:
                    reports.append(f.result())
                except Exception as e:
                    raise RunFailed(cfg.name, s, e) from e
    else:
        for a in args:
            try:
                reports.append(_one(a))
            except Exception as e:
                raise RunFailed(cfg.name, a[1], e) from e
    summary = CompareSummary.from_reports(reports)
    if write:
        out.mkdir(parents=True, exist_ok=True)
        recs = summary.records()
        write_records(out / f"{cfg.name}.compare.report", recs)
        (out / f"{cfg.name}.compare.summary").write_text(render_compare(recs), encoding="utf-8")
    return summary
