"""Report files: line-delimited JSON records plus a text summary.

A ``.report`` file is one JSON object per line.  The first line is the
header and is the only place a timestamp appears; every other field is a
function of (config, seed), written in a fixed order.  Record kinds, in
file order::

    header    format, name, seed, generated
    config    the config with defaults filled in
    variant   one per variant: exposed and oracle sets, latency, volumes
    attack    one per (variant, notion, role), role "own" or "coalition",
              and role "extra" for auxiliary attacks
    matrix    verdicts, expected verdicts and the diff
    abort     only in a stub report: the violated invariant

The ``.summary`` text is rendered from the records alone, so ``report``
can re-render any stored file.
"""

from __future__ import annotations

import json
from datetime import datetime, timezone
from pathlib import Path

from ..adversary import NOTIONS, expected_row, render_matrix
from ..protocols import Variant

FORMAT = "tracepriv-report/1"
COMPARE_FORMAT = "tracepriv-compare/1"


def _now() -> str:
    return datetime.now(timezone.utc).replace(microsecond=0).isoformat()


def _header(fmt, name, seed, timestamp):
    return {"record": "header", "format": fmt, "name": name, "seed": seed,
            "generated": _now() if timestamp is None else timestamp}


def _attack(variant, notion, role, result) -> dict:
    rec = {"record": "attack", "variant": variant.value, "notion": notion, "role": role}
    rec.update(result.to_record())
    return rec


def run_records(report, *, timestamp=None) -> list[dict]:
    recs = [_header(FORMAT, report.name, report.seed, timestamp),
            {"record": "config", "config": report.config}]
    for v, o in report.outcomes.items():
        recs.append({
            "record": "variant", "variant": v.value, "correct": o.correct,
            "exposed": o.exposed, "oracle": o.oracle, "latency": o.latency,
            "messages": o.messages, "bytes": o.bytes, "storage": o.storage,
            "server_count": o.server_count, "crypto_ops": o.crypto_ops, "downlink": o.downlink, "by_kind": o.by_kind,
            "noise_filter": o.filter,
        })
    for v, suite in report.attacks.items():
        for n in NOTIONS:
            nr = suite[n]
            recs.append(_attack(v, n, "own", nr.own))
            if nr.coalition is not None:
                recs.append(_attack(v, n, "coalition", nr.coalition))
        for r in report.extra.get(v, ()):
            recs.append(_attack(v, None, "extra", r))
    m = report.matrix
    recs.append({
        "record": "matrix", "population": report.population,
        "verdicts": m.to_record(),
        "expected": {v.value: {n: e[n].value for n in NOTIONS} for v, e in m.expected.items()},
        "diff": [{"variant": v.value, "notion": n, "got": g.value, "want": w.value} for v, n, g, w in m.diff()],
        "match": m.matches,
    })
    return recs


def stub_records(report, *, timestamp=None) -> list[dict]:
    e = report.aborted
    return [_header(FORMAT, report.name, report.seed, timestamp),
            {"record": "config", "config": report.config},
            {"record": "abort", "invariant": e.invariant, "message": str(e)}]


def dumps(rec: dict) -> str:
    return json.dumps(rec, separators=(",", ":"), allow_nan=False)


def write_records(path: str | Path, records: list[dict]) -> Path:
    path = Path(path)
    path.write_text("".join(dumps(r) + "\n" for r in records), encoding="utf-8")
    return path


def read_records(path: str | Path) -> list[dict]:
    lines = Path(path).read_text(encoding="utf-8").splitlines()
    recs = [json.loads(line) for line in lines if line.strip()]
    if not recs or recs[0].get("record") != "header" or recs[0].get("format") not in (FORMAT, COMPARE_FORMAT):
        raise ValueError(f"{path} is not a tracepriv report")
    return recs


def _table(head, rows) -> list[str]:
    rows = [[str(c) for c in r] for r in rows]
    widths = [max(len(r[i]) for r in [head, *rows]) for i in range(len(head))]
    fmt = lambda cells: "  ".join(c.rjust(w) if i else c.ljust(w) for i, (c, w) in enumerate(zip(cells, widths)))
    return [fmt(head).rstrip(), fmt(["-" * w for w in widths]).rstrip(), *(fmt(r).rstrip() for r in rows)]


def _pct(x):
    return "-" if x is None else f"{x:.3f}"


def render_summary(records: list[dict]) -> str:
    """Human-readable summary of one run's records."""
    if records and records[0].get("format") == COMPARE_FORMAT:
        return render_compare(records)
    head = records[0]
    out = [f"run {head['name']}  seed {head['seed']}", ""]
    abort = [r for r in records if r["record"] == "abort"]
    if abort:
        out.append(f"ABORTED: invariant '{abort[0]['invariant']}' violated")
        out.append(abort[0]["message"])
        return "\n".join(out) + "\n"
    variants = [r for r in records if r["record"] == "variant"]
    rows = []
    for r in variants:
        lat = r["latency"]
        rows.append([r["variant"], "PASS" if r["correct"] else "FAIL", len(r["exposed"]), len(r["oracle"]),
                     "-" if lat["median"] is None else lat["median"], sum(r["messages"].values()),
                     sum(r["bytes"].values()), sum(r["storage"].values()), r["server_count"], r["crypto_ops"],
                     r["downlink"]])
    out += _table(["variant", "correct", "exposed", "oracle", "latency", "messages", "bytes", "storage",
                   "servers", "crypto", "downlink"], rows)
    for r in variants:
        f = r.get("noise_filter")
        if f:
            out.append(f"{r['variant']} noise filter: kept {f['kept']}, removed {f['removed']}, "
                       f"precision {_pct(f['precision'])}, recall {_pct(f['recall'])}")
    out.append("")
    rows = []
    for r in records:
        if r["record"] != "attack":
            continue
        rows.append([r["variant"], r["notion"] or "-", r["role"], r["attack"], _pct(r["success_rate"]),
                     _pct(r["chance_level"]), "-" if r["median_set"] is None else r["median_set"],
                     ",".join(str(c) for c in r["notes"].get("colluding", ())) or "-"])
    out += _table(["variant", "notion", "role", "attack", "success", "chance", "median set", "colluding"], rows)
    out.append("")
    m = next(r for r in records if r["record"] == "matrix")
    out.append(render_matrix(m["verdicts"], m["expected"]))
    out.append("")
    out.append(f"matrix vs expected: {'PASS' if m['match'] else 'FAIL'}")
    return "\n".join(out) + "\n"


def compare_records(summary, *, timestamp=None) -> list[dict]:
    recs = [_header(COMPARE_FORMAT, summary.name, summary.seeds, timestamp)]
    for v in summary.variants:
        recs.append({
            "record": "variant", "variant": v, "correct": summary.correct[v],
            "verdicts": {n: dict(sorted(summary.verdicts[v][n].items())) for n in NOTIONS},
            "messages": summary.messages[v], "bytes": summary.bytes[v], "storage": summary.storage[v],
            "server_count": summary.server_count[v], "crypto_ops": summary.crypto_ops[v],
            "downlink": summary.downlink[v],
        })
    expected = {v: {n: e[n].value for n in NOTIONS} for v in summary.variants
                if (e := expected_row(Variant(v))) is not None}
    recs.append({
        "record": "matrix", "verdicts": summary.consensus(), "expected": expected,
        "per_seed": {str(s): ok for s, ok in summary.per_seed_match.items()},
        "stable": summary.stable, "match": summary.matrix_pass,
        "infrastructure_order": summary.infrastructure_order(),
        "pass": summary.passed,
    })
    return recs


def render_compare(records: list[dict]) -> str:
    head = records[0]
    seeds = head["seed"]
    span = f"{seeds[0]}..{seeds[-1]}" if seeds == list(range(seeds[0], seeds[-1] + 1)) else ",".join(map(str, seeds))
    out = [f"compare {head['name']}  seeds {span} ({len(seeds)} runs)", ""]
    variants = [r for r in records if r["record"] == "variant"]
    rows = [[r["variant"], "PASS" if r["correct"] else "FAIL", f"{r['messages']:.1f}", f"{r['bytes']:.0f}",
             f"{r['storage']:.1f}", f"{r['server_count']:g}", f"{r['crypto_ops']:.0f}", f"{r['downlink']:.0f}"]
            for r in variants]
    out += _table(["variant", "correct", "messages", "bytes", "storage", "servers", "crypto", "downlink"], rows)
    out.append("")
    m = next(r for r in records if r["record"] == "matrix")
    out.append(render_matrix(m["verdicts"], m["expected"]))
    out.append("")
    unstable = [f"{r['variant']}/{n}: " + ", ".join(f"{k} x{c}" for k, c in cnt.items())
                for r in variants for n, cnt in r["verdicts"].items() if len(cnt) > 1]
    if unstable:
        out.append("verdicts that changed between seeds:")
        out += ["  " + u for u in unstable]
    failed = [s for s, ok in m["per_seed"].items() if not ok]
    out.append(f"seeds matching expected: {len(m['per_seed']) - len(failed)}/{len(m['per_seed'])}"
               + (f" (failed: {', '.join(failed)})" if failed else ""))
    out.append("infrastructure, least to most: " + " < ".join(m["infrastructure_order"]))
    out.append(f"matrix vs expected: {'PASS' if m['pass'] else 'FAIL'}")
    return "\n".join(out) + "\n"
