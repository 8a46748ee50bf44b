"""Audit streams, corpus summaries, and their JSON / CSV / text renderings.

Audit stream: JSON lines, each with a ``type``:

``domain``
    one per bundle: record counts, per-field missing counts, per-field
    comparison tallies, registrar group, stale flag.
``mismatch``
    one per FieldMismatch.
``mismatch_collapsed``
    Emails mismatches re-examined on address domains only.
``verdict``
    DNS adjudication of a Nameservers mismatch (appended by ``adjudicate``).
"""

from __future__ import annotations

import csv
import io
import json
from collections import Counter, defaultdict
from collections.abc import Callable, Iterable, Mapping
from dataclasses import dataclass, field as dc_field

from .compare import (
    DateDelta,
    FieldMismatch,
    PairKind,
    SetRelation,
    compare_emails_domain_collapsed,
    group_rates,
    pair_comparisons,
    registrar_group,
)
from .dns_oracle import VerdictKind, adjudicate
from .errors import DnsFailure, UnsupportedFormat
from .model import HEADLINE_FIELDS, Field, RecordBundle
from .timeutil import format_rfc3339

FORMATS = ("json", "csv", "text")
RELATIONS = [r.label for r in sorted(SetRelation, reverse=True)]
SECONDS_PER_DAY = 86400


# -- audit -------------------------------------------------------------------


def _json_value(f: Field, value):
    if f.is_set:
        return sorted(value)
    if f.is_date:
        return format_rfc3339(value)
    return value


def mismatch_line(m: FieldMismatch, left_value, right_value, kind: str = "mismatch") -> dict:
    out = {
        "type": kind,
        "domain": m.domain,
        "field": m.field.value,
        "pair_kind": m.pair_kind.value,
        "left": m.left.to_json(),
        "right": m.right.to_json(),
        "left_value": _json_value(m.field, left_value),
        "right_value": _json_value(m.field, right_value),
    }
    if isinstance(m.detail, SetRelation):
        out["relation"] = m.detail.label
    elif isinstance(m.detail, DateDelta):
        out["delta_seconds"] = m.detail.seconds
        out["bucket"] = m.detail.bucket.value
    return out


def audit_bundle(bundle: RecordBundle, *, collapse_emails: bool = False, exclude_stale: bool = True) -> list[dict]:
    ok = bundle.successful()
    missing = {f.value: sum(1 for r in ok if not r.parsed.present(f)) for f in Field}
    skipped = exclude_stale and bundle.stale_pairing
    comparisons = [] if skipped else pair_comparisons(bundle)

    compared: dict[str, Counter] = {f.value: Counter() for f in Field}
    for c in comparisons:
        m = c.mismatch
        key = m.relation.label if m.relation is not None else ("equal" if c.equal else "differ")
        compared[m.field.value][key] += 1

    head = {
        "type": "domain",
        "domain": bundle.domain,
        "bundle_id": bundle.bundle_id,
        "records": len(bundle.records),
        "records_ok": len(ok),
        "missing": missing,
        "compared": {k: dict(sorted(v.items())) for k, v in compared.items()},
        "registrar_group": registrar_group(bundle),
        "stale": bundle.stale_pairing,
        "skipped": skipped,
    }
    by_ref = {(r.protocol, r.depth, r.server.locator): r for r in ok}

    def values(m: FieldMismatch):
        lr = by_ref[(m.left.protocol, m.left.depth, m.left.server)]
        rr = by_ref[(m.right.protocol, m.right.depth, m.right.server)]
        return lr.parsed.get(m.field), rr.parsed.get(m.field)

    lines = [head]
    lines += [mismatch_line(c.mismatch, *values(c.mismatch)) for c in comparisons if not c.equal]
    if collapse_emails and not skipped:
        lines += [
            mismatch_line(m, *values(m), kind="mismatch_collapsed")
            for m in compare_emails_domain_collapsed(bundle, skip_stale=exclude_stale)
        ]
    return lines


def audit(bundles: Iterable[RecordBundle], **kwargs) -> list[dict]:
    """Audit lines for a corpus, ordered by domain so input order never matters."""
    ordered = sorted(bundles, key=lambda b: (b.domain, b.bundle_id))
    out = []
    for b in ordered:
        out.extend(audit_bundle(b, **kwargs))
    return out


def adjudicate_lines(
    lines: Iterable[dict],
    ns_lookup: Callable[[str], frozenset[str]],
) -> list[dict]:
    """Verdicts for every Nameservers mismatch. One DNS lookup per domain."""
    cache: dict[str, frozenset[str] | DnsFailure] = {}
    out = []
    for line in lines:
        if line.get("type") != "mismatch" or line.get("field") != Field.NAMESERVERS.value:
            continue
        domain = line["domain"]
        if domain not in cache:
            try:
                cache[domain] = ns_lookup(domain)
            except DnsFailure as exc:
                cache[domain] = exc
        base = {
            "type": "verdict",
            "domain": domain,
            "pair_kind": line["pair_kind"],
            "left": line["left"],
            "right": line["right"],
        }
        got = cache[domain]
        if isinstance(got, DnsFailure):
            out.append({**base, "verdict": None, "dns_error": got.kind, "dns_set": []})
        else:
            v = adjudicate(got, line["left_value"], line["right_value"])
            out.append({**base, "verdict": v.value.value, "dns_set": sorted(v.dns_set)})
    return out


# -- summary -----------------------------------------------------------------


@dataclass
class CorpusResults:
    domains: list[dict] = dc_field(default_factory=list)
    mismatches: list[dict] = dc_field(default_factory=list)
    collapsed: list[dict] = dc_field(default_factory=list)
    verdicts: list[dict] = dc_field(default_factory=list)

    @classmethod
    def from_lines(cls, lines: Iterable[dict]) -> "CorpusResults":
        res = cls()
        slots = {"domain": res.domains, "mismatch": res.mismatches,
                 "mismatch_collapsed": res.collapsed, "verdict": res.verdicts}
        for line in lines:
            slot = slots.get(line.get("type"))
            if slot is None:
                raise ValueError(f"unknown audit line type {line.get('type')!r}")
            slot.append(line)
        return res


def _rate(n: int, d: int) -> float:
    return n / d if d else 0.0


def _relation_table(lines: list[dict], pairs_total: int) -> dict:
    counts = Counter(l["relation"] for l in lines)
    domains: dict[str, set] = defaultdict(set)
    for l in lines:
        domains[l["relation"]].add(l["domain"])
    mism = sum(v for k, v in counts.items() if k != "Equality")
    table = {}
    for rel in RELATIONS:
        n = counts.get(rel, 0)
        table[rel] = {
            "records": n,
            "domains": len(domains.get(rel, ())),
            "pct_of_pairs": _rate(n, pairs_total),
            "pct_of_mismatches": None if rel == "Equality" else _rate(n, mism),
        }
    return table


def cdf_points(values: Iterable[float]) -> list[list[float]]:
    vals = sorted(values)
    n = len(vals)
    points = []
    for i, v in enumerate(vals, 1):
        if points and points[-1][0] == v:
            points[-1][1] = i / n
        else:
            points.append([v, i / n])
    return points


def summarize(results: CorpusResults) -> dict:
    domains = results.domains
    audited = [d for d in domains if not d["skipped"]]
    n_domains = len(domains)
    records_ok = sum(d["records_ok"] for d in domains)
    domains_with_records = [d for d in domains if d["records_ok"]]

    mism_by_field: dict[str, list[dict]] = defaultdict(list)
    for m in results.mismatches:
        mism_by_field[m["field"]].append(m)

    fields = {}
    for f in Field:
        k = f.value
        miss_records = sum(d["missing"][k] for d in domains)
        miss_domains = sum(1 for d in domains_with_records if d["missing"][k])
        tallies = Counter()
        for d in audited:
            tallies.update(d["compared"].get(k, {}))
        pairs = sum(tallies.values())
        ms = mism_by_field.get(k, [])
        entry = {
            "missing": {
                "records": miss_records,
                "records_rate": _rate(miss_records, records_ok),
                "domains": miss_domains,
                "domains_rate": _rate(miss_domains, len(domains_with_records)),
            },
            "compared_pairs": pairs,
            "mismatches": {
                "records": len(ms),
                "domains": len({m["domain"] for m in ms}),
                "domains_rate": _rate(len({m["domain"] for m in ms}), len(audited)),
                "by_pair_kind": {pk.value: sum(1 for m in ms if m["pair_kind"] == pk.value) for pk in PairKind},
            },
        }
        if f.is_set:
            eq = [{"relation": "Equality", "domain": d["domain"]}
                  for d in audited for _ in range(d["compared"].get(k, {}).get("Equality", 0))]
            entry["relations"] = _relation_table(eq + ms, pairs)
        else:
            entry["equal"] = tallies.get("equal", 0)
        if f.is_date:
            entry["buckets"] = {b: sum(1 for m in ms if m["bucket"] == b) for b in
                                ("UnderTwoDays", "ExactlyOneYear", "ThirtyOrThirtyOneDays", "Other")}
            entry["cdf_days"] = cdf_points(abs(m["delta_seconds"]) / SECONDS_PER_DAY for m in ms)
        fields[k] = entry

    collapsed = results.collapsed
    emails_collapsed = {
        "examined": len(collapsed),
        "relations": _relation_table(collapsed, len(collapsed)),
    }

    groups = {d["domain"]: d["registrar_group"] for d in audited}
    mismatch_objs = [(m["domain"], Field(m["field"])) for m in results.mismatches]
    rates = group_rates(groups, mismatch_objs)
    registrars = [
        {"iana_id": gid, "domains": r.domains, "rates": {f.value: v for f, v in r.rates.items()}}
        for gid, r in sorted(rates.items(), key=lambda kv: (kv[0] is None, kv[0] or 0))
    ]

    decided = [v for v in results.verdicts if v["verdict"]]
    cross = [v for v in decided if v["pair_kind"] == PairKind.CROSS_PROTOCOL.value]
    adjudication = {
        "total": len(results.verdicts),
        "dns_errors": len(results.verdicts) - len(decided),
        "counts": {k.value: sum(1 for v in decided if v["verdict"] == k.value) for k in VerdictKind},
        "cross_protocol": len(cross),
        # cross-protocol pairs put WHOIS on the left and RDAP on the right
        "dns_matched_rdap": _rate(sum(1 for v in cross if v["verdict"] == "MatchesRight"), len(cross)),
        "dns_matched_whois": _rate(sum(1 for v in cross if v["verdict"] == "MatchesLeft"), len(cross)),
    }

    headline_keys = {f.value for f in HEADLINE_FIELDS}
    inconsistent = {m["domain"] for m in results.mismatches if m["field"] in headline_keys}
    headline = {
        "fields": sorted(headline_keys),
        "domains": len(inconsistent),
        "rate": _rate(len(inconsistent), len(audited)),
    }

    return {
        "corpus": {
            "domains": n_domains,
            "audited_domains": len(audited),
            "stale_domains": sum(1 for d in domains if d["stale"]),
            "records": sum(d["records"] for d in domains),
            "records_ok": records_ok,
        },
        "fields": fields,
        "emails_collapsed": emails_collapsed,
        "registrars": registrars,
        "adjudication": adjudication,
        "headline": headline,
    }


# -- emit --------------------------------------------------------------------


def _csv_section(out: io.StringIO, title: str, header: list[str], rows: Iterable[list]) -> None:
    out.write(f"# {title}\n")
    w = csv.writer(out, lineterminator="\n")
    w.writerow(header)
    w.writerows(rows)
    out.write("\n")


def _emit_csv(doc: dict) -> str:
    out = io.StringIO()
    fields = doc["fields"]
    _csv_section(out, "missing", ["field", "records", "records_rate", "domains", "domains_rate"],
                 ([k, v["missing"]["records"], v["missing"]["records_rate"],
                   v["missing"]["domains"], v["missing"]["domains_rate"]] for k, v in fields.items()))
    _csv_section(out, "mismatches", ["field", "compared_pairs", "records", "domains", "domains_rate"],
                 ([k, v["compared_pairs"], v["mismatches"]["records"], v["mismatches"]["domains"],
                   v["mismatches"]["domains_rate"]] for k, v in fields.items()))
    rel_rows = []
    for k, v in fields.items():
        for rel, r in v.get("relations", {}).items():
            rel_rows.append([k, rel, r["records"], r["domains"], r["pct_of_pairs"], r["pct_of_mismatches"]])
    for rel, r in doc["emails_collapsed"]["relations"].items():
        rel_rows.append(["emails_collapsed", rel, r["records"], r["domains"], r["pct_of_pairs"], r["pct_of_mismatches"]])
    _csv_section(out, "relations", ["field", "relation", "records", "domains", "pct_of_pairs", "pct_of_mismatches"], rel_rows)
    _csv_section(out, "date_buckets", ["field", "bucket", "count"],
                 ([k, b, n] for k, v in fields.items() for b, n in v.get("buckets", {}).items()))
    _csv_section(out, "date_cdf", ["field", "days", "cumulative_fraction"],
                 ([k, d, p] for k, v in fields.items() for d, p in v.get("cdf_days", [])))
    _csv_section(out, "registrars", ["iana_id", "domains", "field", "mismatch_rate"],
                 (["" if r["iana_id"] is None else r["iana_id"], r["domains"], f, rate]
                  for r in doc["registrars"] for f, rate in r["rates"].items()))
    adj = doc["adjudication"]
    _csv_section(out, "adjudication", ["verdict", "count"], ([k, n] for k, n in adj["counts"].items()))
    h = doc["headline"]
    _csv_section(out, "headline", ["domains", "rate"], [[h["domains"], h["rate"]]])
    return out.getvalue()


def _pct(x: float | None) -> str:
    return "-" if x is None else f"{100 * x:.1f}%"


def _emit_text(doc: dict) -> str:
    c, h = doc["corpus"], doc["headline"]
    lines = [
        f"domains: {c['domains']} ({c['audited_domains']} audited, {c['stale_domains']} stale)",
        f"records: {c['records']} ({c['records_ok']} fetched)",
        f"domains with at least one inconsistency ({', '.join(h['fields'])}): {h['domains']} ({_pct(h['rate'])})",
        "",
        f"{'field':<16}{'missing rec':>12}{'missing dom':>12}{'pairs':>8}{'mismatch':>10}{'domains':>9}",
    ]
    for k, v in doc["fields"].items():
        lines.append(
            f"{k:<16}{_pct(v['missing']['records_rate']):>12}{_pct(v['missing']['domains_rate']):>12}"
            f"{v['compared_pairs']:>8}{v['mismatches']['records']:>10}{v['mismatches']['domains']:>9}"
        )
    for k, v in doc["fields"].items():
        if "relations" not in v:
            continue
        lines += ["", f"{k} relations:"]
        for rel, r in v["relations"].items():
            lines.append(f"  {rel:<13}{r['records']:>8} records {r['domains']:>8} domains  {_pct(r['pct_of_mismatches'])}")
    ec = doc["emails_collapsed"]
    if ec["examined"]:
        lines += ["", "emails, address domains only:"]
        for rel, r in ec["relations"].items():
            lines.append(f"  {rel:<13}{r['records']:>8} records  {_pct(r['pct_of_pairs'])}")
    for k, v in doc["fields"].items():
        if "buckets" in v and v["mismatches"]["records"]:
            lines += ["", f"{k} differences:"]
            lines += [f"  {b:<22}{n:>8}" for b, n in v["buckets"].items()]
    adj = doc["adjudication"]
    if adj["total"]:
        lines += ["", f"DNS adjudication ({adj['total']} nameserver mismatches, {adj['dns_errors']} lookups failed):"]
        lines += [f"  {k:<16}{n:>8}" for k, n in adj["counts"].items()]
        lines.append(f"  cross-protocol: DNS agrees with RDAP {_pct(adj['dns_matched_rdap'])}, "
                     f"with WHOIS {_pct(adj['dns_matched_whois'])}")
    return "\n".join(lines) + "\n"


def emit(doc: Mapping, fmt: str) -> bytes:
    if fmt == "json":
        return (json.dumps(doc, sort_keys=True, indent=2) + "\n").encode("utf-8")
    if fmt == "csv":
        return _emit_csv(doc).encode("utf-8")
    if fmt == "text":
        return _emit_text(doc).encode("utf-8")
    raise UnsupportedFormat(f"unknown report format {fmt!r}; expected one of {', '.join(FORMATS)}")

