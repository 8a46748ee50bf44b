"""Collect every WHOIS and RDAP record for a domain, following referrals, and archive them."""

from __future__ import annotations

import base64
import json
import logging
import re
import threading
import uuid
from collections.abc import Iterable, Iterator
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, replace
from datetime import timedelta
from typing import IO
from urllib.parse import urlsplit

from .bootstrap import TldServerMap, check_domain, pick_endpoints, resolve
from .errors import InvalidHostname, MalformedReferral, NoKnownServer, NotDomainObject, NotJson, SinkError
from .model import (
    Level,
    Outcome,
    ParsedFields,
    Protocol,
    RawResponse,
    RecordBundle,
    RegistrationRecord,
    ServerEndpoint,
    Source,
    normalize_rdap_base,
)
from .normalize import normalize_fqdn
from .rdap_parser import load_rdap_document, parse_rdap, related_links
from .timeutil import format_rfc3339, parse_rfc3339, utcnow
from .transport import Transport, decode_whois
from .whois_parser import TemplateSet, default_templates, parse_whois, select_template, whois_referral_value

log = logging.getLogger(__name__)

_DOMAIN_TAIL = re.compile(r"/domain/[^/]+/?$", re.IGNORECASE)


@dataclass(frozen=True)
class CollectorOptions:
    max_depth: int = 4
    pairing_window: timedelta = timedelta(seconds=60)
    protocols: frozenset = frozenset({Protocol.WHOIS, Protocol.RDAP})
    whois_preference: str = "curated"
    templates: TemplateSet | None = None

    def template_set(self) -> TemplateSet:
        return self.templates if self.templates is not None else default_templates()


def parse_raw(raw: RawResponse, domain: str, templates: TemplateSet) -> tuple[RawResponse, ParsedFields]:
    """Parse a fetched body; a 200 RDAP answer that is not a domain object becomes Malformed."""
    if not raw.ok:
        return raw, ParsedFields()
    if raw.protocol is Protocol.WHOIS:
        template = select_template(raw.server.locator, templates)
        return raw, parse_whois(decode_whois(raw.body), template, domain)
    try:
        return raw, parse_rdap(raw.body)
    except (NotJson, NotDomainObject) as exc:
        return replace(raw, outcome=Outcome.MALFORMED, error=str(exc)), ParsedFields()


def _whois_host(value: str) -> str:
    value = value.strip()
    if value.lower().startswith("whois://"):
        value = value[len("whois://"):]
    value = value.rstrip("/")
    host, _, port = value.partition(":")
    if port and port != "43":
        raise MalformedReferral(f"WHOIS referral on unexpected port: {value!r}")
    if "/" in host or "@" in host:
        raise MalformedReferral(f"WHOIS referral is not a hostname: {value!r}")
    try:
        host = normalize_fqdn(host)
    except InvalidHostname as exc:
        raise MalformedReferral(f"WHOIS referral is not a hostname: {value!r}") from exc
    if "." not in host:
        raise MalformedReferral(f"WHOIS referral is not a hostname: {value!r}")
    return host


def rdap_base_from_href(href: str) -> str:
    parts = urlsplit(href.strip())
    if parts.scheme.lower() not in ("http", "https") or not parts.hostname:
        raise MalformedReferral(f"RDAP referral is not an absolute http(s) URI: {href!r}")
    if not _DOMAIN_TAIL.search(parts.path):
        raise MalformedReferral(f"RDAP referral does not name a domain resource: {href!r}")
    path = _DOMAIN_TAIL.sub("/", parts.path)
    return normalize_rdap_base(f"{parts.scheme}://{parts.netloc}{path}")


def extract_referral(record: RegistrationRecord, templates: TemplateSet | None = None) -> ServerEndpoint | None:
    if not record.ok:
        return None
    if record.protocol is Protocol.WHOIS:
        template = select_template(record.server.locator, templates or default_templates())
        value = whois_referral_value(decode_whois(record.raw.body), template, record.domain)
        if value is None:
            return None
        return ServerEndpoint(Protocol.WHOIS, _whois_host(value), "", Source.REFERRAL)
    try:
        doc = load_rdap_document(record.raw.body)
    except (NotJson, NotDomainObject):
        return None
    links = related_links(doc)
    if not links:
        return None
    return ServerEndpoint(Protocol.RDAP, rdap_base_from_href(links[0]), "", Source.REFERRAL)


def _visit_key(ep: ServerEndpoint) -> tuple[Protocol, str]:
    return ep.protocol, ep.locator


def collect(
    domain: str,
    server_map: TldServerMap,
    opts: CollectorOptions | None = None,
    transport: Transport | None = None,
) -> RecordBundle:
    opts = opts or CollectorOptions()
    check_domain(domain)
    templates = opts.template_set()
    own_transport = transport is None
    transport = transport or Transport()
    frontier = pick_endpoints(resolve(domain, server_map), opts.protocols, opts.whois_preference)
    if not frontier:
        raise NoKnownServer(domain)

    visited: set[tuple[Protocol, str]] = {_visit_key(ep) for ep in frontier}
    records: list[RegistrationRecord] = []
    depth = 0
    try:
        with ThreadPoolExecutor(max_workers=max(2, len(frontier))) as pool:
            while frontier and depth <= opts.max_depth:
                # both protocols at one level go out together to keep the pairing window tight
                raws = list(pool.map(lambda ep: transport.query(ep, domain), frontier))
                next_frontier = []
                for ep, raw in zip(frontier, raws):
                    raw, parsed = parse_raw(raw, domain, templates)
                    rec = RegistrationRecord(domain, depth, ep, raw, parsed)
                    records.append(rec)
                    try:
                        target = extract_referral(rec, templates)
                    except MalformedReferral as exc:
                        log.info("%s: ignoring referral from %s: %s", domain, ep.locator, exc)
                        continue
                    if target is None:
                        continue
                    key = _visit_key(target)
                    if key in visited:
                        log.debug("%s: %s already queried, referral ignored", domain, target.locator)
                        continue
                    visited.add(key)
                    next_frontier.append(target)
                frontier = next_frontier
                depth += 1
    finally:
        if own_transport:
            transport.close()
    if frontier:
        log.info("%s: stopped at max depth %d with %d referrals pending", domain, opts.max_depth, len(frontier))
    return make_bundle(domain, records, opts.pairing_window)


def make_bundle(domain: str, records: Iterable[RegistrationRecord], limit: timedelta, bundle_id: str | None = None) -> RecordBundle:
    records = tuple(records)
    times = [r.raw.fetched_at for r in records if r.ok]
    window = (max(times) - min(times)) if times else timedelta(0)
    stale = window > limit
    if stale:
        log.warning("%s: records span %.1fs, beyond the %.0fs pairing window", domain, window.total_seconds(), limit.total_seconds())
    return RecordBundle(domain, records, utcnow(), window, stale, bundle_id or uuid.uuid4().hex)


# -- archive -------------------------------------------------------------------

_sink_lock = threading.Lock()


def bundle_header(bundle: RecordBundle) -> dict:
    return {
        "type": "bundle",
        "bundle_id": bundle.bundle_id,
        "domain": bundle.domain,
        "collected_at": format_rfc3339(bundle.collected_at),
        "pairing_window": bundle.pairing_window.total_seconds(),
        "stale_pairing": bundle.stale_pairing,
        "records": len(bundle.records),
    }


def record_line(bundle_id: str, rec: RegistrationRecord) -> dict:
    return {
        "type": "record",
        "bundle_id": bundle_id,
        "domain": rec.domain,
        "protocol": rec.protocol.value,
        "level": rec.level.value,
        "depth": rec.depth,
        "server": rec.server.locator,
        "flags": rec.server.query_flags,
        "source": rec.server.source.value,
        "fetched_at": format_rfc3339(rec.raw.fetched_at),
        "outcome": rec.raw.outcome.value,
        "http_status": rec.raw.http_status,
        "error": rec.raw.error,
        "raw_b64": base64.b64encode(rec.raw.body).decode("ascii"),
        "parsed": rec.parsed.to_json(),
    }


def archive(bundle: RecordBundle, sink: IO[str]) -> None:
    """Append the bundle header and one line per record; each line goes out in a single write."""
    lines = [bundle_header(bundle)] + [record_line(bundle.bundle_id, r) for r in bundle.records]
    try:
        with _sink_lock:
            for obj in lines:
                sink.write(json.dumps(obj, sort_keys=True, ensure_ascii=False) + "\n")
            sink.flush()
    except (OSError, ValueError) as exc:
        raise SinkError(f"cannot write archive: {exc}") from exc


def record_from_line(obj: dict) -> RegistrationRecord:
    protocol = Protocol(obj["protocol"])
    server = ServerEndpoint(protocol, obj["server"], obj.get("flags", ""), Source(obj.get("source", "curated_db")))
    depth = int(obj["depth"])
    if Level(obj["level"]) is not Level.for_depth(depth):
        raise ValueError(f"level {obj['level']} inconsistent with depth {depth}")
    raw = RawResponse(
        protocol,
        server,
        base64.b64decode(obj["raw_b64"]),
        parse_rfc3339(obj["fetched_at"]),
        Outcome(obj["outcome"]),
        obj.get("http_status"),
        obj.get("error", ""),
    )
    return RegistrationRecord(obj["domain"], depth, server, raw, ParsedFields.from_json(obj["parsed"]))


def read_archive(stream: Iterable[str]) -> Iterator[RecordBundle]:
    """Rebuild bundles from archive lines. Record lines follow their bundle header."""
    header = None
    records: list[RegistrationRecord] = []

    def flush():
        return RecordBundle(
            header["domain"],
            tuple(records),
            parse_rfc3339(header["collected_at"]),
            timedelta(seconds=header["pairing_window"]),
            header["stale_pairing"],
            header["bundle_id"],
        )

    for lineno, line in enumerate(stream, 1):
        if not line.strip():
            continue
        obj = json.loads(line)
        kind = obj.get("type")
        if kind == "bundle":
            if header is not None:
                yield flush()
            header, records = obj, []
        elif kind == "record":
            if header is None or obj["bundle_id"] != header["bundle_id"]:
                raise ValueError(f"archive line {lineno}: record outside its bundle")
            records.append(record_from_line(obj))
        else:
            raise ValueError(f"archive line {lineno}: unknown line type {kind!r}")
    if header is not None:
        yield flush()


def reparse(bundle: RecordBundle, templates: TemplateSet | None = None) -> RecordBundle:
    """Re-run the parsers over the archived raw bodies (for template updates)."""
    templates = templates or default_templates()
    recs = []
    for r in bundle.records:
        raw, parsed = parse_raw(r.raw, r.domain, templates)
        recs.append(replace(r, raw=raw, parsed=parsed))
    return replace(bundle, records=tuple(recs))


def empty_bundle(domain: str) -> RecordBundle:
    return RecordBundle(domain, (), utcnow(), timedelta(0), False, uuid.uuid4().hex)
