import io
import json
from datetime import datetime, timedelta, timezone

import pytest
from hypothesis import given, settings, strategies as st

from conftest import MM_RDAP, MM_WHOIS, VERISIGN_RDAP, VERISIGN_WHOIS, fixture_text, google_scenario_doc
from regaudit.bootstrap import TldServerMap
from regaudit.collector import (
    CollectorOptions,
    archive,
    collect,
    empty_bundle,
    extract_referral,
    make_bundle,
    read_archive,
    record_from_line,
    record_line,
)
from regaudit.errors import MalformedReferral, NoKnownServer
from regaudit.model import (
    Level,
    Missing,
    MissingReason,
    Outcome,
    ParsedFields,
    Protocol,
    RawResponse,
    RegistrationRecord,
    ServerEndpoint,
    Source,
)
from regaudit.testbed import load_scenario, serve
from regaudit.transport import Transport

UTC = timezone.utc
T0 = datetime(2024, 1, 1, tzinfo=UTC)


def record(protocol, locator, body, depth=0, outcome=Outcome.OK, at=T0):
    ep = ServerEndpoint(protocol, locator, "", Source.CURATED_DB if protocol is Protocol.WHOIS else Source.RDAP_BOOTSTRAP)
    raw = RawResponse(protocol, ep, body.encode() if isinstance(body, str) else body, at, outcome)
    return RegistrationRecord("google.com", depth, ep, raw, ParsedFields())


def test_extract_whois_referral():
    rec = record(Protocol.WHOIS, VERISIGN_WHOIS, fixture_text("google_registry.whois"))
    ep = extract_referral(rec)
    assert (ep.protocol, ep.locator, ep.query_flags, ep.source) == (Protocol.WHOIS, MM_WHOIS, "", Source.REFERRAL)


def test_extract_rdap_referral():
    rec = record(Protocol.RDAP, VERISIGN_RDAP, fixture_text("google_registry.rdap.json"))
    assert extract_referral(rec).locator == MM_RDAP


def test_no_referral():
    assert extract_referral(record(Protocol.WHOIS, VERISIGN_WHOIS, "Domain Name: x.com\n")) is None
    assert extract_referral(record(Protocol.RDAP, VERISIGN_RDAP, '{"objectClassName":"domain"}')) is None


@pytest.mark.parametrize("value,host", [
    ("whois://whois.example.net", "whois.example.net"),
    ("WHOIS.EXAMPLE.NET:43", "whois.example.net"),
])
def test_referral_forms(value, host):
    rec = record(Protocol.WHOIS, VERISIGN_WHOIS, f"Registrar WHOIS Server: {value}\n")
    assert extract_referral(rec).locator == host


@pytest.mark.parametrize("value", ["http://www.example.net/whois", "not a host", "localhost", "whois.example.net:4343"])
def test_malformed_whois_referral(value):
    rec = record(Protocol.WHOIS, VERISIGN_WHOIS, f"Registrar WHOIS Server: {value}\n")
    with pytest.raises(MalformedReferral):
        extract_referral(rec)


def test_malformed_rdap_referral():
    body = json.dumps({"objectClassName": "domain", "links": [
        {"rel": "related", "type": "application/rdap+json", "href": "https://rdap.example.net/help"}]})
    with pytest.raises(MalformedReferral):
        extract_referral(record(Protocol.RDAP, VERISIGN_RDAP, body))


def run(doc, domain, **opts):
    scenario = load_scenario(doc)
    with serve(scenario) as bed, Transport(bed.transport_config(timeout=opts.pop("timeout", 2.0))) as t:
        return collect(domain, bed.server_map(), CollectorOptions(**opts), t), bed


def test_google_four_records():
    bundle, bed = run(google_scenario_doc(), "google.com")
    got = sorted((r.protocol.value, r.level.value, r.server.locator) for r in bundle.records)
    assert got == [
        ("rdap", "registrar", MM_RDAP),
        ("rdap", "registry", VERISIGN_RDAP),
        ("whois", "registrar", MM_WHOIS),
        ("whois", "registry", VERISIGN_WHOIS),
    ]
    assert all(r.ok for r in bundle.records)
    assert not bundle.stale_pairing
    # registrar self-referral is not queried twice
    assert [h for h, _ in bed.whois_requests].count(MM_WHOIS) == 1


def test_thick_registry_two_records():
    doc = google_scenario_doc()
    d = doc["domains"]["google.com"]
    d["whois"] = {VERISIGN_WHOIS: "Domain Name: GOOGLE.COM\nName Server: NS1.GOOGLE.COM\n"}
    d["rdap"] = {VERISIGN_RDAP: {"objectClassName": "domain"}}
    bundle, _ = run(doc, "google.com")
    assert len(bundle.records) == 2
    assert {r.level for r in bundle.records} == {Level.REGISTRY}


def _loop_doc():
    doc = google_scenario_doc()
    d = doc["domains"]["google.com"]
    d["whois"] = {
        VERISIGN_WHOIS: "Domain Name: GOOGLE.COM\nRegistrar WHOIS Server: whois.a.test\n",
        "whois.a.test": "Domain Name: google.com\nRegistrar WHOIS Server: whois.b.test\n",
        "whois.b.test": "Domain Name: google.com\nRegistrar WHOIS Server: whois.a.test\n",
    }
    return doc


def test_referral_loop_terminates():
    bundle, bed = run(_loop_doc(), "google.com", protocols=frozenset({Protocol.WHOIS}))
    chain = [(r.depth, r.server.locator) for r in bundle.records]
    assert chain == [(0, VERISIGN_WHOIS), (1, "whois.a.test"), (2, "whois.b.test")]
    assert bundle.records[2].level is Level.DEEPER_REFERRAL
    assert len(bed.whois_requests) == 3


def test_max_depth():
    bundle, _ = run(_loop_doc(), "google.com", protocols=frozenset({Protocol.WHOIS}), max_depth=1)
    assert [r.depth for r in bundle.records] == [0, 1]


def test_failed_fetch_is_kept():
    doc = google_scenario_doc()
    doc["faults"] = {MM_WHOIS: "timeout", MM_RDAP: "malformed"}
    bundle, _ = run(doc, "google.com", timeout=0.5)
    by_server = {r.server.locator: r for r in bundle.records}
    assert by_server[MM_WHOIS].raw.outcome is Outcome.TIMEOUT
    assert by_server[MM_RDAP].raw.outcome is Outcome.MALFORMED
    assert by_server[MM_RDAP].parsed == ParsedFields()
    assert len(bundle.records) == 4


def test_no_known_server():
    with pytest.raises(NoKnownServer):
        collect("x.zz", TldServerMap(), transport=Transport())


def test_stale_pairing_flag():
    recs = [record(Protocol.WHOIS, VERISIGN_WHOIS, "x", at=T0), record(Protocol.RDAP, VERISIGN_RDAP, "{}", at=T0 + timedelta(seconds=90))]
    failed = record(Protocol.RDAP, MM_RDAP, "", depth=1, outcome=Outcome.TIMEOUT, at=T0 + timedelta(hours=1))
    b = make_bundle("google.com", recs + [failed], timedelta(seconds=60))
    assert b.pairing_window == timedelta(seconds=90)
    assert b.stale_pairing
    assert not make_bundle("google.com", recs, timedelta(seconds=120)).stale_pairing


def test_archive_lines_share_bundle_id():
    bundle, _ = run(google_scenario_doc(), "google.com")
    sink = io.StringIO()
    archive(bundle, sink)
    lines = [json.loads(l) for l in sink.getvalue().splitlines()]
    assert [l["type"] for l in lines] == ["bundle"] + ["record"] * 4
    assert {l["bundle_id"] for l in lines} == {bundle.bundle_id}
    assert list(read_archive(io.StringIO(sink.getvalue()))) == [bundle]


def test_empty_bundle_archive():
    sink = io.StringIO()
    archive(empty_bundle("x.zz"), sink)
    lines = sink.getvalue().splitlines()
    assert len(lines) == 1 and json.loads(lines[0])["records"] == 0


def test_archive_rejects_orphan_record():
    bundle, _ = run(google_scenario_doc(), "google.com")
    sink = io.StringIO()
    archive(bundle, sink)
    lines = sink.getvalue().splitlines()[1:]
    with pytest.raises(ValueError):
        list(read_archive(lines))


# -- round-trip property -----------------------------------------------------

hosts = st.from_regex(r"[a-z][a-z0-9]{0,8}(\.[a-z][a-z0-9]{0,8}){1,2}", fullmatch=True)
instants = st.datetimes(min_value=datetime(1971, 1, 1), max_value=datetime(2100, 1, 1), timezones=st.just(UTC))
reasons = st.sampled_from(list(MissingReason)).map(Missing)


def _or_missing(s):
    return st.one_of(reasons, s)


parsed_fields = st.builds(
    ParsedFields,
    nameservers=_or_missing(st.frozensets(hosts, min_size=1, max_size=4)),
    iana_id=_or_missing(st.integers(0, 10**7)),
    registrar_name=_or_missing(st.text(min_size=1, max_size=20)),
    created_at=_or_missing(instants),
    expires_at=_or_missing(instants),
    emails=_or_missing(st.frozensets(st.builds(lambda l, h: f"{l}@{h}", st.from_regex(r"[A-Za-z0-9.]{1,8}", fullmatch=True), hosts), min_size=1, max_size=3)),
)


@st.composite
def records(draw):
    protocol = draw(st.sampled_from(list(Protocol)))
    host = draw(hosts)
    if protocol is Protocol.WHOIS:
        ep = ServerEndpoint(protocol, host, draw(st.sampled_from(["", "-T dn,ace", "+"])), draw(st.sampled_from(list(Source))))
    else:
        ep = ServerEndpoint(protocol, f"https://{host}/rdap/", "", draw(st.sampled_from(list(Source))))
    raw = RawResponse(
        protocol, ep, draw(st.binary(max_size=200)), draw(instants), draw(st.sampled_from(list(Outcome))),
        draw(st.one_of(st.none(), st.integers(100, 599))), draw(st.text(max_size=20)),
    )
    return RegistrationRecord(draw(hosts), draw(st.integers(0, 6)), ep, raw, draw(parsed_fields))


@settings(max_examples=200, deadline=None)
@given(records())
def test_archive_round_trip(rec):
    line = json.loads(json.dumps(record_line("b1", rec)))
    assert record_from_line(line) == rec
