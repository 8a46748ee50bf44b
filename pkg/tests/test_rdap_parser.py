import copy
import json
from datetime import datetime, timezone

import pytest
from hypothesis import given, settings, strategies as st

from conftest import fixture_json, fixture_text
from regaudit.errors import NotDomainObject, NotJson
from regaudit.model import Field, Missing, MissingReason, ParsedFields
from regaudit.rdap_parser import parse_rdap, parse_rdap_event, related_links
from regaudit.whois_parser import default_templates, parse_whois, select_template

UTC = timezone.utc


@pytest.fixture
def doc():
    return fixture_json("google_registry.rdap.json")


def test_fixture_fields(doc):
    p = parse_rdap(doc)
    assert p.iana_id == 292
    assert p.registrar_name == "MarkMonitor Inc."
    assert p.created_at == datetime(1997, 9, 15, 4, tzinfo=UTC)
    assert p.expires_at == datetime(2028, 9, 14, 4, tzinfo=UTC)
    assert p.nameservers == frozenset(f"ns{i}.google.com" for i in range(1, 5))
    assert p.emails == frozenset({"abusecomplaints@markmonitor.com"})


def test_agrees_with_whois_fixture(doc):
    whois = parse_whois(fixture_text("google_registry.whois"), select_template("whois.verisign-grs.com", default_templates()))
    assert parse_rdap(json.dumps(doc).encode()) == whois


def test_events(doc):
    assert parse_rdap_event(doc["events"], "registration") == datetime(1997, 9, 15, 4, tzinfo=UTC)
    assert parse_rdap_event(doc["events"], "last changed") == datetime(2019, 9, 9, 15, 39, 4, tzinfo=UTC)
    assert parse_rdap_event([], "registration") is None
    assert parse_rdap_event([{"eventAction": "reregistration", "eventDate": "2000-01-01T00:00:00Z"}], "registration") is None


def test_bare_domain_object():
    assert parse_rdap({"objectClassName": "domain"}) == ParsedFields()


def test_not_json_and_not_domain():
    with pytest.raises(NotJson):
        parse_rdap(b"<html>")
    with pytest.raises(NotDomainObject):
        parse_rdap(b"[1, 2]")
    with pytest.raises(NotDomainObject):
        parse_rdap({"objectClassName": "entity"})


def test_array_ldhname_is_invalid_type(doc):
    doc["nameservers"] = [{"objectClassName": "nameserver", "ldhName": ["ns1", "google", "com"]}]
    assert parse_rdap(doc).nameservers == Missing(MissingReason.INVALID_TYPE)


def test_misplaced_fields_not_promoted(doc):
    moved = {"objectClassName": "domain", "registrar": doc["entities"][0], "eventz": doc["events"]}
    moved["remarks"] = [{"description": ["registration 1997-09-15T04:00:00Z"]}]
    # registrar entity nested under another entity is not the top-level registrar
    moved["entities"] = [{"roles": ["registrant"], "entities": [doc["entities"][0]]}]
    p = parse_rdap(moved)
    assert p.iana_id == Missing(MissingReason.ABSENT)
    assert p.registrar_name == Missing(MissingReason.ABSENT)
    assert p.created_at == Missing(MissingReason.ABSENT)
    # emails are collected anywhere in the entity tree
    assert p.emails == frozenset({"abusecomplaints@markmonitor.com"})


def test_bad_iana_identifier(doc):
    doc["entities"][0]["publicIds"][0]["identifier"] = "292 (MarkMonitor)"
    assert parse_rdap(doc).iana_id == Missing(MissingReason.UNPARSABLE)
    doc["entities"][0]["publicIds"][0]["identifier"] = 292
    assert parse_rdap(doc).iana_id == Missing(MissingReason.INVALID_TYPE)


def test_date_reasons(doc):
    doc["events"] = [
        {"eventAction": "registration", "eventDate": "1969-12-31T00:00:00Z"},
        {"eventAction": "expiration", "eventDate": "tomorrow"},
    ]
    p = parse_rdap(doc)
    assert p.created_at == Missing(MissingReason.PRE_EPOCH)
    assert p.expires_at == Missing(MissingReason.UNPARSABLE)


def test_redacted_email(doc):
    abuse = doc["entities"][0]["entities"][0]
    abuse["vcardArray"][1][3][3] = "REDACTED FOR PRIVACY"
    assert parse_rdap(doc).emails == Missing(MissingReason.REDACTED)


def test_first_registrar_wins(doc):
    second = copy.deepcopy(doc["entities"][0])
    second["publicIds"][0]["identifier"] = "9999"
    doc["entities"].append(second)
    assert parse_rdap(doc).iana_id == 292


def test_related_links(doc):
    assert related_links(doc) == ["https://rdap.markmonitor.com/rdap/domain/GOOGLE.COM"]
    assert related_links({"links": "nope"}) == []


json_leaf = st.one_of(st.none(), st.booleans(), st.integers(), st.floats(allow_nan=False), st.text(max_size=20))
json_any = st.recursive(
    json_leaf,
    lambda kids: st.one_of(st.lists(kids, max_size=4), st.dictionaries(st.text(max_size=10), kids, max_size=4)),
    max_leaves=20,
)
_KEYS = ["objectClassName", "nameservers", "events", "entities", "links", "ldhName", "publicIds",
         "vcardArray", "roles", "eventAction", "eventDate", "identifier", "type"]


def _mutate(base, data):
    """Replace random subtrees of a real document with arbitrary JSON."""
    if isinstance(base, dict):
        out = {}
        for k, v in base.items():
            if data.draw(st.integers(0, 5)) == 0:
                out[k] = data.draw(json_any)
            else:
                out[k] = _mutate(v, data)
        if data.draw(st.integers(0, 6)) == 0:
            out[data.draw(st.sampled_from(_KEYS))] = data.draw(json_any)
        return out
    if isinstance(base, list):
        return [data.draw(json_any) if data.draw(st.integers(0, 5)) == 0 else _mutate(v, data) for v in base]
    return base


@settings(max_examples=300, deadline=None)
@given(st.data())
def test_parser_total_on_mutated_documents(data):
    doc = _mutate(fixture_json("google_registry.rdap.json"), data)
    try:
        p = parse_rdap(doc)
    except NotDomainObject:
        return
    for f in Field:
        v = p.get(f)
        if f is Field.IANA_ID and not isinstance(v, Missing):
            assert isinstance(v, int) and v >= 0
