"""ParsedFields from an RDAP domain object, reading only RFC 9083 placements.

Where each field may come from:

* nameservers: ``nameservers[].ldhName`` as a string. The array-of-labels
  form is invalid there and the entry is dropped.
* creation / expiration: top-level ``events`` with eventAction
  ``registration`` / ``expiration`` (exact match, no folding).
* IANA ID and registrar name: the first top-level entity whose roles
  include ``registrar``: its ``publicIds`` entry of type
  "IANA Registrar ID" and its vCard ``fn``.
* emails: every vCard ``email`` property anywhere in the entity tree.
"""

from __future__ import annotations

import json
import logging
from collections.abc import Sequence
from datetime import datetime
from typing import Any

from .errors import InvalidEmail, InvalidHostname, NotDomainObject, NotJson
from .model import Missing, MissingReason, ParsedFields
from .normalize import normalize_email, normalize_fqdn
from .timeutil import EPOCH, parse_rfc3339
from .whois_parser import DEFAULT_REDACTION_MARKERS

log = logging.getLogger(__name__)

IANA_REGISTRAR_ID = "IANA Registrar ID"

_ABSENT = Missing(MissingReason.ABSENT)
_INVALID = Missing(MissingReason.INVALID_TYPE)
_UNPARSABLE = Missing(MissingReason.UNPARSABLE)
_REDACTED = Missing(MissingReason.REDACTED)


def load_rdap_document(document: bytes | str | dict) -> dict:
    if isinstance(document, dict):
        return document
    try:
        doc = json.loads(document)
    except (ValueError, UnicodeDecodeError, RecursionError) as exc:
        raise NotJson(str(exc)) from exc
    if not isinstance(doc, dict):
        raise NotDomainObject(f"top-level JSON value is {type(doc).__name__}, not an object")
    return doc


def parse_rdap_event(events: Any, action: str) -> datetime | None:
    raw = _event_date(events, action)
    return parse_rfc3339(raw, assume_utc=False) if isinstance(raw, str) else None


def _event_date(events: Any, action: str):
    """eventDate of the first event with exactly ``action``; None when there is none."""
    if not isinstance(events, list):
        return None
    for ev in events:
        if isinstance(ev, dict) and ev.get("eventAction") == action:
            return ev.get("eventDate", "")
    return None


def _date_field(events: Any, action: str):
    if events is None:
        return _ABSENT
    if not isinstance(events, list):
        return _INVALID
    raw = _event_date(events, action)
    if raw is None:
        return _ABSENT
    if not isinstance(raw, str):
        return _INVALID
    dt = parse_rfc3339(raw, assume_utc=False)
    if dt is None:
        return _UNPARSABLE
    if dt <= EPOCH:
        return Missing(MissingReason.PRE_EPOCH)
    return dt


def _nameservers(value: Any):
    if value is None:
        return _ABSENT
    if not isinstance(value, list):
        return _INVALID
    names, invalid, unparsable = set(), 0, 0
    for ns in value:
        ldh = ns.get("ldhName") if isinstance(ns, dict) else None
        if not isinstance(ldh, str):
            invalid += 1
            continue
        try:
            names.add(normalize_fqdn(ldh))
        except InvalidHostname:
            unparsable += 1
    if names:
        if invalid:
            log.debug("dropped %d nameserver entries with a non-string ldhName", invalid)
        return frozenset(names)
    if invalid:
        return _INVALID
    return _UNPARSABLE if unparsable else _ABSENT


def _vcard_props(entity: dict) -> list:
    card = entity.get("vcardArray")
    if isinstance(card, list) and len(card) >= 2 and card[0] == "vcard" and isinstance(card[1], list):
        return [p for p in card[1] if isinstance(p, list) and len(p) >= 4 and isinstance(p[0], str)]
    return []


def _has_role(entity: dict, role: str) -> bool:
    roles = entity.get("roles")
    return isinstance(roles, list) and role in roles


def _registrar_fields(entities: Any) -> tuple[Any, Any]:
    if entities is None:
        return _ABSENT, _ABSENT
    if not isinstance(entities, list):
        return _INVALID, _INVALID
    registrars = [e for e in entities if isinstance(e, dict) and _has_role(e, "registrar")]
    if not registrars:
        return _ABSENT, _ABSENT
    if len(registrars) > 1:
        log.info("%d registrar entities; using the first", len(registrars))
    reg = registrars[0]

    iana_id = _ABSENT
    public_ids = reg.get("publicIds")
    if public_ids is not None and not isinstance(public_ids, list):
        iana_id = _INVALID
    else:
        for pid in public_ids or ():
            if isinstance(pid, dict) and pid.get("type") == IANA_REGISTRAR_ID:
                ident = pid.get("identifier")
                if not isinstance(ident, str):
                    iana_id = _INVALID
                elif ident.isascii() and ident.isdigit():
                    iana_id = int(ident)
                elif _redacted(ident):
                    iana_id = _REDACTED
                else:
                    iana_id = _UNPARSABLE
                break

    name = _ABSENT
    for prop in _vcard_props(reg):
        if prop[0].lower() == "fn":
            value = prop[3]
            if not isinstance(value, str):
                name = _INVALID
            elif _redacted(value):
                name = _REDACTED
            elif value.strip():
                name = " ".join(value.split())
            break
    return iana_id, name


def _redacted(value: str, markers: Sequence[str] = DEFAULT_REDACTION_MARKERS) -> bool:
    upper = value.upper()
    return any(m in upper for m in markers)


def _emails(entities: Any):
    if entities is None:
        return _ABSENT
    if not isinstance(entities, list):
        return _INVALID
    found, seen_any, redacted = set(), False, False
    stack = list(reversed(entities))
    while stack:
        ent = stack.pop()
        if not isinstance(ent, dict):
            continue
        for prop in _vcard_props(ent):
            if prop[0].lower() != "email":
                continue
            seen_any = True
            value = prop[3]
            if not isinstance(value, str):
                continue
            if _redacted(value):
                redacted = True
                continue
            try:
                found.add(normalize_email(value))
            except InvalidEmail:
                pass
        children = ent.get("entities")
        if isinstance(children, list):
            stack.extend(reversed(children))
    if found:
        return frozenset(found)
    if redacted:
        return _REDACTED
    return _UNPARSABLE if seen_any else _ABSENT


def parse_rdap(document: bytes | str | dict) -> ParsedFields:
    doc = load_rdap_document(document)
    klass = doc.get("objectClassName")
    if klass is not None and klass != "domain":
        raise NotDomainObject(f"objectClassName is {klass!r}")
    events = doc.get("events")
    iana_id, registrar = _registrar_fields(doc.get("entities"))
    return ParsedFields(
        nameservers=_nameservers(doc.get("nameservers")),
        iana_id=iana_id,
        registrar_name=registrar,
        created_at=_date_field(events, "registration"),
        expires_at=_date_field(events, "expiration"),
        emails=_emails(doc.get("entities")),
    )


def related_links(document: dict) -> list[str]:
    """hrefs of ``links`` members with rel=related and the RDAP media type, in order."""
    links = document.get("links")
    if not isinstance(links, list):
        return []
    out = []
    for link in links:
        if (
            isinstance(link, dict)
            and link.get("rel") == "related"
            and link.get("type") == "application/rdap+json"
            and isinstance(link.get("href"), str)
        ):
            out.append(link["href"])
    return out
