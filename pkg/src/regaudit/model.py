"""Core value types: endpoints, raw responses, parsed fields, records, bundles."""

from __future__ import annotations

import enum
from dataclasses import dataclass, field, fields as dc_fields
from datetime import datetime, timedelta
from typing import Any, Union
from urllib.parse import urlsplit

from .errors import InvalidHostname
from .normalize import normalize_fqdn
from .timeutil import format_rfc3339, parse_rfc3339


class Protocol(str, enum.Enum):
    WHOIS = "whois"
    RDAP = "rdap"


class Source(str, enum.Enum):
    RDAP_BOOTSTRAP = "rdap_bootstrap"
    IANA_WHOIS = "iana_whois"
    CURATED_DB = "curated_db"
    REFERRAL = "referral"


def normalize_rdap_base(uri: str) -> str:
    """Validate an RDAP base URI and give it exactly one trailing slash."""
    parts = urlsplit(uri.strip())
    if parts.scheme.lower() not in ("http", "https") or not parts.netloc:
        raise ValueError(f"RDAP base must be an absolute http(s) URI: {uri!r}")
    if parts.query or parts.fragment:
        raise ValueError(f"RDAP base must not carry query or fragment: {uri!r}")
    path = parts.path.rstrip("/") + "/"
    return f"{parts.scheme.lower()}://{parts.netloc.lower()}{path}"


@dataclass(frozen=True)
class ServerEndpoint:
    protocol: Protocol
    locator: str
    query_flags: str = ""
    source: Source = Source.CURATED_DB

    def __post_init__(self):
        object.__setattr__(self, "protocol", Protocol(self.protocol))
        object.__setattr__(self, "source", Source(self.source))
        if self.protocol is Protocol.RDAP:
            object.__setattr__(self, "locator", normalize_rdap_base(self.locator))
            if self.query_flags:
                raise ValueError("query flags only apply to WHOIS endpoints")
        else:
            if "://" in self.locator or ":" in self.locator or "/" in self.locator:
                raise ValueError(f"WHOIS locator must be a bare hostname: {self.locator!r}")
            try:
                host = normalize_fqdn(self.locator)
            except InvalidHostname as exc:
                raise ValueError(str(exc)) from exc
            object.__setattr__(self, "locator", host)
            object.__setattr__(self, "query_flags", (self.query_flags or "").strip())

    @property
    def host(self) -> str:
        if self.protocol is Protocol.WHOIS:
            return self.locator
        return urlsplit(self.locator).hostname or ""

    def to_json(self) -> dict[str, Any]:
        return {
            "protocol": self.protocol.value,
            "locator": self.locator,
            "flags": self.query_flags,
            "source": self.source.value,
        }

    @classmethod
    def from_json(cls, obj: dict[str, Any]) -> "ServerEndpoint":
        return cls(Protocol(obj["protocol"]), obj["locator"], obj.get("flags", ""), Source(obj["source"]))


class Outcome(str, enum.Enum):
    OK = "ok"
    TIMEOUT = "timeout"
    CONNECT_ERROR = "connect_error"
    HTTP_ERROR = "http_error"
    MALFORMED = "malformed"


@dataclass(frozen=True)
class RawResponse:
    protocol: Protocol
    server: ServerEndpoint
    body: bytes
    fetched_at: datetime
    outcome: Outcome
    http_status: int | None = None
    error: str = ""

    @property
    def ok(self) -> bool:
        return self.outcome is Outcome.OK


class MissingReason(str, enum.Enum):
    ABSENT = "absent"
    UNPARSABLE = "unparsable"
    REDACTED = "redacted"
    INVALID_TYPE = "invalid_type"
    PRE_EPOCH = "pre_epoch"


@dataclass(frozen=True)
class Missing:
    reason: MissingReason = MissingReason.ABSENT

    def __bool__(self):
        return False


ABSENT = Missing(MissingReason.ABSENT)


class Field(str, enum.Enum):
    NAMESERVERS = "nameservers"
    IANA_ID = "iana_id"
    REGISTRAR = "registrar_name"
    CREATED_AT = "created_at"
    EXPIRES_AT = "expires_at"
    EMAILS = "emails"

    @property
    def is_set(self) -> bool:
        return self in (Field.NAMESERVERS, Field.EMAILS)

    @property
    def is_date(self) -> bool:
        return self in (Field.CREATED_AT, Field.EXPIRES_AT)


# Fields counted in the headline inconsistency statistic.
HEADLINE_FIELDS = (Field.NAMESERVERS, Field.IANA_ID, Field.CREATED_AT, Field.EXPIRES_AT)


@dataclass(frozen=True)
class ParsedFields:
    nameservers: Union[frozenset, Missing] = ABSENT
    iana_id: Union[int, Missing] = ABSENT
    registrar_name: Union[str, Missing] = ABSENT
    created_at: Union[datetime, Missing] = ABSENT
    expires_at: Union[datetime, Missing] = ABSENT
    emails: Union[frozenset, Missing] = ABSENT

    def get(self, f: Field):
        return getattr(self, f.value)

    def present(self, f: Field) -> bool:
        return not isinstance(self.get(f), Missing)

    def to_json(self) -> dict[str, Any]:
        out = {}
        for f in Field:
            value = self.get(f)
            if isinstance(value, Missing):
                out[f.value] = {"missing": value.reason.value}
            elif f.is_set:
                out[f.value] = {"value": sorted(value)}
            elif f.is_date:
                out[f.value] = {"value": format_rfc3339(value)}
            else:
                out[f.value] = {"value": value}
        return out

    @classmethod
    def from_json(cls, obj: dict[str, Any]) -> "ParsedFields":
        kwargs = {}
        for f in Field:
            entry = obj.get(f.value, {"missing": "absent"})
            if "missing" in entry:
                kwargs[f.value] = Missing(MissingReason(entry["missing"]))
            elif f.is_set:
                kwargs[f.value] = frozenset(entry["value"])
            elif f.is_date:
                kwargs[f.value] = parse_rfc3339(entry["value"])
            else:
                kwargs[f.value] = entry["value"]
        return cls(**kwargs)

    @classmethod
    def all_missing(cls, reason: MissingReason = MissingReason.ABSENT) -> "ParsedFields":
        m = Missing(reason)
        return cls(**{f.name: m for f in dc_fields(cls)})


class Level(str, enum.Enum):
    REGISTRY = "registry"
    REGISTRAR = "registrar"
    DEEPER_REFERRAL = "deeper_referral"

    @classmethod
    def for_depth(cls, depth: int) -> "Level":
        if depth == 0:
            return cls.REGISTRY
        if depth == 1:
            return cls.REGISTRAR
        return cls.DEEPER_REFERRAL


@dataclass(frozen=True)
class RegistrationRecord:
    domain: str
    depth: int
    server: ServerEndpoint
    raw: RawResponse
    parsed: ParsedFields = field(default_factory=ParsedFields)

    @property
    def protocol(self) -> Protocol:
        return self.server.protocol

    @property
    def level(self) -> Level:
        return Level.for_depth(self.depth)

    @property
    def ok(self) -> bool:
        return self.raw.ok


@dataclass(frozen=True)
class RecordBundle:
    domain: str
    records: tuple[RegistrationRecord, ...]
    collected_at: datetime
    pairing_window: timedelta = timedelta(0)
    stale_pairing: bool = False
    bundle_id: str = ""

    def successful(self) -> list[RegistrationRecord]:
        return [r for r in self.records if r.ok]
