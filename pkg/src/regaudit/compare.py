"""Field-by-field consistency checks across the records of a bundle."""

from __future__ import annotations

import enum
import itertools
from collections.abc import Iterable, Mapping, Sequence
from dataclasses import dataclass
from datetime import date, datetime
from typing import Any, Union

from .errors import EmptySet
from .model import Field, Protocol, RecordBundle, RegistrationRecord
from .normalize import email_domain_part

SECONDS_PER_DAY = 86400
TWO_DAYS = 2 * SECONDS_PER_DAY


class SetRelation(enum.IntEnum):
    """Ordered from least to most agreement, so collapse monotonicity is a plain ``>=``."""

    DISJOINT = 0
    INTERSECTION = 1
    INCLUSION = 2
    EQUALITY = 3

    @property
    def label(self) -> str:
        return self.name.capitalize()


def classify_sets(a: Iterable, b: Iterable) -> SetRelation:
    a, b = frozenset(a), frozenset(b)
    if not a or not b:
        raise EmptySet("set relations are defined for nonempty sets only")
    if a == b:
        return SetRelation.EQUALITY
    if a < b or b < a:
        return SetRelation.INCLUSION
    if a & b:
        return SetRelation.INTERSECTION
    return SetRelation.DISJOINT


class DateBucket(str, enum.Enum):
    UNDER_TWO_DAYS = "UnderTwoDays"
    EXACTLY_ONE_YEAR = "ExactlyOneYear"
    THIRTY_OR_THIRTY_ONE_DAYS = "ThirtyOrThirtyOneDays"
    OTHER = "Other"


@dataclass(frozen=True)
class DateDelta:
    seconds: int
    bucket: DateBucket


def add_one_year(d: date) -> date:
    try:
        return d.replace(year=d.year + 1)
    except ValueError:  # 29 February
        return d.replace(year=d.year + 1, day=28)


def date_bucket(earlier: datetime, later: datetime) -> DateDelta:
    """Bucket the gap between two instants. Argument order only affects the sign of ``seconds``."""
    delta = later - earlier
    seconds = int(delta.total_seconds())
    lo, hi = sorted((earlier, later))
    span = (hi - lo).total_seconds()
    if span < TWO_DAYS:
        bucket = DateBucket.UNDER_TWO_DAYS
    elif add_one_year(lo.date()) == hi.date():
        bucket = DateBucket.EXACTLY_ONE_YEAR
    elif int(span / SECONDS_PER_DAY + 0.5) in (30, 31):
        bucket = DateBucket.THIRTY_OR_THIRTY_ONE_DAYS
    else:
        bucket = DateBucket.OTHER
    return DateDelta(seconds, bucket)


@dataclass(frozen=True)
class ValuePair:
    left: Any
    right: Any


class PairKind(str, enum.Enum):
    CROSS_PROTOCOL = "CrossProtocol"
    SAME_PROTOCOL = "SameProtocolRegistryRegistrar"


@dataclass(frozen=True)
class RecordRef:
    protocol: Protocol
    depth: int
    server: str

    @classmethod
    def of(cls, rec: RegistrationRecord) -> "RecordRef":
        return cls(rec.protocol, rec.depth, rec.server.locator)

    def to_json(self) -> dict:
        return {"protocol": self.protocol.value, "depth": self.depth, "server": self.server}

    @classmethod
    def from_json(cls, obj: dict) -> "RecordRef":
        return cls(Protocol(obj["protocol"]), int(obj["depth"]), obj["server"])


Detail = Union[SetRelation, DateDelta, ValuePair]


@dataclass(frozen=True)
class FieldMismatch:
    domain: str
    field: Field
    pair_kind: PairKind
    left: RecordRef
    right: RecordRef
    detail: Detail

    @property
    def relation(self) -> SetRelation | None:
        return self.detail if isinstance(self.detail, SetRelation) else None


@dataclass(frozen=True)
class PairComparison:
    """One field compared across one record pair, whether or not the values agree."""

    mismatch: FieldMismatch
    equal: bool


def _order(a: RegistrationRecord, b: RegistrationRecord) -> tuple[RegistrationRecord, RegistrationRecord, PairKind]:
    if a.protocol is not b.protocol:
        left, right = (a, b) if a.protocol is Protocol.WHOIS else (b, a)
        return left, right, PairKind.CROSS_PROTOCOL
    left, right = (a, b) if a.depth <= b.depth else (b, a)
    return left, right, PairKind.SAME_PROTOCOL


def fold_registrar_name(name: str) -> str:
    return " ".join(name.split()).casefold()


def _compare_values(f: Field, lv, rv) -> tuple[Detail, bool]:
    if f.is_set:
        rel = classify_sets(lv, rv)
        return rel, rel is SetRelation.EQUALITY
    if f.is_date:
        if lv <= rv:
            d = date_bucket(lv, rv)
        else:
            d = date_bucket(rv, lv)
            d = DateDelta(-d.seconds, d.bucket)
        return d, lv == rv
    if f is Field.REGISTRAR:
        return ValuePair(lv, rv), fold_registrar_name(lv) == fold_registrar_name(rv)
    return ValuePair(lv, rv), lv == rv


def pair_comparisons(bundle: RecordBundle, fields: Sequence[Field] = tuple(Field)) -> list[PairComparison]:
    """Every (record pair, field) where both sides hold a value. Failed fetches take no part."""
    records = bundle.successful()
    out = []
    for a, b in itertools.combinations(records, 2):
        left, right, kind = _order(a, b)
        for f in fields:
            lv, rv = left.parsed.get(f), right.parsed.get(f)
            if not (left.parsed.present(f) and right.parsed.present(f)):
                continue
            detail, equal = _compare_values(f, lv, rv)
            out.append(PairComparison(
                FieldMismatch(bundle.domain, f, kind, RecordRef.of(left), RecordRef.of(right), detail), equal
            ))
    return out


def compare_bundle(bundle: RecordBundle, skip_stale: bool = True) -> list[FieldMismatch]:
    if skip_stale and bundle.stale_pairing:
        return []
    return [c.mismatch for c in pair_comparisons(bundle) if not c.equal]


def collapse_emails(addresses: Iterable[str]) -> frozenset[str]:
    return frozenset(email_domain_part(a) for a in addresses)


def compare_emails_domain_collapsed(bundle: RecordBundle, skip_stale: bool = True) -> list[FieldMismatch]:
    """Re-examine each Emails mismatch using only the domains of the addresses.

    Pairs that agree after collapsing are kept with relation Equality so
    they can be counted as resolved.
    """
    if skip_stale and bundle.stale_pairing:
        return []
    by_ref = {RecordRef.of(r): r for r in bundle.successful()}
    out = []
    for c in pair_comparisons(bundle, (Field.EMAILS,)):
        if c.equal:
            continue
        m = c.mismatch
        lv = by_ref[m.left].parsed.emails
        rv = by_ref[m.right].parsed.emails
        rel = classify_sets(collapse_emails(lv), collapse_emails(rv))
        out.append(FieldMismatch(m.domain, m.field, m.pair_kind, m.left, m.right, rel))
    return out


def registrar_group(bundle: RecordBundle) -> int | None:
    """IANA ID used to group a domain by registrar: registry RDAP first, then registry WHOIS."""
    for proto in (Protocol.RDAP, Protocol.WHOIS):
        for rec in bundle.successful():
            if rec.depth == 0 and rec.protocol is proto and rec.parsed.present(Field.IANA_ID):
                return rec.parsed.iana_id
    return None


@dataclass(frozen=True)
class RegistrarRates:
    domains: int
    rates: dict[Field, float]


def group_rates(
    groups: Mapping[str, int | None],
    mismatched: Iterable[tuple[str, Field]],
    fields: Sequence[Field] = tuple(Field),
) -> dict[int | None, RegistrarRates]:
    """``groups`` maps domain -> registrar id; ``mismatched`` yields (domain, field) hits."""
    members: dict[int | None, set[str]] = {}
    for domain, gid in groups.items():
        members.setdefault(gid, set()).add(domain)
    hit: dict[Field, set[str]] = {f: set() for f in fields}
    for domain, f in mismatched:
        if f in hit:
            hit[f].add(domain)
    return {
        gid: RegistrarRates(len(doms), {f: len(doms & hit[f]) / len(doms) for f in fields})
        for gid, doms in members.items()
    }


def per_registrar_rates(
    mismatches: Iterable[FieldMismatch],
    bundles: Iterable[RecordBundle],
    fields: Sequence[Field] = tuple(Field),
) -> dict[int | None, RegistrarRates]:
    """Share of each registrar's domains with at least one mismatch per field.

    Equality entries (resolved by email collapse) are not mismatches and are ignored.
    """
    groups = {b.domain: registrar_group(b) for b in bundles}
    hits = ((m.domain, m.field) for m in mismatches if m.relation is not SetRelation.EQUALITY)
    return group_rates(groups, hits, fields)
