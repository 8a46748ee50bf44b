"""Map domains to the registry-level WHOIS and RDAP servers responsible for them.

Three sources feed the map: the IANA RDAP bootstrap file (dns.json), the
IANA WHOIS server (``whois:`` line of a TLD record), and a curated
suffix database in a plain line format::

    # suffix   whois-host          [flags...]
    de         whois.denic.de      -T dn,ace
    ac.uk      whois.nic.ac.uk

Lookups use the longest suffix of the domain, on label boundaries.
"""

from __future__ import annotations

import json
import logging
import re
from collections.abc import Callable, Iterable, Mapping
from dataclasses import dataclass
from types import MappingProxyType

from .errors import InvalidDomainName, InvalidHostname, MalformedBootstrap, MalformedLine
from .model import Protocol, ServerEndpoint, Source
from .normalize import normalize_fqdn

log = logging.getLogger(__name__)

_DOMAIN_RE = re.compile(r"^(?=.{1,253}$)([a-z0-9](?:[a-z0-9-]{0,61}[a-z0-9])?)(\.[a-z0-9](?:[a-z0-9-]{0,61}[a-z0-9])?)*$")


class TldServerMap(Mapping):
    """Immutable suffix -> endpoints mapping."""

    def __init__(self, entries: Mapping[str, Iterable[ServerEndpoint]] | None = None):
        data: dict[str, tuple[ServerEndpoint, ...]] = {}
        for suffix, endpoints in (entries or {}).items():
            key = _suffix_key(suffix)
            merged = list(data.get(key, ()))
            for ep in endpoints:
                if ep not in merged:
                    merged.append(ep)
            data[key] = tuple(merged)
        self._data = MappingProxyType(data)

    def __getitem__(self, key: str) -> tuple[ServerEndpoint, ...]:
        return self._data[key]

    def __iter__(self):
        return iter(self._data)

    def __len__(self) -> int:
        return len(self._data)

    def __eq__(self, other):
        if isinstance(other, TldServerMap):
            return dict(self._data) == dict(other._data)
        return NotImplemented

    def __hash__(self):
        return hash(frozenset(self._data.items()))

    def __repr__(self):
        return f"TldServerMap({len(self)} suffixes)"

    def merge(self, *others: "TldServerMap") -> "TldServerMap":
        """Union of maps; endpoints for a shared suffix are concatenated in argument order."""
        combined: dict[str, list[ServerEndpoint]] = {k: list(v) for k, v in self._data.items()}
        for other in others:
            for k, v in other.items():
                combined.setdefault(k, []).extend(v)
        return TldServerMap(combined)

    def mapping_count(self) -> int:
        return sum(len(v) for v in self._data.values())


def _suffix_key(suffix: str) -> str:
    key = suffix.strip().lower().lstrip(".")
    try:
        return normalize_fqdn(key)
    except InvalidHostname as exc:
        raise ValueError(f"invalid suffix {suffix!r}") from exc


def load_rdap_bootstrap(document: bytes | str) -> TldServerMap:
    """Read IANA's dns.json: ``{"services": [[[tld, ...], [uri, ...]], ...]}``."""
    try:
        doc = json.loads(document)
    except (ValueError, UnicodeDecodeError) as exc:
        raise MalformedBootstrap(f"not JSON: {exc}") from exc
    if not isinstance(doc, dict) or not isinstance(doc.get("services"), list):
        raise MalformedBootstrap("missing 'services' array")
    entries: dict[str, list[ServerEndpoint]] = {}
    for i, service in enumerate(doc["services"]):
        if not isinstance(service, list) or len(service) != 2:
            raise MalformedBootstrap(f"service #{i}: expected [tlds, uris] pair")
        tlds, uris = service
        if not (isinstance(tlds, list) and isinstance(uris, list)):
            raise MalformedBootstrap(f"service #{i}: tlds and uris must be arrays")
        if not all(isinstance(x, str) for x in tlds + uris):
            raise MalformedBootstrap(f"service #{i}: non-string member")
        # https before http, otherwise document order
        ordered = sorted(uris, key=lambda u: 0 if u.lower().startswith("https:") else 1)
        try:
            endpoints = [ServerEndpoint(Protocol.RDAP, u, "", Source.RDAP_BOOTSTRAP) for u in ordered]
            for tld in tlds:
                bucket = entries.setdefault(_suffix_key(tld), [])
                bucket.extend(ep for ep in endpoints if ep not in bucket)
        except ValueError as exc:
            raise MalformedBootstrap(f"service #{i}: {exc}") from exc
    return TldServerMap(entries)


def load_curated_db(document: str) -> TldServerMap:
    entries: dict[str, list[ServerEndpoint]] = {}
    for lineno, line in enumerate(document.splitlines(), 1):
        stripped = line.strip()
        if not stripped or stripped.startswith("#"):
            continue
        parts = stripped.split(None, 2)
        if len(parts) < 2:
            raise MalformedLine(lineno, line, "expected '<suffix> <whois-host> [flags...]'")
        suffix, host = parts[0], parts[1]
        flags = parts[2] if len(parts) == 3 else ""
        try:
            ep = ServerEndpoint(Protocol.WHOIS, host, flags, Source.CURATED_DB)
            key = _suffix_key(suffix)
        except ValueError as exc:
            raise MalformedLine(lineno, line, str(exc)) from exc
        bucket = entries.setdefault(key, [])
        if ep not in bucket:
            bucket.append(ep)
    return TldServerMap(entries)


def parse_iana_whois_referral(response: str) -> str | None:
    """Return the ``whois:`` host from a whois.iana.org TLD record, if any."""
    for line in response.splitlines():
        key, sep, value = line.partition(":")
        if sep and key.strip().lower() == "whois":
            value = value.strip()
            return value or None
    return None


def load_iana_whois(tlds: Iterable[str], query: Callable[[str], str | None]) -> TldServerMap:
    """Build a map from whois.iana.org answers.

    ``query`` takes a TLD and returns the IANA response text (None on failure).
    TLDs without a ``whois:`` line are left out.
    """
    entries: dict[str, list[ServerEndpoint]] = {}
    for tld in tlds:
        text = query(tld)
        if not text:
            continue
        host = parse_iana_whois_referral(text)
        if host is None:
            continue
        try:
            entries[_suffix_key(tld)] = [ServerEndpoint(Protocol.WHOIS, host, "", Source.IANA_WHOIS)]
        except ValueError:
            log.warning("IANA returned unusable whois host %r for %s", host, tld)
    return TldServerMap(entries)


def check_domain(domain: str) -> str:
    if not isinstance(domain, str) or not _DOMAIN_RE.match(domain):
        raise InvalidDomainName(f"not a lowercase A-label domain name: {domain!r}")
    return domain


def to_query_domain(name: str) -> str:
    """Operator input (any case, U-labels, trailing dot) to the A-label form used on the wire."""
    try:
        return check_domain(normalize_fqdn(name))
    except InvalidHostname as exc:
        raise InvalidDomainName(str(exc)) from exc


def matching_suffix(domain: str, server_map: Mapping[str, object]) -> str | None:
    labels = check_domain(domain).split(".")
    for i in range(1, len(labels)):
        candidate = ".".join(labels[i:])
        if candidate in server_map:
            return candidate
    return None


def resolve(domain: str, server_map: TldServerMap) -> list[ServerEndpoint]:
    suffix = matching_suffix(domain, server_map)
    return list(server_map[suffix]) if suffix is not None else []


WHOIS_PREFERENCE = (Source.CURATED_DB, Source.IANA_WHOIS)


def pick_endpoints(
    endpoints: Iterable[ServerEndpoint],
    protocols: Iterable[Protocol] = (Protocol.WHOIS, Protocol.RDAP),
    whois_preference: str = "curated",
) -> list[ServerEndpoint]:
    """Choose the registry endpoints to query, at most one per protocol unless asked otherwise.

    ``whois_preference`` is ``curated`` (curated DB over IANA), ``iana``
    (the reverse), or ``all`` (every distinct WHOIS host).
    """
    endpoints = list(endpoints)
    wanted = set(protocols)
    chosen: list[ServerEndpoint] = []
    if Protocol.WHOIS in wanted:
        whois = [e for e in endpoints if e.protocol is Protocol.WHOIS]
        if whois_preference == "all":
            seen = set()
            for ep in whois:
                if ep.locator not in seen:
                    seen.add(ep.locator)
                    chosen.append(ep)
        else:
            order = WHOIS_PREFERENCE if whois_preference == "curated" else tuple(reversed(WHOIS_PREFERENCE))
            rank = {src: i for i, src in enumerate(order)}
            whois.sort(key=lambda e: rank.get(e.source, len(rank)))
            chosen.extend(whois[:1])
    if Protocol.RDAP in wanted:
        chosen.extend([e for e in endpoints if e.protocol is Protocol.RDAP][:1])
    return chosen


@dataclass(frozen=True)
class AvailabilityRow:
    kind: str
    total: int
    counts: dict[str, int]

    def share(self, source: str) -> float:
        return self.counts[source] / self.total if self.total else 0.0


def tld_kind(tld: str) -> str:
    """Two-letter ASCII TLDs are country codes; everything else counts as generic."""
    return "ccTLD" if len(tld) == 2 and tld.isalpha() else "gTLD"


def server_availability(
    tlds: Iterable[str],
    maps: Mapping[str, TldServerMap],
    kind_of: Callable[[str], str] = tld_kind,
) -> list[AvailabilityRow]:
    """Count, per TLD kind, how many TLDs each source provides at least one server for."""
    groups: dict[str, list[str]] = {}
    for tld in tlds:
        t = _suffix_key(tld)
        groups.setdefault(kind_of(t), []).append(t)
    rows = []
    for kind in sorted(groups):
        members = groups[kind]
        counts = {name: sum(1 for t in members if m.get(t)) for name, m in maps.items()}
        rows.append(AvailabilityRow(kind, len(members), counts))
    return rows
