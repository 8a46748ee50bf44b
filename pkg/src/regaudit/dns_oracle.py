"""Parent-side NS lookups and registration checks over DNS, plus nameserver adjudication."""

from __future__ import annotations

import enum
import logging
from collections.abc import Sequence
from dataclasses import dataclass

import dns.exception
import dns.flags
import dns.message
import dns.name
import dns.query
import dns.rcode
import dns.rdatatype

from .errors import DnsFailure
from .normalize import normalize_fqdn

log = logging.getLogger(__name__)

DNS_TIMEOUT = 3.0
RETRIES = 1
MAX_REFERRALS = 16

# a.root-servers.net ... m.root-servers.net (IPv4)
ROOT_SERVERS = (
    "198.41.0.4", "170.247.170.2", "192.33.4.12", "199.7.91.13", "192.203.230.10", "192.5.5.241",
    "192.112.36.4", "198.97.190.53", "192.36.148.17", "192.58.128.30", "193.0.14.129", "199.7.83.42",
    "202.12.27.33",
)


@dataclass(frozen=True)
class ResolverConfig:
    root_hints: Sequence[str] = ROOT_SERVERS
    port: int = 53
    timeout: float = DNS_TIMEOUT
    retries: int = RETRIES


def _exchange(qname: dns.name.Name, rdtype, servers: Sequence[str], cfg: ResolverConfig) -> dns.message.Message:
    """Ask each server in turn, UDP with TCP fallback, until one gives a usable answer."""
    query = dns.message.make_query(qname, rdtype)
    query.flags &= ~dns.flags.RD
    saw_timeout = False
    last_servfail = None
    for server in servers:
        for _ in range(cfg.retries + 1):
            try:
                resp, _tcp = dns.query.udp_with_fallback(query, server, timeout=cfg.timeout, port=cfg.port)
            except dns.exception.Timeout:
                saw_timeout = True
                continue
            except (OSError, dns.exception.DNSException) as exc:
                log.debug("%s: %s", server, exc)
                break
            rc = resp.rcode()
            if rc in (dns.rcode.NOERROR, dns.rcode.NXDOMAIN):
                return resp
            last_servfail = f"{server} answered {dns.rcode.to_text(rc)}"
            break
    if last_servfail is not None:
        raise DnsFailure(DnsFailure.SERVFAIL, last_servfail)
    if saw_timeout:
        raise DnsFailure(DnsFailure.TIMEOUT, f"no answer for {qname} from {len(servers)} server(s)")
    raise DnsFailure(DnsFailure.SERVFAIL, f"no usable server for {qname}")


def _ns_for(resp: dns.message.Message, owner: dns.name.Name) -> list[str]:
    names = []
    for section in (resp.answer, resp.authority):
        for rrset in section:
            if rrset.rdtype == dns.rdatatype.NS and rrset.name == owner:
                names.extend(r.target.to_text() for r in rrset)
    return names


def _glue(resp: dns.message.Message, hosts: Sequence[str]) -> list[str]:
    wanted = {dns.name.from_text(h) for h in hosts}
    addrs = []
    for rrset in resp.additional:
        if rrset.rdtype == dns.rdatatype.A and rrset.name in wanted:
            addrs.extend(r.address for r in rrset)
    return addrs


def _referral(resp: dns.message.Message, target: dns.name.Name) -> list[str]:
    """NS names of a delegation towards ``target`` in a non-answer response."""
    if resp.answer:
        return []
    names = []
    for rrset in resp.authority:
        if rrset.rdtype == dns.rdatatype.NS and target.is_subdomain(rrset.name):
            names.extend(r.target.to_text() for r in rrset)
    return names


def _addresses(hosts: Sequence[str], cfg: ResolverConfig, depth: int) -> list[str]:
    """Resolve out-of-bailiwick nameserver names by walking from the root again."""
    for host in hosts:
        try:
            resp = _walk(dns.name.from_text(host), dns.rdatatype.A, cfg, depth + 1)
        except DnsFailure:
            continue
        addrs = [r.address for rrset in resp.answer if rrset.rdtype == dns.rdatatype.A for r in rrset]
        if addrs:
            return addrs
    return []


def _follow(resp: dns.message.Message, ns: Sequence[str], cfg: ResolverConfig, depth: int, zone) -> list[str]:
    addrs = _glue(resp, ns) or _addresses(ns, cfg, depth)
    if not addrs:
        raise DnsFailure(DnsFailure.SERVFAIL, f"no reachable nameserver for {zone}")
    return addrs


def _walk(target: dns.name.Name, rdtype, cfg: ResolverConfig, depth: int = 0) -> dns.message.Message:
    """Resolve ``target``/``rdtype`` iteratively from the root, following every delegation."""
    if depth > 2:
        raise DnsFailure(DnsFailure.SERVFAIL, "nameserver address resolution nested too deeply")
    servers = list(cfg.root_hints)
    i = len(target.labels) - 2
    for _ in range(MAX_REFERRALS):
        qname = dns.name.Name(target.labels[max(i, 0):])
        at_target = qname == target
        resp = _exchange(qname, rdtype if at_target else dns.rdatatype.NS, servers, cfg)
        if resp.rcode() == dns.rcode.NXDOMAIN:
            raise DnsFailure(DnsFailure.NXDOMAIN, f"{qname} does not exist")
        if at_target:
            ns = _referral(resp, target)
            if not ns or resp.flags & dns.flags.AA:
                return resp
            servers = _follow(resp, ns, cfg, depth, target)
            continue
        ns = _ns_for(resp, qname)
        if ns and not resp.answer:
            servers = _follow(resp, ns, cfg, depth, qname)
        i -= 1
    raise DnsFailure(DnsFailure.SERVFAIL, f"too many referrals resolving {target}")


def query_ns_at_registry(domain: str, config: ResolverConfig | None = None) -> frozenset[str]:
    """NS set that the parent zone publishes for ``domain`` (the delegation, not the child's own NS)."""
    cfg = config or ResolverConfig()
    target = dns.name.from_text(normalize_fqdn(domain))
    if len(target.labels) < 3:
        raise ValueError("a registered domain has at least two labels")
    servers = list(cfg.root_hints)
    for i in range(len(target.labels) - 2, -1, -1):
        qname = dns.name.Name(target.labels[i:])
        resp = _exchange(qname, dns.rdatatype.NS, servers, cfg)
        if resp.rcode() == dns.rcode.NXDOMAIN:
            raise DnsFailure(DnsFailure.NXDOMAIN, f"{qname} does not exist")
        ns = _ns_for(resp, qname)
        if qname == target:
            if not ns:
                raise DnsFailure(DnsFailure.NODATA, f"no NS for {qname} at its parent")
            return frozenset(normalize_fqdn(n) for n in ns)
        if not ns or resp.answer:
            continue
        servers = _follow(resp, ns, cfg, 0, qname)
    raise DnsFailure(DnsFailure.SERVFAIL, f"walk for {domain} ended without an answer")


def filter_registered(domain: str, config: ResolverConfig | None = None) -> bool:
    """False only on NXDOMAIN for the A query; an empty NOERROR still means registered."""
    cfg = config or ResolverConfig()
    try:
        _walk(dns.name.from_text(normalize_fqdn(domain)), dns.rdatatype.A, cfg)
    except DnsFailure as exc:
        if exc.kind == DnsFailure.NXDOMAIN:
            return False
        raise
    return True


class VerdictKind(str, enum.Enum):
    MATCHES_LEFT = "MatchesLeft"
    MATCHES_RIGHT = "MatchesRight"
    MATCHES_BOTH = "MatchesBoth"
    MATCHES_NEITHER = "MatchesNeither"
    PARTIAL = "Partial"


@dataclass(frozen=True)
class Verdict:
    value: VerdictKind
    dns_set: frozenset[str]


def adjudicate(dns_set, left, right) -> Verdict:
    dns_set, left, right = frozenset(dns_set), frozenset(left), frozenset(right)
    if dns_set == left and dns_set == right:
        kind = VerdictKind.MATCHES_BOTH
    elif dns_set == left:
        kind = VerdictKind.MATCHES_LEFT
    elif dns_set == right:
        kind = VerdictKind.MATCHES_RIGHT
    elif dns_set & (left | right):
        kind = VerdictKind.PARTIAL
    else:
        kind = VerdictKind.MATCHES_NEITHER
    return Verdict(kind, dns_set)
