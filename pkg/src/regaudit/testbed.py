"""In-process WHOIS, RDAP and DNS servers that replay a scripted scenario.

A scenario names, per domain, the WHOIS text each WHOIS host returns, the
RDAP object each RDAP base returns, and the delegation the DNS serves.
The JSON layout is described by ``data/scenario.schema.json``::

    {
      "version": 1,
      "tlds": {"com": {"whois": "whois.verisign-grs.com", "whois_flags": "",
                       "rdap": "https://rdap.verisign.com/com/v1/"}},
      "domains": {
        "google.com": {
          "whois": {"whois.verisign-grs.com": "Domain Name: GOOGLE.COM ..."},
          "rdap": {"https://rdap.verisign.com/com/v1/": {"objectClassName": "domain"}},
          "dns": {"ns": ["ns1.google.com"], "a": ["192.0.2.1"]}
        }
      },
      "faults": {"whois.slow.example": "timeout"}
    }

``dns: null`` makes the domain answer NXDOMAIN. Fault values are
``timeout`` (hold the connection open until shutdown) or ``malformed``
(WHOIS: close without a byte; RDAP: 200 with a body that is not JSON).
Every server is bound to 127.0.0.1 on an OS-chosen port; the handle maps
scenario hostnames to those ports so a Transport can be pointed at them.
"""

from __future__ import annotations

import json
import logging
import socketserver
import threading
from dataclasses import dataclass, field
from http.server import BaseHTTPRequestHandler, ThreadingHTTPServer
from importlib import resources
from typing import Any
from urllib.parse import urlsplit

import dns.flags
import dns.message
import dns.name
import dns.rcode
import dns.rdataclass
import dns.rdatatype
import dns.rrset
import jsonschema

from .bootstrap import TldServerMap, check_domain, load_curated_db, load_rdap_bootstrap
from .collector import _whois_host, rdap_base_from_href
from .dns_oracle import ResolverConfig
from .errors import BindError, DanglingReferral, InvalidDomainName, MalformedReferral, SchemaError
from .model import normalize_rdap_base
from .normalize import normalize_fqdn
from .rdap_parser import related_links
from .transport import TransportConfig
from .whois_parser import default_templates, select_template, whois_referral_value

log = logging.getLogger(__name__)

LOCALHOST = "127.0.0.1"
HOLD_SECONDS = 120.0


def scenario_schema() -> dict:
    return json.loads(resources.files("regaudit").joinpath("data/scenario.schema.json").read_text("utf-8"))


@dataclass(frozen=True)
class TldScript:
    whois: str | None = None
    whois_flags: str = ""
    rdap: str | None = None


@dataclass(frozen=True)
class DnsScript:
    ns: tuple[str, ...] = ()
    a: tuple[str, ...] = ()


@dataclass(frozen=True)
class DomainScript:
    whois: dict[str, str] = field(default_factory=dict)
    rdap: dict[str, Any] = field(default_factory=dict)
    dns: DnsScript | None = None


@dataclass(frozen=True)
class Scenario:
    tlds: dict[str, TldScript]
    domains: dict[str, DomainScript]
    faults: dict[str, str] = field(default_factory=dict)
    version: int = 1

    def whois_hosts(self) -> list[str]:
        hosts = {t.whois for t in self.tlds.values() if t.whois}
        for d in self.domains.values():
            hosts.update(d.whois)
        hosts.update(k for k in self.faults if "://" not in k)
        return sorted(hosts)

    def rdap_bases(self) -> list[str]:
        bases = {t.rdap for t in self.tlds.values() if t.rdap}
        for d in self.domains.values():
            bases.update(d.rdap)
        bases.update(k for k in self.faults if "://" in k)
        return sorted(bases)

    def bootstrap_document(self) -> dict:
        services = [[[tld], [t.rdap]] for tld, t in sorted(self.tlds.items()) if t.rdap]
        return {"version": "1.0", "description": "mock testbed", "services": services}

    def curated_db_text(self) -> str:
        lines = []
        for tld, t in sorted(self.tlds.items()):
            if t.whois:
                lines.append(f"{tld} {t.whois} {t.whois_flags}".rstrip())
        return "\n".join(lines) + "\n"

    def server_map(self) -> TldServerMap:
        rdap = load_rdap_bootstrap(json.dumps(self.bootstrap_document()))
        return rdap.merge(load_curated_db(self.curated_db_text()))

    def to_json(self) -> dict:
        return {
            "version": self.version,
            "tlds": {
                tld: {k: v for k, v in (("whois", t.whois), ("whois_flags", t.whois_flags), ("rdap", t.rdap)) if v}
                for tld, t in self.tlds.items()
            },
            "domains": {
                name: {
                    "whois": dict(d.whois),
                    "rdap": dict(d.rdap),
                    "dns": None if d.dns is None else {"ns": list(d.dns.ns), "a": list(d.dns.a)},
                }
                for name, d in self.domains.items()
            },
            "faults": dict(self.faults),
        }


def _fault_key(key: str) -> str:
    return normalize_rdap_base(key) if "://" in key else normalize_fqdn(key)


def load_scenario(document: str | bytes | dict) -> Scenario:
    if not isinstance(document, dict):
        try:
            document = json.loads(document)
        except ValueError as exc:
            raise SchemaError(f"scenario is not JSON: {exc}") from exc
    try:
        jsonschema.validate(document, scenario_schema())
    except jsonschema.ValidationError as exc:
        path = "/".join(str(p) for p in exc.absolute_path) or "<root>"
        raise SchemaError(f"{path}: {exc.message}") from exc
    try:
        tlds = {
            normalize_fqdn(tld): TldScript(
                normalize_fqdn(t["whois"]) if t.get("whois") else None,
                t.get("whois_flags", ""),
                normalize_rdap_base(t["rdap"]) if t.get("rdap") else None,
            )
            for tld, t in document["tlds"].items()
        }
        domains = {}
        for name, d in document["domains"].items():
            check_domain(name)
            dns_doc = d["dns"]
            domains[name] = DomainScript(
                {normalize_fqdn(h): text for h, text in d.get("whois", {}).items()},
                {normalize_rdap_base(b): obj for b, obj in d.get("rdap", {}).items()},
                None if dns_doc is None else DnsScript(
                    tuple(normalize_fqdn(n) for n in dns_doc.get("ns", [])), tuple(dns_doc.get("a", []))
                ),
            )
        faults = {_fault_key(k): v for k, v in document.get("faults", {}).items()}
    except (ValueError, InvalidDomainName) as exc:
        raise SchemaError(str(exc)) from exc
    scenario = Scenario(tlds, domains, faults, document.get("version", 1))
    check_referrals(scenario)
    return scenario


def check_referrals(scenario: Scenario) -> None:
    """Every referral in a script must point at a server the scenario defines."""
    templates = default_templates()
    for name, d in scenario.domains.items():
        whois_known = set(d.whois) | set(scenario.faults)
        for host, text in d.whois.items():
            value = whois_referral_value(text, select_template(host, templates), name)
            if value is None:
                continue
            try:
                target = _whois_host(value)
            except MalformedReferral:
                continue  # served as-is; the collector reports it
            if target not in whois_known:
                raise DanglingReferral(f"{name}: {host} refers to undefined WHOIS host {target}")
        rdap_known = set(d.rdap) | set(scenario.faults)
        for base, obj in d.rdap.items():
            if not isinstance(obj, dict):
                continue
            for href in related_links(obj)[:1]:
                try:
                    target = rdap_base_from_href(href)
                except MalformedReferral:
                    continue
                if target not in rdap_known:
                    raise DanglingReferral(f"{name}: {base} refers to undefined RDAP base {target}")


# -- servers -------------------------------------------------------------------


class _WhoisServer(socketserver.ThreadingTCPServer):
    daemon_threads = True
    allow_reuse_address = True

    def __init__(self, host: str, bed: "Testbed"):
        self.whois_host = host
        self.bed = bed
        super().__init__((LOCALHOST, 0), _WhoisHandler)


class _WhoisHandler(socketserver.StreamRequestHandler):
    timeout = 10

    def handle(self):
        server: _WhoisServer = self.server
        bed = server.bed
        try:
            line = self.rfile.readline(4096)
        except OSError:
            return
        bed._record_whois(server.whois_host, line)
        fault = bed.scenario.faults.get(server.whois_host)
        if fault == "timeout":
            bed._stop.wait(HOLD_SECONDS)
            return
        if fault == "malformed":
            return
        query = line.decode("utf-8", "replace").strip()
        domain = query.split()[-1].lower() if query.split() else ""
        script = bed.scenario.domains.get(domain)
        text = script.whois.get(server.whois_host) if script else None
        if text is None:
            text = f'No match for "{domain.upper()}".\r\n'
        self.wfile.write(text.encode("utf-8"))


class _RdapServer(ThreadingHTTPServer):
    daemon_threads = True

    def __init__(self, bed: "Testbed"):
        self.bed = bed
        super().__init__((LOCALHOST, 0), _RdapHandler)


class _RdapHandler(BaseHTTPRequestHandler):
    protocol_version = "HTTP/1.1"

    def log_message(self, fmt, *args):
        log.debug("rdap mock: " + fmt, *args)

    def _send(self, status: int, body: bytes, ctype: str = "application/rdap+json"):
        self.send_response(status)
        self.send_header("Content-Type", ctype)
        self.send_header("Content-Length", str(len(body)))
        self.end_headers()
        self.wfile.write(body)

    def do_GET(self):
        bed: Testbed = self.server.bed
        host = (self.headers.get("Host") or "").split(":")[0].lower()
        bed._record_http(host, self.path, dict(self.headers))
        match = bed._route_rdap(host, self.path)
        if match is None:
            self._send(404, b'{"errorCode":404,"title":"Not Found"}')
            return
        base, domain = match
        fault = bed.scenario.faults.get(base)
        if fault == "timeout":
            bed._stop.wait(HOLD_SECONDS)
            self.close_connection = True
            return
        if fault == "malformed":
            self._send(200, b"<html>this is not json", "text/html")
            return
        script = bed.scenario.domains.get(domain)
        if script is None or base not in script.rdap:
            self._send(404, b'{"errorCode":404,"title":"Not Found"}')
            return
        self._send(200, json.dumps(script.rdap[base]).encode("utf-8"))


class _DnsServer(socketserver.ThreadingUDPServer):
    daemon_threads = True

    def __init__(self, bed: "Testbed"):
        self.bed = bed
        super().__init__((LOCALHOST, 0), _DnsHandler)


class _DnsHandler(socketserver.BaseRequestHandler):
    def handle(self):
        data, sock = self.request
        try:
            query = dns.message.from_wire(data)
        except Exception:  # garbage datagram; nothing sensible to answer
            return
        resp = self.server.bed._answer_dns(query)
        sock.sendto(resp.to_wire(), self.client_address)


def _glue_rrsets(names) -> list:
    return [dns.rrset.from_text(n, 3600, "IN", "A", LOCALHOST) for n in names]


class Testbed:
    """Running servers for one scenario. Use as a context manager or call ``close``."""

    def __init__(self, scenario: Scenario):
        self.scenario = scenario
        self._stop = threading.Event()
        self._lock = threading.Lock()
        self.whois_requests: list[tuple[str, bytes]] = []
        self.http_requests: list[tuple[str, str, dict]] = []
        self._servers: list[socketserver.BaseServer] = []
        self._threads: list[threading.Thread] = []
        self.whois_overrides: dict[str, tuple[str, int]] = {}
        self.rdap_overrides: dict[str, tuple[str, int]] = {}
        self._bases = sorted(scenario.rdap_bases(), key=len, reverse=True)
        try:
            for host in scenario.whois_hosts():
                srv = _WhoisServer(host, self)
                self._start(srv)
                self.whois_overrides[host] = srv.server_address[:2]
            http = _RdapServer(self)
            self._start(http)
            for base in self._bases:
                self.rdap_overrides[urlsplit(base).hostname] = http.server_address[:2]
            self._dns = _DnsServer(self)
            self._start(self._dns)
        except OSError as exc:
            self.close()
            raise BindError(f"cannot bind mock server: {exc}") from exc
        self.dns_address = self._dns.server_address[:2]

    def _start(self, srv):
        self._servers.append(srv)
        t = threading.Thread(target=srv.serve_forever, kwargs={"poll_interval": 0.05}, daemon=True)
        t.start()
        self._threads.append(t)

    def _record_whois(self, host: str, raw: bytes):
        with self._lock:
            self.whois_requests.append((host, raw))

    def _record_http(self, host: str, path: str, headers: dict):
        with self._lock:
            self.http_requests.append((host, path, headers))

    def _route_rdap(self, host: str, path: str) -> tuple[str, str] | None:
        for base in self._bases:
            parts = urlsplit(base)
            if parts.hostname != host or not path.startswith(parts.path):
                continue
            rest = path[len(parts.path):]
            if rest.startswith("domain/") and "/" not in rest[len("domain/"):]:
                return base, rest[len("domain/"):].lower()
        return None

    def _answer_dns(self, query: dns.message.Message) -> dns.message.Message:
        resp = dns.message.make_response(query)
        if not query.question:
            resp.set_rcode(dns.rcode.FORMERR)
            return resp
        q = query.question[0]
        qname = q.name.to_text(omit_final_dot=True).lower()
        domains = self.scenario.domains
        script = domains.get(qname)
        if len(q.name.labels) == 2 and any(d.endswith("." + qname) for d in domains):
            # acting as the root: delegate the TLD back to this same server
            ns_name = f"ns.nic.{qname}."
            resp.authority.append(dns.rrset.from_text(q.name, 3600, "IN", "NS", ns_name))
            resp.additional.extend(_glue_rrsets([ns_name]))
        elif script is not None and script.dns is not None:
            if q.rdtype == dns.rdatatype.NS and script.dns.ns:
                # parent-side view: referral, not authoritative
                names = [n + "." for n in script.dns.ns]
                resp.authority.append(dns.rrset.from_text(q.name, 3600, "IN", "NS", *names))
                resp.additional.extend(_glue_rrsets(names))
            else:
                resp.flags |= dns.flags.AA
                if q.rdtype == dns.rdatatype.A and script.dns.a:
                    resp.answer.append(dns.rrset.from_text(q.name, 300, "IN", "A", *script.dns.a))
        elif any(d.endswith("." + qname) for d, s in domains.items() if s.dns is not None):
            resp.flags |= dns.flags.AA  # empty non-terminal
        else:
            resp.flags |= dns.flags.AA
            resp.set_rcode(dns.rcode.NXDOMAIN)
        return resp

    def resolver_config(self, timeout: float = 1.0) -> ResolverConfig:
        return ResolverConfig(root_hints=(self.dns_address[0],), port=self.dns_address[1], timeout=timeout, retries=0)

    def transport_config(self, **kwargs) -> TransportConfig:
        kwargs.setdefault("per_host_qps", 1000.0)
        kwargs.setdefault("burst", 1000)
        return TransportConfig(whois_overrides=dict(self.whois_overrides), rdap_overrides=dict(self.rdap_overrides), **kwargs)

    def server_map(self) -> TldServerMap:
        return self.scenario.server_map()

    def close(self):
        self._stop.set()
        for srv in self._servers:
            srv.shutdown()
            srv.server_close()
        for t in self._threads:
            t.join(timeout=5)
        self._servers.clear()
        self._threads.clear()

    def __enter__(self):
        return self

    def __exit__(self, *exc):
        self.close()


def serve(scenario: Scenario) -> Testbed:
    return Testbed(scenario)
