"""Command line entry point: resolve, fetch, audit, adjudicate, report, serve-mock.

Exit status: 0 success, 1 runtime failure, 2 usage or resolution failure.
"""

from __future__ import annotations

import argparse
import contextlib
import json
import logging
import os
import signal
import sys
import threading
from collections.abc import Iterator
from concurrent.futures import ThreadPoolExecutor
from datetime import timedelta
from importlib import resources
from pathlib import Path
from typing import IO

from . import __version__
from .bootstrap import TldServerMap, load_curated_db, load_iana_whois, load_rdap_bootstrap, resolve, to_query_domain
from .collector import CollectorOptions, archive, collect, empty_bundle, read_archive
from .dns_oracle import ResolverConfig, filter_registered, query_ns_at_registry
from .errors import DnsFailure, InvalidDomainName, NoKnownServer, RegauditError
from .model import Protocol, ServerEndpoint, Source
from .report import CorpusResults, adjudicate_lines, audit, emit, summarize
from .testbed import load_scenario, serve
from .transport import Transport, TransportConfig, decode_whois

log = logging.getLogger("regaudit")

ENV_BOOTSTRAP = "REGAUDIT_BOOTSTRAP"
ENV_CURATED = "REGAUDIT_CURATED_DB"
IANA_WHOIS = "whois.iana.org"

EXIT_OK, EXIT_RUNTIME, EXIT_USAGE = 0, 1, 2


def _data_text(name: str) -> str:
    return resources.files("regaudit").joinpath("data", name).read_text("utf-8")


def load_server_map(args) -> TldServerMap:
    bootstrap = args.bootstrap_file or os.environ.get(ENV_BOOTSTRAP)
    curated = args.curated_db or os.environ.get(ENV_CURATED)
    rdap = load_rdap_bootstrap(Path(bootstrap).read_bytes() if bootstrap else _data_text("dns.json"))
    db = load_curated_db(Path(curated).read_text("utf-8") if curated else _data_text("curated.txt"))
    return rdap.merge(db)


def load_connect_map(path: str | None) -> dict:
    if not path:
        return {}
    doc = json.loads(Path(path).read_text("utf-8"))
    return {
        "whois_overrides": {h: (a, int(p)) for h, (a, p) in doc.get("whois", {}).items()},
        "rdap_overrides": {h: (a, int(p)) for h, (a, p) in doc.get("rdap", {}).items()},
    }


def resolver_config(args) -> ResolverConfig:
    if not getattr(args, "dns_server", None):
        return ResolverConfig()
    host, _, port = args.dns_server.rpartition(":")
    return ResolverConfig(root_hints=(host or args.dns_server,), port=int(port) if host else 53)


@contextlib.contextmanager
def _output(path: str | None, mode: str = "w") -> Iterator[IO]:
    if not path or path == "-":
        yield sys.stdout.buffer if "b" in mode else sys.stdout
        return
    with open(path, mode, encoding=None if "b" in mode else "utf-8") as fh:
        yield fh


def _read_jsonl(path: str) -> list[dict]:
    stream = sys.stdin if path == "-" else open(path, encoding="utf-8")
    with contextlib.ExitStack() as stack:
        if stream is not sys.stdin:
            stack.enter_context(stream)
        return [json.loads(line) for line in stream if line.strip()]


def _domains_arg(target: str) -> list[str]:
    if target.startswith("@"):
        lines = Path(target[1:]).read_text("utf-8").splitlines()
        return [l.strip() for l in lines if l.strip() and not l.lstrip().startswith("#")]
    return [target]


# -- commands ----------------------------------------------------------------


def cmd_resolve(args) -> int:
    try:
        domain = to_query_domain(args.domain)
    except InvalidDomainName as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    server_map = load_server_map(args)
    if args.use_iana_whois:
        tld = domain.rsplit(".", 1)[-1]
        with Transport(TransportConfig(**load_connect_map(args.connect_map))) as t:
            def ask(label):
                raw = t.whois_query(ServerEndpoint(Protocol.WHOIS, IANA_WHOIS, "", Source.IANA_WHOIS), label)
                return decode_whois(raw.body) if raw.ok else None
            server_map = server_map.merge(load_iana_whois([tld], ask))
    endpoints = resolve(domain, server_map)
    if not endpoints:
        print(f"error: {NoKnownServer(domain)}", file=sys.stderr)
        return EXIT_USAGE
    for ep in endpoints:
        print("\t".join([ep.protocol.value, ep.locator, ep.query_flags or "-", ep.source.value]))
    return EXIT_OK


def _protocols(choice: str) -> frozenset:
    return {
        "both": frozenset({Protocol.WHOIS, Protocol.RDAP}),
        "whois": frozenset({Protocol.WHOIS}),
        "rdap": frozenset({Protocol.RDAP}),
    }[choice]


def cmd_fetch(args) -> int:
    names = _domains_arg(args.target)
    server_map = load_server_map(args)
    opts = CollectorOptions(
        max_depth=args.max_depth,
        pairing_window=timedelta(seconds=args.pair_window),
        protocols=_protocols(args.protocol),
    )
    tcfg = TransportConfig(
        timeout=args.timeout, per_host_qps=args.qps, burst=args.burst, contact=args.contact,
        **load_connect_map(args.connect_map),
    )
    dns_cfg = resolver_config(args)
    unresolved = 0

    def one(name: str):
        try:
            domain = to_query_domain(name)
        except InvalidDomainName as exc:
            return name, None, exc
        if args.filter_registered:
            try:
                if not filter_registered(domain, dns_cfg):
                    log.info("%s: NXDOMAIN, skipped", domain)
                    return domain, None, None
            except DnsFailure as exc:
                log.warning("%s: registration check failed (%s); fetching anyway", domain, exc.kind)
        try:
            return domain, collect(domain, server_map, opts, transport), None
        except NoKnownServer as exc:
            return domain, empty_bundle(domain), exc

    with Transport(tcfg) as transport, _output(args.out) as sink:
        with ThreadPoolExecutor(max_workers=max(1, args.concurrency)) as pool:
            for domain, bundle, err in pool.map(one, names):
                if isinstance(err, (InvalidDomainName, NoKnownServer)):
                    unresolved += 1
                    print(f"error: {err}", file=sys.stderr)
                if bundle is not None:
                    archive(bundle, sink)
    if unresolved and unresolved == len(names):
        return EXIT_USAGE
    return EXIT_OK


def cmd_audit(args) -> int:
    stream = sys.stdin if args.archive == "-" else open(args.archive, encoding="utf-8")
    with contextlib.ExitStack() as stack:
        if stream is not sys.stdin:
            stack.enter_context(stream)
        bundles = list(read_archive(stream))
    lines = audit(bundles, collapse_emails=args.emails_domain_collapse, exclude_stale=args.exclude_stale)
    with _output(args.out) as out:
        for line in lines:
            out.write(json.dumps(line, sort_keys=True) + "\n")
    return EXIT_OK


def cmd_adjudicate(args) -> int:
    lines = _read_jsonl(args.mismatches)
    cfg = resolver_config(args)
    verdicts = adjudicate_lines(lines, lambda d: query_ns_at_registry(d, cfg))
    with _output(args.out) as out:
        for line in lines + verdicts:
            out.write(json.dumps(line, sort_keys=True) + "\n")
    return EXIT_OK


def cmd_report(args) -> int:
    doc = summarize(CorpusResults.from_lines(_read_jsonl(args.results)))
    with _output(args.out, "wb") as out:
        out.write(emit(doc, args.format))
    return EXIT_OK


def cmd_serve_mock(args) -> int:
    scenario = load_scenario(Path(args.scenario).read_bytes())
    stop = threading.Event()
    with serve(scenario) as bed:
        info = {
            "whois": {h: list(a) for h, a in bed.whois_overrides.items()},
            "rdap": {h: list(a) for h, a in bed.rdap_overrides.items()},
            "dns": f"{bed.dns_address[0]}:{bed.dns_address[1]}",
        }
        if args.connect_map_out:
            Path(args.connect_map_out).write_text(json.dumps(info, indent=2) + "\n", "utf-8")
        if args.bootstrap_out:
            Path(args.bootstrap_out).write_text(json.dumps(scenario.bootstrap_document(), indent=2) + "\n", "utf-8")
        if args.curated_out:
            Path(args.curated_out).write_text(scenario.curated_db_text(), "utf-8")
        print(json.dumps(info, sort_keys=True), flush=True)
        for sig in (signal.SIGINT, signal.SIGTERM):
            signal.signal(sig, lambda *_: stop.set())
        while not stop.wait(0.5):
            pass
    return EXIT_OK


# -- parser ------------------------------------------------------------------


def _add_map_flags(p: argparse.ArgumentParser) -> None:
    p.add_argument("--bootstrap-file", help=f"RDAP bootstrap dns.json (default: ${ENV_BOOTSTRAP} or bundled excerpt)")
    p.add_argument("--curated-db", help=f"curated WHOIS server list (default: ${ENV_CURATED} or bundled list)")
    p.add_argument("--connect-map", help="JSON file mapping hostnames to [address, port] (as written by serve-mock)")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="regaudit", description="Compare WHOIS and RDAP registration data.")
    parser.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    parser.add_argument("-v", "--verbose", action="count", default=0)
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("resolve", help="show the registry servers for a domain")
    p.add_argument("domain")
    _add_map_flags(p)
    p.add_argument("--use-iana-whois", action="store_true", help="also ask whois.iana.org for the TLD's WHOIS host")
    p.set_defaults(func=cmd_resolve)

    p = sub.add_parser("fetch", help="collect WHOIS and RDAP records into a JSONL archive")
    p.add_argument("target", help="a domain, or @FILE with one domain per line")
    p.add_argument("--out", default="-")
    _add_map_flags(p)
    p.add_argument("--max-depth", type=int, default=4)
    p.add_argument("--pair-window", type=float, default=60.0, help="seconds")
    p.add_argument("--qps", type=float, default=1.0, help="queries per second per server")
    p.add_argument("--burst", type=int, default=2)
    p.add_argument("--timeout", type=float, default=10.0)
    p.add_argument("--protocol", choices=("both", "whois", "rdap"), default="both")
    p.add_argument("--concurrency", type=int, default=8, help="domains collected in parallel")
    p.add_argument("--contact", default="", help="contact URL or address for the User-Agent")
    p.add_argument("--filter-registered", action="store_true", help="skip domains whose A query is NXDOMAIN")
    p.add_argument("--dns-server", help="root hint as HOST[:PORT] (default: the root servers)")
    p.set_defaults(func=cmd_fetch)

    p = sub.add_parser("audit", help="compare the records of each archived bundle")
    p.add_argument("archive")
    p.add_argument("--out", default="-")
    p.add_argument("--emails-domain-collapse", action="store_true")
    p.add_argument("--exclude-stale", action=argparse.BooleanOptionalAction, default=True)
    p.set_defaults(func=cmd_audit)

    p = sub.add_parser("adjudicate", help="check nameserver mismatches against DNS delegations")
    p.add_argument("mismatches")
    p.add_argument("--out", default="-")
    p.add_argument("--dns-server", help="root hint as HOST[:PORT] (default: the root servers)")
    p.set_defaults(func=cmd_adjudicate)

    p = sub.add_parser("report", help="summarize audit results")
    p.add_argument("results")
    p.add_argument("--format", choices=("json", "csv", "text"), default="text")
    p.add_argument("--out", default="-")
    p.set_defaults(func=cmd_report)

    p = sub.add_parser("serve-mock", help="run the mock servers for a scenario until interrupted")
    p.add_argument("scenario")
    p.add_argument("--connect-map-out")
    p.add_argument("--bootstrap-out")
    p.add_argument("--curated-out")
    p.set_defaults(func=cmd_serve_mock)
    return parser


def main(argv: list[str] | None = None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(
        level=logging.WARNING - 10 * min(args.verbose, 2),
        format="%(levelname)s %(name)s: %(message)s",
        stream=sys.stderr,
    )
    try:
        return args.func(args)
    except RegauditError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_RUNTIME
    except (OSError, ValueError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_RUNTIME


if __name__ == "__main__":
    sys.exit(main())
