import itertools
import socket
import threading

import dns.message
import dns.rcode
import pytest

from regaudit.dns_oracle import ResolverConfig, VerdictKind, adjudicate, filter_registered, query_ns_at_registry
from regaudit.errors import DnsFailure
from regaudit.testbed import load_scenario, serve

V = VerdictKind


def test_adjudicate_examples():
    assert adjudicate({"a", "b"}, {"a", "b"}, {"c"}).value is V.MATCHES_LEFT
    assert adjudicate({"a"}, {"a"}, {"a"}).value is V.MATCHES_BOTH
    assert adjudicate({"a", "x"}, {"a", "b"}, {"c"}).value is V.PARTIAL
    assert adjudicate({"x"}, {"a"}, {"b"}).value is V.MATCHES_NEITHER
    assert adjudicate({"c", "d"}, {"a", "b"}, {"c", "d"}).value is V.MATCHES_RIGHT


SUBSETS = [frozenset(c) for r in range(1, 4) for c in itertools.combinations("abc", r)]
SWAP = {V.MATCHES_LEFT: V.MATCHES_RIGHT, V.MATCHES_RIGHT: V.MATCHES_LEFT}


def test_adjudicate_total_and_symmetric():
    for d, l, r in itertools.product(SUBSETS, repeat=3):
        v = adjudicate(d, l, r)
        # independent restatement of each verdict's definition
        holds = {
            V.MATCHES_BOTH: d == l == r,
            V.MATCHES_LEFT: d == l and d != r,
            V.MATCHES_RIGHT: d == r and d != l,
            V.PARTIAL: d != l and d != r and bool(d & (l | r)),
            V.MATCHES_NEITHER: d != l and d != r and not d & (l | r),
        }
        assert [k for k, ok in holds.items() if ok] == [v.value]
        assert v.dns_set == d
        swapped = adjudicate(d, r, l).value
        assert swapped is SWAP.get(v.value, v.value)


SCENARIO = {
    "tlds": {"com": {"whois": "whois.verisign-grs.com"}, "test": {"whois": "whois.nic.test"}},
    "domains": {
        "google.com": {"dns": {"ns": [f"NS{i}.GOOGLE.COM." for i in range(1, 5)], "a": ["192.0.2.1"]}},
        "two.test": {"dns": {"ns": ["a.ns.example", "b.ns.example"]}},
        "expired.com": {"dns": None},
        "nodata.test": {"dns": {"ns": [], "a": []}},
    },
}


@pytest.fixture(scope="module")
def bed():
    with serve(load_scenario(SCENARIO)) as b:
        yield b


def test_delegation_ns(bed):
    cfg = bed.resolver_config()
    assert query_ns_at_registry("google.com", cfg) == {f"ns{i}.google.com" for i in range(1, 5)}
    assert query_ns_at_registry("two.test", cfg) == {"a.ns.example", "b.ns.example"}


def test_nxdomain(bed):
    with pytest.raises(DnsFailure) as err:
        query_ns_at_registry("expired.com", bed.resolver_config())
    assert err.value.kind == DnsFailure.NXDOMAIN


def test_nodata(bed):
    with pytest.raises(DnsFailure) as err:
        query_ns_at_registry("nodata.test", bed.resolver_config())
    assert err.value.kind == DnsFailure.NODATA


def test_filter_registered(bed):
    cfg = bed.resolver_config()
    assert filter_registered("google.com", cfg) is True
    assert filter_registered("expired.com", cfg) is False
    assert filter_registered("never-registered.com", cfg) is False
    # NOERROR with no A records still counts as registered
    assert filter_registered("nodata.test", cfg) is True


def test_timeout():
    s = socket.socket(socket.AF_INET, socket.SOCK_DGRAM)
    s.bind(("127.0.0.1", 0))  # bound but never answers
    port = s.getsockname()[1]
    try:
        cfg = ResolverConfig(root_hints=("127.0.0.1",), port=port, timeout=0.2, retries=1)
        with pytest.raises(DnsFailure) as err:
            query_ns_at_registry("google.com", cfg)
        assert err.value.kind == DnsFailure.TIMEOUT
        with pytest.raises(DnsFailure):
            filter_registered("google.com", cfg)
    finally:
        s.close()


def test_servfail():
    s = socket.socket(socket.AF_INET, socket.SOCK_DGRAM)
    s.bind(("127.0.0.1", 0))
    port = s.getsockname()[1]
    stop = threading.Event()

    def answer():
        s.settimeout(0.1)
        while not stop.is_set():
            try:
                data, addr = s.recvfrom(4096)
            except OSError:
                continue
            resp = dns.message.make_response(dns.message.from_wire(data))
            resp.set_rcode(dns.rcode.SERVFAIL)
            s.sendto(resp.to_wire(), addr)

    t = threading.Thread(target=answer, daemon=True)
    t.start()
    try:
        cfg = ResolverConfig(root_hints=("127.0.0.1",), port=port, timeout=0.5, retries=0)
        with pytest.raises(DnsFailure) as err:
            query_ns_at_registry("google.com", cfg)
        assert err.value.kind == DnsFailure.SERVFAIL
    finally:
        stop.set()
        t.join()
        s.close()
