"""Single WHOIS (RFC 3912) and RDAP (HTTP GET) exchanges with per-host rate limiting."""

from __future__ import annotations

import logging
import socket
import threading
import time
from collections.abc import Callable, Mapping
from dataclasses import dataclass, field
from urllib.parse import urljoin, urlsplit, urlunsplit

import httpx

from . import __version__
from .model import Outcome, Protocol, RawResponse, ServerEndpoint
from .timeutil import utcnow

log = logging.getLogger(__name__)

RDAP_ACCEPT = "application/rdap+json"
MAX_REDIRECTS = 5
WHOIS_PORT = 43
MAX_WHOIS_BYTES = 4 * 1024 * 1024


@dataclass(frozen=True)
class RateLimiterConfig:
    per_host_qps: float = 1.0
    burst: int = 2
    timeout: float = 10.0

    def __post_init__(self):
        if not self.per_host_qps > 0:
            raise ValueError("per_host_qps must be positive")
        if int(self.burst) != self.burst or self.burst < 1:
            raise ValueError("burst must be an integer >= 1")
        if not self.timeout > 0:
            raise ValueError("timeout must be positive")


class RateLimiter:
    """Per-host token buckets.

    A caller that finds the bucket empty reserves the next token (the
    balance goes negative) and sleeps until it is due, so waiting callers
    are served in arrival order without holding the lock while asleep.
    """

    def __init__(
        self,
        config: RateLimiterConfig | None = None,
        clock: Callable[[], float] = time.monotonic,
        sleep: Callable[[float], None] = time.sleep,
    ):
        self.config = config or RateLimiterConfig()
        self._clock = clock
        self._sleep = sleep
        self._lock = threading.Lock()
        self._buckets: dict[str, tuple[float, float]] = {}

    def reserve(self, host: str) -> float:
        """Take a token for ``host``; return how long the caller must wait before using it."""
        rate, burst = self.config.per_host_qps, float(self.config.burst)
        with self._lock:
            now = self._clock()
            tokens, last = self._buckets.get(host, (burst, now))
            tokens = min(burst, tokens + (now - last) * rate)
            tokens -= 1.0
            self._buckets[host] = (tokens, now)
        return 0.0 if tokens >= 0 else -tokens / rate

    def acquire(self, host: str) -> None:
        wait = self.reserve(host.lower())
        if wait > 0:
            self._sleep(wait)


@dataclass(frozen=True)
class TransportConfig:
    timeout: float = 10.0
    per_host_qps: float = 1.0
    burst: int = 2
    contact: str = ""
    # hostname -> (address, port); lets tests point real-looking hosts at local servers
    whois_overrides: Mapping[str, tuple[str, int]] = field(default_factory=dict)
    rdap_overrides: Mapping[str, tuple[str, int]] = field(default_factory=dict)

    def limiter_config(self) -> RateLimiterConfig:
        return RateLimiterConfig(self.per_host_qps, self.burst, self.timeout)


def whois_request_bytes(endpoint: ServerEndpoint, domain: str) -> bytes:
    query = f"{endpoint.query_flags} {domain}" if endpoint.query_flags else domain
    return (query + "\r\n").encode("utf-8")


def decode_whois(body: bytes) -> str:
    try:
        return body.decode("utf-8")
    except UnicodeDecodeError:
        return body.decode("utf-8", errors="replace")


class Transport:
    def __init__(self, config: TransportConfig | None = None, limiter: RateLimiter | None = None):
        self.config = config or TransportConfig()
        self.limiter = limiter or RateLimiter(self.config.limiter_config())
        ua = f"regaudit/{__version__}"
        if self.config.contact:
            ua += f" (+{self.config.contact})"
        self.user_agent = ua
        self._client_lock = threading.Lock()
        self._http: httpx.Client | None = None

    def query(self, endpoint: ServerEndpoint, domain: str) -> RawResponse:
        if endpoint.protocol is Protocol.WHOIS:
            return self.whois_query(endpoint, domain)
        return self.rdap_query(endpoint, domain)

    def whois_query(self, endpoint: ServerEndpoint, domain: str) -> RawResponse:
        if endpoint.protocol is not Protocol.WHOIS:
            raise ValueError("whois_query needs a WHOIS endpoint")
        address = self.config.whois_overrides.get(endpoint.locator, (endpoint.locator, WHOIS_PORT))
        self.limiter.acquire(endpoint.locator)
        fetched_at = utcnow()

        def result(outcome, body=b"", error=""):
            return RawResponse(Protocol.WHOIS, endpoint, body, fetched_at, outcome, None, error)

        timeout = self.config.timeout
        try:
            sock = socket.create_connection(address, timeout=timeout)
        except socket.timeout:
            return result(Outcome.TIMEOUT, error="connect timed out")
        except OSError as exc:
            return result(Outcome.CONNECT_ERROR, error=str(exc))
        chunks: list[bytes] = []
        deadline = time.monotonic() + timeout
        try:
            with sock:
                sock.sendall(whois_request_bytes(endpoint, domain))
                total = 0
                while total < MAX_WHOIS_BYTES:
                    remaining = deadline - time.monotonic()
                    if remaining <= 0:
                        raise socket.timeout("read deadline exceeded")
                    sock.settimeout(remaining)
                    chunk = sock.recv(65536)
                    if not chunk:
                        break
                    chunks.append(chunk)
                    total += len(chunk)
        except socket.timeout:
            return result(Outcome.TIMEOUT, b"".join(chunks), "read timed out")
        except OSError as exc:
            return result(Outcome.CONNECT_ERROR, b"".join(chunks), str(exc))
        body = b"".join(chunks)
        if not body.strip():
            return result(Outcome.MALFORMED, body, "empty response")
        return result(Outcome.OK, body)

    def _client(self) -> httpx.Client:
        with self._client_lock:
            if self._http is None:
                # local test servers must not go through an environment proxy
                self._http = httpx.Client(
                    follow_redirects=False,
                    timeout=self.config.timeout,
                    trust_env=not self.config.rdap_overrides,
                )
            return self._http

    def _route(self, url: str) -> tuple[str, dict[str, str]]:
        parts = urlsplit(url)
        override = self.config.rdap_overrides.get((parts.hostname or "").lower())
        headers = {"Accept": RDAP_ACCEPT, "User-Agent": self.user_agent}
        if override is None:
            return url, headers
        host, port = override
        headers["Host"] = parts.netloc
        return urlunsplit(("http", f"{host}:{port}", parts.path, parts.query, "")), headers

    def rdap_query(self, endpoint: ServerEndpoint, domain: str) -> RawResponse:
        if endpoint.protocol is not Protocol.RDAP:
            raise ValueError("rdap_query needs an RDAP endpoint")
        url = rdap_domain_url(endpoint, domain)
        self.limiter.acquire(endpoint.host)
        fetched_at = utcnow()

        def result(outcome, body=b"", status=None, error=""):
            return RawResponse(Protocol.RDAP, endpoint, body, fetched_at, outcome, status, error)

        client = self._client()
        try:
            for _ in range(MAX_REDIRECTS + 1):
                target, headers = self._route(url)
                resp = client.get(target, headers=headers)
                if resp.is_redirect and "location" in resp.headers:
                    url = urljoin(url, resp.headers["location"])
                    continue
                break
            else:
                return result(Outcome.HTTP_ERROR, resp.content, resp.status_code, "too many redirects")
        except httpx.TimeoutException as exc:
            return result(Outcome.TIMEOUT, error=str(exc) or "timed out")
        except (httpx.RemoteProtocolError, httpx.DecodingError) as exc:
            return result(Outcome.MALFORMED, error=str(exc))
        except httpx.HTTPError as exc:
            return result(Outcome.CONNECT_ERROR, error=str(exc))
        if resp.status_code == 200:
            return result(Outcome.OK, resp.content, 200)
        return result(Outcome.HTTP_ERROR, resp.content, resp.status_code, f"HTTP {resp.status_code}")

    def close(self):
        with self._client_lock:
            if self._http is not None:
                self._http.close()
                self._http = None

    def __enter__(self):
        return self

    def __exit__(self, *exc):
        self.close()


def rdap_domain_url(endpoint: ServerEndpoint, domain: str) -> str:
    return f"{endpoint.locator}domain/{domain}"
