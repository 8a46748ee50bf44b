"""Exception hierarchy shared by every module."""

from __future__ import annotations


class RegauditError(Exception):
    pass


class InvalidDomainName(RegauditError, ValueError):
    pass


class InvalidHostname(RegauditError, ValueError):
    pass


class InvalidEmail(RegauditError, ValueError):
    pass


class MalformedBootstrap(RegauditError, ValueError):
    pass


class MalformedLine(RegauditError, ValueError):
    def __init__(self, lineno: int, line: str, why: str = "malformed line"):
        super().__init__(f"line {lineno}: {why}: {line!r}")
        self.lineno = lineno
        self.line = line


class NoKnownServer(RegauditError):
    def __init__(self, domain: str):
        super().__init__(f"no WHOIS or RDAP server known for {domain}")
        self.domain = domain


class MalformedReferral(RegauditError, ValueError):
    pass


class SinkError(RegauditError, OSError):
    pass


class NotJson(RegauditError, ValueError):
    pass


class NotDomainObject(RegauditError, ValueError):
    pass


class EmptySet(RegauditError, ValueError):
    pass


class UnsupportedFormat(RegauditError, ValueError):
    pass


class DnsFailure(RegauditError):
    """Raised by the DNS oracle; ``kind`` is one of NXDOMAIN, NODATA, TIMEOUT, SERVFAIL."""

    NXDOMAIN = "nxdomain"
    NODATA = "nodata"
    TIMEOUT = "timeout"
    SERVFAIL = "servfail"

    def __init__(self, kind: str, detail: str = ""):
        super().__init__(f"{kind}: {detail}" if detail else kind)
        self.kind = kind
        self.detail = detail


class SchemaError(RegauditError, ValueError):
    pass


class DanglingReferral(RegauditError, ValueError):
    pass


class BindError(RegauditError, OSError):
    pass
