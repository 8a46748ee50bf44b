"""Canonical forms for hostnames and email addresses.

Comparison happens on these forms, so formatting noise (case, trailing
dots, U-labels) never shows up as a mismatch.
"""

from __future__ import annotations

import re

import idna

from .errors import InvalidEmail, InvalidHostname

_LDH_LABEL = re.compile(r"^[a-z0-9_](?:[a-z0-9_-]{0,61}[a-z0-9_])?$")
_WHITESPACE = re.compile(r"\s")


def _to_alabel(label: str) -> str:
    if label.isascii():
        return label.lower()
    try:
        return idna.encode(label, uts46=True).decode("ascii")
    except idna.IDNAError as exc:
        raise InvalidHostname(f"cannot convert label {label!r}: {exc}") from exc


def normalize_fqdn(name: str) -> str:
    """Lowercase A-label form without the trailing root dot."""
    if not isinstance(name, str):
        raise InvalidHostname(f"not a string: {name!r}")
    name = name.strip()
    if _WHITESPACE.search(name):
        raise InvalidHostname(f"whitespace in hostname {name!r}")
    if name.endswith("."):
        name = name[:-1]
    if not name:
        raise InvalidHostname("empty hostname")
    labels = [_to_alabel(label) for label in name.split(".")]
    for label in labels:
        if not _LDH_LABEL.match(label):
            raise InvalidHostname(f"bad label {label!r} in {name!r}")
    out = ".".join(labels)
    if len(out) > 253:
        raise InvalidHostname(f"hostname too long: {name!r}")
    return out


def normalize_email(addr: str) -> str:
    """Lowercase and A-label the domain part; keep the local part as given."""
    if not isinstance(addr, str):
        raise InvalidEmail(f"not a string: {addr!r}")
    addr = addr.strip()
    if addr.count("@") != 1:
        raise InvalidEmail(f"expected exactly one '@': {addr!r}")
    local, domain = addr.split("@")
    if not local or not domain or _WHITESPACE.search(local):
        raise InvalidEmail(f"invalid address {addr!r}")
    try:
        domain = normalize_fqdn(domain)
    except InvalidHostname as exc:
        raise InvalidEmail(f"invalid domain in {addr!r}") from exc
    return f"{local}@{domain}"


def email_domain_part(addr: str) -> str:
    domain = addr.rsplit("@", 1)[-1]
    try:
        return normalize_fqdn(domain)
    except InvalidHostname as exc:
        raise InvalidEmail(f"invalid domain in {addr!r}") from exc
