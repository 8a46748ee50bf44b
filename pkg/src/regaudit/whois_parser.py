"""Template-driven WHOIS field extraction with a generic ``Key: Value`` fallback.

A template lists, per field, regular expressions whose first capture group
(or the named group ``value``) yields candidate values, plus key aliases
used by the generic scanner for fields the expressions did not produce.
Templates live in YAML files, one per template; see ``data/templates``.
"""

from __future__ import annotations

import fnmatch
import functools
import logging
import re
from collections.abc import Iterable, Sequence
from dataclasses import dataclass, field
from datetime import datetime, timedelta, timezone
from importlib import resources
from pathlib import Path

import yaml

from .errors import InvalidEmail, InvalidHostname
from .model import Field, Missing, MissingReason, ParsedFields
from .normalize import normalize_email, normalize_fqdn
from .timeutil import EPOCH, parse_rfc3339

log = logging.getLogger(__name__)

DEFAULT_DATE_FORMATS = ("rfc3339", "ymd", "dmy_mon", "ymd_dot_hms", "dmy_slash", "epoch")
DEFAULT_REDACTION_MARKERS = ("REDACTED FOR PRIVACY", "REDACTED", "DATA PROTECTED", "NOT DISCLOSED")
DEFAULT_REFERRAL_KEYS = ("Registrar WHOIS Server",)

EMAIL_RE = re.compile(
    r"[A-Za-z0-9!#$%&'*+/=?^_`{|}~-]+(?:\.[A-Za-z0-9!#$%&'*+/=?^_`{|}~-]+)*"
    r"@(?:[A-Za-z0-9](?:[A-Za-z0-9-]*[A-Za-z0-9])?\.)+[A-Za-z0-9](?:[A-Za-z0-9-]*[A-Za-z0-9])?"
)
_KV_LINE = re.compile(r"^(?P<indent>[ \t]*)(?P<key>[^:\r\n]{1,80}?)[ \t.]*:[ \t]*(?P<value>.*?)[ \t]*$")


@dataclass(frozen=True)
class WhoisTemplate:
    id: str
    server_match: tuple[str, ...]
    field_rules: dict[Field, tuple[re.Pattern, ...]] = field(default_factory=dict)
    key_aliases: dict[Field, tuple[str, ...]] = field(default_factory=dict)
    date_formats: tuple[str, ...] = DEFAULT_DATE_FORMATS
    referral_keys: tuple[str, ...] = DEFAULT_REFERRAL_KEYS

    def __post_init__(self):
        if not self.server_match:
            raise ValueError(f"template {self.id!r}: needs at least one server_match pattern")
        for f in list(self.field_rules) + list(self.key_aliases):
            if not isinstance(f, Field):
                raise ValueError(f"template {self.id!r}: unknown field {f!r}")

    @property
    def is_fallback(self) -> bool:
        return "*" in self.server_match

    def __hash__(self):
        return hash(self.id)

    @classmethod
    def from_dict(cls, doc: dict) -> "WhoisTemplate":
        known = {"id", "server_match", "field_rules", "key_aliases", "date_formats", "referral_keys"}
        unknown = set(doc) - known
        if unknown:
            raise ValueError(f"template {doc.get('id')!r}: unknown keys {sorted(unknown)}")

        def field_of(name):
            try:
                return Field(name)
            except ValueError:
                raise ValueError(f"template {doc.get('id')!r}: unknown field {name!r}") from None

        rules = {
            field_of(name): tuple(re.compile(p, re.MULTILINE) for p in _as_list(patterns))
            for name, patterns in (doc.get("field_rules") or {}).items()
        }
        aliases = {field_of(name): tuple(_as_list(keys)) for name, keys in (doc.get("key_aliases") or {}).items()}
        return cls(
            id=str(doc["id"]),
            server_match=tuple(s.lower() for s in _as_list(doc.get("server_match"))),
            field_rules=rules,
            key_aliases=aliases,
            date_formats=tuple(doc.get("date_formats") or DEFAULT_DATE_FORMATS),
            referral_keys=tuple(doc["referral_keys"] if "referral_keys" in doc else DEFAULT_REFERRAL_KEYS),
        )


def _as_list(value) -> list:
    if value is None:
        return []
    return [value] if isinstance(value, str) else list(value)


class TemplateSet(tuple):
    """Templates ordered by id, with exactly one catch-all among them."""

    def __new__(cls, templates: Iterable[WhoisTemplate]):
        ordered = sorted(templates, key=lambda t: t.id)
        ids = [t.id for t in ordered]
        if len(set(ids)) != len(ids):
            raise ValueError("duplicate template ids")
        if not any(t.is_fallback for t in ordered):
            raise ValueError("template set needs a catch-all ('*') template")
        return super().__new__(cls, ordered)

    @property
    def fallback(self) -> WhoisTemplate:
        return next(t for t in self if t.is_fallback)


def load_templates(directory: str | Path | None = None) -> TemplateSet:
    """Load every ``*.yaml`` template in ``directory`` (default: the shipped set).

    Templates inherit the catch-all template's key aliases after their own,
    so a registry template only needs to spell out what is special about it.
    """
    if directory is None:
        root = resources.files("regaudit") / "data" / "templates"
        docs = [yaml.safe_load(p.read_text("utf-8")) for p in root.iterdir() if p.name.endswith(".yaml")]
    else:
        docs = [yaml.safe_load(p.read_text("utf-8")) for p in sorted(Path(directory).glob("*.yaml"))]
    raw = [WhoisTemplate.from_dict(d) for d in docs]
    fallback = TemplateSet(raw).fallback
    merged = []
    for t in raw:
        if t is not fallback:
            aliases = dict(t.key_aliases)
            for f, keys in fallback.key_aliases.items():
                aliases[f] = tuple(dict.fromkeys(aliases.get(f, ()) + keys))
            t = WhoisTemplate(t.id, t.server_match, t.field_rules, aliases, t.date_formats, t.referral_keys)
        merged.append(t)
    return TemplateSet(merged)


_DEFAULT_TEMPLATES: TemplateSet | None = None


def default_templates() -> TemplateSet:
    global _DEFAULT_TEMPLATES
    if _DEFAULT_TEMPLATES is None:
        _DEFAULT_TEMPLATES = load_templates()
    return _DEFAULT_TEMPLATES


def _specificity(pattern: str, host: str) -> tuple[int, int] | None:
    if pattern == "*":
        return (0, 0)
    if pattern.startswith("*."):
        suffix = pattern[1:]
        return (1, len(suffix)) if host.endswith(suffix) else None
    return (2, len(pattern)) if host == pattern else None


def select_template(server: str, templates: Sequence[WhoisTemplate]) -> WhoisTemplate:
    host = server.lower().rstrip(".")
    best: tuple[tuple[int, int], str] | None = None
    chosen = None
    for t in templates:
        scores = [s for s in (_specificity(p, host) for p in t.server_match) if s is not None]
        if not scores:
            continue
        key = (max(scores), t.id)
        # higher specificity wins, then the lexically smallest id
        if best is None or key[0] > best[0] or (key[0] == best[0] and key[1] < best[1]):
            best, chosen = key, t
    if chosen is None:
        raise ValueError("template set has no catch-all template")
    return chosen


# -- dates -------------------------------------------------------------------

_NAMED_FORMATS = {
    "ymd": (re.compile(r"^\d{4}-\d{2}-\d{2}$"), "%Y-%m-%d"),
    "dmy_mon": (re.compile(r"^\d{1,2}-[A-Za-z]{3}-\d{4}$"), "%d-%b-%Y"),
    "ymd_dot_hms": (re.compile(r"^\d{4}\.\d{2}\.\d{2} \d{2}:\d{2}:\d{2}$"), "%Y.%m.%d %H:%M:%S"),
    "dmy_slash": (re.compile(r"^\d{1,2}/\d{1,2}/\d{4}$"), "%d/%m/%Y"),
}
_EPOCH_RE = re.compile(r"^\d+(?:\.\d+)?$")


def _parse_one(value: str, fmt: str) -> datetime | None:
    if fmt == "rfc3339":
        return parse_rfc3339(value)
    if fmt == "epoch":
        if not _EPOCH_RE.match(value):
            return None
        try:
            return EPOCH + timedelta(seconds=float(value))
        except OverflowError:
            return None
    if fmt in _NAMED_FORMATS:
        shape, pattern = _NAMED_FORMATS[fmt]
        if not shape.match(value):
            return None
    elif "%" in fmt:
        pattern = fmt
    else:
        raise ValueError(f"unknown date format {fmt!r}")
    try:
        dt = datetime.strptime(value, pattern)
    except ValueError:
        return None
    if dt.tzinfo is None:
        return dt.replace(tzinfo=timezone.utc)
    return dt.astimezone(timezone.utc)


def parse_whois_date(value: str, formats: Sequence[str] = DEFAULT_DATE_FORMATS) -> datetime | None:
    """First format that parses wins; date-only and zoneless values are UTC."""
    value = value.strip()
    if not value:
        return None
    for fmt in formats:
        dt = _parse_one(value, fmt)
        if dt is not None:
            return dt
    return None


# -- scanning ----------------------------------------------------------------


def _norm_key(key: str) -> str:
    return " ".join(key.strip().lower().split())


def scan_key_values(text: str) -> list[tuple[str, str]]:
    """``Key: Value`` pairs in document order.

    A key with an empty value also collects the more-indented lines that
    follow it (the block layout some registries use for name servers).
    """
    lines = text.splitlines()
    pairs: list[tuple[str, str]] = []
    for i, line in enumerate(lines):
        m = _KV_LINE.match(line)
        if not m or m.group("key").strip().startswith(("%", "#", ">>>")):
            continue
        key, value = _norm_key(m.group("key")), m.group("value")
        if not key:
            continue
        if value:
            pairs.append((key, value))
            continue
        indent = len(m.group("indent").expandtabs())
        for follow in lines[i + 1:]:
            if not follow.strip():
                break
            if len(follow) - len(follow.lstrip()) <= indent:
                break
            pairs.append((key, follow.strip()))
    return pairs


@functools.lru_cache(maxsize=1024)
def _alias_matcher(alias: str):
    alias = _norm_key(alias)
    if any(c in alias for c in "*?["):
        return re.compile(fnmatch.translate(alias)).match
    return alias.__eq__


def alias_values(pairs: Sequence[tuple[str, str]], aliases: Sequence[str]) -> list[str]:
    out = []
    for alias in aliases:
        matches = _alias_matcher(alias)
        out.extend(v for k, v in pairs if matches(k))
    return out


def rule_values(text: str, patterns: Sequence[re.Pattern]) -> list[str]:
    out = []
    for pattern in patterns:
        for m in pattern.finditer(text):
            if "value" in pattern.groupindex:
                value = m.group("value")
            elif pattern.groups:
                value = m.group(1)
            else:
                value = m.group(0)
            if value is not None:
                out.append(value.strip())
    return out


def select_block(text: str, domain: str | None) -> str:
    """For multi-record answers, keep only the block describing ``domain``."""
    if not domain:
        return text
    lines = text.splitlines(keepends=True)
    starts = []
    for i, line in enumerate(lines):
        m = _KV_LINE.match(line.rstrip("\r\n"))
        if m and _norm_key(m.group("key")) == "domain name":
            starts.append((i, m.group("value").strip().lower().rstrip(".")))
    if len(starts) < 2:
        return text
    for n, (i, name) in enumerate(starts):
        if name == domain.lower():
            end = starts[n + 1][0] if n + 1 < len(starts) else len(lines)
            return "".join(lines[i:end])
    return text


# -- conversion --------------------------------------------------------------


def _is_redacted(value: str, markers: Sequence[str]) -> bool:
    upper = value.upper()
    return any(m.upper() in upper for m in markers)


def _convert(f: Field, candidates: list[str], formats, markers):
    """Candidate strings -> field value or Missing."""
    if not candidates:
        return Missing(MissingReason.ABSENT)
    redacted = pre_epoch = False
    if f.is_set:
        items = []
        for raw in candidates:
            if _is_redacted(raw, markers):
                redacted = True
                continue
            if f is Field.NAMESERVERS:
                token = raw.split()[0] if raw.split() else ""
                try:
                    items.append(normalize_fqdn(token))
                except InvalidHostname:
                    pass
            else:
                for addr in EMAIL_RE.findall(raw):
                    try:
                        items.append(normalize_email(addr))
                    except InvalidEmail:
                        pass
        if items:
            return frozenset(items)
    else:
        for raw in candidates:
            if _is_redacted(raw, markers):
                redacted = True
                continue
            if f is Field.IANA_ID:
                if raw.isascii() and raw.isdigit():
                    return int(raw)
            elif f is Field.REGISTRAR:
                name = " ".join(raw.split())
                if name:
                    return name
            else:
                dt = parse_whois_date(raw, formats)
                if dt is None:
                    continue
                if dt <= EPOCH:
                    pre_epoch = True
                    continue
                return dt
    if pre_epoch:
        return Missing(MissingReason.PRE_EPOCH)
    if redacted:
        return Missing(MissingReason.REDACTED)
    return Missing(MissingReason.UNPARSABLE)


def parse_whois(
    raw: str,
    template: WhoisTemplate,
    domain: str | None = None,
    redaction_markers: Sequence[str] = DEFAULT_REDACTION_MARKERS,
) -> ParsedFields:
    text = select_block(raw, domain)
    pairs = scan_key_values(text)
    values = {}
    for f in Field:
        from_rules = _convert(f, rule_values(text, template.field_rules.get(f, ())), template.date_formats, redaction_markers)
        from_keys = _convert(f, alias_values(pairs, template.key_aliases.get(f, ())), template.date_formats, redaction_markers)
        if isinstance(from_rules, Missing):
            # keep the rule's diagnosis when it saw something and the scanner found nothing better
            if isinstance(from_keys, Missing) and from_rules.reason is not MissingReason.ABSENT:
                values[f.value] = from_rules
            else:
                values[f.value] = from_keys
        else:
            if not isinstance(from_keys, Missing) and from_keys != from_rules:
                log.debug("template %s and key scan disagree on %s: %r vs %r", template.id, f.value, from_rules, from_keys)
            values[f.value] = from_rules
    return ParsedFields(**values)


def whois_referral_value(raw: str, template: WhoisTemplate, domain: str | None = None) -> str | None:
    """Raw value of the first referral key in the record, or None when absent or empty."""
    pairs = scan_key_values(select_block(raw, domain))
    for value in alias_values(pairs, template.referral_keys):
        if value.strip():
            return value.strip()
    return None
