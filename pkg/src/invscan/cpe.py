"""CPE 2.2 URI names: parsing, formatting, normalization, and matching.

A name looks like ``cpe:/o:microsoft:windows_xp:5.1.2600:sp3``. The part
letter ('o' = operating system, 'a' = application, 'h' = hardware) is
followed by up to six components: vendor, product, version, update,
edition, language. A missing (or empty) component is unspecified and
matches anything.
"""

from __future__ import annotations

import logging
import re
from dataclasses import dataclass

log = logging.getLogger(__name__)

PARTS = ("o", "a", "h")

_WHITESPACE_RE = re.compile(r"\s+")


class CpeError(ValueError):
    """Raised for malformed CPE URIs or invalid component values."""


def normalize_component(value: str | None) -> str | None:
    """Normalize a raw component value into its canonical token.

    Lowercases, replaces internal whitespace runs with underscores, and
    strips ':' (the URI separator, which can never appear inside a
    component). An empty or None value normalizes to None (unspecified).
    Idempotent.
    """
    if value is None:
        return None
    value = _WHITESPACE_RE.sub("_", value.strip().lower()).replace(":", "")
    return value or None


@dataclass(frozen=True)
class CpeName:
    """A structured CPE 2.2 name. Component value None means unspecified."""

    part: str
    vendor: str | None = None
    product: str | None = None
    version: str | None = None
    update: str | None = None
    edition: str | None = None
    language: str | None = None

    def __post_init__(self) -> None:
        if self.part not in PARTS:
            raise CpeError(f"invalid part {self.part!r}: must be one of {PARTS}")
        for field in _COMPONENT_FIELDS:
            value = getattr(self, field)
            if value is None:
                continue
            if ":" in value or _WHITESPACE_RE.search(value):
                raise CpeError(f"component {field}={value!r} not normalized")

    def components(self) -> tuple[str | None, ...]:
        return (self.vendor, self.product, self.version,
                self.update, self.edition, self.language)

    def uri(self) -> str:
        return format_cpe_uri(self)


_COMPONENT_FIELDS = ("vendor", "product", "version", "update", "edition", "language")


def parse_cpe_uri(text: str) -> CpeName:
    """Parse a CPE 2.2 URI string into a CpeName.

    Trailing components may be omitted; empty components are unspecified.
    Raises CpeError naming the offending segment on malformed input.
    """
    if not text.startswith("cpe:/"):
        raise CpeError(f"not a CPE 2.2 URI (expected 'cpe:/' prefix): {text!r}")
    segments = text[len("cpe:/"):].split(":")
    part = segments[0].strip().lower()
    if part not in PARTS:
        raise CpeError(f"invalid part segment {segments[0]!r} in {text!r}")
    if len(segments) > 7:
        raise CpeError(
            f"too many components ({len(segments) - 1} > 6), "
            f"starting at segment {segments[7]!r} in {text!r}"
        )
    values: dict[str, str | None] = {}
    for field, raw in zip(_COMPONENT_FIELDS, segments[1:]):
        values[field] = normalize_component(raw)
    return CpeName(part=part, **values)


def format_cpe_uri(name: CpeName) -> str:
    """Format a CpeName as its shortest CPE 2.2 URI.

    Trailing unspecified components are truncated; interior ones are kept
    as empty segments so parse(format(n)) == n.
    """
    components = list(name.components())
    while components and components[-1] is None:
        components.pop()
    tail = "".join(":" + (c if c is not None else "") for c in components)
    return f"cpe:/{name.part}{tail}"


def cpe_matches(generated: CpeName, applicability: CpeName) -> bool:
    """True when the two names are compatible.

    Parts must be equal; each of the six components matches when either
    side is unspecified or the values are equal. Symmetric.
    """
    if generated.part != applicability.part:
        return False
    for a, b in zip(generated.components(), applicability.components()):
        if a is not None and b is not None and a != b:
            return False
    log.debug("cpe match: %s ~ %s", format_cpe_uri(generated), format_cpe_uri(applicability))
    return True
