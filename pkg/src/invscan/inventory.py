"""Possibly-vulnerable component (PVC) records and inventory files.

An inventory is a JSON document listing the components installed on one
target: operating systems, applications, and hardware. Only the name is
required; everything else is optional metadata that the generation
conventions can exploit. The schema deliberately has no personally
identifiable fields.
"""

from __future__ import annotations

import enum
import hashlib
import json
import logging
from dataclasses import dataclass, fields
from pathlib import Path

log = logging.getLogger(__name__)


class PvcKind(enum.Enum):
    OPERATING_SYSTEM = "os"
    APPLICATION = "app"
    HARDWARE = "hw"


class InventoryError(ValueError):
    """Raised for unreadable or invalid inventory documents."""


@dataclass(frozen=True)
class Pvc:
    """One possibly-vulnerable component."""

    kind: PvcKind
    name: str
    vendor: str | None = None
    version: str | None = None
    edition: str | None = None
    update: str | None = None
    language: str | None = None
    publisher: str | None = None
    display_version: str | None = None
    service_pack: str | None = None
    major: int | None = None
    minor: int | None = None
    build: int | None = None
    revision: int | None = None

    def __post_init__(self) -> None:
        if not self.name:
            raise InventoryError("pvc record requires a non-empty name")
        for part in ("major", "minor", "build", "revision"):
            value = getattr(self, part)
            if value is not None and (not isinstance(value, int) or value < 0):
                raise InventoryError(f"pvc field {part} must be a non-negative integer, got {value!r}")
        # NUL can't appear in any real inventory value, and keeping it out
        # lets the canonical serialization reserve a NUL-prefixed sentinel
        # for absent fields without risking collisions.
        for field_name in ("name",) + _STRING_FIELDS:
            value = getattr(self, field_name)
            if value is not None and "\x00" in value:
                raise InventoryError(f"pvc field {field_name} contains a NUL character")


@dataclass(frozen=True)
class Inventory:
    target_label: str
    pvcs: tuple[Pvc, ...]


_STRING_FIELDS = ("vendor", "version", "edition", "update", "language",
                  "publisher", "display_version", "service_pack")
_INT_FIELDS = ("major", "minor", "build", "revision")
_KNOWN_KEYS = {"kind", "name", *_STRING_FIELDS, *_INT_FIELDS}


def pvc_from_dict(record: dict, where: str = "pvc") -> Pvc:
    if not isinstance(record, dict):
        raise InventoryError(f"{where}: expected an object, got {type(record).__name__}")
    unknown = set(record) - _KNOWN_KEYS
    if unknown:
        log.warning("%s: ignoring unknown fields %s", where, sorted(unknown))
    try:
        kind = PvcKind(record.get("kind"))
    except ValueError:
        raise InventoryError(f"{where}: unknown kind {record.get('kind')!r} "
                             f"(expected one of {[k.value for k in PvcKind]})") from None
    name = record.get("name")
    if not isinstance(name, str) or not name:
        raise InventoryError(f"{where}: missing required non-empty 'name'")
    kwargs: dict = {}
    for key in _STRING_FIELDS:
        if record.get(key) is not None:
            if not isinstance(record[key], str):
                raise InventoryError(f"{where}: field {key} must be a string")
            kwargs[key] = record[key]
    for key in _INT_FIELDS:
        if record.get(key) is not None:
            kwargs[key] = record[key]
    return Pvc(kind=kind, name=name, **kwargs)


def pvc_to_dict(pvc: Pvc) -> dict:
    """Serialize a Pvc as its inventory-record form, omitting absent fields."""
    out: dict = {"kind": pvc.kind.value, "name": pvc.name}
    for field in (*_STRING_FIELDS, *_INT_FIELDS):
        value = getattr(pvc, field)
        if value is not None:
            out[field] = value
    return out


def inventory_from_dict(doc: dict, where: str = "inventory") -> Inventory:
    if not isinstance(doc, dict):
        raise InventoryError(f"{where}: expected a JSON object at top level")
    label = doc.get("target_label", "")
    if not isinstance(label, str):
        raise InventoryError(f"{where}: target_label must be a string")
    records = doc.get("pvcs")
    if not isinstance(records, list):
        raise InventoryError(f"{where}: missing 'pvcs' list")
    pvcs = tuple(pvc_from_dict(rec, where=f"{where}: pvcs[{i}]")
                 for i, rec in enumerate(records))
    return Inventory(target_label=label, pvcs=pvcs)


def inventory_to_dict(inv: Inventory) -> dict:
    return {"target_label": inv.target_label,
            "pvcs": [pvc_to_dict(p) for p in inv.pvcs]}


def load_inventory(path: str | Path) -> Inventory:
    """Load an inventory JSON file, preserving record order."""
    path = Path(path)
    try:
        doc = json.loads(path.read_text(encoding="utf-8"))
    except OSError as exc:
        raise InventoryError(f"cannot read inventory {path}: {exc}") from exc
    except json.JSONDecodeError as exc:
        raise InventoryError(f"inventory {path} is not valid JSON: {exc}") from exc
    return inventory_from_dict(doc, where=str(path))


_ABSENT = "\x00absent"


def canonical_pvc_bytes(pvc: Pvc) -> bytes:
    """Canonical serialization: lowercase keys, every field in declared
    order, absent values as a fixed sentinel, UTF-8. Injective on the
    field set, so it is safe as a cache-key preimage."""
    doc = {}
    for f in fields(Pvc):
        value = getattr(pvc, f.name)
        if value is None:
            value = _ABSENT
        elif isinstance(value, PvcKind):
            value = value.value
        doc[f.name.lower()] = value
    return json.dumps(doc, ensure_ascii=False, separators=(",", ":")).encode("utf-8")


def fingerprint_pvc(pvc: Pvc) -> bytes:
    """256-bit digest of the canonical serialization; the scan-cache key."""
    return hashlib.sha256(canonical_pvc_bytes(pvc)).digest()
