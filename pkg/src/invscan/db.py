"""Vulnerability database: feed ingestion, persistence, matching, caching.

Backed by a single sqlite file. Readers work against an immutable
per-generation snapshot (records, match index, generation index); every
successful update transaction bumps the generation counter and rebuilds
the snapshot, which also invalidates all cached per-component results.
"""

from __future__ import annotations

import datetime
import json
import logging
import re
import sqlite3
import threading
from dataclasses import dataclass, field

from .cpe import (CpeError, CpeName, cpe_matches, format_cpe_uri,
                  normalize_component, parse_cpe_uri)
from .generation import GenerationIndex, build_index_from_names

log = logging.getLogger(__name__)

CVE_ID_RE = re.compile(r"CVE-\d{4}-\d{4,}")

_SCHEMA = """
CREATE TABLE IF NOT EXISTS meta (
    key TEXT PRIMARY KEY,
    value TEXT NOT NULL
);
CREATE TABLE IF NOT EXISTS cve (
    id TEXT PRIMARY KEY,
    description TEXT NOT NULL DEFAULT '',
    published TEXT,
    cvss TEXT NOT NULL DEFAULT '[]'
);
CREATE TABLE IF NOT EXISTS cve_cpe (
    cve_id TEXT NOT NULL,
    uri TEXT NOT NULL,
    UNIQUE (cve_id, uri)
);
CREATE TABLE IF NOT EXISTS cpe_dict (
    uri TEXT PRIMARY KEY
);
CREATE TABLE IF NOT EXISTS exploit_link (
    exploit_id TEXT NOT NULL,
    cve_id TEXT NOT NULL,
    UNIQUE (exploit_id, cve_id)
);
CREATE TABLE IF NOT EXISTS cache (
    fingerprint TEXT PRIMARY KEY,
    generation INTEGER NOT NULL,
    cve_ids TEXT NOT NULL,
    cpes TEXT NOT NULL
);
"""


class DbError(Exception):
    """Raised for database misuse (bad feed file, stale cache writes)."""


class StaleGenerationError(DbError):
    """A cache write raced a database update; the caller should skip it."""


@dataclass(frozen=True)
class CveRecord:
    """One vulnerability: identity, scores, applicable CPE names."""

    id: str
    description: str = ""
    cvss_scores: frozenset[tuple[str, float]] = frozenset()
    applicability: frozenset[CpeName] = frozenset()
    exploit_available: bool = False
    published: datetime.date | None = None

    def __post_init__(self) -> None:
        if not CVE_ID_RE.fullmatch(self.id):
            raise DbError(f"malformed CVE id: {self.id!r}")

    def max_cvss(self) -> float | None:
        return max((score for _, score in self.cvss_scores), default=None)


@dataclass(frozen=True)
class PvcCacheEntry:
    """Cached scan outcome for one component fingerprint.

    Valid only while its generation equals the current database
    generation.
    """

    fingerprint: bytes
    generation: int
    cve_ids: frozenset[str]
    generated_cpes: frozenset[CpeName]


# Index key for names whose vendor or product is unspecified; those must
# be checked against every query name.
_WILDCARD = ("*", "*")


@dataclass(frozen=True)
class DbSnapshot:
    """Immutable view of one database generation.

    match_index maps (vendor, product) to the applicability pairs that can
    only match names carrying those exact values; pairs with an
    unspecified vendor or product live in the wildcard bucket and are
    checked against everything. Lookup through the index is equivalent to
    the brute-force all-pairs scan.
    """

    generation: int
    records: dict[str, CveRecord]
    match_index: dict[tuple[str, str], tuple[tuple[str, CpeName], ...]] = field(default_factory=dict)
    gen_index: GenerationIndex = field(default_factory=GenerationIndex)

    def match_cpes_to_cves(self, cpes) -> set[str]:
        """Ids of every record with an applicability name matching any
        of the given names."""
        found: set[str] = set()
        wildcard = self.match_index.get(_WILDCARD, ())
        for query in cpes:
            buckets = [wildcard]
            if query.vendor is not None and query.product is not None:
                buckets.append(self.match_index.get((query.vendor, query.product), ()))
            else:
                # An unspecified field on the query side can match any
                # indexed value, so fall back to every bucket.
                buckets.extend(self.match_index.values())
            for bucket in buckets:
                for cve_id, applicability in bucket:
                    if cve_id not in found and cpe_matches(query, applicability):
                        found.add(cve_id)
        return found


def _walk_nodes(nodes):
    for node in nodes:
        if not isinstance(node, dict):
            continue
        for entry in node.get("cpe_match", []):
            if isinstance(entry, dict):
                yield entry
        yield from _walk_nodes(node.get("children", []))


def cpe23_to_22(uri: str) -> CpeName:
    """Downconvert a CPE 2.3 formatted string to a 2.2 name.

    Splits on unescaped colons; '*' (ANY) maps to unspecified, other
    values keep their normalized form. Only the first seven logical
    components survive, which is all the 2.2 form can carry.
    """
    raw = re.split(r"(?<!\\):", uri)
    if len(raw) < 5 or raw[0] != "cpe" or raw[1] != "2.3":
        raise CpeError(f"not a CPE 2.3 formatted string: {uri!r}")
    fields_23 = raw[2:9]
    values = []
    for value in fields_23:
        value = value.replace("\\", "")
        values.append(None if value in ("*", "") else value)
    part = values[0]
    if part not in ("a", "o", "h"):
        raise CpeError(f"unsupported part {part!r} in {uri!r}")
    padded = values[1:] + [None] * (6 - len(values[1:]))
    return CpeName(
        part=part,
        vendor=normalize_component(padded[0]),
        product=normalize_component(padded[1]),
        version=normalize_component(padded[2]),
        update=normalize_component(padded[3]),
        edition=normalize_component(padded[4]),
        language=normalize_component(padded[5]),
    )


def parse_applicability_uri(entry: dict) -> CpeName | None:
    """Parse one cpe_match entry from a feed; None when unusable."""
    uri = entry.get("cpe22Uri") or entry.get("cpe23Uri")
    if not uri:
        return None
    try:
        if uri.startswith("cpe:/"):
            return parse_cpe_uri(uri)
        return cpe23_to_22(uri)
    except CpeError as exc:
        log.warning("skipping unparseable applicability URI %r: %s", uri, exc)
        return None


def _extract_cvss(impact: dict) -> list[tuple[str, float]]:
    scores: list[tuple[str, float]] = []
    metric_v3 = impact.get("baseMetricV3", {})
    cvss_v3 = metric_v3.get("cvssV3", {})
    if "baseScore" in cvss_v3:
        scores.append((str(cvss_v3.get("version", "3.0")), float(cvss_v3["baseScore"])))
    metric_v2 = impact.get("baseMetricV2", {})
    cvss_v2 = metric_v2.get("cvssV2", {})
    if "baseScore" in cvss_v2:
        scores.append((str(cvss_v2.get("version", "2.0")), float(cvss_v2["baseScore"])))
    return scores


def _extract_description(cve_obj: dict) -> str:
    data = cve_obj.get("description", {}).get("description_data", [])
    for item in data:
        if isinstance(item, dict) and item.get("value"):
            return str(item["value"])
    return ""


def _parse_published(item: dict) -> str | None:
    raw = item.get("publishedDate")
    if not isinstance(raw, str) or len(raw) < 10:
        return None
    try:
        datetime.date.fromisoformat(raw[:10])
    except ValueError:
        return None
    return raw[:10]


class VulnDatabase:
    """Single-file store plus the per-generation in-memory snapshot.

    All mutating operations take the instance lock; readers use the
    immutable snapshot and never block each other.
    """

    def __init__(self, path: str = ":memory:") -> None:
        self._lock = threading.RLock()
        self._conn = sqlite3.connect(path, check_same_thread=False)
        self._conn.execute("PRAGMA foreign_keys = ON")
        with self._conn:
            self._conn.executescript(_SCHEMA)
            self._conn.execute(
                "INSERT OR IGNORE INTO meta (key, value) VALUES ('generation', '0')"
            )
        self._snapshot = self._build_snapshot()

    def close(self) -> None:
        with self._lock:
            self._conn.close()

    # -- generation / snapshot ------------------------------------------

    @property
    def generation(self) -> int:
        return self._snapshot.generation

    def snapshot(self) -> DbSnapshot:
        return self._snapshot

    def _read_generation(self) -> int:
        row = self._conn.execute(
            "SELECT value FROM meta WHERE key = 'generation'"
        ).fetchone()
        return int(row[0]) if row else 0

    def _build_snapshot(self) -> DbSnapshot:
        generation = self._read_generation()
        exploited = {
            row[0] for row in self._conn.execute(
                "SELECT DISTINCT e.cve_id FROM exploit_link e JOIN cve c ON c.id = e.cve_id"
            )
        }
        applicability: dict[str, set[CpeName]] = {}
        for cve_id, uri in self._conn.execute("SELECT cve_id, uri FROM cve_cpe"):
            try:
                applicability.setdefault(cve_id, set()).add(parse_cpe_uri(uri))
            except CpeError:
                log.warning("dropping stored unparseable URI %r for %s", uri, cve_id)
        records: dict[str, CveRecord] = {}
        for cve_id, description, published, cvss_json in self._conn.execute(
            "SELECT id, description, published, cvss FROM cve"
        ):
            scores = frozenset(
                (str(tag), float(score)) for tag, score in json.loads(cvss_json)
            )
            pub = datetime.date.fromisoformat(published) if published else None
            records[cve_id] = CveRecord(
                id=cve_id,
                description=description,
                cvss_scores=scores,
                applicability=frozenset(applicability.get(cve_id, set())),
                exploit_available=cve_id in exploited,
                published=pub,
            )
        index: dict[tuple[str, str], list[tuple[str, CpeName]]] = {}
        for record in records.values():
            for name in record.applicability:
                if name.vendor is None or name.product is None:
                    key = _WILDCARD
                else:
                    key = (name.vendor, name.product)
                index.setdefault(key, []).append((record.id, name))
        dict_names = []
        for (uri,) in self._conn.execute("SELECT uri FROM cpe_dict"):
            try:
                dict_names.append(parse_cpe_uri(uri))
            except CpeError:
                log.warning("dropping stored unparseable dictionary URI %r", uri)
        return DbSnapshot(
            generation=generation,
            records=records,
            match_index={k: tuple(v) for k, v in index.items()},
            gen_index=build_index_from_names(dict_names),
        )

    # -- ingestion -------------------------------------------------------

    def _ingest_nvd_feed_locked(self, path: str) -> int:
        with open(path, "r", encoding="utf-8") as fh:
            feed = json.load(fh)
        items = feed.get("CVE_Items", [])
        upserted = 0
        for position, item in enumerate(items):
            if not isinstance(item, dict):
                log.warning("feed %s item %d is not an object; skipped", path, position)
                continue
            cve_obj = item.get("cve", {})
            cve_id = cve_obj.get("CVE_data_meta", {}).get("ID")
            if not cve_id or not CVE_ID_RE.fullmatch(str(cve_id)):
                log.warning("feed %s item %d lacks a usable CVE id; skipped", path, position)
                continue
            cve_id = str(cve_id)
            description = _extract_description(cve_obj)
            scores = _extract_cvss(item.get("impact", {}))
            published = _parse_published(item)
            names: set[str] = set()
            for entry in _walk_nodes(item.get("configurations", {}).get("nodes", [])):
                if entry.get("vulnerable") is False:
                    continue
                name = parse_applicability_uri(entry)
                if name is not None:
                    names.add(format_cpe_uri(name))
            self._conn.execute(
                "INSERT INTO cve (id, description, published, cvss) VALUES (?,?,?,?) "
                "ON CONFLICT(id) DO UPDATE SET description=excluded.description, "
                "published=excluded.published, cvss=excluded.cvss",
                (cve_id, description, published, json.dumps(sorted(scores))),
            )
            self._conn.execute("DELETE FROM cve_cpe WHERE cve_id = ?", (cve_id,))
            self._conn.executemany(
                "INSERT OR IGNORE INTO cve_cpe (cve_id, uri) VALUES (?,?)",
                [(cve_id, uri) for uri in sorted(names)],
            )
            upserted += 1
        return upserted

    def _ingest_cpe_dictionary_locked(self, path: str) -> int:
        count = 0
        with open(path, "r", encoding="utf-8") as fh:
            for lineno, line in enumerate(fh, start=1):
                line = line.strip()
                if not line or line.startswith("#"):
                    continue
                try:
                    name = parse_cpe_uri(line)
                except CpeError as exc:
                    log.warning("%s:%d skipping malformed URI: %s", path, lineno, exc)
                    continue
                self._conn.execute(
                    "INSERT OR IGNORE INTO cpe_dict (uri) VALUES (?)",
                    (format_cpe_uri(name),),
                )
                count += 1
        return count

    def _ingest_exploit_map_locked(self, path: str) -> int:
        count = 0
        with open(path, "r", encoding="utf-8") as fh:
            for lineno, line in enumerate(fh, start=1):
                line = line.strip()
                if not line or line.startswith("#"):
                    continue
                parts = [p.strip() for p in line.split(",")]
                if len(parts) != 2 or not parts[0] or not CVE_ID_RE.fullmatch(parts[1]):
                    if parts in (["exploit_id", "cve_id"],):
                        continue
                    log.warning("%s:%d skipping malformed exploit link %r", path, lineno, line)
                    continue
                self._conn.execute(
                    "INSERT OR IGNORE INTO exploit_link (exploit_id, cve_id) VALUES (?,?)",
                    (parts[0], parts[1]),
                )
                count += 1
        return count

    def ingest_nvd_feed(self, path: str) -> int:
        """Upsert every CVE item in one feed file. Does not bump the
        generation; use update_sources for an atomic update."""
        with self._lock, self._conn:
            count = self._ingest_nvd_feed_locked(path)
        with self._lock:
            self._snapshot = self._build_snapshot()
        return count

    def ingest_cpe_dictionary(self, path: str) -> int:
        with self._lock, self._conn:
            count = self._ingest_cpe_dictionary_locked(path)
        with self._lock:
            self._snapshot = self._build_snapshot()
        return count

    def ingest_exploit_map(self, path: str) -> int:
        with self._lock, self._conn:
            count = self._ingest_exploit_map_locked(path)
        with self._lock:
            self._snapshot = self._build_snapshot()
        return count

    def update_sources(self, feed_paths=(), dictionary_paths=(), exploit_paths=()) -> int:
        """Ingest all sources and bump the generation in one transaction.

        Any failure rolls the whole update back: the previous generation,
        data, and cache validity are untouched. Returns the new generation.
        """
        with self._lock:
            try:
                with self._conn:
                    for path in feed_paths:
                        self._ingest_nvd_feed_locked(path)
                    for path in dictionary_paths:
                        self._ingest_cpe_dictionary_locked(path)
                    for path in exploit_paths:
                        self._ingest_exploit_map_locked(path)
                    new_generation = self._read_generation() + 1
                    self._conn.execute(
                        "UPDATE meta SET value = ? WHERE key = 'generation'",
                        (str(new_generation),),
                    )
            except Exception:
                log.exception("update failed; generation unchanged")
                raise
            self._snapshot = self._build_snapshot()
            return new_generation

    def bump_generation(self) -> int:
        """Advance the generation without new data (cache invalidation)."""
        with self._lock:
            with self._conn:
                new_generation = self._read_generation() + 1
                self._conn.execute(
                    "UPDATE meta SET value = ? WHERE key = 'generation'",
                    (str(new_generation),),
                )
            self._snapshot = self._build_snapshot()
            return new_generation

    # -- matching / index -----------------------------------------------

    def match_cpes_to_cves(self, cpes) -> set[str]:
        return self._snapshot.match_cpes_to_cves(cpes)

    def build_generation_index(self) -> GenerationIndex:
        return self._snapshot.gen_index

    # -- cache ------------------------------------------------------------

    def cache_lookup(self, fingerprint: bytes) -> PvcCacheEntry | None:
        """Entry for the fingerprint, or None when absent or stale."""
        with self._lock:
            generation = self._snapshot.generation
            row = self._conn.execute(
                "SELECT generation, cve_ids, cpes FROM cache WHERE fingerprint = ?",
                (fingerprint.hex(),),
            ).fetchone()
            if row is None:
                return None
            if row[0] != generation:
                self._conn.execute(
                    "DELETE FROM cache WHERE fingerprint = ?", (fingerprint.hex(),)
                )
                self._conn.commit()
                return None
        return PvcCacheEntry(
            fingerprint=fingerprint,
            generation=row[0],
            cve_ids=frozenset(json.loads(row[1])),
            generated_cpes=frozenset(parse_cpe_uri(u) for u in json.loads(row[2])),
        )

    def cache_store(self, entry: PvcCacheEntry) -> None:
        """Persist a cache entry; rejects entries from another generation."""
        with self._lock:
            if entry.generation != self._snapshot.generation:
                raise StaleGenerationError(
                    f"cache entry generation {entry.generation} != "
                    f"current {self._snapshot.generation}"
                )
            with self._conn:
                self._conn.execute(
                    "INSERT INTO cache (fingerprint, generation, cve_ids, cpes) "
                    "VALUES (?,?,?,?) ON CONFLICT(fingerprint) DO UPDATE SET "
                    "generation=excluded.generation, cve_ids=excluded.cve_ids, "
                    "cpes=excluded.cpes",
                    (
                        entry.fingerprint.hex(),
                        entry.generation,
                        json.dumps(sorted(entry.cve_ids)),
                        json.dumps(sorted(format_cpe_uri(n) for n in entry.generated_cpes)),
                    ),
                )

    # -- introspection helpers (used by tests and the CLI) ----------------

    def record_count(self) -> int:
        return len(self._snapshot.records)

    def get_record(self, cve_id: str) -> CveRecord | None:
        return self._snapshot.records.get(cve_id)
