"""Scan execution: per-component CPE generation, matching, and caching.

A job walks its inventory, scanning each component on a bounded worker
pool. Results keep inventory order; one component failing never aborts
its siblings. All reads go through the database snapshot pinned at job
start, so a concurrent update cannot tear a job's view.
"""

from __future__ import annotations

import enum
import logging
import time
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field

from .cpe import CpeName, format_cpe_uri, parse_cpe_uri
from .db import PvcCacheEntry, StaleGenerationError, VulnDatabase
from .generation import generate_cpes
from .inventory import Inventory, Pvc, fingerprint_pvc, pvc_from_dict, pvc_to_dict

log = logging.getLogger(__name__)

DEFAULT_PVC_CONCURRENCY = 8


class EngineError(Exception):
    """Raised when a scan cannot run at all (uninitialized database)."""


@dataclass(frozen=True)
class PvcScanResult:
    """Outcome for a single inventory component."""

    pvc: Pvc
    generated_cpes: frozenset[CpeName]
    cve_ids: frozenset[str]
    cache_hit: bool
    elapsed: float
    error: str | None = None


@dataclass(frozen=True)
class ScanReport:
    """All per-component results for one job plus the rollup summary."""

    token: str
    results: tuple[PvcScanResult, ...]
    total_cves: int
    max_cvss: float | None
    exploit_count: int


class JobState(enum.Enum):
    QUEUED = "queued"
    RUNNING = "running"
    DONE = "done"
    FAILED = "failed"


_ALLOWED_TRANSITIONS = {
    JobState.QUEUED: {JobState.RUNNING},
    JobState.RUNNING: {JobState.DONE, JobState.FAILED},
    JobState.DONE: set(),
    JobState.FAILED: set(),
}


@dataclass
class ScanJob:
    """A queued scan: token, owner, inventory, lifecycle state."""

    token: str
    client_id: str
    inventory: Inventory
    state: JobState = JobState.QUEUED
    enqueued_at: float = field(default_factory=time.time)
    polls_used: int = 0

    def transition(self, new_state: JobState) -> None:
        if new_state not in _ALLOWED_TRANSITIONS[self.state]:
            raise ValueError(f"illegal job transition {self.state} -> {new_state}")
        self.state = new_state


def scan_pvc(pvc: Pvc, database: VulnDatabase) -> PvcScanResult:
    """Scan one component against the current database snapshot.

    Cache hits return the stored ids without regenerating or matching;
    misses do the full generate/match pass and store the outcome under
    the snapshot's generation. A database update racing the store just
    skips the write (the result itself is still valid for the pinned
    snapshot).
    """
    snapshot = database.snapshot()
    if snapshot.generation < 1:
        raise EngineError("database has no completed update; run an update first")
    started = time.monotonic()
    fingerprint = fingerprint_pvc(pvc)
    cached = database.cache_lookup(fingerprint)
    if cached is not None:
        return PvcScanResult(
            pvc=pvc,
            generated_cpes=cached.generated_cpes,
            cve_ids=cached.cve_ids,
            cache_hit=True,
            elapsed=time.monotonic() - started,
        )
    cpes = frozenset(generate_cpes(pvc, snapshot.gen_index))
    cve_ids = frozenset(snapshot.match_cpes_to_cves(cpes))
    try:
        database.cache_store(PvcCacheEntry(
            fingerprint=fingerprint,
            generation=snapshot.generation,
            cve_ids=cve_ids,
            generated_cpes=cpes,
        ))
    except StaleGenerationError:
        log.info("update raced the scan of %s; result not cached", pvc.name)
    return PvcScanResult(
        pvc=pvc,
        generated_cpes=cpes,
        cve_ids=cve_ids,
        cache_hit=False,
        elapsed=time.monotonic() - started,
    )


def _scan_or_error(pvc: Pvc, database: VulnDatabase) -> PvcScanResult:
    try:
        return scan_pvc(pvc, database)
    except Exception as exc:
        log.exception("scan failed for component %r", pvc.name)
        return PvcScanResult(
            pvc=pvc,
            generated_cpes=frozenset(),
            cve_ids=frozenset(),
            cache_hit=False,
            elapsed=0.0,
            error=f"{type(exc).__name__}: {exc}",
        )


def _summarize(results, database: VulnDatabase) -> tuple[int, float | None, int]:
    all_ids: set[str] = set()
    for result in results:
        all_ids |= result.cve_ids
    max_cvss: float | None = None
    exploit_count = 0
    for cve_id in all_ids:
        record = database.get_record(cve_id)
        if record is None:
            continue
        best = record.max_cvss()
        if best is not None and (max_cvss is None or best > max_cvss):
            max_cvss = best
        if record.exploit_available:
            exploit_count += 1
    return len(all_ids), max_cvss, exploit_count


def execute_job(job: ScanJob, database: VulnDatabase,
                concurrency_cap: int = DEFAULT_PVC_CONCURRENCY) -> ScanReport:
    """Scan every component of the job's inventory, at most
    concurrency_cap at a time, preserving inventory order."""
    pvcs = job.inventory.pvcs
    if not pvcs:
        results: tuple[PvcScanResult, ...] = ()
    else:
        workers = max(1, min(concurrency_cap, len(pvcs)))
        with ThreadPoolExecutor(max_workers=workers) as pool:
            results = tuple(pool.map(lambda p: _scan_or_error(p, database), pvcs))
    total, max_cvss, exploit_count = _summarize(results, database)
    return ScanReport(
        token=job.token,
        results=results,
        total_cves=total,
        max_cvss=max_cvss,
        exploit_count=exploit_count,
    )


def compute_accuracy(found: set, actual: set) -> float:
    """Percentage of the actual vulnerability set that was found."""
    if not actual:
        raise ValueError("accuracy is undefined for an empty actual set")
    return len(set(found) & set(actual)) / len(actual) * 100.0


# -- report serialization -------------------------------------------------

def report_to_dict(report: ScanReport, database: VulnDatabase | None = None) -> dict:
    """JSON-ready report form.

    Per-CVE score/exploit details are attached when a database is given;
    otherwise ids alone are carried (enough to round-trip).
    """
    results = []
    for result in report.results:
        cves = []
        for cve_id in sorted(result.cve_ids):
            entry: dict = {"id": cve_id, "exploit": False}
            record = database.get_record(cve_id) if database else None
            if record is not None:
                best = record.max_cvss()
                if best is not None:
                    entry["cvss"] = best
                entry["exploit"] = record.exploit_available
            cves.append(entry)
        doc = {
            "pvc": pvc_to_dict(result.pvc),
            "cpes": sorted(format_cpe_uri(n) for n in result.generated_cpes),
            "cves": cves,
            "cache_hit": result.cache_hit,
        }
        if result.error is not None:
            doc["error"] = result.error
        results.append(doc)
    summary = {
        "total_cves": report.total_cves,
        "max_cvss": report.max_cvss,
        "exploit_count": report.exploit_count,
    }
    return {"token": report.token, "results": results, "summary": summary}


def report_from_dict(doc: dict) -> ScanReport:
    results = []
    for item in doc.get("results", []):
        results.append(PvcScanResult(
            pvc=pvc_from_dict(item["pvc"]),
            generated_cpes=frozenset(parse_cpe_uri(u) for u in item.get("cpes", [])),
            cve_ids=frozenset(c["id"] for c in item.get("cves", [])),
            cache_hit=bool(item.get("cache_hit", False)),
            elapsed=0.0,
            error=item.get("error"),
        ))
    summary = doc.get("summary", {})
    return ScanReport(
        token=doc.get("token", ""),
        results=tuple(results),
        total_cves=int(summary.get("total_cves", 0)),
        max_cvss=summary.get("max_cvss"),
        exploit_count=int(summary.get("exploit_count", 0)),
    )
