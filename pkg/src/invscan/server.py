"""Scan server daemon: verification firewall, FIFO job queue, workers,
result store with poll limits, and exponential violation blocking.

Request handling is stateless: every frame is authenticated, dispatched,
and answered on its own; the only state that outlives a response is the
job/report store keyed by token and the per-client credential record.
Unauthenticatable traffic is dropped without a reply.
"""

from __future__ import annotations

import fnmatch
import ipaddress
import json
import logging
import pathlib
import queue
import secrets
import socketserver
import threading
import time
from dataclasses import dataclass

from .db import VulnDatabase
from .engine import JobState, ScanJob, execute_job, report_to_dict
from .inventory import Inventory, InventoryError, inventory_from_dict
from .protocol import (DEFAULT_DELTA_T, ClientCredential, FrameError,
                       ImpersonationError, MalformedPayloadError, MsgType,
                       ReplayError, StaleTimestampError, TagInvalidError,
                       decode_frame, encode_frame, open_message,
                       protocol_error_body, read_frame, result_not_ready_body,
                       result_response_body, scan_accept_body, scan_reject_body,
                       seal_message)

log = logging.getLogger(__name__)

TOKEN_BYTES = 16

REJECT_BUSY = "busy"
REJECT_FIREWALL = "firewall-deny"
REJECT_UNKNOWN_TOKEN = "unknown-token"
REJECT_FORBIDDEN = "forbidden"
REJECT_POLL_LIMIT = "poll-limit"
REJECT_SCAN_FAILED = "scan-failed"


@dataclass(frozen=True)
class FirewallRule:
    """One ordered verification rule; all specified conditions must hold
    for the rule to match."""

    action: str
    cidr: ipaddress.IPv4Network | ipaddress.IPv6Network | None = None
    client_id_pattern: str | None = None
    require_valid_key: bool = False

    def __post_init__(self) -> None:
        if self.action not in ("allow", "deny"):
            raise ValueError(f"rule action must be allow or deny, got {self.action!r}")

    def matches(self, source_ip: str, client_id: str, key_valid: bool) -> bool:
        if self.cidr is not None:
            try:
                if ipaddress.ip_address(source_ip) not in self.cidr:
                    return False
            except ValueError:
                return False
        if self.client_id_pattern is not None:
            if not fnmatch.fnmatchcase(client_id, self.client_id_pattern):
                return False
        if self.require_valid_key and not key_valid:
            return False
        return True


def rule_from_dict(doc: dict) -> FirewallRule:
    cidr = doc.get("cidr")
    return FirewallRule(
        action=str(doc.get("action", "deny")).lower(),
        cidr=ipaddress.ip_network(cidr, strict=False) if cidr else None,
        client_id_pattern=doc.get("client_id"),
        require_valid_key=bool(doc.get("require_valid_key", False)),
    )


def verify_request(source_ip: str, client_id: str, key_valid: bool,
                   rules) -> tuple[bool, str]:
    """First matching rule decides; nothing matching means deny."""
    for position, rule in enumerate(rules):
        if rule.matches(source_ip, client_id, key_valid):
            if rule.action == "allow":
                return True, f"allow-rule-{position}"
            return False, REJECT_FIREWALL
    return False, "default-deny"


@dataclass
class ServerConfig:
    port: int = 4870
    db_path: str = "invscan.db"
    delta_t: float = DEFAULT_DELTA_T
    worker_count: int = 2
    pvc_concurrency_cap: int = 8
    queue_capacity: int = 64
    max_polls_per_token: int = 100
    block_base_seconds: float = 2.0
    firewall_rules: tuple[FirewallRule, ...] = ()
    credentials_path: str | None = None

    def __post_init__(self) -> None:
        for label in ("worker_count", "pvc_concurrency_cap", "queue_capacity",
                      "max_polls_per_token"):
            if getattr(self, label) < 1:
                raise ValueError(f"{label} must be >= 1")
        if self.block_base_seconds <= 0:
            raise ValueError("block_base_seconds must be positive")


def config_from_dict(doc: dict) -> ServerConfig:
    rules = tuple(rule_from_dict(r) for r in doc.get("firewall", []))
    kwargs = {}
    for key in ("port", "db_path", "delta_t", "worker_count", "pvc_concurrency_cap",
                "queue_capacity", "max_polls_per_token", "block_base_seconds",
                "credentials_path"):
        if key in doc:
            kwargs[key] = doc[key]
    return ServerConfig(firewall_rules=rules, **kwargs)


def load_config(path: str) -> ServerConfig:
    with open(path, "r", encoding="utf-8") as fh:
        return config_from_dict(json.load(fh))


def load_credentials(path: str) -> dict[str, ClientCredential]:
    """Credential file: JSON object mapping client id to {secret, salt-hex}."""
    with open(path, "r", encoding="utf-8") as fh:
        doc = json.load(fh)
    creds = {}
    for client_id, entry in doc.items():
        creds[client_id] = ClientCredential.from_secret(
            client_id, entry["secret"], bytes.fromhex(entry["salt"]))
    return creds


def add_credential(path: str, client_id: str) -> tuple[str, str]:
    """Provision a new client in the credential file; returns (secret, salt-hex)."""
    file_path = pathlib.Path(path)
    doc = {}
    if file_path.exists():
        doc = json.loads(file_path.read_text(encoding="utf-8"))
    if client_id in doc:
        raise ValueError(f"client {client_id!r} already provisioned")
    secret = secrets.token_urlsafe(24)
    salt = secrets.token_hex(16)
    doc[client_id] = {"secret": secret, "salt": salt}
    file_path.parent.mkdir(parents=True, exist_ok=True)
    file_path.write_text(json.dumps(doc, indent=2) + "\n", encoding="utf-8")
    return secret, salt


def run_update(database: VulnDatabase, feeds_dir: str) -> int:
    """Ingest every feed (*.json), dictionary (*.txt), and exploit map
    (*.csv) in a directory and bump the generation, atomically. Jobs
    already running keep the snapshot they started with."""
    base = pathlib.Path(feeds_dir)
    feeds = sorted(str(p) for p in base.glob("*.json"))
    dictionaries = sorted(str(p) for p in base.glob("*.txt"))
    exploits = sorted(str(p) for p in base.glob("*.csv"))
    return database.update_sources(feeds, dictionaries, exploits)


class RateLimitResult:
    PASS = "pass"
    BLOCKED = "blocked"


class VulnServer:
    """All server behavior behind the wire: verification, queueing,
    execution, result delivery, and blocking policy.

    Socket plumbing lives in serve_forever; everything else is driven
    through handle_connection so tests can feed it in-memory streams.
    """

    def __init__(self, config: ServerConfig, database: VulnDatabase,
                 credentials: dict[str, ClientCredential] | None = None) -> None:
        self.config = config
        self.database = database
        if credentials is None and config.credentials_path:
            credentials = load_credentials(config.credentials_path)
        self.credentials: dict[str, ClientCredential] = dict(credentials or {})
        self._client_locks = {cid: threading.Lock() for cid in self.credentials}
        self._queue: queue.Queue = queue.Queue(maxsize=config.queue_capacity)
        self._jobs: dict[str, ScanJob] = {}
        self._reports: dict[str, dict] = {}
        self._store_lock = threading.Lock()
        self._workers: list[threading.Thread] = []
        self._stopping = False

    # -- lifecycle ---------------------------------------------------------

    def start_workers(self) -> None:
        for n in range(self.config.worker_count):
            worker = threading.Thread(target=self._worker_loop,
                                      name=f"scan-worker-{n}", daemon=True)
            worker.start()
            self._workers.append(worker)

    def stop_workers(self) -> None:
        self._stopping = True
        for _ in self._workers:
            self._queue.put(None)
        for worker in self._workers:
            worker.join(timeout=10)
        self._workers.clear()

    def _worker_loop(self) -> None:
        while True:
            job = self._queue.get()
            if job is None:
                return
            try:
                job.transition(JobState.RUNNING)
                report = execute_job(job, self.database,
                                     self.config.pvc_concurrency_cap)
                doc = report_to_dict(report, self.database)
                with self._store_lock:
                    self._reports[job.token] = doc
                job.transition(JobState.DONE)
            except Exception:
                log.exception("job %s failed", job.token)
                try:
                    job.transition(JobState.FAILED)
                except ValueError:
                    pass
            finally:
                self._queue.task_done()

    # -- job store ---------------------------------------------------------

    def enqueue_job(self, inventory: Inventory, client_id: str) -> str | None:
        """Queue a scan; returns the token, or None when the queue is full."""
        token = secrets.token_hex(TOKEN_BYTES)
        job = ScanJob(token=token, client_id=client_id, inventory=inventory)
        with self._store_lock:
            self._jobs[token] = job
        try:
            self._queue.put_nowait(job)
        except queue.Full:
            with self._store_lock:
                del self._jobs[token]
            return None
        return token

    def fetch_result(self, token: str, client_id: str) -> tuple[MsgType, dict]:
        """Resolve one poll into the response (type, body) to seal."""
        with self._store_lock:
            job = self._jobs.get(token)
            if job is None:
                return MsgType.SCAN_REJECT, scan_reject_body(REJECT_UNKNOWN_TOKEN)
            if job.client_id != client_id:
                log.warning("client %s polled token %s owned by %s (impersonation)",
                            client_id, token, job.client_id)
                return MsgType.SCAN_REJECT, scan_reject_body(REJECT_FORBIDDEN)
            job.polls_used += 1
            if job.polls_used > self.config.max_polls_per_token:
                return MsgType.SCAN_REJECT, scan_reject_body(REJECT_POLL_LIMIT)
            if job.state is JobState.DONE:
                return MsgType.RESULT_RESPONSE, result_response_body(self._reports[token])
            if job.state is JobState.FAILED:
                return MsgType.SCAN_REJECT, scan_reject_body(REJECT_SCAN_FAILED)
            return MsgType.RESULT_NOT_READY, result_not_ready_body()

    # -- blocking policy -----------------------------------------------------

    def apply_rate_limit(self, client_id: str, violation: bool,
                         now: float) -> tuple[str, float]:
        """Blocking decision for one request; returns (status, blocked_until).

        A request while blocked never changes the violation count; the
        k-th violation while unblocked blocks for base**k seconds. The
        count decays only via reset_block.
        """
        state = self.credentials[client_id].block_state
        if now < state.blocked_until:
            return RateLimitResult.BLOCKED, state.blocked_until
        if violation:
            state.violations += 1
            state.blocked_until = now + self.config.block_base_seconds ** state.violations
            return RateLimitResult.BLOCKED, state.blocked_until
        return RateLimitResult.PASS, 0.0

    def reset_block(self, client_id: str) -> None:
        state = self.credentials[client_id].block_state
        state.violations = 0
        state.blocked_until = 0.0

    # -- request handling ----------------------------------------------------

    def run_update(self, feeds_dir: str) -> int:
        return run_update(self.database, feeds_dir)

    def _seal_response(self, cred: ClientCredential, msg_type: MsgType,
                       body: dict, now: float) -> bytes:
        envelope = seal_message(cred, msg_type, body, cred.next_send_sn(), int(now))
        return encode_frame(envelope)

    def _dispatch(self, opened_type: MsgType, body: dict, client_id: str,
                  source_ip: str) -> tuple[MsgType, dict, bool]:
        """Route one authenticated message; returns (type, body, close?)."""
        if opened_type is MsgType.SCAN_REQUEST:
            accepted, reason = verify_request(source_ip, client_id, True,
                                              self.config.firewall_rules)
            if not accepted:
                log.info("firewall rejected %s from %s: %s", client_id, source_ip, reason)
                return MsgType.SCAN_REJECT, scan_reject_body(REJECT_FIREWALL), True
            try:
                inventory = inventory_from_dict(body.get("inventory", {}))
            except InventoryError as exc:
                return MsgType.SCAN_REJECT, scan_reject_body(f"bad-inventory: {exc}"), True
            token = self.enqueue_job(inventory, client_id)
            if token is None:
                return MsgType.SCAN_REJECT, scan_reject_body(REJECT_BUSY), True
            return MsgType.SCAN_ACCEPT, scan_accept_body(token, client_id), True
        if opened_type is MsgType.RESULT_REQUEST:
            token = body.get("token", "")
            msg_type, reply = self.fetch_result(str(token), client_id)
            return msg_type, reply, msg_type is MsgType.SCAN_REJECT
        return MsgType.PROTOCOL_ERROR, protocol_error_body("unexpected-type"), True

    def handle_connection(self, rfile, wfile, source_ip: str) -> None:
        """Serve one connection: read frames until EOF, drop, or close.

        Unattributable problems (garbage frames, unknown ids, bad tags)
        drop the connection without a reply; everything after a valid tag
        gets an explicit sealed answer.
        """
        while True:
            try:
                frame = read_frame(rfile)
            except FrameError as exc:
                log.info("dropping connection from %s: %s", source_ip, exc)
                return
            if frame is None:
                return
            try:
                envelope = decode_frame(frame)
            except FrameError as exc:
                log.info("dropping undecodable frame from %s: %s", source_ip, exc)
                return
            cred = self.credentials.get(envelope.client_id_a)
            if cred is None:
                log.info("dropping frame for unknown client %r from %s",
                         envelope.client_id_a, source_ip)
                return
            lock = self._client_locks[envelope.client_id_a]
            with lock:
                now = time.time()
                close_after = True
                try:
                    opened = open_message(envelope, cred, now, self.config.delta_t)
                except TagInvalidError as exc:
                    # Anyone can send a bad tag; not attributable, no reply.
                    log.info("dropping %s frame from %s: %s",
                             envelope.client_id_a, source_ip, exc.code)
                    return
                except MalformedPayloadError as exc:
                    reply_type: MsgType = MsgType.PROTOCOL_ERROR
                    reply_body = protocol_error_body(exc.code)
                except (ImpersonationError, StaleTimestampError, ReplayError) as exc:
                    log.warning("protocol violation from %s (%s): %s",
                                envelope.client_id_a, source_ip, exc.code)
                    self.apply_rate_limit(envelope.client_id_a, True, now)
                    reply_type = MsgType.PROTOCOL_ERROR
                    reply_body = protocol_error_body(exc.code)
                else:
                    status, _until = self.apply_rate_limit(
                        envelope.client_id_a, False, now)
                    if status == RateLimitResult.BLOCKED:
                        reply_type = MsgType.PROTOCOL_ERROR
                        reply_body = protocol_error_body("blocked")
                    else:
                        reply_type, reply_body, close_after = self._dispatch(
                            opened.msg_type, opened.body, envelope.client_id_a,
                            source_ip)
                response = self._seal_response(cred, reply_type, reply_body, now)
            try:
                wfile.write(response)
                wfile.flush()
            except OSError:
                return
            if close_after:
                return


class _ConnectionHandler(socketserver.StreamRequestHandler):
    def handle(self) -> None:
        self.server.app.handle_connection(self.rfile, self.wfile,
                                          self.client_address[0])


class _ThreadingServer(socketserver.ThreadingTCPServer):
    allow_reuse_address = True
    daemon_threads = True

    def __init__(self, address, app: VulnServer) -> None:
        super().__init__(address, _ConnectionHandler)
        self.app = app


def make_tcp_server(server: VulnServer, host: str,
                    port: int | None = None) -> _ThreadingServer:
    """Bind the listener; port=0 asks the kernel for an ephemeral port
    (the bound address is on .server_address). Callers own shutdown."""
    bind_port = server.config.port if port is None else port
    return _ThreadingServer((host, bind_port), server)


def serve_forever(server: VulnServer, host: str = "0.0.0.0") -> None:
    """Run the TCP listener until interrupted."""
    server.start_workers()
    with make_tcp_server(server, host) as tcp:
        log.info("listening on %s:%d", host, tcp.server_address[1])
        try:
            tcp.serve_forever()
        finally:
            server.stop_workers()
