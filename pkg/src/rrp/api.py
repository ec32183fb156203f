"""REST + server-sent-events service over the orchestrator.

Authentication delegates to the RDMS: an API token is minted only after a
successful RDMS login. Every endpoint except login and health rejects
missing or expired tokens. The service also reverse-proxies
`/session/<projectId>/...` to the project's live session and serves the
web console's static assets when a UI directory is configured.
"""

from __future__ import annotations

import errno
import json
import mimetypes
import re
import secrets
import ssl
import tempfile
import threading
import time
from dataclasses import dataclass
from datetime import datetime, timezone
from http.client import HTTPConnection
from http.server import BaseHTTPRequestHandler, ThreadingHTTPServer
from pathlib import Path
from urllib.parse import parse_qs, unquote, urlsplit

from . import __version__, bundle
from .config import ApiConfig
from .errors import (
    AuthFailed,
    ConflictingInputs,
    CorruptArchive,
    DaemonUnavailable,
    DatasetNotFound,
    DuplicateMountTarget,
    EmptyName,
    InvalidFolderName,
    InvalidState,
    ManifestSyntax,
    NameTaken,
    NoActiveSession,
    ObjectNotFound,
    RdmsError,
    RepositoryDirty,
    ResultNotFound,
    RrpError,
    ServerUnreachable,
    ShareNotFound,
    UnknownProject,
    VerificationFailed,
    PortInUse,
)
from .journal import EventKind, LogEvent
from .orchestrator import Orchestrator, ProjectRecord, ProjectStatus
from .project_spec import ProjectSource
from .runtime import ResourceLimits

API_PREFIX = "/api/v1"
SESSION_PREFIX = "/session/"

# Journal kinds -> SSE event types. The wire vocabulary is closed; lifecycle
# interactions (Share/Upload/Archive) ride on `status` frames and carry
# their precise kind in the JSON payload.
SSE_EVENT_TYPES = {
    EventKind.STATUS: "status",
    EventKind.BUILD_LOG: "build-log",
    EventKind.RUN_LOG: "run-log",
    EventKind.RESULTS_CHANGED: "results-changed",
    EventKind.ERROR: "error",
    EventKind.SHARE: "status",
    EventKind.UPLOAD: "status",
    EventKind.ARCHIVE: "status",
}

_ERROR_STATUS: list[tuple[type, int]] = [
    (AuthFailed, 401),
    (NameTaken, 409),
    (InvalidState, 409),
    (RepositoryDirty, 409),
    (ConflictingInputs, 409),
    (UnknownProject, 404),
    (ShareNotFound, 404),
    (ResultNotFound, 404),
    (DatasetNotFound, 404),
    (ObjectNotFound, 404),
    (ManifestSyntax, 400),
    (DuplicateMountTarget, 400),
    (InvalidFolderName, 400),
    (EmptyName, 400),
    (CorruptArchive, 400),
    (VerificationFailed, 400),
    (NoActiveSession, 503),
    (ServerUnreachable, 503),
    (DaemonUnavailable, 503),
    (RdmsError, 502),
]


def error_status(exc: Exception) -> int:
    for cls, status in _ERROR_STATUS:
        if isinstance(exc, cls):
            return status
    return 500 if not isinstance(exc, ValueError) else 400


def record_to_dict(record: ProjectRecord, detail: bool = False, orch: Orchestrator | None = None) -> dict:
    doc = {
        "projectId": record.project_id,
        "name": record.name,
        "owner": record.owner,
        "status": record.status.value,
        "createdAt": record.created_at,
        "failure": record.failure,
        "imageRef": (
            {"repository": record.image_ref.repository, "tag": record.image_ref.tag}
            if record.image_ref
            else None
        ),
        "resources": (
            {"cpuCores": record.resources.cpu_cores, "memoryBytes": record.resources.memory_bytes}
            if record.resources
            else None
        ),
        "specDigest": record.spec.spec_digest if record.spec else None,
        "commitId": record.spec.tree.commit_id if record.spec else None,
        "repoUrl": record.source.repo_url,
        "publicPath": f"/session/{record.project_id}/" if record.status is ProjectStatus.RUNNING else None,
        "remoteImage": record.remote_image,
    }
    if detail and orch is not None:
        doc["dirty"] = orch.is_dirty(record.project_id)
        doc["datasets"] = [b.to_dict() for b in record.spec.datasets] if record.spec else []
        doc["lastEventSequence"] = orch.journal(record.project_id).head_sequence
    return doc


class ApiService:
    def __init__(self, orchestrator: Orchestrator, config: ApiConfig | None = None):
        self.orch = orchestrator
        self.config = config or ApiConfig()
        self._tokens: dict[str, dict] = {}
        self._token_lock = threading.Lock()
        self.closing = threading.Event()

    # -- auth ------------------------------------------------------------------

    def authenticate(self, user: str, password: str) -> dict:
        self.orch.rdms_client().login(user, password)  # raises AuthFailed / ServerUnreachable
        token = secrets.token_urlsafe(24)
        now = time.time()
        entry = {"user": user, "issued": now, "expires": now + self.config.token_ttl_seconds}
        with self._token_lock:
            self._tokens[token] = entry
        return {
            "token": token,
            "userId": user,
            "issuedAt": _iso(now),
            "expiresAt": _iso(entry["expires"]),
        }

    def user_for_token(self, token: str | None) -> str | None:
        if not token:
            return None
        with self._token_lock:
            entry = self._tokens.get(token)
            if entry is None or entry["expires"] <= time.time():
                self._tokens.pop(token, None)
                return None
            return entry["user"]

    # -- server ----------------------------------------------------------------

    def serve(self) -> "ApiHandle":
        handler = type("Handler", (_ApiHandler,), {"service": self})
        try:
            server = ThreadingHTTPServer((self.config.host, self.config.port), handler)
        except OSError as exc:
            if exc.errno == errno.EADDRINUSE:
                raise PortInUse(f"port {self.config.port} already bound") from exc
            raise
        scheme = "http"
        if self.config.tls_certfile and self.config.tls_keyfile:
            context = ssl.SSLContext(ssl.PROTOCOL_TLS_SERVER)
            context.load_cert_chain(self.config.tls_certfile, self.config.tls_keyfile)
            server.socket = context.wrap_socket(server.socket, server_side=True)
            scheme = "https"
        server.daemon_threads = True
        thread = threading.Thread(target=lambda: server.serve_forever(poll_interval=0.05), daemon=True)
        thread.start()
        host, port = server.server_address[0], server.server_address[1]
        return ApiHandle(url=f"{scheme}://{host}:{port}", service=self, _server=server, _thread=thread)


@dataclass
class ApiHandle:
    url: str
    service: ApiService
    _server: ThreadingHTTPServer
    _thread: threading.Thread

    @property
    def port(self) -> int:
        return self._server.server_address[1]

    def stop(self) -> None:
        self.service.closing.set()
        self._server.shutdown()
        self._server.server_close()
        self._thread.join(timeout=5)


_HOP_BY_HOP = {
    "connection",
    "keep-alive",
    "proxy-authenticate",
    "proxy-authorization",
    "te",
    "trailers",
    "transfer-encoding",
    "upgrade",
    "host",
}


class _ApiHandler(BaseHTTPRequestHandler):
    service: ApiService = None  # type: ignore[assignment]
    protocol_version = "HTTP/1.1"

    def log_message(self, *args):
        pass

    # -- helpers -----------------------------------------------------------------

    @property
    def orch(self) -> Orchestrator:
        return self.service.orch

    def _split(self) -> tuple[str, dict[str, list[str]]]:
        parts = urlsplit(self.path)
        return unquote(parts.path), parse_qs(parts.query)

    def _json(self, status: int, doc) -> None:
        body = json.dumps(doc).encode("utf-8")
        self.send_response(status)
        self.send_header("Content-Type", "application/json")
        self.send_header("Content-Length", str(len(body)))
        self.end_headers()
        self.wfile.write(body)

    def _bytes(self, status: int, data: bytes, content_type: str, extra: dict[str, str] | None = None) -> None:
        self.send_response(status)
        self.send_header("Content-Type", content_type)
        self.send_header("Content-Length", str(len(data)))
        for key, value in (extra or {}).items():
            self.send_header(key, value)
        self.end_headers()
        self.wfile.write(data)

    def _error(self, status: int, exc_or_code, message: str | None = None) -> None:
        if isinstance(exc_or_code, Exception):
            code = type(exc_or_code).__name__
            message = str(exc_or_code)
        else:
            code = exc_or_code
        self._json(status, {"error": code, "message": message or code})

    def _body(self) -> dict:
        length = int(self.headers.get("Content-Length") or 0)
        if not length:
            return {}
        try:
            doc = json.loads(self.rfile.read(length))
        except json.JSONDecodeError:
            return {}
        return doc if isinstance(doc, dict) else {}

    def _token(self, query: dict[str, list[str]]) -> str | None:
        header = self.headers.get("Authorization", "")
        if header.startswith("Bearer "):
            return header[len("Bearer "):].strip()
        values = query.get("token")
        return values[0] if values else None

    def _require_user(self, query: dict[str, list[str]]) -> str | None:
        user = self.service.user_for_token(self._token(query))
        if user is None:
            self._error(401, "AuthFailed", "missing, invalid, or expired token")
            return None
        return user

    # -- dispatch ----------------------------------------------------------------

    def _dispatch(self, method: str) -> None:
        path, query = self._split()
        try:
            if path.startswith(SESSION_PREFIX):
                if self._require_user(query) is None:
                    return
                return self._proxy(method, path, query)
            if not path.startswith(API_PREFIX):
                if method in ("GET", "HEAD"):
                    return self._static(path)
                return self._error(404, "NotFound", path)
            route = path[len(API_PREFIX):]
            if method == "POST" and route == "/login":
                return self._login()
            if method == "GET" and route == "/health":
                return self._json(200, {"status": "ok", "version": __version__})
            user = self._require_user(query)
            if user is None:
                return
            return self._authorized(method, route, query, user)
        except BrokenPipeError:
            pass
        except RrpError as exc:
            self._error(error_status(exc), exc)
        except Exception as exc:  # noqa: BLE001 - surface as a 500, never a hang
            self._error(500, "InternalError", f"{type(exc).__name__}: {exc}")

    def do_GET(self):
        self._dispatch("GET")

    def do_POST(self):
        self._dispatch("POST")

    def do_DELETE(self):
        self._dispatch("DELETE")

    def do_HEAD(self):
        self._dispatch("HEAD")

    # -- endpoints ----------------------------------------------------------------

    def _login(self) -> None:
        doc = self._body()
        try:
            minted = self.service.authenticate(str(doc.get("user", "")), str(doc.get("password", "")))
        except AuthFailed as exc:
            return self._error(401, exc)
        except ServerUnreachable as exc:
            return self._error(503, "RdmsUnreachable", str(exc))
        return self._json(200, minted)

    def _authorized(self, method: str, route: str, query: dict, user: str) -> None:
        if route == "/projects" and method == "GET":
            records = self.orch.list_projects()
            return self._json(200, [record_to_dict(r) for r in records])
        if route == "/projects" and method == "POST":
            doc = self._body()
            repo_url = doc.get("repoUrl", "")
            name = doc.get("name") or ""
            if not repo_url or not name:
                return self._error(400, "BadRequest", "repoUrl and name are required")
            source = ProjectSource(repo_url=repo_url, ref=doc.get("ref"), credentials=doc.get("credentials"))
            record = self.orch.create_project(user, source, name)
            return self._json(201, record_to_dict(record))

        match = re.fullmatch(r"/projects/([^/]+)", route)
        if match:
            if method == "GET":
                record = self.orch.get_project(match.group(1))
                return self._json(200, record_to_dict(record, detail=True, orch=self.orch))
            if method == "DELETE":
                record = self.orch.delete_project(match.group(1))
                return self._json(200, record_to_dict(record))

        match = re.fullmatch(r"/projects/([^/]+)/start", route)
        if match and method == "POST":
            doc = self._body()
            resources = None
            if "cpuCores" in doc or "memoryBytes" in doc:
                resources = ResourceLimits(
                    cpu_cores=float(doc.get("cpuCores", self.orch.config.default_cpu)),
                    memory_bytes=int(doc.get("memoryBytes", self.orch.config.default_memory)),
                )
            info = self.orch.start_project(match.group(1), resources)
            return self._json(200, {
                "projectId": info.project_id,
                "sessionId": info.session_id,
                "publicPath": info.public_path,
                "internalEndpoint": info.internal_endpoint,
                "resources": {"cpuCores": info.resources.cpu_cores, "memoryBytes": info.resources.memory_bytes},
            })

        match = re.fullmatch(r"/projects/([^/]+)/stop", route)
        if match and method == "POST":
            record = self.orch.stop_project(match.group(1))
            return self._json(200, record_to_dict(record))

        match = re.fullmatch(r"/projects/([^/]+)/results", route)
        if match and method == "GET":
            entries = self.orch.list_results(match.group(1))
            return self._json(200, [e.to_dict() for e in entries])

        match = re.fullmatch(r"/projects/([^/]+)/results/(.+)", route)
        if match and method == "GET":
            data = self.orch.read_result(match.group(1), match.group(2))
            ctype = mimetypes.guess_type(match.group(2))[0] or "application/octet-stream"
            return self._bytes(200, data, ctype)

        match = re.fullmatch(r"/projects/([^/]+)/upload", route)
        if match and method == "POST":
            doc = self._body()
            if not doc.get("path"):
                return self._error(400, "BadRequest", "path is required")
            perm_id = self.orch.upload_result(match.group(1), doc["path"], doc.get("metadata") or {})
            return self._json(200, {"permId": perm_id})

        match = re.fullmatch(r"/projects/([^/]+)/archive", route)
        if match and method == "POST":
            perm_id = self.orch.archive_project(match.group(1))
            return self._json(200, {"permId": perm_id})

        match = re.fullmatch(r"/projects/([^/]+)/share", route)
        if match and method == "POST":
            share = self.orch.create_share(match.group(1))
            return self._json(201, share.to_dict())

        match = re.fullmatch(r"/shares/([^/]+)/open", route)
        if match and method == "POST":
            record = self.orch.open_share(match.group(1), user)
            return self._json(201, record_to_dict(record))

        match = re.fullmatch(r"/projects/([^/]+)/events", route)
        if match and method == "GET":
            return self._stream_events(match.group(1), query)

        match = re.fullmatch(r"/projects/([^/]+)/bundle", route)
        if match and method == "GET":
            return self._download_bundle(match.group(1))

        return self._error(404, "NotFound", route)

    # -- SSE ------------------------------------------------------------------------

    def _sse_frame(self, project_id: str, event: LogEvent) -> bytes:
        data = {"projectId": project_id, **event.to_dict()}
        event_type = SSE_EVENT_TYPES[event.kind]
        return (
            f"event: {event_type}\n"
            f"id: {event.sequence}\n"
            f"data: {json.dumps(data)}\n\n"
        ).encode("utf-8")

    def _stream_events(self, project_id: str, query: dict) -> None:
        last_seen = 0
        if "from" in query:
            last_seen = int(query["from"][0])
        elif self.headers.get("Last-Event-ID"):
            last_seen = int(self.headers["Last-Event-ID"])
        subscription = self.orch.project_events(project_id, last_seen)

        self.send_response(200)
        self.send_header("Content-Type", "text/event-stream")
        self.send_header("Cache-Control", "no-store")
        self.send_header("Connection", "close")
        self.end_headers()

        if subscription.missing_from is not None:
            gap = {"projectId": project_id, "firstMissing": subscription.missing_from}
            self.wfile.write(f"event: gap\ndata: {json.dumps(gap)}\n\n".encode("utf-8"))

        heartbeat = self.service.config.heartbeat_seconds
        try:
            while not self.service.closing.is_set():
                event = subscription.next(timeout=heartbeat)
                if event is None:
                    self.wfile.write(b": heartbeat\n\n")
                else:
                    self.wfile.write(self._sse_frame(project_id, event))
                self.wfile.flush()
        except (BrokenPipeError, ConnectionResetError, ssl.SSLError):
            pass

    # -- bundle download --------------------------------------------------------------

    def _download_bundle(self, project_id: str) -> None:
        record = self.orch.get_project(project_id)
        with tempfile.TemporaryDirectory(prefix="rrp-bundle-") as tmp:
            out = Path(tmp) / f"{record.name}.rrp-bundle.tar.gz"
            bundle.export_player_bundle(self.orch, project_id, out)
            data = out.read_bytes()
        self._bytes(
            200,
            data,
            "application/gzip",
            extra={"Content-Disposition": f'attachment; filename="{out.name}"'},
        )

    # -- reverse proxy ------------------------------------------------------------------

    def _proxy(self, method: str, path: str, query: dict) -> None:
        session = self.orch.route(path)
        host, port = session.internal_endpoint.split(":")
        suffix = path[len(SESSION_PREFIX):]
        _, _, rest = suffix.partition("/")
        target = "/" + rest
        raw_query = urlsplit(self.path).query
        if raw_query:
            target += "?" + raw_query
        length = int(self.headers.get("Content-Length") or 0)
        body = self.rfile.read(length) if length else None
        headers = {k: v for k, v in self.headers.items() if k.lower() not in _HOP_BY_HOP}
        conn = HTTPConnection(host, int(port), timeout=30)
        try:
            conn.request(method, target, body=body, headers=headers)
            resp = conn.getresponse()
            payload = resp.read()
            self.send_response(resp.status)
            for key, value in resp.getheaders():
                if key.lower() not in _HOP_BY_HOP and key.lower() != "content-length":
                    self.send_header(key, value)
            self.send_header("Content-Length", str(len(payload)))
            self.end_headers()
            self.wfile.write(payload)
        except (ConnectionError, OSError) as exc:
            self._error(502, "ProxyError", f"session endpoint unreachable: {exc}")
        finally:
            conn.close()

    # -- static UI -------------------------------------------------------------------

    _FALLBACK_PAGE = (
        "<!doctype html><html><head><title>rrp</title></head><body>"
        "<h1>Reproducible research platform</h1>"
        "<p>The API lives under <code>/api/v1</code>. Build the web console "
        "(frontend/) to serve the full UI here.</p></body></html>"
    )

    def _static(self, path: str) -> None:
        ui_dir = self.service.config.ui_dir
        if ui_dir is None or not Path(ui_dir).is_dir():
            return self._bytes(200, self._FALLBACK_PAGE.encode("utf-8"), "text/html; charset=utf-8")
        root = Path(ui_dir).resolve()
        rel = path.lstrip("/") or "index.html"
        candidate = (root / rel).resolve()
        if not candidate.is_relative_to(root) or not candidate.is_file():
            candidate = root / "index.html"
            if not candidate.is_file():
                return self._error(404, "NotFound", path)
        ctype = mimetypes.guess_type(str(candidate))[0] or "application/octet-stream"
        return self._bytes(200, candidate.read_bytes(), ctype)


def _iso(epoch: float) -> str:
    return datetime.fromtimestamp(epoch, tz=timezone.utc).isoformat(timespec="milliseconds")
