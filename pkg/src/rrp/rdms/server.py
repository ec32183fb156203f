"""Reference RDMS server.

Plain HTTP/JSON with a byte-range file-read endpoint; datasets are immutable
once registered, state persists to the data directory and is reloaded on
restart. Ships exactly one account, the demo account.

Endpoints:
    POST /login
    GET  /datasets/{permId}
    GET  /datasets/{permId}/files/{path}      (supports Range)
    POST /datasets
    POST /publish
    GET  /publications/{objectRef}
    GET  /published/{sequence}                (public tar.gz of the object)
"""

from __future__ import annotations

import base64
import errno
import gzip
import io
import json
import re
import secrets
import tarfile
import threading
import time
from dataclasses import dataclass
from datetime import datetime, timezone
from http.server import BaseHTTPRequestHandler, ThreadingHTTPServer
from pathlib import Path
from urllib.parse import unquote

from ..config import RdmsServerConfig
from ..errors import DataDirUnwritable, PortInUse
from ..fsutil import sha256_bytes, utcnow_iso

DOI_PREFIX = "10.5281/rrp-sim"


def _now_stamp() -> str:
    return datetime.now(timezone.utc).strftime("%Y%m%d%H%M%S") + f"{int(time.time() * 1000) % 1000:03d}"


class _RdmsState:
    """All server state; registration is serialized through one lock so
    permId sequence components are strictly monotonic."""

    def __init__(self, config: RdmsServerConfig):
        self.config = config
        self.closing = threading.Event()
        self.lock = threading.Lock()
        self.data_dir = Path(config.data_dir)
        self.blob_dir = self.data_dir / "blobs"
        self.state_path = self.data_dir / "state.json"
        self.tokens: dict[str, dict] = {}
        self.datasets: dict[str, dict] = {}
        self.publications: dict[str, dict] = {}
        self.perm_seq = 0
        self.doi_seq = 0
        self._load()

    def _load(self) -> None:
        try:
            self.data_dir.mkdir(parents=True, exist_ok=True)
            probe = self.data_dir / ".writable"
            probe.write_text("ok")
            probe.unlink()
        except OSError as exc:
            raise DataDirUnwritable(f"cannot write to {self.data_dir}: {exc}") from exc
        if self.state_path.is_file():
            doc = json.loads(self.state_path.read_text())
            self.datasets = doc.get("datasets", {})
            self.publications = doc.get("publications", {})
            self.perm_seq = doc.get("permSeq", 0)
            self.doi_seq = doc.get("doiSeq", 0)

    def _persist(self) -> None:
        doc = {
            "datasets": self.datasets,
            "publications": self.publications,
            "permSeq": self.perm_seq,
            "doiSeq": self.doi_seq,
        }
        tmp = self.state_path.with_suffix(".tmp")
        tmp.write_text(json.dumps(doc, indent=2, sort_keys=True))
        tmp.replace(self.state_path)

    # -- operations ------------------------------------------------------------

    def login(self, user: str, password: str) -> dict:
        if user != self.config.demo_user or password != self.config.demo_password:
            return {}
        token = secrets.token_urlsafe(24)
        expires = time.time() + self.config.token_ttl_seconds
        with self.lock:
            self.tokens[token] = {"user": user, "expires": expires}
        return {
            "token": token,
            "userId": user,
            "expiresAt": datetime.fromtimestamp(expires, tz=timezone.utc).isoformat(timespec="milliseconds"),
        }

    def authenticate(self, token: str | None) -> str | None:
        if not token:
            return None
        with self.lock:
            entry = self.tokens.get(token)
            if entry is None or entry["expires"] <= time.time():
                self.tokens.pop(token, None)
                return None
            return entry["user"]

    def register(self, files: list[dict], metadata: dict) -> str:
        with self.lock:
            self.perm_seq += 1
            perm_id = f"{_now_stamp()}-{self.perm_seq}"
            entries = []
            for item in files:
                rel = item["path"]
                data = base64.b64decode(item["data"])
                dest = self.blob_dir / perm_id / rel
                dest.parent.mkdir(parents=True, exist_ok=True)
                dest.write_bytes(data)
                entries.append({"path": rel, "size": len(data), "sha256": sha256_bytes(data)})
            self.datasets[perm_id] = {
                "files": entries,
                "metadata": {str(k): str(v) for k, v in metadata.items()},
                "registeredAt": utcnow_iso(),
            }
            self._persist()
        return perm_id

    def publish(self, object_ref: str, base_url: str) -> dict | None:
        with self.lock:
            if object_ref in self.publications:
                return self.publications[object_ref]
            if object_ref not in self.datasets:
                return None
            self.doi_seq += 1
            record = {
                "doi": f"{DOI_PREFIX}.{self.doi_seq}",
                "objectRef": object_ref,
                "resolvedUrl": f"{base_url}/published/{self.doi_seq}",
                "sequence": self.doi_seq,
            }
            self.publications[object_ref] = record
            self._persist()
        return record

    def published_object(self, sequence: int) -> str | None:
        with self.lock:
            for record in self.publications.values():
                if record["sequence"] == sequence:
                    return record["objectRef"]
        return None

    def object_tarball(self, perm_id: str) -> bytes:
        """Deterministic tar.gz of the dataset's file tree."""
        dataset = self.datasets[perm_id]
        buf = io.BytesIO()
        with gzip.GzipFile(fileobj=buf, mode="wb", mtime=0) as gz:
            with tarfile.open(fileobj=gz, mode="w") as tar:
                for entry in sorted(dataset["files"], key=lambda e: e["path"]):
                    blob = (self.blob_dir / perm_id / entry["path"]).read_bytes()
                    info = tarfile.TarInfo(name=entry["path"])
                    info.size = len(blob)
                    info.mtime = 0
                    tar.addfile(info, io.BytesIO(blob))
        return buf.getvalue()


class _RdmsHandler(BaseHTTPRequestHandler):
    state: _RdmsState = None  # type: ignore[assignment]
    protocol_version = "HTTP/1.1"

    def log_message(self, *args):
        pass

    # -- plumbing ----------------------------------------------------------------

    def _json(self, status: int, doc: dict) -> None:
        body = json.dumps(doc).encode("utf-8")
        self.send_response(status)
        self.send_header("Content-Type", "application/json")
        self.send_header("Content-Length", str(len(body)))
        self.end_headers()
        self.wfile.write(body)

    def _error(self, status: int, code: str, message: str) -> None:
        self._json(status, {"error": code, "message": message})

    def _body(self) -> dict:
        length = int(self.headers.get("Content-Length") or 0)
        raw = self.rfile.read(length) if length else b"{}"
        try:
            doc = json.loads(raw)
        except json.JSONDecodeError:
            return {}
        return doc if isinstance(doc, dict) else {}

    def _token(self) -> str | None:
        header = self.headers.get("Authorization", "")
        if header.startswith("Bearer "):
            return header[len("Bearer "):].strip()
        return None

    def _user(self) -> str | None:
        return self.state.authenticate(self._token())

    def _base_url(self) -> str:
        host = self.headers.get("Host") or f"{self.state.config.host}:{self.state.config.port}"
        return f"http://{host}"

    def _refusing(self) -> bool:
        # After stop(), keep-alive handler threads must go silent so pooled
        # client connections observe a dead server, not zombie responses.
        if self.state.closing.is_set():
            self.close_connection = True
            return True
        return False

    # -- routes ------------------------------------------------------------------

    def do_POST(self):
        if self._refusing():
            return
        path = unquote(self.path)
        if path == "/login":
            doc = self._body()
            result = self.state.login(str(doc.get("user", "")), str(doc.get("password", "")))
            if not result:
                return self._error(401, "AuthFailed", "invalid credentials")
            return self._json(200, result)
        if self._user() is None:
            return self._error(401, "AuthFailed", "missing, invalid, or expired token")
        if path == "/datasets":
            doc = self._body()
            files = doc.get("files")
            if not isinstance(files, list) or not files:
                return self._error(400, "EmptyDataset", "files must be a non-empty list")
            seen_paths = set()
            for item in files:
                if not isinstance(item, dict) or "path" not in item or "data" not in item:
                    return self._error(400, "BadRequest", "each file needs path and data")
                if ".." in Path(item["path"]).parts or Path(item["path"]).is_absolute():
                    return self._error(400, "BadRequest", f"illegal path {item['path']!r}")
                if item["path"] in seen_paths:
                    return self._error(400, "BadRequest", f"duplicate path {item['path']!r}")
                seen_paths.add(item["path"])
            perm_id = self.state.register(files, doc.get("metadata") or {})
            return self._json(201, {"permId": perm_id})
        if path == "/publish":
            doc = self._body()
            object_ref = str(doc.get("objectRef", ""))
            record = self.state.publish(object_ref, self._base_url())
            if record is None:
                return self._error(404, "ObjectNotFound", f"unknown object {object_ref!r}")
            return self._json(200, {k: record[k] for k in ("doi", "objectRef", "resolvedUrl")})
        return self._error(404, "NotFound", path)

    def do_GET(self):
        if self._refusing():
            return
        path = unquote(self.path.split("?", 1)[0])
        published = re.fullmatch(r"/published/(\d+)", path)
        if published:
            object_ref = self.state.published_object(int(published.group(1)))
            if object_ref is None:
                return self._error(404, "ObjectNotFound", path)
            blob = self.state.object_tarball(object_ref)
            self.send_response(200)
            self.send_header("Content-Type", "application/gzip")
            self.send_header("Content-Length", str(len(blob)))
            self.end_headers()
            self.wfile.write(blob)
            return
        if self._user() is None:
            return self._error(401, "AuthFailed", "missing, invalid, or expired token")
        match = re.fullmatch(r"/datasets/([^/]+)", path)
        if match:
            perm_id = match.group(1)
            dataset = self.state.datasets.get(perm_id)
            if dataset is None:
                return self._error(404, "DatasetNotFound", perm_id)
            return self._json(200, {
                "permId": perm_id,
                "files": dataset["files"],
                "totalBytes": sum(f["size"] for f in dataset["files"]),
                "metadata": dataset["metadata"],
            })
        match = re.fullmatch(r"/datasets/([^/]+)/files/(.+)", path)
        if match:
            perm_id, rel = match.group(1), match.group(2)
            dataset = self.state.datasets.get(perm_id)
            if dataset is None:
                return self._error(404, "DatasetNotFound", perm_id)
            if rel not in {f["path"] for f in dataset["files"]}:
                return self._error(404, "FileNotFound", rel)
            blob = (self.state.blob_dir / perm_id / rel).read_bytes()
            range_header = self.headers.get("Range")
            if range_header:
                m = re.fullmatch(r"bytes=(\d*)-(\d*)", range_header.strip())
                if not m:
                    return self._error(416, "BadRange", range_header)
                start = int(m.group(1) or 0)
                end = int(m.group(2)) if m.group(2) else len(blob) - 1
                if start >= len(blob):
                    return self._error(416, "BadRange", range_header)
                part = blob[start:end + 1]
                self.send_response(206)
                self.send_header("Content-Type", "application/octet-stream")
                self.send_header("Content-Range", f"bytes {start}-{start + len(part) - 1}/{len(blob)}")
                self.send_header("Content-Length", str(len(part)))
                self.end_headers()
                self.wfile.write(part)
                return
            self.send_response(200)
            self.send_header("Content-Type", "application/octet-stream")
            self.send_header("Content-Length", str(len(blob)))
            self.end_headers()
            self.wfile.write(blob)
            return
        match = re.fullmatch(r"/publications/(.+)", path)
        if match:
            record = self.state.publications.get(match.group(1))
            if record is None:
                return self._error(404, "ObjectNotFound", match.group(1))
            return self._json(200, {k: record[k] for k in ("doi", "objectRef", "resolvedUrl")})
        return self._error(404, "NotFound", path)


@dataclass
class RdmsServerHandle:
    url: str
    data_dir: Path
    _state: _RdmsState
    _server: ThreadingHTTPServer
    _thread: threading.Thread

    def stop(self) -> None:
        self._state.closing.set()
        self._server.shutdown()
        self._server.server_close()
        self._thread.join(timeout=5)

    @property
    def port(self) -> int:
        return self._server.server_address[1]


def serve_reference_rdms(config: RdmsServerConfig) -> RdmsServerHandle:
    state = _RdmsState(config)
    handler = type("Handler", (_RdmsHandler,), {"state": state})
    try:
        server = ThreadingHTTPServer((config.host, config.port), handler)
    except OSError as exc:
        if exc.errno == errno.EADDRINUSE:
            raise PortInUse(f"port {config.port} already bound") from exc
        raise
    server.daemon_threads = True
    thread = threading.Thread(target=lambda: server.serve_forever(poll_interval=0.05), daemon=True)
    thread.start()
    host, port = server.server_address[0], server.server_address[1]
    return RdmsServerHandle(
        url=f"http://{host}:{port}",
        data_dir=Path(config.data_dir),
        _state=state,
        _server=server,
        _thread=thread,
    )
