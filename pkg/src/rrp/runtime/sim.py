"""Deterministic in-memory container runtime.

Images record their recipe plus the build-context file tree (standing in for
a real image's /project layer), sessions expose a small file API so
read-only enforcement and result writing are testable, and every build /
push / import is appended to an inspectable ledger. Identical call
sequences produce identical ledgers, image ids, and status traces.
"""

from __future__ import annotations

import hashlib
import io
import json
import os
import posixpath
import subprocess
import sys
import tarfile
import tempfile
import threading
from dataclasses import dataclass
from http.server import BaseHTTPRequestHandler, ThreadingHTTPServer
from pathlib import Path

from ..build_plan import ImageRef
from ..config import SimRuntimeConfig
from ..errors import (
    AuthFailed,
    BuildFailed,
    CorruptArchive,
    ImageNotFound,
    ImagePullFailed,
    MountReadOnly,
    ResourceDenied,
    StartFailed,
    UnknownSession,
)
from . import (
    BuildResult,
    LogSink,
    MountSpec,
    PushReceipt,
    ResourceLimits,
    RuntimeAdapter,
    SessionHandle,
    SessionStatus,
)


@dataclass
class SimImage:
    image_id: str
    recipe: str
    files: dict[str, bytes]


class SimRegistry:
    """Stands in for a remote OCI registry; share one instance across
    adapters to model push-from-one-machine, pull-from-another."""

    def __init__(self):
        self._lock = threading.Lock()
        self._store: dict[str, tuple[ImageRef, SimImage]] = {}

    def put(self, remote_ref: str, ref: ImageRef, image: SimImage) -> None:
        with self._lock:
            self._store[remote_ref] = (ref, image)

    def get(self, remote_ref: str) -> tuple[ImageRef, SimImage] | None:
        with self._lock:
            return self._store.get(remote_ref)


class _CannedPageHandler(BaseHTTPRequestHandler):
    session_id = ""

    def do_GET(self):
        body = (
            f"<html><body><h1>rrp session {self.session_id}</h1>"
            f"<p>path: {self.path}</p></body></html>"
        ).encode("utf-8")
        self.send_response(200)
        self.send_header("Content-Type", "text/html; charset=utf-8")
        self.send_header("Content-Length", str(len(body)))
        self.end_headers()
        self.wfile.write(body)

    do_HEAD = do_GET

    def log_message(self, *args):
        pass


class _SimSession:
    def __init__(self, handle: SessionHandle, image: SimImage, mounts: list[MountSpec], limits: ResourceLimits, command: str, scratch: Path):
        self.handle = handle
        self.image = image
        self.mounts = list(mounts)
        self.limits = limits
        self.command = command
        self.scratch = scratch
        self.overlay: dict[str, bytes] = {}
        self.status_trace: list[SessionStatus] = [handle.status]
        self.http_server: ThreadingHTTPServer | None = None
        self._project_dir: Path | None = None

    def record_status(self, status: SessionStatus) -> None:
        self.handle.status = status
        self.status_trace.append(status)

    def _mount_for(self, container_path: str) -> tuple[MountSpec, str] | None:
        """Longest-prefix mount match -> (mount, path relative to it).
        Paths are normalized first so `..` segments cannot cross a mount
        boundary on the host side."""
        container_path = posixpath.normpath(container_path)
        best: tuple[MountSpec, str] | None = None
        for mount in self.mounts:
            root = mount.container_path.rstrip("/")
            if container_path == root or container_path.startswith(root + "/"):
                rel = container_path[len(root):].lstrip("/")
                if best is None or len(root) > len(best[0].container_path.rstrip("/")):
                    best = (mount, rel)
        return best

    def project_dir(self) -> Path:
        """Host directory holding /project: the mount when present, else the
        image's embedded tree materialized once per session."""
        hit = self._mount_for("/project")
        if hit is not None:
            return Path(hit[0].host_path)
        if self._project_dir is None:
            target = self.scratch / "project"
            for rel, data in self.image.files.items():
                dest = target / rel
                dest.parent.mkdir(parents=True, exist_ok=True)
                dest.write_bytes(data)
            target.mkdir(parents=True, exist_ok=True)
            self._project_dir = target
        return self._project_dir

    def data_dir(self) -> Path:
        """Host directory exposing the /openbis subtree via symlinks."""
        for mount in self.mounts:
            if mount.container_path.rstrip("/") == "/openbis":
                return Path(mount.host_path)
        farm = self.scratch / "openbis"
        farm.mkdir(parents=True, exist_ok=True)
        for mount in self.mounts:
            root = mount.container_path.rstrip("/")
            if root.startswith("/openbis/"):
                link = farm / root[len("/openbis/"):]
                if not link.exists():
                    link.parent.mkdir(parents=True, exist_ok=True)
                    link.symlink_to(Path(mount.host_path))
        return farm

    def results_dir(self) -> Path:
        hit = self._mount_for("/results")
        if hit is not None:
            return Path(hit[0].host_path)
        target = self.scratch / "results"
        target.mkdir(parents=True, exist_ok=True)
        return target

    def write_file(self, container_path: str, data: bytes) -> None:
        container_path = posixpath.normpath(container_path)
        hit = self._mount_for(container_path)
        if hit is not None:
            mount, rel = hit
            if mount.read_only:
                raise MountReadOnly(f"{container_path} is inside the read-only mount {mount.container_path}")
            dest = Path(mount.host_path) / rel
            dest.parent.mkdir(parents=True, exist_ok=True)
            dest.write_bytes(data)
            return
        if container_path.startswith("/project/"):
            dest = self.project_dir() / container_path[len("/project/"):]
            dest.parent.mkdir(parents=True, exist_ok=True)
            dest.write_bytes(data)
            return
        self.overlay[container_path] = data

    def read_file(self, container_path: str) -> bytes:
        container_path = posixpath.normpath(container_path)
        if container_path in self.overlay:
            return self.overlay[container_path]
        hit = self._mount_for(container_path)
        if hit is not None:
            mount, rel = hit
            path = Path(mount.host_path) / rel
            if path.is_file():
                return path.read_bytes()
            raise FileNotFoundError(container_path)
        if container_path.startswith("/project/"):
            rel = container_path[len("/project/"):]
            if rel in self.image.files and self._project_dir is None and self._mount_for("/project") is None:
                return self.image.files[rel]
            path = self.project_dir() / rel
            if path.is_file():
                return path.read_bytes()
        raise FileNotFoundError(container_path)

    def list_files(self, container_prefix: str) -> list[str]:
        prefix = container_prefix.rstrip("/")
        found: set[str] = set()
        for mount in self.mounts:
            root = mount.container_path.rstrip("/")
            if root == prefix or root.startswith(prefix + "/") or prefix.startswith(root):
                base = Path(mount.host_path)
                for path in base.rglob("*"):
                    if path.is_file():
                        cpath = root + "/" + str(path.relative_to(base))
                        if cpath.startswith(prefix + "/") or prefix == "":
                            found.add(cpath)
        for cpath in self.overlay:
            if cpath.startswith(prefix + "/"):
                found.add(cpath)
        if prefix.startswith("/project") and self._mount_for("/project") is None:
            base = self.project_dir()
            for path in base.rglob("*"):
                if path.is_file():
                    cpath = "/project/" + str(path.relative_to(base))
                    if cpath.startswith(prefix + "/") or cpath == prefix:
                        found.add(cpath)
        return sorted(found)


def _deterministic_tar(entries: dict[str, bytes]) -> bytes:
    buf = io.BytesIO()
    with tarfile.open(fileobj=buf, mode="w") as tar:
        for name in sorted(entries):
            info = tarfile.TarInfo(name=name)
            info.size = len(entries[name])
            info.mtime = 0
            info.uid = info.gid = 0
            tar.addfile(info, io.BytesIO(entries[name]))
    return buf.getvalue()


def _sha256(data: bytes) -> str:
    return hashlib.sha256(data).hexdigest()


class SimRuntime(RuntimeAdapter):
    def __init__(self, config: SimRuntimeConfig | None = None, registry: SimRegistry | None = None, scratch_dir: Path | None = None):
        self.config = config or SimRuntimeConfig()
        self.registry = registry or SimRegistry()
        self.ledger: list[dict] = []
        self._lock = threading.Lock()
        self._build_locks: dict[str, threading.Lock] = {}
        self._images: dict[str, SimImage] = {}
        self._refs: dict[str, str] = {}
        self._sessions: dict[str, _SimSession] = {}
        self._session_counter = 0
        self._next_port = self.config.port_range[0]
        self._scratch = Path(scratch_dir) if scratch_dir else Path(tempfile.mkdtemp(prefix="rrp-sim-"))
        self._scratch.mkdir(parents=True, exist_ok=True)

    # -- inspection helpers (sim-only surface) --------------------------------

    def build_count(self) -> int:
        return sum(1 for e in self.ledger if e["op"] == "build" and not e.get("cached"))

    def pushes(self) -> list[dict]:
        return [e for e in self.ledger if e["op"] == "push"]

    def image_for(self, ref: ImageRef) -> SimImage:
        image_id = self._refs.get(str(ref))
        if image_id is None:
            raise ImageNotFound(f"no image for {ref}")
        return self._images[image_id]

    def session(self, handle: SessionHandle) -> _SimSession:
        sess = self._sessions.get(handle.session_id)
        if sess is None:
            raise UnknownSession(f"unknown session {handle.session_id}")
        return sess

    def write_session_file(self, handle: SessionHandle, container_path: str, data: bytes) -> None:
        self.session(handle).write_file(container_path, data)

    def read_session_file(self, handle: SessionHandle, container_path: str) -> bytes:
        return self.session(handle).read_file(container_path)

    def list_session_files(self, handle: SessionHandle, container_prefix: str) -> list[str]:
        return self.session(handle).list_files(container_prefix)

    # -- adapter contract ------------------------------------------------------

    def build_image(self, recipe: str, context_path: Path, ref: ImageRef, log_sink: LogSink) -> BuildResult:
        with self._lock:
            ref_lock = self._build_locks.setdefault(str(ref), threading.Lock())
        with ref_lock:
            image_id = _sha256(recipe.encode("utf-8"))
            if self._refs.get(str(ref)) == image_id:
                # Concurrent or repeated identical builds coalesce.
                log_sink(f"using cached image {image_id[:12]}")
                with self._lock:
                    self.ledger.append({"op": "build", "ref": str(ref), "image_id": image_id, "cached": True})
                return BuildResult(image_id=image_id, log_line_count=1, success=True)

            markers = [line for line in recipe.splitlines() if line.startswith("# step: ")]
            total = len(markers)
            emitted: list[str] = []
            for i, marker in enumerate(markers, start=1):
                line = f"step {i}/{total}: {marker[len('# step: '):]}"
                emitted.append(line)
                log_sink(line)
                if self.config.fail_at_step is not None and i >= self.config.fail_at_step:
                    raise BuildFailed(f"injected failure at step {i}", log_tail=emitted)

            files: dict[str, bytes] = {}
            context = Path(context_path)
            for path in sorted(context.rglob("*")):
                if path.is_file() and ".git" not in path.relative_to(context).parts:
                    files[str(path.relative_to(context))] = path.read_bytes()
            image = SimImage(image_id=image_id, recipe=recipe, files=files)
            with self._lock:
                self._images[image_id] = image
                self._refs[str(ref)] = image_id
                self.ledger.append({"op": "build", "ref": str(ref), "image_id": image_id, "cached": False})
            return BuildResult(image_id=image_id, log_line_count=total, success=True)

    def _allocate_port(self) -> int:
        lo, hi = self.config.port_range
        port = self._next_port
        if port > hi:
            port = lo
        self._next_port = port + 1
        return port

    def create_session(self, ref: ImageRef, limits: ResourceLimits, mounts: list[MountSpec], command: str | None = None) -> SessionHandle:
        image = self.image_for(ref)
        if self.config.max_cpu is not None and limits.cpu_cores > self.config.max_cpu:
            raise ResourceDenied(f"requested {limits.cpu_cores} cores, capacity {self.config.max_cpu}")
        if self.config.max_memory is not None and limits.memory_bytes > self.config.max_memory:
            raise ResourceDenied(f"requested {limits.memory_bytes} bytes, capacity {self.config.max_memory}")
        for mount in mounts:
            if not Path(mount.host_path).exists():
                raise StartFailed(f"mount host path missing: {mount.host_path}")
        with self._lock:
            self._session_counter += 1
            session_id = f"sim-{self._session_counter}"
            port = self._allocate_port()
        handle = SessionHandle(
            session_id=session_id,
            image_ref=ref,
            internal_endpoint=f"127.0.0.1:{port}",
            status=SessionStatus.STARTING,
        )
        scratch = self._scratch / "sessions" / session_id
        scratch.mkdir(parents=True, exist_ok=True)
        sess = _SimSession(handle, image, mounts, limits, command or "", scratch)
        if self.config.serve_sessions:
            handler = type("Handler", (_CannedPageHandler,), {"session_id": session_id})
            try:
                server = ThreadingHTTPServer(("127.0.0.1", port), handler)
            except OSError:
                with self._lock:
                    port = self._allocate_port()
                handle.internal_endpoint = f"127.0.0.1:{port}"
                server = ThreadingHTTPServer(("127.0.0.1", port), handler)
            server.daemon_threads = True
            threading.Thread(target=lambda: server.serve_forever(poll_interval=0.05), daemon=True).start()
            sess.http_server = server
        with self._lock:
            self._sessions[session_id] = sess
        sess.record_status(SessionStatus.UP)
        return handle

    def stop_session(self, handle: SessionHandle) -> SessionHandle:
        sess = self.session(handle)
        if sess.handle.status is not SessionStatus.STOPPED:
            if sess.http_server is not None:
                sess.http_server.shutdown()
                sess.http_server.server_close()
                sess.http_server = None
            sess.record_status(SessionStatus.STOPPED)
        return sess.handle

    def destroy_session(self, handle: SessionHandle) -> None:
        sess = self.session(handle)
        if sess.http_server is not None:
            sess.http_server.shutdown()
            sess.http_server.server_close()
        with self._lock:
            del self._sessions[handle.session_id]
        handle.status = SessionStatus.STOPPED

    def export_image(self, ref: ImageRef) -> bytes:
        image = self.image_for(ref)
        layer = _deterministic_tar(image.files)
        config = json.dumps(
            {"imageId": image.image_id, "recipe": image.recipe},
            sort_keys=True,
        ).encode("utf-8")
        manifest = json.dumps(
            {
                "config": {"digest": f"sha256:{_sha256(config)}"},
                "layers": [{"digest": f"sha256:{_sha256(layer)}"}],
                "annotations": {"org.rrp.ref.repository": ref.repository, "org.rrp.ref.tag": ref.tag},
            },
            sort_keys=True,
        ).encode("utf-8")
        index = json.dumps(
            {"schemaVersion": 2, "manifests": [{"digest": f"sha256:{_sha256(manifest)}"}]},
            sort_keys=True,
        ).encode("utf-8")
        entries = {
            "oci-layout": json.dumps({"imageLayoutVersion": "1.0.0"}).encode("utf-8"),
            "index.json": index,
            f"blobs/sha256/{_sha256(manifest)}": manifest,
            f"blobs/sha256/{_sha256(config)}": config,
            f"blobs/sha256/{_sha256(layer)}": layer,
        }
        return _deterministic_tar(entries)

    def import_image(self, data: bytes) -> ImageRef:
        if self.config.fail_import:
            raise CorruptArchive("injected import fault")
        try:
            with tarfile.open(fileobj=io.BytesIO(data)) as tar:
                members = {m.name: tar.extractfile(m).read() for m in tar.getmembers() if m.isfile()}
            index = json.loads(members["index.json"])
            manifest_digest = index["manifests"][0]["digest"].split(":", 1)[1]
            manifest = json.loads(members[f"blobs/sha256/{manifest_digest}"])
            config_digest = manifest["config"]["digest"].split(":", 1)[1]
            config = json.loads(members[f"blobs/sha256/{config_digest}"])
            layer_digest = manifest["layers"][0]["digest"].split(":", 1)[1]
            layer = members[f"blobs/sha256/{layer_digest}"]
            files: dict[str, bytes] = {}
            with tarfile.open(fileobj=io.BytesIO(layer)) as tar:
                for member in tar.getmembers():
                    if member.isfile():
                        files[member.name] = tar.extractfile(member).read()
            ref = ImageRef(
                repository=manifest["annotations"]["org.rrp.ref.repository"],
                tag=manifest["annotations"]["org.rrp.ref.tag"],
            )
        except (KeyError, IndexError, ValueError, json.JSONDecodeError, tarfile.TarError) as exc:
            raise CorruptArchive(f"not a valid image archive: {exc}") from exc
        image = SimImage(image_id=config["imageId"], recipe=config["recipe"], files=files)
        with self._lock:
            self._images[image.image_id] = image
            self._refs[str(ref)] = image.image_id
            self.ledger.append({"op": "import", "ref": str(ref), "image_id": image.image_id})
        return ref

    def push_image(self, ref: ImageRef, registry_url: str, credentials: str | None = None) -> PushReceipt:
        if self.config.fail_auth:
            raise AuthFailed(f"registry {registry_url} rejected credentials")
        image = self.image_for(ref)
        remote_ref = f"{registry_url.rstrip('/')}/{ref.repository}:{ref.tag}"
        self.registry.put(remote_ref, ref, image)
        with self._lock:
            self.ledger.append({"op": "push", "ref": str(ref), "registry": registry_url, "remote_ref": remote_ref})
        return PushReceipt(remote_ref=remote_ref, registry_url=registry_url)

    def pull_image(self, remote_ref: str) -> ImageRef:
        hit = self.registry.get(remote_ref)
        if hit is None:
            raise ImagePullFailed(f"image not found in registry: {remote_ref}")
        ref, image = hit
        with self._lock:
            self._images[image.image_id] = image
            self._refs[str(ref)] = image.image_id
            self.ledger.append({"op": "pull", "remote_ref": remote_ref, "image_id": image.image_id})
        return ref

    def run_python(self, handle: SessionHandle, script_path: str, args: tuple[str, ...] = ()) -> tuple[int, list[str]]:
        sess = self.session(handle)
        if sess.handle.status is not SessionStatus.UP:
            raise StartFailed(f"session {handle.session_id} is not up")
        project = sess.project_dir()
        if not script_path.startswith("/project/"):
            raise FileNotFoundError(script_path)
        host_script = project / script_path[len("/project/"):]
        if not host_script.is_file():
            raise FileNotFoundError(script_path)
        env = {
            **os.environ,
            "RRP_PROJECT_DIR": str(project),
            "RRP_DATA_DIR": str(sess.data_dir()),
            "RRP_RESULTS_DIR": str(sess.results_dir()),
        }
        proc = subprocess.run(
            [sys.executable, str(host_script), *args],
            cwd=project,
            env=env,
            capture_output=True,
            text=True,
        )
        lines = [line for line in (proc.stdout + proc.stderr).splitlines() if line]
        return proc.returncode, lines
