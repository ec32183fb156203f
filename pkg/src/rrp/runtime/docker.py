"""Container-daemon backend speaking the engine HTTP API.

Talks to a Docker-compatible daemon over its local socket (or a TCP
endpoint) without any privileged helper binaries. Endpoint selection:
`RRP_RUNTIME_ENDPOINT`, e.g. `unix:///var/run/docker.sock` or
`http://127.0.0.1:2375`.
"""

from __future__ import annotations

import base64
import io
import json
import os
import struct
import tarfile
import threading
from pathlib import Path

import httpx

from ..build_plan import ImageRef
from ..errors import (
    AuthFailed,
    BuildFailed,
    CorruptArchive,
    DaemonUnavailable,
    ImageNotFound,
    ImagePullFailed,
    RegistryUnreachable,
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

DEFAULT_ENDPOINT = "unix:///var/run/docker.sock"
SESSION_PORT = "8888/tcp"


def daemon_endpoint() -> str:
    return os.environ.get("RRP_RUNTIME_ENDPOINT") or DEFAULT_ENDPOINT


def daemon_available(endpoint: str | None = None) -> bool:
    try:
        DockerRuntime(endpoint).ping()
        return True
    except DaemonUnavailable:
        return False


def _context_tar(context_path: Path, recipe: str) -> bytes:
    buf = io.BytesIO()
    context = Path(context_path)
    with tarfile.open(fileobj=buf, mode="w") as tar:
        info = tarfile.TarInfo(name="Dockerfile")
        data = recipe.encode("utf-8")
        info.size = len(data)
        tar.addfile(info, io.BytesIO(data))
        for path in sorted(context.rglob("*")):
            rel = path.relative_to(context)
            if ".git" in rel.parts or not path.is_file():
                continue
            tar.add(path, arcname=str(rel))
    return buf.getvalue()


class DockerRuntime(RuntimeAdapter):
    def __init__(self, endpoint: str | None = None):
        endpoint = endpoint or daemon_endpoint()
        if endpoint.startswith("unix://"):
            transport = httpx.HTTPTransport(uds=endpoint[len("unix://"):])
            self._client = httpx.Client(transport=transport, base_url="http://docker", timeout=600)
        else:
            self._client = httpx.Client(base_url=endpoint, timeout=600)
        self._lock = threading.Lock()
        self._containers: dict[str, str] = {}  # session id -> container id
        self._build_locks: dict[str, threading.Lock] = {}

    def _request(self, method: str, url: str, **kwargs) -> httpx.Response:
        try:
            return self._client.request(method, url, **kwargs)
        except httpx.TransportError as exc:
            raise DaemonUnavailable(f"container daemon unreachable: {exc}") from exc

    def ping(self) -> None:
        resp = self._request("GET", "/_ping")
        if resp.status_code != 200:
            raise DaemonUnavailable(f"daemon ping returned {resp.status_code}")

    # -- images ----------------------------------------------------------------

    def build_image(self, recipe: str, context_path: Path, ref: ImageRef, log_sink: LogSink) -> BuildResult:
        with self._lock:
            ref_lock = self._build_locks.setdefault(str(ref), threading.Lock())
        with ref_lock:
            payload = _context_tar(context_path, recipe)
            count = 0
            tail: list[str] = []
            error: str | None = None
            with self._client.stream(
                "POST",
                "/build",
                params={"t": str(ref), "dockerfile": "Dockerfile", "rm": "1"},
                content=payload,
                headers={"Content-Type": "application/x-tar"},
            ) as resp:
                if resp.status_code != 200:
                    raise BuildFailed(f"build request rejected: {resp.status_code}")
                for raw in resp.iter_lines():
                    if not raw.strip():
                        continue
                    try:
                        msg = json.loads(raw)
                    except json.JSONDecodeError:
                        continue
                    if "stream" in msg:
                        for line in msg["stream"].splitlines():
                            if line.strip():
                                count += 1
                                tail.append(line)
                                log_sink(line)
                    if "error" in msg:
                        error = msg["error"]
            if error:
                raise BuildFailed(error, log_tail=tail)
            inspect = self._request("GET", f"/images/{ref}/json")
            if inspect.status_code != 200:
                raise BuildFailed(f"built image {ref} not found after build")
            return BuildResult(image_id=inspect.json()["Id"], log_line_count=count, success=True)

    def export_image(self, ref: ImageRef) -> bytes:
        resp = self._request("GET", f"/images/{ref}/get")
        if resp.status_code == 404:
            raise ImageNotFound(str(ref))
        return resp.content

    def import_image(self, data: bytes) -> ImageRef:
        resp = self._request("POST", "/images/load", content=data, headers={"Content-Type": "application/x-tar"})
        if resp.status_code != 200:
            raise CorruptArchive(f"image load failed: {resp.text}")
        loaded: str | None = None
        for raw in resp.text.splitlines():
            try:
                msg = json.loads(raw)
            except json.JSONDecodeError:
                continue
            stream = msg.get("stream", "")
            if "Loaded image:" in stream:
                loaded = stream.split("Loaded image:", 1)[1].strip()
        if not loaded or ":" not in loaded:
            raise CorruptArchive("archive did not announce a loaded image reference")
        repository, tag = loaded.rsplit(":", 1)
        return ImageRef(repository=repository, tag=tag)

    def push_image(self, ref: ImageRef, registry_url: str, credentials: str | None = None) -> PushReceipt:
        registry = registry_url.replace("https://", "").replace("http://", "").rstrip("/")
        remote = f"{registry}/{ref.repository}"
        tag_resp = self._request("POST", f"/images/{ref}/tag", params={"repo": remote, "tag": ref.tag})
        if tag_resp.status_code == 404:
            raise ImageNotFound(str(ref))
        headers = {}
        if credentials:
            user, _, password = credentials.partition(":")
            headers["X-Registry-Auth"] = base64.b64encode(
                json.dumps({"username": user, "password": password, "serveraddress": registry}).encode()
            ).decode()
        resp = self._request("POST", f"/images/{remote}/push", params={"tag": ref.tag}, headers=headers)
        body = resp.text
        if resp.status_code != 200 or '"error"' in body:
            if "auth" in body.lower() or "unauthorized" in body.lower():
                raise AuthFailed(f"push to {registry} rejected")
            raise RegistryUnreachable(f"push to {registry} failed: {body[:200]}")
        return PushReceipt(remote_ref=f"{remote}:{ref.tag}", registry_url=registry_url)

    def pull_image(self, remote_ref: str) -> ImageRef:
        resp = self._request("POST", "/images/create", params={"fromImage": remote_ref})
        if resp.status_code != 200 or '"error"' in resp.text:
            raise ImagePullFailed(f"pull failed for {remote_ref}")
        repository, tag = remote_ref.rsplit(":", 1)
        return ImageRef(repository=repository, tag=tag)

    # -- sessions ---------------------------------------------------------------

    def create_session(self, ref: ImageRef, limits: ResourceLimits, mounts: list[MountSpec], command: str | None = None) -> SessionHandle:
        binds = [
            f"{Path(m.host_path).resolve()}:{m.container_path}:{'ro' if m.read_only else 'rw'}"
            for m in mounts
        ]
        body = {
            "Image": str(ref),
            "ExposedPorts": {SESSION_PORT: {}},
            "HostConfig": {
                "Binds": binds,
                "Memory": limits.memory_bytes,
                "NanoCpus": int(limits.cpu_cores * 1e9),
                "PortBindings": {SESSION_PORT: [{"HostIp": "127.0.0.1", "HostPort": ""}]},
            },
        }
        if command:
            body["Cmd"] = ["/bin/sh", "-c", command]
        resp = self._request("POST", "/containers/create", json=body)
        if resp.status_code == 404:
            raise ImageNotFound(str(ref))
        if resp.status_code not in (200, 201):
            raise StartFailed(f"container create failed: {resp.text}")
        container_id = resp.json()["Id"]
        start = self._request("POST", f"/containers/{container_id}/start")
        if start.status_code not in (204, 304):
            raise StartFailed(f"container start failed: {start.text}")
        inspect = self._request("GET", f"/containers/{container_id}/json").json()
        ports = inspect["NetworkSettings"]["Ports"].get(SESSION_PORT) or []
        host_port = ports[0]["HostPort"] if ports else "0"
        session_id = container_id[:12]
        with self._lock:
            self._containers[session_id] = container_id
        return SessionHandle(
            session_id=session_id,
            image_ref=ref,
            internal_endpoint=f"127.0.0.1:{host_port}",
            status=SessionStatus.UP,
        )

    def _container(self, handle: SessionHandle) -> str:
        with self._lock:
            container = self._containers.get(handle.session_id)
        if container is None:
            raise UnknownSession(handle.session_id)
        return container

    def stop_session(self, handle: SessionHandle) -> SessionHandle:
        container = self._container(handle)
        resp = self._request("POST", f"/containers/{container}/stop", params={"t": 5})
        if resp.status_code not in (204, 304):
            raise UnknownSession(handle.session_id)
        handle.status = SessionStatus.STOPPED
        return handle

    def destroy_session(self, handle: SessionHandle) -> None:
        container = self._container(handle)
        self._request("DELETE", f"/containers/{container}", params={"force": "1"})
        with self._lock:
            self._containers.pop(handle.session_id, None)
        handle.status = SessionStatus.STOPPED

    def run_python(self, handle: SessionHandle, script_path: str, args: tuple[str, ...] = ()) -> tuple[int, list[str]]:
        container = self._container(handle)
        resp = self._request(
            "POST",
            f"/containers/{container}/exec",
            json={"Cmd": ["python3", script_path, *args], "AttachStdout": True, "AttachStderr": True},
        )
        if resp.status_code not in (200, 201):
            raise StartFailed(f"exec create failed: {resp.text}")
        exec_id = resp.json()["Id"]
        out = self._request("POST", f"/exec/{exec_id}/start", json={"Detach": False, "Tty": False})
        lines = [line for line in _demux_stream(out.content).splitlines() if line]
        inspect = self._request("GET", f"/exec/{exec_id}/json").json()
        return inspect.get("ExitCode", 1) or 0, lines


def _demux_stream(raw: bytes) -> str:
    """Docker attach framing: 8-byte header (type, 3 pad, big-endian size)."""
    out = []
    offset = 0
    while offset + 8 <= len(raw):
        _, size = struct.unpack(">BxxxI", raw[offset:offset + 8])
        out.append(raw[offset + 8:offset + 8 + size])
        offset += 8 + size
    return b"".join(out).decode("utf-8", errors="replace")
