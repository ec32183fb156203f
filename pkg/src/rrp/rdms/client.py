"""RDMS client: login, dataset resolution, read-only materialization,
result registration, and DOI publishing."""

from __future__ import annotations

import base64
from pathlib import Path

import httpx

from ..errors import (
    AuthFailed,
    ChecksumMismatch,
    DatasetNotFound,
    EmptyDataset,
    FetchFailed,
    ObjectNotFound,
    RdmsError,
    ServerUnreachable,
    TargetNotWritable,
)
from ..fsutil import make_tree_readonly, sha256_bytes
from ..project_spec import DatasetBinding
from . import DatasetDescriptor, DoiRecord, FileEntry, MountReport, SessionToken

MOUNT_ROOT = "openbis"


def fetch_url(url: str, timeout: float = 60.0) -> bytes:
    try:
        resp = httpx.get(url, timeout=timeout, follow_redirects=True)
    except httpx.HTTPError as exc:
        raise FetchFailed(f"cannot fetch {url}: {exc}", url=url) from exc
    if resp.status_code != 200:
        raise FetchFailed(f"{url} returned {resp.status_code}", url=url)
    return resp.content


class RdmsClient:
    def __init__(self, server_url: str, http: httpx.Client | None = None):
        self.server_url = server_url.rstrip("/")
        self._http = http or httpx.Client(timeout=60.0)

    # -- plumbing ---------------------------------------------------------------

    def _request(self, method: str, path: str, token: SessionToken | None = None, **kwargs) -> httpx.Response:
        headers = kwargs.pop("headers", {})
        if token is not None:
            headers["Authorization"] = f"Bearer {token.token}"
        try:
            resp = self._http.request(method, self.server_url + path, headers=headers, **kwargs)
        except httpx.HTTPError as exc:
            raise ServerUnreachable(f"RDMS at {self.server_url} unreachable: {exc}") from exc
        if resp.status_code == 401:
            raise AuthFailed(resp.json().get("message", "authentication failed"))
        return resp

    # -- operations -------------------------------------------------------------

    def login(self, user: str, password: str) -> SessionToken:
        resp = self._request("POST", "/login", json={"user": user, "password": password})
        doc = resp.json()
        return SessionToken(token=doc["token"], user_id=doc["userId"], expires_at=doc["expiresAt"])

    def resolve_dataset(self, token: SessionToken, perm_id: str) -> DatasetDescriptor:
        resp = self._request("GET", f"/datasets/{perm_id}", token=token)
        if resp.status_code == 404:
            raise DatasetNotFound(perm_id)
        doc = resp.json()
        files = tuple(
            FileEntry(relative_path=f["path"], byte_size=f["size"], content_hash=f["sha256"])
            for f in doc["files"]
        )
        return DatasetDescriptor(
            perm_id=doc["permId"],
            files=files,
            total_bytes=doc["totalBytes"],
            metadata=dict(doc.get("metadata", {})),
        )

    def read_file(self, token: SessionToken, perm_id: str, path: str, byte_range: tuple[int, int] | None = None) -> bytes:
        headers = {}
        if byte_range is not None:
            headers["Range"] = f"bytes={byte_range[0]}-{byte_range[1]}"
        resp = self._request("GET", f"/datasets/{perm_id}/files/{path}", token=token, headers=headers)
        if resp.status_code == 404:
            raise DatasetNotFound(f"{perm_id}/{path}")
        return resp.content

    def mount_dataset(self, token: SessionToken, binding: DatasetBinding, workspace_root: Path) -> MountReport:
        """Materialize the dataset under `<workspaceRoot>/openbis/<folder>/`,
        verify every file hash, then mark the subtree read-only."""
        workspace_root = Path(workspace_root)
        if not workspace_root.is_dir():
            raise TargetNotWritable(f"workspace root missing: {workspace_root}")
        descriptor = self.resolve_dataset(token, binding.perm_id)
        target = workspace_root / MOUNT_ROOT / binding.folder
        try:
            target.mkdir(parents=True, exist_ok=True)
        except OSError as exc:
            raise TargetNotWritable(f"cannot create {target}: {exc}") from exc

        total = 0
        for entry in descriptor.files:
            data = self.read_file(token, binding.perm_id, entry.relative_path)
            actual = sha256_bytes(data)
            if actual != entry.content_hash:
                raise ChecksumMismatch(
                    f"{binding.perm_id}/{entry.relative_path}: expected {entry.content_hash}, got {actual}",
                    path=entry.relative_path,
                )
            dest = target / entry.relative_path
            dest.parent.mkdir(parents=True, exist_ok=True)
            dest.write_bytes(data)
            total += len(data)
        make_tree_readonly(target)
        return MountReport(
            perm_id=binding.perm_id,
            folder=binding.folder,
            local_path=target,
            files_materialized=len(descriptor.files),
            bytes=total,
            verified=True,
        )

    def register_dataset(self, token: SessionToken, files: list[tuple[str, bytes]], metadata: dict[str, str] | None = None) -> str:
        if not files:
            raise EmptyDataset("a dataset needs at least one file")
        payload = {
            "metadata": metadata or {},
            "files": [
                {"path": path, "data": base64.b64encode(data).decode("ascii")}
                for path, data in files
            ],
        }
        resp = self._request("POST", "/datasets", token=token, json=payload)
        if resp.status_code != 201:
            doc = resp.json()
            message = doc.get("message", "registration rejected")
            if doc.get("error") == "EmptyDataset":
                raise EmptyDataset(message)
            raise RdmsError(message)
        return resp.json()["permId"]

    def publish(self, token: SessionToken, object_ref: str) -> DoiRecord:
        resp = self._request("POST", "/publish", token=token, json={"objectRef": object_ref})
        if resp.status_code == 404:
            raise ObjectNotFound(object_ref)
        doc = resp.json()
        return DoiRecord(doi=doc["doi"], object_ref=doc["objectRef"], resolved_url=doc["resolvedUrl"])

    def get_publication(self, token: SessionToken, object_ref: str) -> DoiRecord | None:
        resp = self._request("GET", f"/publications/{object_ref}", token=token)
        if resp.status_code == 404:
            return None
        doc = resp.json()
        return DoiRecord(doi=doc["doi"], object_ref=doc["objectRef"], resolved_url=doc["resolvedUrl"])
