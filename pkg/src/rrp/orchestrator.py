"""Project lifecycle owner: state machine, workspaces, journals, sessions,
shares, result harvesting, and archival to the RDMS.

One orchestrator process owns all records. Persistence is the per-project
journal plus a record snapshot inside each workspace directory, reloaded on
restart; mutations of one project are serialized through its own lock.
"""

from __future__ import annotations

import base64
import json
import re
import secrets
import tempfile
import threading
import time
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from datetime import datetime, timezone
from enum import Enum
from pathlib import Path

from . import gitio
from .build_plan import ImageRef, image_reference, plan_build, render_recipe
from .config import PlatformConfig
from .errors import (
    AuthFailed,
    DirtyWorkspace,
    InvalidState,
    NameTaken,
    NoActiveSession,
    NotARepository,
    RdmsError,
    RepositoryDirty,
    ResultNotFound,
    RrpError,
    ServerUnreachable,
    ShareNotFound,
    UnknownProject,
)
from .fsutil import force_rmtree, list_tree, sha256_file, utcnow_iso
from .journal import EventKind, Journal, JournalSubscription
from .project_spec import (
    DatasetBinding,
    ProjectSource,
    ProjectSpec,
    WorkingTree,
    load_project_source,
    load_project_spec,
    serialize_datasets_manifest,
    validate_layout,
)
from .rdms import RdmsClient, SessionToken
from .runtime import MountSpec, ResourceLimits, RuntimeAdapter, SessionHandle, SessionStatus


class ProjectStatus(Enum):
    NEW = "New"
    CLONING = "Cloning"
    PLANNING = "Planning"
    BUILDING = "Building"
    READY = "Ready"
    RUNNING = "Running"
    STOPPED = "Stopped"
    FAILED = "Failed"
    DELETED = "Deleted"


# The full set of legal edges; every status change funnels through
# _transition, which refuses anything not listed here.
TRANSITIONS: dict[ProjectStatus, set[ProjectStatus]] = {
    ProjectStatus.NEW: {ProjectStatus.CLONING},
    ProjectStatus.CLONING: {ProjectStatus.PLANNING, ProjectStatus.FAILED},
    ProjectStatus.PLANNING: {ProjectStatus.BUILDING, ProjectStatus.FAILED},
    ProjectStatus.BUILDING: {ProjectStatus.READY, ProjectStatus.FAILED},
    ProjectStatus.READY: {ProjectStatus.RUNNING, ProjectStatus.DELETED},
    ProjectStatus.RUNNING: {ProjectStatus.STOPPED},
    ProjectStatus.STOPPED: {ProjectStatus.RUNNING, ProjectStatus.DELETED},
    ProjectStatus.FAILED: {ProjectStatus.DELETED},
    ProjectStatus.DELETED: set(),
}

DELETABLE = {ProjectStatus.READY, ProjectStatus.STOPPED, ProjectStatus.FAILED}
SHAREABLE = {ProjectStatus.READY, ProjectStatus.RUNNING, ProjectStatus.STOPPED}
ARCHIVABLE = {ProjectStatus.READY, ProjectStatus.STOPPED}

SHARE_ID_BYTES = 16  # 128 random bits -> 26 base32 chars


def new_share_id() -> str:
    raw = secrets.token_bytes(SHARE_ID_BYTES)
    return base64.b32encode(raw).decode("ascii").rstrip("=").lower()


@dataclass(frozen=True)
class ResultEntry:
    relative_path: str
    byte_size: int
    modified_at: str
    content_hash: str

    def to_dict(self) -> dict:
        return {
            "relativePath": self.relative_path,
            "byteSize": self.byte_size,
            "modifiedAt": self.modified_at,
            "contentHash": self.content_hash,
        }


@dataclass(frozen=True)
class ShareRecord:
    share_id: str
    source_project_id: str
    commit_id: str
    spec_digest: str
    image_ref: ImageRef
    created_at: str
    # Snapshot needed to open the share even after the source is deleted.
    repo_url: str = ""
    credentials: str | None = None
    project_name: str = ""
    datasets: tuple[DatasetBinding, ...] = ()

    def to_dict(self) -> dict:
        return {
            "shareId": self.share_id,
            "sourceProjectId": self.source_project_id,
            "commitId": self.commit_id,
            "specDigest": self.spec_digest,
            "imageRef": {"repository": self.image_ref.repository, "tag": self.image_ref.tag},
            "createdAt": self.created_at,
        }


@dataclass(frozen=True)
class SessionInfo:
    project_id: str
    session_id: str
    public_path: str
    internal_endpoint: str
    resources: ResourceLimits


@dataclass
class ProjectRecord:
    project_id: str
    name: str
    owner: str
    source: ProjectSource
    workspace: Path
    status: ProjectStatus = ProjectStatus.NEW
    spec: ProjectSpec | None = None
    image_ref: ImageRef | None = None
    session: SessionHandle | None = None
    resources: ResourceLimits | None = None
    failure: str | None = None
    remote_image: str | None = None
    created_at: str = field(default_factory=utcnow_iso)
    lock: threading.RLock = field(default_factory=threading.RLock, repr=False)
    condition: threading.Condition = field(default_factory=threading.Condition, repr=False)

    @property
    def project_dir(self) -> Path:
        return self.workspace / "project"

    @property
    def results_dir(self) -> Path:
        return self.workspace / "results"

    @property
    def openbis_dir(self) -> Path:
        return self.workspace / "openbis"


class Orchestrator:
    def __init__(self, config: PlatformConfig, adapter: RuntimeAdapter, rdms: RdmsClient | None = None):
        self.config = config
        self.adapter = adapter
        self.data_dir = Path(config.data_dir)
        self.projects_dir = self.data_dir / "projects"
        self.shares_dir = self.data_dir / "shares"
        self.projects_dir.mkdir(parents=True, exist_ok=True)
        self.shares_dir.mkdir(parents=True, exist_ok=True)

        self._registry_lock = threading.Lock()
        self._records: dict[str, ProjectRecord] = {}
        self._journals: dict[str, Journal] = {}
        self._shares: dict[str, ShareRecord] = {}

        self._clients: dict[str, RdmsClient] = {}
        self._tokens: dict[str, SessionToken] = {}
        if rdms is not None:
            self._clients[rdms.server_url] = rdms

        self._build_executor = ThreadPoolExecutor(
            max_workers=max(1, config.build_concurrency), thread_name_prefix="rrp-build"
        )
        self._pipelines: list[threading.Thread] = []
        self._load_existing()

    # -- persistence -------------------------------------------------------------

    def _record_path(self, project_id: str) -> Path:
        return self.projects_dir / project_id / "record.json"

    def _persist(self, record: ProjectRecord) -> None:
        doc = {
            "projectId": record.project_id,
            "name": record.name,
            "owner": record.owner,
            "status": record.status.value,
            "createdAt": record.created_at,
            "failure": record.failure,
            "remoteImage": record.remote_image,
            "source": {
                "repoUrl": record.source.repo_url,
                "ref": record.source.ref,
                "credentials": record.source.credentials,
            },
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
            "spec": _spec_to_dict(record.spec) if record.spec else None,
        }
        path = self._record_path(record.project_id)
        tmp = path.with_suffix(".tmp")
        tmp.write_text(json.dumps(doc, indent=2, sort_keys=True))
        tmp.replace(path)

    def _load_existing(self) -> None:
        for workspace in sorted(self.projects_dir.iterdir() if self.projects_dir.is_dir() else []):
            record_path = workspace / "record.json"
            if not record_path.is_file():
                continue
            doc = json.loads(record_path.read_text())
            record = ProjectRecord(
                project_id=doc["projectId"],
                name=doc["name"],
                owner=doc["owner"],
                source=ProjectSource(
                    repo_url=doc["source"]["repoUrl"],
                    ref=doc["source"].get("ref"),
                    credentials=doc["source"].get("credentials"),
                ),
                workspace=workspace,
                status=ProjectStatus(doc["status"]),
                failure=doc.get("failure"),
                remote_image=doc.get("remoteImage"),
                created_at=doc.get("createdAt", utcnow_iso()),
            )
            if doc.get("imageRef"):
                record.image_ref = ImageRef(doc["imageRef"]["repository"], doc["imageRef"]["tag"])
            if doc.get("resources"):
                record.resources = ResourceLimits(doc["resources"]["cpuCores"], doc["resources"]["memoryBytes"])
            if doc.get("spec"):
                record.spec = _spec_from_dict(doc["spec"], record.source, workspace / "project")
            self._records[record.project_id] = record
            self._journals[record.project_id] = Journal(workspace / "journal.log")
            # Sessions do not survive a restart; mid-pipeline projects are
            # failed rather than resumed.
            if record.status is ProjectStatus.RUNNING:
                record.session = None
                self._transition(record, ProjectStatus.STOPPED)
            elif record.status in (ProjectStatus.NEW, ProjectStatus.CLONING, ProjectStatus.PLANNING, ProjectStatus.BUILDING):
                record.failure = "platform restarted during build"
                if record.status is ProjectStatus.NEW:
                    self._transition(record, ProjectStatus.CLONING)
                self._transition(record, ProjectStatus.FAILED)
        for share_path in sorted(self.shares_dir.glob("*.json")):
            doc = json.loads(share_path.read_text())
            share = ShareRecord(
                share_id=doc["shareId"],
                source_project_id=doc["sourceProjectId"],
                commit_id=doc["commitId"],
                spec_digest=doc["specDigest"],
                image_ref=ImageRef(doc["imageRef"]["repository"], doc["imageRef"]["tag"]),
                created_at=doc["createdAt"],
                repo_url=doc.get("repoUrl", ""),
                credentials=doc.get("credentials"),
                project_name=doc.get("projectName", ""),
                datasets=tuple(
                    DatasetBinding(d["server"], d["permId"], d["folder"]) for d in doc.get("datasets", [])
                ),
            )
            self._shares[share.share_id] = share

    # -- RDMS access ---------------------------------------------------------------

    def _client_for(self, server_url: str) -> RdmsClient:
        url = server_url.rstrip("/")
        with self._registry_lock:
            if url not in self._clients:
                self._clients[url] = RdmsClient(url)
            return self._clients[url]

    def _token_for(self, client: RdmsClient) -> SessionToken:
        with self._registry_lock:
            token = self._tokens.get(client.server_url)
        if token is None:
            token = client.login(self.config.rdms_user, self.config.rdms_password)
            with self._registry_lock:
                self._tokens[client.server_url] = token
        return token

    def _rdms_call(self, client: RdmsClient, fn):
        """Run fn(token); one re-login on an expired/invalid token."""
        try:
            return fn(self._token_for(client))
        except AuthFailed:
            with self._registry_lock:
                self._tokens.pop(client.server_url, None)
            return fn(self._token_for(client))

    def rdms_client(self) -> RdmsClient:
        return self._client_for(self.config.rdms_url)

    # -- registry helpers ------------------------------------------------------------

    def _get(self, project_id: str) -> ProjectRecord:
        with self._registry_lock:
            record = self._records.get(project_id)
        if record is None:
            raise UnknownProject(f"unknown project {project_id!r}")
        return record

    def get_project(self, project_id: str) -> ProjectRecord:
        return self._get(project_id)

    def journal(self, project_id: str) -> Journal:
        with self._registry_lock:
            journal = self._journals.get(project_id)
        if journal is None:
            raise UnknownProject(f"unknown project {project_id!r}")
        return journal

    def list_projects(self, owner: str | None = None) -> list[ProjectRecord]:
        with self._registry_lock:
            records = list(self._records.values())
        if owner is not None:
            records = [r for r in records if r.owner == owner]
        return sorted(records, key=lambda r: r.created_at)

    def _transition(self, record: ProjectRecord, status: ProjectStatus) -> None:
        with record.lock:
            if status not in TRANSITIONS[record.status]:
                raise InvalidState(f"illegal transition {record.status.value} -> {status.value}")
            record.status = status
            self._persist(record)
        self._journals[record.project_id].append(EventKind.STATUS, status.value)
        with record.condition:
            record.condition.notify_all()

    def wait_for(self, project_id: str, statuses: set[ProjectStatus], timeout: float = 60.0) -> ProjectRecord:
        record = self._get(project_id)
        deadline = threading.Event()
        with record.condition:
            remaining = timeout
            while record.status not in statuses and remaining > 0:
                start = _monotonic()
                record.condition.wait(timeout=min(remaining, 0.5))
                remaining -= _monotonic() - start
        if record.status not in statuses:
            raise TimeoutError(f"project {project_id} stuck in {record.status.value} after {timeout}s")
        return record

    # -- lifecycle -------------------------------------------------------------------

    def create_project(self, owner: str, source: ProjectSource, name: str) -> ProjectRecord:
        with self._registry_lock:
            for record in self._records.values():
                if record.owner == owner and record.name == name and record.status is not ProjectStatus.DELETED:
                    raise NameTaken(f"project name {name!r} already used by {owner}")
            project_id = f"p-{secrets.token_hex(6)}"
            workspace = self.projects_dir / project_id
            workspace.mkdir(parents=True)
            record = ProjectRecord(project_id=project_id, name=name, owner=owner, source=source, workspace=workspace)
            self._records[project_id] = record
            self._journals[project_id] = Journal(workspace / "journal.log")
        self._persist(record)
        self._spawn_pipeline(record, None)
        return record

    def _spawn_pipeline(self, record: ProjectRecord, share: "ShareRecord | None") -> None:
        thread = threading.Thread(target=self._pipeline, args=(record, share), daemon=True)
        with self._registry_lock:
            self._pipelines = [t for t in self._pipelines if t.is_alive()]
            self._pipelines.append(thread)
        thread.start()

    def _pipeline(self, record: ProjectRecord, share: ShareRecord | None) -> None:
        journal = self._journals[record.project_id]
        try:
            self._transition(record, ProjectStatus.CLONING)
            record.project_dir.mkdir(exist_ok=True)
            tree = load_project_source(record.source, record.project_dir)

            self._transition(record, ProjectStatus.PLANNING)
            report = validate_layout(tree)
            for finding in report.findings:
                if finding.severity == "warning":
                    journal.append(EventKind.ERROR, f"warning {finding.code}: {finding.message}")
            if not report.ok:
                bad = next(f for f in report.findings if f.severity == "error")
                raise RrpError(f"{bad.code}: {bad.message}")
            warnings: list[str] = []
            spec = load_project_spec(record.source, tree, warnings)
            for message in warnings:
                journal.append(EventKind.ERROR, f"warning: {message}")
            plan = plan_build(spec.environment, spec.spec_digest)
            recipe = render_recipe(plan)
            ref = image_reference(record.name, spec.spec_digest)
            with record.lock:
                record.spec = spec

            self._transition(record, ProjectStatus.BUILDING)
            if share is not None:
                if spec.spec_digest != share.spec_digest:
                    raise RrpError(
                        f"share {share.share_id} digest mismatch: repository history changed under commit {share.commit_id}"
                    )
                # Shared projects reuse the recorded image verbatim; the
                # builder is never invoked.
                with record.lock:
                    record.image_ref = share.image_ref
            else:
                future = self._build_executor.submit(
                    self.adapter.build_image,
                    recipe,
                    record.project_dir,
                    ref,
                    lambda line: journal.append(EventKind.BUILD_LOG, line),
                )
                result = future.result()
                with record.lock:
                    record.image_ref = ref if result.success else None
            record.openbis_dir.mkdir(exist_ok=True)
            record.results_dir.mkdir(exist_ok=True)
            for binding in spec.datasets:
                client = self._client_for(binding.server_url)
                report = self._rdms_call(client, lambda token: client.mount_dataset(token, binding, record.workspace))
                journal.append(
                    EventKind.BUILD_LOG,
                    f"mounted {binding.perm_id} at openbis/{binding.folder} ({report.files_materialized} files)",
                )
            with record.lock:
                record.resources = record.resources or ResourceLimits(self.config.default_cpu, self.config.default_memory)
            self._transition(record, ProjectStatus.READY)
        except Exception as exc:  # noqa: BLE001 - every failure lands in Failed
            with record.lock:
                record.failure = f"{type(exc).__name__}: {exc}"
            journal.append(EventKind.ERROR, record.failure)
            try:
                self._transition(record, ProjectStatus.FAILED)
            except InvalidState:
                pass

    def start_project(self, project_id: str, resources: ResourceLimits | None = None) -> SessionInfo:
        record = self._get(project_id)
        with record.lock:
            if record.status not in (ProjectStatus.READY, ProjectStatus.STOPPED):
                raise InvalidState(f"cannot start a project in state {record.status.value}")
            limits = resources or record.resources or ResourceLimits(self.config.default_cpu, self.config.default_memory)
            mounts = [MountSpec(host_path=record.project_dir, container_path="/project", read_only=False)]
            if record.spec is not None:
                for binding in record.spec.datasets:
                    mounts.append(
                        MountSpec(
                            host_path=record.openbis_dir / binding.folder,
                            container_path=f"/openbis/{binding.folder}",
                            read_only=True,
                        )
                    )
            record.results_dir.mkdir(exist_ok=True)
            mounts.append(MountSpec(host_path=record.results_dir, container_path="/results", read_only=False))
            session = self.adapter.create_session(record.image_ref, limits, mounts)
            record.session = session
            record.resources = limits
            self._transition(record, ProjectStatus.RUNNING)
            return SessionInfo(
                project_id=project_id,
                session_id=session.session_id,
                public_path=f"/session/{project_id}/",
                internal_endpoint=session.internal_endpoint,
                resources=limits,
            )

    def stop_project(self, project_id: str) -> ProjectRecord:
        record = self._get(project_id)
        with record.lock:
            if record.status is not ProjectStatus.RUNNING:
                raise InvalidState(f"cannot stop a project in state {record.status.value}")
            if record.session is not None:
                self.adapter.stop_session(record.session)
                self.adapter.destroy_session(record.session)
                record.session = None
            self._transition(record, ProjectStatus.STOPPED)
            entries = self._scan_results(record)
            self._journals[project_id].append(EventKind.RESULTS_CHANGED, f"{len(entries)} file(s) in results/")
            return record

    def delete_project(self, project_id: str) -> ProjectRecord:
        record = self._get(project_id)
        with record.lock:
            if record.status not in DELETABLE:
                raise InvalidState(f"cannot delete a project in state {record.status.value}")
            if record.session is not None:
                self.adapter.stop_session(record.session)
                self.adapter.destroy_session(record.session)
                record.session = None
            self._transition(record, ProjectStatus.DELETED)
            # Deleted records retain only identity, status, and the journal.
            for subdir in (record.project_dir, record.openbis_dir, record.results_dir):
                force_rmtree(subdir)
            record.spec = None
            record.image_ref = None
            record.failure = None
            self._persist(record)
            return record

    # -- results ------------------------------------------------------------------

    def _scan_results(self, record: ProjectRecord) -> list[ResultEntry]:
        root = record.results_dir
        if not root.is_dir():
            return []
        entries = []
        resolved_root = root.resolve()
        for rel in list_tree(root):
            path = root / rel
            # Confinement: anything resolving outside results/ is ignored.
            try:
                if not path.resolve().is_relative_to(resolved_root):
                    continue
            except OSError:
                continue
            stat = path.stat()
            entries.append(
                ResultEntry(
                    relative_path=rel,
                    byte_size=stat.st_size,
                    modified_at=_iso_from_epoch(stat.st_mtime),
                    content_hash=sha256_file(path),
                )
            )
        return entries

    def list_results(self, project_id: str) -> list[ResultEntry]:
        record = self._get(project_id)
        if record.status is ProjectStatus.DELETED:
            raise InvalidState("project is deleted")
        return self._scan_results(record)

    def _resolve_result(self, record: ProjectRecord, relative_path: str) -> Path:
        root = record.results_dir.resolve()
        candidate = (record.results_dir / relative_path).resolve()
        try:
            inside = candidate.is_relative_to(root)
        except ValueError:
            inside = False
        if not inside or not candidate.exists():
            raise ResultNotFound(f"no result entry {relative_path!r}")
        return candidate

    def read_result(self, project_id: str, relative_path: str) -> bytes:
        record = self._get(project_id)
        if record.status is ProjectStatus.DELETED:
            raise InvalidState("project is deleted")
        path = self._resolve_result(record, relative_path)
        if not path.is_file():
            raise ResultNotFound(f"{relative_path!r} is not a file")
        return path.read_bytes()

    def upload_result(self, project_id: str, relative_path: str, metadata: dict[str, str] | None = None) -> str:
        record = self._get(project_id)
        if record.status is ProjectStatus.DELETED:
            raise InvalidState("project is deleted")
        path = self._resolve_result(record, relative_path)
        if path.is_dir():
            files = [((path / rel).relative_to(record.results_dir).as_posix(), (path / rel).read_bytes()) for rel in list_tree(path)]
        else:
            files = [(path.relative_to(record.results_dir).as_posix(), path.read_bytes())]
        client = self.rdms_client()
        meta = {"projectName": record.name, "kind": "rrp-results", **(metadata or {})}
        try:
            perm_id = self._rdms_call(client, lambda token: client.register_dataset(token, files, meta))
        except (ServerUnreachable, AuthFailed) as exc:
            raise RdmsError(f"result upload failed: {exc}") from exc
        self._journals[project_id].append(EventKind.UPLOAD, perm_id)
        return perm_id

    # -- shares, archive ------------------------------------------------------------

    def _require_clean(self, record: ProjectRecord, error_cls) -> None:
        if not gitio.is_clean_tree(record.project_dir):
            raise error_cls(
                f"project {record.project_id} has uncommitted changes; commit them first"
            )

    def is_dirty(self, project_id: str) -> bool:
        record = self._get(project_id)
        if record.status is ProjectStatus.DELETED or not record.project_dir.is_dir():
            return False
        try:
            return not gitio.is_clean_tree(record.project_dir)
        except NotARepository:
            # checkout still in flight
            return False

    def create_share(self, project_id: str) -> ShareRecord:
        record = self._get(project_id)
        with record.lock:
            if record.status not in SHAREABLE:
                raise InvalidState(f"cannot share a project in state {record.status.value}")
            self._require_clean(record, RepositoryDirty)
            share = ShareRecord(
                share_id=new_share_id(),
                source_project_id=record.project_id,
                commit_id=record.spec.tree.commit_id,
                spec_digest=record.spec.spec_digest,
                image_ref=record.image_ref,
                created_at=utcnow_iso(),
                repo_url=record.source.repo_url,
                credentials=record.source.credentials,
                project_name=record.name,
                datasets=record.spec.datasets,
            )
        with self._registry_lock:
            self._shares[share.share_id] = share
        doc = {
            **share.to_dict(),
            "repoUrl": share.repo_url,
            "credentials": share.credentials,
            "projectName": share.project_name,
            "datasets": [b.to_dict() for b in share.datasets],
        }
        (self.shares_dir / f"{share.share_id}.json").write_text(json.dumps(doc, indent=2, sort_keys=True))
        self._journals[project_id].append(EventKind.SHARE, share.share_id)
        return share

    def get_share(self, share_id: str) -> ShareRecord:
        with self._registry_lock:
            share = self._shares.get(share_id)
        if share is None:
            raise ShareNotFound(f"unknown share {share_id!r}")
        return share

    def open_share(self, share_id: str, new_owner: str) -> ProjectRecord:
        share = self.get_share(share_id)
        source = ProjectSource(repo_url=share.repo_url, ref=share.commit_id, credentials=share.credentials)
        base = share.project_name or "shared-project"
        with self._registry_lock:
            taken = {
                record.name
                for record in self._records.values()
                if record.owner == new_owner and record.status is not ProjectStatus.DELETED
            }
        name = base
        counter = 2
        while name in taken:
            name = f"{base}-{counter}"
            counter += 1
        with self._registry_lock:
            project_id = f"p-{secrets.token_hex(6)}"
            workspace = self.projects_dir / project_id
            workspace.mkdir(parents=True)
            record = ProjectRecord(project_id=project_id, name=name, owner=new_owner, source=source, workspace=workspace)
            self._records[project_id] = record
            self._journals[project_id] = Journal(workspace / "journal.log")
        self._persist(record)
        self._spawn_pipeline(record, share)
        return record

    def archive_project(self, project_id: str) -> str:
        record = self._get(project_id)
        with record.lock:
            if record.status not in ARCHIVABLE:
                raise InvalidState(f"cannot archive a project in state {record.status.value}")
            self._require_clean(record, DirtyWorkspace)
            image_archive = self.adapter.export_image(record.image_ref)
            files: list[tuple[str, bytes]] = [("image.tar", image_archive)]
            with tempfile.TemporaryDirectory(prefix="rrp-archive-") as tmp:
                checkout = Path(tmp) / "code"
                gitio.extract_commit(record.project_dir, record.spec.tree.commit_id, checkout)
                for rel in list_tree(checkout):
                    files.append((f"code/{rel}", (checkout / rel).read_bytes()))
            files.append(("datasets.yaml", serialize_datasets_manifest(list(record.spec.datasets)).encode("utf-8")))
            for entry in self._scan_results(record):
                files.append((f"results/{entry.relative_path}", (record.results_dir / entry.relative_path).read_bytes()))
            summary = {
                "projectId": record.project_id,
                "projectName": record.name,
                "owner": record.owner,
                "commitId": record.spec.tree.commit_id,
                "specDigest": record.spec.spec_digest,
                "imageRef": {"repository": record.image_ref.repository, "tag": record.image_ref.tag},
                "status": record.status.value,
                "archivedAt": utcnow_iso(),
            }
            files.append(("state.json", json.dumps(summary, indent=2, sort_keys=True).encode("utf-8")))
        client = self.rdms_client()
        meta = {"kind": "rrp-project-archive", "projectName": record.name, "specDigest": record.spec.spec_digest}
        try:
            perm_id = self._rdms_call(client, lambda token: client.register_dataset(token, files, meta))
        except (ServerUnreachable, AuthFailed) as exc:
            raise RdmsError(f"archive failed: {exc}") from exc
        self._journals[project_id].append(EventKind.ARCHIVE, perm_id)
        return perm_id

    def publish_image(self, project_id: str, registry_url: str, credentials: str | None = None) -> str:
        record = self._get(project_id)
        with record.lock:
            if record.image_ref is None:
                raise InvalidState("project has no built image")
            receipt = self.adapter.push_image(record.image_ref, registry_url, credentials)
            record.remote_image = receipt.remote_ref
            self._persist(record)
            return receipt.remote_ref

    # -- events, routing, workloads ---------------------------------------------------

    def project_events(self, project_id: str, from_sequence: int = 0) -> JournalSubscription:
        return self.journal(project_id).subscribe(from_sequence)

    def route(self, public_path: str) -> SessionHandle:
        match = re.match(r"^/session/([^/]+)(/.*)?$", public_path)
        if not match:
            raise UnknownProject(f"not a session path: {public_path}")
        record = self._get(match.group(1))
        with record.lock:
            session = record.session
            if session is None or session.status is not SessionStatus.UP:
                raise NoActiveSession(f"project {record.project_id} has no running session")
            return session

    def run_workload(self, project_id: str, script_path: str, args: tuple[str, ...] = ()) -> tuple[int, list[str]]:
        record = self._get(project_id)
        with record.lock:
            if record.status is not ProjectStatus.RUNNING or record.session is None:
                raise InvalidState("workloads need a running session")
            session = record.session
        code, lines = self.adapter.run_python(session, script_path, args)
        journal = self._journals[project_id]
        for line in lines:
            journal.append(EventKind.RUN_LOG, line)
        return code, lines

    def close(self) -> None:
        with self._registry_lock:
            pipelines = list(self._pipelines)
        for thread in pipelines:
            thread.join(timeout=10)
        self._build_executor.shutdown(wait=True)
        with self._registry_lock:
            journals = list(self._journals.values())
        for journal in journals:
            journal.close()


def _monotonic() -> float:
    return time.monotonic()


def _iso_from_epoch(epoch: float) -> str:
    return datetime.fromtimestamp(epoch, tz=timezone.utc).isoformat(timespec="milliseconds")


def _spec_to_dict(spec: ProjectSpec) -> dict:
    return {
        "commitId": spec.tree.commit_id,
        "specDigest": spec.spec_digest,
        "environment": {
            "runtime": spec.environment.runtime,
            "aptPackages": list(spec.environment.apt_packages),
            "pipRequirements": spec.environment.pip_requirements,
            "condaEnvironment": spec.environment.conda_environment,
            "rInstallScript": spec.environment.r_install_script,
            "juliaProject": spec.environment.julia_project,
            "postBuild": spec.environment.post_build,
            "startCommand": spec.environment.start_command,
            "sourceFiles": [[p, h] for p, h in spec.environment.source_files],
        },
        "datasets": [b.to_dict() for b in spec.datasets],
    }


def _spec_from_dict(doc: dict, source: ProjectSource, root: Path) -> ProjectSpec:
    from .project_spec import EnvironmentSpec

    env = doc["environment"]
    environment = EnvironmentSpec(
        runtime=env["runtime"],
        apt_packages=tuple(env["aptPackages"]),
        pip_requirements=env["pipRequirements"],
        conda_environment=env["condaEnvironment"],
        r_install_script=env["rInstallScript"],
        julia_project=env["juliaProject"],
        post_build=env["postBuild"],
        start_command=env["startCommand"],
        source_files=tuple((p, h) for p, h in env["sourceFiles"]),
    )
    return ProjectSpec(
        source=source,
        tree=WorkingTree(root_path=root, commit_id=doc["commitId"], dirty=False),
        environment=environment,
        datasets=tuple(DatasetBinding(d["server"], d["permId"], d["folder"]) for d in doc["datasets"]),
        spec_digest=doc["specDigest"],
    )
