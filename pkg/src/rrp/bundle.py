"""Offline export and playback of projects.

A player bundle is a gzip-compressed tar holding everything needed to rerun
a project with nothing but a container runtime: the image archive, a clean
code checkout, all mounted datasets, checksums, and generated startup
scripts. A player script is the lightweight variant carrying only the
manifest and startup scripts; data and image are fetched from published
URLs at playback time.
"""

from __future__ import annotations

import gzip
import io
import json
import tarfile
import tempfile
from dataclasses import dataclass
from pathlib import Path
from typing import Callable

from . import __version__ as _generator_version
from . import gitio
from .build_plan import ImageRef
from .config import EMBEDDED_DATA_WARNING_BYTES
from .errors import (
    ChecksumMismatch,
    CorruptArchive,
    ExportFailed,
    ImageNotPublished,
    ImagePullFailed,
    ImportFailed,
    InvalidState,
    RepositoryDirty,
    RrpError,
    UnpublishedDatasets,
    VerificationFailed,
)
from .fsutil import list_tree, make_tree_readonly, sha256_bytes, tree_hash, utcnow_iso
from .journal import EventKind
from .orchestrator import ARCHIVABLE, Orchestrator
from .rdms import fetch_url
from .runtime import MountSpec, ResourceLimits, RuntimeAdapter, SessionHandle

BUNDLE_VERSION = 1
MANIFEST_NAME = "manifest.json"
CHECKSUMS_NAME = "checksums.txt"
IMAGE_NAME = "image.tar"

PLAYBACK_RESOURCES = ResourceLimits(cpu_cores=1.0, memory_bytes=2 * 1024**3)


@dataclass(frozen=True)
class DatasetRecord:
    perm_id: str
    folder: str
    byte_size: int
    content_hash: str
    source: str  # "embedded" | "url"
    url: str = ""

    def to_dict(self) -> dict:
        doc = {
            "permId": self.perm_id,
            "folder": self.folder,
            "byteSize": self.byte_size,
            "contentHash": self.content_hash,
            "source": self.source,
        }
        if self.url:
            doc["url"] = self.url
        return doc


@dataclass(frozen=True)
class BundleManifest:
    kind: str  # "Bundle" | "Script"
    project_name: str
    commit_id: str
    spec_digest: str
    image_ref: ImageRef
    image: dict
    datasets: tuple[DatasetRecord, ...]
    created_at: str
    generator: str = f"rrp {_generator_version}"
    bundle_version: int = BUNDLE_VERSION

    def to_json(self) -> str:
        doc = {
            "bundleVersion": self.bundle_version,
            "kind": self.kind,
            "projectName": self.project_name,
            "commitId": self.commit_id,
            "specDigest": self.spec_digest,
            "imageRef": {"repository": self.image_ref.repository, "tag": self.image_ref.tag},
            "image": self.image,
            "datasets": [d.to_dict() for d in self.datasets],
            "createdAt": self.created_at,
            "generator": self.generator,
        }
        return json.dumps(doc, indent=2, sort_keys=True)

    @classmethod
    def from_json(cls, raw: bytes) -> "BundleManifest":
        try:
            doc = json.loads(raw)
            datasets = tuple(
                DatasetRecord(
                    perm_id=d["permId"],
                    folder=d["folder"],
                    byte_size=d["byteSize"],
                    content_hash=d["contentHash"],
                    source=d["source"],
                    url=d.get("url", ""),
                )
                for d in doc["datasets"]
            )
            return cls(
                kind=doc["kind"],
                project_name=doc["projectName"],
                commit_id=doc["commitId"],
                spec_digest=doc["specDigest"],
                image_ref=ImageRef(doc["imageRef"]["repository"], doc["imageRef"]["tag"]),
                image=doc["image"],
                datasets=datasets,
                created_at=doc["createdAt"],
                generator=doc.get("generator", ""),
                bundle_version=doc.get("bundleVersion", 1),
            )
        except (json.JSONDecodeError, KeyError, TypeError) as exc:
            raise CorruptArchive(f"bad bundle manifest: {exc}") from exc

    def validate(self) -> None:
        if self.kind == "Bundle":
            if self.image.get("embeddedPath") != IMAGE_NAME or any(d.source != "embedded" for d in self.datasets):
                raise CorruptArchive("player bundles must embed the image and every dataset")
        elif self.kind == "Script":
            if not self.image.get("remoteRef") or any(d.source != "url" or not d.url for d in self.datasets):
                raise CorruptArchive("player scripts need a remote image reference and a url per dataset")
        else:
            raise CorruptArchive(f"unknown bundle kind {self.kind!r}")


@dataclass(frozen=True)
class VerificationReport:
    failures: tuple[tuple[str, str, str], ...]  # (path, expected, actual)

    @property
    def ok(self) -> bool:
        return not self.failures


def _start_script_sh(manifest: BundleManifest) -> str:
    lines = [
        "#!/bin/sh",
        "# Replays this project with only a container runtime installed.",
        "set -e",
        'HERE=$(cd "$(dirname "$0")" && pwd)',
        "RUNTIME=${RRP_CONTAINER_CLI:-docker}",
    ]
    image = str(manifest.image_ref)
    if manifest.kind == "Bundle":
        lines.append('"$RUNTIME" load -i "$HERE/image.tar"')
    else:
        remote = manifest.image["remoteRef"]
        lines.append(f'"$RUNTIME" pull "{remote}"')
        lines.append(f'"$RUNTIME" tag "{remote}" "{image}"')
        for d in manifest.datasets:
            lines.append(f'mkdir -p "$HERE/data/{d.folder}"')
            lines.append(f'curl -fsSL "{d.url}" | tar -xz -C "$HERE/data/{d.folder}"')
    lines.append('mkdir -p "$HERE/results"')
    run = ['"$RUNTIME" run --rm -p 127.0.0.1:8888:8888']
    if manifest.kind == "Bundle":
        run.append('-v "$HERE/project:/project"')
    for d in manifest.datasets:
        run.append(f'-v "$HERE/data/{d.folder}:/openbis/{d.folder}:ro"')
    run.append('-v "$HERE/results:/results"')
    run.append(f'"{image}"')
    lines.append('echo "session will listen on http://127.0.0.1:8888/"')
    lines.append(" \\\n  ".join(run))
    return "\n".join(lines) + "\n"


def _start_script_bat(manifest: BundleManifest) -> str:
    lines = [
        "@echo off",
        "rem Replays this project with only a container runtime installed.",
        "set HERE=%~dp0",
    ]
    image = str(manifest.image_ref)
    if manifest.kind == "Bundle":
        lines.append('docker load -i "%HERE%image.tar"')
    else:
        remote = manifest.image["remoteRef"]
        lines.append(f'docker pull "{remote}"')
        lines.append(f'docker tag "{remote}" "{image}"')
        for d in manifest.datasets:
            lines.append(f'mkdir "%HERE%data\\{d.folder}" 2>nul')
            lines.append(f'curl -fsSL "{d.url}" -o "%HERE%data\\{d.folder}.tar.gz"')
            lines.append(f'tar -xzf "%HERE%data\\{d.folder}.tar.gz" -C "%HERE%data\\{d.folder}"')
    lines.append('mkdir "%HERE%results" 2>nul')
    run = ["docker run --rm -p 127.0.0.1:8888:8888"]
    if manifest.kind == "Bundle":
        run.append('-v "%HERE%project:/project"')
    for d in manifest.datasets:
        run.append(f'-v "%HERE%data\\{d.folder}:/openbis/{d.folder}:ro"')
    run.append('-v "%HERE%results:/results"')
    run.append(f'"{image}"')
    lines.append("echo session will listen on http://127.0.0.1:8888/")
    lines.append(" ".join(run))
    return "\r\n".join(lines) + "\r\n"


def _write_archive(out_path: Path, entries: list[tuple[str, bytes]], directories: list[str]) -> None:
    """Deterministic tar.gz; `entries` order is preserved so manifest.json
    can be the first member."""
    out_path.parent.mkdir(parents=True, exist_ok=True)
    with open(out_path, "wb") as fh:
        with gzip.GzipFile(fileobj=fh, mode="wb", mtime=0) as gz:
            with tarfile.open(fileobj=gz, mode="w") as tar:
                seen_dirs: set[str] = set()

                def add_dir(name: str) -> None:
                    info = tarfile.TarInfo(name=name.rstrip("/") + "/")
                    info.type = tarfile.DIRTYPE
                    info.mode = 0o755
                    info.mtime = 0
                    tar.addfile(info)
                    seen_dirs.add(name.rstrip("/"))

                for name, data in entries:
                    parents = []
                    parent = str(Path(name).parent)
                    while parent not in ("", ".") and parent not in seen_dirs:
                        parents.append(parent)
                        parent = str(Path(parent).parent)
                    for p in reversed(parents):
                        add_dir(p)
                    info = tarfile.TarInfo(name=name)
                    info.size = len(data)
                    info.mtime = 0
                    info.mode = 0o755 if name.startswith("start.") else 0o644
                    tar.addfile(info, io.BytesIO(data))
                # mandatory layout directories, even when empty
                for name in directories:
                    if name.rstrip("/") not in seen_dirs:
                        add_dir(name)


def _read_archive(archive: Path) -> dict[str, bytes]:
    try:
        with tarfile.open(archive, mode="r:gz") as tar:
            return {m.name: tar.extractfile(m).read() for m in tar.getmembers() if m.isfile()}
    except (tarfile.TarError, OSError, EOFError, gzip.BadGzipFile) as exc:
        raise CorruptArchive(f"unreadable archive {archive}: {exc}") from exc


def export_player_bundle(orch: Orchestrator, project_id: str, out_path: Path) -> Path:
    record = orch.get_project(project_id)
    with record.lock:
        if record.status not in ARCHIVABLE:
            raise InvalidState(f"cannot export a project in state {record.status.value}")
        if not gitio.is_clean_tree(record.project_dir):
            raise RepositoryDirty("uncommitted changes in the project working copy; commit before exporting")
        spec = record.spec

        try:
            image_bytes = orch.adapter.export_image(record.image_ref)
        except RrpError as exc:
            raise ExportFailed(f"image export failed: {exc}") from exc

        entries: list[tuple[str, bytes]] = []
        with tempfile.TemporaryDirectory(prefix="rrp-export-") as tmp:
            checkout = Path(tmp) / "project"
            gitio.extract_commit(record.project_dir, spec.tree.commit_id, checkout)
            for rel in list_tree(checkout):
                entries.append((f"project/{rel}", (checkout / rel).read_bytes()))

        datasets: list[DatasetRecord] = []
        embedded_bytes = 0
        for binding in spec.datasets:
            local = record.openbis_dir / binding.folder
            size = 0
            for rel in list_tree(local):
                data = (local / rel).read_bytes()
                size += len(data)
                entries.append((f"data/{binding.folder}/{rel}", data))
            embedded_bytes += size
            datasets.append(
                DatasetRecord(
                    perm_id=binding.perm_id,
                    folder=binding.folder,
                    byte_size=size,
                    content_hash=tree_hash(local),
                    source="embedded",
                )
            )
        if embedded_bytes > EMBEDDED_DATA_WARNING_BYTES:
            orch.journal(project_id).append(
                EventKind.ERROR,
                f"warning: {embedded_bytes} bytes of embedded data; consider a player script export",
            )

        manifest = BundleManifest(
            kind="Bundle",
            project_name=record.name,
            commit_id=spec.tree.commit_id,
            spec_digest=spec.spec_digest,
            image_ref=record.image_ref,
            image={"embeddedPath": IMAGE_NAME},
            datasets=tuple(datasets),
            created_at=utcnow_iso(),
        )
        manifest_bytes = manifest.to_json().encode("utf-8")
        start_sh = _start_script_sh(manifest).encode("utf-8")
        start_bat = _start_script_bat(manifest).encode("utf-8")

        ordered = [(MANIFEST_NAME, manifest_bytes), (IMAGE_NAME, image_bytes)]
        ordered += entries
        checksum_lines = [
            f"{sha256_bytes(data)}  {name}"
            for name, data in ordered + [("start.sh", start_sh), ("start.bat", start_bat)]
        ]
        checksums = ("\n".join(checksum_lines) + "\n").encode("utf-8")
        ordered += [(CHECKSUMS_NAME, checksums), ("start.sh", start_sh), ("start.bat", start_bat)]

        _write_archive(Path(out_path), ordered, directories=["project", "data"])
    return Path(out_path)


def export_player_script(orch: Orchestrator, project_id: str, out_path: Path) -> Path:
    record = orch.get_project(project_id)
    with record.lock:
        if record.status not in ARCHIVABLE:
            raise InvalidState(f"cannot export a project in state {record.status.value}")
        spec = record.spec
        if record.remote_image is None:
            raise ImageNotPublished("push the project image to a registry before exporting a player script")

        datasets: list[DatasetRecord] = []
        unpublished: list[str] = []
        for binding in spec.datasets:
            client = orch._client_for(binding.server_url)
            publication = orch._rdms_call(client, lambda token: client.get_publication(token, binding.perm_id))
            if publication is None:
                unpublished.append(binding.perm_id)
                continue
            local = record.openbis_dir / binding.folder
            datasets.append(
                DatasetRecord(
                    perm_id=binding.perm_id,
                    folder=binding.folder,
                    byte_size=sum((local / rel).stat().st_size for rel in list_tree(local)),
                    content_hash=tree_hash(local),
                    source="url",
                    url=publication.resolved_url,
                )
            )
        if unpublished:
            raise UnpublishedDatasets(unpublished)

        manifest = BundleManifest(
            kind="Script",
            project_name=record.name,
            commit_id=spec.tree.commit_id,
            spec_digest=spec.spec_digest,
            image_ref=record.image_ref,
            image={"remoteRef": record.remote_image},
            datasets=tuple(datasets),
            created_at=utcnow_iso(),
        )
        ordered = [
            (MANIFEST_NAME, manifest.to_json().encode("utf-8")),
            ("start.sh", _start_script_sh(manifest).encode("utf-8")),
            ("start.bat", _start_script_bat(manifest).encode("utf-8")),
        ]
        _write_archive(Path(out_path), ordered, directories=[])
    return Path(out_path)


def verify_bundle(archive: Path) -> VerificationReport:
    """Re-hash every member against checksums.txt; mismatches, unlisted
    members, and listed-but-missing members are all failures."""
    members = _read_archive(Path(archive))
    if MANIFEST_NAME not in members:
        raise CorruptArchive("bundle has no manifest.json")
    BundleManifest.from_json(members[MANIFEST_NAME]).validate()
    if CHECKSUMS_NAME not in members:
        raise CorruptArchive("bundle has no checksums.txt")

    expected: dict[str, str] = {}
    for line in members[CHECKSUMS_NAME].decode("utf-8").splitlines():
        if not line.strip():
            continue
        try:
            digest, name = line.split(None, 1)
        except ValueError as exc:
            raise CorruptArchive(f"malformed checksum line {line!r}") from exc
        expected[name.strip()] = digest

    failures: list[tuple[str, str, str]] = []
    for name, data in sorted(members.items()):
        if name == CHECKSUMS_NAME:
            continue
        actual = sha256_bytes(data)
        want = expected.get(name)
        if want is None:
            failures.append((name, "", actual))
        elif want != actual:
            failures.append((name, want, actual))
    for name, want in sorted(expected.items()):
        if name not in members:
            failures.append((name, want, ""))
    return VerificationReport(failures=tuple(failures))


def read_manifest(archive: Path) -> BundleManifest:
    members = _read_archive(Path(archive))
    if MANIFEST_NAME not in members:
        raise CorruptArchive("archive has no manifest.json")
    return BundleManifest.from_json(members[MANIFEST_NAME])


def _materialize_datasets(work_dir: Path, folders: dict[str, dict[str, bytes]]) -> None:
    for folder, files in folders.items():
        target = work_dir / "openbis" / folder
        target.mkdir(parents=True, exist_ok=True)
        for rel, data in files.items():
            dest = target / rel
            dest.parent.mkdir(parents=True, exist_ok=True)
            dest.write_bytes(data)
        make_tree_readonly(target)


def _start_playback_session(
    adapter: RuntimeAdapter, manifest: BundleManifest, work_dir: Path, project_mount: bool
) -> SessionHandle:
    work_dir = Path(work_dir)
    (work_dir / "results").mkdir(parents=True, exist_ok=True)
    mounts = []
    if project_mount:
        mounts.append(MountSpec(host_path=work_dir / "project", container_path="/project", read_only=False))
    for d in manifest.datasets:
        mounts.append(
            MountSpec(
                host_path=work_dir / "openbis" / d.folder,
                container_path=f"/openbis/{d.folder}",
                read_only=True,
            )
        )
    mounts.append(MountSpec(host_path=work_dir / "results", container_path="/results", read_only=False))
    return adapter.create_session(manifest.image_ref, PLAYBACK_RESOURCES, mounts)


def play_bundle(archive: Path, adapter: RuntimeAdapter, work_dir: Path) -> SessionHandle:
    report = verify_bundle(archive)
    if not report.ok:
        first = report.failures[0]
        raise VerificationFailed(f"bundle failed verification at {first[0]} ({len(report.failures)} failure(s))")
    members = _read_archive(Path(archive))
    manifest = BundleManifest.from_json(members[MANIFEST_NAME])
    manifest.validate()

    work_dir = Path(work_dir)
    project_root = work_dir / "project"
    project_root.mkdir(parents=True, exist_ok=True)
    folders: dict[str, dict[str, bytes]] = {d.folder: {} for d in manifest.datasets}
    for name, data in members.items():
        if name.startswith("project/"):
            dest = project_root / name[len("project/"):]
            dest.parent.mkdir(parents=True, exist_ok=True)
            dest.write_bytes(data)
        elif name.startswith("data/"):
            folder, _, rel = name[len("data/"):].partition("/")
            folders.setdefault(folder, {})[rel] = data
    _materialize_datasets(work_dir, folders)

    try:
        imported = adapter.import_image(members[IMAGE_NAME])
    except RrpError as exc:
        raise ImportFailed(f"image import failed: {exc}") from exc
    if imported != manifest.image_ref:
        raise ImportFailed(f"archive image is {imported}, manifest says {manifest.image_ref}")
    return _start_playback_session(adapter, manifest, work_dir, project_mount=True)


def play_script(
    script_bundle: Path,
    adapter: RuntimeAdapter,
    work_dir: Path,
    fetcher: Callable[[str], bytes] = fetch_url,
) -> SessionHandle:
    manifest = read_manifest(script_bundle)
    manifest.validate()
    if manifest.kind != "Script":
        raise CorruptArchive("not a player script bundle")

    # Fetch everything before starting anything.
    fetched: dict[str, bytes] = {}
    for d in manifest.datasets:
        fetched[d.folder] = fetcher(d.url)

    work_dir = Path(work_dir)
    folders: dict[str, dict[str, bytes]] = {}
    for d in manifest.datasets:
        try:
            with tarfile.open(fileobj=io.BytesIO(gzip.decompress(fetched[d.folder])), mode="r") as tar:
                folders[d.folder] = {
                    m.name: tar.extractfile(m).read() for m in tar.getmembers() if m.isfile()
                }
        except (tarfile.TarError, gzip.BadGzipFile, OSError) as exc:
            raise ChecksumMismatch(f"dataset {d.perm_id} from {d.url} is not a valid archive", path=d.folder) from exc
    _materialize_datasets(work_dir, folders)
    for d in manifest.datasets:
        actual = tree_hash(work_dir / "openbis" / d.folder)
        if actual != d.content_hash:
            raise ChecksumMismatch(
                f"dataset {d.perm_id} fetched from {d.url} hashes to {actual}, manifest says {d.content_hash}",
                path=d.folder,
            )

    try:
        pulled = adapter.pull_image(manifest.image["remoteRef"])
    except RrpError as exc:
        raise ImagePullFailed(f"image pull failed: {exc}") from exc
    if pulled != manifest.image_ref:
        raise ImagePullFailed(f"registry served {pulled}, manifest says {manifest.image_ref}")
    return _start_playback_session(adapter, manifest, work_dir, project_mount=False)
