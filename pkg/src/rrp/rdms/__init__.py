"""Research data management: permID-addressed immutable datasets.

`server` is a minimal self-contained reference implementation of the wire
protocol; `client` is the platform-side consumer (login, resolution,
read-only materialization, registration, DOI-stub publishing).
"""

from __future__ import annotations

from dataclasses import dataclass, field
from pathlib import Path


@dataclass(frozen=True)
class SessionToken:
    token: str
    user_id: str
    expires_at: str  # ISO-8601 UTC


@dataclass(frozen=True)
class FileEntry:
    relative_path: str
    byte_size: int
    content_hash: str


@dataclass(frozen=True)
class DatasetDescriptor:
    perm_id: str
    files: tuple[FileEntry, ...]
    total_bytes: int
    metadata: dict[str, str] = field(default_factory=dict)

    def __post_init__(self):
        assert self.total_bytes == sum(f.byte_size for f in self.files)


@dataclass(frozen=True)
class MountReport:
    perm_id: str
    folder: str
    local_path: Path
    files_materialized: int
    bytes: int
    verified: bool


@dataclass(frozen=True)
class DoiRecord:
    doi: str
    object_ref: str
    resolved_url: str


from .client import RdmsClient, fetch_url  # noqa: E402
from .server import RdmsServerHandle, serve_reference_rdms  # noqa: E402

__all__ = [
    "SessionToken",
    "FileEntry",
    "DatasetDescriptor",
    "MountReport",
    "DoiRecord",
    "RdmsClient",
    "fetch_url",
    "RdmsServerHandle",
    "serve_reference_rdms",
]
