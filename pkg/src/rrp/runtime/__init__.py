"""Narrow container-runtime interface with interchangeable backends.

Two backends implement it: a real OCI-daemon client (`docker.py`) and a
deterministic in-memory simulation (`sim.py`) so every higher layer is
testable without a daemon.
"""

from __future__ import annotations

from abc import ABC, abstractmethod
from dataclasses import dataclass
from enum import Enum
from pathlib import Path
from typing import Callable

from ..build_plan import ImageRef
from ..config import MIB

MIN_MEMORY_BYTES = 64 * MIB


class SessionStatus(Enum):
    STARTING = "Starting"
    UP = "Up"
    STOPPED = "Stopped"
    FAILED = "Failed"


@dataclass(frozen=True)
class ResourceLimits:
    cpu_cores: float
    memory_bytes: int

    def __post_init__(self):
        if self.cpu_cores <= 0:
            raise ValueError("cpu_cores must be positive")
        if self.memory_bytes < MIN_MEMORY_BYTES:
            raise ValueError(f"memory_bytes must be at least {MIN_MEMORY_BYTES}")


@dataclass(frozen=True)
class MountSpec:
    host_path: Path
    container_path: str
    read_only: bool

    def __post_init__(self):
        if not self.container_path.startswith("/"):
            raise ValueError(f"container path must be absolute: {self.container_path}")


@dataclass
class SessionHandle:
    session_id: str
    image_ref: ImageRef
    internal_endpoint: str  # host:port
    status: SessionStatus


@dataclass(frozen=True)
class BuildResult:
    image_id: str
    log_line_count: int
    success: bool

    def __post_init__(self):
        if not self.success and self.image_id:
            raise ValueError("failed builds carry no image id")


@dataclass(frozen=True)
class PushReceipt:
    remote_ref: str
    registry_url: str


LogSink = Callable[[str], None]


class RuntimeAdapter(ABC):
    """Contract shared by the sim and daemon backends."""

    @abstractmethod
    def build_image(self, recipe: str, context_path: Path, ref: ImageRef, log_sink: LogSink) -> BuildResult:
        ...

    @abstractmethod
    def create_session(
        self,
        ref: ImageRef,
        limits: ResourceLimits,
        mounts: list[MountSpec],
        command: str | None = None,
    ) -> SessionHandle:
        ...

    @abstractmethod
    def stop_session(self, handle: SessionHandle) -> SessionHandle:
        ...

    @abstractmethod
    def destroy_session(self, handle: SessionHandle) -> None:
        ...

    @abstractmethod
    def export_image(self, ref: ImageRef) -> bytes:
        ...

    @abstractmethod
    def import_image(self, data: bytes) -> ImageRef:
        ...

    @abstractmethod
    def push_image(self, ref: ImageRef, registry_url: str, credentials: str | None = None) -> PushReceipt:
        ...

    @abstractmethod
    def pull_image(self, remote_ref: str) -> ImageRef:
        ...

    @abstractmethod
    def run_python(self, handle: SessionHandle, script_path: str, args: tuple[str, ...] = ()) -> tuple[int, list[str]]:
        """Execute a Python script inside the session; returns (exit code,
        output lines). Used to drive deterministic workloads."""
        ...
