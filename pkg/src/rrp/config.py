"""Platform configuration.

Everything tunable lives here as plain dataclasses; env vars provide the
deployment-level overrides (RRP_DATA_DIR, RRP_RDMS_URL, RRP_RUNTIME_ENDPOINT,
RRP_PORT).
"""

from __future__ import annotations

import os
from dataclasses import dataclass
from pathlib import Path

MIB = 1024 * 1024
GIB = 1024 * MIB

# One fixed, version-pinned minimal base image per supported runtime
# ecosystem. Determinism over freshness: these are never resolved to
# "latest".
BASE_IMAGES: dict[str, str] = {
    "python": "docker.io/library/python:3.11-slim-bookworm",
    "r": "docker.io/rocker/r-ver:4.3.2",
    "julia": "docker.io/library/julia:1.10.0-bookworm",
}

# Used when runtime.txt is absent; plans still need a first layer.
DEFAULT_BASE_IMAGE = BASE_IMAGES["python"]

# Fallback session command when no `start` file is given: the image's
# interactive notebook server on the fixed internal session port.
SESSION_PORT = 8888
DEFAULT_START_COMMAND = (
    "jupyter lab --ip 0.0.0.0 --port 8888 --no-browser --allow-root"
)

DEFAULT_RESOURCES_CPU = 1.0
DEFAULT_RESOURCES_MEMORY = 2 * GIB

# Embedded player-bundle data beyond this triggers a "consider a player
# script" warning.
EMBEDDED_DATA_WARNING_BYTES = 4 * GIB


@dataclass
class PlatformConfig:
    data_dir: Path
    rdms_url: str
    rdms_user: str = "rrp-demo"
    rdms_password: str = "rrp-demo"
    runtime_endpoint: str = ""
    build_concurrency: int = 2
    default_cpu: float = DEFAULT_RESOURCES_CPU
    default_memory: int = DEFAULT_RESOURCES_MEMORY

    @classmethod
    def from_env(cls, **overrides) -> "PlatformConfig":
        kwargs = dict(
            data_dir=Path(os.environ.get("RRP_DATA_DIR", "./rrp-data")),
            rdms_url=os.environ.get("RRP_RDMS_URL", "http://127.0.0.1:8880"),
            runtime_endpoint=os.environ.get("RRP_RUNTIME_ENDPOINT", ""),
        )
        kwargs.update(overrides)
        return cls(**kwargs)


@dataclass
class ApiConfig:
    host: str = "127.0.0.1"
    port: int = 7443
    heartbeat_seconds: float = 15.0
    token_ttl_seconds: float = 12 * 3600
    ui_dir: Path | None = None
    tls_certfile: Path | None = None
    tls_keyfile: Path | None = None

    @classmethod
    def from_env(cls, **overrides) -> "ApiConfig":
        kwargs = dict(port=int(os.environ.get("RRP_PORT", "7443")))
        kwargs.update(overrides)
        return cls(**kwargs)


@dataclass
class RdmsServerConfig:
    data_dir: Path
    host: str = "127.0.0.1"
    port: int = 8880
    token_ttl_seconds: float = 12 * 3600
    demo_user: str = "rrp-demo"
    demo_password: str = "rrp-demo"


@dataclass
class SimRuntimeConfig:
    # Loopback ports handed to Up sessions, allocated monotonically.
    port_range: tuple[int, int] = (39000, 39999)
    # Bind a real canned-page HTTP server per Up session (needed by the
    # reverse proxy; off by default to keep unit tests socket-free).
    serve_sessions: bool = False
    # Fault injection: abort builds after this 1-based step.
    fail_at_step: int | None = None
    fail_auth: bool = False
    fail_import: bool = False
    # Optional capacity caps; requests beyond them are denied.
    max_cpu: float | None = None
    max_memory: int | None = None
