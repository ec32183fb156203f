"""Error taxonomy shared by all platform modules.

Class names are the contract: callers catch these by name, the API layer
maps them onto HTTP status codes, and the CLI maps them onto exit codes.
"""

from __future__ import annotations


class RrpError(Exception):
    """Base class for every platform error."""


# --- project loading / parsing ---------------------------------------------


class CloneFailed(RrpError):
    pass


class RefNotFound(RrpError):
    pass


class NotARepository(RrpError):
    pass


class ManifestSyntax(RrpError):
    pass


class DuplicateMountTarget(RrpError):
    pass


class InvalidFolderName(RrpError):
    pass


class NoEnvironmentFound(RrpError):
    pass


class UnreadableFile(RrpError):
    pass


# --- build planning ---------------------------------------------------------


class UnsupportedRuntime(RrpError):
    pass


class ConflictingInputs(RrpError):
    pass


class EmptyName(RrpError):
    pass


# --- container runtime ------------------------------------------------------


class BuildFailed(RrpError):
    """Carries the tail of the build log for diagnosis."""

    def __init__(self, message: str, log_tail: list[str] | None = None):
        super().__init__(message)
        self.log_tail = list(log_tail or [])[-50:]


class DaemonUnavailable(RrpError):
    pass


class ImageNotFound(RrpError):
    pass


class ResourceDenied(RrpError):
    pass


class StartFailed(RrpError):
    pass


class UnknownSession(RrpError):
    pass


class CorruptArchive(RrpError):
    pass


class RegistryUnreachable(RrpError):
    pass


class ImagePullFailed(RrpError):
    pass


class MountReadOnly(RrpError):
    """Write attempt into a read-only mount."""


# --- RDMS -------------------------------------------------------------------


class AuthFailed(RrpError):
    pass


class ServerUnreachable(RrpError):
    pass


class RdmsUnreachable(ServerUnreachable):
    pass


class DatasetNotFound(RrpError):
    pass


class ChecksumMismatch(RrpError):
    def __init__(self, message: str, path: str | None = None):
        super().__init__(message)
        self.path = path


class TargetNotWritable(RrpError):
    pass


class EmptyDataset(RrpError):
    pass


class ObjectNotFound(RrpError):
    pass


class PortInUse(RrpError):
    pass


class DataDirUnwritable(RrpError):
    pass


class RdmsError(RrpError):
    pass


# --- orchestrator -----------------------------------------------------------


class NameTaken(RrpError):
    pass


class UnknownProject(RrpError):
    pass


class InvalidState(RrpError):
    pass


class ResultNotFound(RrpError):
    pass


class RepositoryDirty(RrpError):
    """Working copy has uncommitted or untracked changes."""


# The archive path reports the same condition under this name.
DirtyWorkspace = RepositoryDirty


class ShareNotFound(RrpError):
    pass


class NoActiveSession(RrpError):
    pass


# --- bundler ----------------------------------------------------------------


class ExportFailed(RrpError):
    pass


class UnpublishedDatasets(RrpError):
    def __init__(self, perm_ids: list[str]):
        super().__init__("datasets not published: " + ", ".join(perm_ids))
        self.perm_ids = list(perm_ids)


class ImageNotPublished(RrpError):
    pass


class VerificationFailed(RrpError):
    pass


class ImportFailed(RrpError):
    pass


class FetchFailed(RrpError):
    def __init__(self, message: str, url: str | None = None):
        super().__init__(message)
        self.url = url
