"""Thin wrapper around the git CLI.

Only the handful of plumbing calls the platform needs: clone + checkout,
HEAD resolution, cleanliness checks, and extracting a committed tree.
"""

from __future__ import annotations

import subprocess
import tarfile
import tempfile
from pathlib import Path
from urllib.parse import urlsplit, urlunsplit

from .errors import CloneFailed, NotARepository, RefNotFound

_GIT_ENV = {
    "GIT_TERMINAL_PROMPT": "0",
    "GIT_CONFIG_NOSYSTEM": "1",
    "HOME": tempfile.gettempdir(),
}


def _run(args: list[str], cwd: Path | None = None) -> subprocess.CompletedProcess:
    return subprocess.run(
        ["git", *args],
        cwd=cwd,
        capture_output=True,
        text=True,
        env={**_GIT_ENV},
    )


def with_credentials(url: str, credentials: str | None) -> str:
    """Embed an opaque access secret into an http(s) remote URL."""
    if not credentials or not url.startswith(("http://", "https://")):
        return url
    parts = urlsplit(url)
    netloc = parts.netloc.rsplit("@", 1)[-1]
    return urlunsplit(parts._replace(netloc=f"{credentials}@{netloc}"))


def clone(url: str, dest: Path, ref: str | None = None, credentials: str | None = None) -> str:
    """Clone `url` into `dest`, check out `ref`, return the commit id.

    Submodules are initialized recursively. `dest` must be empty or absent.
    """
    dest = Path(dest)
    if dest.exists() and any(dest.iterdir()):
        raise CloneFailed(f"destination not empty: {dest}")
    dest.mkdir(parents=True, exist_ok=True)
    remote = with_credentials(url, credentials)
    proc = _run(["clone", "--recurse-submodules", remote, str(dest)])
    if proc.returncode != 0:
        raise CloneFailed(f"git clone failed for {url}: {proc.stderr.strip()}")
    if ref:
        proc = _run(["checkout", "--recurse-submodules", ref], cwd=dest)
        if proc.returncode != 0:
            raise RefNotFound(f"ref {ref!r} not found in {url}")
        sub = _run(["submodule", "update", "--init", "--recursive"], cwd=dest)
        if sub.returncode != 0:
            raise CloneFailed(f"submodule init failed: {sub.stderr.strip()}")
    return head_commit(dest)


def head_commit(repo: Path) -> str:
    proc = _run(["rev-parse", "HEAD"], cwd=repo)
    if proc.returncode != 0:
        raise NotARepository(f"not a git repository: {repo}")
    return proc.stdout.strip()


def status_lines(repo: Path) -> list[str]:
    """`git status --porcelain` lines; untracked non-ignored files included."""
    proc = _run(["status", "--porcelain"], cwd=repo)
    if proc.returncode != 0:
        raise NotARepository(f"not a git repository: {repo}")
    return [line for line in proc.stdout.splitlines() if line.strip()]


def is_clean_tree(repo: Path) -> bool:
    return not status_lines(repo)


def extract_commit(repo: Path, commit_id: str, dest: Path) -> None:
    """Materialize the committed tree (no .git, no uncommitted edits) at dest."""
    dest.mkdir(parents=True, exist_ok=True)
    proc = subprocess.run(
        ["git", "archive", "--format=tar", commit_id],
        cwd=repo,
        capture_output=True,
        env={**_GIT_ENV},
    )
    if proc.returncode != 0:
        raise RefNotFound(
            f"commit {commit_id} not found in {repo}: {proc.stderr.decode(errors='replace').strip()}"
        )
    with tempfile.NamedTemporaryFile(suffix=".tar") as tmp:
        tmp.write(proc.stdout)
        tmp.flush()
        with tarfile.open(tmp.name) as tar:
            tar.extractall(dest)


def commit_all(repo: Path, message: str) -> str:
    """Stage and commit everything; used by fixtures and the demo tooling."""
    for args in (["add", "-A"], ["-c", "user.name=rrp", "-c", "user.email=rrp@localhost", "commit", "-m", message]):
        proc = _run(args, cwd=repo)
        if proc.returncode != 0:
            raise NotARepository(f"git {args[0]} failed: {proc.stderr.strip()}")
    return head_commit(repo)


def init_repo(path: Path) -> None:
    path.mkdir(parents=True, exist_ok=True)
    proc = _run(["init", "-q", "-b", "main", str(path)])
    if proc.returncode != 0:
        raise NotARepository(f"git init failed: {proc.stderr.strip()}")
