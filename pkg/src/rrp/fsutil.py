"""Small filesystem and hashing helpers used across modules."""

from __future__ import annotations

import hashlib
import os
import shutil
import stat
from datetime import datetime, timezone
from pathlib import Path


def sha256_bytes(data: bytes) -> str:
    return hashlib.sha256(data).hexdigest()


def sha256_file(path: Path, chunk_size: int = 1 << 20) -> str:
    digest = hashlib.sha256()
    with open(path, "rb") as fh:
        while chunk := fh.read(chunk_size):
            digest.update(chunk)
    return digest.hexdigest()


def utcnow_iso() -> str:
    return datetime.now(timezone.utc).isoformat(timespec="milliseconds")


def list_tree(root: Path) -> list[str]:
    """Relative POSIX paths of all regular files under root, sorted.
    Symlinks are never followed."""
    root = Path(root)
    out = []
    for dirpath, dirnames, filenames in os.walk(root, followlinks=False):
        dirnames[:] = sorted(dirnames)
        for name in sorted(filenames):
            path = Path(dirpath) / name
            if path.is_symlink() or not path.is_file():
                continue
            out.append(path.relative_to(root).as_posix())
    return sorted(out)


def tree_hash(root: Path) -> str:
    """Content hash of a file tree: `<path>\\n<file-hash>\\n` entries in
    lexicographic order."""
    digest = hashlib.sha256()
    for rel in list_tree(root):
        digest.update(rel.encode("utf-8") + b"\n")
        digest.update(sha256_file(Path(root) / rel).encode("ascii") + b"\n")
    return digest.hexdigest()


def make_tree_readonly(root: Path) -> None:
    for dirpath, dirnames, filenames in os.walk(root, topdown=False):
        for name in filenames:
            os.chmod(Path(dirpath) / name, 0o444)
        os.chmod(dirpath, 0o555)


def force_rmtree(path: Path) -> None:
    """rmtree that also clears read-only trees (mounted datasets)."""
    path = Path(path)
    if not path.exists():
        return

    def _onerror(func, target, exc_info):
        os.chmod(os.path.dirname(target), stat.S_IRWXU)
        try:
            os.chmod(target, stat.S_IRWXU)
        except OSError:
            pass
        func(target)

    for dirpath, dirnames, _ in os.walk(path):
        for d in dirnames:
            try:
                os.chmod(Path(dirpath) / d, stat.S_IRWXU)
            except OSError:
                pass
    shutil.rmtree(path, onerror=_onerror)


def atomic_write_text(path: Path, text: str) -> None:
    tmp = path.with_suffix(path.suffix + ".tmp")
    tmp.write_text(text, encoding="utf-8")
    os.replace(tmp, path)
