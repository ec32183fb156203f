"""Shared fixtures: throwaway git repos, a live reference RDMS, a sim
runtime, and a fully wired platform around the bundled demo project."""

from __future__ import annotations

import gzip
import io
import tarfile
from dataclasses import dataclass
from pathlib import Path

import pytest

from rrp import gitio
from rrp.config import PlatformConfig, RdmsServerConfig, SimRuntimeConfig
from rrp.demo import create_demo_repo, demo_dataset_files
from rrp.orchestrator import Orchestrator, ProjectStatus
from rrp.project_spec import ProjectSource, WorkingTree
from rrp.rdms import RdmsClient, serve_reference_rdms
from rrp.runtime.sim import SimRuntime

TERMINAL = {ProjectStatus.READY, ProjectStatus.FAILED}

_ACCEPTANCE_RESULTS: list[tuple[str, str]] = []


def pytest_configure(config):
    config.addinivalue_line("markers", "acceptance(name): acceptance criterion covered by this test")
    config.addinivalue_line("markers", "real_runtime: needs a live container daemon")


@pytest.hookimpl(hookwrapper=True)
def pytest_runtest_makereport(item, call):
    outcome = yield
    report = outcome.get_result()
    marker = item.get_closest_marker("acceptance")
    if marker and report.when == "call":
        status = {"passed": "PASS", "failed": "FAIL", "skipped": "SKIP"}.get(report.outcome, report.outcome)
        _ACCEPTANCE_RESULTS.append((marker.args[0], status))
    elif marker and report.when == "setup" and report.skipped:
        _ACCEPTANCE_RESULTS.append((marker.args[0], "SKIP"))


def pytest_terminal_summary(terminalreporter):
    if not _ACCEPTANCE_RESULTS:
        return
    terminalreporter.section("acceptance criteria")
    for name, status in _ACCEPTANCE_RESULTS:
        terminalreporter.write_line(f"[{status}] {name}")


def make_repo(root: Path, files: dict[str, str]) -> Path:
    """Init a git repo at root containing `files` and commit everything."""
    gitio.init_repo(root)
    for rel, content in files.items():
        path = root / rel
        path.parent.mkdir(parents=True, exist_ok=True)
        path.write_text(content)
    gitio.commit_all(root, "fixture")
    return root


def tree_of(repo: Path) -> WorkingTree:
    return WorkingTree(root_path=repo, commit_id=gitio.head_commit(repo), dirty=False)


def tamper_archive(archive: Path, member: str, out: Path, flip_offset: int = 0) -> Path:
    """Repack a tar.gz with one byte flipped inside `member`."""
    with tarfile.open(archive, mode="r:gz") as tar:
        items = [(m, tar.extractfile(m).read() if m.isfile() else b"") for m in tar.getmembers()]
    with open(out, "wb") as fh:
        with gzip.GzipFile(fileobj=fh, mode="wb", mtime=0) as gz:
            with tarfile.open(fileobj=gz, mode="w") as tar:
                for info, data in items:
                    if info.name == member and info.isfile():
                        blob = bytearray(data)
                        blob[flip_offset] ^= 0xFF
                        data = bytes(blob)
                        info.size = len(data)
                    tar.addfile(info, io.BytesIO(data) if info.isfile() else None)
    return out


@dataclass
class RdmsFixture:
    url: str
    client: RdmsClient
    token: object
    handle: object


@pytest.fixture
def rdms(tmp_path):
    handle = serve_reference_rdms(RdmsServerConfig(data_dir=tmp_path / "rdms", port=0))
    client = RdmsClient(handle.url)
    token = client.login("rrp-demo", "rrp-demo")
    yield RdmsFixture(url=handle.url, client=client, token=token, handle=handle)
    handle.stop()


@dataclass
class Platform:
    orch: Orchestrator
    adapter: SimRuntime
    rdms: RdmsFixture
    perm_id: str
    repo: Path
    tmp: Path

    def create_demo(self, name: str = "Demo Project", owner: str = "rrp-demo", wait: bool = True):
        record = self.orch.create_project(owner, ProjectSource(repo_url=str(self.repo)), name)
        if wait:
            self.orch.wait_for(record.project_id, TERMINAL, timeout=60)
        return record

    def run_demo_workload(self, project_id: str):
        return self.orch.run_workload(project_id, "/project/analysis/run_demo.py")

    def commit_workspace(self, project_id: str, message: str = "edit"):
        gitio.commit_all(self.orch.get_project(project_id).project_dir, message)


def build_platform(tmp_path: Path, rdms: RdmsFixture, sim_config: SimRuntimeConfig | None = None) -> Platform:
    perm_id = rdms.client.register_dataset(rdms.token, demo_dataset_files(), {"kind": "demo"})
    repo = create_demo_repo(tmp_path / "demo-repo", rdms.url, perm_id)
    adapter = SimRuntime(sim_config or SimRuntimeConfig(), scratch_dir=tmp_path / "sim")
    orch = Orchestrator(
        PlatformConfig(data_dir=tmp_path / "platform", rdms_url=rdms.url),
        adapter,
        rdms=rdms.client,
    )
    return Platform(orch=orch, adapter=adapter, rdms=rdms, perm_id=perm_id, repo=repo, tmp=tmp_path)


@pytest.fixture
def platform(tmp_path, rdms):
    plat = build_platform(tmp_path, rdms)
    yield plat
    plat.orch.close()
