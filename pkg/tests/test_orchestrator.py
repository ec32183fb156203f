"""Lifecycle state machine, journaling, results, shares, archive."""

from __future__ import annotations

import json

import pytest

from rrp.config import PlatformConfig
from rrp.errors import (
    DirtyWorkspace,
    InvalidState,
    NameTaken,
    NoActiveSession,
    RdmsError,
    RepositoryDirty,
    ResultNotFound,
    ShareNotFound,
    UnknownProject,
)
from rrp.fsutil import sha256_bytes
from rrp.journal import EventKind
from rrp.orchestrator import Orchestrator, ProjectStatus
from rrp.project_spec import ProjectSource
from rrp.runtime import ResourceLimits, SessionStatus

from .conftest import TERMINAL, make_repo


def status_payloads(platform, project_id):
    return [e.payload for e in platform.orch.journal(project_id).events() if e.kind is EventKind.STATUS]


# -- create ------------------------------------------------------------------------


def test_create_reaches_ready_with_ordered_status_events(platform):
    record = platform.create_demo()
    assert record.status is ProjectStatus.READY
    assert status_payloads(platform, record.project_id) == ["Cloning", "Planning", "Building", "Ready"]
    assert record.image_ref is not None
    assert record.image_ref.repository == "rrp/demo-project"
    assert len(record.image_ref.tag) == 12
    # datasets were mounted during Building
    assert (record.openbis_dir / "raw_data" / "signal.bin").is_file()


def test_create_with_bad_manifest_fails(platform, tmp_path):
    repo = make_repo(
        tmp_path / "broken",
        {
            ".binder/requirements.txt": "six\n",
            ".rrp/datasets.yaml": "datasets:\n  - {server: s}\n",
        },
    )
    record = platform.orch.create_project("rrp-demo", ProjectSource(repo_url=str(repo)), "broken")
    platform.orch.wait_for(record.project_id, TERMINAL)
    assert record.status is ProjectStatus.FAILED
    assert "ManifestSyntax" in record.failure


def test_create_duplicate_name(platform):
    platform.create_demo("same-name", wait=False)
    with pytest.raises(NameTaken):
        platform.create_demo("same-name", wait=False)


def test_name_reusable_after_delete(platform):
    record = platform.create_demo("reuse-me")
    platform.orch.delete_project(record.project_id)
    second = platform.create_demo("reuse-me")
    assert second.status is ProjectStatus.READY


# -- start / stop / delete ------------------------------------------------------------


def test_start_stop_cycle(platform):
    record = platform.create_demo()
    info = platform.orch.start_project(record.project_id)
    assert record.status is ProjectStatus.RUNNING
    assert info.public_path == f"/session/{record.project_id}/"
    assert record.session is not None and record.session.status is SessionStatus.UP

    platform.orch.stop_project(record.project_id)
    assert record.status is ProjectStatus.STOPPED
    assert (record.project_dir / "analysis" / "run_demo.py").is_file(), "workspace preserved"

    builds_before = platform.adapter.build_count()
    platform.orch.start_project(record.project_id)
    assert record.status is ProjectStatus.RUNNING
    assert platform.adapter.build_count() == builds_before, "restart must not rebuild"
    platform.orch.stop_project(record.project_id)


def test_start_in_wrong_state(platform):
    record = platform.create_demo()
    platform.orch.start_project(record.project_id)
    with pytest.raises(InvalidState):
        platform.orch.start_project(record.project_id)


def test_start_while_building(platform):
    record = platform.create_demo(wait=False)
    # not yet terminal; any pre-Ready state must refuse to start
    if record.status not in TERMINAL:
        with pytest.raises(InvalidState):
            platform.orch.start_project(record.project_id)
    platform.orch.wait_for(record.project_id, TERMINAL)


def test_delete_retains_journal_only(platform):
    record = platform.create_demo()
    journal_path = record.workspace / "journal.log"
    platform.orch.delete_project(record.project_id)
    assert record.status is ProjectStatus.DELETED
    assert journal_path.is_file()
    assert not record.project_dir.exists()
    assert not record.openbis_dir.exists()
    with pytest.raises(InvalidState):
        platform.orch.start_project(record.project_id)
    # journal stays reachable for Deleted projects
    events = platform.orch.journal(record.project_id).events()
    assert events[-1].payload == "Deleted"


def test_delete_running_requires_stop(platform):
    record = platform.create_demo()
    platform.orch.start_project(record.project_id)
    with pytest.raises(InvalidState):
        platform.orch.delete_project(record.project_id)
    platform.orch.stop_project(record.project_id)
    platform.orch.delete_project(record.project_id)


def test_unknown_project(platform):
    with pytest.raises(UnknownProject):
        platform.orch.start_project("p-nope")
    with pytest.raises(UnknownProject):
        platform.orch.journal("p-nope")


def test_custom_resources_recorded(platform):
    record = platform.create_demo()
    limits = ResourceLimits(cpu_cores=2.0, memory_bytes=4 * 1024**3)
    platform.orch.start_project(record.project_id, limits)
    assert platform.adapter.session(record.session).limits == limits


# -- results ---------------------------------------------------------------------------


def test_results_harvested_without_session(platform):
    record = platform.create_demo()
    platform.orch.start_project(record.project_id)
    code, _ = platform.run_demo_workload(record.project_id)
    assert code == 0
    platform.orch.stop_project(record.project_id)
    entries = platform.orch.list_results(record.project_id)
    assert [e.relative_path for e in entries] == ["out.csv"]
    data = platform.orch.read_result(record.project_id, "out.csv")
    assert entries[0].content_hash == sha256_bytes(data)
    assert entries[0].byte_size == len(data)


def test_results_fresh_project_empty(platform):
    record = platform.create_demo()
    assert platform.orch.list_results(record.project_id) == []


def test_results_confinement(platform):
    record = platform.create_demo()
    # writes outside results/ never show up
    (record.workspace / "stray.txt").write_text("outside")
    (record.results_dir).mkdir(exist_ok=True)
    (record.results_dir / "inside.txt").write_text("inside")
    escape = record.results_dir / "link"
    escape.symlink_to(record.workspace / "stray.txt")
    entries = platform.orch.list_results(record.project_id)
    assert [e.relative_path for e in entries] == ["inside.txt"]
    with pytest.raises(ResultNotFound):
        platform.orch.read_result(record.project_id, "../stray.txt")


def test_upload_round_trip(platform):
    record = platform.create_demo()
    platform.orch.start_project(record.project_id)
    platform.run_demo_workload(record.project_id)
    platform.orch.stop_project(record.project_id)
    perm_id = platform.orch.upload_result(record.project_id, "out.csv", {"figure": "1"})
    descriptor = platform.rdms.client.resolve_dataset(platform.rdms.token, perm_id)
    local = platform.orch.read_result(record.project_id, "out.csv")
    assert descriptor.files[0].content_hash == sha256_bytes(local)
    uploads = [e for e in platform.orch.journal(record.project_id).events() if e.kind is EventKind.UPLOAD]
    assert uploads and uploads[-1].payload == perm_id


def test_upload_path_confinement(platform):
    record = platform.create_demo()
    with pytest.raises(ResultNotFound):
        platform.orch.upload_result(record.project_id, "../../etc/passwd", {})


def test_upload_with_rdms_down(platform):
    record = platform.create_demo()
    platform.orch.start_project(record.project_id)
    platform.run_demo_workload(record.project_id)
    platform.orch.stop_project(record.project_id)
    platform.rdms.handle.stop()
    with pytest.raises(RdmsError):
        platform.orch.upload_result(record.project_id, "out.csv", {})
    assert record.status is ProjectStatus.STOPPED


# -- archive ---------------------------------------------------------------------------


def test_archive_content_list(platform):
    record = platform.create_demo()
    platform.orch.start_project(record.project_id)
    platform.run_demo_workload(record.project_id)
    platform.orch.stop_project(record.project_id)
    perm_id = platform.orch.archive_project(record.project_id)
    descriptor = platform.rdms.client.resolve_dataset(platform.rdms.token, perm_id)
    paths = {f.relative_path for f in descriptor.files}
    assert "image.tar" in paths
    assert "datasets.yaml" in paths
    assert "state.json" in paths
    assert "results/out.csv" in paths
    assert "code/analysis/run_demo.py" in paths
    state_bytes = platform.rdms.client.read_file(platform.rdms.token, perm_id, "state.json")
    state = json.loads(state_bytes)
    assert state["specDigest"] == record.spec.spec_digest
    archive_events = [e for e in platform.orch.journal(record.project_id).events() if e.kind is EventKind.ARCHIVE]
    assert archive_events and archive_events[-1].payload == perm_id


def test_archive_while_running(platform):
    record = platform.create_demo()
    platform.orch.start_project(record.project_id)
    with pytest.raises(InvalidState):
        platform.orch.archive_project(record.project_id)


def test_archive_dirty_workspace(platform):
    record = platform.create_demo()
    (record.project_dir / "scratch.txt").write_text("uncommitted")
    with pytest.raises(DirtyWorkspace):
        platform.orch.archive_project(record.project_id)
    platform.commit_workspace(record.project_id)
    assert platform.orch.archive_project(record.project_id)


# -- shares -----------------------------------------------------------------------------


def test_share_format_and_journal(platform):
    record = platform.create_demo()
    share = platform.orch.create_share(record.project_id)
    assert len(share.share_id) == 26
    assert share.commit_id == record.spec.tree.commit_id
    assert share.spec_digest == record.spec.spec_digest
    shares = [e for e in platform.orch.journal(record.project_id).events() if e.kind is EventKind.SHARE]
    assert shares and shares[-1].payload == share.share_id


def test_share_requires_clean_tree(platform):
    record = platform.create_demo()
    (record.project_dir / "edit.txt").write_text("x")
    with pytest.raises(RepositoryDirty):
        platform.orch.create_share(record.project_id)
    platform.commit_workspace(record.project_id)
    platform.orch.create_share(record.project_id)


def test_two_shares_distinct_ids_same_digest(platform):
    record = platform.create_demo()
    s1 = platform.orch.create_share(record.project_id)
    s2 = platform.orch.create_share(record.project_id)
    assert s1.share_id != s2.share_id
    assert s1.spec_digest == s2.spec_digest


def test_open_share_reuses_image_without_building(platform):
    record = platform.create_demo()
    share = platform.orch.create_share(record.project_id)
    builds_before = platform.adapter.build_count()
    opened = platform.orch.open_share(share.share_id, "rrp-demo")
    platform.orch.wait_for(opened.project_id, TERMINAL)
    assert opened.status is ProjectStatus.READY
    assert platform.adapter.build_count() == builds_before
    assert opened.spec.tree.commit_id == share.commit_id
    assert opened.spec.spec_digest == share.spec_digest
    assert opened.image_ref == share.image_ref
    assert opened.owner == "rrp-demo" and opened.name != record.name


def test_open_share_survives_source_deletion(platform):
    record = platform.create_demo()
    share = platform.orch.create_share(record.project_id)
    platform.orch.delete_project(record.project_id)
    opened = platform.orch.open_share(share.share_id, "rrp-demo")
    platform.orch.wait_for(opened.project_id, TERMINAL)
    assert opened.status is ProjectStatus.READY
    assert opened.image_ref == share.image_ref


def test_open_unknown_share(platform):
    with pytest.raises(ShareNotFound):
        platform.orch.open_share("a" * 26, "rrp-demo")


# -- events / routing ----------------------------------------------------------------------


def test_events_replay_from_zero(platform):
    record = platform.create_demo()
    subscription = platform.orch.project_events(record.project_id, 0)
    first = subscription.next(timeout=1)
    assert first.sequence == 1
    assert first.kind is EventKind.STATUS and first.payload == "Cloning"


def test_two_subscribers_identical(platform):
    record = platform.create_demo()
    head = platform.orch.journal(record.project_id).head_sequence
    subs = [platform.orch.project_events(record.project_id, 0) for _ in range(2)]
    seen = [[s.next(timeout=1) for _ in range(head)] for s in subs]
    assert seen[0] == seen[1]
    assert [e.sequence for e in seen[0]] == list(range(1, head + 1))


def test_events_beyond_head_live_only(platform):
    record = platform.create_demo()
    head = platform.orch.journal(record.project_id).head_sequence
    subscription = platform.orch.project_events(record.project_id, head + 100)
    assert subscription.next(timeout=0.05) is None
    platform.orch.journal(record.project_id).append(EventKind.RUN_LOG, "live line")
    live = subscription.next(timeout=1)
    assert live.payload == "live line"


def test_journal_gapless_and_monotonic(platform):
    record = platform.create_demo()
    platform.orch.start_project(record.project_id)
    platform.run_demo_workload(record.project_id)
    platform.orch.stop_project(record.project_id)
    events = platform.orch.journal(record.project_id).events()
    sequences = [e.sequence for e in events]
    assert sequences == list(range(1, len(sequences) + 1))


def test_route(platform):
    record = platform.create_demo()
    with pytest.raises(NoActiveSession):
        platform.orch.route(f"/session/{record.project_id}/")
    info = platform.orch.start_project(record.project_id)
    session = platform.orch.route(f"/session/{record.project_id}/lab/tree")
    assert session.session_id == info.session_id
    platform.orch.stop_project(record.project_id)
    with pytest.raises(NoActiveSession):
        platform.orch.route(f"/session/{record.project_id}/")
    with pytest.raises(UnknownProject):
        platform.orch.route("/session/p-missing/")
    with pytest.raises(UnknownProject):
        platform.orch.route("/not-a-session-path")


# -- restart ---------------------------------------------------------------------------------


def test_restart_reloads_records_and_journals(platform, tmp_path):
    record = platform.create_demo()
    platform.orch.start_project(record.project_id)
    project_id = record.project_id
    head = platform.orch.journal(project_id).head_sequence
    platform.orch.close()

    reloaded = Orchestrator(
        PlatformConfig(data_dir=platform.tmp / "platform", rdms_url=platform.rdms.url),
        platform.adapter,
        rdms=platform.rdms.client,
    )
    try:
        record2 = reloaded.get_project(project_id)
        # sessions do not survive; Running collapses to Stopped on reload
        assert record2.status is ProjectStatus.STOPPED
        assert record2.name == record.name
        assert record2.image_ref == record.image_ref
        assert record2.spec.spec_digest == record.spec.spec_digest
        events = reloaded.journal(project_id).events()
        assert [e.sequence for e in events] == list(range(1, head + 2))
        assert events[-1].payload == "Stopped"
        # shares also reload
        share = reloaded.create_share(project_id)
        assert reloaded.get_share(share.share_id).share_id == share.share_id
    finally:
        reloaded.close()


def test_create_with_unreachable_repo_fails(platform, tmp_path):
    source = ProjectSource(repo_url=str(tmp_path / "no-such-repo"))
    record = platform.orch.create_project("rrp-demo", source, "unreachable")
    platform.orch.wait_for(record.project_id, TERMINAL)
    assert record.status is ProjectStatus.FAILED
    assert "CloneFailed" in record.failure
    assert status_payloads(platform, record.project_id)[-1] == "Failed"


def test_bounded_build_concurrency_drains_fifo(tmp_path, rdms):
    from rrp.demo import create_demo_repo, demo_dataset_files
    from rrp.runtime.sim import SimRuntime

    perm_id = rdms.client.register_dataset(rdms.token, demo_dataset_files(), {})
    repo = create_demo_repo(tmp_path / "repo", rdms.url, perm_id)
    orch = Orchestrator(
        PlatformConfig(data_dir=tmp_path / "data", rdms_url=rdms.url, build_concurrency=1),
        SimRuntime(scratch_dir=tmp_path / "sim"),
        rdms=rdms.client,
    )
    try:
        records = [
            orch.create_project("rrp-demo", ProjectSource(repo_url=str(repo)), f"queued-{i}")
            for i in range(4)
        ]
        for record in records:
            orch.wait_for(record.project_id, TERMINAL, timeout=120)
            assert record.status is ProjectStatus.READY, record.failure
    finally:
        orch.close()
