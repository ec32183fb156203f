"""Acceptance suite: one test per criterion, each reported as a
`[PASS]/[FAIL]` line in the terminal summary.

Everything runs against the sim runtime and the reference RDMS; the final
test exercises a real container daemon and skips itself when none is
reachable.
"""

from __future__ import annotations

import json
import random
import socket
import time

import httpx
import pytest

from rrp import bundle, gitio
from rrp.api import ApiConfig, ApiService
from rrp.build_plan import image_reference, plan_build, render_recipe
from rrp.config import SimRuntimeConfig
from rrp.errors import InvalidState, RepositoryDirty, UnpublishedDatasets
from rrp.journal import EventKind
from rrp.orchestrator import TRANSITIONS, ProjectStatus
from rrp.project_spec import load_project_spec, ProjectSource, WorkingTree
from rrp.runtime.sim import SimRuntime

from .conftest import TERMINAL, build_platform, tamper_archive
from .test_project_spec import mutation_trials


# -- 1. end-to-end lifecycle ---------------------------------------------------------


@pytest.mark.acceptance("end-to-end lifecycle: 50 repetitions, each < 10 s, zero flakes")
def test_lifecycle_fifty_repetitions(platform):
    for i in range(50):
        started = time.monotonic()
        record = platform.create_demo(name=f"lifecycle-{i}")
        assert record.status is ProjectStatus.READY, record.failure
        platform.orch.start_project(record.project_id)
        code, _ = platform.run_demo_workload(record.project_id)
        assert code == 0
        platform.orch.stop_project(record.project_id)
        entries = platform.orch.list_results(record.project_id)
        assert [e.relative_path for e in entries] == ["out.csv"]
        elapsed = time.monotonic() - started
        assert elapsed < 10.0, f"repetition {i} took {elapsed:.2f}s"


# -- 2. determinism --------------------------------------------------------------------


@pytest.mark.acceptance("determinism: 100 parse/plan/render cycles byte-identical; 1000 mutations change digest")
def test_parse_plan_render_determinism(platform, tmp_path):
    source = ProjectSource(repo_url=str(platform.repo))
    tree = WorkingTree(root_path=platform.repo, commit_id=gitio.head_commit(platform.repo), dirty=False)

    recipes = set()
    refs = set()
    for _ in range(100):
        spec = load_project_spec(source, tree)
        plan = plan_build(spec.environment, spec.spec_digest)
        recipes.add(render_recipe(plan))
        refs.add(image_reference("Demo Project", spec.spec_digest))
    assert len(recipes) == 1 and len(refs) == 1

    assert mutation_trials(tmp_path, trials=1000) == 0


# -- 3. share semantics ------------------------------------------------------------------


@pytest.mark.acceptance("share: open_share reuses commit/digest/image with zero extra builds")
def test_share_without_rebuild(platform):
    record = platform.create_demo()
    share = platform.orch.create_share(record.project_id)
    builds_before = platform.adapter.build_count()
    opened = platform.orch.open_share(share.share_id, "rrp-demo")
    platform.orch.wait_for(opened.project_id, TERMINAL)
    assert opened.status is ProjectStatus.READY, opened.failure
    assert opened.spec.tree.commit_id == share.commit_id
    assert opened.spec.spec_digest == share.spec_digest
    assert opened.image_ref == share.image_ref
    assert platform.adapter.build_count() == builds_before


# -- 4. clean-repo gate -------------------------------------------------------------------


@pytest.mark.acceptance("clean-repo gate: share/archive/export all refuse a dirty tree, succeed after commit")
def test_clean_repo_gate(platform, tmp_path):
    record = platform.create_demo()
    (record.project_dir / "scratch.txt").write_text("uncommitted edit")

    with pytest.raises(RepositoryDirty):
        platform.orch.create_share(record.project_id)
    with pytest.raises(RepositoryDirty):  # DirtyWorkspace is the same condition
        platform.orch.archive_project(record.project_id)
    with pytest.raises(RepositoryDirty):
        bundle.export_player_bundle(platform.orch, record.project_id, tmp_path / "dirty.tar.gz")

    gitio.commit_all(record.project_dir, "commit the edit")
    assert platform.orch.create_share(record.project_id).share_id
    assert platform.orch.archive_project(record.project_id)
    assert bundle.export_player_bundle(platform.orch, record.project_id, tmp_path / "clean.tar.gz").is_file()


# -- 5. bundle round trip ---------------------------------------------------------------------


@pytest.mark.acceptance("bundle round trip: hermetic playback reproduces hashes; tamper names the path")
def test_bundle_round_trip(platform, tmp_path, monkeypatch):
    record = platform.create_demo()
    platform.orch.start_project(record.project_id)
    platform.run_demo_workload(record.project_id)
    platform.orch.stop_project(record.project_id)
    original = (record.results_dir / "out.csv").read_bytes()

    archive = bundle.export_player_bundle(platform.orch, record.project_id, tmp_path / "demo.tar.gz")
    assert bundle.verify_bundle(archive).ok

    tampered = tamper_archive(archive, "data/raw_data/measurements.csv", tmp_path / "bad.tar.gz")
    report = bundle.verify_bundle(tampered)
    assert not report.ok
    assert [f[0] for f in report.failures] == ["data/raw_data/measurements.csv"]

    # hermetic: originating services down, any socket connect forbidden
    platform.rdms.handle.stop()
    player = SimRuntime(scratch_dir=tmp_path / "player")

    def refuse(*args, **kwargs):
        raise AssertionError("network touched during hermetic playback")

    monkeypatch.setattr(socket.socket, "connect", refuse)
    monkeypatch.setattr(socket, "create_connection", refuse)
    handle = bundle.play_bundle(archive, player, tmp_path / "work")
    code, _ = player.run_python(handle, "/project/analysis/run_demo.py")
    assert code == 0
    assert (tmp_path / "work" / "results" / "out.csv").read_bytes() == original


# -- 6. player script ----------------------------------------------------------------------------


@pytest.mark.acceptance("player script: publish-then-export reproduces hashes; unpublished dataset is named")
def test_player_script(platform, tmp_path):
    record = platform.create_demo()
    platform.orch.start_project(record.project_id)
    platform.run_demo_workload(record.project_id)
    platform.orch.stop_project(record.project_id)
    original = (record.results_dir / "out.csv").read_bytes()

    platform.orch.publish_image(record.project_id, "registry.example.org")
    with pytest.raises(UnpublishedDatasets) as exc:
        bundle.export_player_script(platform.orch, record.project_id, tmp_path / "early.tar.gz")
    assert exc.value.perm_ids == [platform.perm_id]

    platform.rdms.client.publish(platform.rdms.token, platform.perm_id)
    script = bundle.export_player_script(platform.orch, record.project_id, tmp_path / "script.tar.gz")

    full = bundle.export_player_bundle(platform.orch, record.project_id, tmp_path / "full.tar.gz")
    assert script.stat().st_size < 0.01 * full.stat().st_size

    player = SimRuntime(registry=platform.adapter.registry, scratch_dir=tmp_path / "player")
    handle = bundle.play_script(script, player, tmp_path / "work")
    code, _ = player.run_python(handle, "/project/analysis/run_demo.py")
    assert code == 0
    assert (tmp_path / "work" / "results" / "out.csv").read_bytes() == original


# -- 7. read-only mounts ----------------------------------------------------------------------------


@pytest.mark.acceptance("read-only mounts: writes under openbis/ are denied")
def test_read_only_mounts(platform):
    from rrp.errors import MountReadOnly

    record = platform.create_demo()
    platform.orch.start_project(record.project_id)
    session = record.session
    with pytest.raises(MountReadOnly):
        platform.adapter.write_session_file(session, "/openbis/raw_data/signal.bin", b"overwrite")
    with pytest.raises(MountReadOnly):
        platform.adapter.write_session_file(session, "/openbis/raw_data/new-file", b"new")
    # the materialized tree itself carries read-only modes on disk
    # (checked via mode bits: os.access is meaningless when running as root)
    mode = (record.openbis_dir / "raw_data" / "signal.bin").stat().st_mode
    assert not (mode & 0o222)


# -- 8. state-machine fuzz ----------------------------------------------------------------------------


def _assert_declared_transitions(platform, project_id):
    events = [e for e in platform.orch.journal(project_id).events() if e.kind is EventKind.STATUS]
    statuses = [ProjectStatus.NEW] + [ProjectStatus(e.payload) for e in events]
    for current, following in zip(statuses, statuses[1:]):
        assert following in TRANSITIONS[current], f"undeclared transition {current} -> {following}"


def _assert_gapless(platform, project_id):
    sequences = [e.sequence for e in platform.orch.journal(project_id).events()]
    assert sequences == list(range(1, len(sequences) + 1))


def _assert_confined(platform, project_id):
    for entry in platform.orch.list_results(project_id):
        assert not entry.relative_path.startswith("/")
        assert ".." not in entry.relative_path.split("/")


@pytest.mark.acceptance("state-machine fuzz: 10000 commands, declared transitions, gapless journals, confined results")
def test_state_machine_fuzz(platform):
    rng = random.Random(0xACCE)
    orch = platform.orch
    pool: list[str] = []
    created = 0
    adversarial = [
        "/results/../../escape.txt",
        "/results/../escape2.txt",
        "/results/nested/../../../escape3.txt",
    ]

    def command_create():
        nonlocal created
        created += 1
        record = platform.create_demo(name=f"fuzz-{created}")
        pool.append(record.project_id)

    def random_project():
        return rng.choice(pool)

    commands = 0
    while commands < 10_000:
        commands += 1
        if not pool:
            command_create()
            continue
        roll = rng.random()
        project_id = random_project()
        record = orch.get_project(project_id)
        try:
            if roll < 0.30:
                orch.start_project(project_id)
            elif roll < 0.60:
                orch.stop_project(project_id)
            elif roll < 0.75:
                orch.create_share(project_id)
            elif roll < 0.80:
                orch.archive_project(project_id)
            elif roll < 0.88:
                if record.status is ProjectStatus.RUNNING and record.session is not None:
                    target = rng.choice(adversarial)
                    try:
                        platform.adapter.write_session_file(record.session, target, b"escape attempt")
                    except Exception:
                        pass
                    _assert_confined(platform, project_id)
            elif roll < 0.92 and len(pool) > 1:
                orch.delete_project(project_id)
                pool.remove(project_id)
            elif len(pool) < 3 and created < 40:
                command_create()
        except (InvalidState, RepositoryDirty):
            pass  # refused commands are the expected outcome off the happy path

    for project_id in pool:
        record = orch.get_project(project_id)
        if record.status is ProjectStatus.RUNNING:
            orch.stop_project(project_id)
    all_ids = [r.project_id for r in orch.list_projects() if r.name.startswith("fuzz-")]
    assert all_ids
    for project_id in all_ids:
        _assert_declared_transitions(platform, project_id)
        _assert_gapless(platform, project_id)
        if orch.get_project(project_id).status is not ProjectStatus.DELETED:
            _assert_confined(platform, project_id)


# -- 9. API conformance ----------------------------------------------------------------------------


@pytest.mark.acceptance("API conformance: 401 walk outside login/health; SSE reconnect without duplicates or gaps")
def test_api_conformance(tmp_path, rdms):
    from .test_api import WALK, read_sse

    plat = build_platform(tmp_path, rdms, SimRuntimeConfig(serve_sessions=True))
    handle = ApiService(plat.orch, ApiConfig(port=0, heartbeat_seconds=0.2)).serve()
    try:
        assert httpx.get(f"{handle.url}/api/v1/health").status_code == 200
        assert httpx.post(
            f"{handle.url}/api/v1/login", json={"user": "rrp-demo", "password": "rrp-demo"}
        ).status_code == 200
        for method, path in WALK:
            resp = httpx.request(method, f"{handle.url}{path}")
            assert resp.status_code == 401, f"{method} {path} -> {resp.status_code}"

        token = httpx.post(
            f"{handle.url}/api/v1/login", json={"user": "rrp-demo", "password": "rrp-demo"}
        ).json()["token"]
        client = httpx.Client(base_url=handle.url, headers={"Authorization": f"Bearer {token}"}, timeout=60)
        project_id = client.post(
            "/api/v1/projects", json={"repoUrl": str(plat.repo), "name": "conformance"}
        ).json()["projectId"]
        plat.orch.wait_for(project_id, TERMINAL)
        head = plat.orch.journal(project_id).head_sequence
        assert head > 4

        first = read_sse(client, f"/api/v1/projects/{project_id}/events?from=0", head // 2)
        resume = int(first[-1]["id"])
        second = read_sse(client, f"/api/v1/projects/{project_id}/events?from={resume}", head - resume)
        ids = [int(f["id"]) for f in first + second]
        assert ids == list(range(1, head + 1)), "duplicates or silent gaps on reconnect"
        payloads = [json.loads(f["data"]) for f in first + second]
        assert [p["payload"] for p in payloads if p["kind"] == "Status"] == [
            "Cloning",
            "Planning",
            "Building",
            "Ready",
        ]
    finally:
        handle.stop()
        plat.orch.close()


# -- 10. real-runtime integration (gated) ----------------------------------------------------------------


@pytest.mark.real_runtime
@pytest.mark.acceptance("real runtime: daemon build + session probe matches sim results (auto-skip without daemon)")
def test_real_runtime_integration(tmp_path, rdms):
    from rrp.runtime.docker import DockerRuntime, daemon_available

    if not daemon_available():
        pytest.skip("no container daemon reachable")

    plat = build_platform(tmp_path, rdms)  # sim lane for the reference hashes
    record = plat.create_demo()
    plat.orch.start_project(record.project_id)
    plat.run_demo_workload(record.project_id)
    plat.orch.stop_project(record.project_id)
    reference = (record.results_dir / "out.csv").read_bytes()

    from rrp.config import PlatformConfig
    from rrp.orchestrator import Orchestrator

    real = Orchestrator(
        PlatformConfig(data_dir=tmp_path / "real-platform", rdms_url=rdms.url),
        DockerRuntime(),
        rdms=rdms.client,
    )
    try:
        real_record = real.create_project("rrp-demo", ProjectSource(repo_url=str(plat.repo)), "real-demo")
        real.wait_for(real_record.project_id, TERMINAL, timeout=600)
        assert real_record.status is ProjectStatus.READY, real_record.failure
        info = real.start_project(real_record.project_id)
        deadline = time.monotonic() + 60
        page = None
        while time.monotonic() < deadline:
            try:
                page = httpx.get(f"http://{info.internal_endpoint}/", timeout=5)
                break
            except httpx.HTTPError:
                time.sleep(1)
        assert page is not None and page.status_code == 200
        code, _ = real.run_workload(real_record.project_id, "/project/analysis/run_demo.py")
        assert code == 0
        real.stop_project(real_record.project_id)
        produced = (real.get_project(real_record.project_id).results_dir / "out.csv").read_bytes()
        assert produced == reference
    finally:
        real.close()
