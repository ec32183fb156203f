"""Deterministic sim backend: builds, sessions, mounts, export, push."""

from __future__ import annotations

import pytest

from rrp.build_plan import ImageRef
from rrp.config import SimRuntimeConfig
from rrp.errors import (
    AuthFailed,
    BuildFailed,
    CorruptArchive,
    ImageNotFound,
    ImagePullFailed,
    MountReadOnly,
    ResourceDenied,
    UnknownSession,
)
from rrp.fsutil import sha256_bytes
from rrp.runtime import MountSpec, ResourceLimits, SessionStatus
from rrp.runtime.sim import SimRegistry, SimRuntime

RECIPE = (
    "# rrp-spec-digest: " + "0" * 64 + "\n"
    "# step: BaseImage\nFROM x\n"
    "# step: CopyProject\nCOPY . /project\n"
    "# step: Entrypoint\nCMD [\"true\"]\n"
)
REF = ImageRef(repository="rrp/demo", tag="0" * 12)
LIMITS = ResourceLimits(cpu_cores=1.0, memory_bytes=1 << 30)


@pytest.fixture
def sim(tmp_path):
    return SimRuntime(scratch_dir=tmp_path / "sim")


@pytest.fixture
def context(tmp_path):
    ctx = tmp_path / "ctx"
    (ctx / "analysis").mkdir(parents=True)
    (ctx / "analysis" / "run.py").write_text("print('hi')\n")
    (ctx / ".git").mkdir()
    (ctx / ".git" / "HEAD").write_text("ref: refs/heads/main\n")
    return ctx


def build(sim, context, ref=REF, recipe=RECIPE):
    lines = []
    result = sim.build_image(recipe, context, ref, lines.append)
    return result, lines


# -- builds -----------------------------------------------------------------


def test_build_image_id_and_log_lines(sim, context):
    result, lines = build(sim, context)
    assert result.success
    assert result.image_id == sha256_bytes(RECIPE.encode())
    assert result.log_line_count == 3 == len(lines)


def test_build_fail_at_step(tmp_path, context):
    sim = SimRuntime(SimRuntimeConfig(fail_at_step=2), scratch_dir=tmp_path / "s")
    lines = []
    with pytest.raises(BuildFailed) as exc:
        sim.build_image(RECIPE, context, REF, lines.append)
    assert len(lines) == 2
    assert exc.value.log_tail == lines


def test_build_same_recipe_same_id(sim, context):
    first, _ = build(sim, context)
    second, _ = build(sim, context)
    assert first.image_id == second.image_id


def test_build_context_excludes_git(sim, context):
    build(sim, context)
    image = sim.image_for(REF)
    assert "analysis/run.py" in image.files
    assert not any(p.startswith(".git") for p in image.files)


def test_identical_call_sequences_identical_traces(tmp_path, context):
    def run(scratch):
        sim = SimRuntime(scratch_dir=scratch)
        result, lines = build(sim, context)
        handle = sim.create_session(REF, LIMITS, [])
        sim.stop_session(handle)
        trace = sim.session(handle).status_trace
        return sim.ledger, result.image_id, list(trace)

    a = run(tmp_path / "a")
    b = run(tmp_path / "b")
    assert a == b


# -- sessions -----------------------------------------------------------------


def test_create_session_records_limits(sim, context, tmp_path):
    build(sim, context)
    data = tmp_path / "data"
    data.mkdir()
    handle = sim.create_session(REF, LIMITS, [MountSpec(data, "/openbis/raw", True)])
    assert handle.status is SessionStatus.UP
    assert sim.session(handle).limits == LIMITS
    assert handle.internal_endpoint.startswith("127.0.0.1:")


def test_create_session_unknown_image(sim):
    with pytest.raises(ImageNotFound):
        sim.create_session(REF, LIMITS, [])


def test_resource_caps_denied(tmp_path, context):
    sim = SimRuntime(SimRuntimeConfig(max_cpu=2.0), scratch_dir=tmp_path / "s")
    build(sim, context)
    with pytest.raises(ResourceDenied):
        sim.create_session(REF, ResourceLimits(4.0, 1 << 30), [])


def test_resource_limits_type_invariants():
    with pytest.raises(ValueError):
        ResourceLimits(cpu_cores=0, memory_bytes=1 << 30)
    with pytest.raises(ValueError):
        ResourceLimits(cpu_cores=1, memory_bytes=1024)


def test_readonly_mount_rejects_writes(sim, context, tmp_path):
    build(sim, context)
    data = tmp_path / "data"
    data.mkdir()
    (data / "in.txt").write_text("input")
    results = tmp_path / "results"
    results.mkdir()
    handle = sim.create_session(
        REF,
        LIMITS,
        [MountSpec(data, "/openbis/raw", True), MountSpec(results, "/results", False)],
    )
    with pytest.raises(MountReadOnly):
        sim.write_session_file(handle, "/openbis/raw/in.txt", b"overwrite")
    with pytest.raises(MountReadOnly):
        sim.write_session_file(handle, "/openbis/raw/new.txt", b"new")
    sim.write_session_file(handle, "/results/out.txt", b"ok")
    assert (results / "out.txt").read_bytes() == b"ok"
    assert sim.read_session_file(handle, "/openbis/raw/in.txt") == b"input"


def test_traversal_cannot_escape_readonly_mount(sim, context, tmp_path):
    build(sim, context)
    data = tmp_path / "data"
    data.mkdir()
    handle = sim.create_session(REF, LIMITS, [MountSpec(data, "/openbis/raw", True)])
    sim.write_session_file(handle, "/openbis/raw/../../tmp/foo", b"x")
    # normalizes to /tmp/foo -> in-memory overlay, never the host filesystem
    assert not (tmp_path / "tmp").exists()
    assert sim.read_session_file(handle, "/tmp/foo") == b"x"


def test_stop_idempotent_destroy_unknown(sim, context):
    build(sim, context)
    handle = sim.create_session(REF, LIMITS, [])
    assert sim.stop_session(handle).status is SessionStatus.STOPPED
    assert sim.stop_session(handle).status is SessionStatus.STOPPED
    sim.destroy_session(handle)
    with pytest.raises(UnknownSession):
        sim.destroy_session(handle)


def test_session_ids_never_reused(sim, context):
    build(sim, context)
    seen = set()
    for _ in range(5):
        handle = sim.create_session(REF, LIMITS, [])
        assert handle.session_id not in seen
        seen.add(handle.session_id)
        sim.destroy_session(handle)


# -- export / import / push ------------------------------------------------------


def test_export_import_round_trip(sim, context, tmp_path):
    result, _ = build(sim, context)
    blob = sim.export_image(REF)
    other = SimRuntime(scratch_dir=tmp_path / "other")
    ref = other.import_image(blob)
    assert ref == REF
    assert other.image_for(ref).image_id == result.image_id
    assert other.image_for(ref).files == sim.image_for(REF).files


def test_import_truncated_archive(sim, context):
    build(sim, context)
    blob = sim.export_image(REF)
    with pytest.raises(CorruptArchive):
        sim.import_image(blob[: len(blob) // 2])


def test_export_unknown_image(sim):
    with pytest.raises(ImageNotFound):
        sim.export_image(REF)


def test_push_ledger_and_idempotent_reference(sim, context):
    build(sim, context)
    r1 = sim.push_image(REF, "registry.example.org")
    r2 = sim.push_image(REF, "registry.example.org")
    pushes = sim.pushes()
    assert len(pushes) == 2
    assert r1.remote_ref == r2.remote_ref == "registry.example.org/rrp/demo:000000000000"


def test_push_auth_fault(tmp_path, context):
    sim = SimRuntime(SimRuntimeConfig(fail_auth=True), scratch_dir=tmp_path / "s")
    build(sim, context)
    with pytest.raises(AuthFailed):
        sim.push_image(REF, "registry.example.org")


def test_pull_from_shared_registry(sim, context, tmp_path):
    registry = SimRegistry()
    origin = SimRuntime(registry=registry, scratch_dir=tmp_path / "o")
    build(origin, context)
    receipt = origin.push_image(REF, "registry.example.org")
    replica = SimRuntime(registry=registry, scratch_dir=tmp_path / "r")
    assert replica.pull_image(receipt.remote_ref) == REF
    with pytest.raises(ImagePullFailed):
        replica.pull_image("registry.example.org/rrp/absent:111111111111")


def test_concurrent_identical_builds_coalesce(sim, context):
    import threading

    results = []
    lock = threading.Lock()

    def worker():
        result, _ = build(sim, context)
        with lock:
            results.append(result)

    threads = [threading.Thread(target=worker) for _ in range(4)]
    for t in threads:
        t.start()
    for t in threads:
        t.join()
    assert len({r.image_id for r in results}) == 1
    real_builds = [e for e in sim.ledger if e["op"] == "build" and not e["cached"]]
    assert len(real_builds) == 1, "identical concurrent builds of one ref must coalesce"


def test_mount_spec_requires_absolute_container_path(tmp_path):
    with pytest.raises(ValueError):
        MountSpec(host_path=tmp_path, container_path="relative/path", read_only=True)
