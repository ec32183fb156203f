#!/usr/bin/env python3
"""End-to-end tour of the platform on the sim runtime.

Boots a reference RDMS, registers the demo dataset, builds the demo project,
runs its workload, shares it, exports a player bundle, and replays the
bundle in a fresh directory, checking that the replayed results are
byte-identical.

Usage: python3 scripts/run_demo.py [--keep]
"""

from __future__ import annotations

import argparse
import sys
import tempfile
from pathlib import Path

sys.path.insert(0, str(Path(__file__).resolve().parents[1] / "src"))

from rrp import bundle
from rrp.config import PlatformConfig, RdmsServerConfig
from rrp.demo import create_demo_repo, demo_dataset_files
from rrp.orchestrator import Orchestrator, ProjectStatus
from rrp.project_spec import ProjectSource
from rrp.rdms import RdmsClient, serve_reference_rdms
from rrp.runtime.sim import SimRuntime

TERMINAL = {ProjectStatus.READY, ProjectStatus.FAILED}


def main() -> int:
    parser = argparse.ArgumentParser()
    parser.add_argument("--keep", action="store_true", help="leave the working directory in place")
    args = parser.parse_args()

    work = Path(tempfile.mkdtemp(prefix="rrp-demo-"))
    print(f"working directory: {work}")

    rdms = serve_reference_rdms(RdmsServerConfig(data_dir=work / "rdms", port=0))
    print(f"[1] reference RDMS up at {rdms.url}")

    client = RdmsClient(rdms.url)
    token = client.login("rrp-demo", "rrp-demo")
    perm_id = client.register_dataset(token, demo_dataset_files(), {"kind": "demo"})
    print(f"[2] demo dataset registered: {perm_id}")

    repo = create_demo_repo(work / "demo-repo", rdms.url, perm_id)
    print(f"[3] demo project repository committed at {repo}")

    adapter = SimRuntime(scratch_dir=work / "sim")
    orch = Orchestrator(PlatformConfig(data_dir=work / "platform", rdms_url=rdms.url), adapter, rdms=client)
    record = orch.create_project("rrp-demo", ProjectSource(repo_url=str(repo)), "Demo Project")
    orch.wait_for(record.project_id, TERMINAL, timeout=60)
    if record.status is not ProjectStatus.READY:
        print(f"build failed: {record.failure}", file=sys.stderr)
        return 1
    print(f"[4] project {record.project_id} built: image {record.image_ref}")

    info = orch.start_project(record.project_id)
    code, lines = orch.run_workload(record.project_id, "/project/analysis/run_demo.py")
    orch.stop_project(record.project_id)
    results = orch.list_results(record.project_id)
    print(f"[5] workload exit {code} ({lines[0] if lines else ''}); results: "
          + ", ".join(f"{e.relative_path} ({e.byte_size} B)" for e in results))

    share = orch.create_share(record.project_id)
    opened = orch.open_share(share.share_id, "rrp-demo")
    orch.wait_for(opened.project_id, TERMINAL, timeout=60)
    print(f"[6] share {share.share_id} opened as {opened.project_id} "
          f"(builds on ledger: {adapter.build_count()}, unchanged)")

    archive = bundle.export_player_bundle(orch, record.project_id, work / "demo-bundle.tar.gz")
    report = bundle.verify_bundle(archive)
    print(f"[7] player bundle {archive.name}: {archive.stat().st_size} bytes, verified ok={report.ok}")

    player = SimRuntime(scratch_dir=work / "player-sim")
    playback = work / "playback"
    handle = bundle.play_bundle(archive, player, playback)
    player.run_python(handle, "/project/analysis/run_demo.py")
    original = (record.results_dir / "out.csv").read_bytes()
    replayed = (playback / "results" / "out.csv").read_bytes()
    print(f"[8] bundle playback in {playback}: results byte-identical = {original == replayed}")

    orch.close()
    rdms.stop()
    if not args.keep:
        from rrp.fsutil import force_rmtree

        force_rmtree(work)
        print("cleaned up")
    return 0 if original == replayed else 1


if __name__ == "__main__":
    sys.exit(main())
