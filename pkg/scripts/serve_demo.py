#!/usr/bin/env python3
"""Boot a self-contained local deployment for browser use.

Starts the reference RDMS, seeds the demo dataset and a demo repository,
then serves the platform API (and the web console, if frontend/dist is
built) until interrupted. Log in with rrp-demo/rrp-demo.

Usage: python3 scripts/serve_demo.py [--port 7443] [--data DIR]
"""

from __future__ import annotations

import argparse
import sys
import time
from pathlib import Path

sys.path.insert(0, str(Path(__file__).resolve().parents[1] / "src"))

from rrp.api import ApiConfig, ApiService
from rrp.config import PlatformConfig, RdmsServerConfig, SimRuntimeConfig
from rrp.demo import create_demo_repo, demo_dataset_files
from rrp.orchestrator import Orchestrator
from rrp.rdms import RdmsClient, serve_reference_rdms
from rrp.runtime.sim import SimRuntime


def main() -> int:
    parser = argparse.ArgumentParser()
    parser.add_argument("--port", type=int, default=7443)
    parser.add_argument("--data", default="./rrp-demo-data")
    args = parser.parse_args()

    data = Path(args.data)
    rdms = serve_reference_rdms(RdmsServerConfig(data_dir=data / "rdms", port=0))
    client = RdmsClient(rdms.url)
    token = client.login("rrp-demo", "rrp-demo")
    perm_id = client.register_dataset(token, demo_dataset_files(), {"kind": "demo"})
    repo = create_demo_repo(data / "demo-repo", rdms.url, perm_id) if not (data / "demo-repo").exists() else data / "demo-repo"

    adapter = SimRuntime(SimRuntimeConfig(serve_sessions=True), scratch_dir=data / "sim")
    orch = Orchestrator(PlatformConfig(data_dir=data / "platform", rdms_url=rdms.url), adapter, rdms=client)

    ui_dir = Path(__file__).resolve().parents[1] / "frontend" / "dist"
    config = ApiConfig(port=args.port, ui_dir=ui_dir if ui_dir.is_dir() else None)
    handle = ApiService(orch, config).serve()

    print(f"platform:   {handle.url}  (login rrp-demo/rrp-demo)")
    print(f"RDMS:       {rdms.url}")
    print(f"demo repo:  {repo}")
    print(f"dataset:    {perm_id}")
    print("create a project from the demo repo URL above, then start it.")
    if config.ui_dir is None:
        print("note: frontend/dist not found; serving the fallback page at /")
    try:
        while True:
            time.sleep(3600)
    except KeyboardInterrupt:
        handle.stop()
        orch.close()
        rdms.stop()
    return 0


if __name__ == "__main__":
    sys.exit(main())
