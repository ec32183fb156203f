"""Bundled demo fixture: a tiny project repository plus a deterministic
dataset, used by the acceptance suite, the CLI demo, and local evaluation.

The fixture's analysis script reads every mounted file and writes a
hash-stable summary to results/out.csv, so reruns anywhere (sim sessions,
bundle playback, real containers) must produce byte-identical output.
"""

from __future__ import annotations

import random
from pathlib import Path

from . import gitio
from .project_spec import DatasetBinding, serialize_datasets_manifest

DEMO_FOLDER = "raw_data"
DEMO_SIGNAL_BYTES = 1 << 20  # incompressible payload keeps bundle sizes honest

_ANALYSIS_SCRIPT = '''\
"""Demo workload: summarize every mounted input file into results/out.csv.

Reads are rooted at RRP_DATA_DIR (default /openbis) and output goes to
RRP_RESULTS_DIR (default /results) so the same script runs inside a real
container and under the platform's simulated sessions.
"""

import hashlib
import os
from pathlib import Path

data_root = Path(os.environ.get("RRP_DATA_DIR", "/openbis"))
results_root = Path(os.environ.get("RRP_RESULTS_DIR", "/results"))

rows = []
for dirpath, dirnames, filenames in os.walk(data_root, followlinks=True):
    dirnames.sort()
    for name in sorted(filenames):
        path = Path(dirpath) / name
        blob = path.read_bytes()
        rel = path.relative_to(data_root).as_posix()
        rows.append((rel, len(blob), hashlib.sha256(blob).hexdigest()))
rows.sort()

results_root.mkdir(parents=True, exist_ok=True)
with open(results_root / "out.csv", "w", newline="\\n") as fh:
    fh.write("path,bytes,sha256\\n")
    for rel, size, digest in rows:
        fh.write(f"{rel},{size},{digest}\\n")

print(f"summarized {len(rows)} file(s)")
'''


def demo_dataset_files() -> list[tuple[str, bytes]]:
    rng = random.Random(1337)
    signal = rng.randbytes(DEMO_SIGNAL_BYTES)
    measurements = "sample,value\n" + "".join(
        f"s{i:03d},{rng.randint(0, 9999)}\n" for i in range(100)
    )
    return [
        ("measurements.csv", measurements.encode("utf-8")),
        ("signal.bin", signal),
    ]


def create_demo_repo(dest: Path, server_url: str, perm_id: str, folder: str = DEMO_FOLDER) -> Path:
    """Materialize and commit the demo project repository at `dest`."""
    dest = Path(dest)
    gitio.init_repo(dest)
    binder = dest / ".binder"
    binder.mkdir()
    (binder / "runtime.txt").write_text("python-3.11\n")
    (binder / "requirements.txt").write_text("six==1.16.0\n")
    (binder / "start").write_text("#!/bin/sh\nexec python3 -m http.server 8888 --directory /project\n")
    rrp_dir = dest / ".rrp"
    rrp_dir.mkdir()
    binding = DatasetBinding(server_url=server_url, perm_id=perm_id, folder=folder)
    (rrp_dir / "datasets.yaml").write_text(serialize_datasets_manifest([binding]))
    analysis = dest / "analysis"
    analysis.mkdir()
    (analysis / "run_demo.py").write_text(_ANALYSIS_SCRIPT)
    (dest / "README.md").write_text(
        "# Demo project\n\nRun `analysis/run_demo.py` inside a session to summarize the mounted data.\n"
    )
    gitio.commit_all(dest, "demo project")
    return dest
