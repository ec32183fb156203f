"""Command-line client and local service launcher.

Every project subcommand is a thin client of the REST API; `serve` and
`rdms-serve` boot the two local services, and `play` replays an exported
bundle against a container runtime without any platform at all.

Exit codes: 0 success, 1 user error, 2 system error.
"""

from __future__ import annotations

import argparse
import json
import os
import sys
import time
from pathlib import Path

import httpx

from . import __version__, bundle
from .api import ApiConfig, ApiService
from .config import PlatformConfig, RdmsServerConfig, SimRuntimeConfig
from .errors import RrpError
from .orchestrator import Orchestrator
from .rdms import serve_reference_rdms
from .runtime import RuntimeAdapter
from .runtime.sim import SimRuntime

DEFAULT_SERVER = "http://127.0.0.1:7443"

USER_ERROR = 1
SYSTEM_ERROR = 2


def _server_url(args) -> str:
    return args.server or os.environ.get("RRP_SERVER", DEFAULT_SERVER)


def _token_path() -> Path:
    return Path(os.environ.get("RRP_TOKEN_FILE", str(Path.home() / ".rrp" / "token")))


def _client(args) -> httpx.Client:
    headers = {}
    token_file = _token_path()
    if token_file.is_file():
        headers["Authorization"] = f"Bearer {token_file.read_text().strip()}"
    return httpx.Client(base_url=_server_url(args), headers=headers, timeout=300.0)


def _fail(message: str, code: int) -> int:
    print(f"error: {message}", file=sys.stderr)
    return code


def _api_error(resp: httpx.Response) -> int:
    try:
        doc = resp.json()
        message = f"{doc.get('error', 'Error')}: {doc.get('message', resp.text)}"
    except json.JSONDecodeError:
        message = resp.text or f"HTTP {resp.status_code}"
    return _fail(message, USER_ERROR if resp.status_code < 500 else SYSTEM_ERROR)


def _emit(args, doc, human: str | None = None) -> None:
    if args.json:
        print(json.dumps(doc, indent=2, sort_keys=True))
    elif human is not None:
        print(human)


def _project_table(projects: list[dict]) -> str:
    header = f"{'ID':<16} {'NAME':<24} {'STATUS':<10} IMAGE"
    rows = [header]
    for p in projects:
        image = ""
        if p.get("imageRef"):
            image = f"{p['imageRef']['repository']}:{p['imageRef']['tag']}"
        rows.append(f"{p['projectId']:<16} {p['name']:<24} {p['status']:<10} {image}")
    return "\n".join(rows)


def _make_adapter(kind: str) -> RuntimeAdapter:
    if kind == "sim":
        return SimRuntime(SimRuntimeConfig(serve_sessions=True))
    from .runtime.docker import DockerRuntime, daemon_available

    if kind == "docker":
        return DockerRuntime()
    return DockerRuntime() if daemon_available() else SimRuntime(SimRuntimeConfig(serve_sessions=True))


# -- subcommands -----------------------------------------------------------------


def cmd_login(args) -> int:
    url = _server_url(args)
    try:
        resp = httpx.post(f"{url}/api/v1/login", json={"user": args.user, "password": args.password}, timeout=60.0)
    except httpx.HTTPError as exc:
        return _fail(f"cannot reach {url}: {exc}", SYSTEM_ERROR)
    if resp.status_code != 200:
        return _api_error(resp)
    doc = resp.json()
    path = _token_path()
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text(doc["token"])
    _emit(args, doc, f"logged in as {doc['userId']} (token cached at {path})")
    return 0


def cmd_create(args) -> int:
    name = args.name or Path(args.repo.rstrip("/")).stem
    with _client(args) as client:
        resp = client.post("/api/v1/projects", json={"repoUrl": args.repo, "ref": args.ref, "name": name})
        if resp.status_code != 201:
            return _api_error(resp)
        record = resp.json()
        project_id = record["projectId"]
        if not args.json:
            print(f"created {project_id} ({name})")
        if args.no_wait:
            _emit(args, record)
            return 0
        last = ""
        deadline = time.monotonic() + args.timeout
        while time.monotonic() < deadline:
            record = client.get(f"/api/v1/projects/{project_id}").json()
            if record["status"] != last:
                last = record["status"]
                if not args.json:
                    print(f"status: {last}")
            if last in ("Ready", "Failed"):
                break
            time.sleep(0.2)
        _emit(args, record)
        if record["status"] == "Failed":
            return _fail(record.get("failure") or "build failed", USER_ERROR)
        return 0


def cmd_list(args) -> int:
    with _client(args) as client:
        resp = client.get("/api/v1/projects")
        if resp.status_code != 200:
            return _api_error(resp)
        projects = resp.json()
        _emit(args, projects, _project_table(projects))
        return 0


def cmd_start(args) -> int:
    body = {}
    if args.cpu is not None:
        body["cpuCores"] = args.cpu
    if args.mem is not None:
        body["memoryBytes"] = args.mem
    with _client(args) as client:
        resp = client.post(f"/api/v1/projects/{args.project_id}/start", json=body)
        if resp.status_code != 200:
            return _api_error(resp)
        doc = resp.json()
        _emit(args, doc, f"running; session at {_server_url(args)}{doc['publicPath']}")
        return 0


def cmd_stop(args) -> int:
    with _client(args) as client:
        resp = client.post(f"/api/v1/projects/{args.project_id}/stop")
        if resp.status_code != 200:
            return _api_error(resp)
        _emit(args, resp.json(), "stopped")
        return 0


def cmd_delete(args) -> int:
    with _client(args) as client:
        resp = client.delete(f"/api/v1/projects/{args.project_id}")
        if resp.status_code != 200:
            return _api_error(resp)
        _emit(args, resp.json(), "deleted")
        return 0


def cmd_results(args) -> int:
    with _client(args) as client:
        resp = client.get(f"/api/v1/projects/{args.project_id}/results")
        if resp.status_code != 200:
            return _api_error(resp)
        entries = resp.json()
        lines = [f"{e['byteSize']:>10}  {e['relativePath']}" for e in entries]
        _emit(args, entries, "\n".join(lines) if lines else "(no results)")
        return 0


def cmd_share(args) -> int:
    with _client(args) as client:
        resp = client.post(f"/api/v1/projects/{args.project_id}/share")
        if resp.status_code != 201:
            return _api_error(resp)
        doc = resp.json()
        _emit(args, doc, f"shareId: {doc['shareId']}")
        return 0


def cmd_open_share(args) -> int:
    with _client(args) as client:
        resp = client.post(f"/api/v1/shares/{args.share_id}/open")
        if resp.status_code != 201:
            return _api_error(resp)
        doc = resp.json()
        _emit(args, doc, f"opened as {doc['projectId']} ({doc['name']})")
        return 0


def cmd_bundle(args) -> int:
    with _client(args) as client:
        resp = client.get(f"/api/v1/projects/{args.project_id}/bundle")
        if resp.status_code != 200:
            return _api_error(resp)
        out = Path(args.output)
        out.parent.mkdir(parents=True, exist_ok=True)
        out.write_bytes(resp.content)
        _emit(args, {"path": str(out), "bytes": len(resp.content)}, f"wrote {out} ({len(resp.content)} bytes)")
        return 0


def cmd_play(args) -> int:
    adapter = _make_adapter(args.runtime)
    work = Path(args.work or Path.cwd() / "rrp-play")
    work.mkdir(parents=True, exist_ok=True)
    try:
        handle = bundle.play_bundle(Path(args.bundle), adapter, work)
    except RrpError as exc:
        return _fail(f"{type(exc).__name__}: {exc}", SYSTEM_ERROR)
    doc = {
        "sessionId": handle.session_id,
        "endpoint": handle.internal_endpoint,
        "workDir": str(work),
    }
    _emit(args, doc, f"session {handle.session_id} up at http://{handle.internal_endpoint}/ (workdir {work})")
    return 0


def cmd_rdms_serve(args) -> int:
    config = RdmsServerConfig(data_dir=Path(args.data), host=args.host, port=args.port)
    try:
        handle = serve_reference_rdms(config)
    except RrpError as exc:
        return _fail(str(exc), SYSTEM_ERROR)
    print(f"reference RDMS at {handle.url} (demo account {config.demo_user}/{config.demo_password})")
    try:
        while True:
            time.sleep(3600)
    except KeyboardInterrupt:
        handle.stop()
    return 0


def cmd_serve(args) -> int:
    platform_config = PlatformConfig.from_env(
        **({"data_dir": Path(args.data)} if args.data else {}),
        **({"rdms_url": args.rdms} if args.rdms else {}),
    )
    adapter = _make_adapter(args.runtime)
    orch = Orchestrator(platform_config, adapter)
    api_config = ApiConfig.from_env(**({"port": args.port} if args.port is not None else {}))
    ui_dir = Path(args.ui) if args.ui else Path(__file__).resolve().parents[2] / "frontend" / "dist"
    if ui_dir.is_dir():
        api_config.ui_dir = ui_dir
    try:
        handle = ApiService(orch, api_config).serve()
    except RrpError as exc:
        return _fail(str(exc), SYSTEM_ERROR)
    print(f"platform API at {handle.url} (runtime: {type(adapter).__name__}, RDMS: {platform_config.rdms_url})")
    try:
        while True:
            time.sleep(3600)
    except KeyboardInterrupt:
        handle.stop()
        orch.close()
    return 0


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="rrp", description="Reproducible research platform")
    parser.add_argument("--server", help=f"platform URL (default {DEFAULT_SERVER} or $RRP_SERVER)")
    parser.add_argument("--json", action="store_true", help="machine-readable output")
    parser.add_argument("--version", action="version", version=f"rrp {__version__}")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("serve", help="run the platform service")
    p.add_argument("--data", help="platform data directory (default $RRP_DATA_DIR)")
    p.add_argument("--rdms", help="RDMS base URL (default $RRP_RDMS_URL)")
    p.add_argument("--port", type=int, help="listen port (default $RRP_PORT or 7443)")
    p.add_argument("--runtime", choices=("sim", "docker", "auto"), default="auto")
    p.add_argument("--ui", help="directory with built web console assets")
    p.set_defaults(fn=cmd_serve)

    p = sub.add_parser("login", help="authenticate against the platform")
    p.add_argument("--user", default="rrp-demo")
    p.add_argument("--password", default="rrp-demo")
    p.set_defaults(fn=cmd_login)

    p = sub.add_parser("create", help="create a project from a Git repository")
    p.add_argument("--repo", required=True)
    p.add_argument("--ref")
    p.add_argument("--name")
    p.add_argument("--no-wait", action="store_true")
    p.add_argument("--timeout", type=float, default=600.0)
    p.set_defaults(fn=cmd_create)

    p = sub.add_parser("list", help="list projects")
    p.set_defaults(fn=cmd_list)

    p = sub.add_parser("start", help="start a project session")
    p.add_argument("project_id")
    p.add_argument("--cpu", type=float)
    p.add_argument("--mem", type=int)
    p.set_defaults(fn=cmd_start)

    p = sub.add_parser("stop", help="stop a running session")
    p.add_argument("project_id")
    p.set_defaults(fn=cmd_stop)

    p = sub.add_parser("delete", help="delete a project")
    p.add_argument("project_id")
    p.set_defaults(fn=cmd_delete)

    p = sub.add_parser("results", help="list harvested results")
    p.add_argument("project_id")
    p.set_defaults(fn=cmd_results)

    p = sub.add_parser("share", help="create a share id for a project")
    p.add_argument("project_id")
    p.set_defaults(fn=cmd_share)

    p = sub.add_parser("open-share", help="open a project from a share id")
    p.add_argument("share_id")
    p.set_defaults(fn=cmd_open_share)

    p = sub.add_parser("bundle", help="download a player bundle")
    p.add_argument("project_id")
    p.add_argument("-o", "--output", required=True)
    p.set_defaults(fn=cmd_bundle)

    p = sub.add_parser("play", help="replay an exported player bundle locally")
    p.add_argument("bundle")
    p.add_argument("--work", help="playback working directory")
    p.add_argument("--runtime", choices=("sim", "docker", "auto"), default="auto")
    p.set_defaults(fn=cmd_play)

    p = sub.add_parser("rdms-serve", help="run the reference RDMS server")
    p.add_argument("--data", required=True)
    p.add_argument("--host", default="127.0.0.1")
    p.add_argument("--port", type=int, default=8880)
    p.set_defaults(fn=cmd_rdms_serve)

    return parser


def main(argv: list[str] | None = None) -> int:
    args = build_parser().parse_args(argv)
    try:
        return args.fn(args)
    except httpx.HTTPError as exc:
        return _fail(f"cannot reach platform: {exc}", SYSTEM_ERROR)
    except SystemExit as exc:
        if isinstance(exc.code, str):
            print(f"error: {exc.code}", file=sys.stderr)
            return USER_ERROR
        raise
    except RrpError as exc:
        return _fail(f"{type(exc).__name__}: {exc}", SYSTEM_ERROR)


if __name__ == "__main__":
    sys.exit(main())
