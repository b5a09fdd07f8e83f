"""Thin command-line client for the laboratory service.

Without --server the client mounts the FastAPI app in-process over httpx's
ASGI transport, so every run still travels the service's request/response
path; with --server it talks to a remote instance instead.  Artifacts returned
by the service are written under --out and a manifest.json accompanies them.
"""

from __future__ import annotations

import argparse
import asyncio
import json
import sys
from pathlib import Path

import httpx


class _InProcessTransport(httpx.BaseTransport):
    """Synchronous bridge onto the ASGI app for serverless client runs."""

    def __init__(self, app):
        self._asgi = httpx.ASGITransport(app=app)

    def handle_request(self, request: httpx.Request) -> httpx.Response:
        async def roundtrip():
            response = await self._asgi.handle_async_request(request)
            body = await response.aread()
            await response.aclose()
            return httpx.Response(response.status_code, headers=response.headers,
                                  content=body, request=request)

        return asyncio.run(roundtrip())


def _client(server: str | None) -> httpx.Client:
    if server:
        return httpx.Client(base_url=server, timeout=3600.0)
    from .service import app

    return httpx.Client(transport=_InProcessTransport(app),
                        base_url="http://hjblab.local", timeout=None)


def _write_artifacts(out_dir: Path, artifacts, manifest: dict) -> None:
    out_dir.mkdir(parents=True, exist_ok=True)
    for art in artifacts:
        (out_dir / art["name"]).write_text(art["content"])
    (out_dir / "manifest.json").write_text(
        json.dumps(manifest, sort_keys=True, indent=2) + "\n")


def cmd_run(args) -> int:
    config_text = Path(args.config).read_text() if args.config else ""
    payload = {"command": args.command, "config_text": config_text,
               "overrides": {}}
    if args.seed is not None:
        payload["seed"] = args.seed
    if args.workers is not None:
        payload["workers"] = args.workers
    with _client(args.server) as client:
        resp = client.post("/runs", json=payload)
        if resp.status_code != 200:
            print(f"error: {resp.status_code} {resp.text}", file=sys.stderr)
            return 2
        body = resp.json()
    _write_artifacts(Path(args.out), body["artifacts"], body["manifest"])
    for check in body["checks"]:
        word = "PASS" if check["passed"] else "FAIL"
        print(f"{word} {check['name']}: measured={check['measured']:.6g} "
              f"bound={check['bound']:.6g}")
    print(f"{'ok' if body['passed'] else 'FAILED'}: {args.command} "
          f"({len(body['artifacts'])} artifacts -> {args.out})")
    return 0 if body["passed"] else 1


def cmd_rerun(args) -> int:
    manifest = json.loads(Path(args.manifest).read_text())
    config_text = "\n".join(f"{k} = {v}" for k, v in manifest["config"].items()
                            if v != "")
    payload = {"command": manifest["command"], "config_text": config_text,
               "overrides": {}}
    with _client(args.server) as client:
        resp = client.post("/runs", json=payload)
        if resp.status_code != 200:
            print(f"error: {resp.status_code} {resp.text}", file=sys.stderr)
            return 2
        body = resp.json()
    _write_artifacts(Path(args.out), body["artifacts"], body["manifest"])
    same = body["manifest"]["files"] == manifest["files"]
    print(f"reproduced file hashes match: {same}")
    return 0 if body["passed"] and same else 1


def cmd_plotdata(args) -> int:
    csv_text = Path(args.csv).read_text()
    with _client(args.server) as client:
        resp = client.post("/plotdata", json={"csv_text": csv_text})
        if resp.status_code != 200:
            print(f"error: {resp.status_code} {resp.text}", file=sys.stderr)
            return 2
        out_text = resp.json()["csv_text"]
    if args.out:
        Path(args.out).write_text(out_text)
    else:
        sys.stdout.write(out_text)
    return 0


def cmd_serve(args) -> int:
    import uvicorn

    from .service import app

    uvicorn.run(app, host=args.host, port=args.port, log_level="info")
    return 0


def cmd_schema(args) -> int:
    from .config import schema_text

    sys.stdout.write(schema_text())
    return 0


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="hjblab",
        description="Client for the path-dependent stochastic control laboratory")
    sub = parser.add_subparsers(dest="subcommand", required=True)

    run = sub.add_parser("run", help="execute a study and collect artifacts")
    run.add_argument("command", help="verify-gelfand | solve | value | dpp | "
                                     "estimates | calculus | approx-study | "
                                     "sandwich | all")
    run.add_argument("--config", default=None, help="config file (key = value)")
    run.add_argument("--out", default="out", help="artifact directory")
    run.add_argument("--seed", type=int, default=None, help="master seed override")
    run.add_argument("--workers", type=int, default=None, help="worker threads")
    run.add_argument("--server", default=None, help="remote service URL "
                                                    "(default: in-process)")
    run.set_defaults(fn=cmd_run)

    rerun = sub.add_parser("rerun", help="reproduce a run from its manifest")
    rerun.add_argument("manifest")
    rerun.add_argument("--out", default="out-rerun")
    rerun.add_argument("--server", default=None)
    rerun.set_defaults(fn=cmd_rerun)

    plot = sub.add_parser("plotdata", help="reshape a study CSV to long format")
    plot.add_argument("csv")
    plot.add_argument("--out", default=None)
    plot.add_argument("--server", default=None)
    plot.set_defaults(fn=cmd_plotdata)

    serve = sub.add_parser("serve", help="serve the laboratory over HTTP")
    serve.add_argument("--host", default="127.0.0.1")
    serve.add_argument("--port", type=int, default=8000)
    serve.set_defaults(fn=cmd_serve)

    schema = sub.add_parser("schema", help="print the config key reference")
    schema.set_defaults(fn=cmd_schema)
    return parser


def main(argv: list[str] | None = None) -> int:
    args = build_parser().parse_args(argv)
    return args.fn(args)


if __name__ == "__main__":
    sys.exit(main())
