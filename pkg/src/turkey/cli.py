"""Operator entry point: serve, export, seed-demo, and simulate subcommands.

Exit codes: 2 bad flags, 3 bind failure, 4 storage failure, 5 unknown task,
6 I/O failure, 7 simulator protocol error.
"""

from __future__ import annotations

import argparse
import os
import socket
import sys
from pathlib import Path

import httpx
import uvicorn

from .domain import (
    BUILTIN_AUDITOR_KINDS,
    OrderingMode,
    StepDefinition,
    StepKind,
    builtin_registry,
    create_task,
    publish_task,
)
from .errors import StorageFailure, TaskNotFound
from .service import ServiceConfig, create_app
from .sim import PROFILES, run_simulation
from .store import Store
from .xmlio import build_document, fingerprint_csv, parse_export, serialize_export

EXIT_BAD_FLAGS = 2
EXIT_BIND_FAILURE = 3
EXIT_STORAGE_FAILURE = 4
EXIT_UNKNOWN_TASK = 5
EXIT_IO_FAILURE = 6
EXIT_PROTOCOL_ERROR = 7


def _env(name: str, fallback: str | None = None) -> str | None:
    return os.environ.get(f"TURKEY_{name}", fallback)


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="turkey", description=__doc__)
    sub = parser.add_subparsers(dest="command", required=True)

    serve = sub.add_parser("serve", help="run the HTTP service")
    serve.add_argument("--bind", default=_env("BIND_ADDR", "127.0.0.1:8765"))
    serve.add_argument("--db", default=_env("DB_PATH", "./turkey.db"))
    serve.add_argument("--admin-token", default=_env("ADMIN_TOKEN"))
    serve.add_argument("--asset-root", default=_env("ASSET_ROOT"))
    serve.add_argument(
        "--session-ttl-secs", type=int, default=int(_env("SESSION_TTL_SECS", "14400"))
    )
    serve.add_argument("--static-root", default=_env("STATIC_ROOT"))

    export = sub.add_parser("export", help="write a task's XML export (and optional CSV)")
    export.add_argument("--task", default=_env("TASK"))
    export.add_argument("--out", default=_env("OUT"))
    export.add_argument("--fingerprints", default=_env("FINGERPRINTS"))
    export.add_argument("--db", default=_env("DB_PATH"))
    export.add_argument("--url", default=_env("URL"))
    export.add_argument("--admin-token", default=_env("ADMIN_TOKEN"))
    export.add_argument("--asset-root", default=_env("ASSET_ROOT"))

    seed = sub.add_parser("seed-demo", help="create a published demo task")
    seed.add_argument("--db", default=_env("DB_PATH", "./turkey.db"))

    simulate = sub.add_parser("simulate", help="drive synthetic workers over the wire protocol")
    simulate.add_argument("--url", default=_env("URL"))
    simulate.add_argument("--task", default=_env("TASK"))
    simulate.add_argument("--workers", type=int, default=int(_env("WORKERS", "10")))
    simulate.add_argument("--profile", choices=PROFILES, default=_env("PROFILE", "diligent"))
    simulate.add_argument("--seed", type=int, default=int(_env("SEED", "0")))
    simulate.add_argument("--parallelism", type=int, default=int(_env("PARALLELISM", "8")))

    return parser


def cmd_serve(args: argparse.Namespace, parser: argparse.ArgumentParser) -> int:
    if not args.admin_token:
        parser.error("an admin token is required (--admin-token or TURKEY_ADMIN_TOKEN)")
    host, _, port_text = args.bind.rpartition(":")
    if not host or not port_text.isdigit():
        parser.error(f"--bind must be host:port, got {args.bind!r}")

    config = ServiceConfig(
        db_path=args.db,
        admin_token=args.admin_token,
        asset_roots=(args.asset_root,) if args.asset_root else (),
        session_ttl_secs=args.session_ttl_secs,
        static_root=args.static_root or _default_static_root(),
        fixed_time=_env("FIXED_TIME"),
    )
    try:
        app = create_app(config)
    except StorageFailure as exc:
        print(f"storage failure: {exc}", file=sys.stderr)
        return EXIT_STORAGE_FAILURE

    sock = socket.socket(socket.AF_INET, socket.SOCK_STREAM)
    sock.setsockopt(socket.SOL_SOCKET, socket.SO_REUSEADDR, 1)
    try:
        sock.bind((host, int(port_text)))
        sock.listen(128)
    except OSError as exc:
        print(f"cannot bind {args.bind}: {exc}", file=sys.stderr)
        sock.close()
        return EXIT_BIND_FAILURE

    print(f"listening on http://{args.bind}")
    server = uvicorn.Server(uvicorn.Config(app=app, log_level="warning"))
    server.run(sockets=[sock])
    return 0


def _default_static_root() -> str | None:
    candidate = Path("frontend") / "dist"
    return str(candidate) if candidate.is_dir() else None


def cmd_export(args: argparse.Namespace, parser: argparse.ArgumentParser) -> int:
    if not args.task or not args.out:
        parser.error("--task and --out are required")
    if not args.db and not args.url:
        parser.error("either --db (direct mode) or --url (remote mode) is required")

    registry = builtin_registry((args.asset_root,) if args.asset_root else ())
    if args.url:
        if not args.admin_token:
            parser.error("remote mode requires --admin-token")
        try:
            resp = httpx.get(
                f"{args.url.rstrip('/')}/api/v1/tasks/{args.task}/export.xml",
                headers={"Authorization": f"Bearer {args.admin_token}"},
                timeout=60.0,
            )
        except httpx.HTTPError as exc:
            print(f"cannot reach server: {exc}", file=sys.stderr)
            return EXIT_IO_FAILURE
        if resp.status_code == 404:
            print(f"unknown task: {args.task}", file=sys.stderr)
            return EXIT_UNKNOWN_TASK
        if resp.status_code != 200:
            print(f"export failed ({resp.status_code}): {resp.text}", file=sys.stderr)
            return EXIT_IO_FAILURE
        data = resp.content
        doc = parse_export(data, registry)
    else:
        try:
            store = Store(args.db)
        except StorageFailure as exc:
            print(f"storage failure: {exc}", file=sys.stderr)
            return EXIT_STORAGE_FAILURE
        try:
            snapshot = store.task_snapshot(args.task)
        except TaskNotFound:
            print(f"unknown task: {args.task}", file=sys.stderr)
            return EXIT_UNKNOWN_TASK
        finally:
            store.close()
        doc = build_document(snapshot, registry)
        data = serialize_export(snapshot, registry)

    try:
        Path(args.out).write_bytes(data)
        if args.fingerprints:
            Path(args.fingerprints).write_text(fingerprint_csv(doc), encoding="utf-8")
    except OSError as exc:
        print(f"cannot write output: {exc}", file=sys.stderr)
        return EXIT_IO_FAILURE
    print(f"wrote {args.out}" + (f" and {args.fingerprints}" if args.fingerprints else ""))
    return 0


def cmd_seed_demo(args: argparse.Namespace) -> int:
    try:
        store = Store(args.db)
    except StorageFailure as exc:
        print(f"storage failure: {exc}", file=sys.stderr)
        return EXIT_STORAGE_FAILURE
    try:
        registry = builtin_registry()
        steps = (
            StepDefinition(
                step_id="s1",
                kind=StepKind.MULTIPLE_CHOICE,
                prompt="Which label fits the item best?",
                options=("relevant", "irrelevant", "unsure"),
            ),
            StepDefinition(
                step_id="s2",
                kind=StepKind.MULTIPLE_ANSWER,
                prompt="Tick every category that applies.",
                options=("news", "opinion", "spam", "other"),
            ),
            StepDefinition(
                step_id="s3",
                kind=StepKind.TEXT_RESPONSE,
                prompt="Briefly justify your choices.",
            ),
        )
        task = publish_task(
            create_task(
                registry,
                name="demo-labels",
                description="Demo labeling task with all built-in auditors.",
                steps=steps,
                ordering_mode=OrderingMode.RANDOMIZED,
                auditors=BUILTIN_AUDITOR_KINDS,
                task_id=store.next_task_id(),
            )
        )
        store.insert_task(task)
        print(task.task_id)
        return 0
    except StorageFailure as exc:
        print(f"storage failure: {exc}", file=sys.stderr)
        return EXIT_STORAGE_FAILURE
    finally:
        store.close()


def cmd_simulate(args: argparse.Namespace, parser: argparse.ArgumentParser) -> int:
    if not args.url or not args.task:
        parser.error("--url and --task are required")
    if args.workers < 0:
        parser.error("--workers must be >= 0")
    report = run_simulation(
        url=args.url,
        task_id=args.task,
        workers=args.workers,
        profile=args.profile,
        seed=args.seed,
        parallelism=args.parallelism,
    )
    return 0 if report.ok else EXIT_PROTOCOL_ERROR


def main(argv: list[str] | None = None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    if args.command == "serve":
        return cmd_serve(args, parser)
    if args.command == "export":
        return cmd_export(args, parser)
    if args.command == "seed-demo":
        return cmd_seed_demo(args)
    if args.command == "simulate":
        return cmd_simulate(args, parser)
    parser.error(f"unknown command {args.command!r}")
    return EXIT_BAD_FLAGS


if __name__ == "__main__":
    sys.exit(main())
