"""Thin command-line client of the experiment service.

Every subcommand goes through the HTTP API. Without ``--server`` the requests
are routed to an in-process application instance (no sockets involved), so
single-machine use needs no running daemon; with ``--server URL`` the same
client drives a remote `ensflow serve` instance.
"""

from __future__ import annotations

import argparse
import json
import sys
import time
from pathlib import Path

import httpx

from . import __version__
from .config import PRESETS, ExperimentConfig, apply_overrides, paper_scale, parse_config_text


def _load_config(args) -> ExperimentConfig:
    if getattr(args, "preset", None):
        cfg = PRESETS[args.preset]()
    else:
        cfg = ExperimentConfig()
    if getattr(args, "config", None):
        cfg = parse_config_text(Path(args.config).read_text(encoding="utf-8"))
    overrides: dict[str, str] = {}
    for item in getattr(args, "set", None) or []:
        if "=" not in item:
            raise SystemExit(f"--set expects key=value, got {item!r}")
        key, value = item.split("=", 1)
        overrides[key] = value
    if getattr(args, "filter", None):
        overrides["filter"] = args.filter
    if getattr(args, "fraction", None) is not None:
        overrides["obs.fraction"] = repr(args.fraction)
    if getattr(args, "seed", None) is not None:
        # one master seed fans out to all stream seeds
        base = int(args.seed)
        for i, name in enumerate(("reference", "model_ic", "mask", "noise", "filter")):
            overrides[f"seeds.{name}"] = str(base + 1009 * i)
    if overrides:
        cfg = apply_overrides(cfg, overrides)
    if getattr(args, "paper_scale", False):
        cfg = paper_scale(cfg)
    return cfg


def _client(args) -> httpx.Client:
    if args.server:
        return httpx.Client(base_url=args.server, timeout=None)
    # in-process transport: the same HTTP interface without a running daemon
    from fastapi.testclient import TestClient

    from .service.app import create_app

    return TestClient(create_app())


def _check(resp: httpx.Response) -> dict:
    if resp.status_code >= 400:
        raise SystemExit(f"service error {resp.status_code}: {resp.text}")
    return resp.json()


def _wait_for_job(client: httpx.Client, job: dict, poll: float = 0.5, quiet: bool = False) -> dict:
    job_id = job["job_id"]
    shown = None
    while job["status"] in ("queued", "running"):
        time.sleep(poll)
        job = _check(client.get(f"/api/jobs/{job_id}"))
        if not quiet and job["status"] != shown:
            print(f"job {job_id}: {job['status']}", file=sys.stderr)
            shown = job["status"]
    if job["status"] == "failed":
        raise SystemExit(f"job {job_id} failed: {job['error']}")
    return job


def cmd_generate_reference(args) -> None:
    cfg = _load_config(args)
    with _client(args) as client:
        payload = {"config": cfg.model_dump(), "out_dir": str(args.out)}
        out = _check(client.post("/api/reference", json=payload))
    print(json.dumps(out, indent=2))


def cmd_run(args) -> None:
    cfg = _load_config(args)
    with _client(args) as client:
        payload = {
            "config": cfg.model_dump(),
            "out_dir": str(args.out),
            "reference_dir": str(args.reference) if args.reference else None,
            "vtk": bool(args.vtk),
        }
        job = _check(client.post("/api/runs", json=payload))
        job = _wait_for_job(client, job, quiet=args.quiet)
    print(json.dumps(job["run"], indent=2))


def cmd_sweep(args) -> None:
    cfg = _load_config(args)
    with _client(args) as client:
        payload = {
            "config": cfg.model_dump(),
            "out_dir": str(args.out),
            "fractions": args.fractions,
            "filters": args.filters or None,
            "processes": args.processes,
        }
        job = _check(client.post("/api/sweeps", json=payload))
        job = _wait_for_job(client, job, quiet=args.quiet)
    print(json.dumps(job["sweep"], indent=2))


def cmd_metrics(args) -> None:
    with _client(args) as client:
        payload = {"paths": [str(p) for p in args.paths], "burn_in": args.burn_in}
        rows = _check(client.post("/api/metrics", json=payload))
    print(json.dumps(rows, indent=2))


def cmd_serve(args) -> None:
    import uvicorn

    from .service.app import create_app

    uvicorn.run(create_app(max_workers=args.workers), host=args.host, port=args.port)


def _add_config_flags(p: argparse.ArgumentParser, with_fraction: bool = True) -> None:
    p.add_argument("--config", type=Path, help="flat key=value config file")
    p.add_argument("--preset", choices=sorted(PRESETS), help="named experiment driver")
    p.add_argument("--set", action="append", metavar="KEY=VALUE", help="override a config key")
    p.add_argument("--filter", choices=["ensf", "letkf", "none"], help="filter choice")
    if with_fraction:
        p.add_argument("--fraction", type=float, help="observed fraction per variable block")
    p.add_argument("--seed", type=int, help="master seed; fans out to all stream seeds")
    p.add_argument("--paper-scale", action="store_true", help="64x64 mesh, M=300, L=1000")


def main(argv=None) -> None:
    parser = argparse.ArgumentParser(prog="ensflow", description=__doc__)
    parser.add_argument("--version", action="version", version=f"ensflow {__version__}")
    parser.add_argument("--server", help="base URL of a running service; default runs in-process")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("generate-reference", help="synthesize a twin-experiment truth bundle")
    _add_config_flags(p)
    p.add_argument("--out", type=Path, required=True)
    p.set_defaults(func=cmd_generate_reference)

    p = sub.add_parser("run", help="run one experiment (none/ensf/letkf)")
    _add_config_flags(p)
    p.add_argument("--out", type=Path, required=True)
    p.add_argument("--reference", type=Path, help="reuse a generated reference bundle")
    p.add_argument("--vtk", action="store_true", help="also write legacy VTK snapshots")
    p.add_argument("--quiet", action="store_true")
    p.set_defaults(func=cmd_run)

    p = sub.add_parser("sweep", help="run several observation fractions against one reference")
    _add_config_flags(p, with_fraction=False)
    p.add_argument("--out", type=Path, required=True)
    p.add_argument("--fractions", type=float, nargs="+", required=True)
    p.add_argument("--filters", nargs="+", choices=["ensf", "letkf", "none"])
    p.add_argument("--processes", type=int, default=1)
    p.add_argument("--quiet", action="store_true")
    p.set_defaults(func=cmd_sweep)

    p = sub.add_parser("metrics", help="time-averaged RMSE of existing runs")
    p.add_argument("paths", nargs="+", type=Path)
    p.add_argument("--burn-in", type=int, default=0)
    p.set_defaults(func=cmd_metrics)

    p = sub.add_parser("serve", help="start the HTTP service")
    p.add_argument("--host", default="127.0.0.1")
    p.add_argument("--port", type=int, default=8000)
    p.add_argument("--workers", type=int, default=2, help="background job workers")
    p.set_defaults(func=cmd_serve)

    args = parser.parse_args(argv)
    args.func(args)


if __name__ == "__main__":
    main()
