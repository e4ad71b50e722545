"""FastAPI service wrapping the experiment harness.

Runs and sweeps execute as background jobs in a worker pool (they take
minutes at desk scale); reference generation and metrics are synchronous.
All outputs land in the directories named by the request, so clients on the
same host read result files directly.
"""

from __future__ import annotations

import threading
import uuid
from concurrent.futures import ThreadPoolExecutor
from pathlib import Path

from fastapi import FastAPI, HTTPException

from .. import __version__, harness
from .schemas import (
    HealthResponse,
    JobInfo,
    MetricsRequest,
    MetricsRow,
    ReferenceRequest,
    ReferenceResponse,
    RunRequest,
    RunSummary,
    SweepRequest,
    SweepRow,
    SweepSummary,
)


class JobStore:
    """In-memory registry of background jobs."""

    def __init__(self, max_workers: int = 2):
        self._jobs: dict[str, JobInfo] = {}
        self._lock = threading.Lock()
        self._pool = ThreadPoolExecutor(max_workers=max_workers)

    def submit(self, kind, fn) -> JobInfo:
        job_id = uuid.uuid4().hex[:12]
        info = JobInfo(job_id=job_id, kind=kind, status="queued")
        with self._lock:
            self._jobs[job_id] = info

        def worker():
            self._update(job_id, status="running")
            try:
                result = fn()
            except Exception as exc:  # surfaced through the job record
                self._update(job_id, status="failed", error=f"{type(exc).__name__}: {exc}")
                return
            self._update(job_id, status="done", **result)

        self._pool.submit(worker)
        return info

    def _update(self, job_id: str, **changes) -> None:
        with self._lock:
            self._jobs[job_id] = self._jobs[job_id].model_copy(update=changes)

    def get(self, job_id: str) -> JobInfo | None:
        with self._lock:
            return self._jobs.get(job_id)

    def all(self) -> list[JobInfo]:
        with self._lock:
            return list(self._jobs.values())


def create_app(max_workers: int = 2) -> FastAPI:
    app = FastAPI(title="ensflow", version=__version__)
    jobs = JobStore(max_workers=max_workers)
    app.state.jobs = jobs

    @app.get("/api/health", response_model=HealthResponse)
    def health():
        return HealthResponse(version=__version__)

    @app.post("/api/reference", response_model=ReferenceResponse)
    def reference(req: ReferenceRequest):
        ref = harness.generate_reference(req.config, out_dir=Path(req.out_dir))
        return ReferenceResponse(
            out_dir=req.out_dir,
            n_steps=req.config.time.n_steps,
            state_dim=ref.grid.state_dim,
            n_observed=ref.spec.n_obs,
        )

    @app.post("/api/runs", response_model=JobInfo)
    def submit_run(req: RunRequest):
        def work():
            reference = None
            if req.reference_dir:
                reference = harness.load_reference(Path(req.reference_dir), req.config)
            result = harness.run_experiment(
                req.config, Path(req.out_dir), reference=reference, vtk=req.vtk
            )
            avg = result.time_averaged_rmse()
            return {
                "run": RunSummary(
                    out_dir=req.out_dir,
                    wall_time=result.wall_time,
                    time_averaged_rmse_s=float(avg[0]),
                    time_averaged_rmse_p=float(avg[1]),
                    time_averaged_rmse_u=float(avg[2]),
                )
            }

        return jobs.submit("run", work)

    @app.post("/api/sweeps", response_model=JobInfo)
    def submit_sweep(req: SweepRequest):
        def work():
            rows = harness.sweep(
                req.config,
                req.fractions,
                Path(req.out_dir),
                filters=req.filters,
                processes=req.processes,
            )
            return {
                "sweep": SweepSummary(
                    out_dir=req.out_dir, rows=[SweepRow(**row) for row in rows]
                )
            }

        return jobs.submit("sweep", work)

    @app.get("/api/jobs", response_model=list[JobInfo])
    def list_jobs():
        return jobs.all()

    @app.get("/api/jobs/{job_id}", response_model=JobInfo)
    def get_job(job_id: str):
        info = jobs.get(job_id)
        if info is None:
            raise HTTPException(status_code=404, detail=f"no such job {job_id}")
        return info

    @app.post("/api/metrics", response_model=list[MetricsRow])
    def compute_metrics(req: MetricsRequest):
        try:
            rows = harness.metrics([Path(p) for p in req.paths], burn_in=req.burn_in)
        except (OSError, ValueError) as exc:
            raise HTTPException(status_code=400, detail=str(exc))
        return [MetricsRow(**row) for row in rows]

    return app
