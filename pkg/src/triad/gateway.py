"""HTTP service: run monitoring, buffer inspection, annotation workflow.

Read endpoints are side-effect free with respect to durable state; the
annotation endpoints drive the claim/submit/commit lifecycle. The app can
also serve a static UI bundle at / when given a directory.
"""

from __future__ import annotations

import json
import time
from pathlib import Path
from typing import Callable, Dict, List, Optional, Union

from fastapi import Body, FastAPI, HTTPException
from fastapi.staticfiles import StaticFiles

from .annotation import (
    DEFAULT_POLL_TIMEOUT_S,
    AnnotationError,
    AnnotationService,
    ClaimConflict,
)
from .buffer import DPOStore, ExperienceBuffer
from .config import CONFIG_SCHEMA
from .encoding import decode_tokens
from .metrics import read_metrics
from .orchestrator import DataPaths
from .records import Experience


def experience_texts(exp: Experience) -> Dict[str, str]:
    """Human-readable prompt/response views of a stored experience."""
    prompt_tokens = [t for t in exp.tokens[: exp.prompt_length] if t >= 0]
    generated = [
        tok
        for tok, keep in zip(exp.tokens, exp.action_mask)
        if keep
    ]
    return {
        "prompt": decode_tokens(prompt_tokens),
        "response": decode_tokens(generated),
    }


def pairs_from_buffer(buffer: ExperienceBuffer, limit: int) -> List[dict]:
    """Auto-create preference pairs from rollouts: per task, pair the
    highest- and lowest-reward responses when their texts differ."""
    buffer.refresh()
    by_task: Dict[int, List[Experience]] = {}
    for sid in sorted(buffer._records):
        exp = buffer.get(sid)
        if exp.reward is not None:
            by_task.setdefault(exp.task_key, []).append(exp)
    pairs = []
    for task_key in sorted(by_task):
        if len(pairs) >= limit:
            break
        group = sorted(by_task[task_key], key=lambda e: (-float(e.reward), e.sample_id))
        best, worst = group[0], group[-1]
        if best.sample_id == worst.sample_id:
            continue
        best_view = experience_texts(best)
        worst_view = experience_texts(worst)
        if best_view["response"] == worst_view["response"]:
            continue
        pairs.append(
            {
                "prompt": best_view["prompt"],
                "response_a": best_view["response"],
                "response_b": worst_view["response"],
                "source_a": best.sample_id,
                "source_b": worst.sample_id,
            }
        )
    return pairs


def create_app(
    data_dir: Union[str, Path],
    ui_dir: Optional[Union[str, Path]] = None,
    clock: Callable[[], float] = time.time,
) -> FastAPI:
    paths = DataPaths(data_dir)
    buffer = ExperienceBuffer(paths.buffer)
    dpo = DPOStore(paths.dpo)
    annotations = AnnotationService(paths.annotations, dpo, clock=clock)

    app = FastAPI(title="triad gateway")
    app.state.paths = paths
    app.state.buffer = buffer
    app.state.dpo = dpo
    app.state.annotations = annotations

    @app.get("/api/runs")
    def list_runs() -> List[dict]:
        out = []
        if paths.runs.is_dir():
            for report_path in sorted(paths.runs.glob("*/report.json")):
                out.append(json.loads(report_path.read_text(encoding="utf-8")))
        return out

    @app.get("/api/runs/{run_id}/metrics")
    def run_metrics(run_id: str, after_step: int = -1) -> dict:
        run_dir = paths.runs / run_id
        if not run_dir.is_dir():
            raise HTTPException(status_code=404, detail=f"unknown run {run_id!r}")
        metrics_path = run_dir / "metrics.jsonl"
        rows = read_metrics(metrics_path) if metrics_path.exists() else []
        if after_step >= 0:
            rows = [r for r in rows if r["step"] > after_step]
        return {"run_id": run_id, "rows": rows}

    @app.get("/api/buffer/stats")
    def buffer_stats() -> dict:
        buffer.refresh()
        return {
            "stats": buffer.stats(),
            "task_stats": {str(k): v for k, v in buffer.task_stats().items()},
        }

    @app.post("/api/annotations/batches")
    def create_batch(body: dict = Body(...)) -> dict:
        pairs = body.get("pairs")
        if pairs is None and "from_buffer" in body:
            pairs = pairs_from_buffer(buffer, int(body["from_buffer"]))
        if not isinstance(pairs, list) or not pairs:
            raise HTTPException(status_code=422, detail="no annotation pairs given")
        try:
            batch = annotations.create_batch(
                pairs,
                seed=int(body.get("seed", 0)),
                annotators_per_task=int(body.get("annotators_per_task", 1)),
            )
        except (AnnotationError, KeyError) as exc:
            raise HTTPException(status_code=422, detail=str(exc)) from exc
        return {
            "batch_id": batch.batch_id,
            "task_ids": list(batch.task_ids),
            "rejected_pairs": batch.rejected_pairs,
        }

    @app.get("/api/annotations/next")
    def next_task(
        annotator: str = "anonymous",
        wait: bool = False,
        timeout: float = DEFAULT_POLL_TIMEOUT_S,
    ) -> dict:
        task = annotations.poll_next(annotator, wait=wait, timeout_s=timeout)
        if task is None:
            return {"task": None, "timed_out": True}
        return {"task": task.to_json_dict(), "timed_out": False}

    @app.post("/api/annotations/{task_id}/submit")
    def submit(task_id: str, body: dict = Body(...)) -> dict:
        chosen = body.get("chosen")
        annotator = body.get("annotator", "anonymous")
        try:
            annotations.submit(task_id, chosen, annotator)
        except ClaimConflict as exc:
            raise HTTPException(status_code=409, detail=str(exc)) from exc
        except AnnotationError as exc:
            status = 404 if "unknown task" in str(exc) else 422
            raise HTTPException(status_code=status, detail=str(exc)) from exc
        return {"task_id": task_id, "status": "SUBMITTED"}

    @app.post("/api/annotations/batches/{batch_id}/commit")
    def commit(batch_id: str) -> dict:
        try:
            records = annotations.commit_batch(batch_id)
        except AnnotationError as exc:
            status = 404 if "unknown batch" in str(exc) else 409
            raise HTTPException(status_code=status, detail=str(exc)) from exc
        return {
            "batch_id": batch_id,
            "count": len(records),
            "record_ids": [r.id for r in records],
        }

    @app.get("/api/config/schema")
    def config_schema() -> dict:
        return CONFIG_SCHEMA

    if ui_dir is not None and Path(ui_dir).is_dir():
        app.mount("/", StaticFiles(directory=str(ui_dir), html=True))

    return app
