"""Batch execution of an expanded experiment grid.

Output layout under ``out_dir``::

    manifest.json                 run status, for --resume
    <run_id>.jsonl                one RunRecord per prompt
    <run_id>.summary.json         RunSummary
    prompts/<run_id>.txt          line-separated prompt file
    resources/<run_id>.trace.jsonl resource samples seen during the run
    index/<chunk>_<quant>.cebvidx vector index snapshots

Prompts inside one run are executed serially so latencies stay uncontended;
``parallel_runs`` only overlaps whole runs.
"""

from __future__ import annotations

import json
import logging
import os
import threading
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from datetime import datetime, timezone
from pathlib import Path
from typing import Callable

from . import evaluators
from .backends import Backend, BackendError, build_fewshot_prompt, build_rag_prompt, fill_template, make_backend, \
    truncate_to_tokens
from .config import UNSET, ExperimentGrid, RunSpec, config_hash, expand_grid
from .corpus import Chunk, DatasetError, PromptRecord, chunk_document, load_dataset, write_prompt_file
from .monitor import JsonlSink, ProbeDescriptor, ReplayClock, ResourceMonitor, RunRecord, WallClock, aggregate, \
    log_record, write_summary, write_trace
from .vectorstore import EmbeddingProvider, VectorIndex, embed

logger = logging.getLogger(__name__)

DEFAULT_TOP_K = 5
DEFAULT_CHUNK_SIZE = 1000
DEFAULT_SHOTS = 5
MANIFEST = "manifest.json"


class ManifestMismatch(RuntimeError):
    pass


def _now() -> str:
    return datetime.now(timezone.utc).isoformat(timespec="seconds")


# ---------------------------------------------------------------------------
# Shared per-grid state
# ---------------------------------------------------------------------------


def answer_text(rec: PromptRecord) -> str:
    if rec.label_kind == "score":
        return f"score: {rec.label}"
    return "" if rec.label is None else str(rec.label)


@dataclass
class PipelineContext:
    grid: ExperimentGrid
    records: list[PromptRecord]
    shots: list[tuple[str, str]] = field(default_factory=list)
    provider: EmbeddingProvider = field(default_factory=EmbeddingProvider)
    index_dir: Path | None = None
    _indexes: dict = field(default_factory=dict)
    _lock: threading.Lock = field(default_factory=threading.Lock)

    @classmethod
    def load(cls, grid: ExperimentGrid, index_dir: Path | None = None) -> "PipelineContext":
        records = load_dataset(grid.resolve(grid.dataset_path), grid.dataset_format)
        if not records:
            raise DatasetError(f"dataset {grid.dataset_path} is empty")
        shots: list[tuple[str, str]] = []
        if "fewshot" in grid.axes["prompting_mode"]:
            n = int(grid.fewshot.get("n", DEFAULT_SHOTS))
            if grid.fewshot.get("path"):
                pool = load_dataset(grid.resolve(grid.fewshot["path"]))
            else:
                # shots come from the head of the dataset and are not evaluated
                pool, records = records[:n], records[n:]
                if not records:
                    raise DatasetError("dataset has no records left after taking few-shot examples")
            shots = [(r.query_text, answer_text(r)) for r in pool[:n]]
            if not shots:
                raise DatasetError("few-shot mode needs at least one example")
        provider = EmbeddingProvider.from_dict(grid.embedding)
        return cls(grid, records, shots, provider, index_dir)

    def index(self, chunk_size: int, mode: str) -> VectorIndex:
        key = (chunk_size, mode)
        with self._lock:
            if key not in self._indexes:
                self._indexes[key] = self._build_index(chunk_size, mode)
            return self._indexes[key]

    def _build_index(self, chunk_size: int, mode: str) -> VectorIndex:
        g = self.grid
        chunks: list[Chunk] = []
        for kp in g.knowledge_paths:
            path = g.resolve(kp)
            text = Path(path).read_text(encoding="utf-8")
            chunks.extend(chunk_document(text, chunk_size, g.chunk_overlap, source_path=kp))
        if not chunks:
            raise DatasetError("knowledge documents produced no chunks")
        vectors = embed([c.text for c in chunks], self.provider)
        index = VectorIndex.build(
            chunks, vectors, mode,
            pq_M=int(g.pq.get("M", 8)), pq_k=int(g.pq.get("k", 256)), seed=g.seed,
        )
        if self.index_dir is not None:
            self.index_dir.mkdir(parents=True, exist_ok=True)
            index.save(self.index_dir / f"{chunk_size}_{mode}.cebvidx")
        return index


def build_prompts(spec: RunSpec, ctx: PipelineContext, clock=None) -> list[tuple[PromptRecord, str, float]]:
    """(record, prompt, prep_seconds) for every evaluated record.

    ``prep_seconds`` covers retrieval plus prompt construction as seen by
    ``clock``; a replay clock reports zero.
    """
    clock = clock or WallClock()
    grid = spec.grid
    mode = spec.prompting_mode
    index = None
    top_k = DEFAULT_TOP_K if spec["top_k"] == UNSET else spec["top_k"]
    if mode == "rag":
        chunk_size = DEFAULT_CHUNK_SIZE if spec["chunk_size"] == UNSET else spec["chunk_size"]
        quant = "no" if spec["embedding_quantization"] == UNSET else spec["embedding_quantization"]
        index = ctx.index(chunk_size, quant)
        by_id = {c.chunk_id: c.text for c in index.chunks}
    out = []
    for rec in ctx.records:
        t0 = clock.now()
        query = rec.query_text
        if grid.max_query_tokens:
            query = truncate_to_tokens(query, grid.max_query_tokens)
        if mode == "rag":
            qv = embed([query], ctx.provider)[0]
            hits = index.search(qv, top_k)
            prompt = build_rag_prompt(grid.prompt_template, query, [by_id[cid] for cid, _ in hits])
        elif mode == "fewshot":
            prompt = build_fewshot_prompt(grid.prompt_template, query, ctx.shots)
        else:
            prompt = fill_template(grid.prompt_template, query, "")
        out.append((rec, prompt, clock.now() - t0))
    return out


# ---------------------------------------------------------------------------
# Manifest
# ---------------------------------------------------------------------------


class Manifest:
    def __init__(self, path: Path, data: dict):
        self.path = path
        self.data = data
        self._lock = threading.Lock()

    @classmethod
    def create(cls, path: Path, specs: list[RunSpec], cfg_hash: str) -> "Manifest":
        now = _now()
        runs = [
            {"run_id": s.run_id, "status": "pending", "axes": s.axes, "repetition": s.repetition,
             "started_at": None, "finished_at": None, "error": None}
            for s in specs
        ]
        m = cls(path, {"config_hash": cfg_hash, "created_at": now, "updated_at": now, "runs": runs})
        m.save()
        return m

    @classmethod
    def load(cls, path: Path) -> "Manifest":
        return cls(path, json.loads(path.read_text(encoding="utf-8")))

    def status(self, run_id: str) -> str:
        return self._entry(run_id)["status"]

    def _entry(self, run_id: str) -> dict:
        for e in self.data["runs"]:
            if e["run_id"] == run_id:
                return e
        raise KeyError(run_id)

    def update(self, run_id: str, **fields) -> None:
        with self._lock:
            self._entry(run_id).update(fields)
            self.data["updated_at"] = _now()
            self.save()

    def save(self) -> None:
        tmp = self.path.with_suffix(".json.tmp")
        tmp.write_text(json.dumps(self.data, indent=2, sort_keys=True) + "\n", encoding="utf-8")
        os.replace(tmp, self.path)


# ---------------------------------------------------------------------------
# Execution
# ---------------------------------------------------------------------------


@dataclass
class BatchResult:
    done: list[str] = field(default_factory=list)
    failed: list[str] = field(default_factory=list)
    skipped: list[str] = field(default_factory=list)
    backend_calls: int = 0

    @property
    def exit_code(self) -> int:
        return 1 if self.failed else 0


class _CallCounter:
    def __init__(self):
        self.n = 0
        self._lock = threading.Lock()

    def bump(self) -> None:
        with self._lock:
            self.n += 1


def execute_run(
    spec: RunSpec,
    ctx: PipelineContext,
    out_dir: Path,
    backend: Backend,
    counter: _CallCounter | None = None,
):
    """Run every prompt of ``spec`` and write its log and summary."""
    grid = spec.grid
    clock = ReplayClock() if spec.backend.effective_clock == "replay" else WallClock()
    probe = ProbeDescriptor.from_dict(grid.probe)
    if probe.path:
        probe = ProbeDescriptor(probe.kind, grid.resolve(probe.path), probe.command, probe.interval)
    task = evaluators.task_for_metrics(grid.metrics)

    monitor = ResourceMonitor(probe, clock).start()
    try:
        prompts = build_prompts(spec, ctx, clock)
        (out_dir / "prompts").mkdir(exist_ok=True)
        write_prompt_file(out_dir / "prompts" / f"{spec.run_id}.txt", [p for _, p, _ in prompts])

        log_path = out_dir / f"{spec.run_id}.jsonl"
        log_path.unlink(missing_ok=True)
        records: list[RunRecord] = []
        with JsonlSink(log_path) as sink:
            for rec, prompt, prep in prompts:
                if counter:
                    counter.bump()
                try:
                    res = backend.generate(prompt)
                except BackendError as e:
                    row = RunRecord(spec.run_id, rec.prompt_id, prep, 0.0, 0, 0, "",
                                    error=f"{type(e).__name__}: {e}", label=rec.label)
                else:
                    clock.advance(res.latency)
                    row = RunRecord(
                        spec.run_id, rec.prompt_id, prep + res.latency, res.latency,
                        res.tokens_in, res.tokens_out, res.text,
                        extracted_prediction=evaluators.extract(task, res.text),
                        token_counts_exact=res.token_counts_exact, label=rec.label,
                    )
                log_record(sink, row)
                records.append(row)
    finally:
        samples = monitor.stop()

    (out_dir / "resources").mkdir(exist_ok=True)
    write_trace(out_dir / "resources" / f"{spec.run_id}.trace.jsonl", samples)
    preds = [r.extracted_prediction for r in records]
    labels = [r.label for r in records]
    metric_names = list(dict.fromkeys([*grid.metrics, "valid_answer_rate"]))
    metrics = evaluators.evaluate(metric_names, preds, labels)
    axes = {k: v for k, v in spec.axes.items()}
    axes["prompting_mode"] = spec.prompting_mode
    summary = aggregate(records, samples, metrics, axes, probe_ok=monitor.failed is None)
    summary.extra = {"grid": grid.name, "repetition": spec.repetition, "backend_kind": spec.backend.kind}
    write_summary(out_dir / f"{spec.run_id}.summary.json", summary)
    if summary.n_errors == summary.n_prompts:
        raise BackendError(f"all {summary.n_prompts} prompts failed")
    return summary


def run_batch(
    grid: ExperimentGrid,
    out_dir: str | os.PathLike,
    resume: bool = False,
    parallel_runs: int = 1,
    config_text: str | None = None,
    backend_factory: Callable[[object], Backend] = make_backend,
) -> BatchResult:
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    specs = expand_grid(grid)
    cfg_hash = config_hash(config_text if config_text is not None else repr(grid))
    ctx = PipelineContext.load(grid, index_dir=out / "index")

    mpath = out / MANIFEST
    if resume and mpath.exists():
        manifest = Manifest.load(mpath)
        if manifest.data.get("config_hash") != cfg_hash:
            raise ManifestMismatch(f"{mpath} was written for a different config")
    else:
        manifest = Manifest.create(mpath, specs, cfg_hash)

    result = BatchResult()
    counter = _CallCounter()
    lock = threading.Lock()

    def one(spec: RunSpec) -> None:
        if resume and manifest.status(spec.run_id) == "done" and (out / f"{spec.run_id}.summary.json").exists():
            with lock:
                result.skipped.append(spec.run_id)
            return
        manifest.update(spec.run_id, status="pending", started_at=_now(), finished_at=None, error=None)
        backend = None
        try:
            backend = backend_factory(spec.backend)
            execute_run(spec, ctx, out, backend, counter)
        except Exception as e:
            logger.error("run %s failed: %s", spec.run_id, e)
            manifest.update(spec.run_id, status="failed", finished_at=_now(), error=f"{type(e).__name__}: {e}")
            with lock:
                result.failed.append(spec.run_id)
        else:
            manifest.update(spec.run_id, status="done", finished_at=_now())
            with lock:
                result.done.append(spec.run_id)
        finally:
            if backend is not None:
                backend.close()

    if parallel_runs <= 1:
        for spec in specs:
            one(spec)
    else:
        with ThreadPoolExecutor(max_workers=parallel_runs) as pool:
            list(pool.map(one, specs))
    result.backend_calls = counter.n
    return result
