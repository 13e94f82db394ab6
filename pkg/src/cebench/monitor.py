"""Resource probes, JSONL run logs and per-run aggregation."""

from __future__ import annotations

import json
import logging
import math
import os
import shlex
import subprocess
import threading
import time
import warnings
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Any, Iterator, Sequence

logger = logging.getLogger(__name__)

PROBE_KINDS = ("null", "trace_replay", "command")
DEFAULT_INTERVAL = 0.5


class TruncatedLogWarning(RuntimeWarning):
    pass


# ---------------------------------------------------------------------------
# Clocks
# ---------------------------------------------------------------------------


class WallClock:
    virtual = False

    def __init__(self):
        self._t0 = time.perf_counter()

    def now(self) -> float:
        return time.perf_counter() - self._t0

    def advance(self, seconds: float) -> None:
        pass


class ReplayClock:
    """Virtual time that moves only when ``advance`` is called."""

    virtual = True

    def __init__(self):
        self._t = 0.0
        self._lock = threading.Lock()

    def now(self) -> float:
        return self._t

    def advance(self, seconds: float) -> None:
        with self._lock:
            self._t += seconds


# ---------------------------------------------------------------------------
# Probes
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class ResourceSample:
    timestamp: float
    gpu_memory_used: int
    host_memory_used: int = 0

    def __post_init__(self):
        if self.timestamp < 0 or self.gpu_memory_used < 0 or self.host_memory_used < 0:
            raise ValueError("resource sample values must be non-negative")


@dataclass(frozen=True)
class ProbeDescriptor:
    kind: str = "null"
    path: str | None = None
    command: str | None = None
    interval: float = DEFAULT_INTERVAL

    def __post_init__(self):
        if self.kind not in PROBE_KINDS:
            raise ValueError(f"unknown probe kind {self.kind!r}; expected one of {PROBE_KINDS}")
        if self.kind == "trace_replay" and not self.path:
            raise ValueError("trace_replay probe requires path")
        if self.kind == "command" and not self.command:
            raise ValueError("command probe requires command")
        if not self.interval > 0:
            raise ValueError("probe interval must be > 0")

    @classmethod
    def from_dict(cls, d) -> "ProbeDescriptor":
        return cls(**dict(d)) if d else cls()


def load_trace(path: str | os.PathLike) -> list[ResourceSample]:
    """Read a JSONL trace of ``{t_offset_s, gpu_memory_used_bytes, host_memory_used_bytes}``."""
    samples = []
    with open(path, encoding="utf-8") as fh:
        for line in fh:
            if line.strip():
                row = json.loads(line)
                samples.append(
                    ResourceSample(
                        float(row["t_offset_s"]),
                        int(row["gpu_memory_used_bytes"]),
                        int(row.get("host_memory_used_bytes", 0)),
                    )
                )
    for a, b in zip(samples, samples[1:]):
        if b.timestamp <= a.timestamp:
            raise ValueError(f"{path}: trace offsets must be strictly increasing")
    return samples


def write_trace(path: str | os.PathLike, samples: Sequence[ResourceSample]) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        for s in samples:
            fh.write(json.dumps({
                "t_offset_s": s.timestamp,
                "gpu_memory_used_bytes": s.gpu_memory_used,
                "host_memory_used_bytes": s.host_memory_used,
            }) + "\n")


def read_command_probe(argv: Sequence[str], timeout: float = 5.0) -> tuple[int, int]:
    """Run a probe executable once; its first line is ``<gpu_used_bytes> [host_used_bytes]``."""
    out = subprocess.run(argv, capture_output=True, text=True, timeout=timeout, check=True).stdout
    fields = out.strip().splitlines()[0].split()
    gpu = int(fields[0])
    if len(fields) > 1:
        host = int(fields[1])
    else:
        import psutil

        host = int(psutil.virtual_memory().used)
    return gpu, host


def run_probe(
    probe: ProbeDescriptor,
    interval: float | None = None,
    stop: threading.Event | None = None,
    clock=None,
) -> Iterator[ResourceSample]:
    """Yield samples until ``stop`` is set (or a replayed trace runs out).

    Sampling is fixed-rate: sample ``i`` is due at ``i * interval``, so slow
    probes do not accumulate drift.
    """
    interval = interval or probe.interval
    stop = stop or threading.Event()
    clock = clock or WallClock()
    if probe.kind == "null":
        return
    if probe.kind == "trace_replay":
        for s in load_trace(probe.path):
            if clock.virtual:
                if s.timestamp > clock.now():
                    return
            elif stop.wait(max(0.0, s.timestamp - clock.now())):
                return
            yield s
        return
    argv = shlex.split(probe.command)
    i = 0
    last_t = -1.0
    while not stop.is_set():
        due = i * interval
        if stop.wait(max(0.0, due - clock.now())):
            return
        gpu, host = read_command_probe(argv)
        t = max(clock.now(), last_t + 1e-9)
        last_t = t
        yield ResourceSample(t, gpu, host)
        i += 1


class ResourceMonitor:
    """Runs a probe in a background thread for the duration of a run.

    With a virtual clock, trace samples are taken up to the clock's final
    time when the monitor stops, so the window is deterministic.
    """

    def __init__(self, probe: ProbeDescriptor, clock=None, interval: float | None = None):
        self.probe = probe
        self.clock = clock or WallClock()
        self.interval = interval or probe.interval
        self.samples: list[ResourceSample] = []
        self.failed: str | None = None
        self._stop = threading.Event()
        self._thread: threading.Thread | None = None

    def _loop(self) -> None:
        try:
            for s in run_probe(self.probe, self.interval, self._stop, self.clock):
                self.samples.append(s)
        except Exception as e:  # the run continues without resource data
            self.failed = f"{type(e).__name__}: {e}"
            logger.warning("resource probe failed: %s", self.failed)

    def start(self) -> "ResourceMonitor":
        if self.probe.kind != "null" and not self.clock.virtual:
            self._thread = threading.Thread(target=self._loop, daemon=True)
            self._thread.start()
        return self

    def stop(self) -> list[ResourceSample]:
        self._stop.set()
        if self._thread is not None:
            self._thread.join()
        elif self.probe.kind != "null":
            self._loop()
        return list(self.samples)

    def __enter__(self):
        return self.start()

    def __exit__(self, *exc):
        self.stop()


# ---------------------------------------------------------------------------
# Records and logs
# ---------------------------------------------------------------------------


@dataclass
class RunRecord:
    run_id: str
    prompt_id: str
    latency_end_to_end: float
    latency_llm: float
    tokens_in: int
    tokens_out: int
    response_text: str
    extracted_prediction: int | str | None = None
    error: str | None = None
    token_counts_exact: bool = False
    label: int | str | None = None

    def __post_init__(self):
        if not self.latency_end_to_end >= self.latency_llm >= 0:
            raise ValueError(
                f"need latency_end_to_end >= latency_llm >= 0, got "
                f"{self.latency_end_to_end} and {self.latency_llm}"
            )

    def to_dict(self) -> dict[str, Any]:
        return asdict(self)

    @classmethod
    def from_dict(cls, d: dict[str, Any]) -> "RunRecord":
        return cls(**d)


class JsonlSink:
    """Append-only JSONL writer. Thread-safe; every line is flushed and fsynced."""

    def __init__(self, path: str | os.PathLike, fsync: bool = True):
        self.path = Path(path)
        self._fh = open(self.path, "a", encoding="utf-8")
        self._lock = threading.Lock()
        self._fsync = fsync

    def write(self, obj: dict[str, Any]) -> None:
        line = json.dumps(obj, ensure_ascii=False, sort_keys=True) + "\n"
        with self._lock:
            self._fh.write(line)
            self._fh.flush()
            if self._fsync:
                os.fsync(self._fh.fileno())

    def close(self) -> None:
        with self._lock:
            if not self._fh.closed:
                self._fh.close()

    def __enter__(self):
        return self

    def __exit__(self, *exc):
        self.close()


def log_record(sink: JsonlSink, record: RunRecord) -> None:
    sink.write(record.to_dict())


def read_jsonl(path: str | os.PathLike) -> list[dict[str, Any]]:
    """Parse a JSONL log, skipping a torn final line with a warning.

    A corrupt line anywhere else is an error.
    """
    text = Path(path).read_text(encoding="utf-8")
    lines = text.split("\n")
    torn_tail = lines[-1] != ""
    if not torn_tail:
        lines = lines[:-1]
    rows = []
    for i, line in enumerate(lines):
        last = i == len(lines) - 1
        try:
            rows.append(json.loads(line))
        except json.JSONDecodeError:
            if last:
                warnings.warn(f"{path}: skipping truncated final line", TruncatedLogWarning, stacklevel=2)
                continue
            raise ValueError(f"{path}:{i + 1}: corrupt log line") from None
        if last and torn_tail:
            # parseable but unterminated: the writer died before the newline
            warnings.warn(f"{path}: final line has no terminator", TruncatedLogWarning, stacklevel=2)
    return rows


def read_records(path: str | os.PathLike) -> list[RunRecord]:
    return [RunRecord.from_dict(d) for d in read_jsonl(path)]


# ---------------------------------------------------------------------------
# Aggregation
# ---------------------------------------------------------------------------


@dataclass
class RunSummary:
    run_id: str
    axes: dict[str, Any]
    n_prompts: int
    metrics: dict[str, float]
    mean_latency: float | None
    p95_latency: float | None
    mean_latency_llm: float | None
    peak_gpu_memory: int | None
    peak_host_memory: int | None
    tokens_in_total: int
    tokens_out_total: int
    valid_answer_rate: float
    n_errors: int = 0
    token_counts_exact: bool = True
    extra: dict[str, Any] = field(default_factory=dict)

    def to_dict(self) -> dict[str, Any]:
        return asdict(self)

    @classmethod
    def from_dict(cls, d: dict[str, Any]) -> "RunSummary":
        return cls(**d)

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), sort_keys=True, indent=2) + "\n"

    @property
    def tokens_in_mean(self) -> float:
        return self.tokens_in_total / self.n_prompts if self.n_prompts else 0.0

    @property
    def tokens_out_mean(self) -> float:
        return self.tokens_out_total / self.n_prompts if self.n_prompts else 0.0


def write_summary(path: str | os.PathLike, summary: RunSummary) -> None:
    Path(path).write_text(summary.to_json(), encoding="utf-8")


def read_summary(path: str | os.PathLike) -> RunSummary:
    return RunSummary.from_dict(json.loads(Path(path).read_text(encoding="utf-8")))


def nearest_rank(values: Sequence[float], pct: int) -> float:
    """Nearest-rank percentile: the ceil(pct/100 * n)-th order statistic."""
    if not values:
        raise ValueError("percentile of an empty list")
    ordered = sorted(values)
    rank = max(1, (pct * len(ordered) + 99) // 100)
    return ordered[rank - 1]


def aggregate(
    records: Sequence[RunRecord],
    samples: Sequence[ResourceSample] = (),
    metrics: dict[str, float] | None = None,
    axes: dict[str, Any] | None = None,
    probe_ok: bool = True,
) -> RunSummary:
    """Summarize one run's records and resource samples.

    Latency statistics cover non-error records; the valid-answer rate counts
    every record in the denominator. ``metrics`` carries evaluator outputs.
    """
    if not records:
        raise ValueError("cannot aggregate an empty record list")
    run_ids = {r.run_id for r in records}
    if len(run_ids) != 1:
        raise ValueError(f"records span several runs: {sorted(run_ids)}")
    ok = [r for r in records if r.error is None]
    e2e = [r.latency_end_to_end for r in ok]
    llm = [r.latency_llm for r in ok]
    valid = sum(r.extracted_prediction is not None for r in records)
    peak_gpu = max((s.gpu_memory_used for s in samples), default=None) if probe_ok else None
    peak_host = max((s.host_memory_used for s in samples), default=None) if probe_ok else None
    return RunSummary(
        run_id=records[0].run_id,
        axes=dict(axes or {}),
        n_prompts=len(records),
        metrics=dict(metrics or {}),
        mean_latency=math.fsum(e2e) / len(e2e) if e2e else None,
        p95_latency=nearest_rank(e2e, 95) if e2e else None,
        mean_latency_llm=math.fsum(llm) / len(llm) if llm else None,
        peak_gpu_memory=peak_gpu,
        peak_host_memory=peak_host,
        tokens_in_total=sum(r.tokens_in for r in records),
        tokens_out_total=sum(r.tokens_out for r in records),
        valid_answer_rate=valid / len(records),
        n_errors=len(records) - len(ok),
        token_counts_exact=all(r.token_counts_exact for r in ok),
    )
