"""Experiment configuration: YAML parsing, validation and grid expansion.

A config declares a few fixed settings plus variable ``axes``. Expansion takes
the Cartesian product of the axis value lists (in declaration order) times the
repetition count. Axes the config does not mention collapse to the single
sentinel value ``"unset"``.

Example::

    name: mental-health
    dataset: data/phq.jsonl
    template: "Rate the interview.\\n{context}\\n{query}"
    knowledge: [docs/manual.txt]
    backend: {kind: openai_http, base_url: http://localhost:8000}
    metrics: [mae, specificity]
    axes:
      model: [llama3:8b_4bit, mixtral:8x7b]
      top_k: [2, 5, 10]
"""

from __future__ import annotations

import hashlib
import itertools
import json
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any, Mapping

import yaml

from .backends import BackendDescriptor

AXES = (
    "model",
    "model_quantization",
    "embedding_quantization",
    "top_k",
    "chunk_size",
    "prompting_mode",
)
UNSET = "unset"
EMBEDDING_QUANTIZATIONS = ("no", "sq", "pq")
PROMPTING_MODES = ("plain", "rag", "fewshot")
METRICS = ("mae", "specificity", "f1_macro", "f1_micro", "valid_answer_rate")
TOP_LEVEL_KEYS = {
    "name", "dataset", "template", "knowledge", "backend", "metrics", "repetitions", "axes",
    # optional extras
    "dataset_format", "embedding", "probe", "fewshot", "chunk_overlap", "pq", "seed",
    "max_query_tokens",
}


class ConfigError(ValueError):
    pass


@dataclass(frozen=True)
class ExperimentGrid:
    name: str
    dataset_path: str
    prompt_template: str
    backend: BackendDescriptor
    axes: Mapping[str, tuple]
    knowledge_paths: tuple[str, ...] = ()
    metrics: tuple[str, ...] = ()
    repetitions: int = 1
    dataset_format: str | None = None
    embedding: Mapping[str, Any] = field(default_factory=dict)
    probe: Mapping[str, Any] = field(default_factory=dict)
    fewshot: Mapping[str, Any] = field(default_factory=dict)
    chunk_overlap: int = 0
    pq: Mapping[str, Any] = field(default_factory=dict)
    seed: int = 0
    max_query_tokens: int | None = None
    base_dir: str = "."

    def resolve(self, path: str) -> str:
        """Paths in a config file are relative to the file's directory."""
        p = Path(path)
        return str(p if p.is_absolute() else Path(self.base_dir) / p)


@dataclass(frozen=True)
class RunSpec:
    run_id: str
    grid: ExperimentGrid
    bindings: tuple[tuple[str, Any], ...]
    repetition: int = 0

    @property
    def axes(self) -> dict[str, Any]:
        return dict(self.bindings)

    def __getitem__(self, axis: str) -> Any:
        return self.axes[axis]

    @property
    def dataset_path(self) -> str:
        return self.grid.dataset_path

    @property
    def prompt_template(self) -> str:
        return self.grid.prompt_template

    @property
    def knowledge_paths(self) -> tuple[str, ...]:
        return self.grid.knowledge_paths

    @property
    def metrics(self) -> tuple[str, ...]:
        return self.grid.metrics

    @property
    def prompting_mode(self) -> str:
        mode = self.axes["prompting_mode"]
        if mode == UNSET:
            return "rag" if self.grid.knowledge_paths else "plain"
        return mode

    @property
    def backend(self) -> BackendDescriptor:
        """The grid backend with the ``model`` axis bound, if set, and the
        mock fixture path resolved against the config directory."""
        d = self.grid.backend.to_dict()
        model = self.axes["model"]
        if model != UNSET:
            d["model"] = str(model)
        if d.get("fixture_path"):
            d["fixture_path"] = self.grid.resolve(d["fixture_path"])
        return BackendDescriptor(**d)


def _fail(msg: str) -> None:
    raise ConfigError(msg)


def _check_axis(axis: str, values: Any) -> tuple:
    if axis not in AXES:
        _fail(f"unknown axis {axis!r}; expected one of {AXES}")
    if not isinstance(values, list):
        values = [values]
    if axis == "embedding_quantization":
        # YAML 1.1 reads a bare `no` as False
        values = ["no" if v is False else v for v in values]
    if not values:
        _fail(f"axis {axis!r} is empty")
    seen = []
    for v in values:
        if isinstance(v, (dict, list)):
            _fail(f"axis {axis!r}: invalid value {v!r}")
        if v in seen:
            _fail(f"axis {axis!r}: duplicate value {v!r}")
        seen.append(v)
    for v in values:
        if axis in ("top_k", "chunk_size"):
            if isinstance(v, bool) or not isinstance(v, int) or v <= 0:
                _fail(f"axis {axis!r}: invalid value {v!r} (must be a positive integer)")
        elif axis == "embedding_quantization":
            if v not in EMBEDDING_QUANTIZATIONS:
                _fail(f"axis {axis!r}: invalid value {v!r}; expected one of {EMBEDDING_QUANTIZATIONS}")
        elif axis == "prompting_mode":
            if v not in PROMPTING_MODES:
                _fail(f"axis {axis!r}: invalid value {v!r}; expected one of {PROMPTING_MODES}")
        elif not isinstance(v, str):
            _fail(f"axis {axis!r}: invalid value {v!r} (must be a string)")
    return tuple(values)


def parse_experiment_config(text: str, base_dir: str | Path = ".") -> ExperimentGrid:
    """Parse and validate YAML config text."""
    try:
        doc = yaml.safe_load(text)
    except yaml.YAMLError as e:
        mark = getattr(e, "problem_mark", None)
        where = f" at line {mark.line + 1}, column {mark.column + 1}" if mark else ""
        raise ConfigError(f"syntax error{where}: {getattr(e, 'problem', e)}") from e
    if not isinstance(doc, dict):
        _fail("config must be a mapping at the top level")
    unknown = set(doc) - TOP_LEVEL_KEYS
    if unknown:
        _fail(f"unknown top-level key(s): {sorted(unknown)}")
    for key in ("name", "dataset", "template", "backend"):
        if key not in doc:
            _fail(f"missing required key {key!r}")

    raw_axes = doc.get("axes") or {}
    if not isinstance(raw_axes, dict):
        _fail("'axes' must be a mapping of axis name to list of values")
    axes: dict[str, tuple] = {a: _check_axis(a, v) for a, v in raw_axes.items()}
    for a in AXES:
        axes.setdefault(a, (UNSET,))

    backend = doc["backend"]
    if not isinstance(backend, dict):
        _fail("'backend' must be a mapping")
    try:
        backend_desc = BackendDescriptor.from_dict(backend)
    except (TypeError, ValueError) as e:
        raise ConfigError(f"backend: {e}") from e

    knowledge = doc.get("knowledge") or []
    if isinstance(knowledge, str):
        knowledge = [knowledge]
    metrics = doc.get("metrics") or []
    for m in metrics:
        if m not in METRICS:
            _fail(f"unknown metric {m!r}; expected one of {METRICS}")
    reps = doc.get("repetitions", 1)
    if isinstance(reps, bool) or not isinstance(reps, int) or reps < 1:
        _fail(f"repetitions: invalid value {reps!r} (must be a positive integer)")
    overlap = doc.get("chunk_overlap", 0)
    if isinstance(overlap, bool) or not isinstance(overlap, int) or overlap < 0:
        _fail(f"chunk_overlap: invalid value {overlap!r}")
    for cs in axes["chunk_size"]:
        if cs != UNSET and overlap >= cs:
            _fail(f"chunk_overlap {overlap} must be smaller than chunk_size {cs}")
    if "rag" in axes["prompting_mode"] and not knowledge:
        _fail("prompting_mode 'rag' requires knowledge paths")
    fmt = doc.get("dataset_format")
    if fmt not in (None, "csv", "jsonl"):
        _fail(f"dataset_format: invalid value {fmt!r}")

    return ExperimentGrid(
        name=str(doc["name"]),
        dataset_path=str(doc["dataset"]),
        prompt_template=str(doc["template"]),
        backend=backend_desc,
        axes=axes,
        knowledge_paths=tuple(str(k) for k in knowledge),
        metrics=tuple(metrics),
        repetitions=reps,
        dataset_format=fmt,
        embedding=dict(doc.get("embedding") or {}),
        probe=dict(doc.get("probe") or {}),
        fewshot=dict(doc.get("fewshot") or {}),
        chunk_overlap=overlap,
        pq=dict(doc.get("pq") or {}),
        seed=int(doc.get("seed", 0)),
        max_query_tokens=doc.get("max_query_tokens"),
        base_dir=str(base_dir),
    )


def load_experiment_config(path: str | Path) -> ExperimentGrid:
    path = Path(path)
    return parse_experiment_config(path.read_text(encoding="utf-8"), base_dir=path.parent)


def config_hash(text: str) -> str:
    return hashlib.sha256(text.encode("utf-8")).hexdigest()


def make_run_id(grid_name: str, bindings: Mapping[str, Any], repetition: int) -> str:
    """128-bit hash of the sorted-key JSON of the bound values."""
    canon = json.dumps(
        {"grid": grid_name, "bindings": dict(bindings), "repetition": repetition},
        sort_keys=True,
        separators=(",", ":"),
    )
    return hashlib.blake2b(canon.encode("utf-8"), digest_size=16).hexdigest()


def expand_grid(grid: ExperimentGrid) -> list[RunSpec]:
    names = list(grid.axes)
    specs = []
    for combo in itertools.product(*(grid.axes[a] for a in names)):
        bindings = tuple(zip(names, combo))
        for rep in range(grid.repetitions):
            specs.append(RunSpec(make_run_id(grid.name, dict(bindings), rep), grid, bindings, rep))
    return specs
