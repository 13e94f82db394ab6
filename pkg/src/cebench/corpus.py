"""Datasets, prompt files and knowledge chunking."""

from __future__ import annotations

import csv
import json
import math
import os
from dataclasses import dataclass
from pathlib import Path
from typing import Sequence

from .backends import fill_template

NLI_LABELS = ("entailment", "contradiction", "neutral")
LABEL_KINDS = ("score", "nli", "none")


class DatasetError(ValueError):
    pass


@dataclass(frozen=True)
class PromptRecord:
    prompt_id: str
    query_text: str
    label: int | str | None = None
    label_kind: str = "none"


@dataclass(frozen=True)
class Chunk:
    chunk_id: str
    source_path: str
    start_offset: int
    text: str


def escape_line(text: str) -> str:
    return text.replace("\r", "\\r").replace("\n", "\\n")


def render_prompts(
    template: str,
    records: Sequence[PromptRecord],
    context_per_record: Sequence[str] | None = None,
) -> str:
    """Merge ``template`` with each record's query into prompt-file contents.

    One line per record; newlines inside a prompt become the two characters
    ``\\n``.
    """
    if "{context}" in template:
        if context_per_record is None:
            raise ValueError("template has {context} but no context was supplied")
        if len(context_per_record) != len(records):
            raise ValueError(
                f"got {len(context_per_record)} contexts for {len(records)} records"
            )
    lines = []
    for i, rec in enumerate(records):
        ctx = context_per_record[i] if context_per_record is not None else None
        lines.append(escape_line(fill_template(template, rec.query_text, ctx)) + "\n")
    return "".join(lines)


def write_prompt_file(path: str | os.PathLike, prompts: Sequence[str]) -> None:
    with open(path, "w", encoding="utf-8", newline="") as fh:
        for p in prompts:
            fh.write(escape_line(p) + "\n")


def read_prompt_file(path: str | os.PathLike) -> list[str]:
    """Return the escaped lines of a prompt file."""
    text = Path(path).read_text(encoding="utf-8")
    return text.split("\n")[:-1] if text else []


def chunk_document(text: str, chunk_size: int, overlap: int = 0, source_path: str = "") -> list[Chunk]:
    """Slice ``text`` into fixed-size character chunks.

    Chunk ``i`` starts at ``i * (chunk_size - overlap)``. Offsets count code
    points, never bytes.
    """
    if chunk_size < 1:
        raise ValueError("chunk_size must be >= 1")
    if not 0 <= overlap < chunk_size:
        raise ValueError(f"overlap must satisfy 0 <= overlap < chunk_size, got {overlap}")
    if not text:
        return []
    step = chunk_size - overlap
    # a document no longer than the overlap still yields one chunk
    count = max(1, math.ceil(max(len(text) - overlap, 0) / step))
    stem = Path(source_path).name if source_path else "doc"
    return [
        Chunk(f"{stem}:{i}", source_path, i * step, text[i * step : i * step + chunk_size])
        for i in range(count)
    ]


def _parse_label(raw, kind: str | None, where: str) -> tuple[int | str | None, str]:
    if raw is None or raw == "":
        if kind not in (None, "none"):
            raise DatasetError(f"{where}: label_kind {kind!r} but label is empty")
        return None, "none"
    if kind is None:
        if isinstance(raw, int) and not isinstance(raw, bool):
            kind = "score"
        elif str(raw).strip().lower() in NLI_LABELS:
            kind = "nli"
        else:
            try:
                int(str(raw).strip())
                kind = "score"
            except ValueError:
                raise DatasetError(f"{where}: unparseable label {raw!r}") from None
    if kind == "score":
        if isinstance(raw, bool):
            raise DatasetError(f"{where}: unparseable label {raw!r}")
        if isinstance(raw, int):
            return raw, kind
        try:
            return int(str(raw).strip()), kind
        except ValueError:
            raise DatasetError(f"{where}: unparseable score label {raw!r}") from None
    if kind == "nli":
        label = str(raw).strip().lower()
        if label not in NLI_LABELS:
            raise DatasetError(f"{where}: unparseable NLI label {raw!r}")
        return label, kind
    if kind == "none":
        return None, kind
    raise DatasetError(f"{where}: unknown label_kind {kind!r}; expected one of {LABEL_KINDS}")


def load_dataset(path: str | os.PathLike, format: str | None = None) -> list[PromptRecord]:
    """Read a CSV (with header) or JSONL dataset.

    Columns/fields: ``id``, ``query`` (required), ``label``, ``label_kind``.
    When ``label_kind`` is absent it is inferred from the label value.
    """
    path = Path(path)
    fmt = format or ("jsonl" if path.suffix.lower() in (".jsonl", ".ndjson") else "csv")
    rows: list[tuple[str, dict]] = []
    if fmt == "jsonl":
        with open(path, encoding="utf-8") as fh:
            for lineno, line in enumerate(fh, 1):
                if not line.strip():
                    continue
                try:
                    rows.append((f"{path}:{lineno}", json.loads(line)))
                except json.JSONDecodeError as e:
                    raise DatasetError(f"{path}:{lineno}: invalid JSON: {e}") from e
    elif fmt == "csv":
        with open(path, encoding="utf-8", newline="") as fh:
            reader = csv.DictReader(fh)
            if reader.fieldnames is None or "query" not in reader.fieldnames:
                raise DatasetError(f"{path}: missing required column 'query'")
            for lineno, row in enumerate(reader, 2):
                rows.append((f"{path}:{lineno}", row))
    else:
        raise DatasetError(f"unknown dataset format {fmt!r}")

    records = []
    seen = set()
    for i, (where, row) in enumerate(rows):
        if not isinstance(row, dict) or "query" not in row or row["query"] is None:
            raise DatasetError(f"{where}: missing required field 'query'")
        pid = str(row.get("id") if row.get("id") not in (None, "") else i)
        if pid in seen:
            raise DatasetError(f"{where}: duplicate id {pid!r}")
        seen.add(pid)
        kind = row.get("label_kind") or None
        label, kind = _parse_label(row.get("label"), kind, where)
        records.append(PromptRecord(pid, str(row["query"]), label, kind))
    return records
