"""Line-delimited JSON traces, one record per round plus a closing summary."""

from __future__ import annotations

import json
from dataclasses import asdict
from pathlib import Path
from typing import IO, Any, Iterable

from .core import EpisodeTrace

SCHEMA = "vca-trace/1"


def dumps(record: dict) -> str:
    return json.dumps(record, sort_keys=True, separators=(",", ":"), ensure_ascii=False)


def trace_records(trace: EpisodeTrace, meta: dict[str, Any] | None = None) -> list[dict]:
    records = [{"schema": SCHEMA, "type": "round", **asdict(r)} for r in trace.rounds]
    summary = {
        "schema": SCHEMA,
        "type": "summary",
        "answer": trace.final_answer,
        "rounds": len(trace.rounds),
        "total_unique_frames": trace.total_unique_frames,
        "status": trace.status,
    }
    if meta:
        summary["meta"] = meta
    records.append(summary)
    return records


def write_trace(target: str | Path | IO[str], trace: EpisodeTrace, meta: dict[str, Any] | None = None) -> None:
    text = "".join(dumps(r) + "\n" for r in trace_records(trace, meta))
    if hasattr(target, "write"):
        target.write(text)
    else:
        Path(target).write_text(text, encoding="utf-8")


def trace_text(trace: EpisodeTrace, meta: dict[str, Any] | None = None) -> str:
    return "".join(dumps(r) + "\n" for r in trace_records(trace, meta))


def read_trace(path: str | Path) -> tuple[list[dict], dict | None]:
    """Return the round records and the summary (None if the run was cut short)."""
    rounds, summary = [], None
    for n, line in enumerate(Path(path).read_text(encoding="utf-8").splitlines(), start=1):
        if not line.strip():
            continue
        try:
            rec = json.loads(line)
        except json.JSONDecodeError as exc:
            raise ValueError(f"{path}:{n}: not a JSON record ({exc.msg})") from None
        if rec.get("schema") != SCHEMA:
            raise ValueError(f"{path}:{n}: unsupported schema {rec.get('schema')!r}")
        if rec["type"] == "round":
            rounds.append(rec)
        elif rec["type"] == "summary":
            summary = rec
    return rounds, summary


def iter_traces(directory: str | Path) -> Iterable[tuple[Path, list[dict], dict | None]]:
    for path in sorted(Path(directory).glob("*.jsonl")):
        rounds, summary = read_trace(path)
        yield path, rounds, summary
