"""Dataset runs, answer matching, metrics and segment-distance analysis."""

from __future__ import annotations

import json
import logging
import re
import statistics
from collections import Counter
from concurrent.futures import ThreadPoolExecutor
from dataclasses import asdict, dataclass, replace
from pathlib import Path
from typing import Callable, Iterable, Sequence

from .backend import Backend
from .config import PathsConfig, RunConfig
from .errors import ConfigError, FrameUnavailable, VCAError
from .frames import VideoHandle, open_decoded, open_image_dir
from .orchestrator import GT_REWARD, EpisodeConfig, run_episode
from .trace import dumps, iter_traces, write_trace

log = logging.getLogger(__name__)

VIDEO_SUFFIXES = (".mp4", ".mkv", ".webm", ".avi", ".mov")


@dataclass
class QaRecord:
    video_id: str
    question: str
    answer_key: str
    options: list[str] | None = None
    gt_interval: tuple[float, float] | None = None
    duration_s: float = 0.0

    def __post_init__(self) -> None:
        if self.options is not None:
            self.options = [str(o) for o in self.options]
            if str(self.answer_key) not in self.options:
                raise ValueError(f"answer_key {self.answer_key!r} not among options {self.options}")
        if self.gt_interval is not None:
            self.gt_interval = (float(self.gt_interval[0]), float(self.gt_interval[1]))

    @property
    def query(self) -> str:
        return self.question.rstrip() + "\n" + instruction_for(self.options)


def instruction_for(options: Sequence[str] | None) -> str:
    if not options:
        return "Reply with your answer directly."
    if all(o.isdigit() for o in options):
        return "Reply with the number of the correct option only."
    return "Choose the best option and reply with its letter only, without explanation."


def load_dataset(path: str | Path) -> list[QaRecord]:
    records = []
    for n, line in enumerate(Path(path).read_text(encoding="utf-8").splitlines(), start=1):
        if not line.strip():
            continue
        try:
            records.append(QaRecord(**json.loads(line)))
        except (TypeError, ValueError) as exc:
            raise ValueError(f"{path}:{n}: bad record: {exc}") from exc
    return records


# -- answer matching ----------------------------------------------------------

_LEAD = re.compile(r"^(?:the\s+)?(?:correct\s+)?(?:final\s+)?(?:answer|option|choice)(?:\s+is)?\s*[:#]?\s*", re.I)
_TOKEN = re.compile(r"^\(?([A-Za-z]|\d+)\)?(?=$|[\s.:),;])")


def _clean(text: str) -> str:
    return " ".join(re.sub(r"[^\w\s]", " ", text.casefold()).split())


def normalize_answer(text: str, options: Sequence[str] | None = None) -> str:
    """Canonical form of an answer: an option label when one can be read off."""
    t = text.strip().strip("*`'\" ")
    if options:
        labels = {o.casefold(): o for o in options}
        body = _LEAD.sub("", t)
        m = _TOKEN.match(body)
        if m and m.group(1).casefold() in labels:
            return labels[m.group(1).casefold()]
        if _clean(t) in {_clean(o): o for o in options}:
            return {_clean(o): o for o in options}[_clean(t)]
        # a label standing on its own somewhere in the reply
        hits = [o for o in options if re.search(rf"(?<![\w]){re.escape(o)}(?![\w])", body)]
        if len(hits) == 1:
            return hits[0]
    return _clean(t)


def answers_match(answer: str | None, key: str, options: Sequence[str] | None = None) -> bool:
    if answer is None:
        return False
    return normalize_answer(answer, options) == normalize_answer(key, options)


# -- video resolution ---------------------------------------------------------


def resolve_video(record: QaRecord, paths: PathsConfig) -> VideoHandle:
    """Image directory, synthetic spec (``<id>.toml``) or a decodable file under ``video_root``."""
    root = Path(paths.video_root)
    d = root / record.video_id
    if d.is_dir():
        return open_image_dir(d, paths.frame_rate, record.video_id)
    spec_file = root / f"{record.video_id}.toml"
    if spec_file.exists():
        from .simenv import load_specs, make_env

        specs = load_specs(spec_file)
        return make_env(specs[0]).video
    if paths.decoder_command:
        for suffix in VIDEO_SUFFIXES:
            f = root / f"{record.video_id}{suffix}"
            if f.exists():
                total = int(round(record.duration_s * paths.frame_rate))
                if total < 2:
                    raise ConfigError(f"{record.video_id}: duration_s too short to index frames")
                return open_decoded(f, paths.decoder_command, paths.cache_dir, total, paths.frame_rate, record.video_id)
    raise FrameUnavailable(0, f"cannot resolve video {record.video_id!r} under {root}")


# -- runs ---------------------------------------------------------------------


@dataclass
class RecordResult:
    record: int
    video_id: str
    answer: str | None
    correct: bool
    rounds: int
    unique_frames: int
    error: str | None = None


def summarize(results: Sequence[RecordResult]) -> dict:
    ok = [r for r in results if r.error is None]
    n = len(ok)
    return {
        "records": len(results),
        "accuracy": sum(r.correct for r in ok) / n if n else 0.0,
        "mean_unique_frames": sum(r.unique_frames for r in ok) / n if n else 0.0,
        "mean_rounds": sum(r.rounds for r in ok) / n if n else 0.0,
        "error_count": len(results) - n,
    }


BackendFactory = Callable[[QaRecord, VideoHandle], Backend]


def run_record(
    i: int, record: QaRecord, cfg: RunConfig, backend_for: BackendFactory, trace_dir: Path | None,
    reward_backend: Backend | None = None,
) -> RecordResult:
    trace = None
    try:
        video = resolve_video(record, cfg.paths)
        ep = cfg.episode
        if ep.mode == GT_REWARD:
            if record.gt_interval is None:
                raise ConfigError("gt_reward mode needs a gt_interval on every record")
            ep = replace(ep, gt_interval=record.gt_interval)
        answer, trace = run_episode(video, record.query, ep, backend_for(record, video), reward_backend)
        result = RecordResult(
            i, record.video_id, answer, answers_match(answer, record.answer_key, record.options),
            len(trace.rounds), trace.total_unique_frames,
        )
    except VCAError as exc:
        trace = getattr(exc, "trace", None)
        log.warning("record %d (%s) failed: %s", i, record.video_id, exc)
        result = RecordResult(
            i, record.video_id, None, False,
            len(trace.rounds) if trace else 0, trace.total_unique_frames if trace else 0,
            error=f"{type(exc).__name__}: {exc}",
        )
    if trace_dir is not None and trace is not None:
        meta = {
            "record": i,
            "video_id": record.video_id,
            "mode": cfg.episode.mode,
            "frame_rate": cfg.paths.frame_rate,
            "error": result.error,
        }
        write_trace(trace_dir / f"{i:05d}-{_safe(record.video_id)}.jsonl", trace, meta)
    return result


def _safe(name: str) -> str:
    return re.sub(r"[^\w.-]", "_", name)


def cmd_run(
    records: Sequence[QaRecord],
    cfg: RunConfig,
    backend_for: BackendFactory,
    out_dir: str | Path,
    workers: int | None = None,
    reward_backend: Backend | None = None,
) -> dict:
    """Run every record as an episode; per-record failures are counted, not fatal."""
    out = Path(out_dir)
    trace_dir = out / "traces"
    trace_dir.mkdir(parents=True, exist_ok=True)
    workers = workers or cfg.backend.max_in_flight
    with ThreadPoolExecutor(max_workers=max(1, workers)) as pool:
        results = list(
            pool.map(lambda ir: run_record(ir[0], ir[1], cfg, backend_for, trace_dir, reward_backend), enumerate(records))
        )
    with open(out / "results.jsonl", "w", encoding="utf-8") as fh:
        for r in results:
            fh.write(dumps(asdict(r)) + "\n")
    summary = summarize(results)
    (out / "summary.json").write_text(json.dumps(summary, indent=2, sort_keys=True) + "\n")
    return summary


# -- segment distance ---------------------------------------------------------


@dataclass
class RoundDistance:
    round: int
    agent: int | None
    greedy: int | None
    skipped: str | None = None


def _argmax(values: Sequence[float]) -> int:
    return max(range(len(values)), key=lambda i: (values[i], -i))


def round_distances(rounds: Iterable[dict], gt_frames: tuple[float, float]) -> list[RoundDistance]:
    """Rank distance to the best-overlapping sub-segment, per round, for the agent and for argmax reward."""
    gs, ge = gt_frames
    out = []
    for rec in rounds:
        subs = rec.get("subsegments") or []
        r = rec["round"]
        decision = rec.get("decision") or {}
        if not subs:
            out.append(RoundDistance(r, None, None, "no sub-segments"))
            continue
        if ge > gs:
            overlaps = [max(0.0, min(b, ge) - max(a, gs)) for _, a, b in subs]
        else:
            overlaps = [1.0 if a <= gs < b else 0.0 for _, a, b in subs]
        if max(overlaps) <= 0:
            out.append(RoundDistance(r, None, None, "no gt overlap"))
            continue
        gt_rank = _argmax(overlaps)
        scores = rec.get("scores")
        greedy = abs(_argmax(scores) - gt_rank) if scores else None
        ids = [s[0] for s in subs]
        if decision.get("kind") != "explore":
            out.append(RoundDistance(r, None, greedy, f"decision was {decision.get('kind', 'missing')}"))
            continue
        if decision["segment_id"] not in ids:
            out.append(RoundDistance(r, None, greedy, "agent chose a segment from an earlier round"))
            continue
        out.append(RoundDistance(r, abs(ids.index(decision["segment_id"]) - gt_rank), greedy))
    return out


def distance_report(distances: Sequence[RoundDistance], status: str = "ok") -> dict:
    agent = [d.agent for d in distances if d.agent is not None]
    greedy = [d.greedy for d in distances if d.greedy is not None]
    paired = [d.agent - d.greedy for d in distances if d.agent is not None and d.greedy is not None]
    return {
        "status": status,
        "rounds": len(distances),
        "skipped": sum(d.skipped is not None for d in distances),
        "skip_reasons": dict(Counter(d.skipped for d in distances if d.skipped)),
        "agent_histogram": {str(k): v for k, v in sorted(Counter(agent).items())},
        "greedy_histogram": {str(k): v for k, v in sorted(Counter(greedy).items())},
        "agent_mean": statistics.fmean(agent) if agent else None,
        "greedy_mean": statistics.fmean(greedy) if greedy else None,
        "mean_gap": statistics.fmean(paired) if paired else None,
        "paired_rounds": len(paired),
    }


def cmd_analyze_distance(trace_dir: str | Path, records: Sequence[QaRecord]) -> dict:
    if not any(r.gt_interval for r in records):
        return distance_report([], status="dataset has no gt_interval; nothing to analyze")
    distances: list[RoundDistance] = []
    for path, rounds, summary in iter_traces(trace_dir):
        meta = (summary or {}).get("meta") or {}
        idx = meta.get("record")
        if idx is None or not 0 <= idx < len(records) or records[idx].gt_interval is None:
            distances.extend(RoundDistance(r["round"], None, None, "no gt_interval for record") for r in rounds)
            continue
        fps = float(meta.get("frame_rate", 1.0))
        gs, ge = records[idx].gt_interval
        distances.extend(round_distances(rounds, (gs * fps, ge * fps)))
    if not distances:
        return distance_report([], status="no rounds found in traces")
    return distance_report(distances)
