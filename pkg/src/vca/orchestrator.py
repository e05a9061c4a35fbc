"""The exploration loop: sample, score, update frontier/history/memory, decide."""

from __future__ import annotations

import logging
from dataclasses import asdict, dataclass, field
from typing import Sequence

from .backend import Backend
from .core import (
    CandidateSet,
    EpisodeTrace,
    FrameRecord,
    RewardedSegment,
    RoundRecord,
    Segment,
    SegmentIds,
    replace_in_frontier,
    split_segment,
)
from .errors import BudgetExhausted, ConfigError, EpisodeError, VCAError
from .explorer import ANSWER, Decision, decide, decide_frames
from .frames import VideoHandle, fetch_frames, uniform_sample
from .memory import FIFO, SCORE, MemoryBuffer, update_memory
from .prompts import Templates
from .reward import RewardHistory, RewardVerdict, frame_scores, score_segments

log = logging.getLogger(__name__)

FULL = "full"
NO_REWARD = "no_reward"
NO_TREE = "no_tree"
GT_REWARD = "gt_reward"
MODES = (FULL, NO_REWARD, NO_TREE, GT_REWARD)

GT_EXPLANATION = "ground-truth reference"
GT_FLOOR = 5


@dataclass
class EpisodeConfig:
    n_sample: int = 4
    buffer_capacity: int = 8
    max_rounds: int = 10
    mode: str = FULL
    temperature: float = 0.5
    gt_interval: tuple[float, float] | None = None
    templates: Templates | None = field(default=None, repr=False, compare=False)

    def __post_init__(self) -> None:
        self.validate(require_gt=False)

    def validate(self, require_gt: bool = True) -> None:
        if self.mode not in MODES:
            raise ConfigError(f"unknown mode {self.mode!r}; expected one of {MODES}")
        if self.n_sample < 1:
            raise ConfigError("n_sample must be >= 1")
        if self.buffer_capacity < 1:
            raise ConfigError("buffer_capacity must be >= 1")
        if self.n_sample > self.buffer_capacity:
            raise ConfigError(f"n_sample ({self.n_sample}) may not exceed buffer_capacity ({self.buffer_capacity})")
        if self.max_rounds < 1:
            raise ConfigError("max_rounds must be >= 1")
        if require_gt and self.mode == GT_REWARD and self.gt_interval is None:
            raise ConfigError("gt_reward mode requires gt_interval")


def _round_half_up(num: float) -> int:
    return int(num + 0.5)


def gt_reward_scores(
    subsegments: Sequence[Segment], gt_interval: tuple[float, float], fps: float = 1.0
) -> RewardVerdict:
    """Scores from overlap with a ground-truth time span (seconds)."""
    gs, ge = gt_interval
    if ge < gs:
        raise ValueError("gt_interval end precedes start")
    scores = []
    for seg in subsegments:
        s, e = seg.start / fps, seg.end / fps
        if ge == gs:
            score = 100 if s <= gs < e else GT_FLOOR
        else:
            overlap = max(0.0, min(e, ge) - max(s, gs))
            score = _round_half_up(100 * overlap / min(e - s, ge - gs)) if overlap > 0 else 0
        scores.append(min(100, max(GT_FLOOR, score)))
    return RewardVerdict.from_lists([GT_EXPLANATION] * len(scores), scores)


def _seg_dict(seg: Segment) -> dict:
    return {"id": seg.id, "start": seg.start, "end": seg.end, "depth": seg.depth, "parent": seg.parent}


class Episode:
    """Mutable state of one run; :func:`run_episode` drives it."""

    def __init__(
        self,
        video: VideoHandle,
        query: str,
        cfg: EpisodeConfig,
        backend: Backend,
        reward_backend: Backend | None = None,
    ) -> None:
        cfg.validate()
        self.video = video
        self.query = query
        self.cfg = cfg
        self.backend = backend
        self.reward_backend = reward_backend or backend
        self.fps = video.frame_rate
        self.ids = SegmentIds()
        self.root = Segment(self.ids(), 0, video.total_frames)
        self.frontier = CandidateSet((0, video.total_frames))
        self.history = RewardHistory()
        policy = FIFO if cfg.mode == NO_REWARD else SCORE
        self.memory = MemoryBuffer(cfg.buffer_capacity, policy=policy)
        self.trace = EpisodeTrace()
        self.seen: set[int] = set()

    # -- one round -------------------------------------------------------------

    def _score(self, round_index: int, children: list[Segment], boundary_frames) -> RewardVerdict | None:
        mode = self.cfg.mode
        if mode == NO_REWARD:
            return None
        if mode == GT_REWARD:
            verdict = gt_reward_scores(children, self.cfg.gt_interval, self.fps)
            self.history.extend(round_index, children, verdict)
            return verdict
        return score_segments(
            self.query,
            children,
            boundary_frames,
            self.history,
            self.reward_backend,
            round_index=round_index,
            fps=self.fps,
            templates=self.cfg.templates,
        )

    def _observe(self, round_index: int, selected: Segment, positions: list[int]) -> RoundRecord:
        """Sample, score and fold one round's frames into frontier, history and memory."""
        boundaries = [p for p in positions if selected.start < p < selected.end]
        children = split_segment(selected, boundaries, self.ids)
        images = fetch_frames(self.video, positions)
        by_index = dict(zip(positions, images))
        verdict = self._score(round_index, children, [by_index[p] for p in boundaries])

        scores = verdict.scores if verdict else [None] * len(children)
        texts = verdict.explanations if verdict else [""] * len(children)
        rewarded = [RewardedSegment(c, s, t) for c, s, t in zip(children, scores, texts)]
        if self.cfg.mode == NO_TREE:
            self.frontier = CandidateSet(self.frontier.root_span, tuple(rewarded))
        else:
            self.frontier = replace_in_frontier(self.frontier, selected, rewarded)
            self.frontier = self.frontier.retire(c.id for c in children if c.length <= 1)

        keep = frame_scores(positions, children, verdict.scores) if verdict else [0] * len(positions)
        new = [FrameRecord(p, by_index[p], s, round_index) for p, s in zip(positions, keep)]
        self.memory, evicted = update_memory(self.memory, new)
        self.seen.update(positions)

        return RoundRecord(
            round=round_index,
            selected=_seg_dict(selected),
            sampled=list(positions),
            subsegments=[[c.id, c.start, c.end] for c in children],
            scores=verdict.scores if verdict else None,
            explanations=verdict.explanations if verdict else None,
            frontier=self.frontier.ids,
            retired=[s.id for s in self.frontier.retired],
            history_size=len(self.history),
            memory=self.memory.indices,
            evicted=[f.frame_index for f in evicted],
        )

    def _decide(self, force: bool) -> Decision:
        if self.cfg.mode == NO_TREE:
            return decide_frames(
                self.query,
                list(self.frontier.entries),
                self.memory,
                self.backend,
                total_frames=self.video.total_frames,
                n=self.cfg.n_sample,
                fps=self.fps,
                force=force,
                templates=self.cfg.templates,
            )
        return decide(
            self.query, self.frontier, self.memory, self.backend, fps=self.fps, force=force, templates=self.cfg.templates
        )

    def _finish(self, answer: str, status: str = "answered") -> tuple[str, EpisodeTrace]:
        self.trace.final_answer = answer
        self.trace.status = status
        self.trace.total_unique_frames = len(self.seen)
        return answer, self.trace

    def _forced(self, round_index: int, rec: RoundRecord | None) -> tuple[str, EpisodeTrace]:
        if rec is None:
            rec = RoundRecord(round=round_index, selected=None, sampled=[], memory=self.memory.indices)
            self.trace.rounds.append(rec)
        rec.forced = True
        try:
            d = self._decide(force=True)
        except VCAError as exc:
            self.trace.total_unique_frames = len(self.seen)
            raise BudgetExhausted(f"forced final answer failed in round {round_index}: {exc}") from exc
        rec.decision = d.as_dict()
        if d.kind != ANSWER:
            self.trace.total_unique_frames = len(self.seen)
            self.trace.status = "budget_exhausted"
            raise BudgetExhausted(f"agent still asked to explore after being told to answer (round {round_index})")
        return self._finish(d.answer, "forced")

    def run(self) -> tuple[str, EpisodeTrace]:
        try:
            return self._loop()
        except VCAError as exc:
            exc.trace = self.trace
            raise

    def _loop(self) -> tuple[str, EpisodeTrace]:
        cfg = self.cfg
        selected = self.root
        positions = uniform_sample(self.root, cfg.n_sample)
        for round_index in range(1, cfg.max_rounds + 1):
            try:
                rec = self._observe(round_index, selected, positions)
                self.trace.rounds.append(rec)
                if not len(self.frontier):
                    return self._forced(round_index, rec)
                d = self._decide(force=False)
            except BudgetExhausted:
                raise
            except VCAError as exc:
                raise EpisodeError(round_index, exc) from exc
            rec.decision = d.as_dict()
            log.debug("round %d: %s", round_index, rec.decision)
            if d.kind == ANSWER:
                return self._finish(d.answer)
            if cfg.mode == NO_TREE:
                positions = list(d.indices)
                selected = self.root
            else:
                selected = self.frontier.get(d.segment_id).segment
                positions = uniform_sample(selected, cfg.n_sample)
        return self._forced(cfg.max_rounds + 1, None)


def run_episode(
    video: VideoHandle,
    query: str,
    cfg: EpisodeConfig,
    backend: Backend,
    reward_backend: Backend | None = None,
) -> tuple[str, EpisodeTrace]:
    """Answer ``query`` about ``video``; the ablation is picked by ``cfg.mode``."""
    return Episode(video, query, cfg, backend, reward_backend).run()


def run_episode_no_reward(video, query, cfg: EpisodeConfig, backend: Backend):
    return run_episode(video, query, _with_mode(cfg, NO_REWARD), backend)


def run_episode_no_tree(video, query, cfg: EpisodeConfig, backend: Backend, reward_backend: Backend | None = None):
    return run_episode(video, query, _with_mode(cfg, NO_TREE), backend, reward_backend)


def _with_mode(cfg: EpisodeConfig, mode: str) -> EpisodeConfig:
    params = {k: v for k, v in asdict(cfg).items() if k != "templates"}
    params["mode"] = mode
    return EpisodeConfig(**params, templates=cfg.templates)
