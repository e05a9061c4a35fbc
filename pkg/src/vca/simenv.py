"""Synthetic videos with planted key intervals and the oracle that plays them.

The oracle stands in for both the reward model and the agent. It reads only
what the rendered prompt exposes (segment intervals, scores, frame labels in
memory), so every ablation changes its behaviour through the prompt alone.
"""

from __future__ import annotations

import random
from dataclasses import dataclass, field, replace
from pathlib import Path
from typing import Any, Iterable, Sequence

from .errors import VCAError
from .frames import VideoHandle, synthetic_video
from .orchestrator import GT_REWARD, EpisodeConfig, run_episode
from .reward import RewardVerdict, render_verdict
from .scripted import (
    EXPLORE,
    REWARD_FOLLOWUP,
    REWARD_ROUND_1,
    SELECT_FRAMES,
    Candidate,
    Request,
    Rule,
    ScriptedBackend,
)

try:
    import tomllib
except ModuleNotFoundError:  # Python < 3.11
    import tomli as tomllib

OPTIONS = ("A", "B", "C", "D")
LOW_SCORE = 10
DISTRACTOR_SCORE = 60
KEY_SPAN = 85
# scores at or above this are worth following
PROMISING = 50


@dataclass(frozen=True)
class SyntheticSpec:
    total_frames: int = 1000
    # explicit key intervals; when empty, ``n_keys`` intervals of ``key_width``
    # frames are placed at random from ``seed``
    key_intervals: tuple[tuple[int, int], ...] = ()
    key_width: int = 5
    n_keys: int = 1
    distractor_density: float = 0.0
    reward_noise: float = 0.0
    cue_radius: int = 40
    seed: int = 0
    frame_rate: float = 1.0

    def __post_init__(self) -> None:
        object.__setattr__(self, "key_intervals", tuple(tuple(k) for k in self.key_intervals))
        if self.total_frames < 2:
            raise ValueError("total_frames must be >= 2")
        for a, b in self.key_intervals:
            if not 0 <= a < b <= self.total_frames:
                raise ValueError(f"key interval [{a}, {b}) outside [0, {self.total_frames})")
        for name in ("distractor_density", "reward_noise"):
            v = getattr(self, name)
            if not 0.0 <= v <= 1.0:
                raise ValueError(f"{name} must be in [0, 1], got {v}")
        if not self.key_intervals and not 1 <= self.key_width * self.n_keys <= self.total_frames:
            raise ValueError("key_width * n_keys must fit in the video")

    def with_seed(self, seed: int) -> "SyntheticSpec":
        return replace(self, seed=seed)


def place_keys(spec: SyntheticSpec) -> list[tuple[int, int]]:
    if spec.key_intervals:
        return sorted(spec.key_intervals)
    rng = random.Random(f"keys|{spec.seed}")
    keys: list[tuple[int, int]] = []
    while len(keys) < spec.n_keys:
        a = rng.randrange(0, spec.total_frames - spec.key_width + 1)
        cand = (a, a + spec.key_width)
        if all(cand[1] <= k[0] or k[1] <= cand[0] for k in keys):
            keys.append(cand)
    return sorted(keys)


def _frame_index(label: str | None) -> int | None:
    if not label or not label.startswith("frame-"):
        return None
    return int(label.split()[0][6:])


class SimOracle:
    """Reward model and agent for one synthetic environment."""

    def __init__(self, spec: SyntheticSpec, keys: Sequence[tuple[int, int]], answer: str) -> None:
        self.spec = spec
        self.keys = list(keys)
        self.answer = answer

    def _rng(self, *parts: Any) -> random.Random:
        return random.Random("|".join(str(p) for p in (self.spec.seed, *parts)))

    # -- reward model ---------------------------------------------------------

    def true_score(self, start: int, end: int) -> int:
        best = 0.0
        for a, b in self.keys:
            ov = max(0, min(end, b) - max(start, a))
            best = max(best, ov / (b - a))
        if best > 0:
            return LOW_SCORE + int(KEY_SPAN * best + 0.5)
        if self.spec.distractor_density and self._rng("distractor", start, end).random() < self.spec.distractor_density:
            return DISTRACTOR_SCORE
        return LOW_SCORE

    def verdict(self, cands: Sequence[Candidate]) -> RewardVerdict:
        scores = [self.true_score(c.start, c.end) for c in cands]
        sig = ",".join(f"{c.start}-{c.end}" for c in cands)
        rng = self._rng("noise", sig)
        if len(scores) > 1 and rng.random() < self.spec.reward_noise:
            top = max(range(len(scores)), key=lambda i: (scores[i], -i))
            other = rng.choice([i for i in range(len(scores)) if i != top])
            scores[top], scores[other] = scores[other], scores[top]
        texts = [
            f"frames {c.start}-{c.end} "
            + ("likely show the moment the question asks about" if s >= 50 else "look unrelated to the question")
            for c, s in zip(cands, scores)
        ]
        return RewardVerdict.from_lists(texts, scores)

    def reward_reply(self, req: Request) -> str:
        return render_verdict(self.verdict(req.candidates))

    # -- agent ----------------------------------------------------------------

    def memory_indices(self, req: Request, tag: str) -> list[int]:
        out = []
        for _, lab in req.frames:
            idx = _frame_index(lab)
            if idx is not None and tag in lab.split():
                out.append(idx)
        return out

    def can_answer(self, req: Request) -> bool:
        key_frames = self.memory_indices(req, "KEY")
        return all(any(a <= i < b for i in key_frames) for a, b in self.keys)

    def guess(self, req: Request) -> str:
        seen = ",".join(str(i) for i, _ in req.frames)
        return self._rng("guess", seen).choice(OPTIONS)

    def _cue_frames(self, req: Request) -> set[int]:
        return set(self.memory_indices(req, "NEAR")) | set(self.memory_indices(req, "KEY"))

    def choose_segment(self, req: Request) -> Candidate:
        """Follow a promising reward score if there is one, else look for visual cues.

        Without a usable score the agent prefers segments whose boundary frames
        show the key scene (both ends beat one end), widest first, picking at
        random among equals.
        """
        cands = req.candidates
        cues = self._cue_frames(req)

        def cue_count(c: Candidate) -> int:
            return (c.start in cues) + (c.end in cues)

        promising = [c for c in cands if c.score is not None and c.score >= PROMISING]
        if promising:
            top = max(c.score for c in promising)
            pool = [c for c in promising if c.score == top]
            return max(pool, key=lambda c: (cue_count(c), -(c.end - c.start), c.id))
        rng = self._rng("look", ",".join(str(c.id) for c in cands), ",".join(map(str, sorted(cues))))
        if any(cue_count(c) for c in cands):
            best = max((cue_count(c), c.end - c.start) for c in cands)
            pool = [c for c in cands if (cue_count(c), c.end - c.start) == best]
        else:
            widest = max(c.end - c.start for c in cands)
            pool = [c for c in cands if c.end - c.start == widest]
        return rng.choice(pool)

    def explore_reply(self, req: Request) -> str:
        if self.can_answer(req):
            return f"The key moment is visible in memory. ANSWER: {self.answer}"
        if req.forced or not req.candidates:
            return f"ANSWER: {self.guess(req)}"
        return f"EXPLORE: {self.choose_segment(req).id}"

    def select_reply(self, req: Request) -> str:
        if self.can_answer(req):
            return f"ANSWER: {self.answer}"
        if req.forced:
            return f"ANSWER: {self.guess(req)}"
        total = req.total_frames or self.spec.total_frames
        n = req.n_request or 4
        seen = {i for i, _ in req.frames}
        cues = sorted(self._cue_frames(req))
        rng = self._rng("select", ",".join(map(str, sorted(seen))))
        if cues:
            anchor = cues[-1]
            r = self.spec.cue_radius
            lo, hi = max(0, anchor - r), min(total, anchor + r + 1)
        else:
            lo, hi = 0, total
        pool = [i for i in range(lo, hi) if i not in seen] or [i for i in range(total) if i not in seen]
        picks = sorted(rng.sample(pool, min(n, len(pool))))
        return "FRAMES: " + ", ".join(map(str, picks))

    def backend(self) -> ScriptedBackend:
        return ScriptedBackend(
            [
                Rule(self.reward_reply, kind=REWARD_ROUND_1),
                Rule(self.reward_reply, kind=REWARD_FOLLOWUP),
                Rule(self.explore_reply, kind=EXPLORE),
                Rule(self.select_reply, kind=SELECT_FRAMES),
            ]
        )


def make_query(spec: SyntheticSpec) -> str:
    lines = ["What is shown at the moment marked KEY in the video?"]
    lines += [f"({o}) event {o.lower()}" for o in OPTIONS]
    lines.append("Answer with the letter of the correct option.")
    return "\n".join(lines)


@dataclass
class SimEnv:
    spec: SyntheticSpec
    video: VideoHandle
    oracle: ScriptedBackend
    gt_interval: tuple[float, float]
    key_intervals: list[tuple[int, int]]
    query: str
    answer: str

    def __iter__(self):
        return iter((self.video, self.oracle, self.gt_interval))


def make_env(spec: SyntheticSpec, answer: str | None = None) -> SimEnv:
    """Build the video, its oracle backend and the ground-truth span for ``spec``."""
    keys = place_keys(spec)
    if answer is None:
        answer = random.Random(f"answer|{spec.seed}").choice(OPTIONS)
    video = synthetic_video(
        spec.total_frames, keys, spec.cue_radius, frame_rate=spec.frame_rate, video_id=f"sim-{spec.seed}"
    )
    # ground truth spans from the first key start to the last key end
    gt = (keys[0][0] / spec.frame_rate, keys[-1][1] / spec.frame_rate)
    oracle = SimOracle(spec, keys, answer)
    return SimEnv(spec, video, oracle.backend(), gt, keys, make_query(spec), answer)


def extract_option(answer: str | None, options: Sequence[str] = OPTIONS) -> str | None:
    from .harness import normalize_answer

    return normalize_answer(answer or "", list(options))


@dataclass
class TrialResult:
    seed: int
    correct: bool
    rounds: int
    unique_frames: int
    error: str | None = None
    trace: Any = field(default=None, repr=False)
    env: SimEnv | None = field(default=None, repr=False)


def run_trial(spec: SyntheticSpec, cfg: EpisodeConfig, keep_trace: bool = False) -> TrialResult:
    env = make_env(spec)
    if cfg.mode == GT_REWARD:
        cfg = replace(cfg, gt_interval=env.gt_interval)
    try:
        answer, trace = run_episode(env.video, env.query, cfg, env.oracle)
    except VCAError as exc:
        trace = getattr(exc, "trace", None)
        return TrialResult(
            spec.seed,
            False,
            len(trace.rounds) if trace else 0,
            trace.total_unique_frames if trace else 0,
            error=f"{type(exc).__name__}: {exc}",
            trace=trace if keep_trace else None,
            env=env if keep_trace else None,
        )
    correct = extract_option(answer) == env.answer
    return TrialResult(
        spec.seed,
        correct,
        len(trace.rounds),
        trace.total_unique_frames,
        trace=trace if keep_trace else None,
        env=env if keep_trace else None,
    )


@dataclass
class SweepCell:
    spec_index: int
    spec: SyntheticSpec
    cfg: EpisodeConfig
    trials: list[TrialResult]

    @property
    def n(self) -> int:
        return len(self.trials)

    @property
    def correct(self) -> int:
        return sum(t.correct for t in self.trials)

    @property
    def accuracy(self) -> float:
        return self.correct / self.n if self.n else 0.0

    @property
    def mean_rounds(self) -> float:
        return sum(t.rounds for t in self.trials) / self.n if self.n else 0.0

    @property
    def mean_unique_frames(self) -> float:
        return sum(t.unique_frames for t in self.trials) / self.n if self.n else 0.0

    @property
    def errors(self) -> int:
        return sum(t.error is not None for t in self.trials)

    def row(self) -> dict:
        s, c = self.spec, self.cfg
        return {
            "spec": self.spec_index,
            "total_frames": s.total_frames,
            "reward_noise": s.reward_noise,
            "distractor_density": s.distractor_density,
            "n_keys": len(s.key_intervals) or s.n_keys,
            "mode": c.mode,
            "n_sample": c.n_sample,
            "buffer_capacity": c.buffer_capacity,
            "max_rounds": c.max_rounds,
            "trials": self.n,
            "accuracy": round(self.accuracy, 4),
            "mean_rounds": round(self.mean_rounds, 3),
            "mean_unique_frames": round(self.mean_unique_frames, 3),
            "errors": self.errors,
            "seeds": f"{self.trials[0].seed}..{self.trials[-1].seed}" if self.trials else "",
        }


def sweep(
    specs: Sequence[SyntheticSpec],
    cfgs: Sequence[EpisodeConfig],
    trials: int,
    keep_traces: bool = False,
) -> list[SweepCell]:
    """Every spec crossed with every config, ``trials`` seeds each.

    Trial ``t`` of a spec uses seed ``spec.seed + t``, so cells that share a
    spec see exactly the same environments.
    """
    if not specs or not cfgs:
        raise ValueError("spec and config grids must be non-empty")
    if trials < 1:
        raise ValueError("trials must be >= 1")
    cells = []
    for si, spec in enumerate(specs):
        for cfg in cfgs:
            results = [run_trial(spec.with_seed(spec.seed + t), cfg, keep_traces) for t in range(trials)]
            cells.append(SweepCell(si, spec, cfg, results))
    return cells


ROW_FIELDS = (
    "spec", "total_frames", "reward_noise", "distractor_density", "n_keys", "mode", "n_sample",
    "buffer_capacity", "max_rounds", "trials", "accuracy", "mean_rounds", "mean_unique_frames",
    "errors", "seeds",
)


def load_specs(path: str | Path) -> list[SyntheticSpec]:
    """Read ``[[spec]]`` tables (or a single ``[spec]``) from a TOML file."""
    with open(path, "rb") as fh:
        doc = tomllib.load(fh)
    raw = doc.get("spec", [])
    if isinstance(raw, dict):
        raw = [raw]
    return [spec_from_dict(d) for d in raw]


def spec_from_dict(d: dict) -> SyntheticSpec:
    d = dict(d)
    if "key_intervals" in d:
        d["key_intervals"] = tuple(tuple(k) for k in d["key_intervals"])
    return SyntheticSpec(**d)


def spec_grid(base: SyntheticSpec, **axes: Iterable[Any]) -> list[SyntheticSpec]:
    specs = [base]
    for name, values in axes.items():
        specs = [replace(s, **{name: v}) for s in specs for v in values]
    return specs
