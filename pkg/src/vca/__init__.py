"""Long-video question answering by reward-guided search over a tree of frame intervals."""

from .backend import BackendConfig, RemoteBackend
from .core import CandidateSet, EpisodeTrace, FrameRecord, RewardedSegment, Segment, replace_in_frontier, split_segment
from .frames import VideoHandle, fetch_frames, open_image_dir, uniform_sample
from .memory import MemoryBuffer, update_memory
from .orchestrator import EpisodeConfig, gt_reward_scores, run_episode, run_episode_no_reward, run_episode_no_tree

__version__ = "0.1.0"

__all__ = [
    "BackendConfig",
    "CandidateSet",
    "EpisodeConfig",
    "EpisodeTrace",
    "FrameRecord",
    "MemoryBuffer",
    "RemoteBackend",
    "RewardedSegment",
    "Segment",
    "VideoHandle",
    "fetch_frames",
    "gt_reward_scores",
    "open_image_dir",
    "replace_in_frontier",
    "run_episode",
    "run_episode_no_reward",
    "run_episode_no_tree",
    "split_segment",
    "uniform_sample",
    "update_memory",
]
