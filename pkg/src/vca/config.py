"""TOML run configuration with ``[backend]``, ``[episode]`` and ``[paths]`` sections."""

from __future__ import annotations

from dataclasses import dataclass, field, fields
from pathlib import Path
from typing import Any

from .backend import BackendConfig
from .errors import ConfigError
from .orchestrator import EpisodeConfig

try:
    import tomllib
except ModuleNotFoundError:  # Python < 3.11
    import tomli as tomllib


@dataclass
class PathsConfig:
    video_root: Path = Path(".")
    cache_dir: Path = Path(".vca-cache")
    # e.g. "ffmpeg -loglevel error -y -i {input} -vf select=eq(n\,{index}) -vframes 1 {output}"
    decoder_command: str | None = None
    frame_rate: float = 1.0
    templates: Path | None = None


@dataclass
class RunConfig:
    backend: BackendConfig = field(default_factory=BackendConfig)
    episode: EpisodeConfig = field(default_factory=EpisodeConfig)
    paths: PathsConfig = field(default_factory=PathsConfig)
    reward_backend: BackendConfig | None = None


def _build(cls, section: dict[str, Any], where: str):
    known = {f.name for f in fields(cls)}
    unknown = set(section) - known
    if unknown:
        raise ConfigError(f"[{where}] has unknown keys {sorted(unknown)}")
    try:
        return cls(**section)
    except (TypeError, ValueError) as exc:
        raise ConfigError(f"[{where}]: {exc}") from exc


def load_config(path: str | Path | None) -> RunConfig:
    if path is None:
        return RunConfig()
    path = Path(path)
    with open(path, "rb") as fh:
        doc = tomllib.load(fh)
    extra = set(doc) - {"backend", "episode", "paths", "reward_backend"}
    if extra:
        raise ConfigError(f"unknown config sections {sorted(extra)}")
    backend = _build(BackendConfig, doc.get("backend", {}), "backend")
    episode_doc = dict(doc.get("episode", {}))
    episode_doc.setdefault("temperature", backend.temperature)
    if "gt_interval" in episode_doc:
        episode_doc["gt_interval"] = tuple(episode_doc["gt_interval"])
    paths_doc = dict(doc.get("paths", {}))
    base = path.parent
    for key in ("video_root", "cache_dir", "templates"):
        if key in paths_doc:
            p = Path(paths_doc[key])
            paths_doc[key] = p if p.is_absolute() else base / p
    paths = _build(PathsConfig, paths_doc, "paths")
    if paths.templates is not None:
        from .prompts import Templates

        episode_doc["templates"] = Templates.load(paths.templates)
    episode = _build(EpisodeConfig, episode_doc, "episode")
    reward = doc.get("reward_backend")
    reward_backend = _build(BackendConfig, {**doc.get("backend", {}), **reward}, "reward_backend") if reward else None
    return RunConfig(backend, episode, paths, reward_backend)
