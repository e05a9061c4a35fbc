"""Command-line entry point: ``vca run | simulate | analyze-distance | replay``."""

from __future__ import annotations

import argparse
import csv
import json
import logging
import random
import sys
from dataclasses import replace
from pathlib import Path

from .backend import RemoteBackend
from .config import RunConfig, load_config
from .errors import VCAError
from .orchestrator import MODES
from .trace import dumps, read_trace

log = logging.getLogger("vca")


def _common(suppress: bool = False) -> argparse.ArgumentParser:
    # subcommands repeat the global flags; SUPPRESS keeps them from clobbering
    # values given before the subcommand name
    d = (lambda v: argparse.SUPPRESS) if suppress else (lambda v: v)
    p = argparse.ArgumentParser(add_help=False)
    p.add_argument("--config", type=Path, default=d(None), help="TOML file with [backend], [episode], [paths]")
    p.add_argument("--backend", default=d(None), help="remote | scripted:<script.toml> | sim (default: remote)")
    p.add_argument("--mode", choices=MODES, default=d(None), help="override [episode] mode")
    p.add_argument("--seed", type=int, default=d(None))
    p.add_argument("--out", type=Path, default=d(None), help="output directory or file")
    p.add_argument("-v", "--verbose", action="store_true", default=d(False))
    return p


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="vca", description=__doc__, parents=[_common()])
    common = _common(suppress=True)
    sub = parser.add_subparsers(dest="command", required=True)

    run = sub.add_parser("run", parents=[common], help="answer every record of a dataset")
    run.add_argument("dataset", type=Path, help="line-delimited JSON records")
    run.add_argument("--workers", type=int, default=None)

    sim = sub.add_parser("simulate", parents=[common], help="sweep synthetic environments")
    sim.add_argument("spec", type=Path, help="TOML file with [[spec]] tables")
    sim.add_argument("--trials", type=int, default=100)
    sim.add_argument("--modes", default=None, help="comma list, e.g. full,no_reward,no_tree")
    sim.add_argument("--capacities", default=None, help="comma list of buffer sizes")

    dist = sub.add_parser("analyze-distance", parents=[common], help="segment distance of agent vs greedy choices")
    dist.add_argument("traces", type=Path, help="directory of trace files")
    dist.add_argument("dataset", type=Path, help="dataset with gt_interval")

    rep = sub.add_parser("replay", parents=[common], help="print a trace round by round")
    rep.add_argument("trace", type=Path)
    return parser


def _config(args) -> RunConfig:
    cfg = load_config(args.config)
    if args.mode:
        cfg.episode = replace(cfg.episode, mode=args.mode)
    return cfg


def _backend_factory(spec: str | None, cfg: RunConfig, seed: int | None):
    spec = spec or "remote"
    if spec == "remote":
        remote = RemoteBackend(cfg.backend, rng=random.Random(seed))
        return lambda record, video: remote
    if spec.startswith("scripted:"):
        from .scripted import load_script

        scripted = load_script(spec.split(":", 1)[1])
        return lambda record, video: scripted
    if spec == "sim":
        from .simenv import load_specs, make_env

        def sim_backend(record, video):
            specs = load_specs(Path(cfg.paths.video_root) / f"{record.video_id}.toml")
            return make_env(specs[0], answer=record.answer_key).oracle

        return sim_backend
    raise SystemExit(f"unknown backend {spec!r}; expected remote, scripted:<path> or sim")


def cmd_run(args) -> int:
    from .harness import cmd_run as run_dataset, load_dataset

    cfg = _config(args)
    records = load_dataset(args.dataset)
    out = args.out or Path("vca-out")
    reward = None
    if cfg.reward_backend is not None and (args.backend or "remote") == "remote":
        reward = RemoteBackend(cfg.reward_backend, rng=random.Random(args.seed))
    summary = run_dataset(records, cfg, _backend_factory(args.backend, cfg, args.seed), out, args.workers, reward)
    print(json.dumps(summary, indent=2, sort_keys=True))
    return 0


def cmd_simulate(args) -> int:
    from .simenv import ROW_FIELDS, load_specs, sweep

    cfg = _config(args)
    specs = load_specs(args.spec)
    if not specs:
        raise SystemExit(f"{args.spec} defines no [[spec]] tables")
    if args.seed is not None:
        specs = [s.with_seed(args.seed) for s in specs]
    modes = args.modes.split(",") if args.modes else [cfg.episode.mode]
    caps = [int(c) for c in args.capacities.split(",")] if args.capacities else [cfg.episode.buffer_capacity]
    cfgs = [replace(cfg.episode, mode=m, buffer_capacity=c) for m in modes for c in caps]
    cells = sweep(specs, cfgs, args.trials)
    rows = [c.row() for c in cells]
    writer = csv.DictWriter(sys.stdout, fieldnames=ROW_FIELDS, delimiter="\t", lineterminator="\n")
    writer.writeheader()
    writer.writerows(rows)
    if args.out:
        args.out.mkdir(parents=True, exist_ok=True)
        with open(args.out / "sweep.tsv", "w", newline="") as fh:
            w = csv.DictWriter(fh, fieldnames=ROW_FIELDS, delimiter="\t", lineterminator="\n")
            w.writeheader()
            w.writerows(rows)
        (args.out / "sweep.jsonl").write_text("".join(dumps(r) + "\n" for r in rows))
    return 0


def cmd_analyze_distance(args) -> int:
    from .harness import cmd_analyze_distance as analyze, load_dataset

    report = analyze(args.traces, load_dataset(args.dataset))
    text = json.dumps(report, indent=2, sort_keys=True)
    if args.out:
        args.out.write_text(text + "\n")
    print(text)
    return 0


def cmd_replay(args) -> int:
    rounds, summary = read_trace(args.trace)
    for r in rounds:
        sel = r.get("selected")
        where = f"[{sel['start']}, {sel['end']})" if sel else "-"
        scores = r.get("scores")
        decision = r.get("decision") or {}
        what = decision.get("answer", decision.get("segment_id", decision.get("indices")))
        tag = " (forced)" if r.get("forced") else ""
        print(
            f"round {r['round']:>2}{tag}: segment {where} sampled {r['sampled']} "
            f"scores {scores if scores is not None else '-'} evicted {r['evicted']} "
            f"-> {decision.get('kind', '?')} {what}"
        )
    if summary is None:
        print("(trace has no summary record; the episode did not finish)")
        return 1
    seen = {i for r in rounds for i in r["sampled"]}
    print(
        f"answer {summary['answer']!r} after {summary['rounds']} rounds, "
        f"{summary['total_unique_frames']} unique frames ({summary['status']})"
    )
    if len(seen) != summary["total_unique_frames"]:
        print(f"warning: rounds sample {len(seen)} unique frames but summary says {summary['total_unique_frames']}")
        return 1
    return 0


COMMANDS = {
    "run": cmd_run,
    "simulate": cmd_simulate,
    "analyze-distance": cmd_analyze_distance,
    "replay": cmd_replay,
}


def main(argv: list[str] | None = None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.DEBUG if args.verbose else logging.WARNING, format="%(levelname)s %(name)s: %(message)s")
    try:
        return COMMANDS[args.command](args)
    except (VCAError, OSError, ValueError) as exc:
        # bad inputs (missing files, malformed datasets, traces or specs) end the
        # command with a message rather than a traceback
        print(f"error: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
