"""Command-line entry points: run scripted sessions, replay and score
recordings, generate synthetic cohorts, emit cohort reports, and serve."""

from __future__ import annotations

import argparse
import json
import os
import sys
from typing import List, Optional, Tuple

from . import analytics
from .analytics import ParticipantSeries
from .session import (
    SessionFormatError,
    load_session,
    read_summary,
    replay,
    save_session,
    verify_replay,
)
from .synth import GenerationError, profile_for, scaled_profile, synth_session
from .task_core import TaskConfig, default_task_config

MODES = ("teach", "metrics", "user", "none")

# Repetition labels with the coaching mode each plan assigns to them.  The
# study plan is baseline, the three coached repetitions in fixed order, and an
# uncoached final; the none plan is five uncoached repetitions.
PLANS = {
    "study": tuple(zip(analytics.REPETITION_LABELS, ("none", "teach", "metrics", "user", "none"))),
    "none": tuple((label, "none") for label in analytics.REPETITION_LABELS),
}


class CliError(Exception):
    pass


def _load_config(path: Optional[str]) -> TaskConfig:
    if path is None:
        return default_task_config()
    try:
        with open(path, "r", encoding="utf-8") as f:
            return TaskConfig.from_dict(json.load(f))
    except FileNotFoundError as e:
        raise CliError(f"config file not found: {path}") from e
    except (json.JSONDecodeError, KeyError, TypeError, ValueError) as e:
        raise CliError(f"invalid config {path}: {e}") from e


def _print_metrics(footer: dict, as_json: bool) -> None:
    if as_json:
        print(json.dumps(footer, sort_keys=True))
        return
    width = max(len(k) for k in footer)
    for key, value in footer.items():
        shown = "n/a" if value is None else (f"{value:.4f}" if isinstance(value, float) else value)
        print(f"{key:<{width}}  {shown}")


def cmd_run(args: argparse.Namespace) -> int:
    config = _load_config(args.config)
    profile = profile_for(args.profile, args.seed)
    record = synth_session(profile, config, args.mode, participant=args.participant)
    save_session(record, args.out)
    if args.json:
        print(json.dumps({"path": args.out, "ticks": len(record.ticks), "metrics": record.footer}))
    else:
        print(args.out)
    return 0


def cmd_replay(args: argparse.Namespace) -> int:
    record = load_session(args.session)
    result = replay(record)
    match = result.footer == record.footer
    if args.json:
        print(json.dumps({"match": match, "ticks": len(record.ticks)}))
    else:
        print(f"{'PASS' if match else 'FAIL'} {args.session} ({len(record.ticks)} ticks)")
    return 0 if match else 1


def cmd_score(args: argparse.Namespace) -> int:
    record = load_session(args.session)
    footer = verify_replay(record)
    _print_metrics(footer, args.json)
    return 0


def cmd_synth(args: argparse.Namespace) -> int:
    config = _load_config(args.config)
    os.makedirs(args.out, exist_ok=True)
    prefix = "E" if args.arm == "experimental" else "C"
    written: List[str] = []
    for i in range(args.n):
        participant = f"{prefix}{i + 1:02d}"
        base = profile_for(args.profile, args.seed + i)
        if args.plan is None:
            reps: Tuple[Tuple[str, str], ...] = (("baseline", args.mode),)
        else:
            reps = PLANS[args.plan]
        for rep_index, (label, mode) in enumerate(reps):
            profile = scaled_profile(base, rep_index, args.arm)
            # One rng stream per repetition, disjoint across participants.
            profile = profile.reseeded((args.seed + i) * 16 + rep_index)
            record = synth_session(profile, config, mode, participant=participant)
            path = os.path.join(args.out, f"{participant}__{label}.vcs")
            save_session(record, path)
            written.append(path)
    if args.json:
        print(json.dumps({"written": written}))
    else:
        for path in written:
            print(path)
    return 0


def _load_cohort(directory: str, arm: str) -> List[ParticipantSeries]:
    if not os.path.isdir(directory):
        raise CliError(f"not a directory: {directory}")
    series: dict[str, ParticipantSeries] = {}
    names = sorted(n for n in os.listdir(directory) if n.endswith(".vcs"))
    if not names:
        raise CliError(f"no .vcs sessions in {directory}")
    for name in names:
        stem = name[: -len(".vcs")]
        participant, sep, label = stem.partition("__")
        if not sep:
            label = "baseline"
        header, footer = read_summary(os.path.join(directory, name))
        recorded = str(header.get("participant", participant))
        entry = series.setdefault(recorded, ParticipantSeries(recorded, arm))
        entry.add(label, footer)
    return list(series.values())


def cmd_report(args: argparse.Namespace) -> int:
    cohort = _load_cohort(args.arm_a, analytics.ARM_EXPERIMENTAL)
    cohort += _load_cohort(args.arm_b, analytics.ARM_CONTROL)
    report = analytics.cohort_report(cohort, label=args.label)
    if args.grid:
        with open(args.grid, "w", encoding="utf-8", newline="\n") as f:
            f.write(analytics.grid_csv(report))
    body = (
        json.dumps(analytics.report_dict(report), sort_keys=True)
        if args.json
        else analytics.report_table(report)
    )
    if args.out:
        with open(args.out, "w", encoding="utf-8", newline="\n") as f:
            f.write(body if body.endswith("\n") else body + "\n")
    else:
        print(body)
    return 0


def cmd_serve(args: argparse.Namespace) -> int:
    # Deferred so every other subcommand works without the server stack.
    import uvicorn

    from .service import build_app

    config = _load_config(args.config)
    app = build_app(config, data_dir=args.data_dir, clip_dir=args.clips, token=args.token)
    uvicorn.run(app, host=args.host, port=args.port, log_level="warning")
    return 0


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="vcoach", description=__doc__)
    sub = parser.add_subparsers(dest="command", required=True)

    def add_common(p: argparse.ArgumentParser) -> None:
        p.add_argument("--config", help="task config JSON (defaults to the built-in task)")
        p.add_argument("--json", action="store_true", help="machine-readable output")

    p_run = sub.add_parser("run", help="run one scripted session and record it")
    add_common(p_run)
    p_run.add_argument("--profile", choices=("expert", "novice"), default="expert")
    p_run.add_argument("--seed", type=int, default=1)
    p_run.add_argument("--mode", choices=MODES, default="none")
    p_run.add_argument("--participant", default=None)
    p_run.add_argument("--out", required=True, help="session file to write")
    p_run.set_defaults(func=cmd_run)

    p_replay = sub.add_parser("replay", help="re-run a recording and verify its footer")
    add_common(p_replay)
    p_replay.add_argument("session", help="session .vcs file")
    p_replay.set_defaults(func=cmd_replay)

    p_score = sub.add_parser("score", help="recompute and print a recording's metrics")
    add_common(p_score)
    p_score.add_argument("session", help="session .vcs file")
    p_score.set_defaults(func=cmd_score)

    p_synth = sub.add_parser("synth", help="generate a synthetic cohort")
    add_common(p_synth)
    p_synth.add_argument("--profile", choices=("expert", "novice"), default="novice")
    p_synth.add_argument("--n", type=int, default=1, help="number of participants")
    p_synth.add_argument("--seed", type=int, default=1, help="participant i uses seed+i")
    p_synth.add_argument("--arm", choices=("control", "experimental"), default="control")
    p_synth.add_argument("--plan", choices=tuple(PLANS), default=None,
                         help="five-repetition plan; omit for a single session")
    p_synth.add_argument("--mode", choices=MODES, default="none",
                         help="coaching mode when no plan is given")
    p_synth.add_argument("--out", required=True, help="output directory")
    p_synth.set_defaults(func=cmd_synth)

    p_report = sub.add_parser("report", help="two-arm cohort comparison tables")
    add_common(p_report)
    p_report.add_argument("--arm-a", required=True, help="experimental-arm session directory")
    p_report.add_argument("--arm-b", required=True, help="control-arm session directory")
    p_report.add_argument("--label", default="final", help="repetition compared against baseline")
    p_report.add_argument("--out", default=None, help="write the table here instead of stdout")
    p_report.add_argument("--grid", default=None, help="write the per-repetition effect grid CSV")
    p_report.set_defaults(func=cmd_report)

    p_serve = sub.add_parser("serve", help="websocket/HTTP session service")
    add_common(p_serve)
    p_serve.add_argument("--host", default="127.0.0.1")
    p_serve.add_argument("--port", type=int, default=8741)
    p_serve.add_argument("--data-dir", default="sessions", help="session store directory")
    p_serve.add_argument("--clips", default=None, help="expert clip store directory")
    p_serve.add_argument("--token", default=None, help="require this bearer token")
    p_serve.set_defaults(func=cmd_serve)

    return parser


def main(argv: Optional[List[str]] = None) -> int:
    args = build_parser().parse_args(argv)
    try:
        return args.func(args)
    except (CliError, SessionFormatError, GenerationError, analytics.AnalyticsError) as e:
        print(f"vcoach: {e}", file=sys.stderr)
        return 1
    except FileNotFoundError as e:
        print(f"vcoach: {e}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
