"""Session recording, persistence, deterministic replay, and the expert clip
store.

A session file (`*.vcs`) is line-delimited UTF-8: one structured object per
line.  The first line is the header, the last is the footer, and between them
tick records interleave with the events they produced, in append order.
Floats serialize as shortest round-trip decimals, so parse -> serialize is
byte-identical and a replayed session reproduces its footer bit for bit.

Header keys: version, config, mode, participant, handedness, seed.
Tick keys:   t, L, R, master, needle, cues.
Event keys:  t, kind, payload.
"""

from __future__ import annotations

import json
import os
from dataclasses import dataclass, field
from typing import Iterator, NamedTuple, Optional

from .geometry import Pose, Vec3
from .task_core import InputTick, SimEvent, TaskConfig
from .tpm import TpmEvent

FORMAT_VERSION = 1

# TpmEvent kinds share the event line format with SimEvent kinds; the names
# are disjoint, which is how a reader tells them apart.
TPM_EVENT_KINDS = frozenset(
    ["StateChanged", "Retraction", "Deviation", "SegmentComplete", "TaskComplete"]
)


class SessionFormatError(ValueError):
    """Raised on malformed, truncated, or version-incompatible session files."""


class TickRecord(NamedTuple):
    tick: int
    l_pose: Pose
    l_jaw: float
    r_pose: Pose
    r_jaw: float
    l_master: Vec3
    r_master: Vec3
    needle_pose: Pose
    cues: tuple[str, ...]

    def to_dict(self) -> dict:
        return {
            "t": self.tick,
            "L": {"p": self.l_pose.position.to_list(), "q": self.l_pose.orientation.to_list(), "jaw": self.l_jaw},
            "R": {"p": self.r_pose.position.to_list(), "q": self.r_pose.orientation.to_list(), "jaw": self.r_jaw},
            "master": {"L": self.l_master.to_list(), "R": self.r_master.to_list()},
            "needle": self.needle_pose.to_dict(),
            "cues": list(self.cues),
        }

    @staticmethod
    def from_dict(d: dict) -> "TickRecord":
        return TickRecord(
            tick=int(d["t"]),
            l_pose=Pose.from_dict(d["L"]),
            l_jaw=float(d["L"]["jaw"]),
            r_pose=Pose.from_dict(d["R"]),
            r_jaw=float(d["R"]["jaw"]),
            l_master=Vec3.from_list(d["master"]["L"]),
            r_master=Vec3.from_list(d["master"]["R"]),
            needle_pose=Pose.from_dict(d["needle"]),
            cues=tuple(d["cues"]),
        )

    def to_input(self) -> InputTick:
        return InputTick(
            tick=self.tick,
            l_pose=self.l_pose,
            r_pose=self.r_pose,
            l_jaw=self.l_jaw,
            r_jaw=self.r_jaw,
            l_master=self.l_master,
            r_master=self.r_master,
        )


class EventRecord(NamedTuple):
    tick: int
    kind: str
    payload: dict

    def to_dict(self) -> dict:
        return {"t": self.tick, "kind": self.kind, "payload": self.payload}


@dataclass
class SessionRecord:
    config: TaskConfig
    mode: str
    participant: str
    handedness: str
    seed: int
    ticks: list[TickRecord] = field(default_factory=list)
    events: list[EventRecord] = field(default_factory=list)
    # Append order of (record-kind, index) pairs, preserving interleaving.
    order: list[tuple[str, int]] = field(default_factory=list)
    footer: Optional[dict] = None

    def header_dict(self) -> dict:
        return {
            "version": FORMAT_VERSION,
            "config": self.config.to_dict(),
            "mode": self.mode,
            "participant": self.participant,
            "handedness": self.handedness,
            "seed": self.seed,
        }

    def last_tick(self) -> int:
        return self.ticks[-1].tick if self.ticks else -1

    def append_tick(self, record: TickRecord) -> None:
        if record.tick <= self.last_tick():
            raise SessionFormatError(
                f"tick {record.tick} does not advance past {self.last_tick()}"
            )
        self.order.append(("tick", len(self.ticks)))
        self.ticks.append(record)

    def append_event(self, event: EventRecord) -> None:
        if event.tick < self.last_tick():
            raise SessionFormatError(
                f"event at tick {event.tick} precedes tick record {self.last_tick()}"
            )
        self.order.append(("event", len(self.events)))
        self.events.append(event)

    def append_sim_event(self, event: SimEvent) -> None:
        self.append_event(EventRecord(event.tick, event.kind, event.payload))

    def append_tpm_event(self, event: TpmEvent) -> None:
        self.append_event(EventRecord(event.tick, event.kind, event.payload))

    def sim_events(self) -> list[SimEvent]:
        return [
            SimEvent(e.kind, e.tick, e.payload)
            for e in self.events
            if e.kind not in TPM_EVENT_KINDS
        ]

    def lines(self) -> Iterator[str]:
        yield _dumps(self.header_dict())
        for kind, idx in self.order:
            record = self.ticks[idx] if kind == "tick" else self.events[idx]
            yield _dumps(record.to_dict())
        if self.footer is not None:
            yield _dumps({"footer": self.footer})

    def dumps(self) -> str:
        return "\n".join(self.lines()) + "\n"


def _dumps(obj: dict) -> str:
    return json.dumps(obj, sort_keys=True, separators=(",", ":"), allow_nan=False)


def save_session(record: SessionRecord, path: str) -> None:
    if record.footer is None:
        raise SessionFormatError("refusing to save a session without a footer")
    tmp = path + ".tmp"
    with open(tmp, "w", encoding="utf-8", newline="\n") as f:
        for line in record.lines():
            f.write(line)
            f.write("\n")
    os.replace(tmp, path)


def load_session(path: str) -> SessionRecord:
    with open(path, "r", encoding="utf-8") as f:
        lines = f.read().splitlines()
    return parse_session(lines)


def parse_session(lines: list[str]) -> SessionRecord:
    if not lines:
        raise SessionFormatError("empty session file")
    try:
        header = json.loads(lines[0])
    except json.JSONDecodeError as e:
        raise SessionFormatError(f"malformed header line: {e}") from e
    if header.get("version") != FORMAT_VERSION:
        raise SessionFormatError(
            f"unsupported session format version {header.get('version')!r}"
        )
    try:
        record = SessionRecord(
            config=TaskConfig.from_dict(header["config"]),
            mode=str(header["mode"]),
            participant=str(header["participant"]),
            handedness=str(header["handedness"]),
            seed=int(header["seed"]),
        )
    except (KeyError, TypeError, ValueError) as e:
        raise SessionFormatError(f"invalid header: {e}") from e

    footer_seen = False
    for lineno, line in enumerate(lines[1:], start=2):
        if not line:
            continue
        if footer_seen:
            raise SessionFormatError(f"line {lineno}: content after footer")
        try:
            obj = json.loads(line)
        except json.JSONDecodeError as e:
            raise SessionFormatError(f"line {lineno}: malformed record: {e}") from e
        try:
            if "footer" in obj:
                record.footer = obj["footer"]
                footer_seen = True
            elif "kind" in obj:
                record.append_event(EventRecord(int(obj["t"]), str(obj["kind"]), obj["payload"]))
            elif "L" in obj:
                record.append_tick(TickRecord.from_dict(obj))
            else:
                raise SessionFormatError(f"line {lineno}: unrecognized record shape")
        except (KeyError, TypeError, ValueError) as e:
            if isinstance(e, SessionFormatError):
                raise
            raise SessionFormatError(f"line {lineno}: invalid record: {e}") from e
    if not footer_seen:
        raise SessionFormatError("truncated session: footer line missing")
    return record


def read_summary(path: str) -> tuple[dict, dict]:
    """Header and footer of a session file without parsing the tick stream.

    Reporting over large cohorts only needs the identity and the metrics
    record, so skipping the body keeps it linear in file count, not ticks.
    """
    with open(path, "r", encoding="utf-8") as f:
        text = f.read()
    first_end = text.find("\n")
    if first_end < 0:
        raise SessionFormatError(f"{path}: empty session file")
    try:
        header = json.loads(text[:first_end])
    except json.JSONDecodeError as e:
        raise SessionFormatError(f"{path}: malformed header line: {e}") from e
    if header.get("version") != FORMAT_VERSION:
        raise SessionFormatError(
            f"{path}: unsupported session format version {header.get('version')!r}"
        )
    last = text.rstrip("\n")
    last_line = last[last.rfind("\n") + 1 :]
    try:
        tail = json.loads(last_line)
    except json.JSONDecodeError as e:
        raise SessionFormatError(f"{path}: malformed footer line: {e}") from e
    if not isinstance(tail, dict) or "footer" not in tail:
        raise SessionFormatError(f"{path}: truncated session: footer line missing")
    return header, tail["footer"]


def replay(record: SessionRecord):
    """Re-run the engine over the recorded inputs; returns the fresh record.

    The caller compares `result.footer` with `record.footer` for the
    determinism check; `verify_replay` does exactly that.
    """
    from .engine import Engine  # deferred: engine imports this module

    engine = Engine(
        config=record.config,
        mode=record.mode,
        participant=record.participant,
        handedness=record.handedness,
        seed=record.seed,
    )
    for tick in record.ticks:
        engine.step(tick.to_input())
    return engine.finalize()


def verify_replay(record: SessionRecord) -> dict:
    """Replay and require a bitwise-identical footer; returns the metrics."""
    result = replay(record)
    if result.footer != record.footer:
        raise SessionFormatError("replay footer differs from recorded footer")
    return result.footer


def extract_clip(record: SessionRecord, segment_index: int) -> SessionRecord:
    """Slice the stretch of a session that drives one segment into a
    standalone record, ready for the clip store.

    The slice runs from just after the previous segment's completion (or the
    session start) through the completion event of the requested segment, so
    a clip replays from a fresh segment context.
    """
    if not 0 <= segment_index < record.config.n_pairs:
        raise SessionFormatError(f"task has no segment {segment_index}")
    start = 0
    end = None
    for pos, (kind, idx) in enumerate(record.order):
        if kind != "event":
            continue
        event = record.events[idx]
        if event.kind != "SegmentComplete":
            continue
        done = int(event.payload.get("segment", -1))
        if done == segment_index - 1:
            start = pos + 1
        elif done == segment_index:
            end = pos
            break
    if end is None:
        raise SessionFormatError(f"session does not complete segment {segment_index}")
    clip = SessionRecord(
        config=record.config,
        mode=record.mode,
        participant=record.participant,
        handedness=record.handedness,
        seed=record.seed,
    )
    for kind, idx in record.order[start : end + 1]:
        if kind == "tick":
            clip.append_tick(record.ticks[idx])
        else:
            clip.append_event(record.events[idx])
    clip.footer = {"clip_segment": segment_index}
    return clip


class ExpertClip(NamedTuple):
    segment_index: int
    record: SessionRecord

    @property
    def trajectory(self) -> list[tuple[int, Pose, Pose, Pose]]:
        return [(t.tick, t.l_pose, t.r_pose, t.needle_pose) for t in self.record.ticks]


def clip_path(store_dir: str, segment_index: int) -> str:
    return os.path.join(store_dir, f"clip_{segment_index}.vcs")


def validate_clip(record: SessionRecord, segment_index: int) -> None:
    """A stored clip must drive its segment cleanly: one completion, zero
    deviations, zero retractions."""
    from . import tpm

    progress = tpm.TaskProgress(segment_index, tpm.S0, tpm.PHASE_SETUP, (), 0)
    completed = False
    for event in record.sim_events():
        progress, tpm_events = tpm.advance(progress, [event], record.config)
        for te in tpm_events:
            if te.kind == "SegmentComplete" and te.payload.get("segment") == segment_index:
                completed = True
    if not completed:
        raise SessionFormatError(f"clip does not complete segment {segment_index}")
    if progress.deviations:
        raise SessionFormatError(f"clip for segment {segment_index} contains deviations")
    if progress.retractions:
        raise SessionFormatError(f"clip for segment {segment_index} contains retractions")


def store_clip(record: SessionRecord, segment_index: int, store_dir: str) -> str:
    validate_clip(record, segment_index)
    os.makedirs(store_dir, exist_ok=True)
    path = clip_path(store_dir, segment_index)
    save_session(record, path)
    return path


def expert_clip(store_dir: str, segment_index: int) -> ExpertClip:
    path = clip_path(store_dir, segment_index)
    if not os.path.exists(path):
        raise FileNotFoundError(f"no expert clip stored for segment {segment_index}")
    record = load_session(path)
    validate_clip(record, segment_index)
    return ExpertClip(segment_index, record)
