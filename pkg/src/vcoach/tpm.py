"""Task Progress Manager: the needle-tissue topology graph plus the
clockwise multi-segment protocol.

Topology states: S0 (needle through no target), S1 (through the entry),
S2 (through both), S3 (through the exit only).  Forward edges advance a
segment; reverse crossings are counted as retractions; protocol violations
are recorded as deviations without moving along the graph.  The whole manager
is a pure function of the simulation event log, so any recorded session
reproduces its progress timeline exactly.
"""

from __future__ import annotations

from dataclasses import dataclass, replace
from typing import NamedTuple, Optional

from .geometry import ArcPath, Vec3, chord_arc
from .task_core import SimEvent, TargetPair, TaskConfig, target_pair

S0 = "S0"
S1 = "S1"
S2 = "S2"
S3 = "S3"

PHASE_SETUP = "Setup"
PHASE_DRIVING = "Driving"
PHASE_WITHDRAWN = "Withdrawn"
PHASE_COMPLETE = "Complete"

DEV_OFF_TARGET_PIERCE = "OffTargetPierce"
DEV_WRONG_ORDER_TARGET = "WrongOrderTarget"
DEV_REVERSE_DIRECTION = "ReverseDirection"
DEV_TIP_GRASP = "TipGrasp"
DEV_OUT_OF_RANGE_GRASP = "OutOfRangeGrasp"

# Grasp-quality limits: the tip zone, the ideal window and its center, and
# how far outside the window a grasp may stray before it is called out.
TIP_GRASP_LIMIT_DEG = 15.0
GRASP_RANGE_DEG = (135.0, 165.0)
GRASP_IDEAL_DEG = 150.0
GRASP_RANGE_SLACK_DEG = 30.0

# Every legal (from, to) topology transition, forward and retraction alike.
DECLARED_EDGES = frozenset(
    [
        (S0, S1),
        (S1, S2),
        (S2, S3),
        (S3, S0),
        (S1, S0),
        (S2, S1),
        (S3, S2),
    ]
)


class ConsistencyError(ValueError):
    """Raised when an event references a target the task does not have."""


class NoActiveSegmentError(LookupError):
    """Raised when a segment context is requested after task completion."""


class ProtocolDeviation(NamedTuple):
    kind: str
    tick: int
    detail: dict


class TpmEvent(NamedTuple):
    kind: str  # StateChanged | Retraction | Deviation | SegmentComplete | TaskComplete
    tick: int
    payload: dict

    def to_dict(self) -> dict:
        return {"t": self.tick, "kind": self.kind, "payload": self.payload}


@dataclass(frozen=True)
class TaskProgress:
    segment_index: int
    topo: str
    phase: str
    deviations: tuple[ProtocolDeviation, ...]
    retractions: int


class SegmentContext(NamedTuple):
    pair: TargetPair
    ideal_arc: ArcPath
    drive_direction: Vec3
    phase: str


def initial_progress() -> TaskProgress:
    return TaskProgress(0, S0, PHASE_SETUP, (), 0)


def current_context(progress: TaskProgress, config: TaskConfig) -> SegmentContext:
    if progress.segment_index >= config.n_pairs:
        raise NoActiveSegmentError("task complete; no active segment")
    pair = target_pair(config, progress.segment_index)
    arc = chord_arc(pair.entry, pair.exit, config.needle.radius_mm, config.surface_normal)
    return SegmentContext(pair, arc, (pair.exit - pair.entry).normalized(), progress.phase)


def _event_target(event: SimEvent, config: TaskConfig) -> tuple[Optional[int], Optional[str]]:
    target = event.payload.get("target")
    if target is None:
        return None, None
    target = int(target)
    if not 0 <= target < config.n_pairs:
        raise ConsistencyError(f"event references unknown target {target}")
    return target, event.payload.get("point")


def advance(
    progress: TaskProgress, events: list[SimEvent], config: TaskConfig
) -> tuple[TaskProgress, list[TpmEvent]]:
    """Fold one tick's simulation events into the task progress."""
    if not events:
        return progress, []
    out: list[TpmEvent] = []

    def goto(tick: int, new_topo: str) -> None:
        nonlocal progress
        out.append(TpmEvent("StateChanged", tick, {"from": progress.topo, "to": new_topo}))
        phase = PHASE_DRIVING if new_topo != S0 else progress.phase
        progress = replace(progress, topo=new_topo, phase=phase)

    def retract(tick: int, new_topo: str) -> None:
        nonlocal progress
        old = progress.topo
        goto(tick, new_topo)
        out.append(TpmEvent("Retraction", tick, {"from": old, "to": new_topo}))
        if new_topo == S0:
            progress = replace(progress, phase=PHASE_WITHDRAWN)
        progress = replace(progress, retractions=progress.retractions + 1)

    def deviate(tick: int, kind: str, detail: dict) -> None:
        nonlocal progress
        dev = ProtocolDeviation(kind, tick, detail)
        progress = replace(progress, deviations=progress.deviations + (dev,))
        out.append(TpmEvent("Deviation", tick, {"kind": kind, **detail}))

    for event in events:
        done = progress.segment_index >= config.n_pairs
        if event.kind == "Pierce":
            target, point = _event_target(event, config)
            if target is None:
                deviate(event.tick, DEV_OFF_TARGET_PIERCE, {"location": event.payload.get("location")})
            elif done:
                continue
            elif progress.topo == S0:
                if target == progress.segment_index and point == "entry":
                    goto(event.tick, S1)
                elif target == progress.segment_index and point == "exit":
                    deviate(event.tick, DEV_REVERSE_DIRECTION, {"target": target})
                else:
                    deviate(event.tick, DEV_WRONG_ORDER_TARGET, {"target": target, "point": point})
            elif progress.topo == S2 and target == progress.segment_index and point == "exit":
                # Tip re-entered the exit hole: reverse of the S1 -> S2 edge.
                retract(event.tick, S1)
            elif target != progress.segment_index:
                deviate(event.tick, DEV_WRONG_ORDER_TARGET, {"target": target, "point": point})
        elif event.kind == "TipExit":
            if done or progress.topo != S1:
                continue
            target, point = _event_target(event, config)
            if target == progress.segment_index and point == "exit":
                goto(event.tick, S2)
            elif target == progress.segment_index and point == "entry":
                retract(event.tick, S0)
        elif event.kind == "TailExit":
            if done:
                continue
            target, point = _event_target(event, config)
            at_entry = target == progress.segment_index and point == "entry"
            direction = event.payload.get("direction")
            if progress.topo == S2 and direction == "down" and at_entry:
                goto(event.tick, S3)
            elif progress.topo == S3 and direction == "up" and at_entry:
                retract(event.tick, S2)
        elif event.kind == "NeedleFree":
            if done:
                continue
            if progress.topo == S3:
                goto(event.tick, S0)
                segment = progress.segment_index
                progress = replace(
                    progress, segment_index=segment + 1, phase=PHASE_SETUP
                )
                out.append(TpmEvent("SegmentComplete", event.tick, {"segment": segment}))
                if progress.segment_index >= config.n_pairs:
                    progress = replace(progress, phase=PHASE_COMPLETE)
                    out.append(TpmEvent("TaskComplete", event.tick, {}))
            elif progress.topo == S1:
                retract(event.tick, S0)
            elif progress.topo == S2:
                # Needle yanked clear of both targets: walk the graph edges
                # stepwise so no undeclared jump appears.
                retract(event.tick, S1)
                retract(event.tick, S0)
        elif event.kind == "GraspStart":
            # Grasp quality applies to the drive-initiating grasp only; a
            # regrasp near the tip after exit is correct technique.
            if done or progress.topo != S0:
                continue
            theta = float(event.payload.get("theta", 0.0))
            if theta < TIP_GRASP_LIMIT_DEG:
                deviate(event.tick, DEV_TIP_GRASP, {"theta": theta})
            elif (
                theta < GRASP_RANGE_DEG[0] - GRASP_RANGE_SLACK_DEG
                or theta > GRASP_RANGE_DEG[1] + GRASP_RANGE_SLACK_DEG
            ):
                deviate(event.tick, DEV_OUT_OF_RANGE_GRASP, {"theta": theta})
    return progress, out
