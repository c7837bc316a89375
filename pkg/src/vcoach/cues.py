"""The six teaching cues: geometry payload construction and the visibility
lifecycle.

Payload builders are pure geometry.  The lifecycle carries only what cannot be
derived per tick (the playback deadline and the video panel placement); the
visible set itself is recomputed every tick from phase, topology, coach
authorization, and icon activations, so replaying a session reproduces the
exact visibility timeline.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import NamedTuple, Optional, Sequence

from .geometry import (
    ArcPath,
    NeedleModel,
    Pose,
    UnitQuat,
    Vec3,
    X_AXIS,
    Z_AXIS,
    needle_point,
    orientation_deviation,
)
from .task_core import ICON_DISMISS, ICON_VIDEO, Instrument, TaskConfig
from .tpm import GRASP_IDEAL_DEG, GRASP_RANGE_DEG, PHASE_SETUP, S0, SegmentContext, TpmEvent

CUE_IDEAL_INSTRUMENT = "IdealInstrument"
CUE_GRASP_POSITION = "GraspPosition"
CUE_GRASP_ORIENTATION = "GraspOrientation"
CUE_IDEAL_DRIVE_PATH = "IdealDrivePath"
CUE_TRAJECTORY_PLAYBACK = "TrajectoryPlayback"
CUE_VIDEO_DEMO = "VideoDemo"

ALL_CUE_KINDS = (
    CUE_IDEAL_INSTRUMENT,
    CUE_GRASP_POSITION,
    CUE_GRASP_ORIENTATION,
    CUE_IDEAL_DRIVE_PATH,
    CUE_TRAJECTORY_PLAYBACK,
    CUE_VIDEO_DEMO,
)

SETUP_CUES = (CUE_IDEAL_INSTRUMENT, CUE_GRASP_POSITION, CUE_GRASP_ORIENTATION)

GRASP_SPHERE_ANGLES = GRASP_RANGE_DEG
GRASP_GHOST_ANGLE = GRASP_IDEAL_DEG
GRASP_SPHERE_FLASH_PERIOD_S = 0.5

# Ghost transparency ramp: fully opaque at these errors, invisible below the
# snap limits.
ALPHA_FULL_ANGLE_DEG = 30.0
ALPHA_FULL_OFFSET_MM = 10.0
ALPHA_HIDE_ANGLE_DEG = 3.0
ALPHA_HIDE_OFFSET_MM = 1.0

# Ideal-instrument selection falls back to handedness inside this margin.
SIDE_SCORE_TIE_DEG = 10.0

PLAYBACK_SECONDS = 10.0
PLAYBACK_LIFT_MM = 30.0

VIDEO_SIDE_VIEW = "SideView"
VIDEO_IN_SITU = "InSitu"


class CueDescriptor(NamedTuple):
    kind: str
    visible: bool
    payload: dict
    prompt: Optional[str]

    def to_dict(self) -> dict:
        d = {"kind": self.kind, "visible": self.visible, "payload": self.payload}
        if self.prompt is not None:
            d["prompt"] = self.prompt
        return d


def ideal_instrument(
    context: SegmentContext, left: Instrument, right: Instrument, handedness: str
) -> str:
    """Pick the side whose setup direction best matches the grasp approach.

    The approach direction is the ideal needle-plane normal for this pair,
    which is the plane normal of the ideal drive arc.  Near-ties defer to the
    user's handedness.
    """
    approach = context.ideal_arc.plane_normal
    score_left = orientation_deviation(left.base_direction, approach)
    score_right = orientation_deviation(right.base_direction, approach)
    if abs(score_left - score_right) < SIDE_SCORE_TIE_DEG:
        return "L" if handedness == "L" else "R"
    return "L" if score_left < score_right else "R"


def grasp_position_cue(needle_pose: Pose, model: NeedleModel) -> tuple[Vec3, Vec3]:
    return (
        needle_point(needle_pose, model, GRASP_SPHERE_ANGLES[0]),
        needle_point(needle_pose, model, GRASP_SPHERE_ANGLES[1]),
    )


def _ghost_pose(needle_pose: Pose, model: NeedleModel) -> Pose:
    """Ideal gripper pose at the center of the grasp range: jaw axis along the
    needle plane normal, closing direction tangent to the body."""
    position = needle_point(needle_pose, model, GRASP_GHOST_ANGLE)
    ex = needle_pose.orientation.rotate(Z_AXIS)
    a = GRASP_GHOST_ANGLE * math.pi / 180.0
    tangent_local = Vec3(-math.sin(a), math.cos(a), 0.0)
    ey = needle_pose.orientation.rotate(tangent_local)
    ez = ex.cross(ey)
    return Pose(position, UnitQuat.from_basis(ex, ey, ez))


def grasp_orientation_cue(
    needle_pose: Pose, model: NeedleModel, gripper: Pose
) -> tuple[Pose, float]:
    """Ghost pose plus its alpha: 0 when the gripper has converged, ramping to
    1 as either the angular or positional error saturates."""
    ghost = _ghost_pose(needle_pose, model)
    plane_normal = needle_pose.orientation.rotate(Z_AXIS)
    gripper_axis = gripper.orientation.rotate(X_AXIS)
    angular = orientation_deviation(gripper_axis, plane_normal)
    positional = (gripper.position - ghost.position).norm()
    if angular < ALPHA_HIDE_ANGLE_DEG and positional < ALPHA_HIDE_OFFSET_MM:
        return ghost, 0.0
    alpha = max(angular / ALPHA_FULL_ANGLE_DEG, positional / ALPHA_FULL_OFFSET_MM)
    return ghost, min(1.0, max(0.0, alpha))


def ideal_path_cue(context: SegmentContext) -> ArcPath:
    return context.ideal_arc


class PlaybackCue(NamedTuple):
    polyline: tuple[Vec3, ...]
    schedule: tuple[int, ...]  # tick offsets from the start of the replay
    ideal: ArcPath


def _rotation_between(a: Vec3, b: Vec3) -> UnitQuat:
    """Shortest rotation taking unit vector a onto unit vector b."""
    c = max(-1.0, min(1.0, a.dot(b)))
    axis = a.cross(b)
    if axis.dot(axis) < 1e-18:
        if c > 0.0:
            return UnitQuat.identity()
        # Antiparallel: rotate 180 degrees about any axis orthogonal to a.
        helper = Vec3(0.0, 0.0, 1.0) if abs(a.z) < 0.9 else Vec3(1.0, 0.0, 0.0)
        axis = a.cross(helper).normalized()
        return UnitQuat.from_axis_angle(axis, 180.0)
    angle = math.degrees(math.acos(c))
    return UnitQuat.from_axis_angle(axis.normalized(), angle)


def playback_cue(
    trajectory: Sequence[tuple[int, Vec3]],
    camera_forward: Vec3,
    surface_normal: Vec3,
    ideal_arc: ArcPath,
) -> PlaybackCue:
    """Project the just-completed pass above the surface, facing the camera.

    The trajectory is lifted along the surface normal, then the whole bundle
    (trajectory plus its paired ideal arc) is rotated about the trajectory
    centroid so the arc plane faces the viewer.  The schedule preserves the
    original inter-sample timing.
    """
    if not trajectory:
        raise ValueError("cannot build a playback from an empty trajectory")
    lift = surface_normal.scale(PLAYBACK_LIFT_MM)
    lifted = [p + lift for _, p in trajectory]
    centroid = Vec3(
        sum(p.x for p in lifted) / len(lifted),
        sum(p.y for p in lifted) / len(lifted),
        sum(p.z for p in lifted) / len(lifted),
    )
    view = camera_forward.normalized().scale(-1.0)
    plane = ideal_arc.plane_normal
    if plane.dot(view) < 0.0:
        plane = plane.scale(-1.0)
    rot = _rotation_between(plane, view)

    def xform(p: Vec3) -> Vec3:
        return centroid + rot.rotate(p - centroid)

    polyline = tuple(xform(p) for p in lifted)
    t0 = trajectory[0][0]
    schedule = tuple(t - t0 for t, _ in trajectory)
    moved_arc = ArcPath(
        center=xform(ideal_arc.center + lift),
        radius=ideal_arc.radius,
        plane_normal=rot.rotate(ideal_arc.plane_normal),
        ref_dir=rot.rotate(ideal_arc.ref_dir),
        start_deg=ideal_arc.start_deg,
        end_deg=ideal_arc.end_deg,
        drive_direction=ideal_arc.drive_direction,
    )
    return PlaybackCue(polyline, schedule, moved_arc)


@dataclass(frozen=True)
class CueLifecycle:
    active: frozenset
    playback_deadline: Optional[int]
    playback: Optional[PlaybackCue]
    video_placement: str


def initial_lifecycle() -> CueLifecycle:
    return CueLifecycle(frozenset(), None, None, VIDEO_SIDE_VIEW)


def update_cues(
    lifecycle: CueLifecycle,
    tpm_events: Sequence[TpmEvent],
    authorized: frozenset,
    icon_activations: Sequence[str],
    tick: int,
    config: TaskConfig,
    phase: str,
    topo: str,
    completed_playback: Optional[PlaybackCue],
) -> CueLifecycle:
    """Advance the cue lifecycle by one tick.

    `completed_playback` carries the trajectory bundle when this tick closed a
    segment; it arms the playback timer.  Setup cues never share the stage
    with an active playback: they return once it expires or is dismissed.
    """
    deadline = lifecycle.playback_deadline
    playback = lifecycle.playback
    placement = lifecycle.video_placement

    for icon in icon_activations:
        if icon == ICON_VIDEO:
            placement = VIDEO_IN_SITU if placement == VIDEO_SIDE_VIEW else VIDEO_SIDE_VIEW
        elif icon == ICON_DISMISS and deadline is not None:
            deadline, playback = None, None

    if any(e.kind == "SegmentComplete" for e in tpm_events):
        if completed_playback is not None and CUE_TRAJECTORY_PLAYBACK in authorized:
            deadline = tick + int(round(PLAYBACK_SECONDS * config.tick_rate))
            playback = completed_playback
        else:
            deadline, playback = None, None

    if deadline is not None and tick >= deadline:
        deadline, playback = None, None

    playback_active = deadline is not None
    active = set()
    if CUE_VIDEO_DEMO in authorized:
        active.add(CUE_VIDEO_DEMO)
    if playback_active and CUE_TRAJECTORY_PLAYBACK in authorized:
        active.add(CUE_TRAJECTORY_PLAYBACK)
    if not playback_active and phase == PHASE_SETUP and topo == S0:
        for kind in SETUP_CUES:
            if kind in authorized:
                active.add(kind)
    if not playback_active and (phase == PHASE_SETUP or topo != S0):
        if CUE_IDEAL_DRIVE_PATH in authorized:
            active.add(CUE_IDEAL_DRIVE_PATH)

    return CueLifecycle(frozenset(active), deadline, playback, placement)
