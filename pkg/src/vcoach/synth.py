"""Synthetic operators: scripted closed-loop policies that drive the engine.

A profile parameterizes how faithfully the operator follows the ideal
technique: where it grasps relative to the 150-degree ideal, how far its jaw
axis tilts off the needle plane normal, how much the drive wobbles off the
ideal arc, how often it pauses mid-motion, and how fast it works.  Every draw
comes from one seeded generator, so a (profile, seed) pair maps to exactly
one input stream and therefore one session record.

Cohort studies derive per-participant seeds as seed + i and inject learning
as per-repetition multipliers on the profile biases.  The multiplier
schedules below are the study's ground truth: the experimental arm's grasp
orientation improves faster by construction, while grasp position, wobble,
and pace follow identical schedules in both arms, making them null effects.
"""

from __future__ import annotations

import math
import random
from dataclasses import dataclass, replace
from typing import Optional

from .engine import Engine, EngineTickResult
from .geometry import DEG, ArcPath, Pose, UnitQuat, Vec3, needle_point
from .session import SessionRecord
from .task_core import InputTick, TaskConfig
from .tpm import GRASP_IDEAL_DEG

PROFILE_EXPERT = "expert"
PROFILE_NOVICE = "novice"

# A segment that takes longer than this much simulated time aborts generation.
SEGMENT_TIME_LIMIT_S = 120.0

# Degrees of drive-arc clearance before the entry where a sweep begins: far
# enough that the whole needle starts above the surface, close enough that
# the tip crosses within the pierce-matching tolerance of the entry target.
APPROACH_MARGIN_DEG = 8.0

# Nominal sweep rate of the drive, degrees of arc per second at pace 1.
DRIVE_RATE_DEG_S = 110.0

# Per-repetition multipliers for the five-repetition study plan.  Orientation
# learning is the injected effect; everything else improves identically in
# both arms.
# Per-repetition multipliers on the deficit parameters: the coached arm
# improves both its bias and its consistency far faster than uncoached
# practice, while pace (and aim, unscheduled) evolve identically in both arms
# and stay effect-free across arms by construction.
ORIENT_LEARNING = {
    "control": (1.0, 0.99, 0.97, 0.96, 0.95),
    "experimental": (1.0, 0.55, 0.35, 0.18, 0.10),
}
ORIENT_NOISE_LEARNING = {
    "control": (1.0, 1.0, 1.0, 1.0, 1.0),
    "experimental": (1.0, 0.70, 0.50, 0.35, 0.25),
}
GRASP_LEARNING = {
    "control": (1.0, 0.98, 0.96, 0.95, 0.94),
    "experimental": (1.0, 0.75, 0.60, 0.50, 0.45),
}
WOBBLE_LEARNING = {
    "control": (1.0, 0.98, 0.96, 0.95, 0.94),
    "experimental": (1.0, 0.80, 0.65, 0.55, 0.50),
}
PACE_LEARNING = (1.0, 1.05, 1.10, 1.15, 1.20)


@dataclass(frozen=True)
class SynthProfile:
    kind: str
    seed: int
    grasp_bias_deg: float
    grasp_noise_deg: float
    orient_bias_deg: float
    orient_noise_deg: float
    wobble_mm: float
    extra_move_rate_hz: float
    pace: float
    aim_noise_mm: float

    def validate(self) -> "SynthProfile":
        for name in ("grasp_noise_deg", "orient_noise_deg", "wobble_mm", "aim_noise_mm"):
            if getattr(self, name) < 0:
                raise ValueError(f"{name} must be non-negative")
        if not self.pace > 0:
            raise ValueError("pace must be positive")
        return self

    def reseeded(self, seed: int) -> "SynthProfile":
        return replace(self, seed=seed)


def expert_profile(seed: int) -> SynthProfile:
    return SynthProfile(
        kind=PROFILE_EXPERT,
        seed=seed,
        grasp_bias_deg=2.0,
        grasp_noise_deg=2.0,
        orient_bias_deg=2.0,
        orient_noise_deg=2.0,
        wobble_mm=0.2,
        extra_move_rate_hz=0.0,
        pace=1.0,
        aim_noise_mm=0.05,
    ).validate()


def novice_profile(seed: int) -> SynthProfile:
    return SynthProfile(
        kind=PROFILE_NOVICE,
        seed=seed,
        grasp_bias_deg=-20.0,
        grasp_noise_deg=8.0,
        orient_bias_deg=20.0,
        orient_noise_deg=8.0,
        wobble_mm=1.5,
        extra_move_rate_hz=0.3,
        pace=0.5,
        aim_noise_mm=0.9,
    ).validate()


def profile_for(kind: str, seed: int) -> SynthProfile:
    if kind == PROFILE_EXPERT:
        return expert_profile(seed)
    if kind == PROFILE_NOVICE:
        return novice_profile(seed)
    raise ValueError(f"unknown synthetic profile kind {kind!r}")


class GenerationError(RuntimeError):
    """Raised when a profile cannot complete the task within the time limit."""


def _smoothstep(u: float) -> float:
    u = min(1.0, max(0.0, u))
    return u * u * (3.0 - 2.0 * u)


def _lerp(a: Vec3, b: Vec3, s: float) -> Vec3:
    return Vec3(a.x + (b.x - a.x) * s, a.y + (b.y - a.y) * s, a.z + (b.z - a.z) * s)


def _slerp(a: UnitQuat, b: UnitQuat, s: float) -> UnitQuat:
    dot = a.w * b.w + a.x * b.x + a.y * b.y + a.z * b.z
    if dot < 0.0:
        b = UnitQuat(-b.w, -b.x, -b.y, -b.z)
        dot = -dot
    if dot > 0.9995:
        return UnitQuat.normalize(
            a.w + (b.w - a.w) * s,
            a.x + (b.x - a.x) * s,
            a.y + (b.y - a.y) * s,
            a.z + (b.z - a.z) * s,
        )
    theta = math.acos(min(1.0, dot))
    sa = math.sin((1.0 - s) * theta) / math.sin(theta)
    sb = math.sin(s * theta) / math.sin(theta)
    return UnitQuat.normalize(
        a.w * sa + b.w * sb, a.x * sa + b.x * sb, a.y * sa + b.y * sb, a.z * sa + b.z * sb
    )


def _wobble_taper(w: float) -> float:
    """Full wobble while the tip is in tissue (w in [0,1]), fading out after
    so the tail is pulled through its crossings cleanly."""
    if w <= 1.0:
        return 1.0
    if w >= 1.4:
        return 0.0
    return (1.4 - w) / 0.4


class _Operator:
    """Drives one engine with one instrument; the other side stays parked."""

    def __init__(self, engine: Engine, profile: SynthProfile, rng: random.Random):
        self.engine = engine
        self.config = engine.config
        self.profile = profile
        self.rng = rng
        # Small per-session tempo jitter keeps completion times from being
        # identical across participants with the same profile.
        self.pace = profile.pace * (1.0 + 0.05 * rng.uniform(-1.0, 1.0))
        self.tick = 0
        self._segment_deadline = int(SEGMENT_TIME_LIMIT_S * engine.config.tick_rate)
        world = engine.world
        self.l_pose = world.left.tip_pose
        self.r_pose = world.right.tip_pose
        self.l_jaw = world.left.jaw
        self.r_jaw = world.right.jaw
        self.side = "R"
        self.last_result: Optional[EngineTickResult] = None

    def _ticks(self, seconds: float) -> int:
        return max(2, int(round(seconds * self.config.tick_rate / self.pace)))

    def _active_pose(self) -> Pose:
        return self.r_pose if self.side == "R" else self.l_pose

    def _set_active(self, pose: Pose) -> None:
        if self.side == "R":
            self.r_pose = pose
        else:
            self.l_pose = pose

    def _set_jaw(self, value: float) -> None:
        if self.side == "R":
            self.r_jaw = value
        else:
            self.l_jaw = value

    def _step(self) -> EngineTickResult:
        self.tick += 1
        inp = InputTick(
            tick=self.tick,
            l_pose=self.l_pose,
            r_pose=self.r_pose,
            l_jaw=self.l_jaw,
            r_jaw=self.r_jaw,
            l_master=self.l_pose.position,
            r_master=self.r_pose.position,
        )
        self.last_result = self.engine.step(inp)
        return self.last_result

    def _hold(self, ticks: int) -> None:
        for _ in range(ticks):
            self._step()

    def _maybe_pause(self) -> None:
        """Spurious rest mid-motion, at the profile's extra-movement rate."""
        rate = self.profile.extra_move_rate_hz
        if rate <= 0.0:
            return
        if self.rng.random() < rate / self.config.tick_rate:
            self._hold(int(round(0.4 * self.config.tick_rate)))

    def _move_to(self, target: Pose, seconds: float, pausable: bool = True) -> None:
        start = self._active_pose()
        n = self._ticks(seconds)
        for k in range(1, n + 1):
            s = _smoothstep(k / n)
            self._set_active(
                Pose(
                    _lerp(start.position, target.position, s),
                    _slerp(start.orientation, target.orientation, s),
                )
            )
            self._step()
            if pausable:
                self._maybe_pause()

    def _jaw_ramp(self, target: float, seconds: float = 0.2) -> None:
        start = self.r_jaw if self.side == "R" else self.l_jaw
        n = self._ticks(seconds)
        for k in range(1, n + 1):
            self._set_jaw(start + (target - start) * k / n)
            self._step()

    def run_task(self) -> None:
        config = self.config
        deadline_ticks = int(SEGMENT_TIME_LIMIT_S * config.tick_rate)
        while self.engine.progress.segment_index < config.n_pairs:
            segment = self.engine.progress.segment_index
            self._segment_deadline = self.tick + deadline_ticks
            self._run_segment(segment)
            if self.tick > self._segment_deadline:
                raise GenerationError(
                    f"profile {self.profile.kind} seed {self.profile.seed} exceeded "
                    f"{SEGMENT_TIME_LIMIT_S} s on segment {segment}"
                )
            if self.engine.progress.segment_index == segment:
                raise GenerationError(
                    f"segment {segment} did not complete "
                    f"(profile {self.profile.kind} seed {self.profile.seed})"
                )

    # -- one segment ---------------------------------------------------------

    def _run_segment(self, segment: int) -> None:
        rng = self.rng
        profile = self.profile
        context = self.engine.context
        assert context is not None
        arc = context.ideal_arc

        self._grasp_needle()
        grasped = self.engine.world.grasp
        if grasped is None:
            raise GenerationError(f"grasp failed on segment {segment}")
        relative_inv = grasped.relative.inverse()

        out_amp = profile.wobble_mm * (math.pi / 2.0) * (1.0 + 0.15 * rng.uniform(-1.0, 1.0))
        in_amp = (
            0.5 * profile.wobble_mm * (math.pi / 2.0) * (1.0 + 0.15 * rng.uniform(-1.0, 1.0))
        )
        aim = Vec3(rng.gauss(0.0, profile.aim_noise_mm), rng.gauss(0.0, profile.aim_noise_mm), 0.0)

        # Retry missed passes with progressively tighter aim until the pass
        # lands; the segment deadline in run_task is the only giving-up point.
        attempt = 0
        while True:
            self._travel_to_start(arc, relative_inv, aim)
            if self._sweep(segment, arc, relative_inv, aim, out_amp, in_amp):
                break
            if self.tick > self._segment_deadline:
                raise GenerationError(
                    f"profile {self.profile.kind} seed {self.profile.seed} exceeded "
                    f"{SEGMENT_TIME_LIMIT_S} s on segment {segment}"
                )
            attempt += 1
            sigma = profile.aim_noise_mm / (2.0 ** min(attempt, 6))
            aim = Vec3(rng.gauss(0.0, sigma), rng.gauss(0.0, sigma), 0.0)

        # Release and clear away upward.
        self._jaw_ramp(1.0)
        lift = self._active_pose()
        self._move_to(Pose(lift.position + Vec3(0.0, 0.0, 15.0), lift.orientation), 0.5)

    def _grasp_needle(self) -> None:
        rng = self.rng
        profile = self.profile
        config = self.config
        span = config.needle.span_deg

        theta = GRASP_IDEAL_DEG + profile.grasp_bias_deg + rng.gauss(0.0, profile.grasp_noise_deg)
        theta = min(span - 1.0, max(16.0, theta))
        orient_err = profile.orient_bias_deg + rng.gauss(0.0, profile.orient_noise_deg)
        orient_err = min(85.0, max(-85.0, orient_err))

        needle_pose = self.engine.world.needle_pose
        grasp_point = needle_point(needle_pose, config.needle, theta)
        plane_normal = needle_pose.orientation.rotate(Vec3(0.0, 0.0, 1.0))
        a = theta * DEG
        tangent = needle_pose.orientation.rotate(Vec3(-math.sin(a), math.cos(a), 0.0))
        # Gripper basis at the grasp point: jaw axis along the plane normal
        # tilted by the orientation error about the local tangent.
        tilt = UnitQuat.from_axis_angle(tangent, orient_err)
        ex = tilt.rotate(plane_normal)
        ey = tangent
        ez = ex.cross(ey)
        grasp_orientation = UnitQuat.from_basis(ex, ey, ez)

        hover = Pose(grasp_point + Vec3(0.0, 0.0, 12.0), grasp_orientation)
        self._jaw_ramp(1.0)
        self._move_to(hover, 0.7)
        self._move_to(Pose(grasp_point, grasp_orientation), 0.4)
        self._jaw_ramp(0.05)

    # -- needle carries ------------------------------------------------------

    def _needle_target_for(self, arc: ArcPath, phi_deg: float, offset: Vec3) -> Pose:
        """Needle pose whose body lies on the drive circle with the tip at
        arc angle phi, the whole needle displaced by `offset`."""
        u = arc.ref_dir
        v = arc.plane_normal.cross(arc.ref_dir)
        a = phi_deg * DEG
        ex = u.scale(math.cos(a)) + v.scale(math.sin(a))
        ey = u.scale(math.sin(a)) - v.scale(math.cos(a))
        ez = arc.plane_normal.scale(-1.0)
        return Pose(arc.center + offset, UnitQuat.from_basis(ex, ey, ez))

    def _safe_height(self) -> float:
        return self.config.needle.radius_mm + 4.0

    def _travel_to_start(self, arc: ArcPath, relative_inv: Pose, aim: Vec3) -> None:
        """Carry the grasped needle up, across, and down into the pre-entry
        pose, keeping the whole body above the surface throughout."""
        start_needle = self._needle_target_for(arc, arc.start_deg - APPROACH_MARGIN_DEG, aim)
        current = self.engine.world.needle_pose
        safe_z = self._safe_height()

        lift = Pose(
            Vec3(current.position.x, current.position.y, max(current.position.z, safe_z)),
            current.orientation,
        )
        high = Pose(
            Vec3(
                start_needle.position.x,
                start_needle.position.y,
                max(start_needle.position.z, safe_z),
            ),
            start_needle.orientation,
        )
        self._move_to(lift.compose(relative_inv), 0.35)
        self._move_to(high.compose(relative_inv), 0.9)
        self._move_to(start_needle.compose(relative_inv), 0.45)

    def _sweep(
        self,
        segment: int,
        arc: ArcPath,
        relative_inv: Pose,
        aim: Vec3,
        out_amp: float,
        in_amp: float,
    ) -> bool:
        """Drive the tip from just above the entry through the whole pass.

        Success is the segment index advancing (the pass completed).  On a
        missed or deviant pierce the needle is backed out along the arc and
        False is returned so the caller can re-aim.
        """
        engine = self.engine
        config = self.config
        below_sweep = arc.end_deg - arc.start_deg
        phi_start = arc.start_deg - APPROACH_MARGIN_DEG
        phi_end = arc.end_deg + config.needle.span_deg + APPROACH_MARGIN_DEG
        n = self._ticks((phi_end - phi_start) / DRIVE_RATE_DEG_S)
        u = arc.ref_dir
        v = arc.plane_normal.cross(arc.ref_dir)
        deviations_before = len(engine.progress.deviations)

        for k in range(1, n + 1):
            phi = phi_start + (phi_end - phi_start) * k / n
            w = (phi - arc.start_deg) / below_sweep
            taper = _wobble_taper(w)
            wobble = arc.plane_normal.scale(taper * out_amp * math.sin(2.0 * math.pi * w))
            a = phi * DEG
            radial = u.scale(math.cos(a)) + v.scale(math.sin(a))
            wobble = wobble + radial.scale(taper * in_amp * math.sin(4.0 * math.pi * w))
            if 0.0 < w < 1.0:
                # While the tip should be submerged, cap any upward wobble at a
                # fraction of the local depth so it cannot pop the tip out
                # mid-pass (which would register as an off-target exit).
                max_up = 0.7 * -(arc.center.z + radial.z * arc.radius)
                if max_up > 0.0 and wobble.z > max_up:
                    wobble = Vec3(wobble.x, wobble.y, max_up)
                elif max_up <= 0.0 < wobble.z:
                    wobble = Vec3(wobble.x, wobble.y, 0.0)
            self._set_active(
                self._needle_target_for(arc, phi, aim + wobble).compose(relative_inv)
            )
            self._step()
            self._maybe_pause()
            if engine.progress.segment_index > segment:
                return True
            if len(engine.progress.deviations) > deviations_before:
                # Missed the entry (or hit the wrong target): back out.
                self._back_out(arc, relative_inv, phi, aim)
                return False

        # The sweep ended without the needle coming free (wobble or aim can
        # leave the tail a hair below the surface).  Lift straight up.
        pose0 = self.engine.world.needle_pose
        m = self._ticks(0.4)
        for k in range(1, m + 1):
            lifted = Pose(pose0.position + Vec3(0.0, 0.0, 8.0 * k / m), pose0.orientation)
            self._set_active(lifted.compose(relative_inv))
            self._step()
            if engine.progress.segment_index > segment:
                return True
        self._back_out(arc, relative_inv, phi_end, aim)
        return False

    def _back_out(self, arc: ArcPath, relative_inv: Pose, phi: float, aim: Vec3) -> None:
        """Reverse along the drive circle until the needle is clear again."""
        phi_start = arc.start_deg - APPROACH_MARGIN_DEG
        steps = self._ticks(max(0.2, (phi - phi_start) / DRIVE_RATE_DEG_S))
        for k in range(1, steps + 1):
            back = phi + (phi_start - phi) * k / steps
            self._set_active(self._needle_target_for(arc, back, aim).compose(relative_inv))
            self._step()


def synth_session(
    profile: SynthProfile,
    config: TaskConfig,
    mode: str,
    participant: Optional[str] = None,
    handedness: str = "R",
) -> SessionRecord:
    """Run one full scripted session and return its finalized record."""
    engine = Engine(
        config=config,
        mode=mode,
        participant=participant if participant is not None else f"{profile.kind}-s{profile.seed}",
        handedness=handedness,
        seed=profile.seed,
    )
    rng = random.Random(profile.seed)
    operator = _Operator(engine, profile, rng)
    operator.run_task()
    # A short tail so the recording does not end on the completion tick.
    operator._hold(5)
    return engine.finalize()


def scaled_profile(base: SynthProfile, rep_index: int, arm: str) -> SynthProfile:
    """Profile for repetition `rep_index` (0-based) under the arm's learning
    schedules."""
    key = "experimental" if arm == "experimental" else "control"
    return replace(
        base,
        grasp_bias_deg=base.grasp_bias_deg * GRASP_LEARNING[key][rep_index],
        orient_bias_deg=base.orient_bias_deg * ORIENT_LEARNING[key][rep_index],
        orient_noise_deg=base.orient_noise_deg * ORIENT_NOISE_LEARNING[key][rep_index],
        wobble_mm=base.wobble_mm * WOBBLE_LEARNING[key][rep_index],
        pace=base.pace * PACE_LEARNING[rep_index],
    )
