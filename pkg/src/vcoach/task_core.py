"""Deterministic fixed-tick simulation of the needle-passing world.

Instruments are kinematic (they teleport to commanded poses), the tissue is a
rigid plane through the origin, and the needle moves only while grasped.  All
event detection is closed-form off the needle height function, which is a
sinusoid in body angle, so a tick never samples the body for topology checks.

Determinism contract: identical input streams produce identical world streams
and event logs bit for bit.  Everything here is pure float math in a fixed
evaluation order; no wall clock, no global RNG.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import NamedTuple, Optional

from .geometry import (
    DEG,
    NEEDLE_GRASP_TOLERANCE_MM,
    GeometryError,
    NeedleModel,
    Pose,
    UnitQuat,
    Vec3,
    X_AXIS,
    Y_AXIS,
    Z_AXIS,
    closest_body_angle,
    needle_point,
    orientation_deviation,
)

# Jaw hysteresis: a grasp engages when the jaw closes below JAW_CLOSE and
# releases when it opens above JAW_OPEN; oscillation between them is inert.
JAW_CLOSE = 0.2
JAW_OPEN = 0.4

# Body samples per below-surface interval when estimating tissue deflection.
_DEFLECTION_SAMPLES = 16

ICON_HELP = "help"
ICON_VIDEO = "video"
ICON_DISMISS = "dismiss"

FORCE_SOURCE_LEFT = "instrument:L"
FORCE_SOURCE_RIGHT = "instrument:R"
FORCE_SOURCE_TISSUE = "needle_tissue"


class ProtocolError(ValueError):
    """Raised when an input violates the tick protocol."""


class InputError(ValueError):
    """Raised when an input carries non-finite or out-of-range values."""


@dataclass(frozen=True)
class TaskConfig:
    needle: NeedleModel
    inner_radius: float
    outer_radius: float
    n_pairs: int
    surface_normal: Vec3
    tick_rate: float
    pierce_tolerance: float
    force_threshold: float
    stiffness_tissue: float
    stiffness_contact: float
    help_icon: Vec3
    video_icon: Vec3
    dismiss_icon: Vec3
    icon_proximity: float

    def validate(self) -> "TaskConfig":
        self.needle.validate()
        if not 0 < self.inner_radius < self.outer_radius:
            raise ValueError("target radii must satisfy 0 < inner < outer")
        if self.n_pairs < 1:
            raise ValueError("need at least one target pair")
        if self.outer_radius - self.inner_radius > 2.0 * self.needle.radius_mm:
            raise ValueError("target spacing exceeds needle diameter; pairs not drivable")
        if not self.tick_rate > 0:
            raise ValueError("tick rate must be positive")
        if not self.pierce_tolerance > 0 or not self.icon_proximity > 0:
            raise ValueError("tolerances must be positive")
        return self

    def to_dict(self) -> dict:
        return {
            "needle": {"radius": self.needle.radius_mm, "span": self.needle.span_deg},
            "inner_radius": self.inner_radius,
            "outer_radius": self.outer_radius,
            "n_pairs": self.n_pairs,
            "surface_normal": self.surface_normal.to_list(),
            "tick_rate": self.tick_rate,
            "pierce_tolerance": self.pierce_tolerance,
            "force_threshold": self.force_threshold,
            "stiffness_tissue": self.stiffness_tissue,
            "stiffness_contact": self.stiffness_contact,
            "help_icon": self.help_icon.to_list(),
            "video_icon": self.video_icon.to_list(),
            "dismiss_icon": self.dismiss_icon.to_list(),
            "icon_proximity": self.icon_proximity,
        }

    @staticmethod
    def from_dict(d: dict) -> "TaskConfig":
        return TaskConfig(
            needle=NeedleModel(float(d["needle"]["radius"]), float(d["needle"]["span"])),
            inner_radius=float(d["inner_radius"]),
            outer_radius=float(d["outer_radius"]),
            n_pairs=int(d["n_pairs"]),
            surface_normal=Vec3.from_list(d["surface_normal"]),
            tick_rate=float(d["tick_rate"]),
            pierce_tolerance=float(d["pierce_tolerance"]),
            force_threshold=float(d["force_threshold"]),
            stiffness_tissue=float(d["stiffness_tissue"]),
            stiffness_contact=float(d["stiffness_contact"]),
            help_icon=Vec3.from_list(d["help_icon"]),
            video_icon=Vec3.from_list(d["video_icon"]),
            dismiss_icon=Vec3.from_list(d["dismiss_icon"]),
            icon_proximity=float(d["icon_proximity"]),
        ).validate()


def default_task_config() -> TaskConfig:
    return TaskConfig(
        needle=NeedleModel(radius_mm=6.0, span_deg=180.0),
        inner_radius=15.0,
        outer_radius=25.0,
        n_pairs=8,
        surface_normal=Vec3(0.0, 0.0, 1.0),
        tick_rate=50.0,
        pierce_tolerance=2.0,
        force_threshold=1.5,
        stiffness_tissue=0.5,
        stiffness_contact=2.0,
        help_icon=Vec3(45.0, 15.0, 5.0),
        video_icon=Vec3(45.0, 0.0, 5.0),
        dismiss_icon=Vec3(45.0, -15.0, 5.0),
        icon_proximity=5.0,
    ).validate()


class TargetPair(NamedTuple):
    index: int
    entry: Vec3
    exit: Vec3
    azimuth_deg: float


def target_pair(config: TaskConfig, index: int) -> TargetPair:
    """Entry/exit points of pair `index`, laid clockwise starting at the top."""
    if not 0 <= index < config.n_pairs:
        raise IndexError(f"pair index {index} out of range 0..{config.n_pairs - 1}")
    azimuth = 90.0 - index * (360.0 / config.n_pairs)
    a = azimuth * DEG
    c, s = math.cos(a), math.sin(a)
    entry = Vec3(config.inner_radius * c, config.inner_radius * s, 0.0)
    exit_ = Vec3(config.outer_radius * c, config.outer_radius * s, 0.0)
    return TargetPair(index, entry, exit_, azimuth)


def all_target_pairs(config: TaskConfig) -> tuple[TargetPair, ...]:
    return tuple(target_pair(config, i) for i in range(config.n_pairs))


class Instrument(NamedTuple):
    side: str
    tip_pose: Pose
    jaw: float
    base_direction: Vec3


class InputTick(NamedTuple):
    tick: int
    l_pose: Pose
    r_pose: Pose
    l_jaw: float
    r_jaw: float
    l_master: Vec3
    r_master: Vec3


class GraspState(NamedTuple):
    side: str
    theta_deg: float
    orientation_dev_deg: float
    # Needle pose expressed in the gripper frame at the moment of grasping.
    relative: Pose


class PierceSite(NamedTuple):
    target_index: Optional[int]
    target_point: Optional[str]  # "entry" / "exit" when on a target
    location: Vec3
    tick: int


class SimEvent(NamedTuple):
    kind: str
    tick: int
    payload: dict

    def to_dict(self) -> dict:
        return {"t": self.tick, "kind": self.kind, "payload": self.payload}


class ContactForces(NamedTuple):
    instrument_left: float
    instrument_right: float
    needle_tissue: float


class _HeightFn(NamedTuple):
    """Needle body height above the surface as a + b*cos(theta) + c*sin(theta)."""

    a: float
    b: float
    c: float

    def at(self, theta_deg: float) -> float:
        t = theta_deg * DEG
        return self.a + self.b * math.cos(t) + self.c * math.sin(t)

    def body_min(self, span_deg: float) -> float:
        m = math.hypot(self.b, self.c)
        if m == 0.0:
            return self.a
        # Global minimum of the sinusoid sits at phase + 180 degrees.
        phase = math.atan2(self.c, self.b) / DEG
        trough = (phase + 180.0) % 360.0
        lo = min(self.at(0.0), self.at(span_deg))
        if trough <= span_deg:
            lo = min(lo, self.a - m)
        return lo

    def below_intervals(self, span_deg: float) -> list[tuple[float, float]]:
        """Body-angle intervals (degrees) where the height is negative."""
        m = math.hypot(self.b, self.c)
        if m == 0.0:
            return [(0.0, span_deg)] if self.a < 0.0 else []
        k = -self.a / m
        if k >= 1.0:
            return [(0.0, span_deg)]
        if k <= -1.0:
            return []
        phase = math.atan2(self.c, self.b) / DEG
        psi = math.acos(k) / DEG
        # Height < 0 where theta - phase lies in (psi, 360 - psi) modulo 360.
        lo = (phase + psi) % 360.0
        hi = lo + (360.0 - 2.0 * psi)
        out: list[tuple[float, float]] = []
        for shift in (0.0, -360.0):
            a, b = lo + shift, hi + shift
            a2, b2 = max(a, 0.0), min(b, span_deg)
            if a2 < b2:
                out.append((a2, b2))
        return out


@dataclass(frozen=True)
class WorldState:
    tick: int
    left: Instrument
    right: Instrument
    needle_pose: Pose
    l_master: Vec3
    r_master: Vec3
    grasp: Optional[GraspState]
    pierce_sites: tuple[PierceSite, ...]
    # Reference plane (anchor, unit normal) captured at the first pierce since
    # the needle was last free; drives the tissue-deflection force model.
    tissue_anchor: Optional[Vec3]
    tissue_normal: Optional[Vec3]
    # Cached height samples of the previous tick, for crossing detection.
    tip_height: float
    tail_height: float
    min_height: float
    # Icons currently occupied by an instrument tip (edge-triggered events).
    icons_near: frozenset
    # Force sources currently above the threshold.
    force_over: frozenset
    # Contact forces at this tick, computed once during step().
    forces: ContactForces


_START_LEFT = Pose(Vec3(-40.0, 0.0, 25.0), UnitQuat.identity())
_START_RIGHT = Pose(Vec3(40.0, 0.0, 25.0), UnitQuat.identity())
_BASE_LEFT = Vec3(-50.0, 35.0, 45.0)
_BASE_RIGHT = Vec3(50.0, 35.0, 45.0)
_NEEDLE_START = Pose(Vec3(0.0, 0.0, 10.0), UnitQuat.identity())


def initial_world(config: TaskConfig) -> WorldState:
    left = Instrument("L", _START_LEFT, 1.0, _BASE_LEFT.scale(-1.0).normalized())
    right = Instrument("R", _START_RIGHT, 1.0, _BASE_RIGHT.scale(-1.0).normalized())
    h = _height_fn(_NEEDLE_START, config)
    span = config.needle.span_deg
    return WorldState(
        tick=0,
        left=left,
        right=right,
        needle_pose=_NEEDLE_START,
        l_master=_START_LEFT.position,
        r_master=_START_RIGHT.position,
        grasp=None,
        pierce_sites=(),
        tissue_anchor=None,
        tissue_normal=None,
        tip_height=h.at(0.0),
        tail_height=h.at(span),
        min_height=h.body_min(span),
        icons_near=frozenset(),
        force_over=frozenset(),
        forces=ContactForces(0.0, 0.0, 0.0),
    )


def _height_fn(pose: Pose, config: TaskConfig) -> _HeightFn:
    n = config.surface_normal
    r = config.needle.radius_mm
    ex = pose.orientation.rotate(X_AXIS)
    ey = pose.orientation.rotate(Vec3(0.0, 1.0, 0.0))
    return _HeightFn(pose.position.dot(n), r * ex.dot(n), r * ey.dot(n))


def _surface_point(p_prev: Vec3, p_new: Vec3, h_prev: float, h_new: float, n: Vec3) -> Vec3:
    """Point where the segment p_prev -> p_new crosses the surface plane."""
    denom = h_prev - h_new
    s = 0.5 if denom == 0.0 else h_prev / denom
    s = min(1.0, max(0.0, s))
    p = Vec3(
        p_prev.x + (p_new.x - p_prev.x) * s,
        p_prev.y + (p_new.y - p_prev.y) * s,
        p_prev.z + (p_new.z - p_prev.z) * s,
    )
    return p - n.scale(p.dot(n))


def _match_target(location: Vec3, config: TaskConfig) -> tuple[Optional[int], Optional[str]]:
    """Nearest target point within pierce tolerance, or (None, None).

    Ties break toward the lower pair index, then entry before exit, so the
    match is deterministic no matter how the targets are laid out.
    """
    candidates = []
    for pair in all_target_pairs(config):
        for rank, (point_kind, p) in enumerate((("entry", pair.entry), ("exit", pair.exit))):
            d = (location - p).norm()
            if d <= config.pierce_tolerance:
                candidates.append((d, pair.index, rank, point_kind))
    if not candidates:
        return None, None
    d, index, _, point_kind = min(candidates)
    return index, point_kind


def _crossing_payload(location: Vec3, config: TaskConfig) -> dict:
    idx, kind = _match_target(location, config)
    return {"target": idx, "point": kind, "location": location.to_list()}


def compute_forces(world: WorldState, config: TaskConfig) -> ContactForces:
    return _contact_forces(
        world.left,
        world.right,
        world.grasp.side if world.grasp else None,
        world.needle_pose,
        world.tissue_anchor,
        world.tissue_normal,
        world.min_height,
        None,
        config,
    )


def _contact_forces(
    left: Instrument,
    right: Instrument,
    grasp_side: Optional[str],
    needle_pose: Pose,
    tissue_anchor: Optional[Vec3],
    tissue_normal: Optional[Vec3],
    min_height: float,
    height: "Optional[_HeightFn]",
    config: TaskConfig,
) -> ContactForces:
    n = config.surface_normal
    inst = []
    for instrument in (left, right):
        if instrument.side == grasp_side:
            inst.append(0.0)
            continue
        depth = -instrument.tip_pose.position.dot(n)
        inst.append(config.stiffness_contact * depth if depth > 0.0 else 0.0)

    tissue = 0.0
    if tissue_anchor is not None and tissue_normal is not None and min_height < 0.0:
        h = height if height is not None else _height_fn(needle_pose, config)
        intervals = h.below_intervals(config.needle.span_deg)
        if intervals:
            total_len = 0.0
            weighted = 0.0
            anchor, ref_n = tissue_anchor, tissue_normal
            pose = needle_pose
            r = config.needle.radius_mm
            # Deflection of a body point p from the anchor plane is affine in
            # (cos theta, sin theta), so hoist the frame projections out of
            # the sample loop.
            d0 = (pose.position - anchor).dot(ref_n)
            bx = pose.orientation.rotate(X_AXIS).dot(ref_n) * r
            by = pose.orientation.rotate(Y_AXIS).dot(ref_n) * r
            for lo, hi in intervals:
                width = hi - lo
                acc = 0.0
                for k in range(_DEFLECTION_SAMPLES):
                    theta = (lo + (k + 0.5) * width / _DEFLECTION_SAMPLES) * DEG
                    acc += abs(d0 + bx * math.cos(theta) + by * math.sin(theta))
                total_len += width
                weighted += width * (acc / _DEFLECTION_SAMPLES)
            if total_len > 0.0:
                tissue = config.stiffness_tissue * (weighted / total_len)
    return ContactForces(inst[0], inst[1], tissue)


def _validate_input(world: WorldState, inp: InputTick) -> None:
    if inp.tick <= world.tick:
        raise ProtocolError(f"input tick {inp.tick} not after world tick {world.tick}")
    for pose in (inp.l_pose, inp.r_pose):
        if not pose.is_finite():
            raise InputError("non-finite instrument pose")
    for v in (inp.l_master, inp.r_master):
        if not v.is_finite():
            raise InputError("non-finite master position")
    for jaw in (inp.l_jaw, inp.r_jaw):
        if not math.isfinite(jaw) or not 0.0 <= jaw <= 1.0:
            raise InputError(f"jaw value {jaw} outside [0, 1]")


def step(world: WorldState, inp: InputTick, config: TaskConfig) -> tuple[WorldState, list[SimEvent]]:
    """Advance one tick: apply commanded poses, detect events, update forces."""
    _validate_input(world, inp)
    tick = inp.tick
    events: list[SimEvent] = []
    span = config.needle.span_deg
    n = config.surface_normal

    left = world.left._replace(tip_pose=inp.l_pose, jaw=inp.l_jaw)
    right = world.right._replace(tip_pose=inp.r_pose, jaw=inp.r_jaw)

    # Needle follows the grasping gripper rigidly.
    grasp = world.grasp
    prev_pose = world.needle_pose
    if grasp is not None:
        holder = left if grasp.side == "L" else right
        needle_pose = holder.tip_pose.compose(grasp.relative)
    else:
        needle_pose = prev_pose

    # Grasp release precedes new grasps so a same-tick handoff works.
    if grasp is not None:
        prev_jaw = world.left.jaw if grasp.side == "L" else world.right.jaw
        new_jaw = left.jaw if grasp.side == "L" else right.jaw
        if prev_jaw <= JAW_OPEN < new_jaw:
            events.append(SimEvent("GraspEnd", tick, {"side": grasp.side}))
            grasp = None

    if grasp is None:
        for instrument, prev_jaw in ((left, world.left.jaw), (right, world.right.jaw)):
            if not (prev_jaw >= JAW_CLOSE > instrument.jaw):
                continue
            theta, dist = closest_body_angle(instrument.tip_pose.position, needle_pose, config.needle)
            if dist > NEEDLE_GRASP_TOLERANCE_MM:
                continue
            gripper_axis = instrument.tip_pose.orientation.rotate(X_AXIS)
            plane_normal = needle_pose.orientation.rotate(Z_AXIS)
            dev = orientation_deviation(gripper_axis, plane_normal)
            relative = instrument.tip_pose.inverse().compose(needle_pose)
            grasp = GraspState(instrument.side, theta, dev, relative)
            events.append(
                SimEvent(
                    "GraspStart",
                    tick,
                    {"side": instrument.side, "theta": theta, "orientation_dev": dev},
                )
            )
            break  # exclusivity: at most one grasp

    # Topology events from the height function of the old vs new needle pose.
    h = _height_fn(needle_pose, config)
    tip_h, tail_h = h.at(0.0), h.at(span)
    min_h = h.body_min(span)

    pierce_sites = world.pierce_sites
    tissue_anchor, tissue_normal = world.tissue_anchor, world.tissue_normal

    if (world.tip_height >= 0.0) != (tip_h >= 0.0):
        tip_prev_pos = needle_point(prev_pose, config.needle, 0.0)
        tip_new_pos = needle_point(needle_pose, config.needle, 0.0)
        location = _surface_point(tip_prev_pos, tip_new_pos, world.tip_height, tip_h, n)
        if tip_h < 0.0:
            payload = _crossing_payload(location, config)
            events.append(SimEvent("Pierce", tick, payload))
            pierce_sites = pierce_sites + (
                PierceSite(payload["target"], payload["point"], location, tick),
            )
            if tissue_anchor is None and world.min_height >= 0.0:
                plane_n = needle_pose.orientation.rotate(Z_AXIS)
                lateral = plane_n - n.scale(plane_n.dot(n))
                if lateral.dot(lateral) > 1e-12:
                    tissue_anchor = location
                    tissue_normal = lateral.normalized()
        else:
            events.append(SimEvent("TipExit", tick, _crossing_payload(location, config)))

    if (world.tail_height >= 0.0) != (tail_h >= 0.0):
        tail_prev_pos = needle_point(prev_pose, config.needle, span)
        tail_new_pos = needle_point(needle_pose, config.needle, span)
        location = _surface_point(tail_prev_pos, tail_new_pos, world.tail_height, tail_h, n)
        payload = _crossing_payload(location, config)
        payload["direction"] = "down" if tail_h < 0.0 else "up"
        events.append(SimEvent("TailExit", tick, payload))

    if world.min_height < 0.0 <= min_h:
        events.append(SimEvent("NeedleFree", tick, {}))
        tissue_anchor, tissue_normal = None, None

    # Icon proximity, edge-triggered on entry by either tip.
    icons = (
        (ICON_HELP, config.help_icon),
        (ICON_VIDEO, config.video_icon),
        (ICON_DISMISS, config.dismiss_icon),
    )
    near = []
    lp = left.tip_pose.position
    rp = right.tip_pose.position
    prox_sq = config.icon_proximity * config.icon_proximity
    for icon_id, center in icons:
        dl = Vec3(lp.x - center.x, lp.y - center.y, lp.z - center.z)
        dr = Vec3(rp.x - center.x, rp.y - center.y, rp.z - center.z)
        if dl.dot(dl) < prox_sq or dr.dot(dr) < prox_sq:
            near.append(icon_id)
    icons_near = frozenset(near)
    for icon_id, _ in icons:
        if icon_id in icons_near and icon_id not in world.icons_near:
            events.append(SimEvent("IconActivated", tick, {"icon": icon_id}))

    # Force threshold crossings, edge-triggered per source.
    forces = _contact_forces(
        left,
        right,
        grasp.side if grasp else None,
        needle_pose,
        tissue_anchor,
        tissue_normal,
        min_h,
        h,
        config,
    )
    by_source = (
        (FORCE_SOURCE_LEFT, forces.instrument_left),
        (FORCE_SOURCE_RIGHT, forces.instrument_right),
        (FORCE_SOURCE_TISSUE, forces.needle_tissue),
    )
    over = frozenset(src for src, f in by_source if f > config.force_threshold)
    for src, f in by_source:
        if src in over and src not in world.force_over:
            events.append(SimEvent("ForceExceedStart", tick, {"source": src, "force": f}))
    for src, _ in by_source:
        if src in world.force_over and src not in over:
            events.append(SimEvent("ForceExceedEnd", tick, {"source": src}))

    new_world = WorldState(
        tick=tick,
        left=left,
        right=right,
        needle_pose=needle_pose,
        l_master=inp.l_master,
        r_master=inp.r_master,
        grasp=grasp,
        pierce_sites=pierce_sites,
        tissue_anchor=tissue_anchor,
        tissue_normal=tissue_normal,
        tip_height=tip_h,
        tail_height=tail_h,
        min_height=min_h,
        icons_near=icons_near,
        force_over=over,
        forces=forces,
    )
    return new_world, events
