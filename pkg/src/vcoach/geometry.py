"""Pose algebra, the circular needle model, and arc deviation decomposition.

Everything here is pure: plain float math on small immutable values, safe to
call from any thread.  Angles cross the module boundary in degrees; radians
are used internally where it keeps the trig readable.
"""

from __future__ import annotations

import math
from typing import NamedTuple

DEG = math.pi / 180.0

# Below this squared norm a vector is treated as zero (direction undefined).
_ZERO_SQ = 1e-24

# Tube radius within which a point counts as "on the needle body" (mm).
NEEDLE_GRASP_TOLERANCE_MM = 1.0


class GeometryError(ValueError):
    """Raised when an operation has no geometric solution for its inputs."""


class Vec3(NamedTuple):
    x: float
    y: float
    z: float

    def __add__(self, o: "Vec3") -> "Vec3":  # type: ignore[override]
        return Vec3(self.x + o.x, self.y + o.y, self.z + o.z)

    def __sub__(self, o: "Vec3") -> "Vec3":
        return Vec3(self.x - o.x, self.y - o.y, self.z - o.z)

    def scale(self, k: float) -> "Vec3":
        return Vec3(self.x * k, self.y * k, self.z * k)

    def dot(self, o: "Vec3") -> float:
        return self.x * o.x + self.y * o.y + self.z * o.z

    def cross(self, o: "Vec3") -> "Vec3":
        return Vec3(
            self.y * o.z - self.z * o.y,
            self.z * o.x - self.x * o.z,
            self.x * o.y - self.y * o.x,
        )

    def norm(self) -> float:
        return math.sqrt(self.x * self.x + self.y * self.y + self.z * self.z)

    def normalized(self) -> "Vec3":
        n = self.norm()
        if n * n < _ZERO_SQ:
            raise GeometryError("cannot normalize a zero-length vector")
        return Vec3(self.x / n, self.y / n, self.z / n)

    def is_finite(self) -> bool:
        return math.isfinite(self.x) and math.isfinite(self.y) and math.isfinite(self.z)

    def to_list(self) -> list[float]:
        return [self.x, self.y, self.z]

    @staticmethod
    def from_list(v) -> "Vec3":
        return Vec3(float(v[0]), float(v[1]), float(v[2]))


ZERO = Vec3(0.0, 0.0, 0.0)
X_AXIS = Vec3(1.0, 0.0, 0.0)
Y_AXIS = Vec3(0.0, 1.0, 0.0)
Z_AXIS = Vec3(0.0, 0.0, 1.0)


class UnitQuat(NamedTuple):
    """Unit quaternion (w, x, y, z) representing a rotation."""

    w: float
    x: float
    y: float
    z: float

    @staticmethod
    def identity() -> "UnitQuat":
        return UnitQuat(1.0, 0.0, 0.0, 0.0)

    @staticmethod
    def from_axis_angle(axis: Vec3, angle_deg: float) -> "UnitQuat":
        a = axis.normalized()
        half = 0.5 * angle_deg * DEG
        s = math.sin(half)
        return UnitQuat(math.cos(half), a.x * s, a.y * s, a.z * s)

    @staticmethod
    def normalize(w: float, x: float, y: float, z: float) -> "UnitQuat":
        n = math.sqrt(w * w + x * x + y * y + z * z)
        if n * n < _ZERO_SQ:
            raise GeometryError("cannot normalize a zero quaternion")
        return UnitQuat(w / n, x / n, y / n, z / n)

    def __mul__(self, o: "UnitQuat") -> "UnitQuat":  # type: ignore[override]
        w1, x1, y1, z1 = self
        w2, x2, y2, z2 = o
        return UnitQuat(
            w1 * w2 - x1 * x2 - y1 * y2 - z1 * z2,
            w1 * x2 + x1 * w2 + y1 * z2 - z1 * y2,
            w1 * y2 - x1 * z2 + y1 * w2 + z1 * x2,
            w1 * z2 + x1 * y2 - y1 * x2 + z1 * w2,
        )

    def conj(self) -> "UnitQuat":
        return UnitQuat(self.w, -self.x, -self.y, -self.z)

    def rotate(self, v: Vec3) -> Vec3:
        # q v q* expanded to avoid building intermediate quaternions.
        w, x, y, z = self
        tx = 2.0 * (y * v.z - z * v.y)
        ty = 2.0 * (z * v.x - x * v.z)
        tz = 2.0 * (x * v.y - y * v.x)
        return Vec3(
            v.x + w * tx + (y * tz - z * ty),
            v.y + w * ty + (z * tx - x * tz),
            v.z + w * tz + (x * ty - y * tx),
        )

    @staticmethod
    def from_basis(ex: Vec3, ey: Vec3, ez: Vec3) -> "UnitQuat":
        """Quaternion mapping local x/y/z axes onto the given orthonormal triple."""
        m00, m01, m02 = ex.x, ey.x, ez.x
        m10, m11, m12 = ex.y, ey.y, ez.y
        m20, m21, m22 = ex.z, ey.z, ez.z
        tr = m00 + m11 + m22
        if tr > 0.0:
            s = math.sqrt(tr + 1.0) * 2.0
            w = 0.25 * s
            x = (m21 - m12) / s
            y = (m02 - m20) / s
            z = (m10 - m01) / s
        elif m00 > m11 and m00 > m22:
            s = math.sqrt(1.0 + m00 - m11 - m22) * 2.0
            w = (m21 - m12) / s
            x = 0.25 * s
            y = (m01 + m10) / s
            z = (m02 + m20) / s
        elif m11 > m22:
            s = math.sqrt(1.0 + m11 - m00 - m22) * 2.0
            w = (m02 - m20) / s
            x = (m01 + m10) / s
            y = 0.25 * s
            z = (m12 + m21) / s
        else:
            s = math.sqrt(1.0 + m22 - m00 - m11) * 2.0
            w = (m10 - m01) / s
            x = (m02 + m20) / s
            y = (m12 + m21) / s
            z = 0.25 * s
        return UnitQuat.normalize(w, x, y, z)

    def is_finite(self) -> bool:
        return all(map(math.isfinite, self))

    def to_list(self) -> list[float]:
        return [self.w, self.x, self.y, self.z]

    @staticmethod
    def from_list(q) -> "UnitQuat":
        # Components pass through untouched (renormalizing would shift the
        # last ulp, breaking byte-identical parse -> serialize round trips);
        # unit length is checked, not restored.
        w, x, y, z = float(q[0]), float(q[1]), float(q[2]), float(q[3])
        n_sq = w * w + x * x + y * y + z * z
        if not math.isfinite(n_sq) or abs(n_sq - 1.0) > 1e-9:
            raise GeometryError("quaternion components are not unit length")
        return UnitQuat(w, x, y, z)


class Pose(NamedTuple):
    position: Vec3
    orientation: UnitQuat

    @staticmethod
    def identity() -> "Pose":
        return Pose(ZERO, UnitQuat.identity())

    def compose(self, local: "Pose") -> "Pose":
        """This pose applied to a pose expressed in its local frame."""
        return Pose(
            self.position + self.orientation.rotate(local.position),
            self.orientation * local.orientation,
        )

    def inverse(self) -> "Pose":
        qc = self.orientation.conj()
        return Pose(qc.rotate(self.position).scale(-1.0), qc)

    def is_finite(self) -> bool:
        return self.position.is_finite() and self.orientation.is_finite()

    def to_dict(self) -> dict:
        return {"p": self.position.to_list(), "q": self.orientation.to_list()}

    @staticmethod
    def from_dict(d) -> "Pose":
        return Pose(Vec3.from_list(d["p"]), UnitQuat.from_list(d["q"]))


class NeedleModel(NamedTuple):
    """Planar circular-arc needle: tip at body angle 0, tail at `span_deg`.

    The body lies on a circle of `radius_mm` in the needle's local XY plane,
    centered at the local origin; the local +Z axis is the needle plane normal.
    """

    radius_mm: float
    span_deg: float

    def validate(self) -> "NeedleModel":
        if not self.radius_mm > 0:
            raise GeometryError("needle radius must be positive")
        if not 0 < self.span_deg <= 360:
            raise GeometryError("needle span must be in (0, 360] degrees")
        if self.span_deg < 165:
            raise GeometryError("needle span must cover the 135-165 degree grasp range")
        return self


class ArcPath(NamedTuple):
    """Circular arc in 3D with an explicit angular frame.

    Angles are measured in the arc plane from `ref_dir` (angle 0) toward
    `plane_normal x ref_dir` (angle +90).  The arc runs from `start_deg` to
    `end_deg`; `drive_direction` is the sign of that sweep.
    """

    center: Vec3
    radius: float
    plane_normal: Vec3
    ref_dir: Vec3
    start_deg: float
    end_deg: float
    drive_direction: int

    def point_at(self, angle_deg: float) -> Vec3:
        u = self.ref_dir
        v = self.plane_normal.cross(self.ref_dir)
        a = angle_deg * DEG
        return self.center + u.scale(self.radius * math.cos(a)) + v.scale(self.radius * math.sin(a))

    def to_dict(self) -> dict:
        return {
            "center": self.center.to_list(),
            "radius": self.radius,
            "normal": self.plane_normal.to_list(),
            "ref": self.ref_dir.to_list(),
            "start_deg": self.start_deg,
            "end_deg": self.end_deg,
            "dir": self.drive_direction,
        }

    @staticmethod
    def from_dict(d) -> "ArcPath":
        return ArcPath(
            Vec3.from_list(d["center"]),
            float(d["radius"]),
            Vec3.from_list(d["normal"]),
            Vec3.from_list(d["ref"]),
            float(d["start_deg"]),
            float(d["end_deg"]),
            int(d["dir"]),
        )


def needle_point(pose: Pose, model: NeedleModel, theta_deg: float) -> Vec3:
    """World position of the needle-body point at angle `theta_deg` from the tip."""
    if not 0.0 <= theta_deg <= model.span_deg:
        raise GeometryError(
            f"needle angle {theta_deg} outside body range [0, {model.span_deg}]"
        )
    a = theta_deg * DEG
    local = Vec3(model.radius_mm * math.cos(a), model.radius_mm * math.sin(a), 0.0)
    return pose.position + pose.orientation.rotate(local)


def needle_plane_normal(pose: Pose) -> Vec3:
    """World-frame normal of the needle plane (local +Z)."""
    return pose.orientation.rotate(Z_AXIS)


def chord_arc(entry: Vec3, exit: Vec3, radius: float, surface_normal: Vec3) -> ArcPath:
    """Arc of the given radius through entry and exit, dipping below the chord.

    The arc lies in the plane spanned by the chord and the surface normal, with
    its center lifted h = sqrt(r^2 - (d/2)^2) off the chord midpoint along the
    component of the surface normal perpendicular to the chord.  The segment
    kept is the portion on the far side of the chord from the center (through
    the tissue), swept from entry to exit.
    """
    chord = exit - entry
    d = chord.norm()
    if d * d < _ZERO_SQ:
        raise GeometryError("entry and exit targets coincide")
    if d > 2.0 * radius:
        raise GeometryError(
            f"targets {d:.4f} mm apart exceed needle diameter {2.0 * radius:.4f} mm"
        )
    e1 = chord.scale(1.0 / d)
    up = surface_normal - e1.scale(surface_normal.dot(e1))
    if up.dot(up) < 1e-18:
        raise GeometryError("surface normal is parallel to the target chord")
    e2 = up.normalized()
    h = math.sqrt(max(radius * radius - 0.25 * d * d, 0.0))
    mid = entry + chord.scale(0.5)
    center = mid + e2.scale(h)
    normal = e1.cross(e2)

    start = math.atan2(-h, -0.5 * d) / DEG
    end = math.atan2(-h, 0.5 * d) / DEG
    if start > -90.0:
        # atan2 returned +180 for the h = 0 diameter chord; unwrap so the
        # start -> end sweep passes through the bottom of the circle (-90).
        start -= 360.0
    return ArcPath(center, radius, normal, e1, start, end, 1)


class ArcDeviation(NamedTuple):
    in_plane_mm: float
    out_plane_mm: float
    arc_angle_deg: float


def arc_deviation(p: Vec3, arc: ArcPath) -> ArcDeviation:
    """Decompose the offset of `p` from the arc circle.

    out_plane is the distance from the arc plane, in_plane the radial error of
    the in-plane projection, and arc_angle the angular coordinate of that
    projection, mapped into [start_deg, start_deg + 360).  A point on the arc
    axis has no angular coordinate; it is pinned to start_deg for stability.
    """
    rel = p - arc.center
    axial = rel.dot(arc.plane_normal)
    out_plane = abs(axial)
    radial = rel - arc.plane_normal.scale(axial)
    rho = radial.norm()
    if rho * rho < _ZERO_SQ:
        return ArcDeviation(arc.radius, out_plane, arc.start_deg)
    u = arc.ref_dir
    v = arc.plane_normal.cross(arc.ref_dir)
    angle = math.atan2(radial.dot(v), radial.dot(u)) / DEG
    angle = arc.start_deg + (angle - arc.start_deg) % 360.0
    return ArcDeviation(abs(rho - arc.radius), out_plane, angle)


def closest_body_angle(p: Vec3, pose: Pose, model: NeedleModel) -> tuple[float, float]:
    """Nearest needle-body angle to `p` and the distance to that body point."""
    local = pose.orientation.conj().rotate(p - pose.position)
    theta = math.atan2(local.y, local.x) / DEG % 360.0
    if theta > model.span_deg:
        # Off the body range: the closer end of the needle wins.
        gap_tail = theta - model.span_deg
        gap_tip = 360.0 - theta
        theta = model.span_deg if gap_tail <= gap_tip else 0.0
    nearest = needle_point(pose, model, theta)
    return theta, (p - nearest).norm()


def angle_on_needle(
    grasp_point: Vec3,
    pose: Pose,
    model: NeedleModel,
    tolerance_mm: float = NEEDLE_GRASP_TOLERANCE_MM,
) -> float:
    """Body angle of the needle point nearest to `grasp_point`.

    Raises GeometryError when the point lies farther than `tolerance_mm` from
    the needle body.
    """
    theta, dist = closest_body_angle(grasp_point, pose, model)
    if dist > tolerance_mm:
        raise GeometryError(
            f"point is {dist:.3f} mm from the needle body (tolerance {tolerance_mm} mm)"
        )
    return theta


def orientation_deviation(gripper_axis: Vec3, plane_normal: Vec3) -> float:
    """Unsigned angle in degrees between an axis and a plane normal, in [0, 90].

    Sign-insensitive in both arguments: flipping either vector leaves the
    result unchanged.
    """
    a = gripper_axis.normalized()
    n = plane_normal.normalized()
    c = min(1.0, abs(a.dot(n)))
    return math.acos(c) / DEG
