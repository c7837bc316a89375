"""Motion-efficiency, error, and deficit metrics, per segment and per task.

All computations are pure folds over the per-tick motion samples and the
event log, so values computed live during a session equal values recomputed
offline from its recording.
"""

from __future__ import annotations

from typing import NamedTuple, Optional, Sequence

import numpy as np
from scipy.spatial import ConvexHull, QhullError

from .geometry import ArcPath, Vec3, arc_deviation
from .task_core import SimEvent, TaskConfig
from .tpm import GRASP_IDEAL_DEG

# Movement-onset hysteresis on the smoothed tip speed.
MOVE_SPEED_LOW = 2.0  # mm/s
MOVE_SPEED_HIGH = 5.0  # mm/s
MOVE_SMOOTHING_WINDOW = 5  # samples

# The swept-ribbon instrument segment runs this far up the shaft from the tip.
RIBBON_SHAFT_MM = 10.0


class InsufficientDataError(ValueError):
    """Raised when a metric needs more samples than the stream provides."""


class MotionSample(NamedTuple):
    tick: int
    segment: int
    l_tip: Vec3
    r_tip: Vec3
    l_shaft: Vec3
    r_shaft: Vec3
    l_master: Vec3
    r_master: Vec3
    needle_tip: Vec3
    grasped: bool


class SegmentMetrics(NamedTuple):
    time_s: float
    grasp_position_dev_deg: Optional[float]
    grasp_orientation_dev_deg: Optional[float]
    in_plane_dev_mm: Optional[float]
    out_plane_dev_mm: Optional[float]
    excess_pierces: int
    path_length_mm: float


class TaskMetrics(NamedTuple):
    completion_time_s: float
    path_length_mm: float
    movements_per_s: float
    ribbon_area_mm2: float
    master_path_length_mm: float
    master_workspace_volume_mm3: float
    excess_needle_pierces: int
    excess_instrument_force_count: int
    excess_instrument_force_time_s: float
    excess_needle_tissue_force_count: int
    excess_needle_tissue_force_time_s: float
    grasp_position_dev_deg: Optional[float]
    grasp_orientation_dev_deg: Optional[float]
    in_plane_dev_mm: Optional[float]
    out_plane_dev_mm: Optional[float]


# Report row names, in presentation order.  The names are the stable keys of
# the serialized metrics record; do not edit without versioning the format.
METRIC_ROWS = (
    ("Completion Time (s)", "completion_time_s", "continuous"),
    ("Path Length (mm)", "path_length_mm", "continuous"),
    ("Movements (count/s)", "movements_per_s", "continuous"),
    ("Ribbon Area (mm^2)", "ribbon_area_mm2", "continuous"),
    ("Master Path Length (mm)", "master_path_length_mm", "continuous"),
    ("Master Workspace Volume (mm^3)", "master_workspace_volume_mm3", "continuous"),
    ("Exc. Needle Pierces", "excess_needle_pierces", "count"),
    ("Exc. Instrument Force (Count)", "excess_instrument_force_count", "count"),
    ("Exc. Instrument Force (Time) (s)", "excess_instrument_force_time_s", "continuous"),
    ("Exc. Needle Tissue Force (Count)", "excess_needle_tissue_force_count", "count"),
    ("Exc. Needle Tissue Force (Time) (s)", "excess_needle_tissue_force_time_s", "continuous"),
    ("Grasp Position Dev. (degree)", "grasp_position_dev_deg", "continuous"),
    ("Grasp Orientation Dev. (degree)", "grasp_orientation_dev_deg", "continuous"),
    ("Ideal Drive Path Dev. (In) (mm)", "in_plane_dev_mm", "continuous"),
    ("Ideal Drive Path Dev. (Out) (mm)", "out_plane_dev_mm", "continuous"),
)

METRIC_NAMES = tuple(name for name, _, _ in METRIC_ROWS)
METRIC_KINDS = {name: kind for name, _, kind in METRIC_ROWS}


def task_metrics_to_row_dict(m: TaskMetrics) -> dict:
    return {name: getattr(m, field) for name, field, _ in METRIC_ROWS}


def task_metrics_from_row_dict(d: dict) -> TaskMetrics:
    # Values pass through untouched: ints stay ints and floats stay floats so
    # a parse -> serialize round trip is byte-identical.
    return TaskMetrics(**{field: d[name] for name, field, _ in METRIC_ROWS})


def path_length(samples: Sequence[MotionSample]) -> float:
    if len(samples) < 2:
        raise InsufficientDataError("path length needs at least two samples")
    total = 0.0
    prev = samples[0]
    for s in samples[1:]:
        total += (s.l_tip - prev.l_tip).norm() + (s.r_tip - prev.r_tip).norm()
        prev = s
    return total


def master_path_length(samples: Sequence[MotionSample]) -> float:
    if len(samples) < 2:
        raise InsufficientDataError("master path length needs at least two samples")
    total = 0.0
    prev = samples[0]
    for s in samples[1:]:
        total += (s.l_master - prev.l_master).norm() + (s.r_master - prev.r_master).norm()
        prev = s
    return total


def _onsets(positions: Sequence[Vec3], tick_rate: float, v_lo: float, v_hi: float) -> int:
    speeds = []
    for k in range(1, len(positions)):
        speeds.append((positions[k] - positions[k - 1]).norm() * tick_rate)
    onsets = 0
    armed = True  # sessions start at rest
    acc = 0.0
    window: list[float] = []
    for v in speeds:
        window.append(v)
        acc += v
        if len(window) > MOVE_SMOOTHING_WINDOW:
            acc -= window.pop(0)
        smoothed = acc / len(window)
        if armed and smoothed > v_hi:
            onsets += 1
            armed = False
        elif not armed and smoothed < v_lo:
            armed = True
    return onsets


def movements_rate(
    samples: Sequence[MotionSample],
    tick_rate: float,
    v_lo: float = MOVE_SPEED_LOW,
    v_hi: float = MOVE_SPEED_HIGH,
) -> float:
    """Distinct movement onsets per second, summed over both instruments.

    An onset is the smoothed tip speed crossing above v_hi after having been
    below v_lo (hysteresis suppresses jitter re-triggers).
    """
    if len(samples) < 2:
        raise InsufficientDataError("movement rate needs at least two samples")
    duration = (samples[-1].tick - samples[0].tick) / tick_rate
    if duration <= 0.0:
        return 0.0
    count = _onsets([s.l_tip for s in samples], tick_rate, v_lo, v_hi) + _onsets(
        [s.r_tip for s in samples], tick_rate, v_lo, v_hi
    )
    return count / duration


def _tri_area(a: Vec3, b: Vec3, c: Vec3) -> float:
    return 0.5 * (b - a).cross(c - a).norm()


def ribbon_area(samples: Sequence[MotionSample]) -> float:
    """Area swept by the tip-shaft segment of each instrument."""
    if len(samples) < 2:
        raise InsufficientDataError("ribbon area needs at least two samples")
    total = 0.0
    prev = samples[0]
    for s in samples[1:]:
        for tip0, shaft0, tip1, shaft1 in (
            (prev.l_tip, prev.l_shaft, s.l_tip, s.l_shaft),
            (prev.r_tip, prev.r_shaft, s.r_tip, s.r_shaft),
        ):
            total += _tri_area(tip0, shaft0, shaft1) + _tri_area(tip0, shaft1, tip1)
        prev = s
    return total


def master_workspace_volume(points: Sequence[Vec3]) -> float:
    """Convex-hull volume of the pooled master positions; 0 when degenerate."""
    if len(points) < 4:
        return 0.0
    arr = np.array([[p.x, p.y, p.z] for p in points], dtype=float)
    try:
        return float(ConvexHull(arr).volume)
    except QhullError:
        return 0.0


class ErrorMetrics(NamedTuple):
    excess_needle_pierces: int
    excess_instrument_force_count: int
    excess_instrument_force_time_s: float
    excess_needle_tissue_force_count: int
    excess_needle_tissue_force_time_s: float


def _force_totals(
    events: Sequence[SimEvent], final_tick: int, tick_rate: float
) -> tuple[int, float, int, float]:
    counts = {"instrument": 0, "needle_tissue": 0}
    times = {"instrument": 0.0, "needle_tissue": 0.0}
    open_since: dict[str, int] = {}
    for e in events:
        if e.kind not in ("ForceExceedStart", "ForceExceedEnd"):
            continue
        source = e.payload["source"]
        group = "needle_tissue" if source == "needle_tissue" else "instrument"
        if e.kind == "ForceExceedStart":
            counts[group] += 1
            open_since[source] = e.tick
        else:
            start = open_since.pop(source, None)
            if start is not None:
                times[group] += (e.tick - start) / tick_rate
    for source, start in sorted(open_since.items()):
        # An exceedance still open at the end of the log closes at the final tick.
        group = "needle_tissue" if source == "needle_tissue" else "instrument"
        times[group] += (final_tick - start) / tick_rate
    return (
        counts["instrument"],
        times["instrument"],
        counts["needle_tissue"],
        times["needle_tissue"],
    )


def _excess_pierces(events: Sequence[SimEvent], config: TaskConfig) -> int:
    """Off-target pierces plus re-pierces of a segment's entry after retraction."""
    from . import tpm  # local import to avoid a cycle at module load

    progress = tpm.initial_progress()
    excess = 0
    entered: set[int] = set()
    for e in events:
        if e.kind == "Pierce":
            target = e.payload.get("target")
            if target is None:
                excess += 1
            elif (
                progress.topo == tpm.S0
                and progress.segment_index < config.n_pairs
                and int(target) == progress.segment_index
                and e.payload.get("point") == "entry"
                and progress.segment_index in entered
            ):
                excess += 1
        progress, tpm_events = tpm.advance(progress, [e], config)
        for te in tpm_events:
            if te.kind == "StateChanged" and te.payload.get("to") == tpm.S1:
                entered.add(progress.segment_index)
    return excess


def error_metrics(
    events: Sequence[SimEvent], config: TaskConfig, final_tick: int
) -> ErrorMetrics:
    inst_count, inst_time, tissue_count, tissue_time = _force_totals(
        events, final_tick, config.tick_rate
    )
    return ErrorMetrics(
        excess_needle_pierces=_excess_pierces(events, config),
        excess_instrument_force_count=inst_count,
        excess_instrument_force_time_s=inst_time,
        excess_needle_tissue_force_count=tissue_count,
        excess_needle_tissue_force_time_s=tissue_time,
    )


class GraspObservation(NamedTuple):
    tick: int
    segment: int
    theta_deg: float
    orientation_dev_deg: float


class DeficitMetrics(NamedTuple):
    grasp_position_dev_deg: Optional[float]
    grasp_orientation_dev_deg: Optional[float]
    in_plane_dev_mm: Optional[float]
    out_plane_dev_mm: Optional[float]


def _mean(values: list[float]) -> Optional[float]:
    return sum(values) / len(values) if values else None


def deficit_metrics(
    samples: Sequence[MotionSample],
    grasps: Sequence[GraspObservation],
    arcs: dict[int, ArcPath],
    surface_normal: Vec3,
) -> DeficitMetrics:
    """Average deviations from the cue-defined ideals.

    Grasp deviations average over the drive-initiating grasps; path deviations
    average over samples where the needle tip is below the surface, against
    the ideal arc of the sample's segment.  Absent observations are reported
    as missing rather than zero so imputation can handle them downstream.
    """
    position = _mean([abs(g.theta_deg - GRASP_IDEAL_DEG) for g in grasps])
    orientation = _mean([g.orientation_dev_deg for g in grasps])
    in_plane: list[float] = []
    out_plane: list[float] = []
    for s in samples:
        if s.needle_tip.dot(surface_normal) >= 0.0:
            continue
        arc = arcs.get(s.segment)
        if arc is None:
            continue
        dev = arc_deviation(s.needle_tip, arc)
        in_plane.append(dev.in_plane_mm)
        out_plane.append(dev.out_plane_mm)
    return DeficitMetrics(position, orientation, _mean(in_plane), _mean(out_plane))


def segment_metrics(
    samples: Sequence[MotionSample],
    events: Sequence[SimEvent],
    grasps: Sequence[GraspObservation],
    arc: ArcPath,
    segment: int,
    config: TaskConfig,
) -> SegmentMetrics:
    """Metrics for one completed segment, from its slice of the streams."""
    deficits = deficit_metrics(samples, grasps, {segment: arc}, config.surface_normal)
    time_s = (
        (samples[-1].tick - samples[0].tick) / config.tick_rate if len(samples) > 1 else 0.0
    )
    return SegmentMetrics(
        time_s=time_s,
        grasp_position_dev_deg=deficits.grasp_position_dev_deg,
        grasp_orientation_dev_deg=deficits.grasp_orientation_dev_deg,
        in_plane_dev_mm=deficits.in_plane_dev_mm,
        out_plane_dev_mm=deficits.out_plane_dev_mm,
        excess_pierces=_excess_pierces_segment(events, segment, config),
        path_length_mm=path_length(samples) if len(samples) >= 2 else 0.0,
    )


def _excess_pierces_segment(events: Sequence[SimEvent], segment: int, config: TaskConfig) -> int:
    excess = 0
    entered = False
    for e in events:
        if e.kind != "Pierce":
            continue
        target = e.payload.get("target")
        if target is None:
            excess += 1
        elif int(target) == segment and e.payload.get("point") == "entry":
            if entered:
                excess += 1
            entered = True
    return excess


def aggregate(
    samples: Sequence[MotionSample],
    events: Sequence[SimEvent],
    grasps: Sequence[GraspObservation],
    arcs: dict[int, ArcPath],
    config: TaskConfig,
    completion_tick: Optional[int],
) -> TaskMetrics:
    """Task-level metrics over the full streams.

    `completion_tick` is the tick of task completion when the protocol
    finished, else None and the last sample closes the session.
    """
    if len(samples) < 2:
        raise InsufficientDataError("cannot aggregate an empty session")
    final_tick = samples[-1].tick
    end_tick = completion_tick if completion_tick is not None else final_tick
    deficits = deficit_metrics(samples, grasps, arcs, config.surface_normal)
    errors = error_metrics(events, config, final_tick)
    masters = [s.l_master for s in samples] + [s.r_master for s in samples]
    return TaskMetrics(
        completion_time_s=(end_tick - samples[0].tick) / config.tick_rate,
        path_length_mm=path_length(samples),
        movements_per_s=movements_rate(samples, config.tick_rate),
        ribbon_area_mm2=ribbon_area(samples),
        master_path_length_mm=master_path_length(samples),
        master_workspace_volume_mm3=master_workspace_volume(masters),
        excess_needle_pierces=errors.excess_needle_pierces,
        excess_instrument_force_count=errors.excess_instrument_force_count,
        excess_instrument_force_time_s=errors.excess_instrument_force_time_s,
        excess_needle_tissue_force_count=errors.excess_needle_tissue_force_count,
        excess_needle_tissue_force_time_s=errors.excess_needle_tissue_force_time_s,
        grasp_position_dev_deg=deficits.grasp_position_dev_deg,
        grasp_orientation_dev_deg=deficits.grasp_orientation_dev_deg,
        in_plane_dev_mm=deficits.in_plane_dev_mm,
        out_plane_dev_mm=deficits.out_plane_dev_mm,
    )
