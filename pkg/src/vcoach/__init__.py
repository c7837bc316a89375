"""Needle-passing training simulator with an automated coaching layer.

The package simulates a bimanual needle-passing task on a tissue disc, tracks
task protocol state, overlays geometric teaching cues under selectable
coaching modes, scores sessions with kinematic and error metrics, records and
deterministically replays sessions, generates synthetic cohorts with injected
skill effects, and compares cohorts with rank statistics.
"""

from .analytics import (
    AnalyticsError,
    ParticipantSeries,
    cohens_d,
    cohort_report,
    compare_arms,
    grid_csv,
    improvement,
    impute,
    mann_whitney_u,
    report_dict,
    report_table,
)
from .coach import ALL_MODES, MODE_METRICS, MODE_NONE, MODE_TEACH, MODE_USER, decide
from .cues import ALL_CUE_KINDS, CueDescriptor
from .engine import Engine, EngineTickResult
from .geometry import (
    ArcPath,
    GeometryError,
    NeedleModel,
    Pose,
    UnitQuat,
    Vec3,
    arc_deviation,
    chord_arc,
    needle_point,
)
# The service stack (vcoach.service.build_app) is imported on demand so the
# core stays importable without the server dependencies loaded.
from .metrics import METRIC_NAMES, MotionSample, TaskMetrics, aggregate
from .session import (
    SessionFormatError,
    SessionRecord,
    expert_clip,
    extract_clip,
    load_session,
    read_summary,
    replay,
    save_session,
    store_clip,
    verify_replay,
)
from .synth import (
    GenerationError,
    SynthProfile,
    expert_profile,
    novice_profile,
    profile_for,
    scaled_profile,
    synth_session,
)
from .task_core import (
    ContactForces,
    InputTick,
    SimEvent,
    TaskConfig,
    WorldState,
    default_task_config,
    initial_world,
)
from .tpm import TaskProgress, TpmEvent, advance, current_context

__version__ = "0.1.0"

__all__ = [
    "ALL_CUE_KINDS",
    "ALL_MODES",
    "AnalyticsError",
    "ArcPath",
    "ContactForces",
    "CueDescriptor",
    "Engine",
    "EngineTickResult",
    "GenerationError",
    "GeometryError",
    "InputTick",
    "METRIC_NAMES",
    "MODE_METRICS",
    "MODE_NONE",
    "MODE_TEACH",
    "MODE_USER",
    "MotionSample",
    "NeedleModel",
    "ParticipantSeries",
    "Pose",
    "SessionFormatError",
    "SessionRecord",
    "SimEvent",
    "SynthProfile",
    "TaskConfig",
    "TaskMetrics",
    "TaskProgress",
    "TpmEvent",
    "UnitQuat",
    "Vec3",
    "WorldState",
    "advance",
    "aggregate",
    "arc_deviation",
    "chord_arc",
    "cohens_d",
    "cohort_report",
    "compare_arms",
    "current_context",
    "decide",
    "default_task_config",
    "expert_clip",
    "extract_clip",
    "expert_profile",
    "grid_csv",
    "improvement",
    "impute",
    "initial_world",
    "load_session",
    "mann_whitney_u",
    "needle_point",
    "novice_profile",
    "profile_for",
    "read_summary",
    "replay",
    "report_dict",
    "report_table",
    "save_session",
    "scaled_profile",
    "store_clip",
    "synth_session",
    "verify_replay",
]
