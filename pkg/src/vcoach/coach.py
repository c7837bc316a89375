"""Coaching-mode policies: which cues may appear, and why.

Four policies share one decision function.  Teach authorizes everything all
the time; Metrics authorizes only cues whose matching metric busted its
threshold on the previous segment, each carrying a cause-bearing prompt that
holds for that segment only; User authorizes everything while the help latch
is set; None authorizes nothing and serves as the control arm.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, fields
from typing import NamedTuple, Optional

from .cues import (
    ALL_CUE_KINDS,
    CUE_GRASP_ORIENTATION,
    CUE_GRASP_POSITION,
    CUE_IDEAL_DRIVE_PATH,
    CUE_VIDEO_DEMO,
)

MODE_TEACH = "teach"
MODE_METRICS = "metrics"
MODE_USER = "user"
MODE_NONE = "none"

ALL_MODES = (MODE_TEACH, MODE_METRICS, MODE_USER, MODE_NONE)


@dataclass(frozen=True)
class ThresholdTable:
    grasp_position_dev_deg: float
    grasp_orientation_dev_deg: float
    in_plane_dev_mm: float
    out_plane_dev_mm: float
    segment_time_s: float
    excess_pierces: float

    def validate(self) -> "ThresholdTable":
        for f in fields(self):
            if not getattr(self, f.name) > 0:
                raise ValueError(f"threshold {f.name} must be positive")
        return self

    def to_dict(self) -> dict:
        return {f.name: getattr(self, f.name) for f in fields(self)}

    @staticmethod
    def from_dict(d: dict) -> "ThresholdTable":
        return ThresholdTable(**{k: float(v) for k, v in d.items()}).validate()

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), sort_keys=True)

    @staticmethod
    def from_json(s: str) -> "ThresholdTable":
        return ThresholdTable.from_dict(json.loads(s))


def default_thresholds() -> ThresholdTable:
    return ThresholdTable(
        grasp_position_dev_deg=10.0,
        grasp_orientation_dev_deg=15.0,
        in_plane_dev_mm=1.0,
        out_plane_dev_mm=1.0,
        segment_time_s=30.0,
        excess_pierces=1.0,
    ).validate()


class TriggerRule(NamedTuple):
    metric: str  # SegmentMetrics field name
    threshold_field: str
    cue: str
    template: str  # format(value, threshold)


# Which previous-segment metric unlocks which cue under the Metrics policy.
TRIGGER_RULES = (
    TriggerRule(
        "grasp_position_dev_deg",
        "grasp_position_dev_deg",
        CUE_GRASP_POSITION,
        "Grasp position was {value:.1f} deg from the ideal last pass (limit {threshold:.1f} deg).",
    ),
    TriggerRule(
        "grasp_orientation_dev_deg",
        "grasp_orientation_dev_deg",
        CUE_GRASP_ORIENTATION,
        "Grasp direction deviated {value:.1f} deg from the needle plane normal last pass (limit {threshold:.1f} deg).",
    ),
    TriggerRule(
        "in_plane_dev_mm",
        "in_plane_dev_mm",
        CUE_IDEAL_DRIVE_PATH,
        "Drive strayed {value:.2f} mm from the ideal path depth last pass (limit {threshold:.2f} mm).",
    ),
    TriggerRule(
        "out_plane_dev_mm",
        "out_plane_dev_mm",
        CUE_IDEAL_DRIVE_PATH,
        "Drive strayed {value:.2f} mm sideways off the ideal plane last pass (limit {threshold:.2f} mm).",
    ),
    TriggerRule(
        "time_s",
        "segment_time_s",
        CUE_VIDEO_DEMO,
        "Last pass took {value:.1f} s (limit {threshold:.1f} s).",
    ),
    TriggerRule(
        "excess_pierces",
        "excess_pierces",
        CUE_IDEAL_DRIVE_PATH,
        "{value:.0f} excess pierce(s) last pass (limit {threshold:.0f}).",
    ),
)


class Cause(NamedTuple):
    metric: str
    value: float
    threshold: float


class Intervention(NamedTuple):
    authorized: frozenset
    prompts: tuple[str, ...]
    causes: tuple[Cause, ...]


EMPTY_INTERVENTION = Intervention(frozenset(), (), ())
FULL_INTERVENTION = Intervention(frozenset(ALL_CUE_KINDS), (), ())


def prompts_by_kind(intervention: Intervention) -> dict:
    """Each triggered cue's cause prompts joined, keyed by cue kind."""
    metric_to_cue = {rule.metric: rule.cue for rule in TRIGGER_RULES}
    out: dict = {}
    for cause, prompt in zip(intervention.causes, intervention.prompts):
        kind = metric_to_cue[cause.metric]
        out[kind] = (out[kind] + " " + prompt) if kind in out else prompt
    return out


def decide(
    mode: str,
    last_segment_metrics: Optional[object],
    help_requested: bool,
    thresholds: ThresholdTable,
) -> Intervention:
    """Authorize cue kinds for the current segment."""
    if mode == MODE_TEACH:
        return FULL_INTERVENTION
    if mode == MODE_NONE:
        return EMPTY_INTERVENTION
    if mode == MODE_USER:
        return FULL_INTERVENTION if help_requested else EMPTY_INTERVENTION
    if mode == MODE_METRICS:
        if last_segment_metrics is None:
            return EMPTY_INTERVENTION
        kinds = set()
        prompts = []
        causes = []
        for rule in TRIGGER_RULES:
            value = getattr(last_segment_metrics, rule.metric)
            if value is None:
                continue
            threshold = getattr(thresholds, rule.threshold_field)
            if value > threshold:
                kinds.add(rule.cue)
                prompts.append(rule.template.format(value=value, threshold=threshold))
                causes.append(Cause(rule.metric, value, threshold))
        return Intervention(frozenset(kinds), tuple(prompts), tuple(causes))
    raise ValueError(f"unknown coaching mode {mode!r}")
