"""Per-session orchestration: one fixed-tick loop wiring the simulation,
progress manager, coach policy, cue lifecycle, metrics accumulation, and the
session recording together.

The engine is deterministic: its outputs are a pure function of (config,
mode, participant, handedness, seed, input stream).  Replaying a recorded
input stream through a fresh engine reproduces every tick record, event, cue
timeline, and the footer metrics bit for bit.
"""

from __future__ import annotations

from typing import NamedTuple, Optional

from . import coach, cues, metrics, task_core, tpm
from .geometry import ArcPath, Vec3, needle_point
from .session import SessionRecord, TickRecord
from .task_core import ICON_HELP, InputTick, SimEvent, TaskConfig
from .tpm import TpmEvent

# Where the playback projection assumes the viewer sits: looking down-forward
# at the task surface.  Components chosen so the vector is exactly unit.
DEFAULT_CAMERA_FORWARD = Vec3(0.0, 0.6, -0.8)


class EngineTickResult(NamedTuple):
    tick: int
    world: task_core.WorldState
    sim_events: list[SimEvent]
    tpm_events: list[TpmEvent]
    progress: tpm.TaskProgress
    cue_descriptors: list[cues.CueDescriptor]
    prompts: tuple[str, ...]
    forces: task_core.ContactForces
    done: bool


class Engine:
    def __init__(
        self,
        config: TaskConfig,
        mode: str,
        participant: str,
        handedness: str = "R",
        seed: int = 0,
        thresholds: Optional[coach.ThresholdTable] = None,
    ):
        if mode not in coach.ALL_MODES:
            raise ValueError(f"unknown coaching mode {mode!r}")
        config.validate()
        self.config = config
        self.mode = mode
        self.handedness = handedness
        self.thresholds = thresholds if thresholds is not None else coach.default_thresholds()
        self.world = task_core.initial_world(config)
        self.progress = tpm.initial_progress()
        self.lifecycle = cues.initial_lifecycle()
        self.record = SessionRecord(
            config=config, mode=mode, participant=participant, handedness=handedness, seed=seed
        )
        self.help_requested = False
        self.last_segment_metrics: Optional[metrics.SegmentMetrics] = None
        self.completion_tick: Optional[int] = None
        self._samples: list[metrics.MotionSample] = []
        self._sim_events: list[SimEvent] = []
        self._grasps: list[metrics.GraspObservation] = []
        self._segment_start_sample = 0
        self._segment_start_event = 0
        self._segment_grasp_start = 0
        self._arcs: dict[int, ArcPath] = {}
        self._arc_payloads: dict[int, dict] = {}
        self._playback_cache: Optional[tuple[cues.PlaybackCue, dict]] = None
        self._decide_cache: Optional[tuple] = None
        self._active_cache: Optional[tuple[frozenset, tuple]] = None
        self._tip_trajectory: list[tuple[int, Vec3]] = []
        self._context: Optional[tpm.SegmentContext] = None
        self._refresh_context()

    def _refresh_context(self) -> None:
        if self.progress.segment_index < self.config.n_pairs:
            self._context = tpm.current_context(self.progress, self.config)
            self._arcs[self.progress.segment_index] = self._context.ideal_arc
        else:
            self._context = None

    @property
    def context(self) -> Optional[tpm.SegmentContext]:
        """Targets and ideal arc of the segment in progress; None when done."""
        return self._context

    def _motion_sample(self, world: task_core.WorldState, segment: int) -> metrics.MotionSample:
        shaft_offset = Vec3(0.0, 0.0, metrics.RIBBON_SHAFT_MM)
        l_pose, r_pose = world.left.tip_pose, world.right.tip_pose
        return metrics.MotionSample(
            tick=world.tick,
            segment=segment,
            l_tip=l_pose.position,
            r_tip=r_pose.position,
            l_shaft=l_pose.position + l_pose.orientation.rotate(shaft_offset),
            r_shaft=r_pose.position + r_pose.orientation.rotate(shaft_offset),
            l_master=world.l_master,
            r_master=world.r_master,
            needle_tip=needle_point(world.needle_pose, self.config.needle, 0.0),
            grasped=world.grasp is not None,
        )

    def _segment_slice_metrics(self, segment: int) -> metrics.SegmentMetrics:
        arc = self._arcs[segment]
        samples = self._samples[self._segment_start_sample :]
        events = self._sim_events[self._segment_start_event :]
        grasps = [
            g for g in self._grasps[self._segment_grasp_start :] if g.segment == segment
        ]
        return metrics.segment_metrics(samples, events, grasps, arc, segment, self.config)

    def _build_descriptors(
        self, world: task_core.WorldState, intervention: coach.Intervention
    ) -> list[cues.CueDescriptor]:
        active = self.lifecycle.active
        if not active:
            return []
        out = []
        context = self._context
        model = self.config.needle
        kind_prompts = coach.prompts_by_kind(intervention)
        for kind in cues.ALL_CUE_KINDS:
            if kind not in active:
                continue
            prompt = kind_prompts.get(kind)
            if kind == cues.CUE_IDEAL_INSTRUMENT and context is not None:
                side = cues.ideal_instrument(context, world.left, world.right, self.handedness)
                payload = {"side": side}
            elif kind == cues.CUE_GRASP_POSITION:
                a, b = cues.grasp_position_cue(world.needle_pose, model)
                payload = {
                    "points": [a.to_list(), b.to_list()],
                    "flash_period_s": cues.GRASP_SPHERE_FLASH_PERIOD_S,
                }
            elif kind == cues.CUE_GRASP_ORIENTATION:
                gripper = (
                    world.left if self._grasping_side_hint() == "L" else world.right
                ).tip_pose
                ghost, alpha = cues.grasp_orientation_cue(world.needle_pose, model, gripper)
                payload = {"ghost": ghost.to_dict(), "alpha": alpha}
            elif kind == cues.CUE_IDEAL_DRIVE_PATH and context is not None:
                payload = self._arc_payload(self.progress.segment_index, context)
            elif kind == cues.CUE_TRAJECTORY_PLAYBACK and self.lifecycle.playback is not None:
                payload = self._playback_payload()
            elif kind == cues.CUE_VIDEO_DEMO:
                segment = min(self.progress.segment_index, self.config.n_pairs - 1)
                payload = {"clip": segment, "placement": self.lifecycle.video_placement}
            else:
                continue
            out.append(cues.CueDescriptor(kind, True, payload, prompt))
        return out

    def _arc_payload(self, segment: int, context: tpm.SegmentContext) -> dict:
        cached = self._arc_payloads.get(segment)
        if cached is None:
            cached = {"arc": context.ideal_arc.to_dict()}
            self._arc_payloads[segment] = cached
        return cached

    def _playback_payload(self) -> dict:
        """Payload of the active playback cue, built once per arming (the
        polyline can run to thousands of points)."""
        pb = self.lifecycle.playback
        if self._playback_cache is None or self._playback_cache[0] is not pb:
            payload = {
                "polyline": [p.to_list() for p in pb.polyline],
                "schedule": list(pb.schedule),
                "ideal": pb.ideal.to_dict(),
                "deadline": self.lifecycle.playback_deadline,
            }
            self._playback_cache = (pb, payload)
        return self._playback_cache[1]

    def _grasping_side_hint(self) -> str:
        """Side whose gripper the orientation ghost coaches: the grasping side
        while grasped, else the ideal side for the segment, else handedness."""
        if self.world.grasp is not None:
            return self.world.grasp.side
        if self._context is not None:
            return cues.ideal_instrument(
                self._context, self.world.left, self.world.right, self.handedness
            )
        return self.handedness

    def step(self, inp: InputTick) -> EngineTickResult:
        world, sim_events = task_core.step(self.world, inp, self.config)
        progress, tpm_events = tpm.advance(self.progress, sim_events, self.config)

        segment_before = self.progress.segment_index
        topo_before = self.progress.topo
        self.world = world
        self.progress = progress

        icon_activations: list[str] = []
        if sim_events:
            icon_activations = [
                e.payload["icon"] for e in sim_events if e.kind == "IconActivated"
            ]
            if ICON_HELP in icon_activations:
                self.help_requested = True

            # Record raw streams before anything derives from them.  Grasp
            # quality counts only for grasps taken while the needle is clear
            # of the tissue (the drive-initiating grasp); within a tick, grasp
            # events precede topology events, so the pre-tick topology is the
            # one that applies.
            self._sim_events.extend(sim_events)
            for e in sim_events:
                if (
                    e.kind == "GraspStart"
                    and topo_before == tpm.S0
                    and segment_before < self.config.n_pairs
                ):
                    self._grasps.append(
                        metrics.GraspObservation(
                            tick=e.tick,
                            segment=segment_before,
                            theta_deg=float(e.payload["theta"]),
                            orientation_dev_deg=float(e.payload["orientation_dev"]),
                        )
                    )
        sample_segment = min(segment_before, self.config.n_pairs - 1)
        sample = self._motion_sample(world, sample_segment)
        self._samples.append(sample)
        self._tip_trajectory.append((world.tick, sample.needle_tip))

        completed_playback = None
        segment_completed = None
        for te in tpm_events:
            if te.kind == "SegmentComplete":
                segment_completed = te.payload["segment"]
            elif te.kind == "TaskComplete":
                self.completion_tick = te.tick

        if segment_completed is not None:
            self.last_segment_metrics = self._segment_slice_metrics(segment_completed)
            trajectory = self._tip_trajectory[self._segment_start_sample :]
            try:
                completed_playback = cues.playback_cue(
                    trajectory,
                    DEFAULT_CAMERA_FORWARD,
                    self.config.surface_normal,
                    self._arcs[segment_completed],
                )
            except ValueError:
                completed_playback = None
            self.help_requested = False
            self._segment_start_sample = len(self._samples)
            self._segment_start_event = len(self._sim_events)
            self._segment_grasp_start = len(self._grasps)
            self._refresh_context()

        # The decision only changes when its inputs do (segment rollover or a
        # help toggle), so cache it across the ticks in between.
        cached = self._decide_cache
        if (
            cached is not None
            and cached[0] is self.last_segment_metrics
            and cached[1] == self.help_requested
        ):
            intervention = cached[2]
        else:
            intervention = coach.decide(
                self.mode, self.last_segment_metrics, self.help_requested, self.thresholds
            )
            self._decide_cache = (self.last_segment_metrics, self.help_requested, intervention)
        self.lifecycle = cues.update_cues(
            self.lifecycle,
            tpm_events,
            intervention.authorized,
            icon_activations,
            world.tick,
            self.config,
            self.progress.phase,
            self.progress.topo,
            completed_playback,
        )

        descriptors = self._build_descriptors(world, intervention)

        active = self.lifecycle.active
        if self._active_cache is None or self._active_cache[0] != active:
            self._active_cache = (active, tuple(sorted(active)))

        self.record.append_tick(
            TickRecord(
                tick=world.tick,
                l_pose=inp.l_pose,
                l_jaw=inp.l_jaw,
                r_pose=inp.r_pose,
                r_jaw=inp.r_jaw,
                l_master=inp.l_master,
                r_master=inp.r_master,
                needle_pose=world.needle_pose,
                cues=self._active_cache[1],
            )
        )
        if sim_events:
            for e in sim_events:
                self.record.append_sim_event(e)
        if tpm_events:
            for te in tpm_events:
                self.record.append_tpm_event(te)

        return EngineTickResult(
            tick=world.tick,
            world=world,
            sim_events=sim_events,
            tpm_events=tpm_events,
            progress=self.progress,
            cue_descriptors=descriptors,
            prompts=intervention.prompts,
            forces=world.forces,
            done=self.progress.phase == tpm.PHASE_COMPLETE,
        )

    def task_metrics(self) -> metrics.TaskMetrics:
        return metrics.aggregate(
            self._samples,
            self._sim_events,
            self._grasps,
            self._arcs,
            self.config,
            self.completion_tick,
        )

    def finalize(self) -> SessionRecord:
        self.record.footer = metrics.task_metrics_to_row_dict(self.task_metrics())
        return self.record
