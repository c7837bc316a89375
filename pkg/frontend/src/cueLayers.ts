// Cue-layer scene reduction.  Stateless by contract: each ServerState fully
// determines the scene, so re-feeding a recorded stream reproduces the same
// visual timeline.  All geometry comes from the descriptors; the client does
// no cue math of its own.

import type { ArcDict, CueDescriptor, PoseDict, ServerState, Vec3List } from "./protocol.js";

export const KIND_IDEAL_INSTRUMENT = "IdealInstrument";
export const KIND_GRASP_POSITION = "GraspPosition";
export const KIND_GRASP_ORIENTATION = "GraspOrientation";
export const KIND_IDEAL_DRIVE_PATH = "IdealDrivePath";
export const KIND_TRAJECTORY_PLAYBACK = "TrajectoryPlayback";
export const KIND_VIDEO_DEMO = "VideoDemo";

export const KNOWN_KINDS: ReadonlySet<string> = new Set([
  KIND_IDEAL_INSTRUMENT,
  KIND_GRASP_POSITION,
  KIND_GRASP_ORIENTATION,
  KIND_IDEAL_DRIVE_PATH,
  KIND_TRAJECTORY_PLAYBACK,
  KIND_VIDEO_DEMO,
]);

export interface CueLayer {
  kind: string;
  drawn: boolean; // declared but not drawn when the descriptor says so (ghost alpha 0)
  prompt: string | null;
  payload: Record<string, unknown>;
}

export interface CueScene {
  tick: number;
  phase: string;
  topo: string;
  seg: number;
  layers: Map<string, CueLayer>;
  prompts: string[];
  videoPlacement: string | null;
  videoClip: number | null;
}

export type WarnFn = (message: string) => void;

function layerOf(cue: CueDescriptor): CueLayer {
  let drawn = cue.visible;
  if (cue.kind === KIND_GRASP_ORIENTATION && drawn) {
    // Converged gripper: the server ships alpha 0 and the ghost vanishes.
    drawn = (cue.payload.alpha as number) > 0;
  }
  return { kind: cue.kind, drawn, prompt: cue.prompt ?? null, payload: cue.payload };
}

export function reduceState(
  state: ServerState,
  warn: WarnFn = (m) => console.warn(m)
): CueScene {
  const layers = new Map<string, CueLayer>();
  let videoPlacement: string | null = null;
  let videoClip: number | null = null;
  for (const cue of state.cues) {
    if (!KNOWN_KINDS.has(cue.kind)) {
      warn(`ignoring unknown cue kind "${cue.kind}"`); // forward compatibility
      continue;
    }
    layers.set(cue.kind, layerOf(cue));
    if (cue.kind === KIND_VIDEO_DEMO) {
      videoPlacement = cue.payload.placement as string;
      videoClip = cue.payload.clip as number;
    }
  }
  return {
    tick: state.tick,
    phase: state.phase,
    topo: state.topo,
    seg: state.seg,
    layers,
    prompts: state.prompts,
    videoPlacement,
    videoClip,
  };
}

// Typed payload accessors for the renderer.
export function ghostPose(scene: CueScene): { pose: PoseDict; alpha: number } | null {
  const layer = scene.layers.get(KIND_GRASP_ORIENTATION);
  if (!layer || !layer.drawn) return null;
  return { pose: layer.payload.ghost as PoseDict, alpha: layer.payload.alpha as number };
}

export function graspPoints(scene: CueScene): Vec3List[] {
  const layer = scene.layers.get(KIND_GRASP_POSITION);
  return layer ? (layer.payload.points as Vec3List[]) : [];
}

export function idealArc(scene: CueScene): ArcDict | null {
  const layer = scene.layers.get(KIND_IDEAL_DRIVE_PATH);
  return layer ? (layer.payload.arc as ArcDict) : null;
}

export interface PlaybackData {
  polyline: Vec3List[];
  schedule: number[];
  ideal: ArcDict;
  deadline: number;
}

export function playback(scene: CueScene): PlaybackData | null {
  const layer = scene.layers.get(KIND_TRAJECTORY_PLAYBACK);
  return layer ? (layer.payload as unknown as PlaybackData) : null;
}

// One line per run of identical cue signatures; the snapshot test freezes
// this, so a coaching-logic regression shows up as a timeline diff.
export interface TimelineRun {
  fromTick: number;
  toTick: number;
  phase: string;
  kinds: string[];
  video: string | null;
}

export function cueTimeline(states: ServerState[], warn: WarnFn = () => {}): TimelineRun[] {
  const runs: TimelineRun[] = [];
  for (const state of states) {
    const scene = reduceState(state, warn);
    const kinds = [...scene.layers.keys()].sort();
    const video = scene.videoPlacement && `${scene.videoPlacement}#${scene.videoClip}`;
    const last = runs[runs.length - 1];
    if (
      last &&
      last.phase === scene.phase &&
      last.video === video &&
      last.kinds.join() === kinds.join() &&
      last.toTick === scene.tick - 1
    ) {
      last.toTick = scene.tick;
    } else {
      runs.push({ fromTick: scene.tick, toTick: scene.tick, phase: scene.phase, kinds, video });
    }
  }
  return runs;
}
