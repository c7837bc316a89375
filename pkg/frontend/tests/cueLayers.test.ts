import { describe, expect, it } from "vitest";

import {
  KIND_GRASP_ORIENTATION,
  KIND_IDEAL_DRIVE_PATH,
  KIND_TRAJECTORY_PLAYBACK,
  KIND_VIDEO_DEMO,
  cueTimeline,
  ghostPose,
  playback,
  reduceState,
} from "../src/cueLayers.js";
import type { ServerState } from "../src/protocol.js";
import { streamStates } from "./stream.js";

describe("cue-layer timeline from a recorded stream", () => {
  it("matches the frozen timeline", () => {
    expect(cueTimeline(streamStates())).toMatchSnapshot();
  });

  it("is deterministic: re-feeding the stream reproduces it exactly", () => {
    const first = cueTimeline(streamStates());
    const second = cueTimeline(streamStates());
    expect(second).toEqual(first);
  });

  it("walks setup -> driving -> playback -> video-only", () => {
    const runs = cueTimeline(streamStates());
    expect(runs).toHaveLength(4);
    expect(runs[0].phase).toBe("Setup");
    expect(runs[0].kinds).toHaveLength(5);
    expect(runs[1].kinds).toEqual([KIND_IDEAL_DRIVE_PATH, KIND_VIDEO_DEMO]);
    expect(runs[2].kinds).toEqual([KIND_TRAJECTORY_PLAYBACK, KIND_VIDEO_DEMO]);
    expect(runs[3].kinds).toEqual([KIND_VIDEO_DEMO]);
    // 10 s of playback at the stream's 25 Hz tick rate.
    expect(runs[2].toTick - runs[2].fromTick + 1).toBe(250);
    // The video demo never disappears.
    for (const run of runs) expect(run.kinds).toContain(KIND_VIDEO_DEMO);
  });

  it("ships a playback whose deadline closes the window", () => {
    const states = streamStates();
    const during = states.find((s) => s.cues.some((c) => c.kind === KIND_TRAJECTORY_PLAYBACK))!;
    const pb = playback(reduceState(during))!;
    expect(pb.polyline.length).toBe(pb.schedule.length);
    const runs = cueTimeline(states);
    expect(pb.deadline).toBe(runs[2].toTick + 1);
  });
});

describe("descriptor handling", () => {
  const firstState = () => streamStates()[0];

  it("hides the orientation ghost once the server says it converged", () => {
    const state = firstState();
    const ghostCue = state.cues.find((c) => c.kind === KIND_GRASP_ORIENTATION)!;
    expect(ghostPose(reduceState(state))).not.toBeNull();
    const converged: ServerState = {
      ...state,
      cues: state.cues.map((c) =>
        c.kind === KIND_GRASP_ORIENTATION ? { ...c, payload: { ...c.payload, alpha: 0 } } : c
      ),
    };
    expect(ghostCue.payload.alpha).not.toBe(0);
    expect(ghostPose(reduceState(converged))).toBeNull();
    // Still declared as a layer, just not drawn.
    expect(reduceState(converged).layers.get(KIND_GRASP_ORIENTATION)?.drawn).toBe(false);
  });

  it("ignores unknown cue kinds with a warning", () => {
    const state = firstState();
    const alien: ServerState = {
      ...state,
      cues: [...state.cues, { kind: "Sparkles", visible: true, payload: {} }],
    };
    const warnings: string[] = [];
    const scene = reduceState(alien, (m) => warnings.push(m));
    expect(scene.layers.has("Sparkles")).toBe(false);
    expect(scene.layers.size).toBe(5);
    expect(warnings).toEqual(['ignoring unknown cue kind "Sparkles"']);
  });

  it("surfaces the video placement and clip index", () => {
    const scene = reduceState(firstState());
    expect(scene.videoPlacement).toBe("SideView");
    expect(scene.videoClip).toBe(0);
  });
});
