// Wire types for the session socket.  Field names are fixed by the service;
// the client never recomputes cue geometry, so payloads carry everything
// needed to draw.

export type Vec3List = [number, number, number];
export type QuatList = [number, number, number, number]; // w, x, y, z

export interface PoseDict {
  p: Vec3List;
  q: QuatList;
}

export interface ArcDict {
  center: Vec3List;
  radius: number;
  normal: Vec3List;
  ref: Vec3List;
  start_deg: number;
  end_deg: number;
  dir: number;
}

export interface CueDescriptor {
  kind: string;
  visible: boolean;
  payload: Record<string, unknown>;
  prompt?: string;
}

export interface MetricsSnapshot {
  forces: { instrument_left: number; instrument_right: number; needle_tissue: number };
  deviations: number;
  retractions: number;
  segment_metrics: Record<string, number> | null;
}

export interface ServerState {
  tick: number;
  needle: PoseDict;
  topo: string;
  seg: number;
  phase: string;
  cues: CueDescriptor[];
  metrics: MetricsSnapshot;
  events: { t: number; kind: string; payload: Record<string, unknown> }[];
  prompts: string[];
}

export interface SideInput {
  p: Vec3List;
  q: QuatList;
  jaw: number;
}

export interface ClientInput {
  seq: number;
  t: number; // client time, ms
  L: SideInput;
  R: SideInput;
  master: { L: Vec3List; R: Vec3List };
}

export class ProtocolError extends Error {}

function isFiniteArray(v: unknown, n: number): v is number[] {
  return Array.isArray(v) && v.length === n && v.every((x) => Number.isFinite(x));
}

function checkPose(v: unknown, where: string): asserts v is PoseDict {
  const pose = v as PoseDict;
  if (!pose || !isFiniteArray(pose.p, 3) || !isFiniteArray(pose.q, 4)) {
    throw new ProtocolError(`${where}: bad pose`);
  }
}

export function parseServerState(text: string): ServerState {
  let obj: ServerState;
  try {
    obj = JSON.parse(text);
  } catch (e) {
    throw new ProtocolError(`unparseable state frame: ${e}`);
  }
  if (!Number.isInteger(obj.tick)) throw new ProtocolError("state: bad tick");
  checkPose(obj.needle, "state.needle");
  if (typeof obj.topo !== "string" || typeof obj.phase !== "string") {
    throw new ProtocolError("state: bad topo/phase");
  }
  if (!Number.isInteger(obj.seg)) throw new ProtocolError("state: bad seg");
  if (!Array.isArray(obj.cues)) throw new ProtocolError("state: bad cues");
  for (const cue of obj.cues) {
    if (typeof cue.kind !== "string" || typeof cue.visible !== "boolean" || !cue.payload) {
      throw new ProtocolError("state: bad cue descriptor");
    }
  }
  if (!obj.metrics || !obj.metrics.forces) throw new ProtocolError("state: bad metrics");
  if (!Array.isArray(obj.events)) throw new ProtocolError("state: bad events");
  if (!Array.isArray(obj.prompts) || obj.prompts.some((p) => typeof p !== "string")) {
    throw new ProtocolError("state: bad prompts");
  }
  return obj;
}

function checkSide(v: unknown, where: string): asserts v is SideInput {
  const side = v as SideInput;
  if (!side || !isFiniteArray(side.p, 3) || !isFiniteArray(side.q, 4)) {
    throw new ProtocolError(`${where}: bad pose`);
  }
  // Unit rotation up to the drift the server tolerates.
  const [w, x, y, z] = side.q;
  const n2 = w * w + x * x + y * y + z * z;
  if (Math.abs(n2 - 1) > 1e-6) throw new ProtocolError(`${where}: non-unit quaternion`);
  if (!Number.isFinite(side.jaw) || side.jaw < 0 || side.jaw > 1) {
    throw new ProtocolError(`${where}: jaw outside [0, 1]`);
  }
}

// Outbound guard: every message the mapper emits must satisfy the service
// schema, so a violation is caught client-side before it kills the session.
export function validateClientInput(msg: ClientInput): ClientInput {
  if (!Number.isInteger(msg.seq) || msg.seq < 1) throw new ProtocolError("input: bad seq");
  if (!Number.isFinite(msg.t)) throw new ProtocolError("input: bad t");
  checkSide(msg.L, "input.L");
  checkSide(msg.R, "input.R");
  if (!msg.master || !isFiniteArray(msg.master.L, 3) || !isFiniteArray(msg.master.R, 3)) {
    throw new ProtocolError("input.master: bad point");
  }
  return msg;
}
