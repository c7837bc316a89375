// Pointer/keyboard stand-in for the master manipulators.  One ClientInput per
// animation frame; depth and wrist rotation accumulate incrementally, the
// master point is the raw pointer ray point on the work plane.

import type { ClientInput, QuatList, SideInput, Vec3List } from "./protocol.js";
import { validateClientInput } from "./protocol.js";

export interface MappingConfig {
  mmPerPixel: number; // pointer-to-plane
  mmPerNotch: number; // scroll-to-depth
  wristDegPerSecond: number;
  jawRampSeconds: number; // full close (or reopen) time with the key held
}

export const DEFAULT_MAPPING: MappingConfig = {
  mmPerPixel: 0.2,
  mmPerNotch: 1.0,
  wristDegPerSecond: 120,
  jawRampSeconds: 0.3,
};

export type Side = "L" | "R";
export type KeyAction = "wrist-ccw" | "wrist-cw" | "jaw";

// Instrument rest poses; mirror the scene so a fresh session starts aligned.
const HOME: Record<Side, Vec3List> = { L: [-40, 0, 25], R: [40, 0, 25] };
const MASTER_PLANE_Z = 25;

interface SideState {
  pos: [number, number, number];
  wristDeg: number;
  jaw: number;
}

function wristQuat(deg: number): QuatList {
  // Rotation about the world vertical; unit by construction.
  const half = (deg * Math.PI) / 360;
  return [Math.cos(half), 0, 0, Math.sin(half)];
}

function sideInput(s: SideState): SideInput {
  return { p: [...s.pos], q: wristQuat(s.wristDeg), jaw: s.jaw };
}

export class InputMapper {
  config: MappingConfig;
  activeSide: Side = "R";
  suspended = false; // set while disconnected; frame() goes quiet

  private sides: Record<Side, SideState> = {
    L: { pos: [...HOME.L], wristDeg: 0, jaw: 0 },
    R: { pos: [...HOME.R], wristDeg: 0, jaw: 0 },
  };
  private keys = new Set<KeyAction>();
  private pointerPx: [number, number] = [0, 0];
  private originPx: [number, number] = [0, 0];
  private dragging = false;
  private seq = 0;
  private lastFrameMs: number | null = null;

  constructor(config: MappingConfig = DEFAULT_MAPPING) {
    this.config = { ...config };
  }

  toggleSide(): Side {
    this.activeSide = this.activeSide === "L" ? "R" : "L";
    return this.activeSide;
  }

  // Screen origin for the master ray; call on canvas resize.
  setOrigin(xPx: number, yPx: number): void {
    this.originPx = [xPx, yPx];
  }

  pointerDown(xPx: number, yPx: number): void {
    this.dragging = true;
    this.pointerPx = [xPx, yPx];
  }

  pointerUp(): void {
    this.dragging = false;
  }

  pointerMove(xPx: number, yPx: number): void {
    if (this.dragging) {
      const s = this.sides[this.activeSide];
      s.pos[0] += (xPx - this.pointerPx[0]) * this.config.mmPerPixel;
      s.pos[1] -= (yPx - this.pointerPx[1]) * this.config.mmPerPixel; // screen y is down
    }
    this.pointerPx = [xPx, yPx];
  }

  scroll(notches: number): void {
    // Scroll forward descends toward the tissue.
    this.sides[this.activeSide].pos[2] -= notches * this.config.mmPerNotch;
  }

  key(action: KeyAction, down: boolean): void {
    if (down) this.keys.add(action);
    else this.keys.delete(action);
  }

  // Commanded state, for the renderer's local instrument echo.
  pose(side: Side): SideInput {
    return sideInput(this.sides[side]);
  }

  masterPoint(): Vec3List {
    return [
      (this.pointerPx[0] - this.originPx[0]) * this.config.mmPerPixel,
      (this.originPx[1] - this.pointerPx[1]) * this.config.mmPerPixel,
      MASTER_PLANE_Z,
    ];
  }

  frame(nowMs: number): ClientInput | null {
    if (this.suspended) {
      this.lastFrameMs = nowMs;
      return null;
    }
    const dt = this.lastFrameMs === null ? 0 : Math.max(0, (nowMs - this.lastFrameMs) / 1000);
    this.lastFrameMs = nowMs;

    const s = this.sides[this.activeSide];
    if (this.keys.has("wrist-ccw")) s.wristDeg += this.config.wristDegPerSecond * dt;
    if (this.keys.has("wrist-cw")) s.wristDeg -= this.config.wristDegPerSecond * dt;
    const jawRate = dt / this.config.jawRampSeconds;
    s.jaw = this.keys.has("jaw") ? Math.min(1, s.jaw + jawRate) : Math.max(0, s.jaw - jawRate);

    // With no pointer/key activity this degenerates to a heartbeat that
    // re-states the held pose; the service holds the world on silence anyway.
    const master = this.masterPoint();
    this.seq += 1;
    return validateClientInput({
      seq: this.seq,
      t: nowMs,
      L: sideInput(this.sides.L),
      R: sideInput(this.sides.R),
      master: { L: this.activeSide === "L" ? master : [...HOME.L], R: this.activeSide === "R" ? master : [...HOME.R] },
    });
  }
}
