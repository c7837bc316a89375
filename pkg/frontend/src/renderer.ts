// Canvas scene: tissue disc, targets, needle, instrument echoes, and the cue
// overlays.  Geometry is drawn exactly as the descriptors ship it; the only
// client-side work is rasterization (sampling the parameterized arc, stepping
// the playback schedule).

import type { ArcDict, PoseDict, SideInput, Vec3List } from "./protocol.js";
import type { CueScene } from "./cueLayers.js";
import {
  KIND_IDEAL_INSTRUMENT,
  ghostPose,
  graspPoints,
  idealArc,
  playback,
} from "./cueLayers.js";

export interface ClipFrame {
  l: Vec3List;
  r: Vec3List;
  needle: Vec3List;
}

// Expert clip stream: header line, tick/event lines, footer line.  Tick lines
// carry L/R/needle poses; that is all the panel animation needs.
export function parseClipFrames(text: string): ClipFrame[] {
  const frames: ClipFrame[] = [];
  for (const line of text.split("\n")) {
    if (!line) continue;
    const obj = JSON.parse(line);
    if (obj.needle && obj.L && obj.R) {
      frames.push({ l: obj.L.p, r: obj.R.p, needle: obj.needle.p });
    }
  }
  return frames;
}

const TILT = (50 * Math.PI) / 180;
const DISC_RADIUS_MM = 30; // decorative ground disc; targets come from the arc cue

interface IconSpec {
  label: string;
  color: string;
  world: Vec3List;
}

// Fixed world anchors; activation itself is server-side proximity.
export const ICONS: IconSpec[] = [
  { label: "?", color: "#e8c44a", world: [45, 15, 5] },
  { label: "▶", color: "#7ec8e3", world: [45, 0, 5] },
  { label: "✕", color: "#e05c5c", world: [45, -15, 5] },
];

export class SceneRenderer {
  private ctx: CanvasRenderingContext2D;
  private scale = 6; // px per mm
  private clip: ClipFrame[] = [];
  private clipSegment = -1;
  private frameCount = 0;

  constructor(private canvas: HTMLCanvasElement) {
    const ctx = canvas.getContext("2d");
    if (!ctx) throw new Error("2d canvas unavailable");
    this.ctx = ctx;
  }

  setClip(segment: number, frames: ClipFrame[]): void {
    this.clipSegment = segment;
    this.clip = frames;
  }

  hasClip(segment: number): boolean {
    return this.clipSegment === segment && this.clip.length > 0;
  }

  private project(p: Vec3List): [number, number] {
    const cx = this.canvas.width / 2;
    const cy = this.canvas.height * 0.58;
    return [
      cx + p[0] * this.scale,
      cy - (p[1] * Math.cos(TILT) + p[2] * Math.sin(TILT)) * this.scale,
    ];
  }

  private dot(p: Vec3List, r: number, fill: string, alpha = 1): void {
    const [x, y] = this.project(p);
    this.ctx.globalAlpha = alpha;
    this.ctx.fillStyle = fill;
    this.ctx.beginPath();
    this.ctx.arc(x, y, r, 0, 2 * Math.PI);
    this.ctx.fill();
    this.ctx.globalAlpha = 1;
  }

  private polyline(points: Vec3List[], stroke: string, width: number, alpha = 1): void {
    if (points.length < 2) return;
    this.ctx.globalAlpha = alpha;
    this.ctx.strokeStyle = stroke;
    this.ctx.lineWidth = width;
    this.ctx.beginPath();
    const [x0, y0] = this.project(points[0]);
    this.ctx.moveTo(x0, y0);
    for (const p of points.slice(1)) {
      const [x, y] = this.project(p);
      this.ctx.lineTo(x, y);
    }
    this.ctx.stroke();
    this.ctx.globalAlpha = 1;
  }

  private arcPoints(arc: ArcDict, steps = 48): Vec3List[] {
    const [cx, cy, cz] = arc.center;
    const ref = arc.ref;
    const n = arc.normal;
    // Right-handed in-plane basis: ref at angle 0, normal x ref at +90.
    const v: Vec3List = [
      n[1] * ref[2] - n[2] * ref[1],
      n[2] * ref[0] - n[0] * ref[2],
      n[0] * ref[1] - n[1] * ref[0],
    ];
    const span = (arc.end_deg - arc.start_deg) * arc.dir;
    const out: Vec3List[] = [];
    for (let i = 0; i <= steps; i++) {
      const a = ((arc.start_deg + (arc.dir * span * i) / steps) * Math.PI) / 180;
      const c = Math.cos(a) * arc.radius;
      const s = Math.sin(a) * arc.radius;
      out.push([cx + c * ref[0] + s * v[0], cy + c * ref[1] + s * v[1], cz + c * ref[2] + s * v[2]]);
    }
    return out;
  }

  private drawInstrument(side: SideInput, color: string, alpha = 1): void {
    const tip = side.p;
    const entryAbove: Vec3List = [tip[0] + 12, tip[1] + 4, tip[2] + 55];
    this.polyline([entryAbove, tip], color, 3, alpha);
    // Jaw wedge: open angle shrinks as jaw closes.
    const open = 6 * (1 - side.jaw) + 1.5;
    const [tx, ty] = this.project(tip);
    this.ctx.globalAlpha = alpha;
    this.ctx.strokeStyle = color;
    this.ctx.lineWidth = 2;
    this.ctx.beginPath();
    this.ctx.moveTo(tx - open, ty - 8);
    this.ctx.lineTo(tx, ty);
    this.ctx.lineTo(tx + open, ty - 8);
    this.ctx.stroke();
    this.ctx.globalAlpha = 1;
  }

  private drawGhost(pose: PoseDict, alpha: number): void {
    // Light-green semi-transparent gripper ghost at the server pose.
    this.drawInstrument({ p: pose.p, q: pose.q, jaw: 0.5 }, "#8fdc9f", 0.25 + 0.55 * alpha);
  }

  private drawVideoPanel(scene: CueScene): void {
    const ctx = this.ctx;
    const placement = scene.videoPlacement ?? "SideView";
    const w = 170;
    const h = 120;
    let x: number;
    let y: number;
    if (placement === "InSitu" ) {
      const arc = idealArc(scene);
      const anchor: Vec3List = arc ? arc.center : [0, 0, 30];
      const [ax, ay] = this.project([anchor[0], anchor[1], anchor[2] + 18]);
      x = ax - w / 2;
      y = ay - h;
    } else {
      x = this.canvas.width - w - 12;
      y = 12;
    }
    ctx.fillStyle = "rgba(16, 24, 32, 0.85)";
    ctx.fillRect(x, y, w, h);
    ctx.strokeStyle = "#8aa";
    ctx.strokeRect(x, y, w, h);
    ctx.fillStyle = "#cde";
    ctx.font = "11px sans-serif";
    ctx.fillText(`expert clip ${scene.videoClip ?? 0} (${placement})`, x + 8, y + 16);
    if (this.clip.length > 0) {
      // Animated trajectory clip: ghost tips traced inside the panel frame.
      const k = this.frameCount % this.clip.length;
      const bounds = this.clipBounds();
      const map = (p: Vec3List): [number, number] => [
        x + 10 + ((p[0] - bounds.min[0]) / bounds.span) * (w - 20),
        y + h - 12 - ((p[1] - bounds.min[1]) / bounds.span) * (h - 34),
      ];
      ctx.strokeStyle = "#e0b0b0";
      ctx.beginPath();
      const [nx0, ny0] = map(this.clip[0].needle);
      ctx.moveTo(nx0, ny0);
      for (const f of this.clip.slice(1, k + 1)) {
        const [nx, ny] = map(f.needle);
        ctx.lineTo(nx, ny);
      }
      ctx.stroke();
      const [gx, gy] = map(this.clip[k].r);
      ctx.fillStyle = "#8fdc9f";
      ctx.beginPath();
      ctx.arc(gx, gy, 4, 0, 2 * Math.PI);
      ctx.fill();
    }
  }

  private clipBounds(): { min: Vec3List; span: number } {
    let minX = Infinity;
    let minY = Infinity;
    let maxX = -Infinity;
    let maxY = -Infinity;
    for (const f of this.clip) {
      minX = Math.min(minX, f.needle[0], f.r[0]);
      minY = Math.min(minY, f.needle[1], f.r[1]);
      maxX = Math.max(maxX, f.needle[0], f.r[0]);
      maxY = Math.max(maxY, f.needle[1], f.r[1]);
    }
    return { min: [minX, minY, 0], span: Math.max(maxX - minX, maxY - minY, 1) };
  }

  draw(scene: CueScene, left: SideInput, right: SideInput, needle: PoseDict): void {
    const ctx = this.ctx;
    this.frameCount += 1;
    ctx.fillStyle = "#10161c";
    ctx.fillRect(0, 0, this.canvas.width, this.canvas.height);

    // Tissue disc.
    const ring = this.arcPoints(
      { center: [0, 0, 0], radius: DISC_RADIUS_MM, normal: [0, 0, 1], ref: [1, 0, 0], start_deg: 0, end_deg: 359.9, dir: 1 },
      72
    );
    ctx.fillStyle = "#2a3540";
    ctx.beginPath();
    const [rx0, ry0] = this.project(ring[0]);
    ctx.moveTo(rx0, ry0);
    for (const p of ring.slice(1)) {
      const [px, py] = this.project(p);
      ctx.lineTo(px, py);
    }
    ctx.closePath();
    ctx.fill();

    // Ideal drive path (cyan) with its endpoints as the visible targets.
    const arc = idealArc(scene);
    if (arc) {
      const pts = this.arcPoints(arc);
      this.polyline(pts, "#4dd0e1", 2.5);
      this.dot(pts[0], 4, "#d7ffd7");
      this.dot(pts[pts.length - 1], 4, "#ffd7d7");
    }

    // Grasp position spheres: flashing yellow.
    const flashOn = Math.floor(this.frameCount / 12) % 2 === 0;
    if (flashOn) {
      for (const p of graspPoints(scene)) this.dot(p, 5, "#ffe066");
    }

    // Ideal-instrument side marker: red sphere over that side's home.
    const instrumentLayer = scene.layers.get(KIND_IDEAL_INSTRUMENT);
    if (instrumentLayer?.drawn) {
      const side = instrumentLayer.payload.side as string;
      this.dot(side === "L" ? [-40, 0, 46] : [40, 0, 46], 6, "#ff5a5a");
    }

    // Grasp orientation ghost; alpha 0 means converged (not drawn).
    const ghost = ghostPose(scene);
    if (ghost) this.drawGhost(ghost.pose, ghost.alpha);

    // Trajectory playback: red polyline, animated green sphere on schedule.
    const pb = playback(scene);
    if (pb) {
      this.polyline(pb.polyline, "#ff5a5a", 2);
      // Green sphere loops over the recorded pass, honoring the original
      // inter-sample timing carried by the schedule.
      const total = pb.schedule[pb.schedule.length - 1] + 1;
      const elapsed = scene.tick % total;
      let k = 0;
      while (k + 1 < pb.schedule.length && pb.schedule[k + 1] <= elapsed) k++;
      this.dot(pb.polyline[Math.min(k, pb.polyline.length - 1)], 4.5, "#6fe06f");
    }

    // Needle: chord between jaws sketch — a short stroke through the pose.
    const [nx, ny] = this.project(needle.p);
    ctx.strokeStyle = "#d8d8d8";
    ctx.lineWidth = 2.5;
    ctx.beginPath();
    ctx.arc(nx, ny, 9, Math.PI * 0.15, Math.PI * 0.95);
    ctx.stroke();

    this.drawInstrument(left, "#b9cdd8");
    this.drawInstrument(right, "#d8cdb9");

    for (const icon of ICONS) {
      const [ix, iy] = this.project(icon.world);
      ctx.fillStyle = icon.color;
      ctx.beginPath();
      ctx.arc(ix, iy, 11, 0, 2 * Math.PI);
      ctx.fill();
      ctx.fillStyle = "#10161c";
      ctx.font = "bold 12px sans-serif";
      ctx.fillText(icon.label, ix - 4, iy + 4);
    }

    if (scene.videoPlacement !== null) this.drawVideoPanel(scene);

    // Prompt banner (metrics-mode text).
    if (scene.prompts.length > 0) {
      const msg = scene.prompts.join("   •   ");
      ctx.fillStyle = "rgba(20, 30, 40, 0.9)";
      ctx.fillRect(0, this.canvas.height - 34, this.canvas.width, 34);
      ctx.fillStyle = "#ffd27f";
      ctx.font = "13px sans-serif";
      ctx.fillText(msg, 12, this.canvas.height - 12);
    }
  }
}
