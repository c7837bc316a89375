// Browser shell: connect form, settings drawer, input capture, render loop.

import { SessionSocket, apiGet } from "./client.js";
import { reduceState, type CueScene } from "./cueLayers.js";
import { DEFAULT_MAPPING, InputMapper, type KeyAction } from "./inputMapping.js";
import type { PoseDict, ServerState } from "./protocol.js";
import { SceneRenderer, parseClipFrames } from "./renderer.js";

const KEY_ACTIONS: Record<string, KeyAction> = {
  q: "wrist-ccw",
  e: "wrist-cw",
  " ": "jaw",
};

function el<T extends HTMLElement>(id: string): T {
  const node = document.getElementById(id);
  if (!node) throw new Error(`missing #${id}`);
  return node as T;
}

function start(): void {
  const canvas = el<HTMLCanvasElement>("scene");
  const banner = el<HTMLDivElement>("banner");
  const renderer = new SceneRenderer(canvas);
  const mapper = new InputMapper({ ...DEFAULT_MAPPING });
  mapper.suspended = true; // until the socket opens

  let scene: CueScene | null = null;
  let needle: PoseDict = { p: [0, 0, 0], q: [1, 0, 0, 0] };
  let socket: SessionSocket | null = null;
  let httpBase = "";
  let token = "";

  const onState = (state: ServerState) => {
    scene = reduceState(state);
    needle = state.needle;
    // Lazily pull the expert clip the video panel wants.
    if (scene.videoClip !== null && !renderer.hasClip(scene.videoClip)) {
      const seg = scene.videoClip;
      renderer.setClip(seg, []); // claim the slot so we fetch once
      fetch(`${httpBase}/clips/${seg}`, { headers: { Authorization: `Bearer ${token}` } })
        .then((res) => (res.ok ? res.text() : Promise.reject(res.status)))
        .then((text) => renderer.setClip(seg, parseClipFrames(text)))
        .catch((err) => console.warn(`clip ${seg}: ${err}`));
    }
  };

  el<HTMLButtonElement>("connect").addEventListener("click", () => {
    const host = el<HTMLInputElement>("host").value.trim() || location.host;
    token = el<HTMLInputElement>("token").value.trim();
    httpBase = `http://${host}`;
    socket?.close();
    socket = new SessionSocket({
      baseUrl: `ws://${host}`,
      token,
      participant: el<HTMLInputElement>("participant").value.trim() || "live",
      mode: el<HTMLSelectElement>("mode").value,
      onState,
      onStatus: (status, detail) => {
        banner.textContent = detail;
        banner.dataset.status = status;
        mapper.suspended = status !== "open"; // disconnected -> input suspended
      },
    });
    socket.connect();
  });

  // Settings drawer edits the live mapping constants.
  const bindSetting = (id: string, apply: (v: number) => void) => {
    const input = el<HTMLInputElement>(id);
    input.addEventListener("change", () => {
      const v = parseFloat(input.value);
      if (Number.isFinite(v) && v > 0) apply(v);
    });
  };
  bindSetting("mm-per-px", (v) => (mapper.config.mmPerPixel = v));
  bindSetting("mm-per-notch", (v) => (mapper.config.mmPerNotch = v));

  canvas.addEventListener("pointerdown", (e) => {
    canvas.setPointerCapture(e.pointerId);
    mapper.pointerDown(e.offsetX, e.offsetY);
  });
  canvas.addEventListener("pointermove", (e) => mapper.pointerMove(e.offsetX, e.offsetY));
  canvas.addEventListener("pointerup", () => mapper.pointerUp());
  canvas.addEventListener("wheel", (e) => {
    e.preventDefault();
    mapper.scroll(Math.sign(e.deltaY));
  });
  window.addEventListener("keydown", (e) => {
    if (e.key === "Tab") {
      e.preventDefault();
      el<HTMLSpanElement>("active-side").textContent = mapper.toggleSide();
      return;
    }
    const action = KEY_ACTIONS[e.key];
    if (action) mapper.key(action, true);
  });
  window.addEventListener("keyup", (e) => {
    const action = KEY_ACTIONS[e.key];
    if (action) mapper.key(action, false);
  });
  mapper.setOrigin(canvas.width / 2, canvas.height * 0.58);

  el<HTMLButtonElement>("list-sessions").addEventListener("click", async () => {
    try {
      const sessions = await apiGet<unknown[]>(httpBase, "/sessions", token);
      el<HTMLPreElement>("session-list").textContent = JSON.stringify(sessions, null, 2);
    } catch (err) {
      el<HTMLPreElement>("session-list").textContent = String(err);
    }
  });

  const loop = (nowMs: number) => {
    const input = mapper.frame(nowMs);
    if (input && socket) socket.send(input);
    if (scene) {
      renderer.draw(scene, mapper.pose("L"), mapper.pose("R"), needle);
    }
    requestAnimationFrame(loop);
  };
  requestAnimationFrame(loop);
}

window.addEventListener("DOMContentLoaded", start);
