// Session socket wrapper: auth token on the query string, one callback per
// parsed state frame, and a reconnect banner contract for the shell.

import type { ClientInput, ServerState } from "./protocol.js";
import { parseServerState, ProtocolError } from "./protocol.js";

export type SocketStatus = "connecting" | "open" | "closed";

export interface SessionOptions {
  baseUrl: string; // e.g. ws://localhost:8000
  token: string;
  participant: string;
  mode: string;
  onState: (state: ServerState) => void;
  onStatus: (status: SocketStatus, detail: string) => void;
}

export class SessionSocket {
  status: SocketStatus = "closed";

  private ws: WebSocket | null = null;
  private opts: SessionOptions;

  constructor(opts: SessionOptions) {
    this.opts = opts;
  }

  connect(): void {
    const { baseUrl, token, participant, mode } = this.opts;
    const url =
      `${baseUrl}/ws/session?token=${encodeURIComponent(token)}` +
      `&participant=${encodeURIComponent(participant)}&mode=${encodeURIComponent(mode)}`;
    this.setStatus("connecting", "connecting…");
    const ws = new WebSocket(url);
    this.ws = ws;
    ws.onopen = () => this.setStatus("open", "session live");
    ws.onmessage = (ev) => {
      try {
        this.opts.onState(parseServerState(String(ev.data)));
      } catch (e) {
        if (e instanceof ProtocolError) console.warn(e.message);
        else throw e;
      }
    };
    ws.onclose = (ev) => {
      this.ws = null;
      // 4400 = rejected input, 4403 = bad token; both are terminal for this
      // attempt, so the banner tells the user instead of silently looping.
      this.setStatus("closed", ev.code >= 4000 ? `closed: ${ev.reason || ev.code}` : "disconnected");
    };
  }

  send(input: ClientInput): boolean {
    if (this.ws && this.ws.readyState === WebSocket.OPEN) {
      this.ws.send(JSON.stringify(input));
      return true;
    }
    return false;
  }

  close(): void {
    this.ws?.close();
  }

  private setStatus(status: SocketStatus, detail: string): void {
    this.status = status;
    this.opts.onStatus(status, detail);
  }
}

// Request API helpers (list sessions, fetch metrics, expert clips).
export async function apiGet<T>(baseHttpUrl: string, path: string, token: string): Promise<T> {
  const res = await fetch(`${baseHttpUrl}${path}`, {
    headers: { Authorization: `Bearer ${token}` },
  });
  if (!res.ok) throw new Error(`${path}: HTTP ${res.status}`);
  return (await res.json()) as T;
}
