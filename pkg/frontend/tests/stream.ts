// Shared fixture loader: a recorded ServerState stream from a clean
// teach-mode pass (one pair, 25 Hz), exactly as the session socket sent it.

import { readFileSync } from "node:fs";
import { gunzipSync } from "node:zlib";

import { parseServerState, type ServerState } from "../src/protocol.js";

let cached: string[] | null = null;

export function streamLines(): string[] {
  if (!cached) {
    const raw = readFileSync(new URL("./fixtures/teach_stream.jsonl.gz", import.meta.url));
    cached = gunzipSync(raw).toString("utf-8").trim().split("\n");
  }
  return cached;
}

export function streamStates(): ServerState[] {
  return streamLines().map(parseServerState);
}
