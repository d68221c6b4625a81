import { readFileSync } from "node:fs";
import type { Command, ServerMessage, Snapshot } from "../src/protocol.js";

export interface FixtureEntry {
  dir: "s2c" | "c2s";
  msg: ServerMessage | Command;
}

export function loadFixture(): FixtureEntry[] {
  const raw = readFileSync(new URL("./fixtures/session.jsonl", import.meta.url), "utf-8");
  return raw
    .split("\n")
    .filter((line) => line.trim().length > 0)
    .map((line) => JSON.parse(line) as FixtureEntry);
}

export function loadWire(): Uint8Array {
  const buffer = readFileSync(new URL("./fixtures/session.bin", import.meta.url));
  return new Uint8Array(buffer.buffer, buffer.byteOffset, buffer.byteLength);
}

export function serverMessages(entries: FixtureEntry[]): ServerMessage[] {
  return entries.filter((e) => e.dir === "s2c").map((e) => e.msg as ServerMessage);
}

export function snapshots(entries: FixtureEntry[]): Snapshot[] {
  return serverMessages(entries).filter((m): m is Snapshot => m.type === "snapshot");
}
