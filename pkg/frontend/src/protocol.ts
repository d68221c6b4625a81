/**
 * Wire protocol spoken with the steering session (see ../../docs/protocol.md).
 *
 * Messages are JSON. Over raw TCP each message is prefixed with a 4-byte
 * big-endian length; over WebSocket each message is one text frame, so the
 * frame codec here is only needed for the TCP transport and for replaying
 * recorded byte streams.
 */

export const PROTOCOL_VERSION = 1;

export type AgentColor = "grey" | "red" | "purple";

/** [agent_id, x, y, color] */
export type AgentDot = [number, number, number, AgentColor];

/** [rpi_hex_prefix, interval, attenuation_db, duration_minutes] */
export type ContactRow = [string, number, number, number];

export interface SelectedPanel {
  agent_id: number;
  health_color?: AgentColor;
  own_identifier_hex?: string;
  risk_status?: string;
  contacts?: ContactRow[];
  pending_test?: boolean;
  quarantined?: boolean;
}

export interface Snapshot {
  type: "snapshot";
  protocol_version: number;
  step: number;
  running: boolean;
  tick_rate: number;
  params: Record<string, number | boolean | string>;
  agents: AgentDot[];
  exits: { left: number[]; right: number[] };
  counters: Record<string, number>;
  server_panel: string[];
  selected: SelectedPanel | null;
}

export interface Ack {
  type: "ack";
  command: string;
}

export interface ErrorMessage {
  type: "error";
  command?: string;
  message: string;
}

export type ServerMessage = Snapshot | Ack | ErrorMessage;

export interface Command {
  type: "command";
  name: string;
  [key: string]: unknown;
}

/** Constructors for every documented command. */
export const commands = {
  pause: (): Command => ({ type: "command", name: "pause" }),
  resume: (): Command => ({ type: "command", name: "resume" }),
  reset: (seed: number): Command => ({ type: "command", name: "reset", seed }),
  setParam: (param: string, value: number | boolean): Command =>
    ({ type: "command", name: "set_param", param, value }),
  toggleApp: (): Command => ({ type: "command", name: "toggle_app" }),
  selectAgent: (agentId: number | null): Command =>
    ({ type: "command", name: "select_agent", agent_id: agentId }),
  setTickRate: (rate: number): Command => ({ type: "command", name: "set_tick_rate", rate }),
};

const MAX_FRAME_BYTES = 16 * 1024 * 1024;

export function encodeFrame(message: object): Uint8Array {
  const body = new TextEncoder().encode(JSON.stringify(message));
  const frame = new Uint8Array(4 + body.length);
  new DataView(frame.buffer).setUint32(0, body.length, false);
  frame.set(body, 4);
  return frame;
}

/** Incremental decoder for the length-prefixed TCP byte stream. */
export class FrameDecoder {
  private buffer = new Uint8Array(0);

  push(data: Uint8Array): ServerMessage[] {
    const merged = new Uint8Array(this.buffer.length + data.length);
    merged.set(this.buffer, 0);
    merged.set(data, this.buffer.length);
    this.buffer = merged;

    const messages: ServerMessage[] = [];
    const decoder = new TextDecoder();
    while (this.buffer.length >= 4) {
      const size = new DataView(this.buffer.buffer, this.buffer.byteOffset).getUint32(0, false);
      if (size > MAX_FRAME_BYTES) {
        throw new Error(`frame of ${size} bytes exceeds limit`);
      }
      if (this.buffer.length < 4 + size) {
        break;
      }
      const body = this.buffer.subarray(4, 4 + size);
      messages.push(JSON.parse(decoder.decode(body)) as ServerMessage);
      this.buffer = this.buffer.slice(4 + size);
    }
    return messages;
  }
}

export function isSnapshot(message: ServerMessage): message is Snapshot {
  return message.type === "snapshot";
}
