/**
 * Control panel logic: start/stop and app buttons, four parameter sliders.
 *
 * Slider moves are rate-limited to at most one command per 200 ms per
 * control (5/s), trailing value wins. A rejected set_param snaps the slider
 * back to the last server-confirmed value.
 */

import { commands, type Command, type ServerMessage, type Snapshot } from "./protocol.js";

export const MIN_COMMAND_INTERVAL_MS = 200;

export const SLIDER_PARAMS = ["population", "speed", "infection_radius", "outbreak_rate"] as const;
export type SliderParam = (typeof SLIDER_PARAMS)[number];

export type CommandSink = (command: Command) => void;

export interface SnapBack {
  param: string;
  value: number | boolean | string | undefined;
}

interface PendingSlider {
  value: number;
  dueAtMs: number;
}

export class ControlPanel {
  private confirmed: Snapshot["params"] = {};
  private lastSentAtMs = new Map<string, number>();
  private pending = new Map<SliderParam, PendingSlider>();
  private inFlightParams: string[] = [];

  constructor(private readonly sink: CommandSink) {}

  /** Record the server-confirmed parameter values from a snapshot. */
  noteSnapshot(snapshot: Snapshot): void {
    this.confirmed = snapshot.params;
  }

  confirmedParam(name: string): number | boolean | string | undefined {
    return this.confirmed[name];
  }

  pressStartStop(currentlyRunning: boolean): void {
    this.sink(currentlyRunning ? commands.pause() : commands.resume());
  }

  pressAppToggle(): void {
    this.sink(commands.toggleApp());
  }

  pressReset(seed: number): void {
    this.sink(commands.reset(seed));
  }

  setTickRate(rate: number): void {
    this.sink(commands.setTickRate(rate));
  }

  /** Slider drag: emit immediately if the control is cold, else queue the
   * trailing value. Call flush() on a timer to deliver queued values. */
  moveSlider(param: SliderParam, value: number, nowMs: number): void {
    const lastSent = this.lastSentAtMs.get(param) ?? -Infinity;
    if (nowMs - lastSent >= MIN_COMMAND_INTERVAL_MS) {
      this.pending.delete(param); // the fresh value supersedes any queued one
      this.emitSlider(param, value, nowMs);
    } else {
      this.pending.set(param, { value, dueAtMs: lastSent + MIN_COMMAND_INTERVAL_MS });
    }
  }

  /** Deliver queued trailing slider values that are due. */
  flush(nowMs: number): void {
    for (const [param, entry] of [...this.pending]) {
      if (nowMs >= entry.dueAtMs) {
        this.pending.delete(param);
        this.emitSlider(param, entry.value, nowMs);
      }
    }
  }

  private emitSlider(param: SliderParam, value: number, nowMs: number): void {
    this.lastSentAtMs.set(param, nowMs);
    this.inFlightParams.push(param);
    this.sink(commands.setParam(param, value));
  }

  /**
   * Feed every server reply through here. A rejected set_param returns the
   * snap-back target: the server-confirmed value the slider must revert to.
   */
  handleReply(reply: ServerMessage): SnapBack | null {
    if (reply.type !== "ack" && reply.type !== "error") {
      return null;
    }
    if (reply.type === "ack" && reply.command === "set_param") {
      this.inFlightParams.shift();
      return null;
    }
    if (reply.type === "error" && reply.command === "set_param") {
      const param = this.inFlightParams.shift();
      if (param !== undefined) {
        return { param, value: this.confirmed[param] };
      }
    }
    return null;
  }
}
