/**
 * Pure projection of session snapshots into what the screen shows.
 *
 * No simulation logic lives here: dots, colors, panels and counters come
 * verbatim from the last snapshot. The only client-side state is the exit
 * animation: agents reported in `exits` glide out the matching screen edge
 * for one second before disappearing.
 */

import type { AgentColor, SelectedPanel, Snapshot } from "./protocol.js";

export const EXIT_ANIMATION_MS = 1000;
export const EXIT_MARGIN = 40;

export interface Dot {
  id: number;
  x: number;
  y: number;
  color: AgentColor;
}

export interface Ghost {
  id: number;
  startX: number;
  startY: number;
  color: AgentColor;
  direction: "left" | "right";
  bornAtMs: number;
}

export interface ViewModel {
  step: number;
  running: boolean;
  tickRate: number;
  worldWidth: number;
  worldHeight: number;
  params: Snapshot["params"];
  counters: Snapshot["counters"];
  dots: Dot[];
  ghosts: Ghost[];
  selected: SelectedPanel | null;
  serverPanel: string[];
}

export function emptyViewModel(): ViewModel {
  return {
    step: -1,
    running: false,
    tickRate: 0,
    worldWidth: 1,
    worldHeight: 1,
    params: {},
    counters: {},
    dots: [],
    ghosts: [],
    selected: null,
    serverPanel: [],
  };
}

/** Fold one snapshot into the view model; nowMs drives ghost lifetimes. */
export function applySnapshot(vm: ViewModel, snapshot: Snapshot, nowMs: number): ViewModel {
  const wasReset = snapshot.step < vm.step;
  const previous = new Map(vm.dots.map((d) => [d.id, d]));

  const ghosts: Ghost[] = wasReset
    ? []
    : vm.ghosts.filter((g) => nowMs - g.bornAtMs < EXIT_ANIMATION_MS);
  if (!wasReset) {
    for (const id of snapshot.exits.left) {
      const last = previous.get(id);
      ghosts.push({
        id,
        startX: last?.x ?? 0,
        startY: last?.y ?? 0,
        color: "purple", // symptom onset: the dot turns purple on its way out
        direction: "left",
        bornAtMs: nowMs,
      });
    }
    for (const id of snapshot.exits.right) {
      const last = previous.get(id);
      ghosts.push({
        id,
        startX: last?.x ?? 0,
        startY: last?.y ?? 0,
        color: last?.color ?? "red", // app-warned: keeps its color, exits right
        direction: "right",
        bornAtMs: nowMs,
      });
    }
  }

  return {
    step: snapshot.step,
    running: snapshot.running,
    tickRate: snapshot.tick_rate,
    worldWidth: Number(snapshot.params["world_width"] ?? vm.worldWidth),
    worldHeight: Number(snapshot.params["world_height"] ?? vm.worldHeight),
    params: snapshot.params,
    counters: snapshot.counters,
    dots: snapshot.agents.map(([id, x, y, color]) => ({ id, x, y, color })),
    ghosts,
    selected: snapshot.selected,
    serverPanel: snapshot.server_panel,
  };
}

export interface GhostFrame {
  x: number;
  y: number;
  alpha: number;
  done: boolean;
}

/** Where an exiting dot is drawn at nowMs: linear glide to the edge, fading. */
export function ghostFrame(ghost: Ghost, worldWidth: number, nowMs: number): GhostFrame {
  const t = Math.min(Math.max((nowMs - ghost.bornAtMs) / EXIT_ANIMATION_MS, 0), 1);
  const targetX = ghost.direction === "left" ? -EXIT_MARGIN : worldWidth + EXIT_MARGIN;
  return {
    x: ghost.startX + (targetX - ghost.startX) * t,
    y: ghost.startY,
    alpha: 1 - t,
    done: t >= 1,
  };
}

/** Nearest dot within the hit radius, or null for empty space. */
export function hitTest(vm: ViewModel, x: number, y: number, radius = 8): number | null {
  let best: number | null = null;
  let bestDistance = radius;
  for (const dot of vm.dots) {
    const distance = Math.hypot(dot.x - x, dot.y - y);
    if (distance <= bestDistance) {
      bestDistance = distance;
      best = dot.id;
    }
  }
  return best;
}
