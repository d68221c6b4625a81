/**
 * Population canvas drawing. Kept free of DOM types beyond a minimal 2D
 * context interface so tests can record draw calls.
 */

import type { AgentColor } from "./protocol.js";
import { ghostFrame, type ViewModel } from "./viewmodel.js";

export const COLOR_HEX: Record<AgentColor, string> = {
  grey: "#9aa0a6",
  red: "#d93025",
  purple: "#7b1fa2",
};

export const DOT_RADIUS = 5;

export interface Canvas2DLike {
  fillStyle: string | CanvasGradient | CanvasPattern;
  globalAlpha: number;
  clearRect(x: number, y: number, w: number, h: number): void;
  beginPath(): void;
  arc(x: number, y: number, r: number, a0: number, a1: number): void;
  fill(): void;
}

export interface RenderStats {
  dotsDrawn: number;
  ghostsDrawn: number;
}

export function renderPopulation(
  ctx: Canvas2DLike,
  vm: ViewModel,
  nowMs: number,
  view: { width: number; height: number },
): RenderStats {
  const scaleX = view.width / vm.worldWidth;
  const scaleY = view.height / vm.worldHeight;
  ctx.globalAlpha = 1;
  ctx.clearRect(0, 0, view.width, view.height);

  let dotsDrawn = 0;
  for (const dot of vm.dots) {
    ctx.fillStyle = COLOR_HEX[dot.color];
    ctx.globalAlpha = 1;
    ctx.beginPath();
    ctx.arc(dot.x * scaleX, dot.y * scaleY, DOT_RADIUS, 0, Math.PI * 2);
    ctx.fill();
    dotsDrawn += 1;
  }

  let ghostsDrawn = 0;
  for (const ghost of vm.ghosts) {
    const frame = ghostFrame(ghost, vm.worldWidth, nowMs);
    if (frame.done) {
      continue;
    }
    ctx.fillStyle = COLOR_HEX[ghost.color];
    ctx.globalAlpha = frame.alpha;
    ctx.beginPath();
    ctx.arc(frame.x * scaleX, frame.y * scaleY, DOT_RADIUS, 0, Math.PI * 2);
    ctx.fill();
    ghostsDrawn += 1;
  }
  ctx.globalAlpha = 1;
  return { dotsDrawn, ghostsDrawn };
}

/** Map a canvas pixel position back to world coordinates for hit testing. */
export function canvasToWorld(
  px: number,
  py: number,
  vm: ViewModel,
  view: { width: number; height: number },
): { x: number; y: number } {
  return { x: (px / view.width) * vm.worldWidth, y: (py / view.height) * vm.worldHeight };
}
