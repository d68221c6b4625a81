/**
 * Browser entry point: connects to a steering session over WebSocket and
 * wires the three panels (population canvas, app inspector, server panel)
 * plus the control panel. All state shown comes from server snapshots.
 */

import { commands, isSnapshot, type ServerMessage, type Snapshot } from "./protocol.js";
import { ControlPanel, SLIDER_PARAMS, type SliderParam } from "./controls.js";
import { canvasToWorld, renderPopulation } from "./render.js";
import { applySnapshot, emptyViewModel, hitTest, type ViewModel } from "./viewmodel.js";

function sessionAddress(): string {
  const query = new URLSearchParams(window.location.search);
  return query.get("session") ?? "127.0.0.1:8765";
}

function el<T extends HTMLElement>(id: string): T {
  const node = document.getElementById(id);
  if (!node) {
    throw new Error(`missing element #${id}`);
  }
  return node as T;
}

function renderSelectedPanel(vm: ViewModel, panel: HTMLElement): void {
  if (!vm.selected) {
    panel.innerHTML = "<p class=\"hint\">Click an individual to inspect its app.</p>";
    return;
  }
  if (vm.selected.quarantined) {
    panel.innerHTML = `<p>#${vm.selected.agent_id} — quarantined</p>`;
    return;
  }
  const contacts = vm.selected.contacts ?? [];
  const rows = contacts
    .map(([rpi, interval, att, dur]) =>
      `<tr><td>${rpi}…</td><td>${interval}</td><td>${att.toFixed(1)} dB</td><td>${dur} min</td></tr>`)
    .join("");
  panel.innerHTML = `
    <p>#${vm.selected.agent_id} · own id <code>${(vm.selected.own_identifier_hex ?? "").slice(0, 8)}…</code></p>
    <p>risk: <b>${vm.selected.risk_status ?? "?"}</b>${vm.selected.pending_test ? " · test pending" : ""}</p>
    <table><thead><tr><th>heard id</th><th>interval</th><th>signal</th><th>time</th></tr></thead>
    <tbody>${rows}</tbody></table>`;
}

function renderServerPanel(vm: ViewModel, panel: HTMLElement): void {
  panel.textContent = vm.serverPanel.length
    ? vm.serverPanel.join("\n")
    : "(no published keys)";
}

export function main(): void {
  const canvas = el<HTMLCanvasElement>("population");
  const ctx = canvas.getContext("2d");
  if (!ctx) {
    throw new Error("no 2d context");
  }
  const appPanel = el<HTMLElement>("app-panel");
  const serverPanel = el<HTMLElement>("server-panel");
  const stepLabel = el<HTMLElement>("step-label");
  const startStop = el<HTMLButtonElement>("start-stop");
  const appToggle = el<HTMLButtonElement>("app-toggle");
  const toast = el<HTMLElement>("toast");

  let vm = emptyViewModel();
  const socket = new WebSocket(`ws://${sessionAddress()}/`);
  const controls = new ControlPanel((command) => socket.send(JSON.stringify(command)));

  const sliders = new Map<SliderParam, HTMLInputElement>();
  for (const param of SLIDER_PARAMS) {
    const input = el<HTMLInputElement>(`slider-${param}`);
    sliders.set(param, input);
    input.addEventListener("input", () => {
      controls.moveSlider(param, Number(input.value), performance.now());
    });
  }
  setInterval(() => controls.flush(performance.now()), 50);

  startStop.addEventListener("click", () => controls.pressStartStop(vm.running));
  appToggle.addEventListener("click", () => controls.pressAppToggle());

  canvas.addEventListener("click", (event) => {
    const rect = canvas.getBoundingClientRect();
    const world = canvasToWorld(event.clientX - rect.left, event.clientY - rect.top, vm,
                                { width: canvas.width, height: canvas.height });
    const hit = hitTest(vm, world.x, world.y);
    socket.send(JSON.stringify(commands.selectAgent(hit)));
  });

  socket.addEventListener("message", (event) => {
    const message = JSON.parse(String(event.data)) as ServerMessage;
    if (isSnapshot(message)) {
      vm = applySnapshot(vm, message, performance.now());
      controls.noteSnapshot(message as Snapshot);
      stepLabel.textContent = `step ${vm.step}${vm.running ? "" : " (paused)"}`;
      startStop.textContent = vm.running ? "Stop" : "Start";
      appToggle.textContent = vm.params["app_enabled"] ? "App: on" : "App: off";
      for (const [param, input] of sliders) {
        if (document.activeElement !== input) {
          input.value = String(vm.params[param] ?? input.value);
        }
      }
      renderSelectedPanel(vm, appPanel);
      renderServerPanel(vm, serverPanel);
      return;
    }
    const snapBack = controls.handleReply(message);
    if (snapBack) {
      const input = sliders.get(snapBack.param as SliderParam);
      if (input && snapBack.value !== undefined) {
        input.value = String(snapBack.value);
      }
    }
    if (message.type === "error") {
      toast.textContent = message.message;
      toast.classList.add("visible");
      setTimeout(() => toast.classList.remove("visible"), 2500);
    }
  });

  const frame = (): void => {
    renderPopulation(ctx, vm, performance.now(), { width: canvas.width, height: canvas.height });
    requestAnimationFrame(frame);
  };
  requestAnimationFrame(frame);
}

if (typeof document !== "undefined") {
  window.addEventListener("DOMContentLoaded", main);
}
