// Top-down testbed view. Pure drawing: no physics, no interpolation; the
// trail polyline is exactly the robot positions the server broadcast.

import { ConsoleState } from "./console";
import { ScenePayload } from "./types";

// Structural subset of CanvasRenderingContext2D, so tests can record calls
// without a DOM.
export interface SceneContext {
  fillStyle: any;
  strokeStyle: any;
  lineWidth: number;
  font: string;
  textAlign: any;
  clearRect(x: number, y: number, w: number, h: number): void;
  fillRect(x: number, y: number, w: number, h: number): void;
  strokeRect(x: number, y: number, w: number, h: number): void;
  beginPath(): void;
  arc(x: number, y: number, r: number, a0: number, a1: number): void;
  moveTo(x: number, y: number): void;
  lineTo(x: number, y: number): void;
  stroke(): void;
  fill(): void;
  fillText(text: string, x: number, y: number): void;
  setLineDash(segments: number[]): void;
}

export interface Viewport {
  scale: number; // px per metre
  cx: number;
  cy: number;
}

const MARGIN_PX = 18;

export function viewport(
  scene: ScenePayload | null,
  w: number,
  h: number,
): Viewport {
  let half = scene ? scene.testbedSize / 2 : 0.5;
  if (scene && scene.path) {
    const [px, py] = scene.path.center;
    const r = scene.path.radius;
    half = Math.max(half, Math.abs(px) + r + 0.05, Math.abs(py) + r + 0.05);
  }
  const scale = (Math.min(w, h) / 2 - MARGIN_PX) / half;
  return { scale, cx: w / 2, cy: h / 2 };
}

// World axes: x right, y up; canvas y grows down.
export function toCanvas(v: Viewport, x: number, y: number): [number, number] {
  return [v.cx + x * v.scale, v.cy - y * v.scale];
}

export function drawScene(
  ctx: SceneContext,
  w: number,
  h: number,
  state: ConsoleState,
): void {
  ctx.clearRect(0, 0, w, h);
  ctx.fillStyle = "#10141a";
  ctx.fillRect(0, 0, w, h);

  const scene = state.scenario ? state.scenario.scene : null;
  if (scene === null || state.snapshot === null) {
    ctx.fillStyle = "#8a94a6";
    ctx.font = "14px system-ui, sans-serif";
    ctx.textAlign = "center";
    ctx.fillText(
      scene === null ? "no scenario running" : "waiting for snapshots...",
      w / 2,
      h / 2,
    );
    return;
  }

  const v = viewport(scene, w, h);
  const snap = state.snapshot;

  // testbed boundary
  const half = scene.testbedSize / 2;
  const [bx, by] = toCanvas(v, -half, half);
  ctx.strokeStyle = "#3a4656";
  ctx.lineWidth = 1;
  ctx.setLineDash([]);
  ctx.strokeRect(bx, by, scene.testbedSize * v.scale, scene.testbedSize * v.scale);

  if (scene.path) {
    const [cx, cy] = toCanvas(v, scene.path.center[0], scene.path.center[1]);
    ctx.strokeStyle = "#7c6cf0";
    ctx.lineWidth = 1.5;
    ctx.setLineDash([6, 6]);
    ctx.beginPath();
    ctx.arc(cx, cy, scene.path.radius * v.scale, 0, 2 * Math.PI);
    ctx.stroke();
    ctx.setLineDash([]);
  }

  for (const [ox, oy, or_] of scene.obstacles) {
    const [x, y] = toCanvas(v, ox, oy);
    ctx.fillStyle = "#56606e";
    ctx.beginPath();
    ctx.arc(x, y, or_ * v.scale, 0, 2 * Math.PI);
    ctx.fill();
  }

  if (state.trail.length > 1) {
    ctx.strokeStyle = "#2c7ef8";
    ctx.lineWidth = 1.5;
    ctx.beginPath();
    const [tx0, ty0] = toCanvas(v, state.trail[0].x, state.trail[0].y);
    ctx.moveTo(tx0, ty0);
    for (let i = 1; i < state.trail.length; i++) {
      const [tx, ty] = toCanvas(v, state.trail[i].x, state.trail[i].y);
      ctx.lineTo(tx, ty);
    }
    ctx.stroke();
  }

  // robot body and heading arrow
  const [rx, ry] = toCanvas(v, snap.robot.x, snap.robot.y);
  const rpx = Math.max(3, scene.robotRadius * v.scale);
  ctx.fillStyle = snap.collision ? "#ef4444" : "#4ade80";
  ctx.beginPath();
  ctx.arc(rx, ry, rpx, 0, 2 * Math.PI);
  ctx.fill();
  const hx = snap.robot.x + 3 * scene.robotRadius * Math.cos(snap.robot.heading);
  const hy = snap.robot.y + 3 * scene.robotRadius * Math.sin(snap.robot.heading);
  const [ax, ay] = toCanvas(v, hx, hy);
  ctx.strokeStyle = ctx.fillStyle;
  ctx.lineWidth = 2;
  ctx.beginPath();
  ctx.moveTo(rx, ry);
  ctx.lineTo(ax, ay);
  ctx.stroke();

  // beam spot, if the tracker has a lock
  if (snap.beam.x !== null && snap.beam.y !== null) {
    const [sx, sy] = toCanvas(v, snap.beam.x, snap.beam.y);
    ctx.strokeStyle = snap.irradiance > 1 ? "#fbbf24" : "#f4f4f5";
    ctx.lineWidth = 1.5;
    ctx.beginPath();
    ctx.arc(sx, sy, 5, 0, 2 * Math.PI);
    ctx.stroke();
    ctx.beginPath();
    ctx.moveTo(sx - 9, sy);
    ctx.lineTo(sx + 9, sy);
    ctx.moveTo(sx, sy - 9);
    ctx.lineTo(sx, sy + 9);
    ctx.stroke();
  }

  if (snap.collision) {
    ctx.fillStyle = "#ef4444";
    ctx.font = "bold 16px system-ui, sans-serif";
    ctx.textAlign = "center";
    ctx.fillText("COLLISION", w / 2, 24);
  }
}
