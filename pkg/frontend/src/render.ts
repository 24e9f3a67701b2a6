// Top-down scene drawing: lane surfaces underneath, neighbor trajectories
// next, the target on top, the cluster-mean overlay dotted above everything
// but the scale bar. Past and future use different dash patterns and every
// future ends in an arrowhead, so travel direction and turn side are
// readable without animation.

import {
  fitViewport,
  polylineToScreen,
  sampleBounds,
  scaleBarMeters,
  worldToScreen,
  Viewport,
} from "./geometry.js";
import { AgentRecord, Point, SamplePayload } from "./types.js";

/** The subset of CanvasRenderingContext2D the renderer touches; tests can
 * substitute a recording stub. The style unions mirror the canvas API so
 * the real context satisfies this interface structurally. */
export interface DrawSurface {
  lineWidth: number;
  strokeStyle: string | CanvasGradient | CanvasPattern;
  fillStyle: string | CanvasGradient | CanvasPattern;
  lineCap: string;
  lineJoin: string;
  font: string;
  beginPath(): void;
  moveTo(x: number, y: number): void;
  lineTo(x: number, y: number): void;
  arc(
    x: number,
    y: number,
    radius: number,
    startAngle: number,
    endAngle: number
  ): void;
  closePath(): void;
  stroke(): void;
  fill(): void;
  fillRect(x: number, y: number, width: number, height: number): void;
  fillText(text: string, x: number, y: number): void;
  setLineDash(segments: number[]): void;
}

const STYLE = {
  background: "#f5f3ef",
  laneSurface: "#dedad2",
  laneCenter: "#c4bfb4",
  neighborPast: "#9aa7b4",
  neighborFuture: "#5d6f80",
  targetPast: "#e8a33d",
  targetFuture: "#d84b20",
  centroid: "#6a51a3",
  ink: "#2b2b2b",
};

function strokePolyline(surface: DrawSurface, points: Point[]): void {
  if (points.length < 2) {
    return;
  }
  surface.beginPath();
  const [first, ...rest] = points as [Point, ...Point[]];
  surface.moveTo(first[0], first[1]);
  for (const [x, y] of rest) {
    surface.lineTo(x, y);
  }
  surface.stroke();
}

function dot(surface: DrawSurface, p: Point, radius: number): void {
  surface.beginPath();
  surface.arc(p[0], p[1], radius, 0, 2 * Math.PI);
  surface.fill();
}

function ring(surface: DrawSurface, p: Point, radius: number): void {
  surface.beginPath();
  surface.arc(p[0], p[1], radius, 0, 2 * Math.PI);
  surface.stroke();
}

function arrowhead(surface: DrawSurface, from: Point, to: Point, size: number): void {
  const dx = to[0] - from[0];
  const dy = to[1] - from[1];
  const length = Math.hypot(dx, dy);
  if (length < 1e-9) {
    return;
  }
  const ux = dx / length;
  const uy = dy / length;
  surface.beginPath();
  surface.moveTo(to[0], to[1]);
  surface.lineTo(to[0] - size * ux + 0.5 * size * uy, to[1] - size * uy - 0.5 * size * ux);
  surface.lineTo(to[0] - size * ux - 0.5 * size * uy, to[1] - size * uy + 0.5 * size * ux);
  surface.closePath();
  surface.fill();
}

function visiblePast(agent: AgentRecord): Point[] {
  if (!agent.past_valid) {
    return agent.past;
  }
  return agent.past.filter((_, i) => agent.past_valid?.[i] !== false);
}

function drawAgent(
  surface: DrawSurface,
  vp: Viewport,
  agent: AgentRecord,
  isTarget: boolean
): void {
  const past = polylineToScreen(vp, visiblePast(agent));
  const future = polylineToScreen(vp, agent.future);
  const pastColor = isTarget ? STYLE.targetPast : STYLE.neighborPast;
  const futureColor = isTarget ? STYLE.targetFuture : STYLE.neighborFuture;

  surface.setLineDash([6, 5]);
  surface.strokeStyle = pastColor;
  surface.lineWidth = isTarget ? 2.5 : 1.5;
  strokePolyline(surface, past);
  surface.setLineDash([]);

  surface.strokeStyle = futureColor;
  surface.fillStyle = futureColor;
  surface.lineWidth = isTarget ? 3 : 1.75;
  const current = past[past.length - 1];
  if (current && future.length > 0) {
    strokePolyline(surface, [current, ...future]);
  } else {
    strokePolyline(surface, future);
  }
  const last = future[future.length - 1];
  const prev = future.length >= 2 ? future[future.length - 2] : current;
  if (last && prev) {
    arrowhead(surface, prev, last, isTarget ? 11 : 8);
  }

  if (current) {
    surface.fillStyle = pastColor;
    dot(surface, current, isTarget ? 5 : 3.5);
    if (isTarget) {
      surface.strokeStyle = STYLE.targetFuture;
      surface.lineWidth = 2;
      ring(surface, current, 9);
    }
  }
}

function drawLanes(surface: DrawSurface, vp: Viewport, sample: SamplePayload): void {
  surface.setLineDash([]);
  surface.lineCap = "round";
  surface.lineJoin = "round";
  for (const lane of sample.scene.lanes) {
    const line = polylineToScreen(vp, lane.centerline);
    surface.strokeStyle = STYLE.laneSurface;
    surface.lineWidth = Math.max(lane.width * vp.scale, 2);
    strokePolyline(surface, line);
  }
  for (const lane of sample.scene.lanes) {
    const line = polylineToScreen(vp, lane.centerline);
    surface.strokeStyle = STYLE.laneCenter;
    surface.lineWidth = 1;
    surface.setLineDash([8, 8]);
    strokePolyline(surface, line);
  }
  surface.setLineDash([]);
}

function drawCentroid(surface: DrawSurface, vp: Viewport, centroid: Point[]): void {
  const line = polylineToScreen(vp, centroid);
  surface.setLineDash([2, 4]);
  surface.strokeStyle = STYLE.centroid;
  surface.lineWidth = 2;
  strokePolyline(surface, line);
  surface.setLineDash([]);
  const last = line[line.length - 1];
  if (last) {
    surface.fillStyle = STYLE.centroid;
    surface.font = "11px system-ui, sans-serif";
    surface.fillText("cluster mean", last[0] + 6, last[1] - 6);
  }
}

function drawScaleBar(
  surface: DrawSurface,
  vp: Viewport,
  heightPx: number
): void {
  const meters = scaleBarMeters(vp.scale);
  const px = meters * vp.scale;
  const x = 16;
  const y = heightPx - 18;
  surface.setLineDash([]);
  surface.strokeStyle = STYLE.ink;
  surface.fillStyle = STYLE.ink;
  surface.lineWidth = 2;
  surface.beginPath();
  surface.moveTo(x, y);
  surface.lineTo(x + px, y);
  surface.stroke();
  surface.beginPath();
  surface.moveTo(x, y - 4);
  surface.lineTo(x, y + 4);
  surface.stroke();
  surface.beginPath();
  surface.moveTo(x + px, y - 4);
  surface.lineTo(x + px, y + 4);
  surface.stroke();
  surface.font = "12px system-ui, sans-serif";
  surface.fillText(`${meters} m`, x + px + 8, y + 4);
}

export function drawScene(
  surface: DrawSurface,
  widthPx: number,
  heightPx: number,
  sample: SamplePayload
): Viewport {
  surface.setLineDash([]);
  surface.fillStyle = STYLE.background;
  surface.fillRect(0, 0, widthPx, heightPx);

  const vp = fitViewport(sampleBounds(sample), widthPx, heightPx, 40);
  drawLanes(surface, vp, sample);

  const neighbors = sample.scene.agents.filter((a) => !a.is_target);
  const targets = sample.scene.agents.filter((a) => a.is_target);
  for (const agent of neighbors) {
    drawAgent(surface, vp, agent, false);
  }
  for (const agent of targets) {
    drawAgent(surface, vp, agent, true);
  }
  if (sample.centroid && sample.centroid.length > 0) {
    drawCentroid(surface, vp, sample.centroid);
  }
  drawScaleBar(surface, vp, heightPx);
  return vp;
}

export { worldToScreen };
