// World-to-screen mapping for the top-down scene view. World coordinates
// are meters with y growing to the driver's left; the canvas y axis grows
// downward, so the transform flips y exactly once. With the target heading
// along +x on screen, a right turn therefore bends downward, which keeps
// turn direction unambiguous.

import { Point, SamplePayload } from "./types.js";

export interface Bounds {
  minX: number;
  maxX: number;
  minY: number;
  maxY: number;
}

export interface Viewport {
  scale: number; // pixels per meter
  offsetX: number;
  offsetY: number;
}

export function boundsOfPoints(points: Iterable<Point>): Bounds | null {
  let bounds: Bounds | null = null;
  for (const [x, y] of points) {
    if (bounds === null) {
      bounds = { minX: x, maxX: x, minY: y, maxY: y };
    } else {
      bounds.minX = Math.min(bounds.minX, x);
      bounds.maxX = Math.max(bounds.maxX, x);
      bounds.minY = Math.min(bounds.minY, y);
      bounds.maxY = Math.max(bounds.maxY, y);
    }
  }
  return bounds;
}

export function expandBounds(bounds: Bounds, margin: number): Bounds {
  return {
    minX: bounds.minX - margin,
    maxX: bounds.maxX + margin,
    minY: bounds.minY - margin,
    maxY: bounds.maxY + margin,
  };
}

/** Trajectory extent of a sample: every agent's past and future plus the
 * centroid overlay. Lane polylines are excluded on purpose: straight maps
 * stretch hundreds of meters and would shrink the vehicles to a dot. */
export function sampleBounds(sample: SamplePayload): Bounds {
  const points: Point[] = [];
  for (const agent of sample.scene.agents) {
    points.push(...agent.past, ...agent.future);
  }
  if (sample.centroid) {
    points.push(...sample.centroid);
  }
  const bounds = boundsOfPoints(points);
  if (bounds === null) {
    return { minX: -1, maxX: 1, minY: -1, maxY: 1 };
  }
  return bounds;
}

export function fitViewport(
  bounds: Bounds,
  widthPx: number,
  heightPx: number,
  marginPx = 24
): Viewport {
  const spanX = Math.max(bounds.maxX - bounds.minX, 1e-6);
  const spanY = Math.max(bounds.maxY - bounds.minY, 1e-6);
  const scale = Math.min(
    (widthPx - 2 * marginPx) / spanX,
    (heightPx - 2 * marginPx) / spanY
  );
  const centerX = (bounds.minX + bounds.maxX) / 2;
  const centerY = (bounds.minY + bounds.maxY) / 2;
  return {
    scale,
    offsetX: widthPx / 2 - centerX * scale,
    offsetY: heightPx / 2 + centerY * scale,
  };
}

export function worldToScreen(vp: Viewport, p: Point): Point {
  return [p[0] * vp.scale + vp.offsetX, -p[1] * vp.scale + vp.offsetY];
}

export function polylineToScreen(vp: Viewport, points: Point[]): Point[] {
  return points.map((p) => worldToScreen(vp, p));
}

/** Scale-bar length in whole meters: the largest value from the 1-2-5
 * ladder that fits in maxPx on screen, or the shortest rung when even
 * that overflows. */
export function scaleBarMeters(pixelsPerMeter: number, maxPx = 180): number {
  const ladder: number[] = [];
  for (let power = 0; power <= 3; power++) {
    for (const step of [1, 2, 5]) {
      ladder.push(step * 10 ** power);
    }
  }
  let best = ladder[0] ?? 1;
  for (const meters of ladder) {
    if (meters * pixelsPerMeter <= maxPx) {
      best = meters;
    }
  }
  return best;
}

/** Signed turn direction of three consecutive screen points; positive means
 * a clockwise (rightward on screen) bend under the y-down convention. */
export function screenTurnSign(a: Point, b: Point, c: Point): number {
  const cross =
    (b[0] - a[0]) * (c[1] - b[1]) - (b[1] - a[1]) * (c[0] - b[0]);
  return Math.sign(cross);
}
