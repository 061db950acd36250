/**
 * Pure vertex-editing operations.  All geometry the engine owns (contours,
 * refinement) stays on the server; the client only moves, inserts, and
 * deletes vertices of polygons it received.
 */

import type { Point } from "./schema.js";

export const MIN_VERTICES = 3;

export class PolygonEditError extends Error {}

export function dragVertex(polygon: Point[], index: number, dx: number, dy: number): Point[] {
  if (index < 0 || index >= polygon.length) {
    throw new PolygonEditError(`vertex index ${index} out of range`);
  }
  return polygon.map((p, i) => (i === index ? [p[0] + dx, p[1] + dy] : [p[0], p[1]]));
}

/** Insert a vertex at the midpoint of the edge starting at `edgeIndex`. */
export function insertVertex(polygon: Point[], edgeIndex: number): Point[] {
  if (edgeIndex < 0 || edgeIndex >= polygon.length) {
    throw new PolygonEditError(`edge index ${edgeIndex} out of range`);
  }
  const a = polygon[edgeIndex];
  const b = polygon[(edgeIndex + 1) % polygon.length];
  const mid: Point = [(a[0] + b[0]) / 2, (a[1] + b[1]) / 2];
  const out = polygon.map((p) => [p[0], p[1]] as Point);
  out.splice(edgeIndex + 1, 0, mid);
  return out;
}

export function deleteVertex(polygon: Point[], index: number): Point[] {
  if (index < 0 || index >= polygon.length) {
    throw new PolygonEditError(`vertex index ${index} out of range`);
  }
  if (polygon.length <= MIN_VERTICES) {
    throw new PolygonEditError(`a polygon needs at least ${MIN_VERTICES} vertices`);
  }
  return polygon.filter((_, i) => i !== index).map((p) => [p[0], p[1]] as Point);
}

/** Index of the nearest vertex within `radius`, or -1. */
export function hitTestVertex(polygon: Point[], x: number, y: number, radius: number): number {
  let best = -1;
  let bestDist = radius * radius;
  polygon.forEach(([px, py], i) => {
    const d = (px - x) * (px - x) + (py - y) * (py - y);
    if (d <= bestDist) {
      best = i;
      bestDist = d;
    }
  });
  return best;
}

/** Index of the edge whose midpoint is nearest within `radius`, or -1. */
export function hitTestEdge(polygon: Point[], x: number, y: number, radius: number): number {
  let best = -1;
  let bestDist = radius * radius;
  for (let i = 0; i < polygon.length; i++) {
    const a = polygon[i];
    const b = polygon[(i + 1) % polygon.length];
    const mx = (a[0] + b[0]) / 2;
    const my = (a[1] + b[1]) / 2;
    const d = (mx - x) * (mx - x) + (my - y) * (my - y);
    if (d <= bestDist) {
      best = i;
      bestDist = d;
    }
  }
  return best;
}

export function translatePolygon(polygon: Point[], dx: number, dy: number): Point[] {
  return polygon.map(([x, y]) => [x + dx, y + dy]);
}
