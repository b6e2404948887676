/** Planar helpers in image pixel space (floats, never screen space). */

export type Point = [number, number];

/**
 * Even-odd containment with the same half-open crossing rule the server's
 * rasterizer uses: an edge counts when its y-span half-open interval covers
 * the query and the intersection lies strictly to the right.
 */
export function pointInPolygon(points: Point[], x: number, y: number): boolean {
  let inside = false;
  const n = points.length;
  for (let k = 0; k < n; k++) {
    const [x1, y1] = points[k];
    const [x2, y2] = points[(k + 1) % n];
    if ((y1 <= y) !== (y2 <= y)) {
      const xi = x1 + ((y - y1) * (x2 - x1)) / (y2 - y1);
      if (xi > x) inside = !inside;
    }
  }
  return inside;
}

export function distance(a: Point, b: Point): number {
  return Math.hypot(a[0] - b[0], a[1] - b[1]);
}

/** Index of the first vertex within radius of the query, or null. */
export function vertexAt(points: Point[], x: number, y: number, radius: number): number | null {
  for (let i = 0; i < points.length; i++) {
    if (distance(points[i], [x, y]) <= radius) return i;
  }
  return null;
}

export function polygonCentroid(points: Point[]): Point {
  let sx = 0;
  let sy = 0;
  for (const [x, y] of points) {
    sx += x;
    sy += y;
  }
  return [sx / points.length, sy / points.length];
}
