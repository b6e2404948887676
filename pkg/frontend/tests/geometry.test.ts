import { describe, expect, it } from "vitest";

import { distance, pointInPolygon, vertexAt } from "../src/geometry.js";

const square: [number, number][] = [[0, 0], [4, 0], [4, 4], [0, 4]];

describe("pointInPolygon", () => {
  it("accepts interior points and rejects exterior ones", () => {
    expect(pointInPolygon(square, 2, 2)).toBe(true);
    expect(pointInPolygon(square, 5, 2)).toBe(false);
    expect(pointInPolygon(square, -1, 2)).toBe(false);
  });

  it("uses the half-open rule so shared borders tile exactly once", () => {
    const left: [number, number][] = [[0, 0], [4, 0], [4, 4], [0, 4]];
    const right: [number, number][] = [[4, 0], [8, 0], [8, 4], [4, 4]];
    // the shared edge x = 4 belongs to exactly one side
    for (const y of [1, 2, 3]) {
      const inLeft = pointInPolygon(left, 4, y);
      const inRight = pointInPolygon(right, 4, y);
      expect(inLeft !== inRight).toBe(true);
    }
  });

  it("handles concave polygons with even-odd parity", () => {
    const u: [number, number][] = [
      [0, 0], [6, 0], [6, 6], [4, 6], [4, 2], [2, 2], [2, 6], [0, 6],
    ];
    expect(pointInPolygon(u, 1, 5)).toBe(true);   // left arm
    expect(pointInPolygon(u, 5, 5)).toBe(true);   // right arm
    expect(pointInPolygon(u, 3, 5)).toBe(false);  // notch
    expect(pointInPolygon(u, 3, 1)).toBe(true);   // bridge
  });
});

describe("vertex helpers", () => {
  it("measures distance", () => {
    expect(distance([0, 0], [3, 4])).toBe(5);
  });

  it("finds the first vertex within the hit radius", () => {
    expect(vertexAt(square, 4.2, 0.1, 0.5)).toBe(1);
    expect(vertexAt(square, 2, 2, 0.5)).toBeNull();
  });
});
