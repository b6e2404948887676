import { describe, expect, it } from "vitest";

import { blendOverlay, buildColorIndex, colorKey } from "../src/overlay.js";
import { PaletteEntry } from "../src/types.js";

const palette: PaletteEntry[] = [
  { id: 0, name: "land", color: [210, 180, 140] },
  { id: 1, name: "forest", color: [34, 139, 34] },
];

function rgba(pixels: number[][]): Uint8ClampedArray {
  const out = new Uint8ClampedArray(pixels.length * 4);
  pixels.forEach(([r, g, b], i) => {
    out[i * 4] = r;
    out[i * 4 + 1] = g;
    out[i * 4 + 2] = b;
    out[i * 4 + 3] = 255;
  });
  return out;
}

const frame = rgba([[100, 100, 100], [50, 60, 70]]);
const labels = rgba([[210, 180, 140], [34, 139, 34]]); // land, forest

describe("blendOverlay", () => {
  it("opacity 0 shows the raw frame", () => {
    const out = new Uint8ClampedArray(frame.length);
    blendOverlay(frame, labels, out, buildColorIndex(palette), [true, true], 0);
    expect([...out.slice(0, 3)]).toEqual([100, 100, 100]);
    expect([...out.slice(4, 7)]).toEqual([50, 60, 70]);
  });

  it("opacity 1 shows pure labels", () => {
    const out = new Uint8ClampedArray(frame.length);
    blendOverlay(frame, labels, out, buildColorIndex(palette), [true, true], 1);
    expect([...out.slice(0, 3)]).toEqual([210, 180, 140]);
    expect([...out.slice(4, 7)]).toEqual([34, 139, 34]);
  });

  it("hidden classes fall through to the frame", () => {
    const out = new Uint8ClampedArray(frame.length);
    blendOverlay(frame, labels, out, buildColorIndex(palette), [true, false], 1);
    expect([...out.slice(0, 3)]).toEqual([210, 180, 140]); // land still overlaid
    expect([...out.slice(4, 7)]).toEqual([50, 60, 70]);    // forest hidden
  });

  it("blends midway at opacity 0.5", () => {
    const out = new Uint8ClampedArray(frame.length);
    blendOverlay(frame, labels, out, buildColorIndex(palette), [true, true], 0.5);
    expect(out[0]).toBe(155); // (100 + 210) / 2
  });

  it("rejects mismatched buffers", () => {
    expect(() =>
      blendOverlay(frame, labels.slice(0, 4), new Uint8ClampedArray(frame.length),
                   buildColorIndex(palette), [true, true], 1),
    ).toThrow(/identical sizes/);
  });
});

describe("color index", () => {
  it("keys palette colors exactly", () => {
    const index = buildColorIndex(palette);
    expect(index.get(colorKey(210, 180, 140))).toBe(0);
    expect(index.get(colorKey(34, 139, 34))).toBe(1);
    expect(index.get(colorKey(1, 2, 3))).toBeUndefined();
  });
});
