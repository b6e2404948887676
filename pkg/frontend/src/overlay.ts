/** Review-mode pixel blending: propagated label image over the RGB frame.
 *
 * Pure byte-array math so it is testable without a canvas. Class identity is
 * recovered from exact palette colors (the server encodes labels with the
 * shared palette); hidden classes fall through to the raw frame.
 */

import { PaletteEntry } from "./types.js";

export function colorKey(r: number, g: number, b: number): number {
  return (r << 16) | (g << 8) | b;
}

export function buildColorIndex(palette: PaletteEntry[]): Map<number, number> {
  const index = new Map<number, number>();
  for (const entry of palette) {
    index.set(colorKey(entry.color[0], entry.color[1], entry.color[2]), entry.id);
  }
  return index;
}

/**
 * Blend label RGBA over frame RGBA in place into `out`.
 * opacity 0 -> raw frame; opacity 1 -> pure labels (for visible classes).
 */
export function blendOverlay(
  frame: Uint8ClampedArray,
  labels: Uint8ClampedArray,
  out: Uint8ClampedArray,
  colorIndex: Map<number, number>,
  classVisibility: boolean[],
  opacity: number,
): void {
  if (frame.length !== labels.length || frame.length !== out.length) {
    throw new Error("overlay buffers must have identical sizes");
  }
  const a = Math.min(Math.max(opacity, 0), 1);
  for (let i = 0; i < frame.length; i += 4) {
    const cls = colorIndex.get(colorKey(labels[i], labels[i + 1], labels[i + 2]));
    const visible = cls !== undefined && (classVisibility[cls] ?? true);
    if (!visible) {
      out[i] = frame[i];
      out[i + 1] = frame[i + 1];
      out[i + 2] = frame[i + 2];
    } else {
      out[i] = frame[i] * (1 - a) + labels[i] * a;
      out[i + 1] = frame[i + 1] * (1 - a) + labels[i + 1] * a;
      out[i + 2] = frame[i + 2] * (1 - a) + labels[i + 2] * a;
    }
    out[i + 3] = 255;
  }
}
