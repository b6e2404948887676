/** Review-mode data plumbing: fetch frame + propagated label images and
 * blend them according to the current view settings. */

import { ApiClient } from "./api.js";
import { blendOverlay, buildColorIndex } from "./overlay.js";
import { EditorState } from "./state.js";
import { PaletteEntry } from "./types.js";

export class ReviewOverlay {
  private colorIndex: Map<number, number>;
  private cache = new Map<string, { frame: ImageData; labels: ImageData }>();

  constructor(private api: ApiClient, palette: PaletteEntry[]) {
    this.colorIndex = buildColorIndex(palette);
  }

  invalidate(sequence: string): void {
    for (const key of [...this.cache.keys()]) {
      if (key.startsWith(`${sequence}/`)) this.cache.delete(key);
    }
  }

  private async imageData(url: string): Promise<ImageData> {
    const img = await loadImage(url);
    const canvas = document.createElement("canvas");
    canvas.width = img.naturalWidth;
    canvas.height = img.naturalHeight;
    const ctx = canvas.getContext("2d");
    if (!ctx) throw new Error("2d context unavailable");
    ctx.drawImage(img, 0, 0);
    return ctx.getImageData(0, 0, canvas.width, canvas.height);
  }

  /** Blended overlay for one frame, or null when no propagated label exists. */
  async build(state: EditorState): Promise<ImageData | null> {
    if (!state.sequence) return null;
    const key = `${state.sequence}/${state.frame}`;
    let entry = this.cache.get(key);
    if (!entry) {
      try {
        const [frame, labels] = await Promise.all([
          this.imageData(this.api.frameUrl(state.sequence, state.frame)),
          this.imageData(this.api.labelUrl(state.sequence, state.frame)),
        ]);
        entry = { frame, labels };
        this.cache.set(key, entry);
      } catch {
        return null; // no propagation yet for this frame
      }
    }
    const out = new ImageData(entry.frame.width, entry.frame.height);
    blendOverlay(
      entry.frame.data,
      entry.labels.data,
      out.data,
      this.colorIndex,
      state.classVisibility,
      state.overlayOpacity,
    );
    return out;
  }
}

export function loadImage(url: string): Promise<HTMLImageElement> {
  return new Promise((resolve, reject) => {
    const img = new Image();
    img.onload = () => resolve(img);
    img.onerror = () => reject(new Error(`failed to load ${url}`));
    img.src = url;
  });
}
