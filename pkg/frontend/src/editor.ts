/** Canvas wiring: rendering and pointer input for polygon editing.
 *
 * The canvas is only a view; geometry lives in EditorState in image pixel
 * coordinates. Screen-space is converted at the event boundary and nowhere
 * else, so zoom can never degrade annotations.
 */

import { vertexAt } from "./geometry.js";
import { EditorState } from "./state.js";
import { PaletteEntry } from "./types.js";

const VERTEX_HIT_RADIUS_PX = 6;

export interface EditorCallbacks {
  onChange: () => void;          // any geometry/selection change worth a redraw
  onCommitRequest: () => void;   // draft closed; caller decides when to PUT
}

export class CanvasEditor {
  private ctx: CanvasRenderingContext2D;
  private frameImage: HTMLImageElement | null = null;
  private overlayData: ImageData | null = null;
  private scale = 1;
  private tracing = false;
  private dragVertex: { poly: number; vertex: number } | null = null;

  constructor(
    private canvas: HTMLCanvasElement,
    private state: EditorState,
    private palette: PaletteEntry[],
    private callbacks: EditorCallbacks,
  ) {
    const ctx = canvas.getContext("2d");
    if (!ctx) throw new Error("2d canvas context unavailable");
    this.ctx = ctx;
    canvas.addEventListener("mousedown", (e) => this.onMouseDown(e));
    canvas.addEventListener("mousemove", (e) => this.onMouseMove(e));
    window.addEventListener("mouseup", () => this.onMouseUp());
    canvas.addEventListener("dblclick", (e) => {
      e.preventDefault();
      this.closeDraft();
    });
  }

  setFrameImage(img: HTMLImageElement): void {
    this.frameImage = img;
    this.canvas.width = img.naturalWidth;
    this.canvas.height = img.naturalHeight;
    this.fitScale();
    this.render();
  }

  setOverlay(data: ImageData | null): void {
    this.overlayData = data;
    this.render();
  }

  private fitScale(): void {
    const holder = this.canvas.parentElement;
    if (!holder || !this.frameImage) return;
    const maxW = holder.clientWidth || this.frameImage.naturalWidth;
    this.scale = Math.min(3, Math.max(0.2, maxW / this.frameImage.naturalWidth));
    this.canvas.style.width = `${this.frameImage.naturalWidth * this.scale}px`;
  }

  private toImage(e: MouseEvent): [number, number] {
    const rect = this.canvas.getBoundingClientRect();
    const sx = this.canvas.width / rect.width;
    const sy = this.canvas.height / rect.height;
    return [(e.clientX - rect.left) * sx, (e.clientY - rect.top) * sy];
  }

  closeDraft(): void {
    if (this.state.commitDraft()) {
      this.callbacks.onCommitRequest();
      this.callbacks.onChange();
    }
  }

  private onMouseDown(e: MouseEvent): void {
    const [x, y] = this.toImage(e);
    const st = this.state;
    switch (st.mode) {
      case "point":
        st.addVertex(x, y);
        break;
      case "contour":
        this.tracing = true;
        st.traceVertex(x, y);
        break;
      case "edit": {
        if (st.selected !== null) {
          const poly = st.polygons[st.selected];
          const v = vertexAt(poly.points, x, y, VERTEX_HIT_RADIUS_PX / this.scale);
          if (v !== null) {
            this.dragVertex = { poly: st.selected, vertex: v };
            break;
          }
        }
        st.cycleSelection(x, y);
        break;
      }
      case "review":
        return;
    }
    this.callbacks.onChange();
  }

  private onMouseMove(e: MouseEvent): void {
    const [x, y] = this.toImage(e);
    if (this.tracing && this.state.mode === "contour") {
      this.state.traceVertex(x, y);
      this.callbacks.onChange();
    } else if (this.dragVertex) {
      this.state.moveVertex(this.dragVertex.poly, this.dragVertex.vertex, x, y);
      this.callbacks.onChange();
    }
  }

  private onMouseUp(): void {
    this.tracing = false;
    this.dragVertex = null;
  }

  private colorOf(classId: number, alpha: number): string {
    const entry = this.palette[classId];
    const [r, g, b] = entry ? entry.color : [255, 255, 255];
    return `rgba(${r},${g},${b},${alpha})`;
  }

  render(): void {
    const { ctx, canvas } = this;
    ctx.clearRect(0, 0, canvas.width, canvas.height);
    if (this.frameImage) ctx.drawImage(this.frameImage, 0, 0);
    if (this.overlayData && this.state.mode === "review") {
      ctx.putImageData(this.overlayData, 0, 0);
      return; // review mode shows the blend, not the polygon wireframes
    }

    const ordered = this.state.polygons
      .map((p, i) => ({ p, i }))
      .sort((a, b) => a.p.z - b.p.z);
    for (const { p, i } of ordered) {
      const selected = i === this.state.selected;
      ctx.beginPath();
      p.points.forEach(([x, y], idx) =>
        idx === 0 ? ctx.moveTo(x, y) : ctx.lineTo(x, y));
      ctx.closePath();
      ctx.fillStyle = this.colorOf(p.classId, selected ? 0.45 : 0.25);
      ctx.fill("evenodd");
      ctx.lineWidth = selected ? 2.5 : 1.25;
      ctx.strokeStyle = this.colorOf(p.classId, 1);
      ctx.stroke();
      if (selected && this.state.mode === "edit") {
        ctx.fillStyle = "#ffffff";
        for (const [x, y] of p.points) {
          ctx.beginPath();
          ctx.arc(x, y, 3 / this.scale + 1, 0, Math.PI * 2);
          ctx.fill();
          ctx.stroke();
        }
      }
    }

    if (this.state.draft.length) {
      ctx.beginPath();
      this.state.draft.forEach(([x, y], idx) =>
        idx === 0 ? ctx.moveTo(x, y) : ctx.lineTo(x, y));
      ctx.lineWidth = 1.5;
      ctx.strokeStyle = this.colorOf(this.state.selectedClass, 1);
      ctx.setLineDash([5, 4]);
      ctx.stroke();
      ctx.setLineDash([]);
      ctx.fillStyle = "#ffffff";
      for (const [x, y] of this.state.draft) {
        ctx.fillRect(x - 1.5, y - 1.5, 3, 3);
      }
    }
  }
}
