/** Editor state and the pure polygon-editing operations behind the canvas.
 *
 * All coordinates live in image pixel space as floats; zooming the canvas
 * never touches stored geometry. Committed polygons are queued for PUT by the
 * caller; this module never talks to the network and never rasterizes --
 * label pixels are exclusively the server's business.
 */

import { Point, distance, pointInPolygon } from "./geometry.js";
import { AnnotationDoc, WirePolygon } from "./types.js";

export type Mode = "contour" | "point" | "edit" | "review";

export interface PolygonModel {
  classId: number;
  z: number;
  points: Point[];
}

/** Keyboard row 1-9, 0, -, = mapped to the 12 classes. */
export const CLASS_HOTKEYS = ["1", "2", "3", "4", "5", "6", "7", "8", "9", "0", "-", "="];

export function classForKey(key: string): number | null {
  const idx = CLASS_HOTKEYS.indexOf(key);
  return idx >= 0 ? idx : null;
}

/** Minimum spacing between consecutive trace samples while dragging. */
export const TRACE_SPACING_PX = 2.0;

export class EditorState {
  sequence: string | null = null;
  frame = 0;
  mode: Mode = "point";
  selectedClass = 0;
  draft: Point[] = [];
  polygons: PolygonModel[] = [];
  revision = 0;
  selected: number | null = null;
  dirty = false;

  // review-mode view settings
  overlayOpacity = 0.5;
  classVisibility: boolean[] = new Array(12).fill(true);

  get hasDraft(): boolean {
    return this.draft.length > 0;
  }

  /** Click in point mode or a trace sample in contour mode; the same draft
   * accepts both, so one polygon can mix the two input styles. */
  addVertex(x: number, y: number): void {
    this.draft.push([x, y]);
  }

  /** Drag-to-trace sampling: appends only when far enough from the last
   * vertex, so slow drags do not pile up duplicate points. */
  traceVertex(x: number, y: number): void {
    const last = this.draft[this.draft.length - 1];
    if (!last || distance(last, [x, y]) >= TRACE_SPACING_PX) {
      this.draft.push([x, y]);
    }
  }

  cancelDraft(): void {
    this.draft = [];
  }

  /** Close the draft into a committed polygon with the next z on the stack. */
  commitDraft(): PolygonModel | null {
    if (this.draft.length < 3) return null;
    const z = this.polygons.length
      ? Math.max(...this.polygons.map((p) => p.z)) + 1
      : 0;
    const polygon: PolygonModel = {
      classId: this.selectedClass,
      z,
      points: this.draft,
    };
    this.polygons.push(polygon);
    this.draft = [];
    this.selected = this.polygons.length - 1;
    this.dirty = true;
    return polygon;
  }

  /** Indices of every polygon containing the point, topmost (highest z) first. */
  stackAt(x: number, y: number): number[] {
    return this.polygons
      .map((p, i) => ({ p, i }))
      .filter(({ p }) => pointInPolygon(p.points, x, y))
      .sort((a, b) => b.p.z - a.p.z)
      .map(({ i }) => i);
  }

  /** Click inside an overlap region cycles the selection through the stack. */
  cycleSelection(x: number, y: number): number | null {
    const stack = this.stackAt(x, y);
    if (stack.length === 0) {
      this.selected = null;
      return null;
    }
    const pos = this.selected === null ? -1 : stack.indexOf(this.selected);
    this.selected = stack[(pos + 1) % stack.length];
    return this.selected;
  }

  /** Move the polygon below everything else so neighbors' borders win.
   * Calling it again on the same polygon is a no-op. */
  sendToBack(index: number): void {
    const poly = this.polygons[index];
    if (!poly) return;
    const others = this.polygons.filter((_, i) => i !== index);
    if (others.length === 0) return;
    const minZ = Math.min(...others.map((p) => p.z));
    if (poly.z < minZ) return; // already at the back
    poly.z = minZ - 1;
    this.dirty = true;
  }

  moveVertex(polyIndex: number, vertexIndex: number, x: number, y: number): void {
    const poly = this.polygons[polyIndex];
    if (!poly || vertexIndex < 0 || vertexIndex >= poly.points.length) return;
    poly.points[vertexIndex] = [x, y];
    this.dirty = true;
  }

  deletePolygon(index: number): void {
    if (index < 0 || index >= this.polygons.length) return;
    this.polygons.splice(index, 1);
    this.selected = null;
    this.dirty = true;
  }

  setClass(classId: number): void {
    this.selectedClass = classId;
    if (this.selected !== null && this.mode === "edit") {
      this.polygons[this.selected].classId = classId;
      this.dirty = true;
    }
  }

  toggleClassVisibility(classId: number): void {
    this.classVisibility[classId] = !this.classVisibility[classId];
  }

  /** Replace local polygons with a server document (GET or merge-reload). */
  loadAnnotation(doc: AnnotationDoc | null): void {
    if (doc === null) {
      this.polygons = [];
      this.revision = 0;
    } else {
      this.polygons = doc.polygons.map((p) => ({
        classId: p.class,
        z: p.z,
        points: p.points.map(([x, y]) => [x, y] as Point),
      }));
      this.revision = doc.revision;
    }
    this.selected = null;
    this.draft = [];
    this.dirty = false;
  }

  /** Payload for PUT, carrying the revision this edit session was based on. */
  toAnnotationPayload(): { revision: number; polygons: WirePolygon[] } {
    return {
      revision: this.revision,
      polygons: this.polygons.map((p) => ({
        class: p.classId,
        z: p.z,
        points: p.points.map(([x, y]) => [x, y] as [number, number]),
      })),
    };
  }

  /** After a successful PUT the server hands back the bumped revision. */
  markSaved(revision: number): void {
    this.revision = revision;
    this.dirty = false;
  }
}
