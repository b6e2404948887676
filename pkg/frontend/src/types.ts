/** Wire types mirrored from the annotation service JSON API. */

export interface PaletteEntry {
  id: number;
  name: string;
  color: [number, number, number];
}

export interface SequenceSummary {
  name: string;
  frame_count: number;
  annotated_frames: number[];
}

export interface SequenceDetail {
  name: string;
  frame_count: number;
  resolution: [number, number];
  annotated_frames: number[];
  revisions: Record<string, number>;
  propagated_frames: number[];
}

export interface WirePolygon {
  class: number;
  z: number;
  points: [number, number][];
}

export interface AnnotationDoc {
  frame: number;
  revision: number;
  polygons: WirePolygon[];
}

export type JobState = "queued" | "running" | "done" | "failed";

export interface JobDoc {
  id: string;
  sequence: string;
  state: JobState;
  progress: number;
  error: string | null;
  keyframes: number[];
}

export interface PropagationRequest {
  radius?: number;
  iterations?: number;
  seed?: number;
  min_region_size?: number;
  use_homography?: boolean;
}
