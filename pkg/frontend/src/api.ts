/** Typed client for the annotation service. Optimistic-concurrency aware:
 * putAnnotation surfaces 409 as a structured conflict result so the UI can
 * offer reload-and-merge instead of silently clobbering newer work. */

import {
  AnnotationDoc,
  JobDoc,
  PaletteEntry,
  PropagationRequest,
  SequenceDetail,
  SequenceSummary,
} from "./types.js";

export class ApiError extends Error {
  constructor(public status: number, message: string) {
    super(message);
    this.name = "ApiError";
  }
}

export type PutResult =
  | { status: "ok"; doc: AnnotationDoc }
  | { status: "conflict"; currentRevision: number };

type FetchLike = (input: string, init?: RequestInit) => Promise<Response>;

export class ApiClient {
  constructor(
    private base: string = "",
    private fetchImpl: FetchLike = (input, init) => fetch(input, init),
  ) {}

  private async json<T>(path: string, init?: RequestInit): Promise<T> {
    const resp = await this.fetchImpl(this.base + path, init);
    if (!resp.ok) {
      throw new ApiError(resp.status, await extractDetail(resp));
    }
    return (await resp.json()) as T;
  }

  listSequences(): Promise<SequenceSummary[]> {
    return this.json("/api/sequences");
  }

  sequenceDetail(name: string): Promise<SequenceDetail> {
    return this.json(`/api/sequences/${encodeURIComponent(name)}`);
  }

  palette(): Promise<PaletteEntry[]> {
    return this.json("/api/palette");
  }

  async getAnnotation(sequence: string, frame: number): Promise<AnnotationDoc | null> {
    const resp = await this.fetchImpl(
      `${this.base}/api/sequences/${encodeURIComponent(sequence)}/annotations/${frame}`,
    );
    if (resp.status === 404) return null;
    if (!resp.ok) throw new ApiError(resp.status, await extractDetail(resp));
    return (await resp.json()) as AnnotationDoc;
  }

  async putAnnotation(
    sequence: string,
    frame: number,
    payload: { revision: number; polygons: unknown[] },
  ): Promise<PutResult> {
    const resp = await this.fetchImpl(
      `${this.base}/api/sequences/${encodeURIComponent(sequence)}/annotations/${frame}`,
      {
        method: "PUT",
        headers: { "content-type": "application/json" },
        body: JSON.stringify(payload),
      },
    );
    if (resp.status === 409) {
      const body = (await resp.json()) as { detail: { current_revision: number } };
      return { status: "conflict", currentRevision: body.detail.current_revision };
    }
    if (!resp.ok) throw new ApiError(resp.status, await extractDetail(resp));
    return { status: "ok", doc: (await resp.json()) as AnnotationDoc };
  }

  postJob(sequence: string, config: PropagationRequest = {}): Promise<JobDoc> {
    return this.json(`/api/sequences/${encodeURIComponent(sequence)}/jobs`, {
      method: "POST",
      headers: { "content-type": "application/json" },
      body: JSON.stringify(config),
    });
  }

  jobStatus(id: string): Promise<JobDoc> {
    return this.json(`/api/jobs/${encodeURIComponent(id)}`);
  }

  frameUrl(sequence: string, frame: number): string {
    return `${this.base}/api/sequences/${encodeURIComponent(sequence)}/frames/${frame}`;
  }

  labelUrl(sequence: string, frame: number): string {
    return `${this.base}/api/sequences/${encodeURIComponent(sequence)}/labels/${frame}`;
  }

  keyframeLabelUrl(sequence: string, frame: number): string {
    return `${this.base}/api/sequences/${encodeURIComponent(sequence)}/keyframe_labels/${frame}`;
  }
}

async function extractDetail(resp: Response): Promise<string> {
  try {
    const body = await resp.json();
    if (typeof body.detail === "string") return body.detail;
    return JSON.stringify(body.detail ?? body);
  } catch {
    return `${resp.status} ${resp.statusText}`;
  }
}
