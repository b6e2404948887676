/** Application bootstrap: sequence browsing, save/propagate workflow, hotkeys. */

import { ApiClient } from "./api.js";
import { CanvasEditor } from "./editor.js";
import { ReviewOverlay, loadImage } from "./review.js";
import { EditorState, Mode, classForKey } from "./state.js";
import { JobDoc, PaletteEntry } from "./types.js";

const api = new ApiClient("");
const state = new EditorState();

function el<T extends HTMLElement>(id: string): T {
  const node = document.getElementById(id);
  if (!node) throw new Error(`missing element #${id}`);
  return node as T;
}

async function boot(): Promise<void> {
  const palette = await api.palette();
  const editor = new CanvasEditor(
    el<HTMLCanvasElement>("canvas"),
    state,
    palette,
    {
      onChange: () => {
        editor.render();
        updateStatus();
      },
      onCommitRequest: () => void save(),
    },
  );
  const review = new ReviewOverlay(api, palette);

  buildClassList(palette);
  await refreshSequences();

  el<HTMLSelectElement>("sequence").addEventListener("change", (e) => {
    void openSequence((e.target as HTMLSelectElement).value);
  });
  el<HTMLInputElement>("frame-slider").addEventListener("input", (e) => {
    void gotoFrame(parseInt((e.target as HTMLInputElement).value, 10));
  });
  for (const mode of ["point", "contour", "edit", "review"] as Mode[]) {
    el<HTMLButtonElement>(`mode-${mode}`).addEventListener("click", () => {
      void setMode(mode);
    });
  }
  el<HTMLInputElement>("opacity").addEventListener("input", (e) => {
    state.overlayOpacity = parseFloat((e.target as HTMLInputElement).value);
    void refreshOverlay();
  });
  el<HTMLButtonElement>("save").addEventListener("click", () => void save());
  el<HTMLButtonElement>("send-back").addEventListener("click", () => {
    if (state.selected !== null) {
      state.sendToBack(state.selected);
      editor.render();
      void save();
    }
  });
  el<HTMLButtonElement>("delete").addEventListener("click", () => {
    if (state.selected !== null) {
      state.deletePolygon(state.selected);
      editor.render();
      void save();
    }
  });
  el<HTMLButtonElement>("propagate").addEventListener("click", () => void propagate());

  window.addEventListener("keydown", (e) => {
    if ((e.target as HTMLElement).tagName === "INPUT") return;
    const cls = classForKey(e.key);
    if (cls !== null && cls < palette.length) {
      state.setClass(cls);
      highlightClass();
      editor.render();
      return;
    }
    if (e.key === "Enter") editor.closeDraft();
    else if (e.key === "Escape") {
      state.cancelDraft();
      editor.render();
    } else if (e.key === "ArrowRight") void gotoFrame(state.frame + 1);
    else if (e.key === "ArrowLeft") void gotoFrame(state.frame - 1);
  });

  // ---- helpers bound over editor/review ----

  let frameCount = 0;

  async function refreshSequences(): Promise<void> {
    const sequences = await api.listSequences();
    const select = el<HTMLSelectElement>("sequence");
    select.innerHTML = "";
    for (const seq of sequences) {
      const opt = document.createElement("option");
      opt.value = seq.name;
      opt.textContent = `${seq.name} (${seq.frame_count} frames, ${seq.annotated_frames.length} keyframes)`;
      select.appendChild(opt);
    }
    if (sequences.length) await openSequence(sequences[0].name);
  }

  async function openSequence(name: string): Promise<void> {
    const detail = await api.sequenceDetail(name);
    state.sequence = name;
    frameCount = detail.frame_count;
    const slider = el<HTMLInputElement>("frame-slider");
    slider.max = String(frameCount - 1);
    slider.value = "0";
    await gotoFrame(0);
  }

  async function gotoFrame(frame: number): Promise<void> {
    if (!state.sequence) return;
    frame = Math.min(Math.max(frame, 0), frameCount - 1);
    if (state.dirty && !(await save())) return;
    state.frame = frame;
    el<HTMLInputElement>("frame-slider").value = String(frame);
    const img = await loadImage(api.frameUrl(state.sequence, frame));
    editor.setFrameImage(img);
    state.loadAnnotation(await api.getAnnotation(state.sequence, frame));
    await refreshOverlay();
    editor.render();
    updateStatus();
  }

  async function setMode(mode: Mode): Promise<void> {
    state.mode = mode;
    for (const m of ["point", "contour", "edit", "review"]) {
      el(`mode-${m}`).classList.toggle("active", m === mode);
    }
    await refreshOverlay();
    editor.render();
  }

  async function refreshOverlay(): Promise<void> {
    editor.setOverlay(state.mode === "review" ? await review.build(state) : null);
  }

  /** PUT the current annotation; on a revision conflict offer reload-and-merge. */
  async function save(): Promise<boolean> {
    if (!state.sequence || !state.dirty) return true;
    const result = await api.putAnnotation(
      state.sequence, state.frame, state.toAnnotationPayload());
    if (result.status === "conflict") {
      const reload = window.confirm(
        `Frame ${state.frame} changed on the server (revision ` +
        `${result.currentRevision}, yours ${state.revision}). Reload the ` +
        `server copy and merge your edits by redrawing them?`,
      );
      if (reload) {
        state.loadAnnotation(await api.getAnnotation(state.sequence, state.frame));
        editor.render();
      }
      updateStatus();
      return false;
    }
    state.markSaved(result.doc.revision);
    updateStatus();
    return true;
  }

  async function propagate(): Promise<void> {
    if (!state.sequence) return;
    if (state.dirty && !(await save())) return;
    const status = el("job-status");
    try {
      const job = await api.postJob(state.sequence, {});
      status.textContent = `job ${job.id}: queued`;
      await poll(job);
    } catch (err) {
      status.textContent = `job rejected: ${(err as Error).message}`;
    }
  }

  async function poll(job: JobDoc): Promise<void> {
    const status = el("job-status");
    const timer = window.setInterval(async () => {
      const doc = await api.jobStatus(job.id);
      status.textContent =
        `job ${doc.id}: ${doc.state} ${(doc.progress * 100).toFixed(0)}%` +
        (doc.error ? ` (${doc.error})` : "");
      if (doc.state === "done" || doc.state === "failed") {
        window.clearInterval(timer);
        if (doc.state === "done" && state.sequence) {
          review.invalidate(state.sequence);
          await refreshOverlay();
          editor.render();
        }
      }
    }, 500);
  }

  function buildClassList(palette: PaletteEntry[]): void {
    const list = el("classes");
    palette.forEach((entry, idx) => {
      const row = document.createElement("div");
      row.className = "class-row";
      row.id = `class-${entry.id}`;
      const swatch = document.createElement("span");
      swatch.className = "swatch";
      swatch.style.background = `rgb(${entry.color.join(",")})`;
      const label = document.createElement("span");
      const hotkey = ["1", "2", "3", "4", "5", "6", "7", "8", "9", "0", "-", "="][idx];
      label.textContent = `${hotkey} ${entry.name}`;
      const toggle = document.createElement("input");
      toggle.type = "checkbox";
      toggle.checked = true;
      toggle.title = "show in review overlay";
      toggle.addEventListener("change", () => {
        state.toggleClassVisibility(entry.id);
        void refreshOverlay();
      });
      row.append(swatch, label, toggle);
      row.addEventListener("click", (e) => {
        if (e.target === toggle) return;
        state.setClass(entry.id);
        highlightClass();
        editor.render();
      });
      list.appendChild(row);
    });
    highlightClass();
  }

  function highlightClass(): void {
    document.querySelectorAll(".class-row").forEach((row) => {
      row.classList.toggle("active", row.id === `class-${state.selectedClass}`);
    });
  }

  function updateStatus(): void {
    el("status").textContent =
      `${state.sequence ?? "-"} frame ${state.frame} ` +
      `rev ${state.revision}${state.dirty ? " (unsaved)" : ""} ` +
      `mode ${state.mode}`;
  }

  await setMode("point");
}

void boot();
