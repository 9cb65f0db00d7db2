/** Browser-side session state: the chosen image, an append-only history of
 * prompt submissions, and the comparison selection.
 *
 * Nothing here talks to the network; completed entries hold the engine's
 * response verbatim (rawBody) and are frozen, so every number the UI can
 * show references an immutable server response. */

import type { ApiResult } from "./api.js";
import type { ExplainOptions, ExplainPayload } from "./types.js";

export type EntryStatus = "pending" | "done" | "failed";

export interface HistoryEntry {
  readonly id: number;
  readonly prompt: string;
  readonly options: ExplainOptions;
  readonly createdAt: string;
  status: EntryStatus;
  /** Parsed payload for rendering; null until done. */
  payload: ExplainPayload | null;
  /** The exact response body text; null until a response arrived. */
  rawBody: string | null;
  /** Failure description; null unless failed. */
  error: string | null;
}

export const MAX_COMPARE = 4;

export interface SelectOutcome {
  selected: boolean;
  warning: string | null;
}

export class Session {
  private entries: HistoryEntry[] = [];
  private nextId = 1;
  private selected: number[] = [];
  private imageBlob: Blob | null = null;
  private imageNameValue: string | null = null;

  get image(): Blob | null {
    return this.imageBlob;
  }

  get imageName(): string | null {
    return this.imageNameValue;
  }

  selectImage(blob: Blob, name: string): void {
    this.imageBlob = blob;
    this.imageNameValue = name;
  }

  /** Append-only view of the submission history. */
  get history(): readonly HistoryEntry[] {
    return this.entries;
  }

  get selection(): readonly number[] {
    return this.selected;
  }

  entry(id: number): HistoryEntry | undefined {
    return this.entries.find((e) => e.id === id);
  }

  /** Start a submission: validates preconditions and appends a pending
   * entry.  Duplicate prompts are genuinely new entries — no dedup. */
  beginEntry(prompt: string, options: ExplainOptions = {}): HistoryEntry {
    if (!this.imageBlob) {
      throw new Error("select an image before submitting a prompt");
    }
    if (prompt.trim() === "") {
      throw new Error("prompt must not be empty");
    }
    const entry: HistoryEntry = {
      id: this.nextId++,
      prompt,
      options: { ...options },
      createdAt: new Date().toISOString(),
      status: "pending",
      payload: null,
      rawBody: null,
      error: null,
    };
    this.entries.push(entry);
    return entry;
  }

  /** Attach the engine's result to a pending entry.  A service error or an
   * unreachable engine marks the entry failed (with its message) instead of
   * throwing, so the page keeps working offline. */
  completeEntry(id: number, result: ApiResult<ExplainPayload>): HistoryEntry {
    const entry = this.entry(id);
    if (!entry) {
      throw new Error(`unknown history entry ${id}`);
    }
    if (entry.status !== "pending") {
      throw new Error(`history entry ${id} is already ${entry.status}`);
    }
    if (result.ok) {
      entry.status = "done";
      entry.payload = result.payload;
      entry.rawBody = result.rawBody;
    } else {
      entry.status = "failed";
      entry.error = result.message;
      entry.rawBody = result.rawBody;
    }
    Object.freeze(entry.payload);
    Object.freeze(entry);
    return entry;
  }

  /** Prompt and options to resubmit for a failed entry's retry button.
   * Retrying appends a new entry; the failed one stays in the history. */
  retryTarget(id: number): { prompt: string; options: ExplainOptions } {
    const entry = this.entry(id);
    if (!entry) {
      throw new Error(`unknown history entry ${id}`);
    }
    return { prompt: entry.prompt, options: { ...entry.options } };
  }

  /** Toggle an entry in or out of the comparison selection (capped). */
  toggleSelect(id: number): SelectOutcome {
    const entry = this.entry(id);
    if (!entry) {
      return { selected: false, warning: `no history entry ${id}` };
    }
    const at = this.selected.indexOf(id);
    if (at >= 0) {
      this.selected.splice(at, 1);
      return { selected: false, warning: null };
    }
    if (entry.status !== "done") {
      return { selected: false, warning: "only completed entries can be compared" };
    }
    if (this.selected.length >= MAX_COMPARE) {
      return {
        selected: false,
        warning: `comparison shows at most ${MAX_COMPARE} entries`,
      };
    }
    this.selected.push(id);
    return { selected: true, warning: null };
  }

  clearSelection(): void {
    this.selected = [];
  }

  /** Serialize the session for download.  Response bodies are embedded
   * verbatim so the export carries exactly what the engine said. */
  exportJson(): string {
    return JSON.stringify(
      {
        imageName: this.imageNameValue,
        exportedAt: new Date().toISOString(),
        entries: this.entries.map((e) => ({
          id: e.id,
          prompt: e.prompt,
          options: e.options,
          createdAt: e.createdAt,
          status: e.status,
          error: e.error,
          response: e.rawBody,
        })),
      },
      null,
      2,
    );
  }
}
